use sasvr_autograd::ParamStore;

/// Adam with bias correction, no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, lr: f32) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update. `grads[i]` belongs to the i-th registered parameter;
    /// `None` (unused parameter) leaves it and its moments untouched.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Option<Vec<f32>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p.data[j] -= step * m[j] / (v[j].sqrt() / bc2_sqrt + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::<f32>::new();
        s.add_param("w", &[3], vec![1.0, -1.0, 0.5]);
        let mut opt = Adam::new(&s, 0.01);
        opt.step(&mut s, &[Some(vec![2.0, -0.5, 0.0])]);
        let d = &s.params()[0].data;
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 0.99).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut s = ParamStore::<f32>::new();
        s.add_param("w", &[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(&s, 0.05);
        for _ in 0..500 {
            let g: Vec<f32> = s.params()[0].data.iter().map(|&w| 2.0 * (w - 1.0)).collect();
            opt.step(&mut s, &[Some(g)]);
        }
        assert!(s.params()[0].data.iter().all(|&w| (w - 1.0).abs() < 1e-2));
    }
}
