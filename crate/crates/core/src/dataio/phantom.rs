//! Synthetic head-like phantoms standing in for real reference volumes.
//!
//! A phantom is a bright shell around a mid-grey ellipsoidal "brain" that
//! holds two dark ventricles and three off-centre structures of distinct
//! intensity, plus a linear shading trend across the brain and a mild
//! smooth texture. Every subject seed jitters the
//! centres, radii and intensities. The layout is deliberately asymmetric so
//! that pose is identifiable from the image.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SvrError};
use crate::volume::Volume;

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    /// Per-axis relative growth of the radius on the positive side of the
    /// centre and shrinkage on the negative side (egg shape); zero for a
    /// plain ellipsoid.
    taper: [f64; 3],
}

impl Ellipsoid {
    /// Centre moved by up to `±0.06` and radii scaled by up to `±spread`.
    fn jittered<R: Rng>(rng: &mut R, center: [f64; 3], radii: [f64; 3], spread: f64) -> Self {
        Self {
            center: center.map(|c| c + rng.random_range(-0.06..0.06)),
            radii: radii.map(|r| r * rng.random_range(1.0 - spread..1.0 + spread)),
            taper: [0.0; 3],
        }
    }

    /// Normalized coordinates are `(x, y, z)` in roughly `[−1, 1]`.
    fn contains(&self, p: [f64; 3]) -> bool {
        let q: f64 = (0..3)
            .map(|a| {
                let d = p[a] - self.center[a];
                (d / (self.radii[a] * (1.0 + self.taper[a] * d.signum()))).powi(2)
            })
            .sum();
        q < 1.0
    }
}

/// Per-subject anatomy, reusable across time frames.
pub struct PhantomSubject {
    head: Ellipsoid,
    brain: Ellipsoid,
    brain_level: f64,
    structures: Vec<(Ellipsoid, f64)>,
    /// Linear intensity trend across the brain, per normalized unit of `(x, y, z)`.
    brain_slope: [f64; 3],
    texture_phase: f64,
}

const HEAD_LEVEL: f64 = 0.9;
const TEXTURE: f64 = 0.04;

impl PhantomSubject {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Ellipsoid::jittered(&mut rng, [0.0, -0.05, 0.03], [0.88, 0.88, 0.88], 0.04);
        head.taper = [0.1, 0.15, -0.12];
        let brain = Ellipsoid { center: head.center, radii: head.radii.map(|r| r - 0.1), taper: head.taper };
        let brain_level = 0.45 + rng.random_range(-0.04..0.04);
        let layout = [
            ([-0.15, 0.0, 0.05], [0.1, 0.3, 0.2], 0.1),
            ([0.15, 0.0, 0.05], [0.1, 0.3, 0.2], 0.1),
            ([0.12, -0.45, -0.2], [0.3, 0.18, 0.22], 0.7),
            ([0.35, 0.35, 0.25], [0.16, 0.2, 0.18], 0.85),
            ([-0.4, 0.2, -0.3], [0.18, 0.14, 0.16], 0.25),
        ];
        let structures = layout
            .iter()
            .map(|&(c, r, v)| (Ellipsoid::jittered(&mut rng, c, r, 0.1), v + rng.random_range(-0.05..0.05)))
            .collect();
        let brain_slope = [0.12, 0.15, -0.15].map(|g| g * rng.random_range(0.8..1.2));
        let texture_phase = rng.random_range(0.0..6.0);
        Self { head, brain, brain_level, structures, brain_slope, texture_phase }
    }

    /// Indices of structures whose intensity drifts over time in [`Self::frame`].
    const ACTIVE: [usize; 2] = [2, 3];

    /// Intensity at normalized point `p` with per-structure offsets `drift`.
    fn value(&self, p: [f64; 3], drift: &[f64]) -> f64 {
        if !self.head.contains(p) {
            return 0.0;
        }
        let mut v = HEAD_LEVEL;
        if self.brain.contains(p) {
            v = self.brain_level + (0..3).map(|a| self.brain_slope[a] * p[a]).sum::<f64>();
            for (idx, (e, level)) in self.structures.iter().enumerate() {
                if e.contains(p) {
                    v = level + drift.get(idx).copied().unwrap_or(0.0);
                }
            }
        }
        let [x, y, z] = p;
        v + TEXTURE * (3.0 * x + 2.0 * y + self.texture_phase).sin() * (2.0 * z).cos()
    }

    /// Compartment at `p`: 0 outside the head, 1 scalp, 2 brain, 3 + i
    /// inside structure `i`.
    fn region(&self, p: [f64; 3]) -> u8 {
        if !self.head.contains(p) {
            return 0;
        }
        if !self.brain.contains(p) {
            return 1;
        }
        let mut r = 2;
        for (idx, (e, _)) in self.structures.iter().enumerate() {
            if e.contains(p) {
                r = 3 + idx as u8;
            }
        }
        r
    }

    /// Compartment labels on the voxel grid of `shape`. Intensities are
    /// smooth inside each compartment and jump across boundaries.
    pub fn labels(&self, shape: [usize; 3]) -> Array3<u8> {
        let [d, h, w] = shape;
        Array3::from_shape_fn((d, h, w), |(k, j, i)| {
            self.region([norm_coord(i, w), norm_coord(j, h), norm_coord(k, d)])
        })
    }

    fn render(&self, shape: [usize; 3], drift: &[f64]) -> Array3<f32> {
        let [d, h, w] = shape;
        Array3::from_shape_fn((d, h, w), |(k, j, i)| {
            self.value([norm_coord(i, w), norm_coord(j, h), norm_coord(k, d)], drift) as f32
        })
    }

    /// Frame `t` of a slowly drifting series; the two active structures
    /// follow out-of-phase sinusoids of amplitude `amplitude` with period
    /// `period` frames. Intensities are scaled with the drift-free range, so
    /// frames where the drift vanishes equal [`make_phantom`].
    pub fn frame(&self, shape: [usize; 3], spacing: f64, t: usize, amplitude: f64, period: f64) -> Result<Volume> {
        check_shape(shape)?;
        let mut drift = vec![0.0; self.structures.len()];
        let phase = 2.0 * std::f64::consts::PI * t as f64 / period;
        drift[Self::ACTIVE[0]] = amplitude * phase.sin();
        drift[Self::ACTIVE[1]] = -amplitude * phase.sin();
        let (lo, hi) = range(&self.render(shape, &[]));
        let data = self.render(shape, &drift).mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
        Volume::new(data, spacing)
    }
}

/// Voxel index → coordinate in roughly `[-1, 1]`.
fn norm_coord(i: usize, n: usize) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) / (n as f64 / 2.0)
}

fn range(a: &Array3<f32>) -> (f32, f32) {
    a.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&n| n < 8) {
        return Err(SvrError::invalid(format!("phantom dimensions must be at least 8, got {shape:?}")));
    }
    Ok(())
}

/// Min-max normalized phantom for subject `seed`, spacing 2.4 mm.
pub fn make_phantom(shape: [usize; 3], seed: u64) -> Result<Volume> {
    check_shape(shape)?;
    let subject = PhantomSubject::new(seed);
    let raw = subject.render(shape, &[]);
    let vol = Volume::new(raw, super::DEFAULT_SPACING)?;
    Ok(super::normalize(&vol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_seed_deterministic() {
        assert_eq!(make_phantom([24, 32, 32], 4).unwrap(), make_phantom([24, 32, 32], 4).unwrap());
        assert_ne!(make_phantom([24, 32, 32], 4).unwrap(), make_phantom([24, 32, 32], 5).unwrap());
    }

    #[test]
    fn small_shapes_rejected() {
        assert!(make_phantom([7, 32, 32], 0).is_err());
    }

    #[test]
    fn frames_drift_but_stay_in_range() {
        let s = PhantomSubject::new(1);
        let a = s.frame([16, 16, 16], 2.4, 0, 0.03, 20.0).unwrap();
        let b = s.frame([16, 16, 16], 2.4, 5, 0.03, 20.0).unwrap();
        assert_ne!(a, b);
        assert!(b.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let changed = a.data.iter().zip(b.data.iter()).filter(|(x, y)| x != y).count();
        assert!(changed > 0 && changed < a.data.len() / 4);
        assert_eq!(a.data, make_phantom([16, 16, 16], 1).unwrap().data);
    }
}
