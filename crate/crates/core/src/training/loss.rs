use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::{compose_affine, grid_distance, rotation_derivatives, Grid3D, RigidParams, VolumeGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// λ₁, weight of the angle MSE (deg²).
    pub lambda_ang: f64,
    /// λ₂, weight of the translation MSE (mm²).
    pub lambda_tr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ang: 10.0, lambda_tr: 100.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ang >= 0.0 && self.lambda_tr >= 0.0 && self.lambda_ang.is_finite() && self.lambda_tr.is_finite()) {
            return Err(SvrError::invalid(format!("loss weights must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean point displacement, mm.
    pub l_sim: f64,
    /// deg².
    pub l_ang: f64,
    /// mm².
    pub l_tr: f64,
    pub lambda_ang: f64,
    pub lambda_tr: f64,
}

impl LossBreakdown {
    fn from_terms(l_sim: f64, l_ang: f64, l_tr: f64, w: LossWeights) -> Self {
        Self {
            total: l_sim + w.lambda_ang * l_ang + w.lambda_tr * l_tr,
            l_sim,
            l_ang,
            l_tr,
            lambda_ang: w.lambda_ang,
            lambda_tr: w.lambda_tr,
        }
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = items.first().copied().unwrap_or_default();
        out.total = items.iter().map(|l| l.total).sum::<f64>() / n;
        out.l_sim = items.iter().map(|l| l.l_sim).sum::<f64>() / n;
        out.l_ang = items.iter().map(|l| l.l_ang).sum::<f64>() / n;
        out.l_tr = items.iter().map(|l| l.l_tr).sum::<f64>() / n;
        out
    }
}

/// Mean displacement between the grids under the ground-truth and predicted
/// transforms. Shared by the loss and the evaluation metric.
pub fn registration_distance(pred: &RigidParams, gt: &RigidParams, geom: &VolumeGeometry, grid: &Grid3D) -> Result<f64> {
    Ok(grid_distance(&compose_affine(gt, geom)?, &compose_affine(pred, geom)?, grid))
}

fn mse3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>() / 3.0
}

pub fn loss(pred: &RigidParams, gt: &RigidParams, geom: &VolumeGeometry, grid: &Grid3D, w: LossWeights) -> Result<LossBreakdown> {
    let l_sim = registration_distance(pred, gt, geom, grid)?;
    let (p, g) = (pred.to_array(), gt.to_array());
    Ok(LossBreakdown::from_terms(
        l_sim,
        mse3([p[0], p[1], p[2]], [g[0], g[1], g[2]]),
        mse3([p[3], p[4], p[5]], [g[3], g[4], g[5]]),
        w,
    ))
}

/// Loss and its gradient with respect to the six predicted parameters.
///
/// With r(x) = T_pred(x) − T_gt(x) and u = r/‖r‖, the l_sim gradient is
/// mean(u) for the translation and ⟨∂R/∂α_i, mean(u·(x − c)ᵀ)⟩ for each
/// angle. Points where r vanishes contribute zero.
pub fn loss_and_grad(
    pred: &RigidParams,
    gt: &RigidParams,
    geom: &VolumeGeometry,
    grid: &Grid3D,
    w: LossWeights,
) -> Result<(LossBreakdown, [f64; 6])> {
    let out = loss(pred, gt, geom, grid, w)?;
    let diff = compose_affine(pred, geom)?.0 - compose_affine(gt, geom)?.0;
    let lin: Matrix3<f64> = diff.fixed_view::<3, 3>(0, 0).into();
    let off: Vector3<f64> = diff.fixed_view::<3, 1>(0, 3).into();
    let c = geom.rotation_center;
    let mut mean_u = Vector3::zeros();
    let mut moment = Matrix3::zeros();
    for x in &grid.points {
        let r = lin * x + off;
        let n = r.norm();
        if n > 0.0 {
            let u = r / n;
            mean_u += u;
            moment += u * (x - c).transpose();
        }
    }
    let inv = 1.0 / grid.len().max(1) as f64;
    mean_u *= inv;
    moment *= inv;
    let d_r = rotation_derivatives(pred);
    let (p, g) = (pred.to_array(), gt.to_array());
    let mut grad = [0.0; 6];
    for i in 0..3 {
        grad[i] = d_r[i].dot(&moment) + w.lambda_ang * 2.0 * (p[i] - g[i]) / 3.0;
        grad[3 + i] = mean_u[i] + w.lambda_tr * 2.0 * (p[3 + i] - g[3 + i]) / 3.0;
    }
    Ok((out, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_grid;

    #[test]
    fn zero_at_ground_truth() {
        let geom = VolumeGeometry::new([6, 8, 8], 2.4).unwrap();
        let grid = make_grid(&geom);
        let p = RigidParams::new([1.0, -2.0, 3.0], [4.0, 5.0, -6.0]);
        let (l, g) = loss_and_grad(&p, &p, &geom, &grid, LossWeights::default()).unwrap();
        assert_eq!((l.total, l.l_sim, l.l_ang, l.l_tr), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(g, [0.0; 6]);
    }

    #[test]
    fn translation_only_closed_form() {
        let geom = VolumeGeometry::new([6, 8, 8], 2.4).unwrap();
        let grid = make_grid(&geom);
        let l = loss(&RigidParams::new([0.0; 3], [1.0, 0.0, 0.0]), &RigidParams::ZERO, &geom, &grid, LossWeights::default()).unwrap();
        assert!((l.l_sim - 1.0).abs() < 1e-12);
        assert!((l.l_tr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(l.l_ang, 0.0);
        assert!((l.total - (1.0 + 100.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(LossWeights { lambda_ang: -1.0, lambda_tr: 1.0 }.validate().is_err());
    }
}
