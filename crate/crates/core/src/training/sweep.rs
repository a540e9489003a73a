use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig};
use crate::acquisition::SamplePair;
use crate::error::{Result, SvrError};
use crate::evaluation::evaluate;
use crate::network::{Model, ModelConfig};

/// Loss-weight cells `(λ₁, λ₂)` compared by default.
pub const DEFAULT_GRID: [(f64, f64); 3] = [(1.0, 100.0), (10.0, 40.0), (10.0, 100.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Validation metrics of the best checkpoint.
    pub d_reg: f64,
    pub e_rot: f64,
    pub e_tr: f64,
    pub best_step: usize,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "lambda1,lambda2,D_reg_mm,E_rot_deg,E_tr_mm,best_step";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.lambda1, self.lambda2, self.d_reg, self.e_rot, self.e_tr, self.best_step)
    }
}

/// Trains one model per cell from the same initial weights and data order
/// and reports validation metrics.
pub fn sweep_lambdas(
    grid: &[(f64, f64)],
    model_config: &ModelConfig,
    init_seed: u64,
    cfg: &TrainConfig,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(SvrError::invalid("empty loss-weight grid"));
    }
    grid.iter()
        .map(|&(lambda1, lambda2)| {
            let cell = TrainConfig { lambda1, lambda2, ..cfg.clone() };
            log::info!("sweep cell λ1 = {lambda1}, λ2 = {lambda2}");
            let out = train(Model::new(model_config, init_seed)?, &cell, train_set, val_set)?;
            let s = evaluate(&out.model, val_set, cfg.batch_size)?.summary;
            Ok(SweepRow { lambda1, lambda2, d_reg: s.d_reg.mean, e_rot: s.e_rot.mean, e_tr: s.e_tr.mean, best_step: out.best_step })
        })
        .collect()
}

/// Index of the cell that keeps both rotation and translation errors low:
/// the smallest worst-case ratio to the per-column minimum, ties broken by
/// D_reg and then by grid order.
pub fn select_cell(rows: &[SweepRow]) -> Option<usize> {
    let min_rot = rows.iter().map(|r| r.e_rot).fold(f64::INFINITY, f64::min);
    let min_tr = rows.iter().map(|r| r.e_tr).fold(f64::INFINITY, f64::min);
    let ratio = |v: f64, m: f64| if m > 0.0 { v / m } else if v > 0.0 { f64::INFINITY } else { 1.0 };
    let score = |r: &SweepRow| ratio(r.e_rot, min_rot).max(ratio(r.e_tr, min_tr));
    (0..rows.len()).min_by(|&a, &b| {
        score(&rows[a]).total_cmp(&score(&rows[b])).then(rows[a].d_reg.total_cmp(&rows[b].d_reg)).then(a.cmp(&b))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(e_rot: f64, e_tr: f64, d_reg: f64) -> SweepRow {
        SweepRow { lambda1: 0.0, lambda2: 0.0, d_reg, e_rot, e_tr, best_step: 0 }
    }

    #[test]
    fn balanced_cell_wins() {
        let rows = [row(1.0, 3.0, 2.0), row(1.2, 1.1, 2.0), row(3.0, 1.0, 1.0)];
        assert_eq!(select_cell(&rows), Some(1));
        assert_eq!(select_cell(&rows[..1]), Some(0));
        assert_eq!(select_cell(&[]), None);
        assert_eq!(select_cell(&[row(1.0, 1.0, 3.0), row(1.0, 1.0, 2.0)]), Some(1));
    }
}
