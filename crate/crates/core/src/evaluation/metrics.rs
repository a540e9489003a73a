use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::acquisition::{mean_std, SamplePair};
use crate::error::{Result, SvrError};
use crate::geometry::RigidParams;
use crate::training::{common_geometry, registration_distance};

/// Anything that maps pairs to predicted parameters.
pub trait Predictor {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<RigidParams>>;
}

/// Returns the ground truth.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<RigidParams>> {
        Ok(pairs.iter().map(|p| p.params).collect())
    }
}

/// Always predicts the identity transform.
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<RigidParams>> {
        Ok(vec![RigidParams::ZERO; pairs.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: String,
    pub d_init: f64,
    pub d_reg: f64,
    /// Root of the angle MSE, degrees.
    pub e_rot: f64,
    /// Root of the translation MSE, mm.
    pub e_tr: f64,
    pub mse_rot: f64,
    pub mse_tr: f64,
    pub predicted: RigidParams,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub d_init: Stat,
    pub d_reg: Stat,
    pub e_rot: Stat,
    pub e_tr: Stat,
    pub mse_rot: Stat,
    pub mse_tr: Stat,
}

impl EvalSummary {
    pub fn from_rows(rows: &[PairMetrics]) -> Self {
        let col = |f: fn(&PairMetrics) -> f64| Stat::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self {
            pairs: rows.len(),
            d_init: col(|r| r.d_init),
            d_reg: col(|r| r.d_reg),
            e_rot: col(|r| r.e_rot),
            e_tr: col(|r| r.e_tr),
            mse_rot: col(|r| r.mse_rot),
            mse_tr: col(|r| r.mse_tr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub rows: Vec<PairMetrics>,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn with_ids(mut self, model_id: impl Into<String>, dataset_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.dataset_id = dataset_id.into();
        self
    }

    pub const PAIRS_HEADER: &'static str = "pair_id,D_init_mm,D_reg_mm,E_rot_deg,E_tr_mm,MSE_rot_deg2,MSE_tr_mm2,\
pred_alpha_x,pred_alpha_y,pred_alpha_z,pred_t_x,pred_t_y,pred_t_z";

    pub fn pairs_csv(&self) -> String {
        let mut s = format!("{}\n", Self::PAIRS_HEADER);
        for r in &self.rows {
            let p = r.predicted.to_array();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.pair_id, r.d_init, r.d_reg, r.e_rot, r.e_tr, r.mse_rot, r.mse_tr, p[0], p[1], p[2], p[3], p[4], p[5]
            );
        }
        s
    }

    pub const SUMMARY_HEADER: &'static str = "model,dataset,pairs,D_init_mean,D_init_std,D_reg_mean,D_reg_std,\
E_rot_mean,E_rot_std,E_tr_mean,E_tr_std,MSE_rot_mean,MSE_rot_std,MSE_tr_mean,MSE_tr_std";

    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        let mut out = format!("{},{},{}", self.model_id, self.dataset_id, s.pairs);
        for st in [s.d_init, s.d_reg, s.e_rot, s.e_tr, s.mse_rot, s.mse_tr] {
            let _ = write!(out, ",{},{}", st.mean, st.std);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!("{}\n{}\n", Self::SUMMARY_HEADER, self.summary_line())
    }
}

fn mse3(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 3.0
}

/// Per-pair metrics for `predicted` against each pair's ground truth.
pub fn score_predictions(pairs: &[SamplePair], predicted: &[RigidParams]) -> Result<EvalReport> {
    if pairs.len() != predicted.len() {
        return Err(SvrError::ShapeMismatch(format!("{} predictions for {} pairs", predicted.len(), pairs.len())));
    }
    let rows = if pairs.is_empty() {
        Vec::new()
    } else {
        let (geom, grid) = common_geometry(pairs)?;
        pairs
            .iter()
            .zip(predicted)
            .map(|(p, pred)| {
                if !pred.to_array().iter().all(|v| v.is_finite()) {
                    return Err(SvrError::Numeric(format!("non-finite prediction for pair {}", p.pair_id)));
                }
                let (a, g) = (pred.to_array(), p.params.to_array());
                let mse_rot = mse3(&a[..3], &g[..3]);
                let mse_tr = mse3(&a[3..], &g[3..]);
                Ok(PairMetrics {
                    pair_id: p.pair_id.clone(),
                    d_init: p.d_init,
                    d_reg: registration_distance(pred, &p.params, &geom, &grid)?,
                    e_rot: mse_rot.sqrt(),
                    e_tr: mse_tr.sqrt(),
                    mse_rot,
                    mse_tr,
                    predicted: *pred,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let summary = EvalSummary::from_rows(&rows);
    Ok(EvalReport { model_id: String::new(), dataset_id: String::new(), rows, summary })
}

/// Predicts in chunks of `batch_size` and scores every pair.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, pairs: &[SamplePair], batch_size: usize) -> Result<EvalReport> {
    if batch_size == 0 {
        return Err(SvrError::invalid("batch_size must be positive"));
    }
    let mut predicted = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let out = predictor.predict(&refs)?;
        if out.len() != chunk.len() {
            return Err(SvrError::ShapeMismatch(format!("predictor returned {} results for {} pairs", out.len(), chunk.len())));
        }
        predicted.extend(out);
    }
    score_predictions(pairs, &predicted)
}
