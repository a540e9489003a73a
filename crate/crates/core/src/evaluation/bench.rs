use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::SamplePair;
use crate::error::{Result, SvrError};
use crate::network::{Batch, Model, ModelConfig, ScoreMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub repetitions: usize,
    pub pairs: usize,
    /// Seconds per single-pair forward pass.
    pub median_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Times single-pair inference. One untimed warm-up pass precedes
/// `repetitions` timed passes over `pairs`.
pub fn benchmark_runtime(model: &Model<f32>, pairs: &[SamplePair], repetitions: usize) -> Result<RuntimeStats> {
    if repetitions < 2 {
        return Err(SvrError::invalid(format!("at least 2 repetitions are needed for statistics, got {repetitions}")));
    }
    if pairs.is_empty() {
        return Err(SvrError::invalid("no pairs to benchmark"));
    }
    let batches = pairs.iter().map(|p| Batch::<f32>::from_pairs(&[p], model.config())).collect::<Result<Vec<_>>>()?;
    for b in &batches {
        std::hint::black_box(model.predict_batch(b, ScoreMode::Learned));
    }
    let mut per_pair = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        for b in &batches {
            std::hint::black_box(model.predict_batch(b, ScoreMode::Learned));
        }
        per_pair.push(t.elapsed().as_secs_f64() / batches.len() as f64);
    }
    let mut sorted = per_pair.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Ok(RuntimeStats {
        repetitions,
        pairs: pairs.len(),
        median_s: median,
        mean_s: per_pair.iter().sum::<f64>() / n as f64,
        min_s: sorted[0],
        max_s: sorted[n - 1],
    })
}

/// Row of the runtime/complexity table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub method: String,
    pub parameters: usize,
    pub runtime: Option<RuntimeStats>,
}

impl ComplexityRow {
    pub const CSV_HEADER: &'static str = "method,parameters,median_s,mean_s,repetitions";

    pub fn csv_line(&self) -> String {
        match &self.runtime {
            Some(r) => format!("{},{},{},{},{}", self.method, self.parameters, r.median_s, r.mean_s, r.repetitions),
            None => format!("{},{},,,", self.method, self.parameters),
        }
    }
}

/// Parameter counts of `config` with and without the scorer.
pub fn complexity_rows(config: &ModelConfig) -> Result<Vec<ComplexityRow>> {
    let with = crate::network::count_parameters(&config.clone().with_attention(true))?;
    let without = crate::network::count_parameters(&config.clone().with_attention(false))?;
    Ok(vec![
        ComplexityRow { method: "sa-svr".into(), parameters: with, runtime: None },
        ComplexityRow { method: "baseline".into(), parameters: without, runtime: None },
    ])
}
