use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sasvr_autograd::{Graph, Mode, ParamStore, Real, StatUpdate};
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossBreakdown, LossWeights};
use super::optim::Adam;
use crate::acquisition::{derive_seed, SamplePair};
use crate::error::{Result, SvrError};
use crate::evaluation::{evaluate, Predictor};
use crate::geometry::{make_grid, Grid3D, RigidParams, VolumeGeometry};
use crate::network::{Batch, Model, ScoreMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer updates.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Shuffling seed.
    pub seed: u64,
    /// Validate every this many updates (and after the last one).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch_size: 8, learning_rate: 5e-4, lambda1: 10.0, lambda2: 100.0, seed: 0, val_every: 10 }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { lambda_ang: self.lambda1, lambda_tr: self.lambda2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_every == 0 {
            return Err(SvrError::invalid("batch_size and val_every must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SvrError::invalid(format!("learning rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        self.weights().validate()
    }
}

/// Loss of one batch plus everything needed for an update.
pub struct StepResult<T> {
    /// Batch mean.
    pub loss: LossBreakdown,
    /// Indexed like the store's parameters.
    pub param_grads: Vec<Option<Vec<T>>>,
    pub stat_updates: Vec<StatUpdate<T>>,
}

/// Geometry shared by all `pairs`, and its voxel-centre grid.
pub fn common_geometry(pairs: &[SamplePair]) -> Result<(VolumeGeometry, Grid3D)> {
    let geom = pairs.first().ok_or_else(|| SvrError::invalid("no pairs"))?.reference.geometry;
    if let Some(p) = pairs.iter().find(|p| p.reference.geometry != geom) {
        return Err(SvrError::ShapeMismatch(format!("pair {} has a different reference geometry", p.pair_id)));
    }
    Ok((geom, make_grid(&geom)))
}

/// Network outputs as parameters; non-finite outputs are a numerical
/// failure rather than bad input.
fn to_params<T: Real>(v: &[T]) -> Result<Vec<RigidParams>> {
    v.chunks(6)
        .map(|c| {
            let a: [f64; 6] = std::array::from_fn(|i| c[i].to_f64().unwrap_or(f64::NAN));
            if a.iter().all(|x| x.is_finite()) {
                Ok(RigidParams::from_array(a))
            } else {
                Err(SvrError::Numeric(format!("network produced non-finite parameters {a:?}")))
            }
        })
        .collect()
}

/// Batch-mean loss without gradients.
pub fn batch_loss<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    mode: Mode,
    w: LossWeights,
    geom: &VolumeGeometry,
    grid: &Grid3D,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.store, mode);
    let (s, v) = batch.inputs(&mut g, model.config());
    let out = model.net.forward(&mut g, s, v, ScoreMode::Learned);
    let losses = to_params(g.value(out.params))?
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| super::loss::loss(p, t, geom, grid, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&losses))
}

/// Batch-mean loss with gradients for every parameter.
pub fn loss_gradients<T: Real>(
    model: &Model<T>,
    batch: &Batch<T>,
    mode: Mode,
    w: LossWeights,
    geom: &VolumeGeometry,
    grid: &Grid3D,
) -> Result<StepResult<T>> {
    let mut g = Graph::new(&model.store, mode);
    let (s, v) = batch.inputs(&mut g, model.config());
    let out = model.net.forward(&mut g, s, v, ScoreMode::Learned);
    let preds = to_params(g.value(out.params))?;
    let inv_b = 1.0 / batch.size as f64;
    let mut seed = Vec::with_capacity(6 * batch.size);
    let mut losses = Vec::with_capacity(batch.size);
    for (p, t) in preds.iter().zip(&batch.targets) {
        let (l, d) = loss_and_grad(p, t, geom, grid, w)?;
        losses.push(l);
        seed.extend(d.iter().map(|v| T::of(v * inv_b)));
    }
    let loss = LossBreakdown::mean(&losses);
    let param_grads = g.backward(out.params, &seed).into_param_grads();
    Ok(StepResult { loss, param_grads, stat_updates: g.take_stat_updates() })
}

/// Endless reshuffled pass over `0..n`, one permutation per epoch.
struct Sampler {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, epoch: 0, order: Vec::new(), pos: 0 }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch)));
                    self.epoch += 1;
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Updates applied before this row's validation.
    pub step: usize,
    /// Training loss of the batch consumed by update `step` (none for step 0).
    pub loss: Option<LossBreakdown>,
    pub val_d_reg: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub wall_clock_s: f64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "step,total,l_sim,l_ang,l_tr,val_D_reg";

    /// Wall-clock time is deliberately left out so identical runs give
    /// identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.rows {
            let l = r.loss;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step,
                opt(l.map(|l| l.total)),
                opt(l.map(|l| l.l_sim)),
                opt(l.map(|l| l.l_ang)),
                opt(l.map(|l| l.l_tr)),
                opt(r.val_d_reg)
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| SvrError::io(format!("writing {}", path.display()), e))
    }

    pub fn validated(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows.iter().filter_map(|r| r.val_d_reg.map(|v| (r.step, v)))
    }
}

pub struct TrainOutcome {
    /// Weights with the lowest validation D_reg (earliest on ties).
    pub model: Model<f32>,
    pub history: TrainHistory,
    pub best_step: usize,
    pub best_val_d_reg: f64,
}

fn check_finite(step: usize, l: &LossBreakdown) -> Result<()> {
    if l.total.is_finite() {
        Ok(())
    } else {
        Err(SvrError::Divergence {
            step,
            reason: format!("loss is {} (l_sim {}, l_ang {}, l_tr {})", l.total, l.l_sim, l.l_ang, l.l_tr),
        })
    }
}

fn at_step(step: usize) -> impl Fn(SvrError) -> SvrError {
    move |e| match e {
        SvrError::Numeric(reason) => SvrError::Divergence { step, reason },
        e => e,
    }
}

fn validation_d_reg(model: &Model<f32>, val: &[SamplePair], batch_size: usize) -> Result<f64> {
    Ok(evaluate(model, val, batch_size)?.summary.d_reg.mean)
}

/// Mini-batch Adam on `train`, validating on `val` at step 0, every
/// `val_every` updates and after the last one.
pub fn train(mut model: Model<f32>, cfg: &TrainConfig, train: &[SamplePair], val: &[SamplePair]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SvrError::invalid("training and validation sets must be non-empty"));
    }
    let started = Instant::now();
    let (geom, grid) = common_geometry(train)?;
    let w = cfg.weights();
    let mut opt = Adam::new(&model.store, cfg.learning_rate as f32);
    let mut sampler = Sampler::new(train.len(), cfg.seed);
    let mut history = TrainHistory::default();

    let initial = validation_d_reg(&model, val, cfg.batch_size)?;
    history.rows.push(HistoryRow { step: 0, loss: None, val_d_reg: Some(initial) });
    let mut best: (usize, f64, ParamStore<f32>) = (0, initial, model.store.clone());
    log::info!("step 0: val D_reg {initial:.4} mm");

    for step in 1..=cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let pairs: Vec<&SamplePair> = idx.iter().map(|&i| &train[i]).collect();
        let batch = Batch::<f32>::from_pairs(&pairs, model.config())?;
        let r = loss_gradients(&model, &batch, Mode::Train, w, &geom, &grid).map_err(at_step(step))?;
        check_finite(step, &r.loss)?;
        opt.step(&mut model.store, &r.param_grads);
        model.store.apply_stat_updates(&r.stat_updates);
        let val_d_reg = if step % cfg.val_every == 0 || step == cfg.steps {
            let d = validation_d_reg(&model, val, cfg.batch_size).map_err(at_step(step))?;
            if !d.is_finite() {
                return Err(SvrError::Divergence { step, reason: format!("validation D_reg is {d}") });
            }
            log::info!("step {step}: loss {:.4} (l_sim {:.4}), val D_reg {d:.4} mm", r.loss.total, r.loss.l_sim);
            if d < best.1 {
                best = (step, d, model.store.clone());
            }
            Some(d)
        } else {
            None
        };
        history.rows.push(HistoryRow { step, loss: Some(r.loss), val_d_reg });
    }
    history.wall_clock_s = started.elapsed().as_secs_f64();
    let (best_step, best_val_d_reg, store) = best;
    model.store = store;
    Ok(TrainOutcome { model, history, best_step, best_val_d_reg })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub losses: Vec<f64>,
}

impl OverfitReport {
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

/// Repeated updates on one fixed batch. Stops after `max_steps` updates or
/// once the loss has fallen by `target_reduction` of its step-0 value.
pub fn overfit_batch(
    model: &mut Model<f32>,
    pairs: &[SamplePair],
    cfg: &TrainConfig,
    max_steps: usize,
    target_reduction: f64,
) -> Result<OverfitReport> {
    cfg.validate()?;
    let (geom, grid) = common_geometry(pairs)?;
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    let batch = Batch::<f32>::from_pairs(&refs, model.config())?;
    let mut opt = Adam::new(&model.store, cfg.learning_rate as f32);
    let mut losses = Vec::with_capacity(max_steps + 1);
    for step in 0..=max_steps {
        let r = loss_gradients(model, &batch, Mode::Train, cfg.weights(), &geom, &grid).map_err(at_step(step))?;
        check_finite(step, &r.loss)?;
        losses.push(r.loss.total);
        if step == max_steps || r.loss.total <= (1.0 - target_reduction) * losses[0] {
            break;
        }
        opt.step(&mut model.store, &r.param_grads);
        model.store.apply_stat_updates(&r.stat_updates);
    }
    Ok(OverfitReport { initial_loss: losses[0], final_loss: *losses.last().unwrap(), steps: losses.len() - 1, losses })
}

impl Predictor for Model<f32> {
    fn predict(&self, pairs: &[&SamplePair]) -> Result<Vec<RigidParams>> {
        Model::predict(self, pairs)
    }
}
