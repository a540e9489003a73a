use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sasvr::acquisition::{ParamRanges, Split, SplitCounts, SplitReferences, Synthesizer};
use sasvr::dataio::dataset::{self, DataPreset};
use sasvr::dataio;
use sasvr::evaluation::{
    self, benchmark_runtime, complexity_rows, default_rois, interior_mask, phantom_series, select_reference_frames,
    IdentityPredictor, MotionSettings, OraclePredictor, Predictor, SeriesConfig,
};
use sasvr::network::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use sasvr::training::{self, TrainConfig};
use sasvr::volume::Volume;
use serde::Serialize;

use crate::config::{self, BenchConfig, EvalRunConfig, GenerateConfig, MotionConfig, PredictorKind, TrainRunConfig};
use crate::error::CliError;
use crate::{write_text, BenchArgs, EvalArgs, GenerateArgs, MotionArgs, TrainArgs};

macro_rules! set {
    ($cfg:ident . $field:ident, $value:expr) => {
        if let Some(v) = $value {
            $cfg.$field = v;
        }
    };
}

fn array<const N: usize, T: Copy>(v: Option<Vec<T>>, flag: &str) -> Result<Option<[T; N]>, CliError> {
    v.map(|v| {
        let n = v.len();
        v.try_into().map_err(|_| CliError::usage(format!("--{flag} takes {N} comma-separated values, got {n}")))
    })
    .transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn dir_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn required(path: &Path, what: &str) -> Result<(), CliError> {
    if path.as_os_str().is_empty() {
        Err(CliError::usage(format!("--{what} is required")))
    } else {
        Ok(())
    }
}

pub fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let mut c: GenerateConfig = config::load(a.config.as_deref())?;
    set!(c.preset, a.preset);
    set!(c.seed, a.seed);
    set!(c.ratios, array(a.ratios, "ratios")?);
    set!(c.ranges, array(a.ranges, "ranges")?);
    if a.counts.is_some() {
        c.counts = array(a.counts, "counts")?;
    }
    if a.subjects.is_some() {
        c.subjects = a.subjects;
    }
    if a.references.is_some() {
        c.references = a.references;
    }
    if a.spacing_override.is_some() {
        c.spacing_override = a.spacing_override;
    }
    if a.out.is_some() {
        c.out = a.out;
    }

    let mut preset = DataPreset::preset(&c.preset)?;
    let counts = c.counts.unwrap_or([preset.counts.train, preset.counts.val, preset.counts.test]);
    preset.counts = SplitCounts { train: counts[0], val: counts[1], test: counts[2] };
    c.counts = Some(counts);
    if c.references.is_none() {
        preset.subjects = c.subjects.unwrap_or(preset.subjects);
        c.subjects = Some(preset.subjects);
    }
    let ratios = c.split_ratios();
    let ranges = c.param_ranges();
    let out = c.out.clone().unwrap_or_else(|| config::runs_dir().join("datasets").join(format!("{}-seed{}", c.preset, c.seed)));
    c.out = Some(out.clone());

    let ds = match &c.references {
        None => dataset::generate_phantom(&preset, ratios, ranges, c.seed)?,
        Some(dir) => {
            let refs = load_references(dir, &preset, ratios, c.seed, c.spacing_override)?;
            dataset::generate(refs, preset.counts, c.seed, ranges, preset.protocol)?
        }
    };
    dataset::save(&out, &ds)?;
    config::echo(&out, &c)?;
    for s in ds.summary() {
        println!("{}: {} pairs, D_init {:.3} ± {:.3} mm", s.split.name(), s.pairs, s.d_init_mean_mm, s.d_init_std_mm);
    }
    println!("dataset written to {}", out.display());
    Ok(())
}

/// `<subject>_t<index>` names share a subject; any other stem is its own
/// subject at time 0.
fn subject_of(stem: &str) -> (String, usize) {
    if let Some((subject, t)) = stem.rsplit_once("_t") {
        if let Ok(t) = t.parse() {
            return (subject.to_string(), t);
        }
    }
    (stem.to_string(), 0)
}

fn load_references(
    dir: &Path,
    preset: &DataPreset,
    ratios: dataio::SplitRatios,
    seed: u64,
    spacing_override: Option<f64>,
) -> Result<SplitReferences, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::usage(format!("reading {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            n.ends_with(".nii") || n.ends_with(".nii.gz") || n.ends_with(".svr")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::usage(format!("no reference volumes (.nii, .nii.gz, .svr) in {}", dir.display())));
    }
    let mut by_subject: BTreeMap<String, Vec<Arc<Volume>>> = BTreeMap::new();
    let mut spacing = None;
    for f in &files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let stem = name.trim_end_matches(".gz").trim_end_matches(".nii").trim_end_matches(".svr");
        let (subject, t) = subject_of(stem);
        let vol = dataio::load_volume_with(f, spacing_override)?;
        let s = vol.geometry.spacing;
        if *spacing.get_or_insert(s) != s {
            return Err(CliError::usage(format!(
                "{} has spacing {s} mm but earlier references have {} mm; pass --spacing-override",
                f.display(),
                spacing.unwrap_or(s)
            )));
        }
        let vol = dataio::preprocess(&vol, preset.shape)?.with_provenance(subject.clone(), t);
        by_subject.entry(subject).or_default().push(Arc::new(vol));
    }
    let ids: Vec<String> = by_subject.keys().cloned().collect();
    let manifest = dataio::split_subjects(&ids, ratios, seed)?;
    let gather = |list: &[String]| list.iter().flat_map(|id| by_subject[id].iter().cloned()).collect::<Vec<_>>();
    Ok(SplitReferences { train: gather(&manifest.train), val: gather(&manifest.val), test: gather(&manifest.test) })
}

fn model_config(preset: &str, ds: &dataset::StoredDataset, attention: bool) -> Result<ModelConfig, CliError> {
    let mut m = ModelConfig::preset(preset)?.with_attention(attention);
    m.k = ds.info.protocol.k;
    m.volume_shape = ds.info.geometry.shape;
    m.validate()?;
    Ok(m)
}

#[derive(Serialize)]
struct Timing {
    wall_clock_s: f64,
    steps: usize,
    best_step: usize,
    best_val_d_reg: f64,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut c: TrainRunConfig = config::load(a.config.as_deref())?;
    set!(c.dataset, a.dataset);
    set!(c.preset, a.preset);
    set!(c.seed, a.seed);
    set!(c.steps, a.steps);
    set!(c.batch_size, a.batch_size);
    set!(c.learning_rate, a.learning_rate);
    set!(c.lambda1, a.lambda1);
    set!(c.lambda2, a.lambda2);
    set!(c.val_every, a.val_every);
    if a.no_attention {
        c.attention = false;
    }
    if a.out.is_some() {
        c.out = a.out;
    }
    required(&c.dataset, "dataset")?;
    let ds = dataset::load(&c.dataset)?;
    let mcfg = model_config(&c.preset, &ds, c.attention)?;
    let kind = if c.attention { "sa-svr" } else { "baseline" };
    let out = c.out.clone().unwrap_or_else(|| config::runs_dir().join(format!("train-{}-{kind}-seed{}", c.preset, c.seed)));
    c.out = Some(out.clone());

    let tcfg = TrainConfig {
        steps: c.steps,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        lambda1: c.lambda1,
        lambda2: c.lambda2,
        seed: c.seed,
        val_every: c.val_every,
    };
    let model = Model::new(&mcfg, c.seed)?;
    let ckpt = out.join("best.safetensors");
    let dataset_id = dir_name(&c.dataset);
    config::echo(&out, &c)?;
    if c.steps == 0 {
        save_checkpoint(&ckpt, &model, &[("dataset".into(), dataset_id), ("step".into(), "0".into())])?;
        println!("initial checkpoint written to {}", ckpt.display());
        return Ok(());
    }
    let outcome = training::train(model, &tcfg, &ds.pairs.train, &ds.pairs.val)?;
    outcome.history.write_csv(&out.join("history.csv"))?;
    save_checkpoint(
        &ckpt,
        &outcome.model,
        &[("dataset".into(), dataset_id), ("step".into(), outcome.best_step.to_string())],
    )?;
    write_json(
        &out.join("timing.json"),
        &Timing {
            wall_clock_s: outcome.history.wall_clock_s,
            steps: c.steps,
            best_step: outcome.best_step,
            best_val_d_reg: outcome.best_val_d_reg,
        },
    )?;
    println!(
        "best val D_reg {:.4} mm at step {}; checkpoint {}",
        outcome.best_val_d_reg,
        outcome.best_step,
        ckpt.display()
    );
    Ok(())
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| CliError::usage(format!("unknown split {name:?} (expected train, val or test)")))
}

fn predictor(kind: PredictorKind, checkpoint: Option<&Path>) -> Result<(Box<dyn Predictor>, String), CliError> {
    Ok(match kind {
        PredictorKind::Oracle => (Box::new(OraclePredictor), "oracle".into()),
        PredictorKind::Identity => (Box::new(IdentityPredictor), "identity".into()),
        PredictorKind::Model => {
            let path = checkpoint.ok_or_else(|| CliError::usage("--checkpoint is required for the model predictor"))?;
            let (model, _) = load_checkpoint(path)?;
            let run = path.parent().map(dir_name).unwrap_or_default();
            (Box::new(model), format!("{run}/{}", dir_name(path)))
        }
    })
}

pub fn evaluate(a: EvalArgs) -> Result<(), CliError> {
    let mut c: EvalRunConfig = config::load(a.config.as_deref())?;
    set!(c.dataset, a.dataset);
    set!(c.split, a.split);
    set!(c.predictor, a.predictor);
    set!(c.batch_size, a.batch_size);
    if a.oracle {
        c.predictor = PredictorKind::Oracle;
    }
    if a.identity {
        c.predictor = PredictorKind::Identity;
    }
    if a.checkpoint.is_some() {
        c.checkpoint = a.checkpoint;
    }
    if a.out.is_some() {
        c.out = a.out;
    }
    required(&c.dataset, "dataset")?;
    let split = parse_split(&c.split)?;
    let (pred, model_id) = predictor(c.predictor, c.checkpoint.as_deref())?;
    let out = c.out.clone().unwrap_or_else(|| match (c.predictor, &c.checkpoint) {
        (PredictorKind::Model, Some(ck)) => ck.parent().unwrap_or(Path::new(".")).join(format!("eval-{}", c.split)),
        (kind, _) => config::runs_dir().join(format!("eval-{kind:?}-{}", c.split).to_lowercase()),
    });
    c.out = Some(out.clone());
    let ds = dataset::load(&c.dataset)?;
    let report = evaluation::evaluate(pred.as_ref(), ds.pairs.get(split), c.batch_size)?.with_ids(model_id, dir_name(&c.dataset));
    config::echo(&out, &c)?;
    write_text(&out.join("eval_pairs.csv"), &report.pairs_csv())?;
    write_text(&out.join("eval_summary.csv"), &report.summary_csv())?;
    println!("{}", report.summary_line());
    Ok(())
}

fn bench_pairs(preset: &DataPreset, n: usize, seed: u64) -> Result<Vec<sasvr::acquisition::SamplePair>, CliError> {
    let reference = Arc::new(dataio::make_phantom(preset.shape, seed)?.with_provenance("bench", 0));
    let synth = Synthesizer::new(reference.geometry, ParamRanges::default(), preset.protocol)?;
    (0..n)
        .map(|i| Ok(synth.synthesize(&reference, sasvr::acquisition::derive_seed(seed, i as u64), format!("bench-{i:03}"))?))
        .collect()
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    let mut c: BenchConfig = config::load(a.config.as_deref())?;
    set!(c.preset, a.preset);
    set!(c.repetitions, a.repetitions);
    set!(c.pairs, a.pairs);
    set!(c.seed, a.seed);
    if a.checkpoint.is_some() {
        c.checkpoint = a.checkpoint;
    }
    if a.out.is_some() {
        c.out = a.out;
    }
    if c.repetitions < 2 {
        return Err(CliError::usage(format!("--repetitions must be at least 2, got {}", c.repetitions)));
    }
    let preset = DataPreset::preset(&c.preset)?;
    let attention = match &c.checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => Model::new(&ModelConfig::preset(&c.preset)?, c.seed)?,
    };
    let mut mcfg = attention.config().clone();
    if mcfg.volume_shape != preset.shape || mcfg.k != preset.protocol.k {
        return Err(CliError::usage(format!(
            "checkpoint expects {:?} volumes with k = {}, preset {} has {:?} with k = {}",
            mcfg.volume_shape, mcfg.k, c.preset, preset.shape, preset.protocol.k
        )));
    }
    mcfg.with_attention = true;
    let baseline = Model::new(&mcfg.clone().with_attention(false), c.seed)?;
    let out = c.out.clone().unwrap_or_else(|| config::runs_dir().join(format!("bench-{}", c.preset)));
    c.out = Some(out.clone());

    let pairs = bench_pairs(&preset, c.pairs, c.seed)?;
    let mut rows = complexity_rows(&mcfg)?;
    rows[0].runtime = Some(benchmark_runtime(&attention, &pairs, c.repetitions)?);
    rows[1].runtime = Some(benchmark_runtime(&baseline, &pairs, c.repetitions)?);
    let mut csv = String::from(evaluation::ComplexityRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv += &r.csv_line();
        csv.push('\n');
        let rt = r.runtime.as_ref().expect("timed above");
        println!("{}: {} parameters, median {:.4} s per pair", r.method, r.parameters, rt.median_s);
    }
    config::echo(&out, &c)?;
    write_text(&out.join("bench.csv"), &csv)
}

pub fn motion_study(a: MotionArgs) -> Result<(), CliError> {
    let mut c: MotionConfig = config::load(a.config.as_deref())?;
    set!(c.predictor, a.predictor);
    set!(c.preset, a.preset);
    set!(c.frames, a.frames);
    set!(c.candidates, a.candidates);
    set!(c.subject_seed, a.subject_seed);
    set!(c.seed, a.seed);
    set!(c.natural_motion, a.natural_motion);
    set!(c.drift_amplitude, a.drift_amplitude);
    set!(c.drift_period, a.drift_period);
    set!(c.margin, a.margin);
    set!(c.plots_per_roi, a.plots_per_roi);
    set!(c.batch_size, a.batch_size);
    if a.checkpoint.is_some() {
        c.checkpoint = a.checkpoint;
    }
    if a.out.is_some() {
        c.out = a.out;
    }
    let preset = DataPreset::preset(&c.preset)?;
    let (pred, model_id) = predictor(c.predictor, c.checkpoint.as_deref())?;
    let out = c.out.clone().unwrap_or_else(|| match (c.predictor, &c.checkpoint) {
        (PredictorKind::Model, Some(ck)) => ck.parent().unwrap_or(Path::new(".")).join("motion-study"),
        (kind, _) => config::runs_dir().join(format!("motion-study-{kind:?}").to_lowercase()),
    });
    c.out = Some(out.clone());

    let ranges = ParamRanges::default();
    let series_cfg = SeriesConfig {
        subject_seed: c.subject_seed,
        candidates: c.candidates,
        natural_motion: c.natural_motion,
        drift_amplitude: c.drift_amplitude,
        drift_period: c.drift_period,
        seed: c.seed,
    };
    let series = phantom_series(&series_cfg, preset.shape, dataio::DEFAULT_SPACING, &ranges)?;
    let ranked = select_reference_frames(&series.transforms, c.frames)?;
    let mut kept = ranked.clone();
    kept.sort_unstable();
    let reference = kept.iter().position(|&i| i == ranked[0]).expect("closest frame is kept");
    let frames: Vec<Arc<Volume>> = kept.iter().map(|&i| Arc::new(series.frames[i].clone())).collect();
    let labels = dataio::PhantomSubject::new(c.subject_seed).labels(preset.shape);
    let interior = interior_mask(&labels, c.margin);
    let settings = MotionSettings {
        ranges,
        protocol: preset.protocol,
        seed: derive(c.seed),
        batch_size: c.batch_size,
    };
    let study = evaluation::motion_study(
        &frames,
        &kept,
        reference,
        &interior,
        pred.as_ref(),
        &default_rois(preset.shape),
        &settings,
    )?;
    config::echo(&out, &c)?;
    write_text(&out.join("roi_summary.csv"), &study.summary_csv())?;
    write_text(&out.join("voxel_series.csv"), &study.series_csv())?;
    write_text(&out.join("params.csv"), &study.params_csv())?;
    let plots = study.write_plots(&out.join("plots"), c.plots_per_roi)?;
    println!(
        "{model_id}: variance reduced for {:.1}% of ROI voxels; {} plots in {}",
        100.0 * study.variance_reduced_fraction(),
        plots.len(),
        out.display()
    );
    Ok(())
}

/// Seed stream for the synthetic per-frame motion, distinct from the one
/// used for natural motion.
fn derive(seed: u64) -> u64 {
    sasvr::acquisition::derive_seed(seed, 1 << 32)
}
