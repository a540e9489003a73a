//! Dataset directories.
//!
//! ```text
//! <dir>/dataset.json            geometry, protocol, ranges, seed, counts, reference index
//! <dir>/references/<id>.svr     reference volumes
//! <dir>/manifests/<split>.jsonl one PairRecord per line
//! <dir>/stacks/<pair_id>.svr    slice stacks, (K, H, W)
//! <dir>/summary.json            per-split D_init statistics
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    build_dataset, mean_std, Dataset, PairRecord, ParamRanges, SamplePair, SliceProtocol, SliceStack, Split,
    SplitCounts, SplitReferences, Synthesizer,
};
use crate::dataio::{make_phantom, raw, split_subjects, SplitManifest, SplitRatios};
use crate::error::{Result, SvrError};
use crate::geometry::VolumeGeometry;
use crate::volume::Volume;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub split: Split,
    pub subject_id: String,
    pub time_index: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub version: u32,
    pub geometry: VolumeGeometry,
    pub protocol: SliceProtocol,
    pub ranges: ParamRanges,
    pub seed: u64,
    pub counts: SplitCounts,
    pub references: Vec<ReferenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub pairs: usize,
    pub d_init_mean_mm: f64,
    pub d_init_std_mm: f64,
}

/// A dataset together with the references and settings that produced it.
#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub info: DatasetInfo,
    pub references: SplitReferences,
    pub pairs: Dataset,
}

impl StoredDataset {
    pub fn synthesizer(&self) -> Result<Synthesizer> {
        Synthesizer::new(self.info.geometry, self.info.ranges, self.info.protocol)
    }

    pub fn summary(&self) -> Vec<SplitSummary> {
        Split::ALL
            .iter()
            .map(|&split| {
                let d: Vec<f64> = self.pairs.get(split).iter().map(|p| p.d_init).collect();
                let (m, s) = if d.is_empty() { (0.0, 0.0) } else { mean_std(&d) };
                SplitSummary { split, pairs: d.len(), d_init_mean_mm: m, d_init_std_mm: s }
            })
            .collect()
    }
}

/// Volume shape, acquisition protocol, pair counts and phantom cohort size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPreset {
    pub shape: [usize; 3],
    pub protocol: SliceProtocol,
    pub counts: SplitCounts,
    pub subjects: usize,
}

impl DataPreset {
    /// 24×32×32 phantoms, all 24 slices acquired, 64/16/20 pairs.
    pub fn desk() -> Self {
        Self {
            shape: [24, 32, 32],
            protocol: SliceProtocol { k: 6, n: 24, offset: 0 },
            counts: SplitCounts { train: 64, val: 16, test: 20 },
            subjects: 25,
        }
    }

    /// 70×100×100 volumes (60 acquired slices centred in depth),
    /// 2000/500/200 pairs.
    pub fn paper() -> Self {
        Self {
            shape: [70, 100, 100],
            protocol: SliceProtocol { k: 6, n: 60, offset: 5 },
            counts: SplitCounts { train: 2000, val: 500, test: 200 },
            subjects: 138,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(SvrError::invalid(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

/// Phantom references for `preset`, synthesized into a dataset.
pub fn generate_phantom(preset: &DataPreset, ratios: SplitRatios, ranges: ParamRanges, seed: u64) -> Result<StoredDataset> {
    let (refs, _) = phantom_references(preset.subjects, preset.shape, ratios, seed)?;
    generate(refs, preset.counts, seed, ranges, preset.protocol)
}

fn io_err(path: &Path, what: &str) -> impl FnOnce(std::io::Error) -> SvrError {
    let ctx = format!("{what} {}", path.display());
    move |e| SvrError::io(ctx, e)
}

/// Phantom subjects `sub-000 … sub-{n−1}` split by subject with `ratios`.
pub fn phantom_references(
    subjects: usize,
    shape: [usize; 3],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(SplitReferences, SplitManifest)> {
    let ids: Vec<String> = (0..subjects).map(|i| format!("sub-{i:03}")).collect();
    let manifest = split_subjects(&ids, ratios, seed)?;
    let make = |list: &[String]| -> Result<Vec<Arc<Volume>>> {
        list.iter()
            .map(|id| {
                let index: u64 = id[4..].parse().expect("generated id");
                let subject_seed = crate::acquisition::derive_seed(seed, 1_000_000 + index);
                Ok(Arc::new(make_phantom(shape, subject_seed)?.with_provenance(id.clone(), 0)))
            })
            .collect()
    };
    let refs = SplitReferences { train: make(&manifest.train)?, val: make(&manifest.val)?, test: make(&manifest.test)? };
    Ok((refs, manifest))
}

/// Synthesizes pairs for `references` and bundles everything needed to store them.
pub fn generate(
    references: SplitReferences,
    counts: SplitCounts,
    seed: u64,
    ranges: ParamRanges,
    protocol: SliceProtocol,
) -> Result<StoredDataset> {
    let geometry = Split::ALL
        .iter()
        .flat_map(|&s| references.get(s))
        .map(|v| v.geometry)
        .next()
        .ok_or_else(|| SvrError::invalid("no reference volumes"))?;
    let synth = Synthesizer::new(geometry, ranges, protocol)?;
    let pairs = build_dataset(&references, counts, seed, &synth)?;
    let entries = Split::ALL
        .iter()
        .flat_map(|&split| {
            references.get(split).iter().map(move |v| ReferenceEntry {
                split,
                subject_id: v.provenance.subject_id.clone(),
                time_index: v.provenance.time_index,
                file: format!("references/{}_t{:04}.svr", v.provenance.subject_id, v.provenance.time_index),
            })
        })
        .collect();
    let info = DatasetInfo { version: FORMAT_VERSION, geometry, protocol, ranges, seed, counts, references: entries };
    Ok(StoredDataset { info, references, pairs })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path, "creating"))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(io_err(path, "writing"))?;
    }
    f.flush().map_err(io_err(path, "writing"))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(io_err(path, "opening"))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path, "reading"))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| SvrError::Serialization(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path, "writing"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(io_err(path, "reading"))?;
    serde_json::from_str(&s).map_err(|e| SvrError::Serialization(format!("{}: {e}", path.display())))
}

fn manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join("manifests").join(format!("{}.jsonl", split.name()))
}

fn stack_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join("stacks").join(format!("{pair_id}.svr"))
}

pub fn save(dir: &Path, ds: &StoredDataset) -> Result<()> {
    for sub in ["references", "manifests", "stacks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p, "creating"))?;
    }
    write_json(&dir.join("dataset.json"), &ds.info)?;
    for e in &ds.info.references {
        let vol = ds.references.find(&e.subject_id, e.time_index).expect("entries are built from the references");
        raw::write_volume(&dir.join(&e.file), vol)?;
    }
    for split in Split::ALL {
        write_jsonl(&manifest_path(dir, split), &ds.pairs.records(split))?;
        for p in ds.pairs.get(split) {
            let [_, h, w] = p.reference.shape();
            raw::write_array(&stack_path(dir, &p.pair_id), [p.stack.k(), h, w], p.reference.geometry.spacing, p.stack.as_slice())?;
        }
    }
    write_json(&dir.join("summary.json"), &ds.summary())
}

pub fn load(dir: &Path) -> Result<StoredDataset> {
    let info: DatasetInfo = read_json(&dir.join("dataset.json"))?;
    if info.version != FORMAT_VERSION {
        return Err(SvrError::invalid(format!("dataset format version {} is not supported", info.version)));
    }
    let mut references = SplitReferences::default();
    for e in &info.references {
        let mut vol = raw::read_volume(&dir.join(&e.file))?.with_provenance(e.subject_id.clone(), e.time_index);
        vol.geometry = info.geometry;
        let list = match e.split {
            Split::Train => &mut references.train,
            Split::Val => &mut references.val,
            Split::Test => &mut references.test,
        };
        list.push(Arc::new(vol));
    }
    let mut pairs = Dataset::default();
    for split in Split::ALL {
        let records: Vec<PairRecord> = read_jsonl(&manifest_path(dir, split))?;
        let mut out = Vec::with_capacity(records.len());
        for r in records {
            out.push(pair_from_record(dir, &info, &references, r)?);
        }
        match split {
            Split::Train => pairs.train = out,
            Split::Val => pairs.val = out,
            Split::Test => pairs.test = out,
        }
    }
    Ok(StoredDataset { info, references, pairs })
}

fn pair_from_record(dir: &Path, info: &DatasetInfo, refs: &SplitReferences, r: PairRecord) -> Result<SamplePair> {
    let reference = refs
        .find(&r.reference_id, r.time_index)
        .ok_or_else(|| SvrError::invalid(format!("pair {} names unknown reference {}", r.pair_id, r.reference_id)))?;
    let ([k, h, w], _, data) = raw::read_array(&stack_path(dir, &r.pair_id))?;
    let [_, rh, rw] = info.geometry.shape;
    if k != r.slice_indices.len() || h != rh || w != rw {
        return Err(SvrError::ShapeMismatch(format!("stack of pair {} has shape {:?}", r.pair_id, [k, h, w])));
    }
    let shot = r.slice_indices[0]
        .checked_sub(info.protocol.offset)
        .ok_or_else(|| SvrError::invalid(format!("pair {} has slices before the protocol offset", r.pair_id)))?;
    Ok(SamplePair {
        pair_id: r.pair_id,
        seed: r.seed,
        stack: SliceStack {
            data: Array3::from_shape_vec((k, h, w), data).expect("length checked"),
            indices: r.slice_indices,
            geometry: info.geometry,
        },
        reference: Arc::clone(reference),
        params: crate::geometry::RigidParams::from_array(r.params_deg_mm),
        shot,
        d_init: r.d_init_mm,
    })
}
