//! Synthetic motion: rigid parameter sampling, simultaneous multi-slice
//! stack extraction and labelled pair generation.

use std::sync::Arc;

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::{compose_affine, grid_distance, make_grid, resample, AffineTransform, Grid3D, RigidParams, VolumeGeometry};
use crate::volume::Volume;

/// Symmetric sampling bounds: angles in degrees, translations in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub alpha_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self { alpha_x: 5.0, alpha_y: 5.0, alpha_z: 5.0, t_x: 12.0, t_y: 12.0, t_z: 8.4 }
    }
}

impl ParamRanges {
    pub const ZERO: Self = Self { alpha_x: 0.0, alpha_y: 0.0, alpha_z: 0.0, t_x: 0.0, t_y: 0.0, t_z: 0.0 };

    pub fn to_array(&self) -> [f64; 6] {
        [self.alpha_x, self.alpha_y, self.alpha_z, self.t_x, self.t_y, self.t_z]
    }

    pub fn validate(&self) -> Result<()> {
        match self.to_array().iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            Some(b) => Err(SvrError::invalid(format!("parameter bound must be finite and non-negative, got {b}"))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, p: &RigidParams) -> bool {
        p.to_array().iter().zip(self.to_array()).all(|(v, b)| v.abs() <= b)
    }
}

/// Seed for item `index` of a stream keyed by `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_params<R: Rng>(rng: &mut R, ranges: &ParamRanges) -> RigidParams {
    let b = ranges.to_array();
    let mut v = [0.0; 6];
    for (x, a) in v.iter_mut().zip(b) {
        *x = (2.0 * rng.random::<f64>() - 1.0) * a;
    }
    RigidParams::from_array(v)
}

/// Independent `U(−a, a)` draws for each of the six parameters.
pub fn sample_rigid_params(seed: u64, ranges: &ParamRanges) -> Result<RigidParams> {
    ranges.validate()?;
    Ok(draw_params(&mut ChaCha8Rng::seed_from_u64(seed), ranges))
}

/// Slice positions acquired together in one shot.
///
/// `n` slices of a volume are acquired `k` at a time; shot `i` (0-based)
/// reads planes `offset + i + m·n/k` for `m = 0..k`. `offset` is the number
/// of padding planes in front of the acquired slab.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceProtocol {
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub offset: usize,
}

impl SliceProtocol {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        let p = Self { k, n, offset: 0 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.n % self.k != 0 {
            return Err(SvrError::invalid(format!("{} slices cannot be split into shots of {}", self.n, self.k)));
        }
        Ok(())
    }

    pub fn gap(&self) -> usize {
        self.n / self.k
    }

    pub fn num_shots(&self) -> usize {
        self.gap()
    }

    /// Plane indices of shot `i` in volume coordinates.
    pub fn shot(&self, i: usize) -> Result<Vec<usize>> {
        Ok(slice_indices(self.n, i, self.k)?.into_iter().map(|x| x + self.offset).collect())
    }

    pub fn check_depth(&self, depth: usize) -> Result<()> {
        self.validate()?;
        if self.offset + self.n > depth {
            return Err(SvrError::invalid(format!(
                "protocol spans planes {}..{} but the volume has {depth}",
                self.offset,
                self.offset + self.n
            )));
        }
        Ok(())
    }
}

/// `(i, i + n/k, …, i + (k−1)·n/k)` for a 0-based shot index `i < n/k`.
pub fn slice_indices(n: usize, i: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || n % k != 0 {
        return Err(SvrError::invalid(format!("n = {n} is not divisible by k = {k}")));
    }
    let gap = n / k;
    if i >= gap {
        return Err(SvrError::invalid(format!("shot index {i} out of range 0..{gap}")));
    }
    Ok((0..k).map(|m| i + m * gap).collect())
}

/// `K` axial planes of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack {
    /// `(K, H, W)`.
    pub data: Array3<f32>,
    pub indices: Vec<usize>,
    pub geometry: VolumeGeometry,
}

impl SliceStack {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        self.data.as_slice().expect("stacks are stored in standard layout")
    }
}

/// Copies the axial planes at `indices` (bit-exact).
pub fn extract_stack(vol: &Volume, indices: &[usize]) -> Result<SliceStack> {
    let [d, _, _] = vol.shape();
    if let Some(&bad) = indices.iter().find(|&&i| i >= d) {
        return Err(SvrError::invalid(format!("slice index {bad} out of bounds for depth {d}")));
    }
    if indices.is_empty() {
        return Err(SvrError::invalid("empty slice index list"));
    }
    let data = vol.data.select(Axis(0), indices).as_standard_layout().into_owned();
    Ok(SliceStack { data, indices: indices.to_vec(), geometry: vol.geometry })
}

/// One labelled training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub pair_id: String,
    pub seed: u64,
    pub stack: SliceStack,
    pub reference: Arc<Volume>,
    pub params: RigidParams,
    pub shot: usize,
    /// Mean grid displacement of the ground-truth transform, mm.
    pub d_init: f64,
}

impl SamplePair {
    pub fn transform(&self) -> Result<AffineTransform> {
        compose_affine(&self.params, &self.reference.geometry)
    }

    pub fn record(&self) -> PairRecord {
        PairRecord {
            pair_id: self.pair_id.clone(),
            reference_id: self.reference.provenance.subject_id.clone(),
            time_index: self.reference.provenance.time_index,
            seed: self.seed,
            params_deg_mm: self.params.to_array(),
            slice_indices: self.stack.indices.clone(),
            d_init_mm: self.d_init,
        }
    }
}

/// Pair synthesis with a cached grid for the displacement metric.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub ranges: ParamRanges,
    pub protocol: SliceProtocol,
    grid: Grid3D,
    geometry: VolumeGeometry,
}

impl Synthesizer {
    pub fn new(geometry: VolumeGeometry, ranges: ParamRanges, protocol: SliceProtocol) -> Result<Self> {
        ranges.validate()?;
        protocol.check_depth(geometry.shape[0])?;
        Ok(Self { ranges, protocol, grid: make_grid(&geometry), geometry })
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    /// Parameters and shot index drawn from `seed`.
    pub fn draw(&self, seed: u64) -> (RigidParams, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = draw_params(&mut rng, &self.ranges);
        let shot = rng.random_range(0..self.protocol.num_shots());
        (params, shot)
    }

    pub fn synthesize(&self, reference: &Arc<Volume>, seed: u64, pair_id: impl Into<String>) -> Result<SamplePair> {
        let (params, shot) = self.draw(seed);
        self.build(reference, seed, pair_id.into(), params, shot)
    }

    /// Builds a pair from explicit parameters and shot index.
    pub fn build(
        &self,
        reference: &Arc<Volume>,
        seed: u64,
        pair_id: String,
        params: RigidParams,
        shot: usize,
    ) -> Result<SamplePair> {
        if reference.geometry != self.geometry {
            return Err(SvrError::ShapeMismatch(format!(
                "reference geometry {:?} differs from synthesizer geometry {:?}",
                reference.geometry, self.geometry
            )));
        }
        let t = compose_affine(&params, &reference.geometry)?;
        let moving = resample(reference, &t)?;
        let stack = extract_stack(&moving, &self.protocol.shot(shot)?)?;
        let d_init = grid_distance(&AffineTransform::identity(), &t, &self.grid);
        Ok(SamplePair { pair_id, seed, stack, reference: Arc::clone(reference), params, shot, d_init })
    }
}

/// Samples a rigid transform from `seed`, warps `reference` and extracts a
/// stack for a uniformly drawn shot.
pub fn synthesize_pair(
    reference: &Arc<Volume>,
    seed: u64,
    ranges: &ParamRanges,
    protocol: &SliceProtocol,
) -> Result<SamplePair> {
    Synthesizer::new(reference.geometry, *ranges, *protocol)?.synthesize(reference, seed, format!("pair-{seed}"))
}

/// Manifest line describing one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub reference_id: String,
    #[serde(default)]
    pub time_index: usize,
    pub seed: u64,
    pub params_deg_mm: [f64; 6],
    pub slice_indices: Vec<usize>,
    pub d_init_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Reference volumes grouped by split (already subject-disjoint).
#[derive(Clone, Debug, Default)]
pub struct SplitReferences {
    pub train: Vec<Arc<Volume>>,
    pub val: Vec<Arc<Volume>>,
    pub test: Vec<Arc<Volume>>,
}

impl SplitReferences {
    pub fn get(&self, split: Split) -> &[Arc<Volume>] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn find(&self, subject_id: &str, time_index: usize) -> Option<&Arc<Volume>> {
        Split::ALL
            .iter()
            .flat_map(|&s| self.get(s))
            .find(|v| v.provenance.subject_id == subject_id && v.provenance.time_index == time_index)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

impl Dataset {
    pub fn get(&self, split: Split) -> &[SamplePair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn records(&self, split: Split) -> Vec<PairRecord> {
        self.get(split).iter().map(SamplePair::record).collect()
    }
}

/// Seed of pair `index` within `split` for a dataset seeded with `seed`.
pub fn pair_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(derive_seed(seed, split.stream()), index as u64)
}

/// Generates `counts` pairs per split, cycling through that split's
/// references. Each pair's randomness depends only on `(seed, split, index)`.
pub fn build_dataset(
    references: &SplitReferences,
    counts: SplitCounts,
    seed: u64,
    synth: &Synthesizer,
) -> Result<Dataset> {
    let mut out = Dataset::default();
    for split in Split::ALL {
        let refs = references.get(split);
        let n = counts.get(split);
        if n == 0 {
            continue;
        }
        if refs.is_empty() {
            return Err(SvrError::invalid(format!("no reference volumes for the {} split", split.name())));
        }
        let pairs = (0..n)
            .into_par_iter()
            .map(|i| {
                let r = &refs[i % refs.len()];
                synth.synthesize(r, pair_seed(seed, split, i), format!("{}-{i:05}", split.name()))
            })
            .collect::<Result<Vec<_>>>()?;
        match split {
            Split::Train => out.train = pairs,
            Split::Val => out.val = pairs,
            Split::Test => out.test = pairs,
        }
    }
    Ok(out)
}

/// Rebuilds a pair from its manifest record and checks it against the record.
pub fn regenerate_pair(record: &PairRecord, references: &SplitReferences, synth: &Synthesizer) -> Result<SamplePair> {
    let reference = references
        .find(&record.reference_id, record.time_index)
        .ok_or_else(|| SvrError::invalid(format!("unknown reference {}", record.reference_id)))?;
    let params = RigidParams::from_array(record.params_deg_mm);
    let first = *record.slice_indices.first().ok_or_else(|| SvrError::invalid("record without slices"))?;
    let shot = first.checked_sub(synth.protocol.offset).ok_or_else(|| SvrError::invalid("slice before protocol offset"))?;
    let pair = synth.build(reference, record.seed, record.pair_id.clone(), params, shot)?;
    if pair.stack.indices != record.slice_indices {
        return Err(SvrError::invalid(format!("record {} slice indices do not follow the protocol", record.pair_id)));
    }
    Ok(pair)
}

/// Mean and population standard deviation of the displacement of `count`
/// transforms sampled on `geometry`.
pub fn d_init_statistics(geometry: &VolumeGeometry, ranges: &ParamRanges, count: usize, seed: u64) -> Result<(f64, f64)> {
    ranges.validate()?;
    if count == 0 {
        return Err(SvrError::invalid("count must be positive"));
    }
    let grid = make_grid(geometry);
    let id = AffineTransform::identity();
    let d = (0..count)
        .into_par_iter()
        .map(|i| {
            let p = sample_rigid_params(derive_seed(seed, i as u64), ranges)?;
            Ok(grid_distance(&id, &compose_affine(&p, geometry)?, &grid))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&d))
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}
