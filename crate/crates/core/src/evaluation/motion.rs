//! Voxel time-series study: simulate rigid motion on a motion-free series,
//! register every frame and compare voxel intensities before and after
//! correction.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Matrix4;
use ndarray::Array3;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Predictor;
use crate::acquisition::{derive_seed, extract_stack, ParamRanges, SamplePair, SliceProtocol, Synthesizer};
use crate::dataio::PhantomSubject;
use crate::error::{Result, SvrError};
use crate::geometry::{compose_affine, grid_distance, invert, resample, AffineTransform, RigidParams};
use crate::volume::Volume;

/// Half-open voxel box `lo..hi` in `(k, j, i)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub name: String,
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Roi {
    pub fn validate(&self, shape: [usize; 3]) -> Result<()> {
        if (0..3).any(|a| self.lo[a] >= self.hi[a] || self.hi[a] > shape[a]) {
            return Err(SvrError::invalid(format!("ROI {} {:?}..{:?} is empty or outside {shape:?}", self.name, self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (self.lo[0]..self.hi[0])
            .flat_map(move |k| (self.lo[1]..self.hi[1]).flat_map(move |j| (self.lo[2]..self.hi[2]).map(move |i| [k, j, i])))
    }
}

/// Two boxes straddling the edges of the drifting phantom structures.
/// Ranges are given in normalized `(x, y, z)` coordinates and scaled to `shape`.
pub fn default_rois(shape: [usize; 3]) -> Vec<Roi> {
    let boxes = [
        ("roi-a", [-0.25, -0.75, -0.5], [0.5, -0.15, 0.1]),
        ("roi-b", [0.1, 0.05, 0.0], [0.6, 0.65, 0.5]),
    ];
    let to_index = |v: f64, n: usize| (v * n as f64 / 2.0 + (n as f64 - 1.0) / 2.0).round().clamp(0.0, n as f64 - 1.0) as usize;
    boxes
        .iter()
        .map(|(name, lo, hi)| {
            // (x, y, z) → (k, j, i)
            let lo_v = [to_index(lo[2], shape[0]), to_index(lo[1], shape[1]), to_index(lo[0], shape[2])];
            let hi_v = [to_index(hi[2], shape[0]) + 1, to_index(hi[1], shape[1]) + 1, to_index(hi[0], shape[2]) + 1];
            Roi { name: name.to_string(), lo: lo_v, hi: hi_v }
        })
        .collect()
}

/// Voxels whose `(2·margin + 1)³` neighbourhood lies inside the array and
/// inside one non-background compartment.
pub fn interior_mask(labels: &Array3<u8>, margin: usize) -> Array3<bool> {
    let (d, h, w) = labels.dim();
    Array3::from_shape_fn((d, h, w), |(k, j, i)| {
        let l = labels[[k, j, i]];
        if l == 0 || k < margin || j < margin || i < margin || k + margin >= d || j + margin >= h || i + margin >= w {
            return false;
        }
        (k - margin..=k + margin).all(|a| {
            (j - margin..=j + margin).all(|b| (i - margin..=i + margin).all(|c| labels[[a, b, c]] == l))
        })
    })
}

/// Indices of the `count` transforms closest to the identity in Frobenius
/// norm, closest first (ties by index).
pub fn select_reference_frames(transforms: &[AffineTransform], count: usize) -> Result<Vec<usize>> {
    if count > transforms.len() {
        return Err(SvrError::invalid(format!("cannot select {count} frames from a series of {}", transforms.len())));
    }
    let dist: Vec<f64> = transforms.iter().map(|t| (t.0 - Matrix4::identity()).norm()).collect();
    let mut idx: Vec<usize> = (0..transforms.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx.truncate(count);
    Ok(idx)
}

/// Candidate frames of a drifting phantom, each displaced by a small
/// "natural" head motion.
pub struct CandidateSeries {
    pub frames: Vec<Volume>,
    pub transforms: Vec<AffineTransform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesConfig {
    pub subject_seed: u64,
    pub candidates: usize,
    /// Natural motion ranges, as a fraction of the synthetic-motion ranges.
    pub natural_motion: f64,
    pub drift_amplitude: f64,
    pub drift_period: f64,
    pub seed: u64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { subject_seed: 0, candidates: 40, natural_motion: 0.05, drift_amplitude: 0.05, drift_period: 12.0, seed: 0 }
    }
}

pub fn phantom_series(cfg: &SeriesConfig, shape: [usize; 3], spacing: f64, ranges: &ParamRanges) -> Result<CandidateSeries> {
    let subject = PhantomSubject::new(cfg.subject_seed);
    let scaled = ranges.to_array().map(|r| r * cfg.natural_motion);
    let natural = ParamRanges {
        alpha_x: scaled[0],
        alpha_y: scaled[1],
        alpha_z: scaled[2],
        t_x: scaled[3],
        t_y: scaled[4],
        t_z: scaled[5],
    };
    let mut frames = Vec::with_capacity(cfg.candidates);
    let mut transforms = Vec::with_capacity(cfg.candidates);
    for t in 0..cfg.candidates {
        let rest = subject.frame(shape, spacing, t, cfg.drift_amplitude, cfg.drift_period)?;
        let p = crate::acquisition::sample_rigid_params(derive_seed(cfg.seed, t as u64), &natural)?;
        let tr = compose_affine(&p, &rest.geometry)?;
        frames.push(resample(&rest, &tr)?.with_provenance(format!("phantom-{}", cfg.subject_seed), t));
        transforms.push(tr);
    }
    Ok(CandidateSeries { frames, transforms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSeries {
    pub roi: String,
    pub voxel: [usize; 3],
    pub interior: bool,
    pub motion_free: Vec<f64>,
    /// Motion-corrupted ("BR").
    pub before: Vec<f64>,
    /// Registered ("AR").
    pub after: Vec<f64>,
}

fn variance(v: &[f64]) -> f64 {
    crate::acquisition::mean_std(v).1.powi(2)
}

impl VoxelSeries {
    pub fn var_before(&self) -> f64 {
        variance(&self.before)
    }

    pub fn var_after(&self) -> f64 {
        variance(&self.after)
    }

    pub fn max_after_error(&self) -> f64 {
        self.after.iter().zip(&self.motion_free).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesStudy {
    pub rois: Vec<Roi>,
    /// Time index of every frame, in study order.
    pub time_indices: Vec<usize>,
    pub truth: Vec<RigidParams>,
    pub predicted: Vec<RigidParams>,
    pub voxels: Vec<VoxelSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub roi: String,
    pub voxels: usize,
    pub interior_voxels: usize,
    pub variance_reduced: usize,
    pub mean_var_before: f64,
    pub mean_var_after: f64,
    pub max_interior_error: f64,
}

impl TimeSeriesStudy {
    /// Fraction of ROI voxels whose AR temporal variance is below BR.
    pub fn variance_reduced_fraction(&self) -> f64 {
        let n = self.voxels.iter().filter(|v| v.var_after() < v.var_before()).count();
        n as f64 / self.voxels.len().max(1) as f64
    }

    /// Largest |AR − motion-free| over interior voxels and frames.
    pub fn max_interior_error(&self) -> Option<f64> {
        self.voxels.iter().filter(|v| v.interior).map(|v| v.max_after_error()).reduce(f64::max)
    }

    pub fn summaries(&self) -> Vec<RoiSummary> {
        self.rois
            .iter()
            .map(|roi| {
                let vs: Vec<&VoxelSeries> = self.voxels.iter().filter(|v| v.roi == roi.name).collect();
                let n = vs.len().max(1) as f64;
                RoiSummary {
                    roi: roi.name.clone(),
                    voxels: vs.len(),
                    interior_voxels: vs.iter().filter(|v| v.interior).count(),
                    variance_reduced: vs.iter().filter(|v| v.var_after() < v.var_before()).count(),
                    mean_var_before: vs.iter().map(|v| v.var_before()).sum::<f64>() / n,
                    mean_var_after: vs.iter().map(|v| v.var_after()).sum::<f64>() / n,
                    max_interior_error: vs.iter().filter(|v| v.interior).map(|v| v.max_after_error()).fold(0.0, f64::max),
                }
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("roi,lo_k,lo_j,lo_i,hi_k,hi_j,hi_i,voxels,interior_voxels,variance_reduced,mean_var_BR,mean_var_AR,max_interior_error\n");
        for (roi, r) in self.rois.iter().zip(self.summaries()) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.roi, roi.lo[0], roi.lo[1], roi.lo[2], roi.hi[0], roi.hi[1], roi.hi[2], r.voxels, r.interior_voxels,
                r.variance_reduced, r.mean_var_before, r.mean_var_after, r.max_interior_error
            );
        }
        s
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from("roi,k,j,i,interior,frame,time_index,motion_free,BR,AR\n");
        for v in &self.voxels {
            for (f, &t) in self.time_indices.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    v.roi, v.voxel[0], v.voxel[1], v.voxel[2], v.interior as u8, f, t, v.motion_free[f], v.before[f], v.after[f]
                );
            }
        }
        s
    }

    pub fn params_csv(&self) -> String {
        let mut s = String::from("frame,time_index,alpha_x,alpha_y,alpha_z,t_x,t_y,t_z,pred_alpha_x,pred_alpha_y,pred_alpha_z,pred_t_x,pred_t_y,pred_t_z\n");
        for (f, (t, p)) in self.truth.iter().zip(&self.predicted).enumerate() {
            let (a, b) = (t.to_array(), p.to_array());
            let _ = write!(s, "{f},{}", self.time_indices[f]);
            for v in a.iter().chain(&b) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// One SVG per ROI with the `per_roi` voxels of largest BR variance,
    /// each a panel with motion-free, BR and AR lines.
    pub fn write_plots(&self, dir: &Path, per_roi: usize) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| SvrError::io(format!("creating {}", dir.display()), e))?;
        let mut out = Vec::new();
        for roi in &self.rois {
            let mut vs: Vec<&VoxelSeries> = self.voxels.iter().filter(|v| v.roi == roi.name).collect();
            vs.sort_by(|a, b| b.var_before().total_cmp(&a.var_before()).then(a.voxel.cmp(&b.voxel)));
            vs.truncate(per_roi.max(1));
            let path = dir.join(format!("{}.svg", roi.name));
            plot_voxels(&path, &roi.name, &vs).map_err(|e| SvrError::io(format!("plotting {}", path.display()), std::io::Error::other(e.to_string())))?;
            out.push(path);
        }
        Ok(out)
    }
}

fn plot_voxels(path: &Path, title: &str, voxels: &[&VoxelSeries]) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let rows = voxels.len().max(1);
    let root = SVGBackend::new(path, (720, 220 * rows as u32)).into_drawing_area();
    root.fill(&WHITE)?;
    let panels = root.split_evenly((rows, 1));
    for (panel, v) in panels.iter().zip(voxels) {
        let n = v.motion_free.len();
        let all = v.motion_free.iter().chain(&v.before).chain(&v.after);
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = ((hi - lo) * 0.1).max(1e-3);
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("{title} voxel (k={}, j={}, i={})", v.voxel[0], v.voxel[1], v.voxel[2]), ("sans-serif", 14))
            .margin(8)
            .x_label_area_size(24)
            .y_label_area_size(44)
            .build_cartesian_2d(0f64..(n.max(2) - 1) as f64, (lo - pad)..(hi + pad))?;
        chart.configure_mesh().x_desc("frame").y_desc("intensity").draw()?;
        let series: [(&str, &Vec<f64>, RGBColor); 3] =
            [("motion-free", &v.motion_free, BLACK), ("BR", &v.before, RED), ("AR", &v.after, BLUE)];
        for (label, data, color) in series {
            chart
                .draw_series(LineSeries::new(data.iter().enumerate().map(|(t, &y)| (t as f64, y)), color.stroke_width(2)))?
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct MotionSettings {
    pub ranges: ParamRanges,
    pub protocol: SliceProtocol,
    pub seed: u64,
    /// Prediction batch size.
    pub batch_size: usize,
}

/// Runs the study on `frames` (motion-free, in temporal order) with
/// `frames[reference]` as the registration target.
pub fn motion_study<P: Predictor + ?Sized>(
    frames: &[Arc<Volume>],
    time_indices: &[usize],
    reference: usize,
    interior: &Array3<bool>,
    predictor: &P,
    rois: &[Roi],
    settings: &MotionSettings,
) -> Result<TimeSeriesStudy> {
    if frames.is_empty() || reference >= frames.len() || time_indices.len() != frames.len() {
        return Err(SvrError::invalid("motion study needs a non-empty series, matching time indices and a valid reference"));
    }
    let geom = frames[reference].geometry;
    if frames.iter().any(|f| f.geometry != geom) || interior.dim() != (geom.shape[0], geom.shape[1], geom.shape[2]) {
        return Err(SvrError::ShapeMismatch("series frames and interior mask must share one geometry".into()));
    }
    for r in rois {
        r.validate(geom.shape)?;
    }
    let synth = Synthesizer::new(geom, settings.ranges, settings.protocol)?;
    let mut corrupted = Vec::with_capacity(frames.len());
    let mut pairs = Vec::with_capacity(frames.len());
    for (f, frame) in frames.iter().enumerate() {
        let seed = derive_seed(settings.seed, f as u64);
        let (params, shot) = synth.draw(seed);
        let t = compose_affine(&params, &geom)?;
        let moved = resample(frame, &t)?;
        let stack = extract_stack(&moved, &settings.protocol.shot(shot)?)?;
        pairs.push(SamplePair {
            pair_id: format!("frame-{f:04}"),
            seed,
            stack,
            reference: Arc::clone(&frames[reference]),
            params,
            shot,
            d_init: grid_distance(&AffineTransform::identity(), &t, synth.grid()),
        });
        corrupted.push(moved);
    }
    let mut predicted = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(settings.batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        predicted.extend(predictor.predict(&refs)?);
    }
    let registered = corrupted
        .iter()
        .zip(&predicted)
        .map(|(v, p)| resample(v, &invert(&compose_affine(p, &geom)?)?))
        .collect::<Result<Vec<_>>>()?;
    let voxels = rois
        .iter()
        .flat_map(|roi| roi.voxels().map(move |v| (roi, v)))
        .map(|(roi, [k, j, i])| {
            let at = |vols: &mut dyn Iterator<Item = &Volume>| vols.map(|x| x.data[[k, j, i]] as f64).collect::<Vec<_>>();
            VoxelSeries {
                roi: roi.name.clone(),
                voxel: [k, j, i],
                interior: interior[[k, j, i]],
                motion_free: at(&mut frames.iter().map(|f| f.as_ref())),
                before: at(&mut corrupted.iter()),
                after: at(&mut registered.iter()),
            }
        })
        .collect();
    Ok(TimeSeriesStudy {
        rois: rois.to_vec(),
        time_indices: time_indices.to_vec(),
        truth: pairs.iter().map(|p| p.params).collect(),
        predicted,
        voxels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VolumeGeometry;

    #[test]
    fn reference_frames_by_distance_to_identity() {
        let id = AffineTransform::identity();
        assert_eq!(select_reference_frames(&[id; 5], 3).unwrap(), vec![0, 1, 2]);
        let geom = VolumeGeometry::new([8, 8, 8], 2.4).unwrap();
        let bad = compose_affine(&RigidParams::new([40.0, 0.0, 0.0], [0.0; 3]), &geom).unwrap();
        let mild = compose_affine(&RigidParams::new([0.0; 3], [0.5, 0.0, 0.0]), &geom).unwrap();
        let series = [mild, id, bad, id, mild];
        assert_eq!(select_reference_frames(&series, 4).unwrap(), vec![1, 3, 0, 4]);
        assert!(select_reference_frames(&series, 6).is_err());
    }

    #[test]
    fn default_rois_fit_desk_and_paper_shapes() {
        for shape in [[24, 32, 32], [70, 100, 100]] {
            for r in default_rois(shape) {
                r.validate(shape).unwrap();
            }
        }
    }

    #[test]
    fn interior_excludes_boundaries() {
        let mut labels = Array3::from_elem((7, 7, 7), 2u8);
        labels[[3, 3, 5]] = 3;
        let m = interior_mask(&labels, 1);
        assert!(m[[3, 3, 2]]);
        assert!(!m[[3, 3, 4]]);
        assert!(!m[[0, 3, 3]]);
        assert!(!interior_mask(&Array3::zeros((5, 5, 5)), 1)[[2, 2, 2]]);
    }
}
