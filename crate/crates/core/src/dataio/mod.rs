//! Volume files, preprocessing, subject splits, phantoms and on-disk datasets.

pub mod dataset;
pub mod nifti;
pub mod phantom;
pub mod raw;
pub mod split;

use std::path::Path;

use ndarray::{s, Array3};

use crate::error::{Result, SvrError};
use crate::volume::Volume;

pub use phantom::{make_phantom, PhantomSubject};
pub use split::{split_subjects, SplitManifest, SplitRatios};

pub const DEFAULT_SPACING: f64 = 2.4;

fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

/// Reads a NIfTI-1 (`.nii`, `.nii.gz`) or raw (`.svr`) volume.
pub fn load_volume(path: &Path) -> Result<Volume> {
    load_volume_with(path, None)
}

/// Like [`load_volume`]; `spacing_override` accepts anisotropic NIfTI
/// headers by forcing the given isotropic spacing.
pub fn load_volume_with(path: &Path, spacing_override: Option<f64>) -> Result<Volume> {
    if !path.exists() {
        return Err(SvrError::io(
            format!("reading {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let mut vol = if is_nifti(path) { nifti::read_volume(path, spacing_override)? } else { raw::read_volume(path)? };
    if let Some(s) = spacing_override {
        vol.geometry.spacing = s;
    }
    vol.geometry.validate()?;
    Ok(vol)
}

pub fn save_volume(path: &Path, vol: &Volume) -> Result<()> {
    if is_nifti(path) {
        nifti::write_volume(path, vol)
    } else {
        raw::write_volume(path, vol)
    }
}

/// Global min-max scaling to `[0, 1]`; constant volumes become zero.
pub fn normalize(vol: &Volume) -> Volume {
    let (lo, hi) = vol.range();
    let data = if hi > lo { vol.data.mapv(|v| (v - lo) / (hi - lo)) } else { Array3::zeros(vol.data.raw_dim()) };
    Volume { data, geometry: vol.geometry, provenance: vol.provenance.clone() }
}

/// Leading pad per axis when centring `shape` in `target` (odd remainders
/// put the extra voxel at the trailing side).
pub fn leading_pad(shape: [usize; 3], target: [usize; 3]) -> Result<[usize; 3]> {
    if shape.iter().zip(&target).any(|(s, t)| s > t) {
        return Err(SvrError::invalid(format!("volume {shape:?} is larger than the target {target:?}")));
    }
    Ok([0, 1, 2].map(|a| (target[a] - shape[a]) / 2))
}

/// Zero-pads to `target` and min-max normalizes.
pub fn preprocess(vol: &Volume, target: [usize; 3]) -> Result<Volume> {
    let pad = leading_pad(vol.shape(), target)?;
    let [d, h, w] = vol.shape();
    let mut data = Array3::<f32>::zeros((target[0], target[1], target[2]));
    data.slice_mut(s![pad[0]..pad[0] + d, pad[1]..pad[1] + h, pad[2]..pad[2] + w]).assign(&vol.data);
    let mut padded = Volume::new(data, vol.geometry.spacing)?;
    padded.provenance = vol.provenance.clone();
    Ok(normalize(&padded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pads_paper_matrix_to_canonical_size() {
        let data = Array3::from_elem((60, 84, 84), 3.0f32);
        let mut v = Volume::new(data, 2.4).unwrap();
        v.data[[0, 0, 0]] = 1.0;
        let p = preprocess(&v, [70, 100, 100]).unwrap();
        assert_eq!(p.shape(), [70, 100, 100]);
        assert_eq!(leading_pad([60, 84, 84], [70, 100, 100]).unwrap(), [5, 8, 8]);
        assert_eq!(p.data[[5, 8, 8]], 1.0 / 3.0);
        assert_eq!(p.data[[5, 8, 9]], 1.0);
        assert_eq!(p.data[[4, 8, 9]], 0.0);
        assert_eq!(p.data[[64, 91, 91]], 1.0);
        assert_eq!(p.data[[65, 91, 91]], 0.0);
        assert_eq!(leading_pad([5, 5, 5], [8, 8, 8]).unwrap(), [1, 1, 1]);
    }

    #[test]
    fn larger_input_rejected() {
        let v = Volume::new(Array3::zeros((10, 10, 10)), 2.4).unwrap();
        assert!(preprocess(&v, [8, 10, 10]).is_err());
    }

    #[test]
    fn constant_volume_becomes_zero() {
        let v = Volume::new(Array3::from_elem((4, 4, 4), 7.0), 2.4).unwrap();
        let p = preprocess(&v, [4, 4, 4]).unwrap();
        assert!(p.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn min_max_matches_scalar_oracle() {
        let data = Array3::from_shape_fn((3, 4, 5), |(k, j, i)| 2.0 + ((k * 20 + j * 5 + i) % 9) as f32);
        let v = Volume::new(data.clone(), 2.4).unwrap();
        let (lo, hi) = v.range();
        assert_eq!((lo, hi), (2.0, 10.0));
        let p = normalize(&v);
        for (a, b) in p.data.iter().zip(data.iter()) {
            assert!((a - (b - 2.0) / 8.0).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn normalization_is_monotone_and_idempotent(vals in proptest::collection::vec(-50.0f32..50.0, 27)) {
            let v = Volume::new(Array3::from_shape_vec((3, 3, 3), vals.clone()).unwrap(), 2.4).unwrap();
            let p = preprocess(&v, [3, 3, 3]).unwrap();
            prop_assert!(p.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for a in 0..27 {
                for b in 0..27 {
                    if vals[a] < vals[b] {
                        prop_assert!(p.as_slice()[a] <= p.as_slice()[b]);
                    }
                }
            }
            let (lo, hi) = p.range();
            if hi > lo {
                prop_assert_eq!(preprocess(&p, [3, 3, 3]).unwrap(), p);
            }
        }
    }
}
