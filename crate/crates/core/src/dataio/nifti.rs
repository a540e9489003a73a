//! NIfTI-1 volumes. Array axes map as NIfTI `(x, y, z)` = `(W, H, D)`.

use std::path::Path;

use ndarray::{Array3, Ix3};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiError, NiftiHeader, NiftiObject, ReaderOptions};

use crate::error::{Result, SvrError};
use crate::volume::Volume;

fn map_err(path: &Path, e: NiftiError) -> SvrError {
    match e {
        NiftiError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            SvrError::io(format!("reading {}", path.display()), io)
        }
        NiftiError::UnsupportedDataType(t) => SvrError::UnsupportedDatatype(format!("{t:?}")),
        NiftiError::InvalidCode(..) => SvrError::UnsupportedDatatype(e.to_string()),
        other => SvrError::MalformedHeader { path: path.to_path_buf(), reason: other.to_string() },
    }
}

/// Reads a 3D NIfTI volume. Voxel sizes must be isotropic unless
/// `spacing_override` is given.
pub fn read_volume(path: &Path, spacing_override: Option<f64>) -> Result<Volume> {
    let obj = ReaderOptions::new().read_file(path).map_err(|e| map_err(path, e))?;
    let header = obj.header().clone();
    let dims = header.dim().map_err(|e| map_err(path, e))?.to_vec();
    if dims.len() != 3 {
        return Err(SvrError::ShapeMismatch(format!("{}: expected a 3D volume, header has dims {dims:?}", path.display())));
    }
    let spacing = match spacing_override {
        Some(s) => s,
        None => {
            let p = &header.pixdim[1..4];
            let s = p[0] as f64;
            if p.iter().any(|&v| ((v as f64) - s).abs() > 1e-6 * s.abs().max(1.0)) {
                return Err(SvrError::invalid(format!("{}: anisotropic voxel size {p:?}", path.display())));
            }
            s
        }
    };
    let arr = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| map_err(path, e))?
        .into_dimensionality::<Ix3>()
        .map_err(|e| SvrError::ShapeMismatch(e.to_string()))?;
    // (x, y, z) → (z, y, x)
    let data: Array3<f32> = arr.reversed_axes().as_standard_layout().into_owned();
    Volume::new(data, spacing)
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let s = vol.geometry.spacing as f32;
    let mut header = NiftiHeader::default();
    header.pixdim = [1.0, s, s, s, 1.0, 1.0, 1.0, 1.0];
    header.xyzt_units = 2; // millimetres
    let view = vol.data.view().reversed_axes();
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&view)
        .map_err(|e| map_err(path, e))
}
