//! Scalar volumes tied to a physical grid.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::geometry::VolumeGeometry;

/// Where a volume came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject_id: String,
    pub time_index: usize,
}

/// A `(D, H, W)` array of intensities; depth is the slice axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    pub geometry: VolumeGeometry,
    pub provenance: Provenance,
}

impl Volume {
    pub fn new(data: Array3<f32>, spacing: f64) -> Result<Self> {
        let (d, h, w) = data.dim();
        let geometry = VolumeGeometry::new([d, h, w], spacing)?;
        Ok(Self { data, geometry, provenance: Provenance::default() })
    }

    pub fn zeros(geometry: VolumeGeometry) -> Self {
        let [d, h, w] = geometry.shape;
        Self { data: Array3::zeros((d, h, w)), geometry, provenance: Provenance::default() }
    }

    pub fn with_provenance(mut self, subject_id: impl Into<String>, time_index: usize) -> Self {
        self.provenance = Provenance { subject_id: subject_id.into(), time_index };
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    /// Values in C order (depth slowest, column fastest).
    pub fn as_slice(&self) -> &[f32] {
        self.data.as_slice().expect("volumes are stored in standard layout")
    }

    pub fn check_shape(&self, expected: [usize; 3]) -> Result<()> {
        if self.shape() != expected {
            return Err(SvrError::ShapeMismatch(format!("volume shape {:?}, expected {:?}", self.shape(), expected)));
        }
        Ok(())
    }

    /// Min and max over all voxels.
    pub fn range(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}
