//! Rigid transforms, physical grids and trilinear resampling.
//!
//! Conventions used throughout the crate:
//!
//! * Angles are degrees and translations millimetres at every public
//!   boundary; radians only appear inside trigonometric calls.
//! * `R = R_z(α_z) · R_y(α_y) · R_x(α_x)` (extrinsic x, then y, then z).
//! * A rigid transform acts as `T(x) = R·(x − c) + c + t`, with `c` the
//!   rotation centre of the volume geometry.
//! * Physical axes: `x` runs along columns (W), `y` along rows (H) and `z`
//!   along depth (D, the slice axis). Voxel `(k, j, i)` sits at
//!   `((i, j, k) − (W−1, H−1, D−1)/2) · spacing + c`.
//! * Resampling pulls back: the output at `x` is the input sampled at `T⁻¹(x)`.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvrError};
use crate::volume::Volume;

/// Six rigid parameters: rotations in degrees, translations in mm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub alpha_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl RigidParams {
    pub const ZERO: Self = Self { alpha_x: 0.0, alpha_y: 0.0, alpha_z: 0.0, t_x: 0.0, t_y: 0.0, t_z: 0.0 };

    pub fn new(angles_deg: [f64; 3], translation_mm: [f64; 3]) -> Self {
        Self {
            alpha_x: angles_deg[0],
            alpha_y: angles_deg[1],
            alpha_z: angles_deg[2],
            t_x: translation_mm[0],
            t_y: translation_mm[1],
            t_z: translation_mm[2],
        }
    }

    /// `(α_x, α_y, α_z, t_x, t_y, t_z)`.
    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.alpha_x, self.alpha_y, self.alpha_z, self.t_x, self.t_y, self.t_z]
    }

    pub fn angles_deg(&self) -> [f64; 3] {
        [self.alpha_x, self.alpha_y, self.alpha_z]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.t_x, self.t_y, self.t_z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SvrError::invalid(format!("non-finite rigid parameters {:?}", self.to_array())))
        }
    }
}

fn axis_rotations(angles_deg: [f64; 3]) -> [Matrix3<f64>; 3] {
    let [ax, ay, az] = angles_deg.map(f64::to_radians);
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    [
        Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx),
        Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy),
        Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0),
    ]
}

/// Rotation matrix `R_z·R_y·R_x` for angles in degrees.
pub fn euler_to_rotation(params: &RigidParams) -> Result<Matrix3<f64>> {
    params.validate()?;
    let [ax, ay, az] = params.angles_deg().map(f64::to_radians);
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    #[rustfmt::skip]
    let r = Matrix3::new(
        cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
        sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
        -sy,     cy * sx,                cy * cx,
    );
    Ok(r)
}

/// Partial derivatives `∂R/∂α_x, ∂R/∂α_y, ∂R/∂α_z` with respect to angles
/// in **degrees**.
pub fn rotation_derivatives(params: &RigidParams) -> [Matrix3<f64>; 3] {
    let [ax, ay, az] = params.angles_deg().map(f64::to_radians);
    let [rx, ry, rz] = axis_rotations(params.angles_deg());
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sx, -cx, 0.0, cx, -sx);
    let dry = Matrix3::new(-sy, 0.0, cy, 0.0, 0.0, 0.0, -cy, 0.0, -sy);
    let drz = Matrix3::new(-sz, -cz, 0.0, cz, -sz, 0.0, 0.0, 0.0, 0.0);
    let k = std::f64::consts::PI / 180.0;
    [rz * ry * drx * k, rz * dry * rx * k, drz * ry * rx * k]
}

/// 4×4 homogeneous transform acting on physical coordinates (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform(pub Matrix4<f64>);

impl AffineTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self(Matrix4::new_translation(&t))
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn offset(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        )
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        Self(self.0 * other.0)
    }

    /// Orthonormality and unit determinant of the linear block, bottom row exact.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.linear();
        let ortho = (r * r.transpose() - Matrix3::identity()).amax();
        let bottom = self.0.row(3) == Vector4::new(0.0, 0.0, 0.0, 1.0).transpose();
        bottom && ortho < tol && (r.determinant() - 1.0).abs() < tol
    }

    pub fn invert(&self) -> Result<AffineTransform> {
        invert(self)
    }
}

/// Rigid transform `x ↦ R·(x − c) + c + t` about the geometry's rotation centre.
pub fn compose_affine(params: &RigidParams, geom: &VolumeGeometry) -> Result<AffineTransform> {
    geom.validate()?;
    let r = euler_to_rotation(params)?;
    let c = geom.rotation_center;
    let offset = c - r * c + params.translation();
    Ok(AffineTransform::from_parts(&r, &offset))
}

/// Inverse of an affine transform; rigid transforms use `Rᵀ`.
pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    if t.is_rigid(1e-9) {
        let rt = t.linear().transpose();
        return Ok(AffineTransform::from_parts(&rt, &(-(rt * t.offset()))));
    }
    t.0.try_inverse()
        .map(AffineTransform)
        .ok_or_else(|| SvrError::Numeric("affine matrix is singular".into()))
}

/// Shape, isotropic spacing and rotation centre of a voxel grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    /// `(D, H, W)`.
    pub shape: [usize; 3],
    /// mm per voxel.
    pub spacing: f64,
    /// Physical point (mm, `x, y, z`) that rotations pivot about and that the grid is centred on.
    pub rotation_center: Vector3<f64>,
}

impl VolumeGeometry {
    /// Geometry centred on the origin; the rotation centre is then the grid centroid.
    pub fn new(shape: [usize; 3], spacing: f64) -> Result<Self> {
        let g = Self { shape, spacing, rotation_center: Vector3::zeros() };
        g.validate()?;
        Ok(g)
    }

    pub fn with_center(mut self, center: Vector3<f64>) -> Self {
        self.rotation_center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(SvrError::invalid(format!("empty volume shape {:?}", self.shape)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(SvrError::invalid(format!("spacing must be positive, got {}", self.spacing)));
        }
        if !self.rotation_center.iter().all(|v| v.is_finite()) {
            return Err(SvrError::invalid("non-finite rotation centre"));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.shape.iter().product()
    }

    /// Physical coordinate of voxel `(k, j, i)`.
    #[inline]
    pub fn voxel_to_physical(&self, k: f64, j: f64, i: f64) -> Vector3<f64> {
        let [d, h, w] = self.shape.map(|n| (n as f64 - 1.0) / 2.0);
        Vector3::new(
            (i - w) * self.spacing + self.rotation_center.x,
            (j - h) * self.spacing + self.rotation_center.y,
            (k - d) * self.spacing + self.rotation_center.z,
        )
    }

    /// Continuous voxel index `(k, j, i)` of a physical point.
    #[inline]
    pub fn physical_to_voxel(&self, p: &Vector3<f64>) -> [f64; 3] {
        let [d, h, w] = self.shape.map(|n| (n as f64 - 1.0) / 2.0);
        [
            (p.z - self.rotation_center.z) / self.spacing + d,
            (p.y - self.rotation_center.y) / self.spacing + h,
            (p.x - self.rotation_center.x) / self.spacing + w,
        ]
    }

    /// Physical extent `(D−1, H−1, W−1)·spacing` in mm.
    pub fn extent_mm(&self) -> [f64; 3] {
        self.shape.map(|n| (n as f64 - 1.0) * self.spacing)
    }
}

/// Physical coordinates of every voxel, in `(depth, row, column)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3D {
    pub shape: [usize; 3],
    pub points: Vec<Vector3<f64>>,
}

impl Grid3D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize, j: usize, i: usize) -> &Vector3<f64> {
        let [_, h, w] = self.shape;
        &self.points[(k * h + j) * w + i]
    }

    /// Arithmetic mean of the points.
    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }
}

pub fn make_grid(geom: &VolumeGeometry) -> Grid3D {
    let [d, h, w] = geom.shape;
    let mut points = Vec::with_capacity(d * h * w);
    for k in 0..d {
        for j in 0..h {
            for i in 0..w {
                points.push(geom.voxel_to_physical(k as f64, j as f64, i as f64));
            }
        }
    }
    Grid3D { shape: geom.shape, points }
}

pub fn transform_grid(t: &AffineTransform, grid: &Grid3D) -> Grid3D {
    Grid3D { shape: grid.shape, points: grid.points.iter().map(|p| t.apply(p)).collect() }
}

/// Mean Euclidean distance (mm) between `T_a(x)` and `T_b(x)` over the grid.
pub fn grid_distance(ta: &AffineTransform, tb: &AffineTransform, grid: &Grid3D) -> f64 {
    if grid.is_empty() {
        return 0.0;
    }
    // T_a(x) − T_b(x) = (A_a − A_b)·x + (b_a − b_b)
    let diff = AffineTransform(ta.0 - tb.0);
    let sum: f64 = grid.points.iter().map(|p| diff.apply(p).norm()).sum();
    sum / grid.len() as f64
}

/// Voxel indices closer than this to an integer are snapped to it, so that
/// identity and integer-voxel shifts reproduce grid values exactly.
const SNAP_TOL: f64 = 1e-9;

#[inline]
fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < SNAP_TOL {
        r
    } else {
        u
    }
}

/// Trilinear sample of a `(D, H, W)` C-order array at continuous index
/// `(k, j, i)`; samples outside the array read as zero.
#[inline]
pub fn trilinear(data: &[f32], shape: [usize; 3], idx: [f64; 3]) -> f64 {
    let [d, h, w] = shape;
    let [k, j, i] = idx.map(snap);
    let (k0, j0, i0) = (k.floor(), j.floor(), i.floor());
    let (fk, fj, fi) = (k - k0, j - j0, i - i0);
    let (k0, j0, i0) = (k0 as isize, j0 as isize, i0 as isize);
    let mut acc = 0.0;
    for (dk, wk) in [(0isize, 1.0 - fk), (1, fk)] {
        if wk == 0.0 {
            continue;
        }
        let kk = k0 + dk;
        if kk < 0 || kk >= d as isize {
            continue;
        }
        for (dj, wj) in [(0isize, 1.0 - fj), (1, fj)] {
            if wj == 0.0 {
                continue;
            }
            let jj = j0 + dj;
            if jj < 0 || jj >= h as isize {
                continue;
            }
            let row = (kk as usize * h + jj as usize) * w;
            for (di, wi) in [(0isize, 1.0 - fi), (1, fi)] {
                if wi == 0.0 {
                    continue;
                }
                let ii = i0 + di;
                if ii < 0 || ii >= w as isize {
                    continue;
                }
                acc += wk * wj * wi * data[row + ii as usize] as f64;
            }
        }
    }
    acc
}

/// Warps `vol` by `t` with pull-back trilinear interpolation; the output
/// shares the input geometry.
pub fn resample(vol: &Volume, t: &AffineTransform) -> Result<Volume> {
    let inv = invert(t)?;
    let geom = vol.geometry;
    let [d, h, w] = geom.shape;
    let src = vol.as_slice();
    let mut out = Vec::with_capacity(geom.num_voxels());
    for k in 0..d {
        for j in 0..h {
            for i in 0..w {
                let p = geom.voxel_to_physical(k as f64, j as f64, i as f64);
                let q = inv.apply(&p);
                out.push(trilinear(src, geom.shape, geom.physical_to_voxel(&q)) as f32);
            }
        }
    }
    let data = ndarray::Array3::from_shape_vec((d, h, w), out).expect("shape matches voxel count");
    Ok(Volume { data, geometry: geom, provenance: vol.provenance.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent per-axis construction multiplied with explicit loops.
    fn brute_rotation(a: [f64; 3]) -> [[f64; 3]; 3] {
        let [x, y, z] = a.map(|d| d * std::f64::consts::PI / 180.0);
        let rx = [[1.0, 0.0, 0.0], [0.0, x.cos(), -x.sin()], [0.0, x.sin(), x.cos()]];
        let ry = [[y.cos(), 0.0, y.sin()], [0.0, 1.0, 0.0], [-y.sin(), 0.0, y.cos()]];
        let rz = [[z.cos(), -z.sin(), 0.0], [z.sin(), z.cos(), 0.0], [0.0, 0.0, 1.0]];
        let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
            let mut c = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        c[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            c
        };
        mul(mul(rz, ry), rx)
    }

    #[test]
    fn zero_angles_give_identity() {
        let r = euler_to_rotation(&RigidParams::new([0.0; 3], [4.0, -2.0, 1.0])).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = euler_to_rotation(&RigidParams::new([0.0, 0.0, 90.0], [0.0; 3])).unwrap();
        let v = r * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn euler_matches_per_axis_product() {
        let a = [3.0, -4.0, 5.0];
        let r = euler_to_rotation(&RigidParams::new(a, [0.0; 3])).unwrap();
        let b = brute_rotation(a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[(i, j)] - b[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_angles_rejected() {
        let p = RigidParams::new([f64::NAN, 0.0, 0.0], [0.0; 3]);
        assert!(matches!(euler_to_rotation(&p), Err(SvrError::InvalidArgument(_))));
        let p = RigidParams::new([0.0; 3], [0.0, f64::INFINITY, 0.0]);
        assert!(compose_affine(&p, &VolumeGeometry::new([2, 2, 2], 1.0).unwrap()).is_err());
    }

    #[test]
    fn compose_translation_only_and_identity() {
        let g = VolumeGeometry::new([4, 5, 6], 2.4).unwrap();
        assert_eq!(compose_affine(&RigidParams::ZERO, &g).unwrap(), AffineTransform::identity());
        let t = compose_affine(&RigidParams::new([0.0; 3], [1.0, 2.0, 3.0]), &g).unwrap();
        assert_eq!(t.linear(), Matrix3::identity());
        assert_eq!(t.offset(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn compose_rotates_about_center() {
        let g = VolumeGeometry::new([3, 3, 3], 1.0).unwrap().with_center(Vector3::new(10.0, 0.0, 0.0));
        let p = RigidParams::new([0.0, 0.0, 90.0], [0.0; 3]);
        let t = compose_affine(&p, &g).unwrap();
        let x = Vector3::new(10.0, 5.0, 0.0);
        // explicit R·(x − c) + c with R the quarter turn
        let c = Vector3::new(10.0, 0.0, 0.0);
        let d = x - c;
        let oracle = Vector3::new(-d.y, d.x, d.z) + c;
        assert_abs_diff_eq!(t.apply(&x), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(t.apply(&x), Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn grid_layout_and_extents() {
        let g = make_grid(&VolumeGeometry::new([1, 1, 1], 2.4).unwrap());
        assert_eq!(g.points, vec![Vector3::zeros()]);
        let g = make_grid(&VolumeGeometry::new([3, 3, 3], 1.0).unwrap());
        assert_eq!(*g.point(0, 0, 0), Vector3::new(-1.0, -1.0, -1.0));
        assert_eq!(*g.point(2, 2, 2), Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(*g.point(2, 0, 1), Vector3::new(0.0, -1.0, 1.0));
        let geom = VolumeGeometry::new([70, 100, 100], 2.4).unwrap();
        let g = make_grid(&geom);
        let last = g.point(69, 99, 99);
        let first = g.point(0, 0, 0);
        let extent = last - first;
        assert_abs_diff_eq!(extent.z, 69.0 * 2.4, epsilon = 1e-9);
        assert_abs_diff_eq!(extent.z, 165.6, epsilon = 1e-9);
        assert_abs_diff_eq!(extent.x, 237.6, epsilon = 1e-9);
        assert_abs_diff_eq!(extent.y, 237.6, epsilon = 1e-9);
        assert_abs_diff_eq!(g.centroid(), Vector3::zeros(), epsilon = 1e-9);
        assert_abs_diff_eq!((first + last) / 2.0, geom.rotation_center, epsilon = 1e-12);
    }

    fn random_rigid(rng: &mut ChaCha8Rng, geom: &VolumeGeometry) -> AffineTransform {
        let p = RigidParams::new(
            [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)],
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        );
        compose_affine(&p, geom).unwrap()
    }

    #[test]
    fn transform_grid_matches_per_point_matrix_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let geom = VolumeGeometry::new([5, 5, 5], 1.7).unwrap();
        let grid = make_grid(&geom);
        let t = random_rigid(&mut rng, &geom);
        let moved = transform_grid(&t, &grid);
        for (p, q) in grid.points.iter().zip(&moved.points) {
            let h = t.0 * Vector4::new(p.x, p.y, p.z, 1.0);
            assert!((h.xyz() - q).amax() < 1e-12);
        }
        assert_eq!(transform_grid(&AffineTransform::identity(), &grid), grid);
        let tr = AffineTransform::translation(Vector3::new(1.0, -2.0, 0.5));
        for (p, q) in grid.points.iter().zip(&transform_grid(&tr, &grid).points) {
            assert_eq!(*q, p + Vector3::new(1.0, -2.0, 0.5));
        }
    }

    #[test]
    fn invert_round_trips() {
        assert_eq!(invert(&AffineTransform::identity()).unwrap(), AffineTransform::identity());
        let t = AffineTransform::translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(invert(&t).unwrap(), AffineTransform::translation(Vector3::new(-1.0, -2.0, -3.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = VolumeGeometry::new([10, 10, 10], 2.4).unwrap().with_center(Vector3::new(1.0, -3.0, 2.0));
        let t = random_rigid(&mut rng, &geom);
        let ti = invert(&t).unwrap();
        assert!((t.0 * ti.0 - Matrix4::identity()).amax() < 1e-10);
        for _ in 0..100 {
            let p = Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
            assert!((ti.apply(&t.apply(&p)) - p).norm() < 1e-9);
        }
        let singular = AffineTransform(Matrix4::zeros());
        assert!(matches!(invert(&singular), Err(SvrError::Numeric(_))));
    }

    #[test]
    fn grid_distance_closed_forms() {
        let geom = VolumeGeometry::new([4, 6, 5], 2.4).unwrap();
        let grid = make_grid(&geom);
        let id = AffineTransform::identity();
        assert_eq!(grid_distance(&id, &id, &grid), 0.0);
        let t = AffineTransform::translation(Vector3::new(3.0, 4.0, 0.0));
        assert_abs_diff_eq!(grid_distance(&id, &t, &grid), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_distance_rotation_about_z_matches_chord_oracle() {
        let geom = VolumeGeometry::new([70, 100, 100], 2.4).unwrap();
        let grid = make_grid(&geom);
        let t = compose_affine(&RigidParams::new([0.0, 0.0, 5.0], [0.0; 3]), &geom).unwrap();
        // A point at in-plane radius r moves along a chord of length 2·r·sin(θ/2).
        let chord = 2.0 * (2.5f64).to_radians().sin();
        let mut acc = 0.0;
        for k in 0..70 {
            for j in 0..100 {
                for i in 0..100 {
                    let x = (i as f64 - 49.5) * 2.4;
                    let y = (j as f64 - 49.5) * 2.4;
                    let _ = k;
                    acc += (x * x + y * y).sqrt() * chord;
                }
            }
        }
        let oracle = acc / 700_000.0;
        let got = grid_distance(&AffineTransform::identity(), &t, &grid);
        assert!((got - oracle).abs() < 1e-9 * oracle, "{got} vs {oracle}");
    }

    /// Loop-based trilinear interpolation written independently of [`trilinear`].
    fn naive_resample(vol: &Volume, t: &AffineTransform) -> Vec<f64> {
        let [d, h, w] = vol.shape();
        let inv = t.0.try_inverse().unwrap();
        let s = vol.geometry.spacing;
        let mut out = Vec::new();
        let at = |k: i64, j: i64, i: i64| -> f64 {
            if k < 0 || j < 0 || i < 0 || k >= d as i64 || j >= h as i64 || i >= w as i64 {
                0.0
            } else {
                vol.data[[k as usize, j as usize, i as usize]] as f64
            }
        };
        for k in 0..d {
            for j in 0..h {
                for i in 0..w {
                    let p = Vector4::new(
                        (i as f64 - (w as f64 - 1.0) / 2.0) * s,
                        (j as f64 - (h as f64 - 1.0) / 2.0) * s,
                        (k as f64 - (d as f64 - 1.0) / 2.0) * s,
                        1.0,
                    );
                    let q = inv * p;
                    let fi = q.x / s + (w as f64 - 1.0) / 2.0;
                    let fj = q.y / s + (h as f64 - 1.0) / 2.0;
                    let fk = q.z / s + (d as f64 - 1.0) / 2.0;
                    let (i0, j0, k0) = (fi.floor() as i64, fj.floor() as i64, fk.floor() as i64);
                    let (ai, aj, ak) = (fi - i0 as f64, fj - j0 as f64, fk - k0 as f64);
                    let mut v = 0.0;
                    for (dk, wk) in [(0, 1.0 - ak), (1, ak)] {
                        for (dj, wj) in [(0, 1.0 - aj), (1, aj)] {
                            for (di, wi) in [(0, 1.0 - ai), (1, ai)] {
                                v += wk * wj * wi * at(k0 + dk, j0 + dj, i0 + di);
                            }
                        }
                    }
                    out.push(v);
                }
            }
        }
        out
    }

    fn random_volume(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Volume {
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        Volume::new(ndarray::Array3::from_shape_vec((shape[0], shape[1], shape[2]), data).unwrap(), 2.4).unwrap()
    }

    #[test]
    fn resample_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_volume(&mut rng, [6, 7, 8]);
        let r = resample(&v, &AffineTransform::identity()).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn resample_one_voxel_depth_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_volume(&mut rng, [6, 5, 5]);
        let t = compose_affine(&RigidParams::new([0.0; 3], [0.0, 0.0, 2.4]), &v.geometry).unwrap();
        let r = resample(&v, &t).unwrap();
        for k in 1..6 {
            for j in 0..5 {
                for i in 0..5 {
                    assert_eq!(r.data[[k, j, i]], v.data[[k - 1, j, i]]);
                }
            }
        }
        assert!(r.data.index_axis(ndarray::Axis(0), 0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn resample_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let v = random_volume(&mut rng, [8, 8, 8]);
            let t = random_rigid(&mut rng, &v.geometry);
            let r = resample(&v, &t).unwrap();
            for (a, b) in r.data.iter().zip(naive_resample(&v, &t)) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_derivatives_match_central_differences() {
        let p = RigidParams::new([2.0, -3.0, 4.5], [0.0; 3]);
        let d = rotation_derivatives(&p);
        for a in 0..3 {
            let mut v = p.to_array();
            v[a] += 1e-6;
            let rp = euler_to_rotation(&RigidParams::from_array(v)).unwrap();
            v[a] -= 2e-6;
            let rm = euler_to_rotation(&RigidParams::from_array(v)).unwrap();
            assert!(((rp - rm) / 2e-6 - d[a]).amax() < 1e-9);
        }
    }

    fn table_params() -> impl Strategy<Value = RigidParams> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -12.0..12.0f64, -12.0..12.0f64, -8.4..8.4f64)
            .prop_map(|(a, b, c, x, y, z)| RigidParams::from_array([a, b, c, x, y, z]))
    }

    proptest! {
        #[test]
        fn composed_transforms_are_rigid(p in table_params()) {
            let geom = VolumeGeometry::new([7, 9, 9], 2.4).unwrap().with_center(Vector3::new(1.5, -2.0, 0.7));
            let t = compose_affine(&p, &geom).unwrap();
            let r = t.linear();
            prop_assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!(t.is_rigid(1e-9));
            let c = geom.rotation_center;
            prop_assert!((t.apply(&c) - c - p.translation()).norm() < 1e-10);
        }

        #[test]
        fn grid_distance_is_a_pseudometric(a in table_params(), b in table_params(), c in table_params()) {
            let geom = VolumeGeometry::new([5, 6, 7], 2.4).unwrap();
            let grid = make_grid(&geom);
            let [ta, tb, tc] = [a, b, c].map(|p| compose_affine(&p, &geom).unwrap());
            let ab = grid_distance(&ta, &tb, &grid);
            prop_assert!((ab - grid_distance(&tb, &ta, &grid)).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert!(grid_distance(&ta, &ta, &grid) == 0.0);
            prop_assert!(ab <= grid_distance(&ta, &tc, &grid) + grid_distance(&tc, &tb, &grid) + 1e-9);
            let mut shuffled = grid.clone();
            shuffled.points.reverse();
            shuffled.points.rotate_left(17);
            prop_assert!((grid_distance(&ta, &tb, &shuffled) - ab).abs() < 1e-9);
        }

        #[test]
        fn composition_matches_sequential_application(a in table_params(), b in table_params()) {
            let geom = VolumeGeometry::new([4, 4, 5], 2.4).unwrap();
            let grid = make_grid(&geom);
            let ta = compose_affine(&a, &geom).unwrap();
            let tb = compose_affine(&b, &geom).unwrap();
            let once = transform_grid(&ta.compose(&tb), &grid);
            let twice = transform_grid(&ta, &transform_grid(&tb, &grid));
            for (p, q) in once.points.iter().zip(&twice.points) {
                prop_assert!((p - q).amax() < 1e-10);
            }
        }
    }
}
