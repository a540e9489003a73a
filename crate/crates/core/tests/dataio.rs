use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sasvr::dataio::{self, make_phantom, nifti, raw};
use sasvr::volume::Volume;
use sasvr::SvrError;

fn random_volume(seed: u64, shape: [usize; 3], spacing: f64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |_| rng.random_range(-3.0f32..3.0));
    Volume::new(data, spacing).unwrap()
}

#[test]
fn nifti_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume(1, [5, 6, 7], 2.4);
    for name in ["v.nii", "v.nii.gz"] {
        let p = dir.path().join(name);
        dataio::save_volume(&p, &v).unwrap();
        let back = dataio::load_volume(&p).unwrap();
        assert_eq!(back.shape(), [5, 6, 7]);
        assert_eq!(back.data, v.data);
        assert!((back.geometry.spacing - 2.4).abs() < 1e-6);
    }
}

#[test]
fn nifti_axes_follow_world_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("axes.nii");
    let data = Array3::from_shape_fn((2, 3, 4), |(k, j, i)| (100 * k + 10 * j + i) as f32);
    nifti::write_volume(&p, &Volume::new(data, 2.4).unwrap()).unwrap();
    let header = ::nifti::NiftiHeader::from_file(&p).unwrap();
    assert_eq!(&header.dim[..4], &[3, 4, 3, 2]);
}

#[test]
fn raw_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume(2, [4, 3, 9], 2.4);
    let p = dir.path().join("v.svr");
    dataio::save_volume(&p, &v).unwrap();
    let back = dataio::load_volume(&p).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.geometry.spacing, 2.4);
}

#[test]
fn truncated_files_are_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume(3, [4, 4, 4], 2.4);
    for name in ["t.svr", "t.nii"] {
        let p = dir.path().join(name);
        dataio::save_volume(&p, &v).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        let err = dataio::load_volume(&p).unwrap_err();
        assert!(matches!(err, SvrError::MalformedHeader { .. }), "{name}: {err}");
    }
}

#[test]
fn missing_file_is_io_error() {
    let err = dataio::load_volume(Path::new("/nonexistent/v.nii")).unwrap_err();
    assert!(matches!(err, SvrError::Io { .. }));
}

#[test]
fn anisotropic_nifti_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.nii");
    let v = random_volume(4, [3, 3, 3], 2.0);
    let mut header = ::nifti::NiftiHeader::default();
    header.pixdim = [1.0, 2.0, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0];
    ::nifti::writer::WriterOptions::new(&p).reference_header(&header).write_nifti(&v.data.view().reversed_axes()).unwrap();
    assert!(matches!(dataio::load_volume(&p), Err(SvrError::InvalidArgument(_))));
    let forced = dataio::load_volume_with(&p, Some(2.4)).unwrap();
    assert_eq!(forced.geometry.spacing, 2.4);
    assert_eq!(forced.data, v.data);
}

#[test]
fn raw_header_spacing_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.svr");
    raw::write_array(&p, [1, 1, 2], 2.4, &[0.0, 1.0]).unwrap();
    assert_eq!(dataio::load_volume(&p).unwrap().geometry.spacing, 2.4);
}

fn correlation(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[test]
fn phantom_is_not_symmetric_under_quarter_turns_or_flips() {
    for seed in 0..20 {
        let v = make_phantom([24, 32, 32], seed).unwrap();
        let self_corr = correlation(&v.data, &v.data);
        // 90° about the depth axis: (k, j, i) → (k, i, W−1−j), square in-plane
        let rotated = Array3::from_shape_fn((24, 32, 32), |(k, j, i)| v.data[[k, i, 31 - j]]);
        assert!(correlation(&v.data, &rotated) < 0.95 * self_corr, "seed {seed}");
        for axis in 0..3 {
            let mut flipped = v.data.clone();
            flipped.invert_axis(ndarray::Axis(axis));
            assert!(correlation(&v.data, &flipped) < 0.95 * self_corr, "seed {seed} axis {axis}");
        }
    }
}

#[test]
fn phantom_values_and_coverage() {
    let cases = (0..30).map(|s| ([24, 32, 32], s)).chain([([70, 100, 100], 1), ([8, 8, 8], 2)]);
    for (shape, seed) in cases {
        let v = make_phantom(shape, seed).unwrap();
        assert!(v.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let nz = v.data.iter().filter(|&&x| x > 0.0).count() as f64 / v.data.len() as f64;
        assert!((0.3..=0.7).contains(&nz), "{shape:?}: nonzero fraction {nz}");
    }
}
