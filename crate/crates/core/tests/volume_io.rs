use std::fs;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullcut_core::volume_io::{load_auto, load_volume, resample, save_auto, save_volume, sidecar_path, Format};
use skullcut_core::{Domain, Error, Volume};

fn random_volume(shape: (usize, usize, usize), domain: Domain, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn(shape, || match domain {
        Domain::Unit => rng.random::<f32>(),
        _ => rng.random_range(-1024.0..3000.0),
    });
    Volume::new(data, [1.25, 0.5, 2.0], domain).unwrap()
}

#[test]
fn round_trips_preserve_values_spacing_and_domain() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["a.raw", "b.nii", "c.nii.gz"].iter().enumerate() {
        for domain in [Domain::Hu, Domain::Unit, Domain::Arbitrary] {
            let v = random_volume((5, 7, 3), domain, i as u64);
            let path = dir.path().join(name);
            save_auto(&v, &path).unwrap();
            let back = load_auto(&path).unwrap();
            assert_eq!(back.data(), v.data(), "{name}");
            assert_eq!(back.spacing(), v.spacing());
            assert_eq!(back.domain(), domain);
        }
    }
    assert!(sidecar_path(&dir.path().join("a.raw")).exists());
}

#[test]
fn truncated_payloads_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let v = random_volume((4, 4, 4), Domain::Hu, 3);
    for (name, format) in [("t.nii", Format::Nifti), ("t.raw", Format::RawF32)] {
        let path = dir.path().join(name);
        save_volume(&v, &path, format).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_volume(&path, format), Err(Error::Format { .. })), "{name}");
    }
    let missing = load_auto(&dir.path().join("nope.nii"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}

#[test]
fn resample_up_then_down_restores_smooth_volumes() {
    let v = Volume::new(Array3::from_shape_fn((8, 8, 8), |(z, y, x)| (z + 2 * y + 3 * x) as f32), [1.0; 3], Domain::Arbitrary)
        .unwrap();
    let up = resample(&v, [16, 16, 16]).unwrap();
    assert_eq!(up.spacing(), [0.5; 3]);
    let down = resample(&up, [8, 8, 8]).unwrap();
    // interior samples of a linear ramp survive exactly; edges are clamped
    for z in 1..7 {
        assert!((down.data()[[z, 3, 3]] - v.data()[[z, 3, 3]]).abs() < 1e-4);
    }
}
