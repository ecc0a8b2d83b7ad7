use std::fs;

use ssal::imaging::{load_dir, load_manifest, preprocess, resize_bilinear, synth_dataset, synth_style, SynthStyle};
use ssal::Error;

#[test]
fn synth_masks_and_contrast_hold_over_a_thousand_samples() {
    let ds = synth_dataset(1000, (64, 64), 11).unwrap();
    let mut diffs = Vec::with_capacity(1000);
    for s in ds.samples() {
        let m = s.mask.as_ref().unwrap();
        let frac = m.foreground() as f64 / m.pixels.len() as f64;
        assert!((0.01..=0.6).contains(&frac), "{}: foreground {frac}", s.id());
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0, 0.0, 0);
        for (&p, &b) in s.image.pixels.iter().zip(&m.pixels) {
            if b == 1 {
                inside += p as f64;
                ni += 1;
            } else {
                outside += p as f64;
                no += 1;
            }
        }
        diffs.push((inside / ni as f64 - outside / no as f64).abs());
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let weak = diffs.iter().filter(|&&d| d < 0.15).count();
    assert!(mean >= 0.15, "mean |inside - outside| {mean}");
    assert!(weak <= 10, "{weak} of 1000 samples under 0.15");
}

#[test]
fn synth_is_deterministic_and_mixes_styles() {
    let a = synth_dataset(100, (64, 64), 7).unwrap();
    let b = synth_dataset(100, (64, 64), 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, synth_dataset(100, (64, 64), 8).unwrap());
    let n = 2000;
    for (style, weight) in SynthStyle::WEIGHTS {
        let count = (0..n).filter(|&i| synth_style(i, (16, 16), 3).unwrap() == style).count();
        let rate = count as f64 / n as f64;
        assert!((rate - weight).abs() < 0.04, "{style:?}: {rate}");
    }
}

#[test]
fn preprocess_examples() {
    let img = preprocess("c", &[0.4; 16], (4, 4), (4, 4)).unwrap();
    assert!(img.pixels.iter().all(|&p| p == 0.0));
    let img = preprocess("r", &[2.0, 4.0, 6.0, 10.0], (2, 2), (2, 2)).unwrap();
    assert_eq!(img.pixels, vec![0.0, 0.25, 0.5, 1.0]);
    let err = preprocess("ISIC_0001", &[], (0, 0), (4, 4)).unwrap_err();
    assert!(err.to_string().contains("ISIC_0001"));
    let up = preprocess("u", &[0.0, 1.0, 0.0, 1.0], (2, 2), (4, 4)).unwrap();
    assert_eq!(up.pixels.len(), 16);
}

#[test]
fn bilinear_resize_keeps_constants_and_identity() {
    let c = resize_bilinear(&[0.3; 12], (3, 4), (7, 5));
    assert!(c.iter().all(|v| (v - 0.3).abs() < 1e-6));
    let src: Vec<f32> = (0..12).map(|i| i as f32).collect();
    assert_eq!(resize_bilinear(&src, (3, 4), (3, 4)), src);
}

#[test]
fn directory_round_trip_and_pairing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(5, (32, 32), 2).unwrap();
    ds.save_dir(dir.path()).unwrap();
    let back = load_dir(&dir.path().join("images"), Some(&dir.path().join("masks")), (32, 32)).unwrap();
    assert_eq!(back.ids(), ds.ids());
    for (a, b) in back.samples().iter().zip(ds.samples()) {
        assert_eq!(a.mask, b.mask);
        // 8-bit quantization
        for (x, y) in a.image.pixels.iter().zip(&b.image.pixels) {
            assert!((x - y).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }
    let via_manifest = load_manifest(&dir.path().join("manifest.json"), (32, 32)).unwrap();
    assert_eq!(via_manifest.samples(), back.samples());
    let unlabeled = load_dir(&dir.path().join("images"), None, (32, 32)).unwrap();
    assert_eq!(unlabeled.unlabeled_ids().len(), 5);
}

#[test]
fn load_order_does_not_matter() {
    let ds = synth_dataset(6, (16, 16), 4).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ds.save_dir(a.path()).unwrap();
    // copy files into the second directory in reverse order
    fs::create_dir_all(b.path().join("images")).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path().join("images")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    names.reverse();
    for n in names {
        fs::copy(a.path().join("images").join(&n), b.path().join("images").join(&n)).unwrap();
    }
    let x = load_dir(&a.path().join("images"), None, (16, 16)).unwrap();
    let y = load_dir(&b.path().join("images"), None, (16, 16)).unwrap();
    assert_eq!(x.samples(), y.samples());
}

#[test]
fn missing_masks_and_empty_directories_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(4, (16, 16), 5).unwrap();
    ds.save_dir(dir.path()).unwrap();
    fs::remove_file(dir.path().join("masks/synth_00002.png")).unwrap();
    let err = load_dir(&dir.path().join("images"), Some(&dir.path().join("masks")), (16, 16)).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("synth_00002"), "{err}");
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_dir(empty.path(), None, (16, 16)), Err(Error::Data(_))));
}
