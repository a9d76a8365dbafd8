use dfp_core::bench::{self, SuiteKind, Variant};
use dfp_core::config::Config;
use dfp_core::image::GrayImage;
use dfp_core::io::{dfm1, pnm};
use dfp_core::numerics::Tensor3;
use dfp_core::tracking::{load_sequence, FrameData};
use dfp_core::Error;

#[test]
fn dfm1_round_trip_is_float32_exact() {
    let t = Tensor3::from_fn(3, 4, 2, |i, j, k| (i as f64 - 1.5) * 0.25 + j as f64 * 8.0 - k as f64);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.dfm1");
    dfm1::write(&path, &t).unwrap();
    assert_eq!(dfm1::read(&path).unwrap(), t);
}

#[test]
fn truncated_dfm1_is_a_format_error() {
    let t = Tensor3::filled(2, 2, 3, 1.0);
    let bytes = dfm1::encode(&t);
    let err = dfm1::decode(&bytes[..bytes.len() - 1], "x").unwrap_err();
    assert!(!err.is_io());
}

#[test]
fn pgm_round_trip_keeps_8bit_values() {
    let img = GrayImage::from_fn(5, 3, |r, c| ((r * 5 + c) * 17 % 256) as f64 / 255.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgm");
    pnm::write_pgm(&path, &img).unwrap();
    let back = pnm::read(&path).unwrap();
    for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn missing_file_is_io() {
    let err = pnm::read(std::path::Path::new("/nonexistent/frame.pgm")).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn unknown_config_key_names_file_line_and_key() {
    let err = Config::from_text("lambda = 0.02\n\nbogus_key = 3\n", "cfg.txt", None).unwrap_err();
    match err {
        Error::Config { path, line, key, .. } => {
            assert_eq!((path.as_str(), line, key.as_str()), ("cfg.txt", 3, "bogus_key"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn out_of_range_value_is_rejected() {
    assert!(Config::from_text("memory_size = 0\n", "c", None).is_err());
    let mut cfg = Config::default();
    assert!(cfg.apply_overrides(&["refine_period=-1".into()]).is_err());
}

#[test]
fn suite_survives_disk_round_trip() {
    let cfg = Config::default();
    let seq = bench::suite_sequence(SuiteKind::Distractor, 3, 0, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bench::write_sequence(dir.path(), &seq).unwrap();
    let back = load_sequence(&dir.path().join(&seq.name), cfg.feature_file_stride).unwrap();
    assert_eq!(back.frames.len(), seq.frames.len());
    for (a, b) in seq.frames.iter().zip(&back.frames) {
        let (FrameData::Image(a), FrameData::Image(b)) = (&a.data, &b.data) else {
            panic!("image frames expected");
        };
        assert_eq!(a.as_slice(), b.as_slice());
    }
    let live = bench::run_bench(&[seq], &cfg, &[Variant::Ours]).unwrap();
    let disk = bench::run_bench(&[back], &cfg, &[Variant::Ours]).unwrap();
    assert_eq!(live.to_json(), disk.to_json());
}

#[test]
fn tracker_follows_a_slow_target() {
    let cfg = Config::default();
    let seq = bench::suite_sequence(SuiteKind::Drift, 2, 0, 15).unwrap();
    let results = bench::track_sequence(&seq, &cfg).unwrap();
    let ious = bench::sequence_ious(&seq, &results);
    assert_eq!(ious.len(), 14);
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean > 0.5, "mean IoU {mean}");
}
