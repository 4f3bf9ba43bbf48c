use std::f64::consts::PI;
use std::path::PathBuf;

use rosasr_core::corpus::read_wav;
use rosasr_core::features::{compute_fbank, compute_mfcc, read_feat_file, FrameConfig};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Response of each triangular filter at `hz`, from the filter definition:
/// centers equally spaced on the mel scale, each spanning its neighbours.
fn triangle_response(cfg: &FrameConfig, hz: f64) -> Vec<f64> {
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let lo = mel(cfg.low_freq_hz);
    let hi = mel(cfg.sample_rate_hz as f64 / 2.0);
    let n = cfg.num_mel_filters;
    let step = (hi - lo) / (n + 1) as f64;
    let m = mel(hz);
    (0..n)
        .map(|i| {
            let c = lo + (i + 1) as f64 * step;
            (1.0 - (m - c).abs() / step).max(0.0)
        })
        .collect()
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    v.enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[test]
fn sine_peaks_in_the_filter_containing_its_frequency() {
    let cfg = FrameConfig::default();
    let sr = cfg.sample_rate_hz as f64;
    for hz in [1000.0, 500.0, 2500.0] {
        let x: Vec<f64> = (0..16_000).map(|n| 0.3 * (2.0 * PI * hz * n as f64 / sr).sin()).collect();
        let f = compute_fbank(&x, &cfg).unwrap();
        let energy = f.data().exp().mean_axis(ndarray::Axis(0)).unwrap();
        let expected = argmax(triangle_response(&cfg, hz).into_iter());
        assert_eq!(argmax(energy.iter().copied()), expected, "{hz} Hz");
    }
}

#[test]
fn fbank_matches_golden_file() {
    let (x, sr) = read_wav(&data("one_second.wav")).unwrap();
    assert_eq!((x.len(), sr), (16_000, 16_000));
    let got = compute_fbank(&x, &FrameConfig::default()).unwrap();
    let want = read_feat_file(&data("one_second.fbank")).unwrap();
    assert_eq!(got.data().dim(), (98, 40));
    assert_eq!(got.data().dim(), want.data().dim());
    assert_eq!(got.kind(), want.kind());
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn mfcc_of_golden_audio_is_39_wide_and_finite() {
    let (x, _) = read_wav(&data("one_second.wav")).unwrap();
    let f = compute_mfcc(&x, &FrameConfig::default()).unwrap();
    assert_eq!(f.dim(), 39);
    assert_eq!(f.num_frames(), 98);
    assert!(f.data().iter().all(|v| v.is_finite()));
}
