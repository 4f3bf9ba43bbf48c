use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureKind, FeatureMatrix, FrameConfig};
use crate::error::{Error, Result};

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters equally spaced on the mel scale between the configured
/// low frequency and Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// For each filter: first FFT bin and the weights from that bin on.
    filters: Vec<(usize, Vec<f64>)>,
    fft_len: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &FrameConfig) -> Self {
        let fft_len = cfg.window_samples().next_power_of_two();
        let sr = cfg.sample_rate_hz as f64;
        let nyquist = sr / 2.0;
        let mel_lo = hz_to_mel(cfg.low_freq_hz);
        let mel_hi = hz_to_mel(nyquist);
        let n = cfg.num_mel_filters;
        let step = (mel_hi - mel_lo) / (n + 1) as f64;
        let num_bins = fft_len / 2 + 1;

        let filters = (0..n)
            .map(|m| {
                let left = mel_lo + m as f64 * step;
                let center = left + step;
                let right = center + step;
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..num_bins {
                    let mel = hz_to_mel(k as f64 * sr / fft_len as f64);
                    let w = if mel > left && mel <= center {
                        (mel - left) / (center - left)
                    } else if mel > center && mel < right {
                        (right - mel) / (right - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self { filters, fft_len }
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// Filter energies for a power spectrum of `fft_len / 2 + 1` bins.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, weights), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

struct Framer {
    cfg: FrameConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl Framer {
    fn new(cfg: &FrameConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_samples();
        let window = (0..win)
            .map(|n| {
                if win == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos()
                }
            })
            .collect();
        let bank = MelFilterbank::new(cfg);
        let fft = FftPlanner::new().plan_fft_forward(bank.fft_len());
        Ok(Self {
            cfg: cfg.clone(),
            window,
            fft,
            bank,
        })
    }

    fn log_mel(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let win = self.cfg.window_samples();
        let shift = self.cfg.shift_samples();
        let frames = self
            .cfg
            .num_frames(samples.len())
            .ok_or(Error::UtteranceTooShort {
                frames: samples.len(),
                needed: win,
            })?;
        let n_fft = self.bank.fft_len();
        let floor_log = self.cfg.log_floor.ln();
        let mut out = Array2::zeros((frames, self.bank.num_filters()));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut frame = vec![0.0; win];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let mut energies = vec![0.0; self.bank.num_filters()];

        for t in 0..frames {
            frame.copy_from_slice(&samples[t * shift..t * shift + win]);
            let mean = frame.iter().sum::<f64>() / win as f64;
            frame.iter_mut().for_each(|x| *x -= mean);
            let p = self.cfg.preemphasis;
            for i in (1..win).rev() {
                frame[i] -= p * frame[i - 1];
            }
            frame[0] -= p * frame[0];

            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for ((b, x), w) in buf.iter_mut().zip(&frame).zip(&self.window) {
                b.re = x * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.bank.apply(&power, &mut energies);
            for (o, e) in out.row_mut(t).iter_mut().zip(&energies) {
                *o = if *e > self.cfg.log_floor {
                    e.ln()
                } else {
                    floor_log
                };
            }
        }
        Ok(out)
    }
}

/// Log mel filterbank energies, one row per frame.
pub fn compute_fbank(samples: &[f64], cfg: &FrameConfig) -> Result<FeatureMatrix> {
    let framer = Framer::new(cfg)?;
    let data = framer.log_mel(samples)?;
    Ok(FeatureMatrix::from_parts(
        data,
        cfg.frame_shift_s(),
        FeatureKind::Fbank,
    ))
}

/// MFCC statics (orthonormal DCT-II of the log mel energies) followed by
/// their deltas and delta-deltas.
pub fn compute_mfcc(samples: &[f64], cfg: &FrameConfig) -> Result<FeatureMatrix> {
    let framer = Framer::new(cfg)?;
    let log_mel = framer.log_mel(samples)?;
    let m = cfg.num_mel_filters;
    let c = cfg.num_cepstra;
    let mut dct = Array2::zeros((m, c));
    for i in 0..c {
        let scale = if i == 0 {
            (1.0 / m as f64).sqrt()
        } else {
            (2.0 / m as f64).sqrt()
        };
        for j in 0..m {
            dct[[j, i]] = scale * (PI * i as f64 * (j as f64 + 0.5) / m as f64).cos();
        }
    }
    let statics = log_mel.dot(&dct);
    let d1 = deltas(&statics, 2);
    let d2 = deltas(&d1, 2);
    let frames = statics.nrows();
    let mut data = Array2::zeros((frames, 3 * c));
    data.slice_mut(s![.., 0..c]).assign(&statics);
    data.slice_mut(s![.., c..2 * c]).assign(&d1);
    data.slice_mut(s![.., 2 * c..]).assign(&d2);
    Ok(FeatureMatrix::from_parts(
        data,
        cfg.frame_shift_s(),
        FeatureKind::Mfcc,
    ))
}

/// Regression deltas over `±window` frames with edge replication.
pub fn deltas(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let frames = x.nrows();
    let mut out = Array2::zeros(x.raw_dim());
    if frames == 0 || window == 0 {
        return out;
    }
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let last = frames as isize - 1;
    let clamp = |t: isize| t.clamp(0, last) as usize;
    for t in 0..frames as isize {
        let mut row = out.row_mut(t as usize);
        for n in 1..=window as isize {
            let fwd = x.row(clamp(t + n));
            let back = x.row(clamp(t - n));
            row.zip_mut_with(&(&fwd - &back), |o, d| *o += n as f64 * d);
        }
        row.mapv_inplace(|v| v / denom);
    }
    out
}
