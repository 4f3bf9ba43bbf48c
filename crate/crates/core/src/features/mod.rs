//! Acoustic front end.
//!
//! Two feature streams are produced from 16-bit PCM audio:
//!
//! * MFCC with first and second order regression deltas, used by the GMM
//!   system that produces alignments.
//! * Log mel filterbank energies, mean normalized per utterance, optionally
//!   extended with a rate-of-speech column, spliced over a context window and
//!   projected with LDA. This is the input of the neural acoustic model.

mod fbank;
mod io;
mod lda;
mod transform;

pub use fbank::{compute_fbank, compute_mfcc, deltas, MelFilterbank};
pub use io::{read_feat, read_feat_file, write_feat, write_feat_file};
pub use lda::{apply_lda, estimate_lda, read_lda_file, write_lda_file, LdaAccumulator, LdaTransform};
pub use transform::{apply_cmn, augment_ros, splice, RosNorm};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Framing and filterbank parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub preemphasis: f64,
    pub num_mel_filters: usize,
    pub num_cepstra: usize,
    /// Energies are floored at this value before taking the log.
    pub log_floor: f64,
    /// Lower edge of the first mel filter in Hz.
    pub low_freq_hz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_ms: 25.0,
            shift_ms: 10.0,
            preemphasis: 0.97,
            num_mel_filters: 40,
            num_cepstra: 13,
            log_floor: 1e-10,
            low_freq_hz: 20.0,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive");
        }
        if !(self.shift_ms > 0.0 && self.window_ms >= self.shift_ms) {
            return bad("need window_ms >= shift_ms > 0");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        if self.num_mel_filters == 0 || self.num_cepstra == 0 {
            return bad("filter and cepstrum counts must be positive");
        }
        if self.num_cepstra > self.num_mel_filters {
            return bad("num_cepstra must not exceed num_mel_filters");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be a small positive number");
        }
        if !(self.low_freq_hz >= 0.0 && self.low_freq_hz < self.sample_rate_hz as f64 / 2.0) {
            return bad("low_freq_hz must lie below Nyquist");
        }
        let win = self.window_samples();
        let shift = self.shift_samples();
        if win == 0 || shift == 0 {
            return bad("window and shift must span at least one sample");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.shift_ms / 1000.0).round() as usize
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.shift_samples() as f64 / self.sample_rate_hz as f64
    }

    /// Number of frames for `num_samples` samples, or `None` if shorter than a window.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        let win = self.window_samples();
        if num_samples < win {
            None
        } else {
            Some((num_samples - win) / self.shift_samples() + 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Fbank,
    Mfcc,
    Spliced,
    LdaProjected,
}

impl FeatureKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureKind::Fbank => 0,
            FeatureKind::Mfcc => 1,
            FeatureKind::Spliced => 2,
            FeatureKind::LdaProjected => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FeatureKind::Fbank,
            1 => FeatureKind::Mfcc,
            2 => FeatureKind::Spliced,
            3 => FeatureKind::LdaProjected,
            _ => return None,
        })
    }
}

/// T frames by D dimensions of finite features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    frame_shift_s: f64,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, frame_shift_s: f64, kind: FeatureKind) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput("feature matrix has no frames"));
        }
        if data.ncols() == 0 {
            return Err(Error::EmptyInput("feature matrix has no dimensions"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        if !(frame_shift_s > 0.0 && frame_shift_s.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame shift must be positive, got {frame_shift_s}"
            )));
        }
        Ok(Self {
            data,
            frame_shift_s,
            kind,
        })
    }

    /// Construction from operations that preserve the invariants by design.
    pub(crate) fn from_parts(data: Array2<f64>, frame_shift_s: f64, kind: FeatureKind) -> Self {
        debug_assert!(data.nrows() > 0 && data.ncols() > 0);
        Self {
            data,
            frame_shift_s,
            kind,
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }
}
