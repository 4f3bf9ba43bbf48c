//! Synthetic rate-varying speech-like corpora and WAV corpus ingestion.
//!
//! Every synthetic phone is band-shaped noise whose spectral envelope has a
//! few formant-like bumps on a normalized mel axis. Speaking rate acts on two
//! channels: phone durations scale as `base * r0 / rate`, and bump positions
//! move by the factor `1 + kappa * (rate - r0)`.

mod wav;

pub use wav::{ingest_wav_corpus, read_wav, write_wav, IngestError, IngestReport};

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::hmm::{write_alignments, AlignedFrame, Alignment};
use crate::lexicon::Lexicon;
use crate::manifest::{Manifest, ManifestEntry};
use crate::ros::{compute_ros, RateBins};

/// One spectral bump: centre on the normalized mel axis, level in dB, width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Formant {
    pub position: f64,
    pub level_db: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhoneSpec {
    pub name: String,
    pub formants: Vec<Formant>,
    /// Duration in frames at the neutral rate.
    pub base_frames: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub frame_shift_s: f64,
    pub phones: Vec<PhoneSpec>,
    pub silence: String,
    /// Neutral rate in phones per second.
    pub r0: f64,
    /// Spectral coupling coefficient.
    pub kappa: f64,
    pub rate_median: f64,
    /// Log-normal shape of the rate sampler.
    pub rate_sigma: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    /// Relative uniform jitter of every phone duration.
    pub duration_jitter: f64,
    /// Relative uniform jitter of bump positions per utterance.
    pub speaker_warp: f64,
    pub snr_db: f64,
    pub vocab_size: usize,
    pub min_word_phones: usize,
    pub max_word_phones: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Chance of a short pause between two words.
    pub pause_prob: f64,
    /// Edge silence range in frames.
    pub edge_silence_frames: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Each pair shares the ratio between its two bumps, so a pair is
        // recognizable at any rate. The second member sits `PAIR_RATIO` times
        // higher on the mel axis, which a strong rate warp can imitate.
        const PAIR_RATIO: f64 = 1.5;
        let pairs = [
            (2.0, [0.0, -3.0], 12.0, 16.0),
            (2.8, [-3.0, 0.0], 15.0, 11.0),
            (3.8, [0.0, 0.0], 14.0, 17.0),
            (5.0, [0.0, -6.0], 13.0, 16.0),
        ];
        let mut phones = Vec::new();
        for (k, (ratio, lvl, da, db)) in pairs.iter().enumerate() {
            for (m, (scale, frames)) in [(1.0, *da), (PAIR_RATIO, *db)].into_iter().enumerate() {
                let f1 = 0.1 * scale;
                phones.push(PhoneSpec {
                    name: format!("{}{}", ["a", "b"][m], k + 1),
                    formants: [f1, f1 * ratio]
                        .iter()
                        .zip(lvl)
                        .map(|(p, l)| Formant {
                            position: *p,
                            level_db: *l,
                            width: 0.03,
                        })
                        .collect(),
                    base_frames: frames,
                });
            }
        }
        Self {
            sample_rate_hz: 16000,
            frame_shift_s: 0.01,
            phones,
            silence: "sil".into(),
            r0: 7.0,
            kappa: 0.05,
            rate_median: 6.5,
            rate_sigma: 0.35,
            rate_min: 2.5,
            rate_max: 16.0,
            duration_jitter: 0.2,
            speaker_warp: 0.03,
            snr_db: 20.0,
            vocab_size: 24,
            min_word_phones: 2,
            max_word_phones: 3,
            min_words: 1,
            max_words: 3,
            pause_prob: 0.15,
            edge_silence_frames: (10, 25),
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.phones.is_empty() {
            return bad("synthetic phone inventory is empty");
        }
        if !self.kappa.is_finite() {
            return bad("kappa must be finite");
        }
        if !(self.r0 > 0.0 && self.rate_median > 0.0 && self.rate_sigma >= 0.0) {
            return bad("rates must be positive");
        }
        if !(0.0 < self.rate_min && self.rate_min <= self.rate_max && self.rate_max.is_finite()) {
            return bad("rate clip range must satisfy 0 < min <= max");
        }
        if self.phones.iter().any(|p| p.base_frames * self.r0 / self.rate_max < 0.5) {
            return bad("a phone would last less than one frame at the maximum rate");
        }
        if !(0.0..1.0).contains(&self.duration_jitter) || !(0.0..0.5).contains(&self.speaker_warp) {
            return bad("jitter terms must lie in [0, 1) and [0, 0.5)");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word count range must satisfy 1 <= min <= max");
        }
        if self.min_word_phones == 0 || self.min_word_phones > self.max_word_phones {
            return bad("word length range must satisfy 1 <= min <= max");
        }
        if self.edge_silence_frames.0 > self.edge_silence_frames.1 {
            return bad("edge silence range is reversed");
        }
        Ok(())
    }

    pub fn samples_per_frame(&self) -> usize {
        (self.sample_rate_hz as f64 * self.frame_shift_s).round() as usize
    }

    /// Factor applied to bump positions at `rate`.
    pub fn spectral_warp(&self, rate: f64) -> f64 {
        1.0 + self.kappa * (rate - self.r0)
    }

    /// Speech phones first in configuration order, then silence.
    pub fn phone_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.phones.iter().map(|p| p.name.clone()).collect();
        names.push(self.silence.clone());
        names
    }

    /// The synthetic vocabulary: distinct random pronunciations named
    /// `w00`, `w01`, …, drawn from `seed`.
    pub fn lexicon(&self) -> Result<Lexicon> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_1E71);
        let max_distinct: f64 = (self.min_word_phones..=self.max_word_phones)
            .map(|n| (self.phones.len() as f64).powi(n as i32))
            .sum();
        if (self.vocab_size as f64) > max_distinct {
            return Err(Error::InvalidConfig(format!(
                "cannot draw {} distinct words from {} phones",
                self.vocab_size,
                self.phones.len()
            )));
        }
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(self.vocab_size);
        while entries.len() < self.vocab_size {
            let n = rng.random_range(self.min_word_phones..=self.max_word_phones);
            let pron: Vec<String> = (0..n)
                .map(|_| self.phones[rng.random_range(0..self.phones.len())].name.clone())
                .collect();
            if seen.insert(pron.clone()) {
                entries.push((format!("w{:02}", entries.len()), pron));
            }
        }
        Lexicon::new(entries, self.silence.clone())
    }

    fn rate_sampler(&self) -> LogNormal<f64> {
        LogNormal::new(self.rate_median.ln(), self.rate_sigma).expect("validated")
    }

    /// Per-utterance generator seed.
    pub fn utterance_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// A phone occurrence with frame boundaries, `end` exclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneInterval {
    pub phone: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub transcript: Vec<String>,
    /// True phone boundaries including silences.
    pub phones: Vec<PhoneInterval>,
    /// Nominal speaking rate used by the generator.
    pub rate: f64,
    pub ros: Option<f64>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.phones.last().map_or(0, |p| p.end)
    }

    /// The true boundaries as a frame alignment over `phone_names`. The first
    /// frame of each phone has state 0 and the rest state 1, so repeated
    /// phones stay separate instances; pdfs are zero.
    pub fn truth_alignment(&self, phone_names: &[String], silence: &str, frame_shift_s: f64) -> Result<Alignment> {
        let index = |name: &str| {
            phone_names
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| Error::UnknownPhone(name.to_string()))
        };
        let mut frames = Vec::with_capacity(self.num_frames());
        for p in &self.phones {
            let phone = index(&p.phone)?;
            frames.extend((p.start..p.end).map(|t| AlignedFrame {
                phone,
                state: usize::from(t > p.start),
                pdf: 0,
            }));
        }
        Ok(Alignment {
            utt_id: self.id.clone(),
            frame_shift_s,
            frames,
            silence_phone: Some(index(silence)?),
        })
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

struct Synth<'a> {
    cfg: &'a SynthConfig,
    planner: FftPlanner<f64>,
}

impl Synth<'_> {
    /// Band-limited noise of `n` samples with the given power envelope over
    /// the normalized mel axis.
    fn shaped_noise(&mut self, n: usize, envelope: &dyn Fn(f64) -> f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        if n == 0 {
            return Vec::new();
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(normal.sample(rng), 0.0)).collect();
        self.planner.plan_fft_forward(n).process(&mut buf);
        let sr = self.cfg.sample_rate_hz as f64;
        let mel_top = hz_to_mel(sr / 2.0);
        for (k, c) in buf.iter_mut().enumerate() {
            let bin = k.min(n - k);
            let hz = bin as f64 * sr / n as f64;
            *c *= envelope(hz_to_mel(hz) / mel_top).sqrt();
        }
        self.planner.plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }
}

/// Power envelope of a phone with bump positions multiplied by `warp`.
fn phone_envelope(spec: &PhoneSpec, warp: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x: f64| {
        let mut e = 1e-3;
        for f in &spec.formants {
            let d = (x - f.position * warp) / f.width;
            e += 10f64.powf(f.level_db / 10.0) * (-0.5 * d * d).exp();
        }
        e
    }
}

/// Renders one utterance of `words` spoken at `rate` phones per second.
pub fn synthesize_utterance(
    cfg: &SynthConfig,
    lexicon: &Lexicon,
    id: &str,
    words: &[String],
    rate: f64,
    seed: u64,
) -> Result<Utterance> {
    cfg.validate()?;
    if words.is_empty() {
        return Err(Error::EmptyInput("utterance needs at least one word"));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidRos(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec_of = |name: &str| {
        cfg.phones
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPhone(name.to_string()))
    };

    let mut plan: Vec<(Option<&PhoneSpec>, usize)> = Vec::new();
    let (lo, hi) = cfg.edge_silence_frames;
    plan.push((None, rng.random_range(lo..=hi)));
    for (w, word) in words.iter().enumerate() {
        if w > 0 && rng.random::<f64>() < cfg.pause_prob {
            plan.push((None, rng.random_range(5..=20)));
        }
        for name in lexicon.pronunciation(word)? {
            let spec = spec_of(name)?;
            let nominal = spec.base_frames * cfg.r0 / rate;
            if nominal.round() < 1.0 {
                return Err(Error::RateTooHigh {
                    rate,
                    phone: name.clone(),
                });
            }
            let jitter = 1.0 + cfg.duration_jitter * (2.0 * rng.random::<f64>() - 1.0);
            plan.push((Some(spec), ((nominal * jitter).round() as usize).max(1)));
        }
    }
    plan.push((None, rng.random_range(lo..=hi)));

    let warp = cfg.spectral_warp(rate) * (1.0 + cfg.speaker_warp * (2.0 * rng.random::<f64>() - 1.0));
    let spf = cfg.samples_per_frame();
    let mut synth = Synth {
        cfg,
        planner: FftPlanner::new(),
    };
    let mut samples = Vec::new();
    let mut phones = Vec::with_capacity(plan.len());
    let mut frame = 0;
    for (spec, frames) in plan {
        let n = frames * spf;
        let seg = match spec {
            Some(s) => {
                let mut seg = synth.shaped_noise(n, &phone_envelope(s, warp), &mut rng);
                // short raised-cosine ramps avoid clicks at phone edges
                let ramp = (spf / 2).min(n / 2);
                for i in 0..ramp {
                    let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
                    seg[i] *= g;
                    seg[n - 1 - i] *= g;
                }
                seg
            }
            None => vec![0.0; n],
        };
        samples.extend(seg);
        phones.push(PhoneInterval {
            phone: spec.map_or_else(|| cfg.silence.clone(), |s| s.name.clone()),
            start: frame,
            end: frame + frames,
        });
        frame += frames;
    }

    let speech: Vec<f64> = phones
        .iter()
        .filter(|p| p.phone != cfg.silence)
        .flat_map(|p| samples[p.start * spf..p.end * spf].iter().copied())
        .collect();
    let rms = (speech.iter().map(|v| v * v).sum::<f64>() / speech.len().max(1) as f64).sqrt();
    let gain = if rms > 0.0 { 0.1 / rms } else { 1.0 };
    let noise_sd = 0.1 * 10f64.powf(-cfg.snr_db / 20.0);
    let normal = Normal::new(0.0, noise_sd).expect("finite noise level");
    for v in &mut samples {
        *v = *v * gain + normal.sample(&mut rng);
    }

    let mut utt = Utterance {
        id: id.to_string(),
        samples,
        sample_rate_hz: cfg.sample_rate_hz,
        transcript: words.to_vec(),
        phones,
        rate,
        ros: None,
    };
    let truth = utt.truth_alignment(&cfg.phone_names(), &cfg.silence, cfg.frame_shift_s)?;
    utt.ros = Some(compute_ros(&truth)?.phones_per_second);
    Ok(utt)
}

/// Draws words and a rate for utterance `index` and renders it.
pub fn sample_utterance(cfg: &SynthConfig, lexicon: &Lexicon, index: usize) -> Result<Utterance> {
    let seed = cfg.utterance_seed(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = cfg.rate_sampler().sample(&mut rng).clamp(cfg.rate_min, cfg.rate_max);
    let vocab: Vec<&str> = lexicon.words().collect();
    let n = rng.random_range(cfg.min_words..=cfg.max_words);
    let words: Vec<String> = (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].to_string()).collect();
    synthesize_utterance(cfg, lexicon, &format!("utt{index:06}"), &words, rate, seed.rotate_left(17))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub num_utts: usize,
    pub cv_fraction: f64,
    pub test_fraction: f64,
}

impl SplitConfig {
    /// (train, cv, test) sizes.
    pub fn sizes(&self) -> Result<(usize, usize, usize)> {
        if self.num_utts == 0 {
            return Err(Error::EmptyInput("corpus needs at least one utterance"));
        }
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.cv_fraction) || !frac_ok(self.test_fraction) || self.cv_fraction + self.test_fraction >= 1.0 {
            return Err(Error::InvalidConfig("cv and test fractions must leave training data".into()));
        }
        let cv = (self.num_utts as f64 * self.cv_fraction).round() as usize;
        let test = (self.num_utts as f64 * self.test_fraction).round() as usize;
        Ok((self.num_utts - cv - test, cv, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub train: Manifest,
    pub cv: Manifest,
    pub test: Manifest,
    pub lexicon: Lexicon,
}

pub const TRAIN_MANIFEST: &str = "train.tsv";
pub const CV_MANIFEST: &str = "cv.tsv";
pub const TEST_MANIFEST: &str = "test.tsv";
pub const LEXICON_FILE: &str = "lexicon.txt";
pub const TRANSCRIPTS_FILE: &str = "transcripts.txt";
pub const TRUTH_FILE: &str = "truth.ali";

/// Renders a corpus into `out_dir`: WAV files under `wav/`, one manifest per
/// split, the lexicon, a transcript file and the true alignments.
pub fn generate_corpus(cfg: &SynthConfig, split: &SplitConfig, out_dir: &Path) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let (n_train, n_cv, _) = split.sizes()?;
    let lexicon = cfg.lexicon()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir)?;

    let mut order: Vec<usize> = (0..split.num_utts).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5_9117));
    let mut role = vec![2u8; split.num_utts];
    for (k, &i) in order.iter().enumerate() {
        role[i] = if k < n_train {
            0
        } else if k < n_train + n_cv {
            1
        } else {
            2
        };
    }

    let names = cfg.phone_names();
    let bins = RateBins::default();
    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    let mut truth = Vec::with_capacity(split.num_utts);
    let mut transcripts = String::new();
    for i in 0..split.num_utts {
        let utt = sample_utterance(cfg, &lexicon, i)?;
        let rel = PathBuf::from("wav").join(format!("{}.wav", utt.id));
        write_wav(&out_dir.join(&rel), &utt.samples, utt.sample_rate_hz)?;
        let mut e = ManifestEntry::new(utt.id.clone(), rel, utt.transcript.clone());
        e.ros = utt.ros;
        e.bin = utt.ros.map(|r| bins.bin_of(r));
        transcripts.push_str(&format!("{}\t{}\n", utt.id, utt.transcript.join(" ")));
        truth.push(utt.truth_alignment(&names, &cfg.silence, cfg.frame_shift_s)?);
        splits[role[i] as usize].push(e);
    }
    let [train, cv, test] = splits.map(Manifest::new);
    train.write(&out_dir.join(TRAIN_MANIFEST))?;
    cv.write(&out_dir.join(CV_MANIFEST))?;
    test.write(&out_dir.join(TEST_MANIFEST))?;
    lexicon.write(&out_dir.join(LEXICON_FILE))?;
    fs::write(out_dir.join(TRANSCRIPTS_FILE), transcripts)?;
    write_alignments(&out_dir.join(TRUTH_FILE), &truth)?;
    info!(
        "generated {} utterances ({} train, {} cv, {} test) in {}",
        split.num_utts,
        train.len(),
        cv.len(),
        test.len(),
        out_dir.display()
    );
    Ok(GeneratedCorpus {
        train,
        cv,
        test,
        lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_fbank, FrameConfig};

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    #[test]
    fn vocabulary_is_distinct_and_deterministic() {
        let c = cfg();
        let a = c.lexicon().unwrap();
        assert_eq!(a.num_words(), c.vocab_size);
        assert_eq!(a, c.lexicon().unwrap());
        let prons: BTreeSet<_> = a.words().map(|w| a.pronunciation(w).unwrap().to_vec()).collect();
        assert_eq!(prons.len(), c.vocab_size);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let c = cfg();
        let lex = c.lexicon().unwrap();
        let a = sample_utterance(&c, &lex, 3).unwrap();
        let b = sample_utterance(&c, &lex, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, sample_utterance(&c, &lex, 4).unwrap().samples);
    }

    #[test]
    fn boundaries_tile_the_signal() {
        let c = cfg();
        let lex = c.lexicon().unwrap();
        let u = sample_utterance(&c, &lex, 0).unwrap();
        assert_eq!(u.samples.len(), u.num_frames() * c.samples_per_frame());
        for w in u.phones.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(u.phones.first().unwrap().phone, "sil");
        let ros = u.ros.unwrap();
        assert!(ros > 0.5 * u.rate && ros < 2.0 * u.rate, "{ros} vs {}", u.rate);
    }

    #[test]
    fn rate_too_high() {
        let c = cfg();
        let lex = c.lexicon().unwrap();
        let w = vec![lex.words().next().unwrap().to_string()];
        assert!(matches!(
            synthesize_utterance(&c, &lex, "u", &w, 500.0, 1),
            Err(Error::RateTooHigh { .. })
        ));
    }

    #[test]
    fn bump_shows_in_filterbank() {
        let c = SynthConfig {
            kappa: 0.0,
            speaker_warp: 0.0,
            ..cfg()
        };
        let spec = &PhoneSpec {
            name: "x".into(),
            formants: vec![Formant {
                position: 0.4,
                level_db: 0.0,
                width: 0.03,
            }],
            base_frames: 10.0,
        };
        let mut s = Synth {
            cfg: &c,
            planner: FftPlanner::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = s.shaped_noise(16000, &phone_envelope(spec, 1.0), &mut rng);
        let f = compute_fbank(&x, &FrameConfig::default()).unwrap();
        let mean: Vec<f64> = (0..40).map(|j| f.data().column(j).mean().unwrap()).collect();
        let peak = (0..40).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        let expected = (spec.formants[0].position * 41.0).round() as isize;
        assert!((peak as isize - expected).abs() <= 2, "peak {peak}, expected near {expected}");
    }

    #[test]
    fn split_sizes() {
        let s = SplitConfig {
            num_utts: 1000,
            cv_fraction: 0.05,
            test_fraction: 0.2,
        };
        assert_eq!(s.sizes().unwrap(), (750, 50, 200));
        assert!(SplitConfig { num_utts: 0, ..s.clone() }.sizes().is_err());
    }
}
