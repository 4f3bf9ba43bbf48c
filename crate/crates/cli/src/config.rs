//! Experiment configuration: a TOML file whose keys can all be overridden
//! with `--set section.key=value`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rosasr_core::corpus::SynthConfig;
use rosasr_core::decode::{DecodeOptions, GraphConfig};
use rosasr_core::features::FrameConfig;
use rosasr_core::hmm::GmmTrainConfig;
use rosasr_core::nnet::{MlpArch, Nonlinearity, TrainConfig};
use rosasr_core::ros::{RateBin, RateBins};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory holding train/cv/test manifests and the lexicon.
    pub corpus: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
    pub silence: String,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub synth: SynthSection,
    pub frame: FrameSection,
    pub ros: RosSection,
    pub split: SplitSection,
    pub alpha: AlphaSection,
    pub gmm: GmmSection,
    pub lda: LdaSection,
    pub dnn: DnnSection,
    pub decode: DecodeSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            corpus: None,
            workdir: None,
            silence: "sil".into(),
            seeds: vec![1, 2, 3],
            jobs: 1,
            synth: SynthSection::default(),
            frame: FrameSection::default(),
            ros: RosSection::default(),
            split: SplitSection::default(),
            alpha: AlphaSection::default(),
            gmm: GmmSection::default(),
            lda: LdaSection::default(),
            dnn: DnnSection::default(),
            decode: DecodeSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub num_utts: usize,
    pub seed: u64,
    pub kappa: f64,
    pub r0: f64,
    pub rate_median: f64,
    pub rate_sigma: f64,
    pub snr_db: f64,
    pub cv_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            num_utts: 2700,
            seed: s.seed,
            kappa: s.kappa,
            r0: s.r0,
            rate_median: s.rate_median,
            rate_sigma: s.rate_sigma,
            snr_db: s.snr_db,
            cv_fraction: 0.05,
            test_fraction: 0.2,
        }
    }
}

impl SynthSection {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            kappa: self.kappa,
            r0: self.r0,
            rate_median: self.rate_median,
            rate_sigma: self.rate_sigma,
            snr_db: self.snr_db,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub preemphasis: f64,
    pub num_mel_filters: usize,
    pub num_cepstra: usize,
}

impl Default for FrameSection {
    fn default() -> Self {
        let f = FrameConfig::default();
        Self {
            sample_rate_hz: f.sample_rate_hz,
            window_ms: f.window_ms,
            shift_ms: f.shift_ms,
            preemphasis: f.preemphasis,
            num_mel_filters: f.num_mel_filters,
            num_cepstra: f.num_cepstra,
        }
    }
}

impl FrameSection {
    pub fn frame_config(&self) -> FrameConfig {
        FrameConfig {
            sample_rate_hz: self.sample_rate_hz,
            window_ms: self.window_ms,
            shift_ms: self.shift_ms,
            preemphasis: self.preemphasis,
            num_mel_filters: self.num_mel_filters,
            num_cepstra: self.num_cepstra,
            ..FrameConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RosNormKind {
    Zscore,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosSection {
    pub slow_max: f64,
    pub fast_min: f64,
    /// Internal pauses longer than this many seconds do not count as speech.
    pub max_pause_s: f64,
    pub norm: RosNormKind,
    /// Append the ROS column after the LDA projection instead of before.
    pub lda_bypass: bool,
}

impl Default for RosSection {
    fn default() -> Self {
        let b = RateBins::default();
        Self {
            slow_max: b.slow_max,
            fast_min: b.fast_min,
            max_pause_s: 0.5,
            norm: RosNormKind::Zscore,
            lda_bypass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_threshold: f64,
    pub train_threshold: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_threshold: 6.0,
            train_threshold: 6.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSection {
    pub slow: f64,
    pub normal: f64,
    pub fast: f64,
    pub include_silence: bool,
    /// Values tried by `sweep-alpha`.
    pub grid: Vec<f64>,
}

impl Default for AlphaSection {
    fn default() -> Self {
        Self {
            slow: 1.01162,
            normal: 1.0,
            fast: 0.5,
            include_silence: false,
            grid: vec![0.25, 0.5, 0.75, 1.0, 1.01162, 1.5, 2.0],
        }
    }
}

impl AlphaSection {
    pub fn for_bin(&self, bin: RateBin) -> f64 {
        match bin {
            RateBin::Slow => self.slow,
            RateBin::Normal => self.normal,
            RateBin::Fast => self.fast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub iterations: usize,
    pub max_components: usize,
    pub mixup_iters: Vec<usize>,
    pub states_per_phone: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        let g = GmmTrainConfig::default();
        Self {
            iterations: g.iterations,
            max_components: g.max_components,
            mixup_iters: g.mixup_iters,
            states_per_phone: g.states_per_phone,
        }
    }
}

impl GmmSection {
    pub fn train_config(&self) -> GmmTrainConfig {
        GmmTrainConfig {
            iterations: self.iterations,
            max_components: self.max_components,
            mixup_iters: self.mixup_iters.clone(),
            states_per_phone: self.states_per_phone,
            ..GmmTrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaSection {
    pub dim: usize,
    pub context: usize,
}

impl Default for LdaSection {
    fn default() -> Self {
        Self { dim: 200, context: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnSection {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub nonlinearity: String,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub max_epochs: usize,
}

impl Default for DnnSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = MlpArch::desk(1, 1);
        Self {
            hidden_layers: a.hidden_layers,
            hidden_units: a.hidden_units,
            nonlinearity: a.nonlinearity.name().into(),
            learning_rate: t.learning_rate,
            minibatch: t.minibatch,
            max_epochs: t.max_epochs,
        }
    }
}

impl DnnSection {
    pub fn arch(&self, input_dim: usize, output_dim: usize) -> CliResult<MlpArch> {
        let nonlinearity = Nonlinearity::from_name(&self.nonlinearity)
            .ok_or_else(|| CliError::config(format!("dnn.nonlinearity: unknown value `{}`", self.nonlinearity)))?;
        Ok(MlpArch {
            input_dim,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            output_dim,
            nonlinearity,
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            minibatch: self.minibatch,
            max_epochs: self.max_epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub acoustic_scale: f64,
    pub beam: f64,
    pub silence_prob: f64,
    pub end_prob: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeOptions::default();
        let g = GraphConfig::default();
        Self {
            acoustic_scale: d.acoustic_scale,
            beam: d.beam,
            silence_prob: g.silence_prob,
            end_prob: g.end_prob,
        }
    }
}

impl DecodeSection {
    pub fn options(&self, alpha: f64) -> DecodeOptions {
        DecodeOptions {
            alpha,
            acoustic_scale: self.acoustic_scale,
            beam: self.beam,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            silence_prob: self.silence_prob,
            end_prob: self.end_prob,
        }
    }
}

impl Config {
    /// Parses TOML text and applies `key=value` overrides in order.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> CliResult<Self> {
        // deserializing the text itself keeps line numbers in diagnostics
        toml::from_str::<Config>(text).map_err(|e| CliError::config(format!("{origin}: {e}")))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::config(format!("{origin}: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string(), overrides)
            }
            None => Self::parse("", "<defaults>", overrides),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds: at least one seed is required"));
        }
        if self.jobs == 0 {
            return Err(CliError::config("jobs: must be at least 1"));
        }
        self.bins()?;
        for (key, v) in [
            ("alpha.slow", self.alpha.slow),
            ("alpha.normal", self.alpha.normal),
            ("alpha.fast", self.alpha.fast),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("{key}: must be positive and finite, got {v}")));
            }
        }
        self.frame
            .frame_config()
            .validate()
            .map_err(|e| CliError::config(format!("frame: {e}")))?;
        Ok(())
    }

    pub fn bins(&self) -> CliResult<RateBins> {
        RateBins::new(self.ros.slow_max, self.ros.fast_min).map_err(|e| CliError::config(format!("ros: {e}")))
    }

    pub fn workdir(&self) -> CliResult<&Path> {
        self.workdir
            .as_deref()
            .ok_or_else(|| CliError::config("workdir: key is required"))
    }

    /// The corpus directory; it has to exist.
    pub fn corpus(&self) -> CliResult<&Path> {
        let p = self
            .corpus
            .as_deref()
            .ok_or_else(|| CliError::config("corpus: key is required"))?;
        if !p.is_dir() {
            return Err(CliError::config(format!("corpus: directory {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Canonical TOML rendering of every setting.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short hex digest of the canonical rendering, without the job count.
    pub fn digest(&self) -> String {
        let canonical = Config { jobs: 1, ..self.clone() }.to_toml();
        let hash = Sha256::digest(canonical.as_bytes());
        let mut out = String::new();
        for b in &hash[..6] {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set {spec}: expected key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: `{s}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse(
            "workdir = \"w\"\n[alpha]\nfast = 0.6\n",
            "t",
            &["alpha.fast=0.5".into(), "seeds=[7]".into(), "corpus=c".into()],
        )
        .unwrap();
        assert_eq!(c.alpha.fast, 0.5);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.corpus, Some(PathBuf::from("c")));
        assert_eq!(c.alpha.slow, 1.01162);
        assert_eq!(c.split.train_threshold, 6.3);
    }

    #[test]
    fn unknown_key_is_reported() {
        let e = Config::parse("[dnn]\nhiden_units = 3\n", "cfg.toml", &[]).unwrap_err();
        assert!(e.to_string().contains("hiden_units"), "{e}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn bad_value_names_the_line() {
        let e = Config::parse("jobs = 1\n[lda]\ndim = \"many\"\n", "cfg.toml", &[]).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn missing_corpus_names_the_key() {
        let c = Config::default();
        assert!(c.corpus().unwrap_err().to_string().contains("corpus"));
        let c = Config {
            corpus: Some("/nonexistent/dir".into()),
            ..Config::default()
        };
        assert!(c.corpus().unwrap_err().to_string().contains("corpus"));
    }

    #[test]
    fn digest_tracks_settings_but_not_jobs() {
        let a = Config::default();
        let b = Config { jobs: 4, ..a.clone() };
        let mut c = a.clone();
        c.alpha.fast = 0.4;
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(Config::parse(&a.to_toml(), "x", &[]).unwrap(), a);
    }
}
