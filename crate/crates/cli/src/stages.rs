//! Pipeline stages. Each stage reads its inputs from the workdir, writes its
//! outputs next to a stamp and skips the work when the stamp is current.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use rosasr_core::corpus::{read_wav, CV_MANIFEST, LEXICON_FILE, TEST_MANIFEST, TRAIN_MANIFEST};
use rosasr_core::decode::{build_graph, decode_with_retry, DecodeGraph, Hypotheses, HybridScorer};
use rosasr_core::features::{
    apply_cmn, apply_lda, augment_ros, compute_fbank, compute_mfcc, read_feat_file, read_lda_file, splice,
    write_feat_file, write_lda_file, FeatureMatrix, LdaAccumulator, LdaTransform, RosNorm,
};
use rosasr_core::hmm::{
    forced_align, read_alignments, read_model_file, train_gmm_hmm, write_alignments, write_model_file, Alignment,
    GmmHmmModel, TrainUtterance,
};
use rosasr_core::lexicon::Lexicon;
use rosasr_core::manifest::{Manifest, ManifestEntry};
use rosasr_core::nnet::{
    estimate_priors, read_mlp_file, read_priors_file, train, write_mlp_file, write_priors_file, FrameSet, Mlp,
};
use rosasr_core::ros::{compute_ros_with_pause, partition_manifest, sample_half};

use crate::artifacts::{self, is_up_to_date, sha256_hex, write_file, write_stamp, Split, Workdir};
use crate::config::{Config, RosNormKind};
use crate::error::{CliError, CliResult, StageContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    UpToDate,
}

impl Outcome {
    pub fn message(self, stage: &str) -> String {
        match self {
            Outcome::Done => format!("{stage}: done"),
            Outcome::UpToDate => format!("{stage}: up-to-date"),
        }
    }
}

/// Runs `f` on every item with at most `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> CliResult<R> + Sync + Send,
) -> CliResult<Vec<R>> {
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("jobs: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

pub fn workdir(cfg: &Config) -> CliResult<Workdir> {
    Ok(Workdir::new(cfg.workdir()?))
}

fn read_manifest(path: &Path, stage: &'static str) -> CliResult<Manifest> {
    Manifest::read(path).stage(stage)
}

pub fn load_lexicon(wd: &Workdir, cfg: &Config) -> CliResult<Lexicon> {
    Lexicon::read(&wd.lexicon(), &cfg.silence).stage("lexicon")
}

pub fn prepare(cfg: &Config) -> CliResult<Outcome> {
    const STAGE: &str = "prepare";
    let corpus = cfg.corpus()?;
    let wd = workdir(cfg)?;
    let inputs = [TRAIN_MANIFEST, CV_MANIFEST, TEST_MANIFEST, LEXICON_FILE];
    let mut key = format!(
        "{}\nsilence={}\n",
        toml::to_string(&cfg.frame).expect("frame section serializes"),
        cfg.silence
    );
    for name in inputs {
        let path = corpus.join(name);
        if !path.is_file() {
            return Err(CliError::config(format!("corpus: {} is missing", path.display())));
        }
        let _ = writeln!(key, "{name}={}", artifacts::file_digest(&path, STAGE)?);
    }
    if is_up_to_date(&wd.data_dir(), &key) {
        return Ok(Outcome::UpToDate);
    }

    let fc = cfg.frame.frame_config();
    let bins = cfg.bins()?;
    let lexicon = Lexicon::read(&corpus.join(LEXICON_FILE), &cfg.silence).stage(STAGE)?;
    artifacts::create_dir(&wd.data_dir(), STAGE)?;
    artifacts::create_dir(&wd.root().join("feats/mfcc"), STAGE)?;
    artifacts::create_dir(&wd.root().join("feats/fbank"), STAGE)?;
    for (split, name) in Split::ALL.into_iter().zip(inputs) {
        let m = read_manifest(&corpus.join(name), STAGE)?;
        let entries: Vec<ManifestEntry> = m.iter().cloned().collect();
        let out = par_map(cfg.jobs, &entries, |e| {
            lexicon.expand(&e.transcript).stage(STAGE)?;
            let wav = if e.wav_path.is_absolute() {
                e.wav_path.clone()
            } else {
                corpus.join(&e.wav_path)
            };
            let (samples, sr) = read_wav(&wav).stage(STAGE)?;
            if sr != fc.sample_rate_hz {
                return Err(CliError::Stage {
                    stage: STAGE,
                    source: rosasr_core::Error::InvalidConfig(format!(
                        "{}: sample rate {sr} Hz, expected {}",
                        wav.display(),
                        fc.sample_rate_hz
                    )),
                });
            }
            write_feat_file(&wd.mfcc(&e.id), &compute_mfcc(&samples, &fc).stage(STAGE)?).stage(STAGE)?;
            write_feat_file(&wd.fbank(&e.id), &compute_fbank(&samples, &fc).stage(STAGE)?).stage(STAGE)?;
            let mut e = e.clone();
            e.wav_path = wav;
            e.bin = e.ros.map(|r| bins.bin_of(r));
            Ok(e)
        })?;
        Manifest::new(out).write(&wd.manifest(split)).stage(STAGE)?;
        info!("{STAGE}: {} {} utterances", entries.len(), split.name());
    }
    lexicon.write(&wd.lexicon()).stage(STAGE)?;
    write_stamp(&wd.data_dir(), &key, STAGE)?;
    Ok(Outcome::Done)
}

fn data_key(wd: &Workdir) -> CliResult<String> {
    let mut key = String::new();
    for split in Split::ALL {
        let _ = writeln!(key, "{}={}", split.name(), artifacts::file_digest(&wd.manifest(split), "data")?);
    }
    Ok(key)
}

pub fn train_gmm(cfg: &Config) -> CliResult<Outcome> {
    const STAGE: &str = "train-gmm";
    let wd = workdir(cfg)?;
    let train_path = wd.manifest(Split::Train);
    if !train_path.is_file() {
        return Err(CliError::config("workdir: not prepared; run `prepare` first"));
    }
    // ROS values filled in by `align` do not change the GMM inputs
    let key = format!(
        "{}\ntrain={}\nlexicon={}\n",
        toml::to_string(&cfg.gmm).expect("gmm section serializes"),
        sha256_hex(
            read_manifest(&train_path, STAGE)?
                .iter()
                .map(|e| format!("{}\t{}\n", e.id, e.transcript.join(" ")))
                .collect::<String>()
                .as_bytes()
        ),
        artifacts::file_digest(&wd.lexicon(), STAGE)?
    );
    if is_up_to_date(&wd.gmm_dir(), &key) {
        return Ok(Outcome::UpToDate);
    }
    let lexicon = load_lexicon(&wd, cfg)?;
    let m = read_manifest(&train_path, STAGE)?;
    let entries: Vec<&ManifestEntry> = m.iter().collect();
    let feats = par_map(cfg.jobs, &entries, |e| read_feat_file(&wd.mfcc(&e.id)).stage(STAGE))?;
    let utts: Vec<TrainUtterance<'_>> = entries
        .iter()
        .zip(&feats)
        .map(|(e, f)| TrainUtterance {
            id: &e.id,
            features: f,
            transcript: &e.transcript,
        })
        .collect();
    let (model, report) = train_gmm_hmm(&utts, &lexicon, &cfg.gmm.train_config()).stage(STAGE)?;
    for id in &report.skipped {
        warn!("{STAGE}: skipped {id}, too short for its transcript");
    }
    artifacts::create_dir(&wd.gmm_dir(), STAGE)?;
    write_model_file(&wd.gmm_model(), &model).stage(STAGE)?;
    let mut csv = String::from("iteration,log_likelihood,per_frame\n");
    for (i, ll) in report.log_likelihoods.iter().enumerate() {
        let _ = writeln!(csv, "{},{:?},{:.6}", i + 1, ll, ll / report.num_frames.max(1) as f64);
    }
    write_file(&wd.gmm_dir().join("train_ll.csv"), csv, STAGE)?;
    write_stamp(&wd.gmm_dir(), &key, STAGE)?;
    Ok(Outcome::Done)
}

/// Reads the per-iteration training log-likelihoods written by `train_gmm`.
pub fn read_gmm_log_likelihoods(wd: &Workdir) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(wd.gmm_dir().join("train_ll.csv")).stage("train-gmm")?;
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::config("train_ll.csv: malformed row"))
        })
        .collect()
}

pub fn load_gmm(wd: &Workdir) -> CliResult<GmmHmmModel> {
    read_model_file(&wd.gmm_model()).stage("gmm")
}

/// Forced alignment of every split against its reference transcripts. ROS
/// values missing from the manifests are filled in from these alignments.
pub fn align(cfg: &Config) -> CliResult<Outcome> {
    const STAGE: &str = "align";
    let wd = workdir(cfg)?;
    if !wd.gmm_model().is_file() {
        return Err(CliError::config("workdir: no GMM model; run `train-gmm` first"));
    }
    let key = format!(
        "model={}\nmax_pause={:?}\n{}",
        artifacts::file_digest(&wd.gmm_model(), STAGE)?,
        cfg.ros.max_pause_s,
        data_key(&wd)?
    );
    if is_up_to_date(&wd.ali_dir(), &key) {
        return Ok(Outcome::UpToDate);
    }
    let model = load_gmm(&wd)?;
    let lexicon = load_lexicon(&wd, cfg)?;
    let bins = cfg.bins()?;
    artifacts::create_dir(&wd.ali_dir(), STAGE)?;
    for split in Split::ALL {
        let m = read_manifest(&wd.manifest(split), STAGE)?;
        let entries: Vec<&ManifestEntry> = m.iter().collect();
        let alis = par_map(cfg.jobs, &entries, |e| {
            let f = read_feat_file(&wd.mfcc(&e.id)).stage(STAGE)?;
            match forced_align(&f, &e.transcript, &lexicon, &model, true, &e.id) {
                Ok(a) => Ok(Some(a)),
                Err(err @ (rosasr_core::Error::NoPath { .. } | rosasr_core::Error::UtteranceTooShort { .. })) => {
                    warn!("{STAGE}: {}: {err}", e.id);
                    Ok(None)
                }
                Err(err) => Err(err).stage(STAGE),
            }
        })?;
        let mut updated = Vec::with_capacity(entries.len());
        for (e, a) in entries.iter().zip(&alis) {
            let mut e = (*e).clone();
            if e.ros.is_none() {
                if let Some(a) = a {
                    e.ros = Some(compute_ros_with_pause(a, cfg.ros.max_pause_s).stage(STAGE)?.phones_per_second);
                }
            }
            e.bin = e.ros.map(|r| bins.bin_of(r));
            updated.push(e);
        }
        let alis: Vec<Alignment> = alis.into_iter().flatten().collect();
        write_alignments(&wd.alignments(split), &alis).stage(STAGE)?;
        let updated = Manifest::new(updated);
        if updated != m {
            updated.write(&wd.manifest(split)).stage(STAGE)?;
        }
    }
    // the key covers the manifests as they are after filling in ROS
    let key = format!(
        "model={}\nmax_pause={:?}\n{}",
        artifacts::file_digest(&wd.gmm_model(), STAGE)?,
        cfg.ros.max_pause_s,
        data_key(&wd)?
    );
    write_stamp(&wd.ali_dir(), &key, STAGE)?;
    Ok(Outcome::Done)
}

fn alignments_by_id(wd: &Workdir, split: Split) -> CliResult<BTreeMap<String, Alignment>> {
    Ok(read_alignments(&wd.alignments(split))
        .stage("align")?
        .into_iter()
        .map(|a| (a.utt_id.clone(), a))
        .collect())
}

/// Which part of the training set a network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    /// Rate-stratified random half.
    Half,
    /// ROS below the training threshold.
    Slow,
    Fast,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Half => "half",
            Subset::Slow => "slow",
            Subset::Fast => "fast",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "all" => Subset::All,
            "half" => Subset::Half,
            "slow" => Subset::Slow,
            "fast" => Subset::Fast,
            _ => return None,
        })
    }

    /// Training-set label in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Subset::All => "Tr-All",
            Subset::Half => "Tr-Half",
            Subset::Slow => "Tr-Slow",
            Subset::Fast => "Tr-Fast",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DnnSpec {
    pub use_ros: bool,
    pub subset: Subset,
    pub seed: u64,
}

impl DnnSpec {
    pub fn tag(&self) -> String {
        format!(
            "{}-{}-s{}",
            if self.use_ros { "ros" } else { "base" },
            self.subset.name(),
            self.seed
        )
    }

    fn lda_tag(&self) -> String {
        let sub = match self.subset {
            Subset::Half => format!("half-s{}", self.seed),
            s => s.name().to_string(),
        };
        format!("lda-{}-{sub}", if self.use_ros { "ros" } else { "base" })
    }
}

pub fn select_subset(cfg: &Config, train: &Manifest, subset: Subset, seed: u64) -> CliResult<Manifest> {
    Ok(match subset {
        Subset::All => train.clone(),
        Subset::Half => sample_half(train, seed).stage("train-dnn")?,
        Subset::Slow => partition_manifest(train, cfg.split.train_threshold).stage("train-dnn")?.0,
        Subset::Fast => partition_manifest(train, cfg.split.train_threshold).stage("train-dnn")?.1,
    })
}

/// Everything needed to turn filterbank features into network inputs.
#[derive(Debug, Clone)]
pub struct InputTransform {
    pub context: usize,
    pub lda: LdaTransform,
    /// `None` when the network does not see the rate of speech.
    pub ros: Option<RosNorm>,
    pub lda_bypass: bool,
}

impl InputTransform {
    fn pre_lda(&self, fbank: &FeatureMatrix, ros: Option<f64>) -> rosasr_core::Result<FeatureMatrix> {
        let mut f = apply_cmn(fbank);
        if let (Some(norm), false) = (self.ros, self.lda_bypass) {
            let r = ros.ok_or(rosasr_core::Error::InvalidRos(f64::NAN))?;
            f = augment_ros(&f, r, norm)?;
        }
        Ok(splice(&f, self.context, self.context))
    }

    pub fn apply(&self, fbank: &FeatureMatrix, ros: Option<f64>) -> rosasr_core::Result<FeatureMatrix> {
        let mut f = apply_lda(&self.lda, &self.pre_lda(fbank, ros)?)?;
        if let (Some(norm), true) = (self.ros, self.lda_bypass) {
            let r = ros.ok_or(rosasr_core::Error::InvalidRos(f64::NAN))?;
            f = augment_ros(&f, r, norm)?;
        }
        Ok(f)
    }

    fn write(&self, dir: &Path, stage: &'static str) -> CliResult<()> {
        write_lda_file(&dir.join("lda.txt"), &self.lda).stage(stage)?;
        let ros = match self.ros {
            None => "none".to_string(),
            Some(RosNorm::Identity) => "identity".to_string(),
            Some(RosNorm::ZScore { mean, std }) => format!("zscore {mean:?} {std:?}"),
        };
        write_file(
            &dir.join("input.txt"),
            format!("context {}\nros {ros}\nlda_bypass {}\n", self.context, self.lda_bypass),
            stage,
        )
    }

    fn read(dir: &Path, stage: &'static str) -> CliResult<Self> {
        let lda = read_lda_file(&dir.join("lda.txt")).stage(stage)?;
        let text = fs::read_to_string(dir.join("input.txt")).stage(stage)?;
        let bad = || CliError::config(format!("{}: malformed input.txt", dir.display()));
        let mut context = None;
        let mut ros = None;
        let mut lda_bypass = None;
        for line in text.lines() {
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                ["context", n] => context = n.parse().ok(),
                ["ros", "none"] => ros = Some(None),
                ["ros", "identity"] => ros = Some(Some(RosNorm::Identity)),
                ["ros", "zscore", m, s] => {
                    ros = Some(Some(RosNorm::ZScore {
                        mean: m.parse().map_err(|_| bad())?,
                        std: s.parse().map_err(|_| bad())?,
                    }))
                }
                ["lda_bypass", b] => lda_bypass = b.parse().ok(),
                _ => return Err(bad()),
            }
        }
        Ok(Self {
            context: context.ok_or_else(bad)?,
            lda,
            ros: ros.ok_or_else(bad)?,
            lda_bypass: lda_bypass.ok_or_else(bad)?,
        })
    }
}

fn ros_of(e: &ManifestEntry) -> CliResult<f64> {
    e.ros
        .ok_or_else(|| CliError::Stage {
            stage: "train-dnn",
            source: rosasr_core::Error::MissingRos(e.id.clone()),
        })
}

/// Estimates (or reloads) the input transform shared by networks that differ
/// only in their seed.
fn input_transform(
    cfg: &Config,
    wd: &Workdir,
    spec: &DnnSpec,
    train: &Manifest,
    alis: &BTreeMap<String, Alignment>,
) -> CliResult<InputTransform> {
    const STAGE: &str = "lda";
    let dir = wd.root().join("dnn").join(spec.lda_tag());
    let ids: String = train.iter().map(|e| format!("{}\n", e.id)).collect();
    let key = format!(
        "{}\n{}\nnorm={:?}\nbypass={}\nalign={}\nids={}\n",
        toml::to_string(&cfg.lda).expect("lda section serializes"),
        toml::to_string(&cfg.frame).expect("frame section serializes"),
        cfg.ros.norm,
        cfg.ros.lda_bypass,
        artifacts::file_digest(&wd.alignments(Split::Train), STAGE)?,
        sha256_hex(ids.as_bytes())
    );
    if is_up_to_date(&dir, &key) {
        return InputTransform::read(&dir, STAGE);
    }
    let ros = if spec.use_ros {
        Some(match cfg.ros.norm {
            RosNormKind::Identity => RosNorm::Identity,
            RosNormKind::Zscore => {
                let values = train.iter().map(ros_of).collect::<CliResult<Vec<_>>>()?;
                RosNorm::fit(&values).stage(STAGE)?
            }
        })
    } else {
        None
    };
    let mut t = InputTransform {
        context: cfg.lda.context,
        lda: LdaTransform::from_matrix(Array2::zeros((1, 1))),
        ros,
        lda_bypass: cfg.ros.lda_bypass,
    };
    let mut acc: Option<LdaAccumulator> = None;
    for e in train.iter() {
        let Some(a) = alis.get(&e.id) else { continue };
        let fbank = read_feat_file(&wd.fbank(&e.id)).stage(STAGE)?;
        let x = t.pre_lda(&fbank, e.ros).stage(STAGE)?;
        let acc = acc.get_or_insert_with(|| LdaAccumulator::new(x.dim()));
        acc.add(&x, &a.pdfs()).stage(STAGE)?;
    }
    let acc = acc.ok_or(CliError::Stage {
        stage: STAGE,
        source: rosasr_core::Error::EmptyInput("no aligned training utterances"),
    })?;
    t.lda = acc.estimate(cfg.lda.dim).stage(STAGE)?;
    info!(
        "{STAGE}: {} discriminant rows, {} filled, condition number {:.3e}",
        t.lda.num_discriminant, t.lda.num_filled, t.lda.condition_number
    );
    artifacts::create_dir(&dir, STAGE)?;
    t.write(&dir, STAGE)?;
    write_stamp(&dir, &key, STAGE)?;
    Ok(t)
}

fn frame_set(
    cfg: &Config,
    wd: &Workdir,
    t: &InputTransform,
    m: &Manifest,
    alis: &BTreeMap<String, Alignment>,
    stage: &'static str,
) -> CliResult<FrameSet> {
    let entries: Vec<&ManifestEntry> = m.iter().filter(|e| alis.contains_key(&e.id)).collect();
    let parts = par_map(cfg.jobs, &entries, |e| {
        let fbank = read_feat_file(&wd.fbank(&e.id)).stage(stage)?;
        let x = t.apply(&fbank, e.ros).stage(stage)?;
        let labels = alis[&e.id].pdfs();
        if labels.len() != x.num_frames() {
            return Err(CliError::Stage {
                stage,
                source: rosasr_core::Error::DimMismatch {
                    expected: x.num_frames(),
                    got: labels.len(),
                },
            });
        }
        Ok((x.into_data(), labels))
    })?;
    if parts.is_empty() {
        return Err(CliError::Stage {
            stage,
            source: rosasr_core::Error::EmptyInput("no aligned utterances"),
        });
    }
    let views: Vec<_> = parts.iter().map(|(x, _)| x.view()).collect();
    let inputs = concatenate(Axis(0), &views).expect("equal widths");
    let labels = parts.into_iter().flat_map(|(_, l)| l).collect();
    FrameSet::new(inputs, labels).stage(stage)
}

/// A trained hybrid acoustic model.
#[derive(Debug, Clone)]
pub struct Dnn {
    pub scorer: HybridScorer,
    pub input: InputTransform,
}

impl Dnn {
    pub fn load(dir: &Path) -> CliResult<Self> {
        const STAGE: &str = "load-dnn";
        Ok(Self {
            scorer: HybridScorer {
                mlp: read_mlp_file(&dir.join("final.nnet")).stage(STAGE)?,
                priors: read_priors_file(&dir.join("priors.txt")).stage(STAGE)?,
            },
            input: InputTransform::read(dir, STAGE)?,
        })
    }
}

pub fn train_dnn(cfg: &Config, spec: &DnnSpec) -> CliResult<Outcome> {
    const STAGE: &str = "train-dnn";
    let wd = workdir(cfg)?;
    if !wd.alignments(Split::Train).is_file() {
        return Err(CliError::config("workdir: no alignments; run `align` first"));
    }
    let dir = wd.dnn_dir(&spec.tag());
    let key = format!(
        "{}\n{}\n{}\n{}\nsplit={:?}\nalign={}\ncv={}\n",
        spec.tag(),
        toml::to_string(&cfg.dnn).expect("dnn section serializes"),
        toml::to_string(&cfg.lda).expect("lda section serializes"),
        toml::to_string(&cfg.ros).expect("ros section serializes"),
        cfg.split.train_threshold,
        artifacts::file_digest(&wd.alignments(Split::Train), STAGE)?,
        artifacts::file_digest(&wd.alignments(Split::Cv), STAGE)?,
    );
    if is_up_to_date(&dir, &key) {
        return Ok(Outcome::UpToDate);
    }
    let train_m = read_manifest(&wd.manifest(Split::Train), STAGE)?;
    let train_m = select_subset(cfg, &train_m, spec.subset, spec.seed)?;
    // cv limited to the rate range of the training subset
    let cv_all = read_manifest(&wd.manifest(Split::Cv), STAGE)?;
    let cv_m = match select_subset(cfg, &cv_all, spec.subset, spec.seed) {
        Ok(m) if !m.is_empty() => m,
        _ => cv_all,
    };
    let train_alis = alignments_by_id(&wd, Split::Train)?;
    let cv_alis = alignments_by_id(&wd, Split::Cv)?;
    let model = load_gmm(&wd)?;
    let num_pdfs = model.hmms.num_pdfs();

    let input = input_transform(cfg, &wd, spec, &train_m, &train_alis)?;
    let train_set = frame_set(cfg, &wd, &input, &train_m, &train_alis, STAGE)?;
    let cv_set = frame_set(cfg, &wd, &input, &cv_m, &cv_alis, STAGE)?;
    let used: Vec<Alignment> = train_m.iter().filter_map(|e| train_alis.get(&e.id).cloned()).collect();
    let priors = estimate_priors(&used, num_pdfs).stage(STAGE)?;
    info!(
        "{STAGE}: {} on {} train / {} cv frames",
        spec.tag(),
        train_set.len(),
        cv_set.len()
    );
    let arch = cfg.dnn.arch(train_set.inputs.ncols(), num_pdfs)?;
    let init = Mlp::new(arch, spec.seed).stage(STAGE)?;
    let (mlp, report) = train(&init, &train_set, &cv_set, &cfg.dnn.train_config(spec.seed)).stage(STAGE)?;

    artifacts::create_dir(&dir, STAGE)?;
    write_mlp_file(&dir.join("final.nnet"), &mlp).stage(STAGE)?;
    write_priors_file(&dir.join("priors.txt"), &priors).stage(STAGE)?;
    input.write(&dir, STAGE)?;
    write_file(&dir.join("epochs.csv"), report.to_csv(), STAGE)?;
    write_stamp(&dir, &key, STAGE)?;
    Ok(Outcome::Done)
}

/// Acoustic log-likelihoods of every entry, computed once so that searches
/// with different graphs can reuse them.
pub fn compute_logliks(cfg: &Config, wd: &Workdir, dnn: &Dnn, m: &Manifest) -> CliResult<Vec<(String, Array2<f64>, f64)>> {
    const STAGE: &str = "decode";
    let entries: Vec<&ManifestEntry> = m.iter().collect();
    par_map(cfg.jobs, &entries, |e| {
        let fbank = read_feat_file(&wd.fbank(&e.id)).stage(STAGE)?;
        let x = dnn.input.apply(&fbank, e.ros).stage(STAGE)?;
        let ll = rosasr_core::decode::FrameScorer::score(&dnn.scorer, &x).stage(STAGE)?;
        Ok((e.id.clone(), ll, x.frame_shift_s()))
    })
}

pub fn decode_graph(cfg: &Config, wd: &Workdir) -> CliResult<DecodeGraph> {
    let model = load_gmm(wd)?;
    let lexicon = load_lexicon(wd, cfg)?;
    build_graph(&lexicon, &model.hmms, None, cfg.decode.graph_config()).stage("decode")
}

/// Searches cached log-likelihoods; `alpha_of` picks the self-loop scaling
/// of each utterance.
pub fn search(
    cfg: &Config,
    graph: &DecodeGraph,
    logliks: &[(String, Array2<f64>, f64)],
    alpha_of: impl Fn(&str) -> f64 + Sync,
) -> CliResult<Hypotheses> {
    const STAGE: &str = "decode";
    let mut graphs: BTreeMap<u64, DecodeGraph> = BTreeMap::new();
    for (id, _, _) in logliks {
        let a = alpha_of(id);
        if let std::collections::btree_map::Entry::Vacant(v) = graphs.entry(a.to_bits()) {
            let g = if a == 1.0 {
                graph.clone()
            } else {
                graph.scaled(a, cfg.alpha.include_silence).stage(STAGE)?
            };
            v.insert(g);
        }
    }
    let opts = cfg.decode.options(1.0);
    let words = par_map(cfg.jobs, logliks, |(id, ll, shift)| {
        let g = &graphs[&alpha_of(id).to_bits()];
        Ok(decode_with_retry(ll.view(), g, &opts, id, *shift).stage(STAGE)?.words)
    })?;
    Ok(logliks.iter().map(|(id, _, _)| id.clone()).zip(words).collect())
}

/// Hypotheses for `m` from the network in `dnn_dir`.
pub fn decode(
    cfg: &Config,
    dnn_dir: &Path,
    m: &Manifest,
    alpha_of: impl Fn(&str) -> f64 + Sync,
) -> CliResult<Hypotheses> {
    let wd = workdir(cfg)?;
    let dnn = Dnn::load(dnn_dir)?;
    let graph = decode_graph(cfg, &wd)?;
    let ll = compute_logliks(cfg, &wd, &dnn, m)?;
    search(cfg, &graph, &ll, alpha_of)
}

/// The α of an utterance according to its rate bin.
pub fn alpha_map(cfg: &Config, m: &Manifest) -> CliResult<BTreeMap<String, f64>> {
    let bins = cfg.bins()?;
    m.iter()
        .map(|e| {
            let r = e.ros.ok_or_else(|| CliError::Stage {
                stage: "decode",
                source: rosasr_core::Error::MissingRos(e.id.clone()),
            })?;
            Ok((e.id.clone(), cfg.alpha.for_bin(bins.bin_of(r))))
        })
        .collect()
}

pub fn test_manifest(cfg: &Config) -> CliResult<Manifest> {
    read_manifest(&workdir(cfg)?.manifest(Split::Test), "decode")
}

/// Runs every stage up to alignment.
pub fn ensure_aligned(cfg: &Config) -> CliResult<()> {
    for (name, outcome) in [
        ("prepare", prepare as fn(&Config) -> CliResult<Outcome>),
        ("train-gmm", train_gmm),
        ("align", align),
    ] {
        let done = outcome(cfg)?;
        info!("{}", done.message(name));
    }
    Ok(())
}
