use log::{debug, warn};
use ndarray::{Array1, Axis};

use super::align::{forced_align_loglik, linear_graph, AlignedFrame, Alignment};
use super::gmm::{DiagGmm, GmmSet, GmmStats};
use super::{HmmSet, HmmState};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy)]
pub struct TrainUtterance<'a> {
    pub id: &'a str,
    pub features: &'a FeatureMatrix,
    pub transcript: &'a [String],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTrainConfig {
    /// Viterbi re-estimation passes; zero returns the flat-start model.
    pub iterations: usize,
    pub states_per_phone: usize,
    pub optional_silence: bool,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_frac: f64,
    pub max_components: usize,
    /// Iterations after which every mixture is split in two.
    pub mixup_iters: Vec<usize>,
    pub split_perturb: f64,
    pub min_self_prob: f64,
    pub max_self_prob: f64,
}

impl Default for GmmTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            states_per_phone: 3,
            optional_silence: true,
            var_floor_frac: 1e-3,
            max_components: 1,
            mixup_iters: Vec::new(),
            split_perturb: 0.2,
            min_self_prob: 0.01,
            max_self_prob: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmHmmModel {
    pub hmms: HmmSet,
    pub gmms: GmmSet,
}

#[derive(Debug, Clone, Default)]
pub struct GmmTrainReport {
    /// Total Viterbi log-likelihood of the training data under the model
    /// produced by each iteration.
    pub log_likelihoods: Vec<f64>,
    pub num_frames: usize,
    /// Utterances shorter than their transcript's minimum path.
    pub skipped: Vec<String>,
    /// Alignments of the remaining utterances under the final model.
    pub alignments: Vec<Alignment>,
}

/// Viterbi-style EM training of monophone GMM-HMMs from a flat start.
///
/// The flat start sets every self-loop to 0.5 and every pdf to the global
/// mean and variance. Because a flat model scores all paths alike, the first
/// pass segments each utterance uniformly instead of searching.
pub fn train_gmm_hmm(
    utts: &[TrainUtterance<'_>],
    lexicon: &Lexicon,
    cfg: &GmmTrainConfig,
) -> Result<(GmmHmmModel, GmmTrainReport)> {
    let first = utts.first().ok_or(Error::EmptyInput("no training utterances"))?;
    let dim = first.features.dim();
    let speech: Vec<String> = lexicon
        .phones()
        .into_iter()
        .filter(|p| *p != lexicon.silence())
        .map(str::to_string)
        .collect();
    let hmms = HmmSet::with_topology(&speech, Some(lexicon.silence()), cfg.states_per_phone)?;
    let phone_seqs = utts
        .iter()
        .map(|u| {
            if u.features.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: u.features.dim(),
                });
            }
            lexicon.expand_ids(u.transcript, &hmms)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = Array1::<f64>::zeros(dim);
    let mut sumsq = Array1::<f64>::zeros(dim);
    let mut n = 0usize;
    for u in utts {
        let x = u.features.data();
        sum += &x.sum_axis(Axis(0));
        sumsq += &x.mapv(|v| v * v).sum_axis(Axis(0));
        n += x.nrows();
    }
    let mean = &sum / n as f64;
    let var = (&sumsq / n as f64 - &mean * &mean).mapv(|v| v.max(1e-10));
    let var_floor = &var * cfg.var_floor_frac;
    let flat = DiagGmm::single(mean, var)?;
    let mut model = GmmHmmModel {
        gmms: GmmSet {
            pdfs: vec![flat; hmms.num_pdfs()],
        },
        hmms,
    };
    let mut report = GmmTrainReport {
        num_frames: n,
        ..Default::default()
    };
    if cfg.iterations == 0 {
        return Ok((model, report));
    }

    let usable: Vec<usize> = (0..utts.len())
        .filter(|&i| {
            let needed: usize = phone_seqs[i]
                .iter()
                .map(|&p| model.hmms.phone(p).num_states())
                .sum();
            let ok = utts[i].features.num_frames() >= needed;
            if !ok {
                warn!("skipping {}: too short for its transcript", utts[i].id);
                report.skipped.push(utts[i].id.to_string());
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::EmptyInput("no utterance long enough to align"));
    }

    let mut alignments: Vec<Alignment> = usable
        .iter()
        .map(|&i| uniform_alignment(&utts[i], &phone_seqs[i], &model.hmms, cfg.optional_silence))
        .collect::<Result<_>>()?;

    for iter in 1..=cfg.iterations {
        model = reestimate(&model, utts, &usable, &alignments, &var_floor, cfg)?;
        if cfg.mixup_iters.contains(&iter) {
            let current = model.gmms.pdfs.first().map_or(1, DiagGmm::num_components);
            if current * 2 <= cfg.max_components {
                model.gmms.pdfs = model.gmms.pdfs.iter().map(|g| g.split(cfg.split_perturb)).collect();
            }
        }
        let (ali, ll) = align_all(&model, utts, &usable, &phone_seqs, cfg.optional_silence)?;
        debug!("gmm iteration {iter}: log-likelihood {ll:.3} over {n} frames");
        report.log_likelihoods.push(ll);
        alignments = ali;
    }
    report.alignments = alignments;
    Ok((model, report))
}

fn uniform_alignment(
    utt: &TrainUtterance<'_>,
    phones: &[usize],
    hmms: &HmmSet,
    optional_silence: bool,
) -> Result<Alignment> {
    let lg = linear_graph(phones, hmms, optional_silence)?;
    let frames = utt.features.num_frames();
    let states = if frames >= lg.info.len() {
        lg.info.len()
    } else {
        lg.min_frames
    };
    // drop the optional silences when there is no room for them
    let offset = if states == lg.info.len() || lg.info.len() == lg.min_frames {
        0
    } else {
        1
    };
    let aligned = (0..frames)
        .map(|t| {
            let k = offset + t * states / frames;
            let (phone, state) = lg.info[k];
            AlignedFrame {
                phone,
                state,
                pdf: hmms.phone(phone).states[state].pdf,
            }
        })
        .collect();
    Ok(Alignment {
        utt_id: utt.id.to_string(),
        frame_shift_s: utt.features.frame_shift_s(),
        frames: aligned,
        silence_phone: hmms.silence,
    })
}

fn align_all(
    model: &GmmHmmModel,
    utts: &[TrainUtterance<'_>],
    usable: &[usize],
    phone_seqs: &[Vec<usize>],
    optional_silence: bool,
) -> Result<(Vec<Alignment>, f64)> {
    let mut total = 0.0;
    let mut out = Vec::with_capacity(usable.len());
    for &i in usable {
        let u = &utts[i];
        let ll = model.gmms.loglik_matrix(u.features)?;
        let (a, score) = forced_align_loglik(
            ll.view(),
            &phone_seqs[i],
            &model.hmms,
            optional_silence,
            u.id,
            u.features.frame_shift_s(),
        )?;
        total += score;
        out.push(a);
    }
    Ok((out, total))
}

fn reestimate(
    model: &GmmHmmModel,
    utts: &[TrainUtterance<'_>],
    usable: &[usize],
    alignments: &[Alignment],
    var_floor: &Array1<f64>,
    cfg: &GmmTrainConfig,
) -> Result<GmmHmmModel> {
    let mut stats = GmmStats::new(&model.gmms);
    for (&i, a) in usable.iter().zip(alignments) {
        let mut local = GmmStats::new(&model.gmms);
        for (row, f) in utts[i].features.data().rows().into_iter().zip(&a.frames) {
            local.accumulate(&model.gmms, f.pdf, row);
        }
        stats.merge(&local);
    }
    let gmms = stats.update(&model.gmms, var_floor)?;
    let hmms = estimate_transitions(alignments, &model.hmms, cfg.min_self_prob, cfg.max_self_prob)?;
    Ok(GmmHmmModel { hmms, gmms })
}

/// Maximum-likelihood self-loop probabilities from alignment occupancy,
/// clamped to `[min_self, max_self]`. States never visited keep their values.
pub fn estimate_transitions(
    alignments: &[Alignment],
    hmms: &HmmSet,
    min_self: f64,
    max_self: f64,
) -> Result<HmmSet> {
    let mut counts: Vec<Vec<(f64, f64)>> = hmms
        .phones
        .iter()
        .map(|p| vec![(0.0, 0.0); p.num_states()])
        .collect();
    for a in alignments {
        for (t, f) in a.frames.iter().enumerate() {
            let c = counts
                .get_mut(f.phone)
                .and_then(|v| v.get_mut(f.state))
                .ok_or_else(|| Error::UnknownPhone(format!("phone id {} state {}", f.phone, f.state)))?;
            match a.frames.get(t + 1) {
                Some(next) if next.phone == f.phone && next.state == f.state => c.0 += 1.0,
                _ => c.1 += 1.0,
            }
        }
    }
    let mut out = hmms.clone();
    for (p, phone) in out.phones.iter_mut().enumerate() {
        for (s, state) in phone.states.iter_mut().enumerate() {
            let (stay, leave) = counts[p][s];
            if stay + leave > 0.0 {
                let prob = (stay / (stay + leave)).clamp(min_self, max_self);
                *state = HmmState::new(prob, state.pdf)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn lexicon() -> Lexicon {
        Lexicon::new(
            vec![("x".to_string(), vec!["a".to_string()]), ("y".to_string(), vec!["b".to_string()])],
            "sil",
        )
        .unwrap()
    }

    fn gaussian_frames(values: &[(f64, usize)], seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let total: usize = values.iter().map(|v| v.1).sum();
        let mut data = Array2::zeros((total, 2));
        let mut t = 0;
        for &(mu, n) in values {
            for _ in 0..n {
                data[[t, 0]] = mu + noise.sample(&mut rng);
                data[[t, 1]] = -mu + noise.sample(&mut rng);
                t += 1;
            }
        }
        FeatureMatrix::new(data, 0.01, FeatureKind::Mfcc).unwrap()
    }

    #[test]
    fn zero_iterations_is_flat_start() {
        let f = gaussian_frames(&[(1.0, 30)], 1);
        let tr = vec!["x".to_string()];
        let utts = [TrainUtterance { id: "u", features: &f, transcript: &tr }];
        let cfg = GmmTrainConfig { iterations: 0, ..Default::default() };
        let (model, report) = train_gmm_hmm(&utts, &lexicon(), &cfg).unwrap();
        assert!(report.log_likelihoods.is_empty());
        let first = &model.gmms.pdfs[0];
        assert!(model.gmms.pdfs.iter().all(|g| g == first));
        assert!(model.hmms.phones.iter().flat_map(|p| &p.states).all(|s| s.self_prob == 0.5));
    }

    #[test]
    fn single_phone_mean_matches_sample_mean() {
        let f = gaussian_frames(&[(3.0, 400)], 2);
        let tr = vec!["x".to_string()];
        let utts = [TrainUtterance { id: "u", features: &f, transcript: &tr }];
        let cfg = GmmTrainConfig {
            iterations: 5,
            optional_silence: false,
            states_per_phone: 1,
            ..Default::default()
        };
        let (model, _) = train_gmm_hmm(&utts, &lexicon(), &cfg).unwrap();
        let a = model.hmms.phone_id("a").unwrap();
        let pdf = model.hmms.phone(a).states[0].pdf;
        let learned = model.gmms.pdfs[pdf].means()[[0, 0]];
        let sample = f.data().column(0).mean().unwrap();
        // all 400 frames belong to the single state, so the MLE is the sample mean
        let se = 1.0 / (400f64).sqrt();
        assert!((learned - sample).abs() < 3.0 * se);
        assert!((learned - sample).abs() < 1e-9);
    }

    #[test]
    fn two_phones_separate_in_order_and_likelihood_rises() {
        let mut feats = Vec::new();
        let mut trs = Vec::new();
        for i in 0..6 {
            feats.push(gaussian_frames(&[(-4.0, 20 + i), (4.0, 25 - i)], 10 + i as u64));
            trs.push(vec!["x".to_string(), "y".to_string()]);
        }
        let utts: Vec<TrainUtterance> = feats
            .iter()
            .zip(&trs)
            .map(|(f, t)| TrainUtterance { id: "u", features: f, transcript: t })
            .collect();
        let cfg = GmmTrainConfig { iterations: 8, ..Default::default() };
        let (model, report) = train_gmm_hmm(&utts, &lexicon(), &cfg).unwrap();
        let mean_of = |name: &str| {
            let p = model.hmms.phone_id(name).unwrap();
            let pdf = model.hmms.phone(p).states[1].pdf;
            model.gmms.pdfs[pdf].means()[[0, 0]]
        };
        assert!(mean_of("a") < mean_of("b"));
        for w in report.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{:?}", report.log_likelihoods);
        }
        assert_eq!(report.alignments.len(), 6);
    }

    #[test]
    fn oov_is_reported() {
        let f = gaussian_frames(&[(1.0, 30)], 1);
        let tr = vec!["zzz".to_string()];
        let utts = [TrainUtterance { id: "u", features: &f, transcript: &tr }];
        let err = train_gmm_hmm(&utts, &lexicon(), &GmmTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OovWord(w) if w == "zzz"));
        assert!(matches!(
            train_gmm_hmm(&[], &lexicon(), &GmmTrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn transition_counts() {
        let hmms = HmmSet::with_topology(&["a".into()], Some("sil"), 1).unwrap();
        let a = hmms.phone_id("a").unwrap();
        let pdf = hmms.phone(a).states[0].pdf;
        let frames = vec![AlignedFrame { phone: a, state: 0, pdf }; 5];
        let al = Alignment { utt_id: "u".into(), frame_shift_s: 0.01, frames, silence_phone: hmms.silence };
        let out = estimate_transitions(&[al], &hmms, 0.01, 0.99).unwrap();
        // four self loops, one exit
        assert!((out.phone(a).states[0].self_prob - 0.8).abs() < 1e-12);
    }
}
