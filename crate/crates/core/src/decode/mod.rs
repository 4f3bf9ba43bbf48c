//! Word-loop decoding graph, hybrid Viterbi word decoding and WER scoring.

mod wer;

pub use wer::{
    compute_wer, read_hypotheses, score_manifest, write_hypotheses, Hypotheses, ScoreRow, ScoreTable, WerReport,
};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::hmm::{viterbi, AlignedFrame, Alignment, GmmSet, HmmGraph, HmmSet};
use crate::lexicon::Lexicon;
use crate::nnet::{posteriors_to_loglik, Mlp, PriorVector};

/// Word transition probabilities. Row 0 is the sentence start, row `u + 1`
/// follows word `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordLm {
    probs: Vec<Vec<f64>>,
}

impl WordLm {
    pub fn uniform(num_words: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / num_words as f64; num_words]; num_words + 1],
        }
    }

    /// Rows must be distributions over the vocabulary.
    pub fn bigram(probs: Vec<Vec<f64>>) -> Result<Self> {
        let v = probs.first().map_or(0, Vec::len);
        if v == 0 || probs.len() != v + 1 {
            return Err(Error::InvalidConfig("bigram needs V+1 rows of V probabilities".into()));
        }
        for row in &probs {
            let total: f64 = row.iter().sum();
            if row.len() != v || row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig("bigram rows must be probability vectors".into()));
            }
        }
        Ok(Self { probs })
    }

    pub fn num_words(&self) -> usize {
        self.probs[0].len()
    }

    /// Probability of `next` after `prev` (`None` at sentence start).
    pub fn prob(&self, prev: Option<usize>, next: usize) -> f64 {
        self.probs[prev.map_or(0, |p| p + 1)][next]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Probability of a silence between words and at the edges.
    pub silence_prob: f64,
    /// Probability of ending the utterance after a word or silence.
    pub end_prob: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            silence_prob: 0.2,
            end_prob: 0.1,
        }
    }
}

/// A flat loop over the lexicon's words with optional silence between them.
///
/// Leaving a word or silence picks what comes next: the end of the utterance
/// with `end_prob`, otherwise silence with `silence_prob` (never twice in a
/// row) or a word drawn from the language model.
#[derive(Debug, Clone)]
pub struct DecodeGraph {
    lexicon: Lexicon,
    hmms: HmmSet,
    lm: WordLm,
    cfg: GraphConfig,
    graph: HmmGraph,
    /// (phone id, state index) of every graph state.
    info: Vec<(usize, usize)>,
}

pub fn build_graph(lexicon: &Lexicon, hmms: &HmmSet, lm: Option<&WordLm>, cfg: GraphConfig) -> Result<DecodeGraph> {
    lexicon.validate(hmms)?;
    let lm = match lm {
        Some(lm) if lm.num_words() != lexicon.num_words() => {
            return Err(Error::DimMismatch {
                expected: lexicon.num_words(),
                got: lm.num_words(),
            })
        }
        Some(lm) => lm.clone(),
        None => WordLm::uniform(lexicon.num_words()),
    };
    if !(0.0..1.0).contains(&cfg.silence_prob) || !(cfg.end_prob > 0.0 && cfg.end_prob < 1.0) {
        return Err(Error::InvalidConfig(format!("bad graph probabilities {cfg:?}")));
    }
    let (graph, info) = compose(lexicon, hmms, &lm, cfg)?;
    Ok(DecodeGraph {
        lexicon: lexicon.clone(),
        hmms: hmms.clone(),
        lm,
        cfg,
        graph,
        info,
    })
}

fn compose(lexicon: &Lexicon, hmms: &HmmSet, lm: &WordLm, cfg: GraphConfig) -> Result<(HmmGraph, Vec<(usize, usize)>)> {
    let mut g = HmmGraph::new();
    let mut info = Vec::new();
    let ln = f64::ln;
    let sil = if cfg.silence_prob > 0.0 { hmms.silence } else { None };
    let sil_p = if sil.is_some() { cfg.silence_prob } else { 0.0 };
    let cont = 1.0 - cfg.end_prob;

    // (first state, last state, leave prob of last state) per word
    let mut words = Vec::with_capacity(lexicon.num_words());
    for w in lexicon.words() {
        let phones = lexicon.expand_ids(&[w], hmms)?;
        let mut first = None;
        let mut last: Option<(usize, f64)> = None;
        for p in phones {
            for (k, st) in hmms.phone(p).states.iter().enumerate() {
                let id = g.add_state(st.pdf);
                info.push((p, k));
                g.add_arc(id, id, ln(st.self_prob), None);
                if let Some((from, leave)) = last {
                    g.add_arc(from, id, ln(leave), None);
                }
                first.get_or_insert(id);
                last = Some((id, st.leave_prob));
            }
        }
        let (last, leave) = last.expect("pronunciations are nonempty");
        words.push((first.expect("nonempty"), last, leave));
    }
    let sil_state = sil.map(|s| {
        let st = hmms.phone(s).states[0];
        let id = g.add_state(st.pdf);
        info.push((s, 0));
        g.add_arc(id, id, ln(st.self_prob), None);
        (id, st.leave_prob)
    });

    for (v, &(first, _, _)) in words.iter().enumerate() {
        let label = Some(v as u32);
        g.set_initial(first, ln((1.0 - sil_p) * lm.prob(None, v)), label);
        for (u, &(_, last, leave)) in words.iter().enumerate() {
            g.add_arc(last, first, ln(leave * cont * (1.0 - sil_p) * lm.prob(Some(u), v)), label);
        }
        if let Some((s, leave)) = sil_state {
            // after silence the word history is forgotten
            g.add_arc(s, first, ln(leave * cont * lm.prob(None, v)), label);
        }
    }
    for &(_, last, leave) in &words {
        g.set_final(last, ln(leave * cfg.end_prob));
        if let Some((s, _)) = sil_state {
            g.add_arc(last, s, ln(leave * cont * sil_p), None);
        }
    }
    if let Some((s, leave)) = sil_state {
        g.set_initial(s, ln(sil_p), None);
        g.set_final(s, ln(leave * cfg.end_prob));
    }
    Ok((g, info))
}

impl DecodeGraph {
    pub fn graph(&self) -> &HmmGraph {
        &self.graph
    }

    pub fn hmms(&self) -> &HmmSet {
        &self.hmms
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// The same loop with every speech self-loop scaled by `alpha`, and the
    /// silence self-loop too when `include_silence` is set.
    pub fn scaled(&self, alpha: f64, include_silence: bool) -> Result<DecodeGraph> {
        let hmms = self.hmms.scaled(alpha, include_silence)?;
        let (graph, info) = compose(&self.lexicon, &hmms, &self.lm, self.cfg)?;
        Ok(DecodeGraph {
            hmms,
            graph,
            info,
            ..self.clone()
        })
    }
}

/// Produces per-frame, per-pdf acoustic log-likelihoods.
pub trait FrameScorer {
    fn num_pdfs(&self) -> usize;
    fn score(&self, features: &FeatureMatrix) -> Result<Array2<f64>>;
}

impl FrameScorer for GmmSet {
    fn num_pdfs(&self) -> usize {
        GmmSet::num_pdfs(self)
    }

    fn score(&self, features: &FeatureMatrix) -> Result<Array2<f64>> {
        self.loglik_matrix(features)
    }
}

/// Network posteriors divided by state priors.
#[derive(Debug, Clone)]
pub struct HybridScorer {
    pub mlp: Mlp,
    pub priors: PriorVector,
}

impl FrameScorer for HybridScorer {
    fn num_pdfs(&self) -> usize {
        self.priors.len()
    }

    fn score(&self, features: &FeatureMatrix) -> Result<Array2<f64>> {
        let post = self.mlp.forward(features.data().view())?;
        posteriors_to_loglik(post.view(), &self.priors, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub alpha: f64,
    pub acoustic_scale: f64,
    /// Log-domain beam; infinite disables pruning.
    pub beam: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            acoustic_scale: 0.1,
            beam: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub words: Vec<String>,
    pub alignment: Alignment,
    pub score: f64,
}

/// Decodes precomputed acoustic log-likelihoods (frames × pdfs).
pub fn decode_loglik(
    loglik: ArrayView2<'_, f64>,
    graph: &DecodeGraph,
    opts: &DecodeOptions,
    utt_id: &str,
    frame_shift_s: f64,
) -> Result<Decoded> {
    if !(opts.alpha > 0.0 && opts.alpha.is_finite()) {
        return Err(Error::InvalidAlpha(opts.alpha));
    }
    let scaled;
    let g = if opts.alpha == 1.0 {
        graph
    } else {
        scaled = graph.scaled(opts.alpha, false)?;
        &scaled
    };
    let ll = loglik.mapv(|v| v * opts.acoustic_scale);
    let beam = opts.beam.is_finite().then_some(opts.beam);
    let path = viterbi(ll.view(), &g.graph, beam)?;
    let words = path
        .labels
        .iter()
        .map(|&l| g.lexicon.word(l as usize).expect("labels are word ids").to_string())
        .collect();
    let frames = path
        .states
        .iter()
        .map(|&s| {
            let (phone, state) = g.info[s];
            AlignedFrame {
                phone,
                state,
                pdf: g.graph.pdf(s),
            }
        })
        .collect();
    Ok(Decoded {
        words,
        alignment: Alignment {
            utt_id: utt_id.to_string(),
            frame_shift_s,
            frames,
            silence_phone: g.hmms.silence,
        },
        score: path.score,
    })
}

pub fn decode_utterance(
    features: &FeatureMatrix,
    graph: &DecodeGraph,
    scorer: &dyn FrameScorer,
    opts: &DecodeOptions,
    utt_id: &str,
) -> Result<Decoded> {
    if scorer.num_pdfs() < graph.hmms.num_pdfs() {
        return Err(Error::DimMismatch {
            expected: graph.hmms.num_pdfs(),
            got: scorer.num_pdfs(),
        });
    }
    let ll = scorer.score(features)?;
    decode_loglik(ll.view(), graph, opts, utt_id, features.frame_shift_s())
}

/// Decodes with the given beam and doubles it on `NoPath`, ending with an
/// unpruned search.
pub fn decode_with_retry(
    loglik: ArrayView2<'_, f64>,
    graph: &DecodeGraph,
    opts: &DecodeOptions,
    utt_id: &str,
    frame_shift_s: f64,
) -> Result<Decoded> {
    let mut o = *opts;
    for _ in 0..3 {
        match decode_loglik(loglik, graph, &o, utt_id, frame_shift_s) {
            Err(Error::NoPath { .. }) if o.beam.is_finite() => o.beam *= 2.0,
            other => return other,
        }
    }
    o.beam = f64::INFINITY;
    decode_loglik(loglik, graph, &o, utt_id, frame_shift_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon(words: &[(&str, &[&str])]) -> Lexicon {
        Lexicon::new(
            words
                .iter()
                .map(|(w, p)| (w.to_string(), p.iter().map(|s| s.to_string()).collect())),
            "sil",
        )
        .unwrap()
    }

    fn hmms(phones: &[&str]) -> HmmSet {
        let p: Vec<String> = phones.iter().map(|s| s.to_string()).collect();
        HmmSet::with_topology(&p, Some("sil"), 1).unwrap()
    }

    #[test]
    fn graph_is_stochastic() {
        let lex = lexicon(&[("a", &["x"]), ("b", &["y", "x"])]);
        let h = hmms(&["x", "y"]);
        let g = build_graph(&lex, &h, None, GraphConfig::default()).unwrap();
        let mass = g.graph().outgoing_mass();
        for s in 0..g.graph().num_states() {
            let total = mass[s] + g.graph().final_weight(s).exp();
            assert!((total - 1.0).abs() < 1e-12, "state {s}: {total}");
        }
        let initial: f64 = (0..g.graph().num_states()).map(|s| g.graph().initial(s).0.exp()).sum();
        assert!((initial - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_word_repeats() {
        let lex = lexicon(&[("a", &["x"])]);
        let h = hmms(&["x"]);
        let g = build_graph(&lex, &h, None, GraphConfig { silence_prob: 0.0, end_prob: 0.5 }).unwrap();
        let x_pdf = h.phone(h.phone_id("x").unwrap()).states[0].pdf;
        // emissions favour a change of state every frame only through the word loop
        let ll = Array2::from_shape_fn((4, h.num_pdfs()), |(_, p)| if p == x_pdf { 0.0 } else { -50.0 });
        let opts = DecodeOptions {
            acoustic_scale: 1.0,
            ..Default::default()
        };
        let d = decode_loglik(ll.view(), &g, &opts, "u", 0.01).unwrap();
        assert!(!d.words.is_empty());
        assert!(d.words.iter().all(|w| w == "a"));
    }

    #[test]
    fn bigram_breaks_acoustic_tie() {
        let lex = lexicon(&[("a", &["x"]), ("b", &["y"])]);
        let mut h = hmms(&["x", "y"]);
        // short dwell so that leaving the first word beats staying in it
        for p in &mut h.phones {
            p.states[0] = crate::hmm::HmmState::new(0.1, p.states[0].pdf).unwrap();
        }
        let lm = WordLm::bigram(vec![vec![1.0, 0.0], vec![0.1, 0.9], vec![0.5, 0.5]]).unwrap();
        let g = build_graph(&lex, &h, Some(&lm), GraphConfig { silence_prob: 0.0, end_prob: 0.5 }).unwrap();
        let x = h.phone(h.phone_id("x").unwrap()).states[0].pdf;
        let y = h.phone(h.phone_id("y").unwrap()).states[0].pdf;
        // first frame is clearly x, second is equally x or y
        let mut ll = Array2::from_elem((2, h.num_pdfs()), -50.0);
        ll[[0, x]] = 0.0;
        ll[[1, x]] = 0.0;
        ll[[1, y]] = 0.0;
        let opts = DecodeOptions {
            acoustic_scale: 1.0,
            beam: f64::INFINITY,
            ..Default::default()
        };
        let d = decode_loglik(ll.view(), &g, &opts, "u", 0.01).unwrap();
        assert_eq!(d.words, ["a", "b"]);
    }

    #[test]
    fn alpha_one_is_identity() {
        let lex = lexicon(&[("a", &["x"]), ("b", &["y"])]);
        let h = HmmSet::with_topology(&["x".into(), "y".into()], Some("sil"), 3).unwrap();
        let g = build_graph(&lex, &h, None, GraphConfig::default()).unwrap();
        let ll = Array2::from_shape_fn((30, h.num_pdfs()), |(t, p)| -(((t * 7 + p * 3) % 11) as f64));
        let base = decode_loglik(ll.view(), &g, &DecodeOptions::default(), "u", 0.01).unwrap();
        let same = decode_loglik(
            ll.view(),
            &g,
            &DecodeOptions {
                alpha: 1.0,
                ..Default::default()
            },
            "u",
            0.01,
        )
        .unwrap();
        assert_eq!(base, same);
        assert!(matches!(
            decode_loglik(ll.view(), &g, &DecodeOptions { alpha: 0.0, ..Default::default() }, "u", 0.01),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn unknown_phone_is_rejected() {
        let lex = lexicon(&[("a", &["q"])]);
        let h = hmms(&["x"]);
        assert!(matches!(
            build_graph(&lex, &h, None, GraphConfig::default()),
            Err(Error::UnknownPhone(p)) if p == "q"
        ));
    }
}
