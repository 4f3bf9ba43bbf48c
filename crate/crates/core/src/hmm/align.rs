use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::ArrayView2;

use super::graph::{viterbi, HmmGraph};
use super::train::GmmHmmModel;
use super::HmmSet;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedFrame {
    pub phone: usize,
    pub state: usize,
    pub pdf: usize,
}

/// Per-frame phone, state and pdf labels of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub utt_id: String,
    pub frame_shift_s: f64,
    pub frames: Vec<AlignedFrame>,
    pub silence_phone: Option<usize>,
}

/// A contiguous run of frames spent in one phone instance, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneSegment {
    pub phone: usize,
    pub start: usize,
    pub end: usize,
}

impl Alignment {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn pdfs(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.pdf).collect()
    }

    /// Phone instances in order. A new instance starts whenever the phone
    /// changes or the state index moves backwards.
    pub fn phone_segments(&self) -> Vec<PhoneSegment> {
        let mut out: Vec<PhoneSegment> = Vec::new();
        for (t, f) in self.frames.iter().enumerate() {
            match out.last_mut() {
                Some(seg) if seg.phone == f.phone && self.frames[t - 1].state <= f.state => {
                    seg.end = t + 1;
                }
                _ => out.push(PhoneSegment {
                    phone: f.phone,
                    start: t,
                    end: t + 1,
                }),
            }
        }
        out
    }

    /// Durations in frames of the non-silence phone instances.
    pub fn speech_phone_durations(&self) -> Vec<usize> {
        self.phone_segments()
            .iter()
            .filter(|s| Some(s.phone) != self.silence_phone)
            .map(|s| s.end - s.start)
            .collect()
    }
}

/// A left-to-right composition of phone HMMs with per-state bookkeeping.
#[derive(Debug, Clone)]
pub struct LinearGraph {
    pub graph: HmmGraph,
    /// (phone id, state index) of every graph state.
    pub info: Vec<(usize, usize)>,
    /// Frames needed to traverse the mandatory states.
    pub min_frames: usize,
}

/// Chains the HMMs of `phones`. With `optional_silence`, a silence state may
/// precede and follow the chain, each taken with probability one half.
pub fn linear_graph(phones: &[usize], hmms: &HmmSet, optional_silence: bool) -> Result<LinearGraph> {
    if phones.is_empty() {
        return Err(Error::EmptyInput("empty phone sequence"));
    }
    let half = 0.5f64.ln();
    let sil = if optional_silence { hmms.silence } else { None };
    let mut graph = HmmGraph::new();
    let mut info = Vec::new();
    let mut min_frames = 0;

    let lead = sil.map(|s| {
        let st = hmms.phone(s).states[0];
        let id = graph.add_state(st.pdf);
        info.push((s, 0));
        graph.add_arc(id, id, st.self_prob.ln(), None);
        graph.set_initial(id, half, None);
        (id, st)
    });

    // (state id, leave log prob) of the previous chain end
    let mut prev: Option<(usize, f64)> = lead.map(|(id, st)| (id, st.leave_prob.ln()));
    let mut first = true;
    for &p in phones {
        for (k, st) in hmms.phone(p).states.iter().enumerate() {
            let id = graph.add_state(st.pdf);
            info.push((p, k));
            min_frames += 1;
            graph.add_arc(id, id, st.self_prob.ln(), None);
            if first {
                graph.set_initial(id, if lead.is_some() { half } else { 0.0 }, None);
                if let Some((from, w)) = prev {
                    graph.add_arc(from, id, w, None);
                }
                first = false;
            } else if let Some((from, w)) = prev {
                graph.add_arc(from, id, w, None);
            }
            prev = Some((id, st.leave_prob.ln()));
        }
    }
    let (last, leave) = prev.expect("at least one state");
    match sil {
        Some(s) => {
            let st = hmms.phone(s).states[0];
            let id = graph.add_state(st.pdf);
            info.push((s, 0));
            graph.add_arc(id, id, st.self_prob.ln(), None);
            graph.add_arc(last, id, leave + half, None);
            graph.set_final(last, leave + half);
            graph.set_final(id, st.leave_prob.ln());
        }
        None => graph.set_final(last, leave),
    }
    Ok(LinearGraph {
        graph,
        info,
        min_frames,
    })
}

/// Viterbi alignment of a phone sequence against precomputed frame
/// log-likelihoods. Returns the alignment and its path score.
pub fn forced_align_loglik(
    loglik: ArrayView2<'_, f64>,
    phones: &[usize],
    hmms: &HmmSet,
    optional_silence: bool,
    utt_id: &str,
    frame_shift_s: f64,
) -> Result<(Alignment, f64)> {
    let lg = linear_graph(phones, hmms, optional_silence)?;
    if loglik.nrows() < lg.min_frames {
        return Err(Error::UtteranceTooShort {
            frames: loglik.nrows(),
            needed: lg.min_frames,
        });
    }
    let path = viterbi(loglik, &lg.graph, None)?;
    let frames = path
        .states
        .iter()
        .map(|&s| {
            let (phone, state) = lg.info[s];
            AlignedFrame {
                phone,
                state,
                pdf: lg.graph.pdf(s),
            }
        })
        .collect();
    Ok((
        Alignment {
            utt_id: utt_id.to_string(),
            frame_shift_s,
            frames,
            silence_phone: hmms.silence,
        },
        path.score,
    ))
}

/// Aligns a word transcript to features with a GMM-HMM system.
pub fn forced_align<S: AsRef<str>>(
    features: &FeatureMatrix,
    transcript: &[S],
    lexicon: &Lexicon,
    model: &GmmHmmModel,
    optional_silence: bool,
    utt_id: &str,
) -> Result<Alignment> {
    let phones = lexicon.expand_ids(transcript, &model.hmms)?;
    let loglik = model.gmms.loglik_matrix(features)?;
    forced_align_loglik(
        loglik.view(),
        &phones,
        &model.hmms,
        optional_silence,
        utt_id,
        features.frame_shift_s(),
    )
    .map(|(a, _)| a)
}

/// One line per utterance: `id<TAB>shift<TAB>silence-id|-<TAB>phone:state:pdf …`.
pub fn write_alignments(path: &Path, alignments: &[Alignment]) -> Result<()> {
    let mut out = String::new();
    for a in alignments {
        let sil = a.silence_phone.map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = write!(out, "{}\t{:?}\t{}\t", a.utt_id, a.frame_shift_s, sil);
        for (i, f) in a.frames.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}:{}:{}", f.phone, f.state, f.pdf);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_alignments(path: &Path) -> Result<Vec<Alignment>> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::parse(origin.clone(), i + 1, msg);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        let frame_shift_s = fields[1].parse().map_err(|_| err("bad frame shift"))?;
        let silence_phone = match fields[2] {
            "-" => None,
            s => Some(s.parse().map_err(|_| err("bad silence id"))?),
        };
        let frames = fields[3]
            .split_whitespace()
            .map(|tok| {
                let mut it = tok.split(':').map(str::parse::<usize>);
                match (it.next(), it.next(), it.next(), it.next()) {
                    (Some(Ok(phone)), Some(Ok(state)), Some(Ok(pdf)), None) => {
                        Ok(AlignedFrame { phone, state, pdf })
                    }
                    _ => Err(err("bad frame token")),
                }
            })
            .collect::<Result<_>>()?;
        out.push(Alignment {
            utt_id: fields[0].to_string(),
            frame_shift_s,
            frames,
            silence_phone,
        });
    }
    Ok(out)
}
