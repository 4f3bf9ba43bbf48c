//! Phone HMMs: topology, duration calculus, transition scaling, GMM
//! emissions, Viterbi search, forced alignment and Viterbi training.

mod align;
mod gmm;
mod graph;
mod io;
mod train;

pub use align::{
    forced_align, forced_align_loglik, linear_graph, read_alignments, write_alignments,
    AlignedFrame, Alignment, LinearGraph, PhoneSegment,
};
pub use gmm::{DiagGmm, GmmSet, GmmStats};
pub use graph::{viterbi, GraphArc, HmmGraph, ViterbiPath, LOG_ZERO_CUTOFF};
pub use io::{read_model, read_model_file, write_model, write_model_file};
pub use train::{
    estimate_transitions, train_gmm_hmm, GmmHmmModel, GmmTrainConfig, GmmTrainReport, TrainUtterance,
};

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Geometric dwell-time model of a single HMM state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationModel {
    self_prob: f64,
}

impl DurationModel {
    pub fn new(self_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&self_prob) {
            return Err(Error::InvalidProbability(self_prob));
        }
        Ok(Self { self_prob })
    }

    pub fn self_prob(&self) -> f64 {
        self.self_prob
    }

    /// Probability of staying exactly `n` frames: `p^(n-1) (1 - p)`.
    pub fn duration_pmf(&self, n: usize) -> Result<f64> {
        if n < 1 {
            return Err(Error::InvalidDuration(n));
        }
        let p = self.self_prob;
        Ok(p.powi((n - 1) as i32) * (1.0 - p))
    }

    /// Expected dwell time in frames, `1 / (1 - p)`.
    pub fn expected_duration(&self) -> Result<f64> {
        if self.self_prob >= 1.0 {
            return Err(Error::Divergent(self.self_prob));
        }
        Ok(1.0 / (1.0 - self.self_prob))
    }
}

pub fn duration_pmf(d: &DurationModel, n: usize) -> Result<f64> {
    d.duration_pmf(n)
}

pub fn expected_duration(d: &DurationModel) -> Result<f64> {
    d.expected_duration()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmState {
    pub self_prob: f64,
    pub leave_prob: f64,
    pub pdf: usize,
}

impl HmmState {
    pub fn new(self_prob: f64, pdf: usize) -> Result<Self> {
        if !(self_prob > 0.0 && self_prob < 1.0) {
            return Err(Error::InvalidProbability(self_prob));
        }
        Ok(Self {
            self_prob,
            leave_prob: 1.0 - self_prob,
            pdf,
        })
    }

    pub fn duration(&self) -> DurationModel {
        DurationModel {
            self_prob: self.self_prob,
        }
    }
}

/// Strict left-to-right phone model.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneHmm {
    pub phone: String,
    pub states: Vec<HmmState>,
}

impl PhoneHmm {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Expected number of frames spent in the whole phone.
    pub fn expected_duration(&self) -> Result<f64> {
        self.states
            .iter()
            .map(|s| s.duration().expected_duration())
            .sum()
    }
}

/// Multiplies every self-loop probability by `alpha` and renormalizes each
/// state so that self and leave probabilities again sum to one.
pub fn scale_self_transitions(h: &PhoneHmm, alpha: f64) -> Result<PhoneHmm> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let states = h
        .states
        .iter()
        .map(|s| {
            let scaled = alpha * s.self_prob;
            if !scaled.is_finite() {
                return Err(Error::InvalidAlpha(alpha));
            }
            let norm = scaled + s.leave_prob;
            Ok(HmmState {
                self_prob: scaled / norm,
                leave_prob: s.leave_prob / norm,
                pdf: s.pdf,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PhoneHmm {
        phone: h.phone.clone(),
        states,
    })
}

/// The phone inventory with one HMM per phone.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmSet {
    pub phones: Vec<PhoneHmm>,
    pub silence: Option<usize>,
    index: HashMap<String, usize>,
}

impl HmmSet {
    pub fn new(phones: Vec<PhoneHmm>, silence: Option<&str>) -> Result<Self> {
        let index: HashMap<String, usize> = phones
            .iter()
            .enumerate()
            .map(|(i, p)| (p.phone.clone(), i))
            .collect();
        if index.len() != phones.len() {
            return Err(Error::InvalidConfig("duplicate phone names".into()));
        }
        if phones.iter().any(|p| p.states.is_empty()) {
            return Err(Error::InvalidConfig("phone HMM without states".into()));
        }
        let silence = match silence {
            Some(name) => Some(
                *index
                    .get(name)
                    .ok_or_else(|| Error::UnknownPhone(name.to_string()))?,
            ),
            None => None,
        };
        Ok(Self {
            phones,
            silence,
            index,
        })
    }

    /// Flat-start topology: `states_per_phone` states for every speech phone,
    /// one state for silence, self-loops at 0.5 and consecutive pdf ids.
    pub fn with_topology(
        speech_phones: &[String],
        silence: Option<&str>,
        states_per_phone: usize,
    ) -> Result<Self> {
        if states_per_phone == 0 {
            return Err(Error::InvalidConfig("phones need at least one state".into()));
        }
        let mut pdf = 0;
        let mut phones = Vec::new();
        let mut make = |name: &str, n: usize| -> Result<PhoneHmm> {
            let states = (0..n)
                .map(|_| {
                    pdf += 1;
                    HmmState::new(0.5, pdf - 1)
                })
                .collect::<Result<_>>()?;
            Ok(PhoneHmm {
                phone: name.to_string(),
                states,
            })
        };
        if let Some(sil) = silence {
            phones.push(make(sil, 1)?);
        }
        for p in speech_phones {
            phones.push(make(p, states_per_phone)?);
        }
        Self::new(phones, silence)
    }

    pub fn phone_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn phone(&self, id: usize) -> &PhoneHmm {
        &self.phones[id]
    }

    pub fn num_pdfs(&self) -> usize {
        self.phones
            .iter()
            .flat_map(|p| p.states.iter().map(|s| s.pdf + 1))
            .max()
            .unwrap_or(0)
    }

    /// Applies [`scale_self_transitions`] to every phone; silence is left
    /// untouched unless `include_silence` is set.
    pub fn scaled(&self, alpha: f64, include_silence: bool) -> Result<HmmSet> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let phones = self
            .phones
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if Some(i) == self.silence && !include_silence {
                    Ok(p.clone())
                } else {
                    scale_self_transitions(p, alpha)
                }
            })
            .collect::<Result<_>>()?;
        Ok(HmmSet {
            phones,
            silence: self.silence,
            index: self.index.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phone(p: &[f64]) -> PhoneHmm {
        PhoneHmm {
            phone: "a".into(),
            states: p
                .iter()
                .enumerate()
                .map(|(i, &p)| HmmState::new(p, i).unwrap())
                .collect(),
        }
    }

    #[test]
    fn pmf_examples() {
        let d = DurationModel::new(0.5).unwrap();
        assert_eq!(d.duration_pmf(1).unwrap(), 0.5);
        assert_eq!(d.duration_pmf(2).unwrap(), 0.25);
        assert!(matches!(d.duration_pmf(0), Err(Error::InvalidDuration(0))));
        assert_eq!(DurationModel::new(0.0).unwrap().duration_pmf(1).unwrap(), 1.0);
    }

    #[test]
    fn pmf_mass_bound() {
        let d = DurationModel::new(0.9).unwrap();
        let mass: f64 = (1..=200).map(|n| d.duration_pmf(n).unwrap()).sum();
        // tail beyond 200 frames is 0.9^200 exactly
        assert!(mass >= 1.0 - 0.9f64.powi(200) - 1e-15);
    }

    #[test]
    fn expected_duration_examples() {
        assert_abs_diff_eq!(
            DurationModel::new(0.8).unwrap().expected_duration().unwrap(),
            5.0,
            epsilon = 1e-12
        );
        assert_eq!(DurationModel::new(0.0).unwrap().expected_duration().unwrap(), 1.0);
        assert!(matches!(
            DurationModel::new(1.0).unwrap().expected_duration(),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn expected_duration_matches_sampling() {
        let p = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let mut total = 0u64;
        for _ in 0..n {
            let mut frames = 1u64;
            while rng.random::<f64>() < p {
                frames += 1;
            }
            total += frames;
        }
        let mean = total as f64 / n as f64;
        let expected = DurationModel::new(p).unwrap().expected_duration().unwrap();
        assert_abs_diff_eq!(expected, 10.0, epsilon = 1e-12);
        assert!((mean - expected).abs() / expected < 0.01, "{mean}");
    }

    #[test]
    fn scaling_examples() {
        let h = phone(&[0.8, 0.6, 0.7]);
        assert_eq!(scale_self_transitions(&h, 1.0).unwrap(), h);

        let single = phone(&[0.8]);
        let half = scale_self_transitions(&single, 0.5).unwrap();
        assert_abs_diff_eq!(half.states[0].self_prob, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.states[0].leave_prob, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(half.expected_duration().unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(single.expected_duration().unwrap(), 5.0, epsilon = 1e-12);

        let slow = scale_self_transitions(&single, 1.01162).unwrap();
        let expected = 1.01162 * 0.8 / (1.01162 * 0.8 + 0.2);
        assert_abs_diff_eq!(slow.states[0].self_prob, expected, epsilon = 1e-15);
        assert!((slow.states[0].self_prob - 0.801842).abs() < 1e-6);

        assert!(matches!(scale_self_transitions(&h, 0.0), Err(Error::InvalidAlpha(_))));
        assert!(matches!(scale_self_transitions(&h, -1.0), Err(Error::InvalidAlpha(_))));
    }

    #[test]
    fn silence_exempt_by_default() {
        let set = HmmSet::with_topology(&["a".into(), "b".into()], Some("sil"), 3).unwrap();
        let scaled = set.scaled(0.5, false).unwrap();
        let sil = set.silence.unwrap();
        assert_eq!(scaled.phones[sil], set.phones[sil]);
        assert_ne!(scaled.phones[1], set.phones[1]);
        let all = set.scaled(0.5, true).unwrap();
        assert_ne!(all.phones[sil], set.phones[sil]);
        assert_eq!(set.num_pdfs(), 7);
    }

    proptest! {
        #[test]
        fn pmf_partial_sum_closed_form(p in 0.01f64..0.99, n in 1usize..300) {
            let d = DurationModel::new(p).unwrap();
            let sum: f64 = (1..=n).map(|k| d.duration_pmf(k).unwrap()).sum();
            prop_assert!((sum - (1.0 - p.powi(n as i32))).abs() < 1e-12);
        }

        #[test]
        fn scaling_group_property(p in proptest::collection::vec(0.01f64..0.99, 1..5), alpha in 0.05f64..20.0) {
            let h = phone(&p);
            let back = scale_self_transitions(&scale_self_transitions(&h, alpha).unwrap(), 1.0 / alpha).unwrap();
            for (a, b) in h.states.iter().zip(&back.states) {
                prop_assert!((a.self_prob - b.self_prob).abs() < 1e-12);
                prop_assert!((a.leave_prob - b.leave_prob).abs() < 1e-12);
            }
            for s in scale_self_transitions(&h, alpha).unwrap().states {
                prop_assert!((s.self_prob + s.leave_prob - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn expected_duration_monotone_in_alpha(p in 0.05f64..0.95, a in 0.1f64..0.99, b in 1.01f64..10.0) {
            let h = phone(&[p]);
            let base = h.expected_duration().unwrap();
            let lo = scale_self_transitions(&h, a).unwrap().expected_duration().unwrap();
            let hi = scale_self_transitions(&h, b).unwrap().expected_duration().unwrap();
            prop_assert!(lo < base && base < hi);
        }
    }
}
