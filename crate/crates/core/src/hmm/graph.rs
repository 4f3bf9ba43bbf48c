use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Log weights below this are treated as impossible.
pub const LOG_ZERO_CUTOFF: f64 = -700.0;

fn flush(w: f64) -> f64 {
    if w < LOG_ZERO_CUTOFF {
        f64::NEG_INFINITY
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphArc {
    pub from: usize,
    pub log_weight: f64,
    /// Output symbol emitted when the arc is taken.
    pub label: Option<u32>,
}

/// A state graph where every state emits through one pdf. Arcs are stored by
/// destination, which is the order Viterbi consumes them.
#[derive(Debug, Clone, Default)]
pub struct HmmGraph {
    pdfs: Vec<usize>,
    incoming: Vec<Vec<GraphArc>>,
    initial: Vec<(f64, Option<u32>)>,
    finals: Vec<f64>,
}

impl HmmGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self, pdf: usize) -> usize {
        self.pdfs.push(pdf);
        self.incoming.push(Vec::new());
        self.initial.push((f64::NEG_INFINITY, None));
        self.finals.push(f64::NEG_INFINITY);
        self.pdfs.len() - 1
    }

    pub fn add_arc(&mut self, from: usize, to: usize, log_weight: f64, label: Option<u32>) {
        assert!(from < self.pdfs.len() && to < self.pdfs.len(), "arc endpoint out of range");
        let log_weight = flush(log_weight);
        if log_weight == f64::NEG_INFINITY {
            return;
        }
        self.incoming[to].push(GraphArc {
            from,
            log_weight,
            label,
        });
    }

    pub fn set_initial(&mut self, state: usize, log_weight: f64, label: Option<u32>) {
        self.initial[state] = (flush(log_weight), label);
    }

    pub fn set_final(&mut self, state: usize, log_weight: f64) {
        self.finals[state] = flush(log_weight);
    }

    pub fn num_states(&self) -> usize {
        self.pdfs.len()
    }

    pub fn pdf(&self, state: usize) -> usize {
        self.pdfs[state]
    }

    pub fn incoming(&self, state: usize) -> &[GraphArc] {
        &self.incoming[state]
    }

    pub fn initial(&self, state: usize) -> (f64, Option<u32>) {
        self.initial[state]
    }

    pub fn final_weight(&self, state: usize) -> f64 {
        self.finals[state]
    }

    /// Sum of outgoing arc probabilities per state (excluding final weights).
    pub fn outgoing_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.num_states()];
        for arcs in &self.incoming {
            for a in arcs {
                mass[a.from] += a.log_weight.exp();
            }
        }
        mass
    }

    pub fn max_pdf(&self) -> Option<usize> {
        self.pdfs.iter().copied().max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// Labels of the arcs taken, in time order.
    pub labels: Vec<u32>,
    pub score: f64,
}

const INITIAL: u32 = u32::MAX;

/// Best state sequence through `graph` for the frame log-likelihoods
/// `loglik` (frames × pdfs).
///
/// Ties between predecessors resolve to the lowest source state index, and
/// ties between end states to the lowest state index. With `beam` set,
/// states scoring more than `beam` below the frame's best are dropped.
pub fn viterbi(loglik: ArrayView2<'_, f64>, graph: &HmmGraph, beam: Option<f64>) -> Result<ViterbiPath> {
    let frames = loglik.nrows();
    let n = graph.num_states();
    if n == 0 {
        return Err(Error::EmptyInput("graph has no states"));
    }
    if frames == 0 {
        return Err(Error::EmptyInput("no frames to decode"));
    }
    if let Some(max_pdf) = graph.max_pdf() {
        if max_pdf >= loglik.ncols() {
            return Err(Error::DimMismatch {
                expected: max_pdf + 1,
                got: loglik.ncols(),
            });
        }
    }
    let emission = |t: usize, s: usize| flush(loglik[[t, graph.pdfs[s]]]);

    let mut back = vec![INITIAL; frames * n];
    let mut prev: Vec<f64> = (0..n)
        .map(|s| graph.initial[s].0 + emission(0, s))
        .collect();
    prune(&mut prev, beam);
    let mut cur = vec![f64::NEG_INFINITY; n];

    for t in 1..frames {
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_from = usize::MAX;
            let mut best_arc = INITIAL;
            for (k, arc) in graph.incoming[s].iter().enumerate() {
                let score = prev[arc.from] + arc.log_weight;
                if score == f64::NEG_INFINITY {
                    continue;
                }
                if score > best || (score == best && arc.from < best_from) {
                    best = score;
                    best_from = arc.from;
                    best_arc = k as u32;
                }
            }
            cur[s] = if best == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                best + emission(t, s)
            };
            back[t * n + s] = best_arc;
        }
        prune(&mut cur, beam);
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut end = usize::MAX;
    let mut score = f64::NEG_INFINITY;
    for s in 0..n {
        let v = prev[s] + graph.finals[s];
        if v > score {
            score = v;
            end = s;
        }
    }
    if score == f64::NEG_INFINITY || score.is_nan() {
        return Err(Error::NoPath { frames });
    }

    let mut states = vec![0; frames];
    let mut labels = Vec::new();
    let mut s = end;
    for t in (0..frames).rev() {
        states[t] = s;
        if t == 0 {
            if let Some(l) = graph.initial[s].1 {
                labels.push(l);
            }
            break;
        }
        let arc = &graph.incoming[s][back[t * n + s] as usize];
        if let Some(l) = arc.label {
            labels.push(l);
        }
        s = arc.from;
    }
    labels.reverse();
    Ok(ViterbiPath {
        states,
        labels,
        score,
    })
}

fn prune(scores: &mut [f64], beam: Option<f64>) {
    let Some(beam) = beam.filter(|b| b.is_finite()) else {
        return;
    };
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return;
    }
    for v in scores.iter_mut() {
        if *v < best - beam {
            *v = f64::NEG_INFINITY;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path_score(loglik: &Array2<f64>, g: &HmmGraph, path: &[usize]) -> f64 {
        let arc = |from: usize, to: usize| {
            g.incoming(to)
                .iter()
                .filter(|a| a.from == from)
                .map(|a| a.log_weight)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut score = g.initial(path[0]).0 + loglik[[0, g.pdf(path[0])]];
        for t in 1..path.len() {
            score += arc(path[t - 1], path[t]) + loglik[[t, g.pdf(path[t])]];
        }
        score + g.final_weight(path[path.len() - 1])
    }

    /// Exhaustive search over every state sequence of length T.
    fn brute_force(loglik: &Array2<f64>, g: &HmmGraph) -> Option<(Vec<usize>, f64)> {
        let t_len = loglik.nrows();
        let n = g.num_states();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for code in 0..n.pow(t_len as u32) {
            let mut path = Vec::with_capacity(t_len);
            let mut c = code;
            for _ in 0..t_len {
                path.push(c % n);
                c /= n;
            }
            path.reverse();
            let score = path_score(loglik, g, &path);
            if score == f64::NEG_INFINITY {
                continue;
            }
            if best.as_ref().is_none_or(|(_, b)| score > *b) {
                best = Some((path, score));
            }
        }
        best
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (HmmGraph, Array2<f64>) {
        let n = rng.random_range(1..=4);
        let pdfs = rng.random_range(1..=3);
        let t = rng.random_range(1..=8);
        let mut g = HmmGraph::new();
        for _ in 0..n {
            g.add_state(rng.random_range(0..pdfs));
        }
        for s in 0..n {
            if rng.random_bool(0.6) || s == 0 {
                g.set_initial(s, -rng.random::<f64>() * 3.0, None);
            }
            if rng.random_bool(0.6) || s == n - 1 {
                g.set_final(s, -rng.random::<f64>() * 3.0);
            }
            for d in 0..n {
                if rng.random_bool(0.5) {
                    g.add_arc(s, d, -rng.random::<f64>() * 4.0, None);
                }
            }
        }
        let ll = Array2::from_shape_fn((t, pdfs), |_| -rng.random::<f64>() * 10.0);
        (g, ll)
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let (g, ll) = random_instance(&mut rng);
            let oracle = brute_force(&ll, &g);
            match (viterbi(ll.view(), &g, None), oracle) {
                (Ok(v), Some((path, score))) => {
                    assert!((v.score - score).abs() < 1e-9);
                    // paths differing only by arc order can tie up to rounding
                    if v.states != path {
                        assert!((path_score(&ll, &g, &v.states) - score).abs() < 1e-9);
                    }
                }
                (Err(Error::NoPath { .. }), None) => {}
                (got, want) => panic!("viterbi {got:?} vs oracle {want:?}"),
            }
        }
    }

    #[test]
    fn single_state_repeats() {
        let mut g = HmmGraph::new();
        let s = g.add_state(0);
        g.set_initial(s, 0.0, None);
        g.set_final(s, 0.0);
        g.add_arc(s, s, 0.5f64.ln(), None);
        let ll = Array2::from_elem((6, 1), -1.0);
        let v = viterbi(ll.view(), &g, None).unwrap();
        assert_eq!(v.states, vec![0; 6]);
    }

    #[test]
    fn ties_go_to_lower_state() {
        let mut g = HmmGraph::new();
        for _ in 0..3 {
            let s = g.add_state(0);
            g.set_initial(s, 0.0, None);
            g.set_final(s, 0.0);
        }
        for a in 0..3 {
            for b in 0..3 {
                g.add_arc(a, b, 0.0, None);
            }
        }
        let ll = Array2::zeros((4, 1));
        let v = viterbi(ll.view(), &g, None).unwrap();
        assert_eq!(v.states, vec![0, 0, 0, 0]);
    }

    #[test]
    fn no_path_when_too_short() {
        let mut g = HmmGraph::new();
        let a = g.add_state(0);
        let b = g.add_state(0);
        g.set_initial(a, 0.0, None);
        g.set_final(b, 0.0);
        g.add_arc(a, b, 0.0, None);
        let ll = Array2::zeros((1, 1));
        assert!(matches!(viterbi(ll.view(), &g, None), Err(Error::NoPath { frames: 1 })));
    }

    #[test]
    fn labels_follow_arcs() {
        let mut g = HmmGraph::new();
        let a = g.add_state(0);
        let b = g.add_state(1);
        g.set_initial(a, 0.0, Some(7));
        g.add_arc(a, a, 0.0, None);
        g.add_arc(a, b, 0.0, Some(9));
        g.add_arc(b, b, 0.0, None);
        g.set_final(b, 0.0);
        let ll = ndarray::array![[0.0, -5.0], [0.0, -5.0], [-5.0, 0.0]];
        let v = viterbi(ll.view(), &g, None).unwrap();
        assert_eq!(v.states, vec![0, 0, 1]);
        assert_eq!(v.labels, vec![7, 9]);
    }

    #[test]
    fn score_never_rises_when_path_emission_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let (g, mut ll) = random_instance(&mut rng);
            let Ok(v) = viterbi(ll.view(), &g, None) else { continue };
            let t = rng.random_range(0..ll.nrows());
            let pdf = g.pdf(v.states[t]);
            ll[[t, pdf]] -= rng.random::<f64>() * 5.0;
            let after = viterbi(ll.view(), &g, None).unwrap();
            assert!(after.score <= v.score + 1e-12);
        }
    }
}
