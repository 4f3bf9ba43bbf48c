use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Array2<f64>,
    vars: Array2<f64>,
    /// log w + normalization term per component.
    gconsts: Vec<f64>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Array2<f64>, vars: Array2<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.nrows() || means.dim() != vars.dim() {
            return Err(Error::InvalidConfig("inconsistent GMM parameter shapes".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig(format!("GMM weights sum to {total}")));
        }
        if vars.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("GMM variances must be positive".into()));
        }
        let dim = means.ncols() as f64;
        let gconsts = weights
            .iter()
            .zip(vars.rows())
            .map(|(w, v)| w.ln() - 0.5 * (dim * (2.0 * PI).ln() + v.iter().map(|x| x.ln()).sum::<f64>()))
            .collect();
        Ok(Self {
            weights,
            means,
            vars,
            gconsts,
        })
    }

    pub fn single(mean: Array1<f64>, var: Array1<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(
            vec![1.0],
            mean.into_shape_with_order((1, d)).expect("row"),
            var.into_shape_with_order((1, d)).expect("row"),
        )
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn vars(&self) -> &Array2<f64> {
        &self.vars
    }

    fn component_logliks(&self, x: ArrayView1<'_, f64>, out: &mut Vec<f64>) {
        out.clear();
        for c in 0..self.num_components() {
            let m = self.means.row(c);
            let v = self.vars.row(c);
            let mut q = 0.0;
            for ((xi, mi), vi) in x.iter().zip(m).zip(v) {
                let d = xi - mi;
                q += d * d / vi;
            }
            out.push(self.gconsts[c] - 0.5 * q);
        }
    }

    pub fn log_likelihood(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut buf = Vec::with_capacity(self.num_components());
        self.component_logliks(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Splits every component into two with means moved ±`perturb` standard
    /// deviations and halved weights.
    pub fn split(&self, perturb: f64) -> DiagGmm {
        let c = self.num_components();
        let d = self.dim();
        let mut weights = Vec::with_capacity(2 * c);
        let mut means = Array2::zeros((2 * c, d));
        let mut vars = Array2::zeros((2 * c, d));
        for k in 0..c {
            let sd = self.vars.row(k).mapv(f64::sqrt);
            for (j, sign) in [(2 * k, 1.0), (2 * k + 1, -1.0)] {
                weights.push(self.weights[k] / 2.0);
                means.row_mut(j).assign(&(&self.means.row(k) + &(&sd * (sign * perturb))));
                vars.row_mut(j).assign(&self.vars.row(k));
            }
        }
        DiagGmm::new(weights, means, vars).expect("split preserves validity")
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One mixture per pdf id.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSet {
    pub pdfs: Vec<DiagGmm>,
}

impl GmmSet {
    pub fn num_pdfs(&self) -> usize {
        self.pdfs.len()
    }

    pub fn dim(&self) -> usize {
        self.pdfs.first().map_or(0, DiagGmm::dim)
    }

    /// Frame log-likelihoods for every pdf (frames × pdfs).
    pub fn loglik_matrix(&self, f: &FeatureMatrix) -> Result<Array2<f64>> {
        if f.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: f.dim(),
            });
        }
        let x = f.data();
        let x2 = x.mapv(|v| v * v);
        let mut out = Array2::zeros((x.nrows(), self.num_pdfs()));
        for (p, gmm) in self.pdfs.iter().enumerate() {
            // -0.5 Σ (x² / v) + Σ (x μ / v) - 0.5 Σ μ² / v + gconst
            let inv = gmm.vars.mapv(|v| 1.0 / v);
            let mu_inv = &gmm.means * &inv;
            let consts: Vec<f64> = (0..gmm.num_components())
                .map(|c| gmm.gconsts[c] - 0.5 * (&gmm.means.row(c) * &mu_inv.row(c)).sum())
                .collect();
            let comp = x2.dot(&inv.t()) * -0.5 + x.dot(&mu_inv.t());
            let mut buf = Vec::with_capacity(consts.len());
            for (t, row) in comp.axis_iter(Axis(0)).enumerate() {
                buf.clear();
                buf.extend(row.iter().zip(&consts).map(|(a, b)| a + b));
                out[[t, p]] = log_sum_exp(&buf);
            }
        }
        Ok(out)
    }
}

/// Zeroth, first and second order occupancy statistics per pdf component.
/// Accumulators over disjoint data merge by addition.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmStats {
    pub counts: Vec<Vec<f64>>,
    pub sums: Vec<Array2<f64>>,
    pub sumsq: Vec<Array2<f64>>,
    pub log_likelihood: f64,
}

impl GmmStats {
    pub fn new(gmms: &GmmSet) -> Self {
        let d = gmms.dim();
        Self {
            counts: gmms.pdfs.iter().map(|g| vec![0.0; g.num_components()]).collect(),
            sums: gmms
                .pdfs
                .iter()
                .map(|g| Array2::zeros((g.num_components(), d)))
                .collect(),
            sumsq: gmms
                .pdfs
                .iter()
                .map(|g| Array2::zeros((g.num_components(), d)))
                .collect(),
            log_likelihood: 0.0,
        }
    }

    /// Adds one frame assigned to `pdf`, splitting it over components by
    /// their posterior under the current model.
    pub fn accumulate(&mut self, gmms: &GmmSet, pdf: usize, x: ArrayView1<'_, f64>) {
        let gmm = &gmms.pdfs[pdf];
        let mut ll = Vec::with_capacity(gmm.num_components());
        gmm.component_logliks(x, &mut ll);
        let total = log_sum_exp(&ll);
        self.log_likelihood += total;
        for (c, l) in ll.iter().enumerate() {
            let gamma = (l - total).exp();
            if gamma == 0.0 {
                continue;
            }
            self.counts[pdf][c] += gamma;
            let mut s = self.sums[pdf].row_mut(c);
            s.scaled_add(gamma, &x);
            let mut q = self.sumsq[pdf].row_mut(c);
            q.zip_mut_with(&x, |a, &b| *a += gamma * b * b);
        }
    }

    pub fn merge(&mut self, other: &GmmStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        self.log_likelihood += other.log_likelihood;
    }

    /// Maximum-likelihood update with variances floored at `var_floor`.
    /// Pdfs or components without data keep their previous parameters.
    pub fn update(&self, old: &GmmSet, var_floor: &Array1<f64>) -> Result<GmmSet> {
        let pdfs = old
            .pdfs
            .iter()
            .enumerate()
            .map(|(p, g)| {
                let total: f64 = self.counts[p].iter().sum();
                if total <= 0.0 {
                    return Ok(g.clone());
                }
                let mut weights = Vec::with_capacity(g.num_components());
                let mut means = g.means.clone();
                let mut vars = g.vars.clone();
                for c in 0..g.num_components() {
                    let n = self.counts[p][c];
                    weights.push(n / total);
                    if n < 1e-10 {
                        continue;
                    }
                    let mu = self.sums[p].row(c).mapv(|s| s / n);
                    let var = Array1::from_iter(
                        self.sumsq[p]
                            .row(c)
                            .iter()
                            .zip(&mu)
                            .zip(var_floor)
                            .map(|((q, m), fl)| (q / n - m * m).max(*fl)),
                    );
                    means.row_mut(c).assign(&mu);
                    vars.row_mut(c).assign(&var);
                }
                DiagGmm::new(weights, means, vars)
            })
            .collect::<Result<_>>()?;
        Ok(GmmSet { pdfs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use ndarray::array;

    #[test]
    fn single_gaussian_density() {
        let g = DiagGmm::single(array![0.0, 1.0], array![1.0, 4.0]).unwrap();
        let x = array![1.0, 3.0];
        let expected = -0.5 * (2.0 * (2.0 * PI).ln() + 4.0f64.ln()) - 0.5 * (1.0 + 1.0);
        assert!((g.log_likelihood(x.view()) - expected).abs() < 1e-12);
    }

    #[test]
    fn matrix_scoring_matches_pointwise() {
        let g1 = DiagGmm::new(
            vec![0.3, 0.7],
            array![[0.0, 1.0], [2.0, -1.0]],
            array![[1.0, 0.5], [2.0, 1.5]],
        )
        .unwrap();
        let g2 = DiagGmm::single(array![1.0, 1.0], array![0.3, 0.3]).unwrap();
        let set = GmmSet { pdfs: vec![g1, g2] };
        let f = FeatureMatrix::new(array![[0.5, 0.5], [3.0, -2.0], [-1.0, 4.0]], 0.01, FeatureKind::Mfcc).unwrap();
        let m = set.loglik_matrix(&f).unwrap();
        for t in 0..3 {
            for p in 0..2 {
                let direct = set.pdfs[p].log_likelihood(f.data().row(t));
                assert!((m[[t, p]] - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stats_update_is_sample_mle() {
        let g = DiagGmm::single(array![0.0], array![1.0]).unwrap();
        let set = GmmSet { pdfs: vec![g] };
        let mut st = GmmStats::new(&set);
        for x in [1.0, 2.0, 4.0] {
            st.accumulate(&set, 0, array![x].view());
        }
        let new = st.update(&set, &array![1e-3]).unwrap();
        let mean = 7.0 / 3.0;
        let var = (1.0 + 4.0 + 16.0) / 3.0 - mean * mean;
        assert!((new.pdfs[0].means()[[0, 0]] - mean).abs() < 1e-12);
        assert!((new.pdfs[0].vars()[[0, 0]] - var).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_applies() {
        let set = GmmSet {
            pdfs: vec![DiagGmm::single(array![0.0], array![1.0]).unwrap()],
        };
        let mut st = GmmStats::new(&set);
        for _ in 0..4 {
            st.accumulate(&set, 0, array![2.0].view());
        }
        let new = st.update(&set, &array![0.25]).unwrap();
        assert_eq!(new.pdfs[0].vars()[[0, 0]], 0.25);
    }

    #[test]
    fn merged_stats_match_sequential() {
        let set = GmmSet {
            pdfs: vec![DiagGmm::new(vec![0.5, 0.5], array![[-1.0], [1.0]], array![[1.0], [1.0]]).unwrap()],
        };
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut whole = GmmStats::new(&set);
        xs.iter().for_each(|x| whole.accumulate(&set, 0, array![*x].view()));
        let mut a = GmmStats::new(&set);
        let mut b = GmmStats::new(&set);
        xs[..17].iter().for_each(|x| a.accumulate(&set, 0, array![*x].view()));
        xs[17..].iter().for_each(|x| b.accumulate(&set, 0, array![*x].view()));
        let mut ba = b.clone();
        ba.merge(&a);
        a.merge(&b);
        for st in [&a, &ba] {
            for c in 0..2 {
                assert!((st.counts[0][c] - whole.counts[0][c]).abs() < 1e-10);
                assert!((st.sums[0][[c, 0]] - whole.sums[0][[c, 0]]).abs() < 1e-10);
                assert!((st.sumsq[0][[c, 0]] - whole.sumsq[0][[c, 0]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn split_doubles_components() {
        let g = DiagGmm::single(array![0.0, 0.0], array![4.0, 1.0]).unwrap();
        let s = g.split(0.5);
        assert_eq!(s.num_components(), 2);
        assert_eq!(s.weights(), &[0.5, 0.5]);
        assert_eq!(s.means().row(0).to_vec(), vec![1.0, 0.5]);
        assert_eq!(s.means().row(1).to_vec(), vec![-1.0, -0.5]);
    }
}
