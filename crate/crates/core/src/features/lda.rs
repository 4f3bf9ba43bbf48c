use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Linear projection estimated by linear discriminant analysis.
///
/// The first `num_discriminant` rows solve the generalized eigenproblem of
/// between- against within-class scatter. When more output dimensions are
/// requested than there are discriminant directions (classes minus one), the
/// remaining rows come from the leading within-class principal directions,
/// made orthogonal to the discriminant rows in the within-class metric. Every
/// row is scaled so the projected within-class covariance is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    matrix: Array2<f64>,
    pub class_means: Array2<f64>,
    pub class_ids: Vec<usize>,
    /// Generalized eigenvalues of the discriminant rows, descending.
    pub eigenvalues: Vec<f64>,
    pub num_discriminant: usize,
    /// Rows filled from the residual space.
    pub num_filled: usize,
    /// Condition number of the regularized within-class covariance.
    pub condition_number: f64,
    /// Ridge added to the within-class covariance diagonal.
    pub ridge: f64,
}

impl LdaTransform {
    /// Wraps an explicit K×D matrix.
    pub fn from_matrix(matrix: Array2<f64>) -> Self {
        let d = matrix.ncols();
        Self {
            matrix,
            class_means: Array2::zeros((0, d)),
            class_ids: Vec::new(),
            eigenvalues: Vec::new(),
            num_discriminant: 0,
            num_filled: 0,
            condition_number: f64::NAN,
            ridge: 0.0,
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Streaming sufficient statistics for [`estimate_lda`].
#[derive(Debug, Clone)]
pub struct LdaAccumulator {
    dim: usize,
    count: f64,
    sum: Array1<f64>,
    scatter: Array2<f64>,
    classes: BTreeMap<usize, (f64, Array1<f64>)>,
}

impl LdaAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0.0,
            sum: Array1::zeros(dim),
            scatter: Array2::zeros((dim, dim)),
            classes: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, f: &FeatureMatrix, labels: &[usize]) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: f.dim(),
            });
        }
        if labels.len() != f.num_frames() {
            return Err(Error::DimMismatch {
                expected: f.num_frames(),
                got: labels.len(),
            });
        }
        let x = f.data();
        self.scatter += &x.t().dot(x);
        self.sum += &x.sum_axis(Axis(0));
        self.count += x.nrows() as f64;
        for (row, &label) in x.rows().into_iter().zip(labels) {
            let entry = self
                .classes
                .entry(label)
                .or_insert_with(|| (0.0, Array1::zeros(self.dim)));
            entry.0 += 1.0;
            entry.1 += &row;
        }
        Ok(())
    }

    /// Combines statistics gathered on disjoint data.
    pub fn merge(&mut self, other: &LdaAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.count += other.count;
        self.sum += &other.sum;
        self.scatter += &other.scatter;
        for (label, (n, s)) in &other.classes {
            let entry = self
                .classes
                .entry(*label)
                .or_insert_with(|| (0.0, Array1::zeros(self.dim)));
            entry.0 += n;
            entry.1 += s;
        }
        Ok(())
    }

    pub fn estimate(&self, out_dim: usize) -> Result<LdaTransform> {
        let d = self.dim;
        if out_dim == 0 || out_dim > d {
            return Err(Error::InvalidConfig(format!(
                "LDA output dimension {out_dim} must lie in 1..={d}"
            )));
        }
        if self.classes.len() < 2 {
            return Err(Error::SingularScatter(format!(
                "{} class(es) observed; between-class scatter needs at least two",
                self.classes.len()
            )));
        }
        let n = self.count;
        let mean = &self.sum / n;
        let mut total = &self.scatter / n;
        for i in 0..d {
            for j in 0..d {
                total[[i, j]] -= mean[i] * mean[j];
            }
        }
        let mut between = Array2::<f64>::zeros((d, d));
        let mut class_means = Array2::zeros((self.classes.len(), d));
        for (k, (nc, sc)) in self.classes.values().enumerate() {
            let mu = sc / *nc;
            let diff = &mu - &mean;
            let w = nc / n;
            for i in 0..d {
                for j in 0..d {
                    between[[i, j]] += w * diff[i] * diff[j];
                }
            }
            class_means.row_mut(k).assign(&mu);
        }
        let within = &total - &between;

        let within_m = to_dmatrix(&within).symmetrize();
        let ridge = 1e-6 * within_m.trace().max(0.0) / d as f64;
        let ridge = if ridge > 0.0 { ridge } else { 1e-12 };
        let mut regularized = within_m.clone();
        for i in 0..d {
            regularized[(i, i)] += ridge;
        }
        let chol = regularized.clone().cholesky().ok_or_else(|| {
            Error::SingularScatter("within-class covariance is not positive definite".into())
        })?;
        let l = chol.l();

        let cov_eig = SymmetricEigen::new(regularized.clone());
        let (emin, emax) = cov_eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition_number = emax / emin.max(f64::MIN_POSITIVE);

        let between_m = to_dmatrix(&between).symmetrize();
        let a = l
            .solve_lower_triangular(&between_m)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let whitened = l
            .solve_lower_triangular(&a.transpose())
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?
            .symmetrize();
        let eig = SymmetricEigen::new(whitened);
        let order = descending(eig.eigenvalues.as_slice());
        let lt = l.transpose();

        let max_disc = out_dim.min(self.classes.len() - 1);
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut rows: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(out_dim);
        let mut eigenvalues = Vec::new();
        for &idx in order.iter().take(max_disc) {
            let lambda = eig.eigenvalues[idx];
            if lambda <= 1e-10 * top.max(1e-300) {
                break;
            }
            let u = eig.eigenvectors.column(idx).into_owned();
            let v = lt
                .solve_upper_triangular(&u)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            rows.push(v);
            eigenvalues.push(lambda);
        }
        let num_discriminant = rows.len();

        if rows.len() < out_dim {
            let pca = SymmetricEigen::new(within_m.clone());
            for idx in descending(pca.eigenvalues.as_slice()) {
                if rows.len() == out_dim {
                    break;
                }
                let mut v = pca.eigenvectors.column(idx).into_owned();
                let norm0 = v.dot(&(&regularized * &v)).sqrt();
                for r in &rows {
                    let proj = r.dot(&(&regularized * &v));
                    v -= r * proj;
                }
                let norm = v.dot(&(&regularized * &v)).sqrt();
                if !(norm > 1e-8 * norm0) {
                    continue;
                }
                rows.push(v / norm);
            }
        }
        if rows.len() < out_dim {
            return Err(Error::SingularScatter(format!(
                "only {} independent directions for {out_dim} outputs",
                rows.len()
            )));
        }

        let mut matrix = Array2::zeros((out_dim, d));
        for (k, r) in rows.iter().enumerate() {
            for j in 0..d {
                matrix[[k, j]] = r[j];
            }
        }
        Ok(LdaTransform {
            matrix,
            class_means,
            class_ids: self.classes.keys().copied().collect(),
            eigenvalues,
            num_discriminant,
            num_filled: out_dim - num_discriminant,
            condition_number,
            ridge,
        })
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

trait Symmetrize {
    fn symmetrize(self) -> Self;
}

impl Symmetrize for DMatrix<f64> {
    fn symmetrize(self) -> Self {
        (&self + self.transpose()) * 0.5
    }
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Estimates an LDA projection from labelled frames.
pub fn estimate_lda(
    features: &[FeatureMatrix],
    labels: &[Vec<usize>],
    out_dim: usize,
) -> Result<LdaTransform> {
    let first = features
        .first()
        .ok_or(Error::EmptyInput("no feature matrices for LDA"))?;
    if features.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let mut acc = LdaAccumulator::new(first.dim());
    for (f, l) in features.iter().zip(labels) {
        acc.add(f, l)?;
    }
    acc.estimate(out_dim)
}

/// Applies the projection to every frame.
pub fn apply_lda(t: &LdaTransform, f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.dim() != t.in_dim() {
        return Err(Error::DimMismatch {
            expected: t.in_dim(),
            got: f.dim(),
        });
    }
    let data = f.data().dot(&t.matrix.t());
    Ok(FeatureMatrix::from_parts(
        data,
        f.frame_shift_s(),
        FeatureKind::LdaProjected,
    ))
}

/// `LDA v1`, then `OUT IN`, then OUT rows of IN values.
pub fn write_lda_file(path: &Path, t: &LdaTransform) -> Result<()> {
    let mut out = format!("LDA v1\n{} {}\n", t.out_dim(), t.in_dim());
    for row in t.matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_lda_file(path: &Path) -> Result<LdaTransform> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("LDA v1") {
        return Err(Error::parse(&origin, 1, "missing LDA v1 header"));
    }
    let dims: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(&origin, 2, "bad dimensions"))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::parse(&origin, 2, "expected `OUT IN`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(&origin, r + 3, "unexpected end of file"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(&origin, r + 3, "bad number"))?;
        if vals.len() != cols {
            return Err(Error::parse(&origin, r + 3, format!("expected {cols} values")));
        }
        data.extend(vals);
    }
    let m = Array2::from_shape_vec((rows, cols), data).expect("sizes checked");
    Ok(LdaTransform::from_matrix(m))
}
