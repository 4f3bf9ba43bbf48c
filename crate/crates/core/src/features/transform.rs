use ndarray::{s, Array2, Axis};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Scaling applied to the rate-of-speech value before it is appended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RosNorm {
    Identity,
    /// Standardize with statistics gathered on the training set.
    ZScore { mean: f64, std: f64 },
}

impl RosNorm {
    pub fn apply(&self, ros: f64) -> f64 {
        match *self {
            RosNorm::Identity => ros,
            RosNorm::ZScore { mean, std } => (ros - mean) / std,
        }
    }

    /// Z-score normalization fitted to a set of training ROS values.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("no ROS values to fit normalization"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(RosNorm::ZScore { mean, std })
    }
}

/// Per-utterance mean subtraction in every dimension.
pub fn apply_cmn(f: &FeatureMatrix) -> FeatureMatrix {
    let mean = f.data().mean_axis(Axis(0)).expect("at least one frame");
    let data = f.data() - &mean;
    FeatureMatrix::from_parts(data, f.frame_shift_s(), f.kind())
}

/// Appends one column holding the (normalized) utterance ROS to every frame.
pub fn augment_ros(f: &FeatureMatrix, ros: f64, norm: RosNorm) -> Result<FeatureMatrix> {
    let value = norm.apply(ros);
    if !ros.is_finite() || !value.is_finite() {
        return Err(Error::InvalidRos(ros));
    }
    let (t, d) = f.data().dim();
    let mut data = Array2::from_elem((t, d + 1), value);
    data.slice_mut(s![.., 0..d]).assign(f.data());
    Ok(FeatureMatrix::from_parts(data, f.frame_shift_s(), f.kind()))
}

/// Stacks `left` preceding and `right` following frames around every frame,
/// replicating the first and last frames at the edges.
pub fn splice(f: &FeatureMatrix, left: usize, right: usize) -> FeatureMatrix {
    let (t, d) = f.data().dim();
    let width = left + right + 1;
    let mut data = Array2::zeros((t, d * width));
    let last = t as isize - 1;
    for row in 0..t {
        for (k, offset) in (-(left as isize)..=right as isize).enumerate() {
            let src = (row as isize + offset).clamp(0, last) as usize;
            data.slice_mut(s![row, k * d..(k + 1) * d])
                .assign(&f.data().row(src));
        }
    }
    FeatureMatrix::from_parts(data, f.frame_shift_s(), FeatureKind::Spliced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn fm(data: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(data, 0.01, FeatureKind::Fbank).unwrap()
    }

    #[test]
    fn cmn_small_example() {
        let out = apply_cmn(&fm(array![[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(out.data(), &array![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn cmn_single_frame_is_zero() {
        let out = apply_cmn(&fm(array![[5.0, -3.0, 2.0]]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ros_column_identity_and_zscore() {
        let f = fm(Array2::zeros((3, 40)));
        let a = augment_ros(&f, 6.0, RosNorm::Identity).unwrap();
        assert_eq!(a.dim(), 41);
        assert!(a.data().column(40).iter().all(|&v| v == 6.0));
        let z = augment_ros(&f, 9.0, RosNorm::ZScore { mean: 7.0, std: 2.0 }).unwrap();
        assert!(z.data().column(40).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_finite_ros_is_rejected() {
        let f = fm(Array2::zeros((2, 2)));
        assert!(matches!(
            augment_ros(&f, f64::NAN, RosNorm::Identity),
            Err(Error::InvalidRos(_))
        ));
        assert!(matches!(
            augment_ros(&f, f64::INFINITY, RosNorm::Identity),
            Err(Error::InvalidRos(_))
        ));
    }

    #[test]
    fn splice_dims_and_edges() {
        let f = fm(Array2::zeros((4, 41)));
        assert_eq!(splice(&f, 5, 5).dim(), 451);

        let g = fm(array![[1.0, 2.0], [3.0, 4.0]]);
        let sp = splice(&g, 1, 1);
        assert_eq!(sp.data().row(0).to_vec(), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sp.data().row(1).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert_eq!(splice(&g, 0, 0).data(), g.data());
    }

    fn matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..12, 1usize..6).prop_flat_map(|(t, d)| {
            proptest::collection::vec(-50.0f64..50.0, t * d)
                .prop_map(move |v| Array2::from_shape_vec((t, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn cmn_zero_mean_and_idempotent(data in matrix()) {
            let once = apply_cmn(&fm(data));
            for col in once.data().columns() {
                prop_assert!(col.mean().unwrap().abs() < 1e-9);
            }
            let twice = apply_cmn(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn splice_center_block_recovers_input(data in matrix(), left in 0usize..4, right in 0usize..4) {
            let f = fm(data);
            let d = f.dim();
            let sp = splice(&f, left, right);
            let center = sp.data().slice(s![.., left * d..(left + 1) * d]);
            prop_assert_eq!(center, f.data().view());
        }

        #[test]
        fn spliced_ros_columns_are_constant(data in matrix(), ros in 2.0f64..15.0, ctx in 0usize..4) {
            let f = fm(data);
            let d = f.dim() + 1;
            let sp = splice(&augment_ros(&f, ros, RosNorm::Identity).unwrap(), ctx, ctx);
            for k in 0..(2 * ctx + 1) {
                prop_assert!(sp.data().column(k * d + d - 1).iter().all(|&v| v == ros));
            }
        }
    }
}
