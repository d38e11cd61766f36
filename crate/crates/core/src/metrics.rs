//! Position-error metrics over de-standardized predictions.
//!
//! MPJPE at a horizon is the mean Euclidean joint error at that future
//! frame, averaged over samples; reported in the raw coordinate units of
//! the dataset.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::array::Array;
use crate::autodiff::ParamStore;
use crate::backbone::{forward, BackboneConfig, BackboneError};
use crate::dataset::{NormStats, WindowedDataset};
use crate::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("horizon {horizon} outside 1..={t_p}")]
    HorizonRange { horizon: usize, t_p: usize },
    #[error("empty evaluation set")]
    EmptySet,
    #[error("prediction/ground-truth shapes differ: {pred:?} vs {gt:?}")]
    ShapeMismatch { pred: Vec<usize>, gt: Vec<usize> },
    #[error("non-finite prediction for sample {sample}")]
    NonFinitePrediction { sample: usize },
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

/// Mean Euclidean joint error at one 1-based future frame, averaged over
/// samples. Inputs are `[t_p, J*D]` blocks in raw units.
pub fn mpjpe(
    preds: &[Array<Real>],
    gts: &[Array<Real>],
    horizon: usize,
    joints: usize,
    dims: usize,
) -> Result<Real, MetricsError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(MetricsError::EmptySet);
    }
    let t_p = preds[0].shape()[0];
    if horizon == 0 || horizon > t_p {
        return Err(MetricsError::HorizonRange { horizon, t_p });
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        if p.shape() != g.shape() {
            return Err(MetricsError::ShapeMismatch {
                pred: p.shape().to_vec(),
                gt: g.shape().to_vec(),
            });
        }
        total += frame_joint_error(p, g, horizon - 1, joints, dims);
    }
    Ok(total / preds.len() as f64)
}

fn frame_joint_error(
    pred: &Array<Real>,
    gt: &Array<Real>,
    row: usize,
    joints: usize,
    dims: usize,
) -> f64 {
    let cols = joints * dims;
    let p = &pred.data()[row * cols..(row + 1) * cols];
    let g = &gt.data()[row * cols..(row + 1) * cols];
    let mut sum = 0.0;
    for j in 0..joints {
        let mut sq = 0.0;
        for d in 0..dims {
            let diff = p[j * dims + d] - g[j * dims + d];
            sq += diff * diff;
        }
        sum += sq.sqrt();
    }
    sum / joints as f64
}

/// MPJPE at every future frame, index 0 = horizon 1.
pub fn mpjpe_curve(
    preds: &[Array<Real>],
    gts: &[Array<Real>],
    joints: usize,
    dims: usize,
) -> Result<Vec<Real>, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let t_p = preds[0].shape()[0];
    (1..=t_p)
        .map(|h| mpjpe(preds, gts, h, joints, dims))
        .collect()
}

/// Evaluation of one model over one split.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    /// MPJPE at the requested horizons.
    pub mpjpe_by_horizon: BTreeMap<usize, f64>,
    /// MPJPE at every future frame.
    pub curve: Vec<f64>,
    /// Mean of the full curve.
    pub avg_error: f64,
}

/// Forward every sample, de-standardize, and report MPJPE in raw units.
pub fn evaluate(
    store: &ParamStore<Real>,
    config: &BackboneConfig,
    norm: &NormStats,
    dataset: &WindowedDataset,
    horizons: &[usize],
) -> Result<EvalOutput, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    for &h in horizons {
        if h == 0 || h > dataset.t_p {
            return Err(MetricsError::HorizonRange {
                horizon: h,
                t_p: dataset.t_p,
            });
        }
    }
    let mut preds = Vec::with_capacity(dataset.len());
    let mut gts = Vec::with_capacity(dataset.len());
    for (i, sample) in dataset.samples.iter().enumerate() {
        let history_std = norm.standardize(&sample.history);
        let out = forward(store, config, &history_std)?;
        let pred_raw = norm.destandardize(&out.frames.value());
        if !pred_raw.all_finite() {
            return Err(MetricsError::NonFinitePrediction { sample: i });
        }
        preds.push(pred_raw);
        gts.push(sample.future.clone());
    }
    let curve = mpjpe_curve(&preds, &gts, dataset.joints, dataset.dims)?;
    let avg_error = curve.iter().sum::<f64>() / curve.len() as f64;
    let mpjpe_by_horizon = horizons.iter().map(|&h| (h, curve[h - 1])).collect();
    Ok(EvalOutput {
        mpjpe_by_horizon,
        curve,
        avg_error,
    })
}

/// Per-task error: mean of the MPJPE curve over one segment's frames.
pub fn segment_error(curve: &[f64], rows: (usize, usize)) -> f64 {
    let (from, to) = rows;
    curve[from..to].iter().sum::<f64>() / (to - from) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn block(t_p: usize, cols: usize, value: f64) -> Array<Real> {
        Array::from_vec(vec![t_p, cols], vec![value; t_p * cols]).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let x = block(4, 6, 1.25);
        assert_eq!(
            mpjpe(std::slice::from_ref(&x), std::slice::from_ref(&x), 2, 2, 3).unwrap(),
            0.0
        );
    }

    #[test]
    fn three_four_five_norm() {
        // One joint offset by (3, 4, 0) -> error 5.
        let mut pred = block(1, 3, 0.0);
        pred.data_mut()[0] = 3.0;
        pred.data_mut()[1] = 4.0;
        let gt = block(1, 3, 0.0);
        assert_eq!(mpjpe(&[pred], &[gt], 1, 1, 3).unwrap(), 5.0);
    }

    #[test]
    fn mean_over_joints() {
        // Two joints with errors 2 and 4 -> 3.
        let mut pred = block(1, 6, 0.0);
        pred.data_mut()[0] = 2.0;
        pred.data_mut()[3] = 4.0;
        let gt = block(1, 6, 0.0);
        assert_eq!(mpjpe(&[pred], &[gt], 1, 2, 3).unwrap(), 3.0);
    }

    #[test]
    fn horizon_out_of_range_is_an_error() {
        let x = block(4, 3, 0.0);
        assert!(matches!(
            mpjpe(std::slice::from_ref(&x), std::slice::from_ref(&x), 5, 1, 3),
            Err(MetricsError::HorizonRange { .. })
        ));
        assert!(matches!(
            mpjpe(std::slice::from_ref(&x), std::slice::from_ref(&x), 0, 1, 3),
            Err(MetricsError::HorizonRange { .. })
        ));
    }

    #[test]
    fn curve_mean_equals_avg() {
        let preds = vec![block(3, 3, 1.0), block(3, 3, 2.0)];
        let gts = vec![block(3, 3, 0.0), block(3, 3, 0.0)];
        let curve = mpjpe_curve(&preds, &gts, 1, 3).unwrap();
        let avg = curve.iter().sum::<f64>() / 3.0;
        for &c in &curve {
            assert_relative_eq!(c, avg, epsilon = 1e-12);
        }
    }

    #[test]
    fn segment_error_is_frame_mean() {
        let curve = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(segment_error(&curve, (1, 3)), 2.5);
    }

    proptest! {
        #[test]
        fn mpjpe_is_permutation_invariant(perm_seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let samples: Vec<(Array<Real>, Array<Real>)> = (0..6)
                .map(|i| {
                    let v = i as f64 * 0.3;
                    (block(2, 3, v), block(2, 3, -v))
                })
                .collect();
            let preds: Vec<_> = samples.iter().map(|(p, _)| p.clone()).collect();
            let gts: Vec<_> = samples.iter().map(|(_, g)| g.clone()).collect();
            let base = mpjpe(&preds, &gts, 1, 1, 3).unwrap();

            let mut order: Vec<usize> = (0..6).collect();
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(perm_seed);
            order.shuffle(&mut rng);
            let preds2: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
            let gts2: Vec<_> = order.iter().map(|&i| gts[i].clone()).collect();
            let shuffled = mpjpe(&preds2, &gts2, 1, 1, 3).unwrap();
            prop_assert!((base - shuffled).abs() < 1e-12);
        }
    }
}
