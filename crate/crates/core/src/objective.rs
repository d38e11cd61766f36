//! Segment losses and the prior-compensation stage objective.
//!
//! The future horizon `T_h+1 ..= T_h+T_p` (absolute frame indices, history
//! is `1..=T_h`) is cut into `K` contiguous segments. Stage 1 minimizes the
//! plain squared error of segment 1; stage `k >= 2` minimizes
//!
//! ```text
//! (1-a)*m_k + (1-a)*log(1-a) + log(1+a)
//!     + sum_{j=2}^{k-1} (1-a_hat_j)*m_j + m_1
//! ```
//!
//! where `m_j` is the segment's frame-summed squared error, `a` is the live
//! compensation factor for the newest transition and `a_hat_j` are the
//! frozen factors of completed transitions. The `(1-a)log(1-a) + log(1+a)`
//! regularizer makes the factor earn its keep: its gradient is 0 at `a = 0`
//! and grows without bound as `a -> 1`, so the optimum balances the current
//! segment's error against the prior terms.
//!
//! Everything here is plain array math; the differentiable twin used in
//! training is assembled from graph ops in [`crate::backbone`], and tests
//! hold the two routes together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::scalar::Scalar;

/// Ceiling keeping the squashed factor strictly below 1 so that
/// `(1-a)log(1-a)` and `log(1+a)` stay inside their domains.
pub const ALPHA_CEILING_EPS: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("segment boundaries must satisfy t_h < b_1 < ... < b_K = t_h + t_p, got t_h={t_h}, boundaries={boundaries:?}, t_p={t_p}")]
    BadBoundaries {
        t_h: usize,
        t_p: usize,
        boundaries: Vec<usize>,
    },
    #[error("stage_epochs length {epochs} must equal segment count {segments}")]
    EpochCountMismatch { epochs: usize, segments: usize },
    #[error("frame range {from}..={to} invalid for history {t_h} and horizon {t_p}")]
    BadFrameRange {
        from: usize,
        to: usize,
        t_h: usize,
        t_p: usize,
    },
    #[error("prediction shape {pred:?} does not match ground truth {gt:?}")]
    FrameShapeMismatch { pred: Vec<usize>, gt: Vec<usize> },
    #[error("stage {k} needs {expected} frozen factors, got {actual}")]
    FrozenCount {
        k: usize,
        expected: usize,
        actual: usize,
    },
    #[error("stage index {k} outside 2..={max}")]
    BadStage { k: usize, max: usize },
    #[error("live factor {alpha} outside [0, 1)")]
    AlphaRange { alpha: f64 },
}

/// Segment boundaries and per-stage epoch budgets for the curriculum.
///
/// `boundaries[k-1]` is the absolute last frame of segment `k` (1-based
/// frame indexing with history occupying `1..=t_h`); the final boundary is
/// always `t_h + t_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSchedule {
    pub t_h: usize,
    pub boundaries: Vec<usize>,
    /// Epoch budgets per stage. Interpretation (cumulative vs per-stage)
    /// belongs to the trainer config.
    pub stage_epochs: Vec<usize>,
}

impl SegmentSchedule {
    pub fn new(
        t_h: usize,
        t_p: usize,
        boundaries: Vec<usize>,
        stage_epochs: Vec<usize>,
    ) -> Result<Self, ObjectiveError> {
        let increasing = boundaries.windows(2).all(|w| w[0] < w[1]);
        let in_range =
            boundaries.first().is_some_and(|&b| b > t_h) && boundaries.last() == Some(&(t_h + t_p));
        if boundaries.is_empty() || !increasing || !in_range {
            return Err(ObjectiveError::BadBoundaries {
                t_h,
                t_p,
                boundaries,
            });
        }
        if stage_epochs.len() != boundaries.len() {
            return Err(ObjectiveError::EpochCountMismatch {
                epochs: stage_epochs.len(),
                segments: boundaries.len(),
            });
        }
        Ok(Self {
            t_h,
            boundaries,
            stage_epochs,
        })
    }

    /// Build from segment lengths, e.g. `[3, 9, 13]` for a 25-frame horizon.
    pub fn from_segment_lengths(
        t_h: usize,
        lengths: &[usize],
        stage_epochs: Vec<usize>,
    ) -> Result<Self, ObjectiveError> {
        let mut boundaries = Vec::with_capacity(lengths.len());
        let mut acc = t_h;
        for &len in lengths {
            acc += len;
            boundaries.push(acc);
        }
        let t_p = acc.saturating_sub(t_h);
        Self::new(t_h, t_p, boundaries, stage_epochs)
    }

    /// Split `t_p` into `k` near-equal segments (remainder on the last),
    /// with a near-equal split of `total_epochs` across stages, expressed
    /// cumulatively.
    pub fn even_split(
        t_h: usize,
        t_p: usize,
        k: usize,
        total_epochs: usize,
    ) -> Result<Self, ObjectiveError> {
        assert!(k >= 1, "need at least one segment");
        let base = t_p / k;
        let mut lengths = vec![base; k];
        *lengths.last_mut().unwrap() += t_p - base * k;
        let ep_base = total_epochs / k;
        let mut budgets = vec![ep_base; k];
        *budgets.last_mut().unwrap() += total_epochs - ep_base * k;
        let mut cumulative = Vec::with_capacity(k);
        let mut acc = 0;
        for b in budgets {
            acc += b;
            cumulative.push(acc);
        }
        Self::from_segment_lengths(t_h, &lengths, cumulative)
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len()
    }

    pub fn t_p(&self) -> usize {
        *self.boundaries.last().unwrap() - self.t_h
    }

    /// Absolute inclusive frame range of segment `k` (1-based).
    pub fn segment_frames(&self, k: usize) -> (usize, usize) {
        assert!((1..=self.num_segments()).contains(&k));
        let from = if k == 1 {
            self.t_h + 1
        } else {
            self.boundaries[k - 2] + 1
        };
        (from, self.boundaries[k - 1])
    }

    /// 0-based half-open row range into a `[t_p, ...]` future block.
    pub fn segment_rows(&self, k: usize) -> (usize, usize) {
        let (from, to) = self.segment_frames(k);
        (from - self.t_h - 1, to - self.t_h)
    }
}

/// Live and frozen compensation factors at one point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfState {
    /// Stage currently being trained (1-based).
    pub stage: usize,
    /// Mean squashed factor most recently observed for the live transition
    /// (reporting value; the learnable state lives in the model's head).
    pub live_alpha: f64,
    /// Frozen factors of completed transitions `2..stage`, in order.
    pub frozen_alphas: Vec<f64>,
}

impl PcfState {
    pub fn initial() -> Self {
        Self {
            stage: 1,
            live_alpha: 0.0,
            frozen_alphas: Vec::new(),
        }
    }

    /// Invariants: factors in `[0, 1)`, frozen count = stage - 2 (stage >= 2).
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let expected = self.stage.saturating_sub(2);
        if self.frozen_alphas.len() != expected {
            return Err(ObjectiveError::FrozenCount {
                k: self.stage,
                expected,
                actual: self.frozen_alphas.len(),
            });
        }
        for &a in self
            .frozen_alphas
            .iter()
            .chain(std::iter::once(&self.live_alpha))
        {
            if !(0.0..1.0).contains(&a) {
                return Err(ObjectiveError::AlphaRange { alpha: a });
            }
        }
        Ok(())
    }
}

/// Squash an unbounded head output into `[0, 1 - ALPHA_CEILING_EPS)`.
pub fn squash_alpha<S: Scalar>(logit: S) -> S {
    let one = S::one();
    let ceiling = one - S::from_f64_lit(ALPHA_CEILING_EPS);
    // sigmoid via tanh keeps this identical to the graph construction.
    let half = S::from_f64_lit(0.5);
    let sigmoid = half * ((logit * half).tanh() + one);
    ceiling * sigmoid
}

/// Regularizer `(1-a)log(1-a) + log(1+a)` attached to the live factor.
pub fn alpha_regularizer<S: Scalar>(alpha: S) -> S {
    let one = S::one();
    (one - alpha) * (one - alpha).ln() + (one + alpha).ln()
}

/// Derivative of [`alpha_regularizer`]: `-log(1-a) - 1 + 1/(1+a)`.
///
/// Zero at `a = 0` and strictly increasing on `[0, 1)`, so the stationary
/// live factor satisfies `m_k = -log(1-a*) - 1 + 1/(1+a*)`.
pub fn alpha_regularizer_grad<S: Scalar>(alpha: S) -> S {
    let one = S::one();
    -(one - alpha).ln() - one + one / (one + alpha)
}

fn check_frames<S: Scalar>(
    pred: &Array<S>,
    gt: &Array<S>,
) -> Result<(usize, usize), ObjectiveError> {
    if pred.shape() != gt.shape() || pred.shape().len() != 2 {
        return Err(ObjectiveError::FrameShapeMismatch {
            pred: pred.shape().to_vec(),
            gt: gt.shape().to_vec(),
        });
    }
    Ok((pred.shape()[0], pred.shape()[1]))
}

/// Frame-summed squared error over absolute frames `from..=to` of one
/// sample's future block (`[t_p, J*D]` with row 0 = frame `t_h + 1`).
pub fn segment_mse_single<S: Scalar>(
    pred: &Array<S>,
    gt: &Array<S>,
    t_h: usize,
    from: usize,
    to: usize,
) -> Result<S, ObjectiveError> {
    let (t_p, cols) = check_frames(pred, gt)?;
    if from <= t_h || to < from || to > t_h + t_p {
        return Err(ObjectiveError::BadFrameRange { from, to, t_h, t_p });
    }
    let lo = (from - t_h - 1) * cols;
    let hi = (to - t_h) * cols;
    let mut acc = S::zero();
    for (p, g) in pred.data()[lo..hi].iter().zip(&gt.data()[lo..hi]) {
        let d = *p - *g;
        acc = acc + d * d;
    }
    Ok(acc)
}

/// Batch version of [`segment_mse_single`]: frame-summed squared error,
/// averaged over samples.
pub fn segment_mse<S: Scalar>(
    preds: &[Array<S>],
    gts: &[Array<S>],
    t_h: usize,
    from: usize,
    to: usize,
) -> Result<S, ObjectiveError> {
    assert_eq!(preds.len(), gts.len(), "batch sizes differ");
    assert!(!preds.is_empty(), "empty batch");
    let mut acc = S::zero();
    for (p, g) in preds.iter().zip(gts) {
        acc = acc + segment_mse_single(p, g, t_h, from, to)?;
    }
    Ok(acc / S::from_f64_lit(preds.len() as f64))
}

/// Initial-stage loss: the plain squared error of segment 1.
pub fn stage1_loss<S: Scalar>(
    preds: &[Array<S>],
    gts: &[Array<S>],
    schedule: &SegmentSchedule,
) -> Result<S, ObjectiveError> {
    let (from, to) = schedule.segment_frames(1);
    segment_mse(preds, gts, schedule.t_h, from, to)
}

/// Stage-`k` loss for one sample given its live factor.
pub fn stage_loss_single<S: Scalar>(
    pred: &Array<S>,
    gt: &Array<S>,
    schedule: &SegmentSchedule,
    k: usize,
    live_alpha: S,
    frozen_alphas: &[S],
) -> Result<S, ObjectiveError> {
    if !(2..=schedule.num_segments()).contains(&k) {
        return Err(ObjectiveError::BadStage {
            k,
            max: schedule.num_segments(),
        });
    }
    if frozen_alphas.len() != k - 2 {
        return Err(ObjectiveError::FrozenCount {
            k,
            expected: k - 2,
            actual: frozen_alphas.len(),
        });
    }
    let a = live_alpha.to_f64().unwrap();
    if !(0.0..1.0).contains(&a) {
        return Err(ObjectiveError::AlphaRange { alpha: a });
    }
    let one = S::one();
    let seg = |j: usize| -> Result<S, ObjectiveError> {
        let (from, to) = schedule.segment_frames(j);
        segment_mse_single(pred, gt, schedule.t_h, from, to)
    };
    let mut loss = (one - live_alpha) * seg(k)? + alpha_regularizer(live_alpha);
    for (j, &a_hat) in (2..k).zip(frozen_alphas) {
        loss = loss + (one - a_hat) * seg(j)?;
    }
    loss = loss + seg(1)?;
    Ok(loss)
}

/// Batch stage-`k` loss: squared-error terms and the regularizer are both
/// averaged over samples, each sample contributing its own live factor.
pub fn stage_loss<S: Scalar>(
    preds: &[Array<S>],
    gts: &[Array<S>],
    schedule: &SegmentSchedule,
    k: usize,
    live_alphas: &[S],
    frozen_alphas: &[S],
) -> Result<S, ObjectiveError> {
    assert_eq!(preds.len(), gts.len(), "batch sizes differ");
    assert_eq!(preds.len(), live_alphas.len(), "one live factor per sample");
    assert!(!preds.is_empty(), "empty batch");
    let mut acc = S::zero();
    for ((p, g), &a) in preds.iter().zip(gts).zip(live_alphas) {
        acc = acc + stage_loss_single(p, g, schedule, k, a, frozen_alphas)?;
    }
    Ok(acc / S::from_f64_lit(preds.len() as f64))
}
