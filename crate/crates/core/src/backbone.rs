//! Feed-forward sequence predictor with a compensation-factor head.
//!
//! The flattened history passes through a tanh trunk; a zero-initialized
//! prediction head emits per-frame deltas added to the last observed frame
//! (so an untrained model predicts last-frame replication), and a small
//! separate head reads the shared penultimate feature to produce one raw
//! factor logit per sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::{GraphError, Node, ParamStore};
use crate::objective::{SegmentSchedule, ALPHA_CEILING_EPS};
use crate::Real;

/// Squashed factor produced by the freshly initialized head.
pub const ALPHA_INIT: f64 = 0.1 * (1.0 - ALPHA_CEILING_EPS);
/// Head bias realizing [`ALPHA_INIT`]: logit of 0.1.
const ALPHA_INIT_BIAS: f64 = -2.197_224_577_336_219_6;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("hidden_dims must be non-empty")]
    NoHiddenLayers,
    #[error("alpha_head_hidden must be >= 1")]
    NoAlphaHidden,
    #[error("history shape {actual:?} does not match configured {expected:?}")]
    HistoryShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("parameter {0:?} missing from store")]
    MissingParam(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub joints: usize,
    pub dims: usize,
    pub t_h: usize,
    pub t_p: usize,
    pub hidden_dims: Vec<usize>,
    pub alpha_head_hidden: usize,
    /// When set, the factor head reads a detached copy of the trunk feature
    /// and its gradients stay out of the shared trunk.
    pub detach_alpha_head: bool,
    pub init_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            joints: 8,
            dims: 3,
            t_h: 10,
            t_p: 25,
            hidden_dims: vec![128, 128],
            alpha_head_hidden: 64,
            detach_alpha_head: false,
            init_seed: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.hidden_dims.is_empty() {
            return Err(BackboneError::NoHiddenLayers);
        }
        if self.alpha_head_hidden == 0 {
            return Err(BackboneError::NoAlphaHidden);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.t_h * self.joints * self.dims
    }

    pub fn output_dim(&self) -> usize {
        self.t_p * self.joints * self.dims
    }

    pub fn coord_cols(&self) -> usize {
        self.joints * self.dims
    }

    /// Scalar parameter count: `(in+1)*h` per trunk layer, `(h+1)*out` for
    /// the prediction head, `(h+1)*a + (a+1)` for the factor head.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut prev = self.input_dim();
        for &h in &self.hidden_dims {
            total += (prev + 1) * h;
            prev = h;
        }
        total += (prev + 1) * self.output_dim();
        total += (prev + 1) * self.alpha_head_hidden;
        total += self.alpha_head_hidden + 1;
        total
    }
}

/// Prediction for one sample: standardized future frames and the raw
/// factor logit.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    /// `[t_p, J*D]`
    pub frames: Node<Real>,
    /// `[1]`
    pub alpha_logit: Node<Real>,
}

fn uniform_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize) -> Array<Real> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Array::from_raw(vec![rows, cols], data)
}

/// Deterministic fan-in initialization. The prediction head starts at zero
/// (residual start) and the factor head's output layer starts at the bias
/// realizing [`ALPHA_INIT`].
pub fn init_params(config: &BackboneConfig) -> Result<ParamStore<Real>, BackboneError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.init_seed);
    let mut store = ParamStore::new();
    let mut prev = config.input_dim();
    for (i, &h) in config.hidden_dims.iter().enumerate() {
        store.insert(
            format!("trunk.{i}.w"),
            uniform_init(&mut rng, prev, h, prev),
        );
        store.insert(format!("trunk.{i}.b"), uniform_init(&mut rng, 1, h, prev));
        prev = h;
    }
    store.insert("pred.w", Array::zeros(vec![prev, config.output_dim()]));
    store.insert("pred.b", Array::zeros(vec![1, config.output_dim()]));
    store.insert(
        "alpha.hidden.w",
        uniform_init(&mut rng, prev, config.alpha_head_hidden, prev),
    );
    store.insert(
        "alpha.hidden.b",
        uniform_init(&mut rng, 1, config.alpha_head_hidden, prev),
    );
    store.insert(
        "alpha.out.w",
        Array::zeros(vec![config.alpha_head_hidden, 1]),
    );
    store.insert(
        "alpha.out.b",
        Array::from_raw(vec![1, 1], vec![ALPHA_INIT_BIAS]),
    );
    Ok(store)
}

fn param<'a>(store: &'a ParamStore<Real>, name: &str) -> Result<&'a Node<Real>, BackboneError> {
    store
        .get(name)
        .ok_or_else(|| BackboneError::MissingParam(name.to_string()))
}

/// Run the model on one standardized history block `[t_h, J*D]`.
pub fn forward(
    store: &ParamStore<Real>,
    config: &BackboneConfig,
    history_std: &Array<Real>,
) -> Result<PredictionOutput, BackboneError> {
    let expected = vec![config.t_h, config.coord_cols()];
    if history_std.shape() != expected.as_slice() {
        return Err(BackboneError::HistoryShape {
            expected,
            actual: history_std.shape().to_vec(),
        });
    }
    let cols = config.coord_cols();
    let x = Node::constant(Array::from_raw(
        vec![1, config.input_dim()],
        history_std.data().to_vec(),
    ));

    let mut h = x;
    for i in 0..config.hidden_dims.len() {
        let w = param(store, &format!("trunk.{i}.w"))?;
        let b = param(store, &format!("trunk.{i}.b"))?;
        h = h.matmul(w)?.add(b)?.tanh();
    }

    let delta = h
        .matmul(param(store, "pred.w")?)?
        .add(param(store, "pred.b")?)?;
    let last = &history_std.data()[(config.t_h - 1) * cols..];
    let mut tiled = Vec::with_capacity(config.output_dim());
    for _ in 0..config.t_p {
        tiled.extend_from_slice(last);
    }
    let base = Node::constant(Array::from_raw(vec![1, config.output_dim()], tiled));
    let frames = delta.add(&base)?.reshape(vec![config.t_p, cols])?;

    let feat = if config.detach_alpha_head {
        Node::constant(h.value().clone())
    } else {
        h
    };
    let ha = feat
        .matmul(param(store, "alpha.hidden.w")?)?
        .add(param(store, "alpha.hidden.b")?)?
        .tanh();
    let alpha_logit = ha
        .matmul(param(store, "alpha.out.w")?)?
        .add(param(store, "alpha.out.b")?)?
        .reshape(vec![1])?;

    Ok(PredictionOutput {
        frames,
        alpha_logit,
    })
}

/// Graph twin of [`crate::objective::squash_alpha`]; identical op order
/// keeps the two routes bit-equal.
pub fn squash_alpha_node(logit: &Node<Real>) -> Node<Real> {
    logit
        .scale(0.5)
        .tanh()
        .shift(1.0)
        .scale(0.5)
        .scale(1.0 - ALPHA_CEILING_EPS)
}

/// Frame-summed squared error of segment `k` for one sample, as a graph.
pub fn segment_mse_node(
    pred: &Node<Real>,
    gt_std: &Array<Real>,
    schedule: &SegmentSchedule,
    k: usize,
) -> Result<Node<Real>, GraphError> {
    let (from, to) = schedule.segment_rows(k);
    let cols = pred.shape()[1];
    let p = pred.slice_rows(from, to)?;
    let g = Node::constant(Array::from_raw(
        vec![to - from, cols],
        gt_std.data()[from * cols..to * cols].to_vec(),
    ));
    let d = p.sub(&g)?;
    Ok(d.mul(&d)?.sum())
}

/// Per-sample stage loss as a graph, differentiable in both the prediction
/// frames and the live factor.
///
/// `live_alpha` is the squashed factor node (shape `[1]`); stage 1 passes
/// `None` and gets the plain first-segment error.
pub fn stage_loss_node(
    pred: &Node<Real>,
    gt_std: &Array<Real>,
    schedule: &SegmentSchedule,
    stage: usize,
    live_alpha: Option<&Node<Real>>,
    frozen_alphas: &[f64],
) -> Result<Node<Real>, GraphError> {
    scaled_stage_loss_node(
        pred,
        gt_std,
        schedule,
        stage,
        live_alpha,
        frozen_alphas,
        1.0,
    )
}

/// [`stage_loss_node`] with the squared-error terms multiplied by
/// `mse_scale` — the temperature identifying the squared error with a
/// negative log-likelihood. The factor regularizer is never scaled, so the
/// scale sets where the live factor settles.
#[allow(clippy::too_many_arguments)]
pub fn scaled_stage_loss_node(
    pred: &Node<Real>,
    gt_std: &Array<Real>,
    schedule: &SegmentSchedule,
    stage: usize,
    live_alpha: Option<&Node<Real>>,
    frozen_alphas: &[f64],
    mse_scale: f64,
) -> Result<Node<Real>, GraphError> {
    let seg = |k: usize| -> Result<Node<Real>, GraphError> {
        let m = segment_mse_node(pred, gt_std, schedule, k)?;
        Ok(if mse_scale == 1.0 {
            m
        } else {
            m.scale(mse_scale)
        })
    };
    let m1 = seg(1)?;
    if stage == 1 {
        return Ok(m1);
    }
    assert_eq!(
        frozen_alphas.len(),
        stage - 2,
        "one frozen factor per completed transition"
    );
    let alpha = live_alpha.expect("stages >= 2 need a live factor");
    let one_minus = alpha.scale(-1.0).shift(1.0);
    let mut loss = one_minus.mul(&seg(stage)?)?;
    // (1-a)log(1-a) + log(1+a)
    let reg = one_minus
        .mul(&one_minus.log()?)?
        .add(&alpha.shift(1.0).log()?)?;
    loss = loss.add(&reg)?;
    for (j, &a_hat) in (2..stage).zip(frozen_alphas) {
        loss = loss.add(&seg(j)?.scale(1.0 - a_hat))?;
    }
    loss.add(&m1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::objective::{self, squash_alpha};
    use approx::assert_relative_eq;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            joints: 2,
            dims: 2,
            t_h: 3,
            t_p: 4,
            hidden_dims: vec![8],
            alpha_head_hidden: 4,
            detach_alpha_head: false,
            init_seed: 7,
        }
    }

    fn random_history(config: &BackboneConfig, seed: u64) -> Array<Real> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..config.t_h * config.coord_cols())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Array::from_raw(vec![config.t_h, config.coord_cols()], data)
    }

    #[test]
    fn param_count_matches_store() {
        for config in [tiny_config(), BackboneConfig::default()] {
            let store = init_params(&config).unwrap();
            assert_eq!(store.num_scalars(), config.param_count());
        }
    }

    #[test]
    fn init_is_deterministic() {
        let config = tiny_config();
        let a = init_params(&config).unwrap();
        let b = init_params(&config).unwrap();
        assert_eq!(a.flat_values(), b.flat_values());
        let other = BackboneConfig {
            init_seed: 8,
            ..config
        };
        assert_ne!(init_params(&other).unwrap().flat_values(), a.flat_values());
    }

    #[test]
    fn fresh_model_predicts_last_frame_replication() {
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let history = random_history(&config, 3);
        let out = forward(&store, &config, &history).unwrap();
        let cols = config.coord_cols();
        let last = &history.data()[(config.t_h - 1) * cols..];
        for frame in 0..config.t_p {
            let frames = out.frames.value();
            let row = &frames.data()[frame * cols..(frame + 1) * cols];
            assert_eq!(row, last);
        }
    }

    #[test]
    fn initial_squashed_alpha_near_one_tenth() {
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let out = forward(&store, &config, &random_history(&config, 5)).unwrap();
        let alpha = squash_alpha(out.alpha_logit.item());
        assert_relative_eq!(alpha, ALPHA_INIT, epsilon = 1e-12);
        assert!((0.05..=0.15).contains(&alpha));
    }

    #[test]
    fn forward_is_deterministic() {
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let history = random_history(&config, 11);
        let a = forward(&store, &config, &history).unwrap();
        let b = forward(&store, &config, &history).unwrap();
        assert_eq!(a.frames.value().data(), b.frames.value().data());
        assert_eq!(a.alpha_logit.item(), b.alpha_logit.item());
    }

    #[test]
    fn forward_rejects_wrong_history_shape() {
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let bad = Array::<Real>::zeros(vec![2, 4]);
        assert!(matches!(
            forward(&store, &config, &bad),
            Err(BackboneError::HistoryShape { .. })
        ));
    }

    #[test]
    fn alpha_head_is_isolated_from_frames() {
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let history = random_history(&config, 13);
        // Give the factor head a non-trivial output first.
        store
            .get("alpha.out.w")
            .unwrap()
            .set_value(Array::from_raw(vec![4, 1], vec![0.3, -0.2, 0.5, 0.1]));
        let before = forward(&store, &config, &history).unwrap();
        for name in [
            "alpha.hidden.w",
            "alpha.hidden.b",
            "alpha.out.w",
            "alpha.out.b",
        ] {
            let node = store.get(name).unwrap();
            let shape = node.value().shape().to_vec();
            node.set_value(Array::zeros(shape));
        }
        let after = forward(&store, &config, &history).unwrap();
        assert_eq!(
            before.frames.value().data(),
            after.frames.value().data(),
            "zeroing the factor head must not move the frames"
        );
        assert_ne!(before.alpha_logit.item(), after.alpha_logit.item());
    }

    #[test]
    fn squash_node_matches_scalar_route() {
        for &logit in &[-3.0, -0.5, 0.0, 0.4, 2.5] {
            let node = Node::constant(Array::from_raw(vec![1], vec![logit]));
            assert_eq!(squash_alpha_node(&node).item(), squash_alpha(logit));
        }
    }

    #[test]
    fn graph_stage_loss_equals_plain_route() {
        let config = tiny_config();
        let schedule =
            SegmentSchedule::from_segment_lengths(config.t_h, &[1, 2, 1], vec![2, 4, 6]).unwrap();
        let store = init_params(&config).unwrap();
        // Non-zero prediction head so the frames differ from the baseline.
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for name in ["pred.w", "pred.b"] {
            let node = store.get(name).unwrap();
            let shape = node.value().shape().to_vec();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            node.set_value(Array::from_raw(shape, data));
        }
        let history = random_history(&config, 17);
        let gt = Array::from_raw(
            vec![config.t_p, config.coord_cols()],
            (0..config.output_dim())
                .map(|i| (i as f64 * 0.37).sin())
                .collect(),
        );
        let out = forward(&store, &config, &history).unwrap();
        let alpha_node = squash_alpha_node(&out.alpha_logit);
        let frozen = [0.25];
        let graph_loss =
            stage_loss_node(&out.frames, &gt, &schedule, 3, Some(&alpha_node), &frozen)
                .unwrap()
                .item();
        let pred_value = out.frames.value().clone();
        let plain = objective::stage_loss_single(
            &pred_value,
            &gt,
            &schedule,
            3,
            alpha_node.item(),
            &frozen,
        )
        .unwrap();
        assert_relative_eq!(graph_loss, plain, epsilon = 1e-12);
    }

    #[test]
    fn full_stage_loss_gradients_match_finite_differences() {
        let config = tiny_config();
        assert!(config.param_count() <= 1000);
        let schedule =
            SegmentSchedule::from_segment_lengths(config.t_h, &[1, 3], vec![2, 4]).unwrap();
        let store = init_params(&config).unwrap();
        let history = random_history(&config, 29);
        let gt = Array::from_raw(
            vec![config.t_p, config.coord_cols()],
            (0..config.output_dim())
                .map(|i| (i as f64 * 0.21).cos() * 0.8)
                .collect(),
        );
        let report = grad_check(
            &store,
            |s| {
                let out = forward(s, &config, &history).map_err(|e| match e {
                    BackboneError::Graph(g) => g,
                    other => panic!("unexpected: {other}"),
                })?;
                let alpha = squash_alpha_node(&out.alpha_logit);
                stage_loss_node(&out.frames, &gt, &schedule, 2, Some(&alpha), &[])
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report
                .per_param
                .iter()
                .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
                .map(|p| &p.name)
        );
    }

    #[test]
    fn detached_alpha_head_keeps_trunk_gradients_clean() {
        let config = BackboneConfig {
            detach_alpha_head: true,
            ..tiny_config()
        };
        let store = init_params(&config).unwrap();
        let history = random_history(&config, 31);
        let out = forward(&store, &config, &history).unwrap();
        // Loss reads only the factor; trunk must receive zero gradient.
        let alpha = squash_alpha_node(&out.alpha_logit);
        alpha.backward().unwrap();
        let trunk_grad = store.get("trunk.0.w").unwrap();
        assert!(trunk_grad.grad().iter().all(|&g| g == 0.0));
        let head_grad = store.get("alpha.out.w").unwrap();
        assert!(head_grad.grad().iter().any(|&g| g != 0.0));
    }
}
