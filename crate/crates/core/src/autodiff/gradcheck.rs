//! Central finite-difference verification of analytic gradients.

use thiserror::Error;

use crate::autodiff::{GraphError, Node, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("loss became non-finite while probing {param:?}[{index}] with delta {delta}")]
    NonFiniteProbe {
        param: String,
        index: usize,
        delta: f64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Worst relative error observed for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index where the worst error occurred.
    pub argmax: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` must rebuild the loss graph from the store on every call and be
/// deterministic. Probes are sequential; parallel probing would need a
/// cloned store per probe because values are nudged in place.
pub fn grad_check<S, F>(
    store: &ParamStore<S>,
    mut f: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>) -> Result<Node<S>, GraphError>,
{
    store.zero_grads();
    let loss = f(store)?;
    loss.backward()?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(name, node)| {
            (
                name.clone(),
                node.grad().iter().map(|g| g.to_f64().unwrap()).collect(),
            )
        })
        .collect();

    let h = S::from_f64_lit(step);
    let mut per_param = Vec::new();
    let mut overall: f64 = 0.0;
    for (name, node) in store.iter() {
        let n = node.value().len();
        let mut worst = 0.0f64;
        let mut argmax = 0;
        for i in 0..n {
            node.nudge(i, h);
            let plus = f(store)?.item().to_f64().unwrap();
            node.nudge(i, -(h + h));
            let minus = f(store)?.item().to_f64().unwrap();
            node.nudge(i, h);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(GradCheckError::NonFiniteProbe {
                    param: name.clone(),
                    index: i,
                    delta: step,
                });
            }
            let fd = (plus - minus) / (2.0 * step);
            let an = analytic
                .iter()
                .find(|(p, _)| p == name)
                .map(|(_, g)| g[i])
                .unwrap();
            let e = rel_err(an, fd);
            if e > worst {
                worst = e;
                argmax = i;
            }
        }
        overall = overall.max(worst);
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: worst,
            argmax,
        });
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_err: overall,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Array;
    use approx::assert_relative_eq;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Array::from_vec(vec![3], vec![0.5, -1.2, 2.0]).unwrap());
        let c = Array::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(
            &store,
            |s| {
                let w = s.get("w").unwrap();
                Ok(w.mul(&Node::constant(c.clone()))?.sum())
            },
            1e-5,
            1e-10,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn quadratic_matches_closed_form() {
        // f(w) = (w*x)^2 with x = 3: df/dw = 2*w*x^2.
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", Array::from_vec(vec![1], vec![0.7]).unwrap());
        let x = 3.0;
        let build = |s: &ParamStore<f64>| -> Result<Node<f64>, GraphError> {
            let w = s.get("w").unwrap();
            let wx = w.scale(x);
            Ok(wx.mul(&wx)?.sum())
        };
        store.zero_grads();
        build(&store).unwrap().backward().unwrap();
        let analytic = w.grad().data()[0];
        assert_relative_eq!(analytic, 2.0 * 0.7 * x * x, epsilon = 1e-12);

        let report = grad_check(&store, build, 1e-5, 1e-6).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn non_finite_probe_identifies_parameter() {
        // log(w) probed across 0 goes non-finite (log domain error surfaces
        // as a graph error) or produces a non-finite loss.
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Array::from_vec(vec![1], vec![5e-6]).unwrap());
        let result = grad_check(&store, |s| Ok(s.get("w").unwrap().log()?.sum()), 1e-5, 1e-4);
        assert!(result.is_err());
    }
}
