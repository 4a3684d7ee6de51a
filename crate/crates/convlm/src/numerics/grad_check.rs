//! Finite-difference verification of reverse-mode gradients.
//!
//! The check runs the scalar function twice per probed coordinate with a
//! central difference, so callers keep it tractable by sampling coordinates.
//! Run it at f64: at f32 the difference quotient itself carries ~1e-3 noise.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;
use crate::numerics::Real;

/// Scalar function of the parameters, rebuilt on a fresh graph per call.
/// The leaves are handed over in registration order.
pub trait ScalarFn<R: Real> {
    fn eval(&self, graph: &mut Graph<R>, params: &[Var]) -> Result<Var>;
}

impl<R: Real, F> ScalarFn<R> for F
where
    F: Fn(&mut Graph<R>, &[Var]) -> Result<Var>,
{
    fn eval(&self, graph: &mut Graph<R>, params: &[Var]) -> Result<Var> {
        self(graph, params)
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked_coords: usize,
    /// Coordinates where the difference quotient itself was unstable under
    /// step refinement (a ReLU kink inside the probe window); central
    /// differences are invalid there, so they are excluded.
    pub non_smooth_coords: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn run_once<R: Real>(f: &dyn ScalarFn<R>, params: &ParamStore<R>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, p)| g.leaf(p.tensor.clone())).collect();
    let loss = f.eval(&mut g, &vars)?;
    let v = g.value(loss).item().to_f64();
    if !v.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {v}")));
    }
    Ok(v)
}

/// Coordinates to probe for one tensor: the `samples/2` largest analytic
/// gradients plus evenly spaced coverage. `None` checks every coordinate.
fn pick_coords(analytic: &[f64], samples: Option<usize>) -> Vec<usize> {
    let n = analytic.len();
    let Some(s) = samples else {
        return (0..n).collect();
    };
    if n <= s {
        return (0..n).collect();
    }
    let mut picked = Vec::with_capacity(s);
    let half = s / 2;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()).then(a.cmp(&b)));
    picked.extend_from_slice(&order[..half.min(n)]);
    let rest = s - picked.len();
    for i in 0..rest {
        picked.push(i * n / rest);
    }
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Gradient coordinates below this magnitude are compared on an absolute
/// scale: the finite-difference quotient carries rounding noise of roughly
/// `|f| * 1e-15 / epsilon`, which would swamp a pure relative comparison of
/// near-zero gradients.
const DENOM_FLOOR: f64 = 1e-4;

/// Compare reverse-mode gradients of `f` against central finite differences.
///
/// Returns the max relative error per parameter; the check passes when the
/// overall max is at or below `tolerance`. Gradients of non-finite value or
/// loss abort with the offending parameter named.
pub fn grad_check<R: Real>(
    f: &dyn ScalarFn<R>,
    params: &ParamStore<R>,
    epsilon: f64,
    tolerance: f64,
    samples_per_param: Option<usize>,
) -> Result<GradCheckReport> {
    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, p)| g.leaf(p.tensor.clone())).collect();
    let loss = f.eval(&mut g, &vars)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::numeric("grad_check needs a scalar function".to_string()));
    }
    g.backward(loss)?;

    let mut report = GradCheckReport {
        per_param: Vec::new(),
        max_rel_err: 0.0,
        tolerance,
        pass: true,
    };

    let mut probe = params.clone();
    for (i, (id, p)) in params.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let analytic: Vec<f64> = match g.grad(vars[i]) {
            Some(t) => t.data().iter().map(|v| v.to_f64()).collect(),
            None => vec![0.0; p.tensor.numel()],
        };
        if analytic.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite analytic gradient in parameter {}",
                p.name
            )));
        }
        let coords = pick_coords(&analytic, samples_per_param);
        let mut max_rel = 0.0f64;
        let mut non_smooth = 0usize;
        for &c in &coords {
            let orig = probe.tensor(id).data()[c];
            let mut fd_at = |eps: f64| -> Result<f64> {
                probe.tensor_mut(id).data_mut()[c] = orig + R::from_f64(eps);
                let plus = run_once(f, &probe)?;
                probe.tensor_mut(id).data_mut()[c] = orig - R::from_f64(eps);
                let minus = run_once(f, &probe)?;
                probe.tensor_mut(id).data_mut()[c] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                if !numeric.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite finite-difference gradient in parameter {}",
                        p.name
                    )));
                }
                Ok(numeric)
            };
            let numeric = fd_at(epsilon)?;
            let denom = analytic[c].abs().max(numeric.abs()).max(DENOM_FLOOR);
            let mut rel = (analytic[c] - numeric).abs() / denom;
            if rel > tolerance {
                // A disagreement can mean a wrong gradient or a kink inside
                // the probe window. Refine the step: a smooth quotient is
                // stable under refinement, a kink-straddling one is not.
                let refined = fd_at(epsilon / 16.0)?;
                let drift = (numeric - refined).abs()
                    / numeric.abs().max(refined.abs()).max(1e-8);
                if drift > 0.05 {
                    non_smooth += 1;
                    continue;
                }
                let denom = analytic[c].abs().max(refined.abs()).max(DENOM_FLOOR);
                rel = (analytic[c] - refined).abs() / denom;
            }
            max_rel = max_rel.max(rel);
        }
        report.max_rel_err = report.max_rel_err.max(max_rel);
        report.per_param.push(ParamCheck {
            name: p.name.clone(),
            max_rel_err: max_rel,
            checked_coords: coords.len(),
            non_smooth_coords: non_smooth,
        });
    }
    report.pass = report.max_rel_err <= tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    #[test]
    fn quadratic_gradient_matches_analytic() {
        // f(x) = sum(x*x) at x=3 has gradient 6.
        let mut params = ParamStore::<f64>::new();
        params
            .register("x", Tensor::new(vec![1], vec![3.0]).unwrap())
            .unwrap();
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let sq = g.mul(vars[0], vars[0])?;
            Ok(g.sum(sq))
        };
        let report = grad_check(&f, &params, 1e-6, 1e-6, None).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut params = ParamStore::<f64>::new();
        params
            .register("x", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let f = |g: &mut Graph<f64>, _vars: &[Var]| {
            let c = g.constant(Tensor::scalar(4.0));
            Ok(g.sum(c))
        };
        let report = grad_check(&f, &params, 1e-5, 1e-9, None).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn masked_cross_entropy_all_false_mask_is_error() {
        let mut g = Graph::<f64>::new();
        let logits = g.leaf(Tensor::from_rows(2, 3, vec![0.0; 6]).unwrap());
        let err = g.masked_cross_entropy(logits, &[0, 1], &[false, false]);
        assert!(err.is_err());
    }
}
