//! Central finite-difference check of reverse-mode gradients.

use super::graph::{Graph, NodeId, Parameter};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// `(parameter, flat index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Compares reverse-mode gradients of a scalar computation against central
/// differences `(f(w + h) - f(w - h)) / 2h`.
///
/// `build` receives a fresh graph and one node per entry of `params` and
/// returns the scalar root. The per-entry error is
/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn check_gradient<F>(build: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradientReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut slots: Vec<Parameter> = params.iter().cloned().map(Parameter::new).collect();

    let mut graph = Graph::new();
    let ids: Vec<NodeId> = slots
        .iter()
        .enumerate()
        .map(|(i, p)| graph.param(i, p))
        .collect();
    let root = build(&mut graph, &ids)?;
    graph.backward_into(root, &mut slots)?;
    let analytic: Vec<Tensor> = slots.iter().map(|p| p.gradient.clone()).collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(i, &Parameter::new(t.clone())))
            .collect();
        let root = build(&mut g, &ids)?;
        g.value(root)
            .item()
            .ok_or_else(|| Error::NonScalarRoot(g.value(root).shape().to_vec()))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            work[p].data_mut()[i] = original + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = original - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = original;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        numeric.push(grad);
    }

    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = None;
    for (p, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let abs = (av - nv).abs();
            let rel = abs / av.abs().max(nv.abs()).max(RELATIVE_ERROR_FLOOR);
            max_abs = max_abs.max(abs);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((p, i));
            }
        }
    }

    Ok(GradientReport {
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
        worst,
        analytic,
        numeric,
        tolerance: tol,
    })
}
