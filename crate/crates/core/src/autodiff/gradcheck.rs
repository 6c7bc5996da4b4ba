use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub elements_checked: usize,
    /// Elements whose step had to shrink to stay off a ReLU/abs kink.
    pub shrunk_steps: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor of the relative error `|a - n| / max(|a|, |n|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Checks the gradient of the scalar built by `build` with respect to each of
/// `params`, using central differences with step `step`.
///
/// If a perturbed evaluation crosses a ReLU or abs kink, the step is shrunk
/// (down to `step / 1024`) until both sides share the base point's smooth
/// piece; the analytic gradient is only defined on that piece.
pub fn gradient_check<F>(params: &[Tensor], build: F, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| graph.param(p.clone())).collect();
    let out = build(&mut graph, &ids)?;
    if graph.value(out).len() != 1 {
        return Err(Error::contract("gradient_check needs a scalar output"));
    }
    graph.backward(out)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| graph.grad(id)).collect();
    let base_pattern = graph.kink_pattern();

    let eval = |perturbed: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|p| g.param(p.clone())).collect();
        let out = build(&mut g, &ids)?;
        Ok((g.value(out).values()[0], g.kink_pattern()))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut elements_checked = 0;
    let mut shrunk_steps = 0;

    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let original = params[pi].values()[ei];
            let mut h = step;
            let numeric = loop {
                work[pi].values_mut()[ei] = original + h;
                let (plus, pat_plus) = eval(&work)?;
                work[pi].values_mut()[ei] = original - h;
                let (minus, pat_minus) = eval(&work)?;
                let smooth = pat_plus == base_pattern && pat_minus == base_pattern;
                if smooth || h < step / 1024.0 {
                    break (plus - minus) / (2.0 * h);
                }
                h *= 0.25;
            };
            if h < step {
                shrunk_steps += 1;
            }
            work[pi].values_mut()[ei] = original;

            let a = analytic[pi].values()[ei];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if worst.is_none() || rel > max_rel_error {
                max_rel_error = rel;
                worst = Some((pi, ei));
            }
            elements_checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        elements_checked,
        shrunk_steps,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}
