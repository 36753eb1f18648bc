//! Central finite-difference checks for the tape.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Agreement between analytic and numeric gradients for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_abs_error: f64,
    /// `|a - n| / max(|a|, |n|, floor)`, maximized over checked entries.
    pub max_rel_error: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor so that entries with both gradients near zero are
    /// judged on absolute error.
    pub floor: f64,
    /// Upper bound on entries probed per input; larger inputs are strided.
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6, max_entries: 64 }
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: GradCheckOptions) -> Vec<GradCheck>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.input(t.clone())).collect();
    let out = f(&graph, &vars);
    let grads = graph.backward(out);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| grads.of(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; v.numel()]))
        .collect();

    let eval = |pert: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vs: Vec<Var<'_>> = pert.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vs).value().item()
    };

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        let mut rep = GradCheck { checked: 0, max_abs_error: 0.0, max_rel_error: 0.0 };
        for j in (0..n).step_by(stride) {
            let x = input.data[j];
            work[i].data[j] = x + opts.step;
            let up = eval(&work);
            work[i].data[j] = x - opts.step;
            let down = eval(&work);
            work[i].data[j] = x;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[i][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            rep.checked += 1;
            rep.max_abs_error = rep.max_abs_error.max(abs);
            rep.max_rel_error = rep.max_rel_error.max(rel);
        }
        reports.push(rep);
    }
    reports
}

/// Largest relative error across all reports.
pub fn worst(reports: &[GradCheck]) -> f64 {
    reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
}
