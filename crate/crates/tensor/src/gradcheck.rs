//! Central finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Settings for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Relative errors are computed as `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per input (evenly spread); `None` checks all.
    pub max_coords: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, floor: 1e-6, max_coords: None }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (input index, flat coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic gradient of the scalar `f(inputs)` with central
/// differences for every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, cfg: GradCheck) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let mut coords = Vec::new();
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        match cfg.max_coords {
            Some(m) if m < n => coords.extend((0..m).map(|i| (ti, i * n / m))),
            _ => coords.extend((0..n).map(|c| (ti, c))),
        }
    }
    check_coordinates(inputs, &coords, f, cfg)
}

/// Like [`check_gradients`] but only at the given `(input, flat index)` pairs.
pub fn check_coordinates<F>(inputs: &[Tensor<f64>], coords: &[(usize, usize)], f: F, cfg: GradCheck) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let graph = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::inference();
        let vs: Vec<_> = probe.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vs)?.value().item()
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: None };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for &(ti, c) in coords {
        let orig = inputs[ti].data()[c];
        probe[ti].data_mut()[c] = orig + cfg.step;
        let plus = eval(&probe)?;
        probe[ti].data_mut()[c] = orig - cfg.step;
        let minus = eval(&probe)?;
        probe[ti].data_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[ti].data()[c];
        let rel = relative_error(a, numeric, cfg.floor);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((ti, c, a, numeric));
        }
    }
    Ok(report)
}
