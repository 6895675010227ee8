//! Central finite differences and the analytic-vs-numeric comparison.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-8;

/// Central-difference estimate of the gradient of `f` at `t`.
pub fn finite_diff_grad<F>(mut f: F, t: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = t.clone();
    let mut grad = Vec::with_capacity(t.numel());
    for i in 0..t.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(t.shape(), grad)
}

/// |a − n| / max(|a|, |n|, 1e-8).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Worst relative error over all coordinates.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Outcome of comparing backward against finite differences for one function.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    /// Worst relative error over every checked input.
    pub worst: f64,
    /// Index of the input holding the worst coordinate.
    pub worst_input: usize,
    pub coordinates: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

/// Compare backward against central differences for a scalar function of
/// several tensors. `build` records the function on a fresh graph given the
/// inputs as tracked leaves and returns the scalar root.
pub fn check_gradient<F>(name: &str, inputs: &[Tensor], build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;

    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        g.value(root).item()
    };

    let mut report = GradReport {
        name: name.to_string(),
        worst: 0.0,
        worst_input: 0,
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = finite_diff_grad(
            |t| {
                probe[i] = t.clone();
                eval(&probe)
            },
            &inputs[i],
            DEFAULT_STEP,
        )?;
        probe[i] = inputs[i].clone();
        if !analytic.all_finite() {
            return Err(Error::Domain(format!(
                "{name}: non-finite analytic gradient"
            )));
        }
        let err = max_relative_error(&analytic, &numeric);
        if err > report.worst {
            report.worst = err;
            report.worst_input = i;
        }
        report.coordinates += inputs[i].numel();
    }
    Ok(report)
}

/// A named gradient check that can be run on demand.
pub struct GradSuite {
    pub name: &'static str,
    pub run: fn() -> Result<GradReport>,
}

/// Run every suite, in order. An empty list is reported as an error.
pub fn run_suites(suites: &[GradSuite]) -> Result<Vec<GradReport>> {
    if suites.is_empty() {
        return Err(Error::invalid("gradient suite registry is empty"));
    }
    suites.iter().map(|s| (s.run)()).collect()
}
