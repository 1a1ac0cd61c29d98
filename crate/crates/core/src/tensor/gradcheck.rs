//! Central finite-difference gradient checks.

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::TensorError;

pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative error, so components whose true value is
/// near zero are judged on absolute error at that scale.
pub const REL_FLOOR: f64 = 1e-6;

/// Rounding in `f(x ± h)` leaves central differences with absolute noise of
/// a few ulps of `|f|` divided by `2h`. Components smaller than that noise
/// over the tolerance cannot be resolved, so the relative-error denominator
/// is floored there.
pub const NOISE_ULPS: f64 = 8.0;

fn fd_noise(f: f64) -> f64 {
    NOISE_ULPS * f64::EPSILON * f.abs().max(1.0) / (2.0 * FD_STEP)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Components too small to resolve against the difference noise.
    pub unresolved: usize,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    fn new(tolerance: f64) -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            checked: 0,
            unresolved: 0,
            tolerance,
            pass: true,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, noise: f64) {
        let abs = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let floor = (noise / self.tolerance).max(REL_FLOOR);
        if scale < floor {
            self.unresolved += 1;
        }
        self.max_abs_err = self.max_abs_err.max(abs);
        self.max_rel_err = self.max_rel_err.max(abs / scale.max(floor));
        self.checked += 1;
        self.pass = self.max_rel_err <= self.tolerance;
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.unresolved += other.unresolved;
        self.pass = self.pass && other.pass && self.max_rel_err <= self.tolerance;
    }
}

fn scalar_of(g: &Graph, v: Var, what: &str) -> Result<f64, TensorError> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(TensorError::Shape {
            op: "grad_check",
            lhs: t.shape().to_vec(),
            rhs: vec![1],
        });
    }
    let x = t.item();
    if !x.is_finite() {
        return Err(TensorError::NonFinite(what.to_string()));
    }
    Ok(x)
}

/// Compares backward gradients of a scalar-valued `f` against central
/// differences for every element of every input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |ins: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out, "grad_check forward")
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let noise = fd_noise(scalar_of(&g, out, "grad_check forward")?);
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::new(tolerance);
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec);
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            report.record(a, numeric, noise);
        }
    }
    Ok(report)
}

/// Same check against selected entries of stored parameters.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    entries: &[(ParamId, usize)],
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        let noise = fd_noise(scalar_of(&g, out, "grad_check forward")?);
        (g.backward(out)?.into_param_grads(store), noise)
    };
    let (analytic, noise) = analytic;
    let mut work = store.clone();
    let mut report = GradCheckReport::new(tolerance);
    for &(id, i) in entries {
        let orig = work.get(id).data()[i];
        work.get_mut(id).data_mut()[i] = orig + FD_STEP;
        let plus = {
            let mut g = Graph::with_params(&work);
            let out = f(&mut g)?;
            scalar_of(&g, out, "grad_check forward")?
        };
        work.get_mut(id).data_mut()[i] = orig - FD_STEP;
        let minus = {
            let mut g = Graph::with_params(&work);
            let out = f(&mut g)?;
            scalar_of(&g, out, "grad_check forward")?
        };
        work.get_mut(id).data_mut()[i] = orig;
        report.record(analytic[id.index()][i], (plus - minus) / (2.0 * FD_STEP), noise);
    }
    Ok(report)
}
