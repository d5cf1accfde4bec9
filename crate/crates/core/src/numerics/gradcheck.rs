use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are judged by absolute error at this scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of a scalar function against central differences.
pub fn grad_check<F>(f: F, input: &Tensor, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(input),
        tolerance,
    )
}

/// [`grad_check`] over several input tensors at once, probing every coordinate.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Shape("grad_check needs a scalar function".into()));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.dense(v)).collect();
    drop(tape);

    let mut probe = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        tolerance,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + FD_STEP;
            let plus = scalar(&eval(&probe)?)?;
            probe[i].data_mut()[j] = x0 - FD_STEP;
            let minus = scalar(&eval(&probe)?)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = rel_error(analytic[i][j], numeric);
            if !err.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check at input {i} coordinate {j}"
                )));
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

fn scalar((tape, _, out): &(Tape, Vec<Var>, Var)) -> Result<f64> {
    let v = tape.value(*out).item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(
            "function value during finite differences".into(),
        ))
    }
}
