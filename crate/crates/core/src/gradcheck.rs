//! Central finite-difference verification of tape gradients.

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// (input index, flat coordinate) where the maximum occurred
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
}

/// Compares the tape gradient of a scalar function of one tensor with
/// central differences.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol)
}

/// Multi-input variant: every coordinate of every input is perturbed.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_sampled(f, inputs, step, tol, usize::MAX)
}

/// As [`finite_diff_check_many`], but probes at most `max_per_input`
/// evenly spaced coordinates of each input.
pub fn finite_diff_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    max_per_input: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(TensorError::Contract(format!("step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).expect("inputs are leaves"))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
        passed: true,
    };
    let mut work = inputs.to_vec();
    for (input, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = n.div_ceil(max_per_input.min(n).max(1));
        for coord in (0..n).step_by(stride) {
            let original = work[input].data()[coord];
            let (up, down) = (original + step, original - step);
            work[input].data_mut()[coord] = up;
            let f_up = eval(&work)?;
            work[input].data_mut()[coord] = down;
            let f_down = eval(&work)?;
            work[input].data_mut()[coord] = original;
            // divide by the representable spacing, not 2·step
            let numeric = (f_up - f_down) / (up - down);
            let err = (grad.data()[coord] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (input, coord);
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
