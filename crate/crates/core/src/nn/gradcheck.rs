//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of every backward rule it checks. Probes whose `x - h` or
//! `x + h` pass takes a different branch (a ReLU changes sign, a max or
//! nearest neighbour switches) straddle a kink where central differences
//! are meaningless; they are skipped and counted.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Entries whose magnitudes are both below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CheckReport {
    /// Largest relative error over the compared probes.
    pub worst: f64,
    pub probes: usize,
    /// Probes dropped because they straddle a kink.
    pub skipped: usize,
}

impl CheckReport {
    pub fn merge(self, other: CheckReport) -> CheckReport {
        CheckReport {
            worst: self.worst.max(other.worst),
            probes: self.probes + other.probes,
            skipped: self.skipped + other.skipped,
        }
    }

    fn probe(&mut self, base: u64, plus: (f64, u64), minus: (f64, u64), h: f64, analytic: f64) {
        self.probes += 1;
        if plus.1 != base || minus.1 != base {
            self.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * h);
        self.worst = self.worst.max(rel_err(analytic, numeric));
    }
}

fn loss_value<F>(store: &ParamStore, inputs: &[Tensor], f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.check()?;
    Ok((tape.value(out).data()[0], tape.branch_pattern()))
}

/// Analytic against central-difference gradients of the scalar `f` with
/// respect to every input entry.
pub fn check_inputs_report<F>(store: &ParamStore, inputs: &[Tensor], f: F, h: f64) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (analytic, base): (Vec<Vec<f64>>, u64) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.input_with_grad(t.clone()))
            .collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| {
                grads
                    .wrt(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.len()])
            })
            .collect();
        (g, tape.branch_pattern())
    };
    let mut report = CheckReport::default();
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data()[j];
            probe[ti].data_mut()[j] = x0 + h;
            let plus = loss_value(store, &probe, &f)?;
            probe[ti].data_mut()[j] = x0 - h;
            let minus = loss_value(store, &probe, &f)?;
            probe[ti].data_mut()[j] = x0;
            report.probe(base, plus, minus, h, analytic[ti][j]);
        }
    }
    Ok(report)
}

/// Same as [`check_inputs_report`] but over the entries of every unfrozen
/// parameter. At most `max_per_param` evenly spaced entries of each
/// parameter are probed.
pub fn check_params_report<F>(
    store: &ParamStore,
    inputs: &[Tensor],
    f: F,
    h: f64,
    max_per_param: usize,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (grads, base) = {
        let mut tape = Tape::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        (tape.backward(out)?, tape.branch_pattern())
    };
    let mut probe = store.clone();
    let mut report = CheckReport::default();
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let n = p.value.len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        let analytic = grads.param(id);
        for j in (0..n).step_by(stride) {
            let x0 = p.value.data()[j];
            probe.get_mut(id).value.data_mut()[j] = x0 + h;
            let plus = loss_value(&probe, inputs, &f)?;
            probe.get_mut(id).value.data_mut()[j] = x0 - h;
            let minus = loss_value(&probe, inputs, &f)?;
            probe.get_mut(id).value.data_mut()[j] = x0;
            report.probe(base, plus, minus, h, analytic.map(|g| g[j]).unwrap_or(0.0));
        }
    }
    Ok(report)
}

/// Worst relative error of [`check_inputs_report`].
pub fn check_inputs<F>(store: &ParamStore, inputs: &[Tensor], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(check_inputs_report(store, inputs, f, h)?.worst)
}

/// Worst relative error of [`check_params_report`].
pub fn check_params<F>(store: &ParamStore, inputs: &[Tensor], f: F, h: f64, max_per_param: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(check_params_report(store, inputs, f, h, max_per_param)?.worst)
}

/// Reduces any tensor to a scalar through fixed pseudo-random weights so
/// every output entry contributes to the checked gradient.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let n = tape.value(y).len();
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let weights: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let z = tape.mul_const(y, &weights)?;
    Ok(tape.sum(z))
}
