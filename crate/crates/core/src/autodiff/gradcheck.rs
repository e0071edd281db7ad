//! Central finite-difference verification of recorded gradients.

use super::{Tape, Var};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / (|analytic| + |numeric| + 1e-8)`.
    pub max_rel_err: f64,
    /// `(input, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// Elements compared.
    pub checked: usize,
    /// Elements whose stencil crossed a non-differentiable point at every
    /// step tried, where a central difference does not estimate the
    /// derivative.
    pub skipped: usize,
    /// Value of the checked function at the unperturbed inputs.
    pub value: f64,
    /// Every compared element.
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Step that produced `numeric`.
    pub step: f64,
}

impl Sample {
    /// Absolute error a central difference with this step incurs from
    /// rounding `f` alone, about `ε·|f|/h`, times `safety`.
    pub fn roundoff(&self, value: f64, safety: f64) -> f64 {
        safety * f64::EPSILON * value.abs() / self.step
    }
}

/// Compare the gradient of `f` with respect to every element of every input
/// against central differences with step `h`. Where the stencil crosses a
/// kink (see [`Tape::kink_signature`]) the step shrinks tenfold, at most
/// twice; elements still straddling one are counted in `skipped`.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    check_selected(inputs, h, |_, _| true, f)
}

/// Like [`check`], but the inputs are followed by every parameter of
/// `store`; `f` sees the store with its parameters routed to those leaves.
/// Only elements for which `select(input, element)` holds are probed.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    select: impl Fn(usize, usize) -> bool,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&ParamStore<f64>, &Tape<f64>, &[Var]) -> Result<Var>,
{
    let n = inputs.len();
    let mut all = inputs.to_vec();
    all.extend(store.params().iter().map(|p| p.value.clone()));
    check_selected(&all, h, select, |tape, vars| {
        for (k, id) in store.ids().enumerate() {
            tape.bind_var(id.index(), vars[n + k])?;
        }
        f(store, tape, &vars[..n])
    })
}

pub fn check_selected<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    select: impl Fn(usize, usize) -> bool,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<(f64, Vec<i8>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out)?.item();
        Ok((v, tape.kink_signature()))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let value = tape.value(out)?.item();
    let grads = tape.backward(out)?;
    let base_sig = tape.kink_signature();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
        value,
        samples: Vec::new(),
    };
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let ga = grads.grad(*v);
        for e in 0..inputs[k].len() {
            if !select(k, e) {
                continue;
            }
            let x0 = inputs[k].data()[e];
            let mut num = None;
            let mut used = h;
            for step in [h, h / 10.0, h / 100.0] {
                used = step;
                work[k].data_mut()[e] = x0 + step;
                let (fp, sp) = eval(&work)?;
                work[k].data_mut()[e] = x0 - step;
                let (fm, sm) = eval(&work)?;
                work[k].data_mut()[e] = x0;
                if sp == base_sig && sm == base_sig {
                    num = Some((fp - fm) / (2.0 * step));
                    break;
                }
            }
            let Some(num) = num else {
                report.skipped += 1;
                continue;
            };
            report.checked += 1;
            let a = ga.data()[e];
            report.samples.push(Sample {
                input: k,
                element: e,
                analytic: a,
                numeric: num,
                step: used,
            });
            let rel = (a - num).abs() / (a.abs() + num.abs() + 1e-8);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (k, e);
                report.analytic = a;
                report.numeric = num;
            }
        }
    }
    Ok(report)
}
