use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Worst disagreement found by [`finite_difference_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `step`, over every entry of every trainable parameter.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn finite_difference_check<F>(f: F, params: &ParamStore, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut work = params.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &work)?;
    tape.backward(loss, &mut work)?;
    let analytic: Vec<(ParamId, Vec<f64>)> =
        work.ids().filter(|&id| work.is_trainable(id)).map(|id| (id, work.grad(id).data().to_vec())).collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let (r, c) = tape.shape(loss);
        tape.value(loss).as_scalar().ok_or(Error::LossNotScalar(r, c))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for (id, grad) in analytic {
        for (k, &a) in grad.iter().enumerate() {
            let orig = work.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            let n = (plus - minus) / (2.0 * step);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = rel;
                report.worst_param = Some(work.name(id).to_string());
                report.worst_index = k;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
