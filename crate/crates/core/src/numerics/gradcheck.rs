use super::{NumericsError, ParamId, ParamSet, Tape, Var};

/// Worst elementwise disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `backward` against central differences `(f(p+h) − f(p−h)) / 2h`.
///
/// `f` must rebuild the same scalar loss on the tape it is given. The error
/// for each element is `|a − n| / max(1, |a| + |n|)`. Only the parameters in
/// `only` are perturbed when it is `Some`.
pub fn grad_check<F>(params: &ParamSet, f: F, h: f64, only: Option<&[ParamId]>) -> Result<GradCheckReport, NumericsError>
where
    F: for<'p> Fn(&mut Tape<'p>) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape);
        tape.backward(loss)?
    };
    let eval = |p: &ParamSet| {
        let mut tape = Tape::new(p);
        let loss = f(&mut tape);
        tape.value(loss).item()
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).data()[k];
            let err = (a - numeric).abs() / 1f64.max(a.abs() + numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
