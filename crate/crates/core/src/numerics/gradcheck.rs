//! Central finite-difference gradient checking in 64-bit.

use super::{Binding, ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Relative error used for all gradient checks: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares analytic gradients of `f` w.r.t. every entry of every input
/// against central differences with step `h`.
pub fn check<G>(inputs: &[Tensor<f64>], h: f64, f: G) -> Result<GradCheckReport>
where
    G: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.value().numel()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        for i in 0..grads.len() {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads[i], numeric, DEFAULT_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((which, i, grads[i], numeric));
            }
        }
    }
    Ok(report)
}

/// Finite-difference check over every entry of every parameter in `store`.
///
/// `limit` caps the number of entries probed per parameter (evenly strided).
pub fn check_store<G, E>(store: &ParamStore<f64>, h: f64, limit: Option<usize>, f: G) -> std::result::Result<GradCheckReport, E>
where
    G: for<'t, 's> Fn(&Binding<'t, 's, f64>) -> std::result::Result<Var<'t, f64>, E>,
    E: From<TensorError>,
{
    let tape = Tape::new();
    let binding = Binding::new(&tape, store);
    let loss = f(&binding)?;
    tape.backward(loss)?;
    let grads: std::collections::HashMap<ParamId, Vec<f64>> = binding.grads().into_iter().collect();

    let eval = |s: &ParamStore<f64>| -> std::result::Result<f64, E> {
        let tape = Tape::new();
        let b = Binding::new(&tape, s);
        Ok(f(&b)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut work = store.clone();
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.tensor(id).numel();
        let stride = limit.map_or(1, |l| n.div_ceil(l.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let analytic = grads.get(&id).map_or(0.0, |g| g[i]);
            let orig = work.tensor(id).data()[i];
            work.get_mut(id).tensor.data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic, numeric, DEFAULT_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((id.0, i, analytic, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor_near_zero() {
        assert_eq!(relative_error(0.0, 1e-6, 1e-3), 1e-3);
        assert!((relative_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cubic_passes_and_wrong_gradient_is_flagged() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let ok = check(std::slice::from_ref(&x), 1e-5, |_, v| v[0].mul(v[0]).unwrap().mul(v[0]).unwrap().sum()).unwrap();
        assert_eq!(ok.checked, 3);
        assert!(ok.max_rel_error < 1e-6, "{ok:?}");

        // max_axis has a kink; probing exactly at a tie exposes the one-sided gradient.
        let tie = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let bad = check(&[tie], 1e-4, |_, v| v[0].max_axis(1)?.sum()).unwrap();
        assert!(bad.max_rel_error > 0.1, "{bad:?}");
    }

    #[test]
    fn store_limit_strides_entries() {
        let mut s = ParamStore::new();
        let w = s.insert("w", Tensor::from_fn(&[10], |i| i as f64 * 0.1), super::super::ParamGroup::Other).unwrap();
        let r = check_store::<_, TensorError>(&s, 1e-5, Some(4), |p| p.var(w).exp()?.sum()).unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-6);
    }
}
