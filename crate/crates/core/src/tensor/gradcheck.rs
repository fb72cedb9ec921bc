//! Finite-difference gradient checks.

use super::{GradTape, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(analytic, numeric, label)` at the worst element.
    pub worst: Option<(f64, f64, String)>,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, label: impl FnOnce() -> String) {
        let rel = relative_error(analytic, numeric, floor);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((analytic, numeric, label()));
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients
/// from turning round-off into large ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Five-point central difference of `f` at `x` with step `h`.
pub fn five_point(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((-f(x + 2.0 * h)? + 8.0 * f(x + h)? - 8.0 * f(x - h)? + f(x - 2.0 * h)?) / (12.0 * h))
}

/// Checks the gradient of the scalar built by `build` with respect to every
/// element of every input.
pub fn check_inputs(
    inputs: &[Tensor],
    build: &dyn Fn(&mut GradTape, &[Var]) -> Result<Var>,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = GradTape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = build(&mut t, &vs)?;
        Ok(t.value(out).item())
    };
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport::new();
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            let numeric = five_point(
                |x| {
                    xs[k].data_mut()[i] = x;
                    eval(&xs)
                },
                orig,
                h,
            )?;
            xs[k].data_mut()[i] = orig;
            report.record(analytic.data()[i], numeric, floor, || format!("input {k}[{i}]"));
        }
    }
    Ok(report)
}

/// Compares the gradients already accumulated in `store` against central
/// differences of `loss` at the listed `(parameter, element)` probes.
pub fn check_params(
    store: &mut ParamStore,
    probes: &[(ParamId, usize)],
    loss: &dyn Fn(&ParamStore) -> Result<f64>,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new();
    for &(id, i) in probes {
        let orig = store.get(id).value.data()[i];
        let numeric = five_point(
            |x| {
                store.get_mut(id).value.data_mut()[i] = x;
                loss(store)
            },
            orig,
            h,
        )?;
        store.get_mut(id).value.data_mut()[i] = orig;
        let p = store.get(id);
        report.record(p.grad.data()[i], numeric, floor, || format!("{}[{i}]", p.name));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_has_negligible_error() {
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
        let r = check_inputs(
            &[x],
            &|t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            1e-3,
            1e-6,
        )
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // d(w²)/dw = 4 at w = 2; the stored gradient is wrong on purpose
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![2.0]));
        store.get_mut(id).grad = Tensor::from_vec(vec![1.0]);
        let r = check_params(&mut store, &[(id, 0)], &|s| Ok(s.value(id).data()[0].powi(2)), 1e-4, 1e-6).unwrap();
        assert!((r.max_rel_error - 0.75).abs() < 1e-9);
        assert_eq!(store.value(id).data(), &[2.0]);
    }

    #[test]
    fn floor_bounds_small_gradients() {
        assert_eq!(relative_error(1e-12, 0.0, 1e-6), 1e-6);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
    }
}
