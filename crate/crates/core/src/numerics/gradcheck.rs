//! Finite-difference gradient checking.
//!
//! This is the oracle every trainable module in the repository must pass:
//! central differences per parameter element (a deterministic sample of at
//! least 32 elements for large tensors), compared against the reverse-mode
//! gradients from the tape.

use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::optim::Params;
use super::rng::derive_rng;
use super::tape::{Tape, Var};
use super::tensor::{NumericsError, Result, Tensor};

/// Per-element comparison of analytic and numeric derivatives.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub per_parameter: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < self.tol
    }

    /// The worst offender, for diagnostics.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_parameter
            .iter()
            .max_by(|a, b| rel_err(a).total_cmp(&rel_err(b)))
    }
}

fn rel_err(c: &ParamCheck) -> f64 {
    c.abs_err / c.analytic.abs().max(c.numeric.abs()).max(1e-8)
}

/// Elements checked per tensor before sampling kicks in.
const SAMPLE_SIZE: usize = 32;

/// Check reverse-mode gradients of `loss_fn` against central finite
/// differences.
///
/// `loss_fn` must deterministically build a scalar loss node from the given
/// parameter leaves. It is re-invoked many times with perturbed parameters,
/// so anything random inside it has to be fixed by the caller.
pub fn grad_check<F>(loss_fn: F, params: &Params, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Var,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(NumericsError::InvalidArgument(format!(
            "grad_check eps must be in (0, 1e-2], got {eps}"
        )));
    }

    let eval = |p: &Params, want_grads: bool| -> Result<(f64, Option<BTreeMap<String, Tensor>>)> {
        let mut tape = Tape::new();
        let leaves = p.leaves(&mut tape);
        let loss = loss_fn(&mut tape, &leaves);
        let value = tape.value(loss).scalar_value();
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(format!(
                "grad_check loss evaluated to {value}"
            )));
        }
        if !want_grads {
            return Ok((value, None));
        }
        let grads = tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, var) in &leaves {
            out.insert(
                name.clone(),
                grads.get_or_zeros(*var, p.get(name).shape()),
            );
        }
        Ok((value, Some(out)))
    };

    let (_, analytic) = eval(params, true)?;
    let analytic = analytic.unwrap();

    let mut per_parameter = Vec::new();
    for (name, tensor) in params.iter() {
        let n = tensor.numel();
        let indices: Vec<usize> = if n <= SAMPLE_SIZE {
            (0..n).collect()
        } else {
            let mut rng = derive_rng(0x67726164, &format!("gradcheck.{name}"));
            let mut idx = sample(&mut rng, n, SAMPLE_SIZE).into_vec();
            idx.sort_unstable();
            idx
        };
        let a = &analytic[name];
        for idx in indices {
            let base = tensor.data()[idx];
            let probe = |delta: f64| -> Result<f64> {
                let mut bumped = params.clone();
                bumped.set(name, tensor.with_element(idx, base + delta));
                Ok(eval(&bumped, false)?.0)
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let analytic_v = a.data()[idx];
            per_parameter.push(ParamCheck {
                name: format!("{name}[{idx}]"),
                analytic: analytic_v,
                numeric,
                abs_err: (analytic_v - numeric).abs(),
            });
        }
    }

    let max_abs_err = per_parameter
        .iter()
        .map(|c| c.abs_err)
        .fold(0.0f64, f64::max);
    let max_rel_err = per_parameter.iter().map(rel_err).fold(0.0f64, f64::max);
    Ok(GradReport {
        max_abs_err,
        max_rel_err,
        per_parameter,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(w) = w^2 at w = 3: analytic and numeric both 6.
        let mut params = Params::new();
        params.insert("w", Tensor::scalar(3.0));
        let report = grad_check(
            |tape, leaves| {
                let w = leaves["w"];
                tape.square(w)
            },
            &params,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.pass(), "{report:?}");
        let c = &report.per_parameter[0];
        assert!((c.analytic - 6.0).abs() < 1e-9);
        assert!((c.numeric - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut params = Params::new();
        params.insert("w", Tensor::scalar(1.5));
        let report = grad_check(
            |tape, leaves| {
                let w = leaves["w"];
                let c = tape.constant(Tensor::scalar(4.0));
                let zero = tape.scale(w, 0.0);
                tape.add(zero, c)
            },
            &params,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.max_abs_err < 1e-8, "{report:?}");
    }

    #[test]
    fn rejects_bad_eps() {
        let mut params = Params::new();
        params.insert("w", Tensor::scalar(1.0));
        let err = grad_check(|tape, l| tape.square(l["w"]), &params, 0.0, 1e-4).unwrap_err();
        assert!(matches!(err, NumericsError::InvalidArgument(_)));
    }

    #[test]
    fn non_finite_loss_is_diagnosed() {
        let mut params = Params::new();
        params.insert("w", Tensor::scalar(1.0));
        let err = grad_check(
            |tape, _| tape.constant(Tensor::scalar(f64::NAN)),
            &params,
            1e-5,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite(_)));
    }

    #[test]
    fn large_tensor_is_sampled() {
        let mut params = Params::new();
        params.insert("w", Tensor::full(&[100], 2.0));
        let report = grad_check(
            |tape, leaves| {
                let sq = tape.square(leaves["w"]);
                tape.sum_all(sq)
            },
            &params,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.per_parameter.len(), 32);
        assert!(report.pass());
        assert!(
            (report.max_abs_err
                - report
                    .per_parameter
                    .iter()
                    .map(|c| c.abs_err)
                    .fold(0.0f64, f64::max))
            .abs()
                == 0.0
        );
    }
}
