//! Central finite differences — the ground-truth oracle for backprop tests.

use crate::error::{Error, Result};

use super::store::{GradMap, ParamStore};
use super::tensor::{Real, Tensor};

/// Estimate ∂loss/∂p for every scalar parameter as (L(p+h) − L(p−h)) / 2h.
///
/// `loss` is invoked with a perturbed copy of the store, two evaluations per
/// scalar — O(2·|params|) forward passes, strictly a test-budget tool.
pub fn finite_difference_gradient<F, L>(
    loss: L,
    params: &ParamStore<F>,
    step: F,
) -> Result<GradMap<F>>
where
    F: Real,
    L: Fn(&ParamStore<F>) -> Result<F>,
{
    if !(step > F::zero()) {
        return Err(Error::Usage(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut work = params.clone();
    let mut out = GradMap::new();
    let two = F::from_f64_lossy(2.0);
    for name in names {
        let n = params.get(&name)?.numel();
        let mut grad = vec![F::zero(); n];
        for i in 0..n {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + step;
            let plus = loss(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - step;
            let minus = loss(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;
            grad[i] = (plus - minus) / (two * step);
        }
        let shape = params.get(&name)?.shape().to_vec();
        out.insert(name, Tensor::new(shape, grad)?);
    }
    Ok(out)
}
