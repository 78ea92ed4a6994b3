//! Central finite-difference verification of analytic gradients.

use std::fmt;

use crate::error::Result;
use crate::params::{Gradients, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Perturbation half-width.
    pub epsilon: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Absolute differences at or below this always pass.
    pub abs_floor: f64,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions { epsilon: 1e-5, tolerance, abs_floor: 1e-6 }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self::with_tolerance(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    /// Largest relative error among elements above the absolute floor.
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub options: GradCheckOptions,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.params.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_relative_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameter,elements,max_relative_error,max_abs_error,passed")?;
        for p in &self.params {
            writeln!(f, "{},{},{:.3e},{:.3e},{}", p.name, p.elements, p.max_relative_error, p.max_abs_error, p.passed)?;
        }
        Ok(())
    }
}

/// Compare `loss_and_grads` against central differences of its loss, element
/// by element, for every parameter of `store`. The closure must be
/// deterministic (dropout off).
pub fn gradient_check<F>(
    store: &ParameterStore,
    loss_and_grads: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(f64, Gradients)>,
{
    if store.is_empty() {
        return Ok(GradCheckReport { options, params: Vec::new() });
    }
    let (_, analytic) = loss_and_grads(store)?;
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let mut passed = true;
        let n = store.get(id).len();
        for flat in 0..n {
            let original = store.get(id).as_slice().expect("standard layout")[flat];
            work.get_mut(id).as_slice_mut().expect("standard layout")[flat] = original + options.epsilon;
            let (plus, _) = loss_and_grads(&work)?;
            work.get_mut(id).as_slice_mut().expect("standard layout")[flat] = original - options.epsilon;
            let (minus, _) = loss_and_grads(&work)?;
            work.get_mut(id).as_slice_mut().expect("standard layout")[flat] = original;

            let numeric = (plus - minus) / (2.0 * options.epsilon);
            let exact = analytic.get(id).as_slice().expect("standard layout")[flat];
            let abs = (numeric - exact).abs();
            max_abs = max_abs.max(abs);
            if abs > options.abs_floor {
                let rel = abs / numeric.abs().max(exact.abs());
                max_rel = max_rel.max(rel);
                if rel > options.tolerance {
                    passed = false;
                }
            }
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            elements: n,
            max_relative_error: max_rel,
            max_abs_error: max_abs,
            passed,
        });
    }
    Ok(GradCheckReport { options, params })
}
