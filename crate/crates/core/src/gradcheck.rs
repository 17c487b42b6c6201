//! Central finite-difference verification of tape gradients.
//!
//! Run in `f64`. A coordinate whose ±eps perturbation flips the sign of any
//! ReLU input is skipped and counted, since the loss is not differentiable
//! across the kink.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::error::Result;

/// A scalar function of a parameter store that can be evaluated repeatedly.
pub trait Differentiable {
    fn params(&self) -> &ParamStore<f64>;
    fn params_mut(&mut self) -> &mut ParamStore<f64>;
    /// Records the forward pass on `tape` and returns the scalar loss node.
    fn loss(&mut self, tape: &mut Tape<f64>) -> Result<NodeId>;
}

/// Closure-backed [`Differentiable`] for checking individual primitives.
pub struct FnObjective<F> {
    pub store: ParamStore<f64>,
    pub f: F,
}

impl<F> Differentiable for FnObjective<F>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<NodeId>,
{
    fn params(&self) -> &ParamStore<f64> {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }
    fn loss(&mut self, tape: &mut Tape<f64>) -> Result<NodeId> {
        (self.f)(&self.store, tape)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the max relative error.
    pub threshold: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled), or all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Fault to inject into the analytic pass (tests only).
    #[doc(hidden)]
    pub fault: Option<crate::autograd::OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            threshold: 1e-6,
            floor: 1e-4,
            max_coords: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub threshold: f64,
    /// Smallest `|x|` over ReLU inputs at the unperturbed point.
    pub relu_margin: Option<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= self.threshold && self.params.iter().all(|p| p.checked > 0)
    }
}

const KINK_RETRIES: usize = 8;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<M: Differentiable>(model: &mut M) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.relu_pattern()))
}

/// Compares analytic gradients of every non-frozen parameter against
/// central differences.
pub fn grad_check<M: Differentiable>(model: &mut M, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    model.params_mut().zero_grad();
    let mut tape = Tape::new();
    if let Some(kind) = cfg.fault {
        tape.inject_fault(kind);
    }
    let loss = model.loss(&mut tape)?;
    tape.backward(loss, model.params_mut())?;
    let base_pattern = tape.relu_pattern();
    let relu_margin = tape.relu_margin();
    drop(tape);

    let ids: Vec<ParamId> = model.params().ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| model.params().grad(id).data().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::new();
    for (&id, grad) in ids.iter().zip(&analytic) {
        let p = model.params().get(id);
        if p.frozen {
            continue;
        }
        let name = p.name.clone();
        let len = p.value.len();
        // With a budget, coordinates are visited in random order and those
        // straddling a ReLU kink are replaced by further draws, up to
        // `KINK_RETRIES` attempts per requested coordinate.
        let (coords, budget): (Vec<usize>, usize) = match cfg.max_coords {
            Some(k) if k < len => {
                let attempts = (k * KINK_RETRIES).min(len);
                (index::sample(&mut rng, len, attempts).into_vec(), k)
            }
            _ => ((0..len).collect(), len),
        };
        let mut report = ParamReport {
            name,
            max_rel_error: 0.0,
            checked: 0,
            skipped_kinks: 0,
        };
        for i in coords {
            if report.checked == budget {
                break;
            }
            let orig = model.params().value(id).data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + cfg.eps;
            let (plus, pat_plus) = evaluate(model)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - cfg.eps;
            let (minus, pat_minus) = evaluate(model)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let err = relative_error(grad[i], numeric, cfg.floor);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
        reports.push(report);
    }
    model.params_mut().zero_grad();
    Ok(GradCheckReport {
        params: reports,
        threshold: cfg.threshold,
        relu_margin,
    })
}
