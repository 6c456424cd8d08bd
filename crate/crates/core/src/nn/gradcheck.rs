//! Finite-difference check of reverse-mode gradients using the fourth-order
//! five-point stencil.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamStore};
use super::real::Real;
use super::NnError;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Relative step: each entry θ is perturbed by `eps · max(1, |θ|)`.
    pub eps: f64,
    /// Floor on the relative-error denominator. Entries whose gradients are
    /// both below it are compared by absolute difference scaled by `floor`,
    /// since finite differences cannot resolve them relatively.
    pub floor: f64,
    /// Upper bound on checked entries per parameter matrix; `None` checks all.
    pub max_entries_per_param: Option<usize>,
    /// Seed for choosing entries when a parameter is subsampled.
    pub seed: u64,
    /// Build training-mode graphs (with this dropout seed) instead of
    /// inference graphs. Any dropout draw then fails the check.
    pub training_seed: Option<u64>,
}

impl GradCheckConfig {
    pub fn new(eps: f64) -> Self {
        Self { eps, floor: 1e-8, max_entries_per_param: None, seed: 0, training_seed: None }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_max_entries(mut self, n: usize) -> Self {
        self.max_entries_per_param = Some(n);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub entries_checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn make_graph<T: Real>(s: &ParamStore<T>, seed: Option<u64>) -> Graph<'_, T> {
    match seed {
        Some(seed) => Graph::training(s, ChaCha8Rng::seed_from_u64(seed)),
        None => Graph::new(s),
    }
}

fn analytic_gradients<T, F>(store: &ParamStore<T>, cfg: &GradCheckConfig, loss_fn: &F) -> Result<Gradients<T>, NnError>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, NnError>,
{
    let mut g = make_graph(store, cfg.training_seed);
    let loss = loss_fn(&mut g)?;
    if g.is_stochastic() {
        return Err(NnError::NonDeterministic);
    }
    g.backward(loss)
}

/// Five-point derivatives of the loss evaluated on `numeric_store`,
/// compared entry by entry with `analytic`.
fn compare<T, U, F>(
    analytic: &Gradients<T>,
    numeric_store: &ParamStore<U>,
    cfg: &GradCheckConfig,
    loss_fn: &F,
) -> Result<GradCheckReport, NnError>
where
    T: Real,
    U: Real,
    F: Fn(&mut Graph<'_, U>) -> Result<Var, NnError>,
{
    let eval = |s: &ParamStore<U>| -> Result<f64, NnError> {
        let mut g = make_graph(s, cfg.training_seed);
        let loss = loss_fn(&mut g)?;
        if g.is_stochastic() {
            return Err(NnError::NonDeterministic);
        }
        Ok(g.value(loss).item().as_f64())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = numeric_store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_entry: 0, entries_checked: 0 };
    for id in numeric_store.ids() {
        let len = numeric_store.get(id).len();
        let entries: Vec<usize> = match cfg.max_entries_per_param {
            Some(k) if k < len => {
                let mut picked = sample(&mut rng, len, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        for e in entries {
            let base = numeric_store.get(id).as_slice()[e];
            // A power-of-two step keeps θ ± h and θ ± 2h (nearly always) exact.
            let h = (cfg.eps * base.as_f64().abs().max(1.0)).log2().round().exp2();
            let mut at = |k: f64| -> Result<f64, NnError> {
                probe.get_mut(id).as_mut_slice()[e] = U::of(base.as_f64() + k * h);
                eval(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
            probe.get_mut(id).as_mut_slice()[e] = base;
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
            let err = relative_error(analytic.get(id).as_slice()[e].as_f64(), numeric, cfg.floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = numeric_store.name(id).to_string();
                report.worst_entry = e;
            }
        }
    }
    Ok(report)
}

/// Compares reverse-mode gradients of the scalar produced by `loss_fn`
/// against finite differences in the same precision over the entries of
/// `store`.
pub fn grad_check<T, F>(store: &ParamStore<T>, cfg: &GradCheckConfig, loss_fn: F) -> Result<GradCheckReport, NnError>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, NnError>,
{
    let analytic = analytic_gradients(store, cfg, &loss_fn)?;
    compare(&analytic, store, cfg, &loss_fn)
}

/// Compares reverse-mode gradients computed in `T` against double-precision
/// finite differences of the same loss at the same parameter values.
///
/// In single precision the loss itself carries rounding noise that finite
/// differences amplify by `1/h`; the double-precision reference isolates the
/// error of the `T` tape.
pub fn grad_check_reference<T, F, G>(
    store: &ParamStore<T>,
    cfg: &GradCheckConfig,
    loss_fn: F,
    reference_fn: G,
) -> Result<GradCheckReport, NnError>
where
    T: Real,
    F: Fn(&mut Graph<'_, T>) -> Result<Var, NnError>,
    G: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    let analytic = analytic_gradients(store, cfg, &loss_fn)?;
    compare(&analytic, &store.cast::<f64>(), cfg, &reference_fn)
}
