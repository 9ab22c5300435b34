//! Central finite-difference gradient oracle.
//!
//! Compares analytic gradients against `(f(x+h) - f(x-h)) / 2h` coordinate
//! by coordinate. The closure gets a scratch copy of the store each call,
//! so it may rebuild graphs freely.

use crate::params::ParamStore;

pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// (parameter name, max relative error within it)
    pub per_param: Vec<(String, f64)>,
}

/// Max over all coordinates of `|analytic - numeric| / max(1, |numeric|)`.
///
/// `f` must be deterministic. `analytic` maps parameter name to its
/// gradient, typically `Param::grad` after a backward pass.
pub fn fd_check<F>(store: &ParamStore, mut f: F, analytic: &ParamStore) -> FdReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut scratch = clone_store(store);
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        let n = store.get(name).unwrap().data.len();
        let mut param_max = 0.0f64;
        for i in 0..n {
            let orig = scratch.get(name).unwrap().data[i];
            scratch.get_mut(name).unwrap().data[i] = orig + FD_STEP;
            let up = f(&scratch);
            scratch.get_mut(name).unwrap().data[i] = orig - FD_STEP;
            let down = f(&scratch);
            scratch.get_mut(name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(name).unwrap().grad[i];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            param_max = param_max.max(rel);
        }
        max_rel = max_rel.max(param_max);
        per_param.push((name.clone(), param_max));
    }
    FdReport {
        max_rel_error: max_rel,
        per_param,
    }
}

/// Like [`fd_check`] but probing at most `coords_per_param` randomly
/// chosen coordinates in each parameter, for models too large to sweep
/// exhaustively. Sampling is deterministic given the seed.
pub fn fd_check_sampled<F>(
    store: &ParamStore,
    mut f: F,
    analytic: &ParamStore,
    coords_per_param: usize,
    seed: u64,
) -> FdReport
where
    F: FnMut(&ParamStore) -> f64,
{
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = clone_store(store);
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    for name in &names {
        let n = store.get(name).unwrap().data.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(coords_per_param);
        let mut param_max = 0.0f64;
        for &i in &idx {
            let orig = scratch.get(name).unwrap().data[i];
            scratch.get_mut(name).unwrap().data[i] = orig + FD_STEP;
            let up = f(&scratch);
            scratch.get_mut(name).unwrap().data[i] = orig - FD_STEP;
            let down = f(&scratch);
            scratch.get_mut(name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(name).unwrap().grad[i];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            param_max = param_max.max(rel);
        }
        max_rel = max_rel.max(param_max);
        per_param.push((name.clone(), param_max));
    }
    FdReport {
        max_rel_error: max_rel,
        per_param,
    }
}

pub fn clone_store(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, p) in store.iter() {
        out.insert(name, &p.shape, p.data.clone());
    }
    out
}
