//! Central-difference gradient verification.

use rand::Rng;

use super::param::{GradBuffer, ParamStore};
use crate::error::Result;

/// Denominator floor for the relative error so that near-zero gradients are
/// judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compare analytic gradients against central differences with step `h`
/// at `probe_count` coordinates drawn uniformly over all scalar weights.
pub fn grad_check<F, R>(
    mut f: F,
    params: &ParamStore,
    probe_count: usize,
    tolerance: f64,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, GradBuffer)>,
    R: Rng + ?Sized,
{
    let (_, analytic) = f(params)?;
    let total = params.scalar_count();
    let sizes: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
    let mut probes = Vec::with_capacity(probe_count);
    let mut work = params.clone();
    for _ in 0..probe_count.min(total.max(1)) {
        if total == 0 {
            break;
        }
        let mut flat = rng.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let name = params.iter().nth(pi).map(|p| p.name.clone()).unwrap_or_default();
        let id = params.id(&name).expect("name from store");
        let orig = params.get(id).value.data()[flat];

        work.get_mut(id).value.data_mut()[flat] = orig + step;
        let (plus, _) = f(&work)?;
        work.get_mut(id).value.data_mut()[flat] = orig - step;
        let (minus, _) = f(&work)?;
        work.get_mut(id).value.data_mut()[flat] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.get(id).data()[flat];
        probes.push(Probe {
            param: name,
            index: flat,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < tolerance,
        probes,
        max_rel_error,
        tolerance,
    })
}
