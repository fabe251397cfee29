//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{ParamId, ParamSet};
use super::tape::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates to probe; every coordinate is checked when the model has fewer.
    pub samples: usize,
    /// Denominator floor for the relative error, so that gradients which are
    /// zero up to round-off are compared on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            samples: 200,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(ParamId, usize, f64, f64)>,
    pub passed: bool,
}

/// Compares the analytic gradient returned by `loss` against central
/// differences on a random subsample of coordinates.
///
/// `loss` must be deterministic; it is called twice up front and a
/// disagreement is reported as a usage error.
pub fn grad_check<T, P, F>(params: &mut P, mut loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    P: ParamSet<T> + ?Sized,
    F: FnMut(&P) -> Result<(T, Gradients<T>)>,
{
    if !(opts.tolerance > 0.0) || !(opts.step > 0.0) {
        return Err(Error::Usage("grad_check needs positive tolerance and step".into()));
    }
    let (l0, grads) = loss(params)?;
    let (l1, _) = loss(params)?;
    if l0.as_f64().to_bits() != l1.as_f64().to_bits() {
        return Err(Error::Usage(format!("non-deterministic loss closure: {l0} then {l1}")));
    }

    let mut coords = Vec::new();
    for id in params.param_ids() {
        let n = params.param(id).map_or(0, |p| p.len());
        coords.extend((0..n).map(|i| (id, i)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picked: Vec<usize> = if coords.len() <= opts.samples {
        (0..coords.len()).collect()
    } else {
        let mut v = sample(&mut rng, coords.len(), opts.samples).into_vec();
        v.sort_unstable();
        v
    };

    let h = T::lit(opts.step);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &c in &picked {
        let (id, i) = coords[c];
        let analytic = grads.get(id).map_or(0.0, |g| g.as_slice()[i].as_f64());
        let original = params.param(id).expect("listed id").as_slice()[i];

        params.param_mut(id).expect("listed id").as_mut_slice()[i] = original + h;
        let (plus, _) = loss(params)?;
        params.param_mut(id).expect("listed id").as_mut_slice()[i] = original - h;
        let (minus, _) = loss(params)?;
        params.param_mut(id).expect("listed id").as_mut_slice()[i] = original;

        let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * opts.step);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((id, i, analytic, numeric));
        }
    }
    Ok(GradCheckReport {
        checked: picked.len(),
        max_rel_error: max_rel,
        worst,
        passed: max_rel < opts.tolerance,
    })
}
