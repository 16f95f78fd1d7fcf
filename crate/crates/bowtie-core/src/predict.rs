//! Variational predictive distribution at new inputs: local fits without a
//! target, closed-form moments, sampling and sparse prediction.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cavi::{activations_obs, gamma_obs, local_terms_obs, omega_obs, ConvergenceMonitor, GlobalCache};
use crate::distributions::sample_inv_gamma;
use crate::error::{Error, Result};
use crate::init::forward_obs;
use crate::linalg::{dot, psd_factor, Mat};
use crate::sparsify::SparseMask;
use crate::state::{layer_input, GlobalVariational, ObsLocal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    /// Relative change of the predictive ELBO regarded as converged.
    pub tol: f64,
    pub consecutive_hits: usize,
    pub max_iters: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { tol: 1e-4, consecutive_hits: 3, max_iters: 500 }
    }
}

/// Predictive mean and variance per output; `variance = signal_variance + E[eta^2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub signal_variance: Vec<f64>,
    /// Optional `J x D_{L+1}` draws.
    pub samples: Option<Mat>,
}

/// The local-factor part of the ELBO at a point without a target.
pub fn predictive_elbo(global: &GlobalVariational, x: &[f64], obs: &ObsLocal) -> f64 {
    let cache = GlobalCache::new(global);
    local_terms_obs(global, &cache, x, None, obs).local()
}

/// Fits `q(a*)`, `q(gamma*)` and `q(omega*)` at `x`, starting from a forward pass
/// through the weight means. Returns the locals and the predictive ELBO after
/// the initialization and after every sweep.
pub fn predictive_local_fit(
    global: &GlobalVariational,
    x: &[f64],
    options: &PredictOptions,
) -> Result<(ObsLocal, Vec<f64>)> {
    if x.len() != global.layers[0].in_dim() {
        return Err(Error::Dimension(format!("input has {} features, model expects {}", x.len(), global.layers[0].in_dim())));
    }
    let cache = GlobalCache::new(global);
    let depth = global.depth();
    let mut obs = forward_obs(global, x)?;
    for l in 1..=depth {
        omega_obs(&cache, x, &mut obs, l);
    }
    let mut trace = alloc::vec![local_terms_obs(global, &cache, x, None, &obs).local()];
    let mut monitor = ConvergenceMonitor::new(options.tol, options.consecutive_hits);
    monitor.push(trace[0]);
    for _ in 0..options.max_iters {
        for l in 1..=depth {
            omega_obs(&cache, x, &mut obs, l);
        }
        activations_obs(global, &cache, x, None, &mut obs, None)?;
        for l in 1..=depth {
            gamma_obs(global, &cache, x, &mut obs, l);
        }
        let e = local_terms_obs(global, &cache, x, None, &obs).local();
        if !e.is_finite() {
            return Err(Error::numerical("predictive elbo", format!("value {e}")));
        }
        trace.push(e);
        if monitor.push(e) {
            break;
        }
    }
    Ok((obs, trace))
}

/// Closed-form predictive mean and variance from fitted locals.
pub fn predictive_moments(global: &GlobalVariational, obs: &ObsLocal, x: &[f64]) -> Result<PredictiveSummary> {
    let out = global.output();
    let (ea, eaa) = layer_input(x, obs, global.depth() + 1);
    let mut mean = Vec::with_capacity(out.out_dim());
    let mut variance = Vec::with_capacity(out.out_dim());
    let mut signal = Vec::with_capacity(out.out_dim());
    for (row, noise) in out.rows.iter().zip(&out.noise) {
        if !(noise.alpha > 1.0) {
            return Err(Error::Domain(format!("noise mean undefined for alpha = {}", noise.alpha)));
        }
        let mu = dot(&row.m, &ea);
        let s = (row.second_moment().frob_dot(&eaa) - mu * mu).max(0.0);
        mean.push(mu);
        signal.push(s);
        variance.push(s + noise.mean());
    }
    Ok(PredictiveSummary { mean, variance, signal_variance: signal, samples: None })
}

/// `j` draws from the variational predictive at `x`, one per row.
pub fn sample_predictive<R: Rng + ?Sized>(
    global: &GlobalVariational,
    obs: &ObsLocal,
    x: &[f64],
    j: usize,
    rng: &mut R,
) -> Mat {
    let chain: Vec<Mat> = obs.layers.iter().map(|l| psd_factor(&l.s)).collect();
    let out = global.output();
    let weight_factors: Vec<Mat> = out.rows.iter().map(|r| psd_factor(&r.b)).collect();
    let mut draws = Mat::zeros(j, out.out_dim());
    let normal = |n: usize, rng: &mut R| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    for s in 0..j {
        let mut a = x.to_vec();
        for (lay, f) in obs.layers.iter().zip(&chain) {
            let e = f.matvec(&normal(lay.t.len(), rng));
            a = lay.gain.matvec(&a).iter().zip(&lay.t).zip(&e).map(|((m, t), e)| m + t + e).collect();
        }
        let aug = crate::state::augment(&a);
        for (d, (row, f)) in out.rows.iter().zip(&weight_factors).enumerate() {
            let e = f.matvec(&normal(row.m.len(), rng));
            let w: Vec<f64> = row.m.iter().zip(&e).map(|(m, e)| m + e).collect();
            let eta2 = sample_inv_gamma(&out.noise[d], rng);
            let z: f64 = StandardNormal.sample(rng);
            draws[(s, d)] = dot(&w, &aug) + libm::sqrt(eta2) * z;
        }
    }
    draws
}

/// Local fit plus closed-form moments at one point.
pub fn predict_point(global: &GlobalVariational, x: &[f64], options: &PredictOptions) -> Result<PredictiveSummary> {
    let (obs, _) = predictive_local_fit(global, x, options)?;
    predictive_moments(global, &obs, x)
}

/// Prediction from the masked model: dropped weights become a point mass at zero.
pub fn sparse_predict(
    global: &GlobalVariational,
    mask: &SparseMask,
    x: &[f64],
    options: &PredictOptions,
) -> Result<PredictiveSummary> {
    predict_point(&mask.apply(global)?, x, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::init::{initialize, InitScheme};
    use crate::state::Dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GlobalVariational {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Mat::from_fn(20, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = Mat::from_fn(20, 1, |i, _| x[(i, 0)] * 3.0);
        let data = Dataset::new(x, y).unwrap();
        initialize(&NetworkConfig::new(2, &[3, 2], 1), &data, InitScheme::Laplace, &mut rng).unwrap().0
    }

    #[test]
    fn noise_adds_inverse_gamma_mean() {
        let mut g = model();
        g.layers.last_mut().unwrap().noise[0] = crate::distributions::InvGammaParams { alpha: 3.0, beta: 2.0 };
        let (obs, _) = predictive_local_fit(&g, &[0.2, -0.4], &PredictOptions::default()).unwrap();
        let p = predictive_moments(&g, &obs, &[0.2, -0.4]).unwrap();
        assert!((p.variance[0] - p.signal_variance[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predictive_elbo_non_decreasing() {
        let g = model();
        let (_, trace) = predictive_local_fit(&g, &[0.5, 0.1], &PredictOptions { tol: 1e-12, consecutive_hits: 3, max_iters: 50 }).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn full_mask_is_identity() {
        let g = model();
        let mask = SparseMask::full(&g.dims());
        let o = PredictOptions::default();
        assert_eq!(sparse_predict(&g, &mask, &[0.3, 0.3], &o).unwrap(), predict_point(&g, &[0.3, 0.3], &o).unwrap());
    }

    #[test]
    fn undefined_noise_mean_is_an_error() {
        let mut g = model();
        g.layers.last_mut().unwrap().noise[0].alpha = 1.0;
        assert!(predict_point(&g, &[0.0, 0.0], &PredictOptions::default()).is_err());
    }
}
