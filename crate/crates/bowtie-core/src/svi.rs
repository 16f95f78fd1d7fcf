//! Stochastic variational inference: minibatch local fits, scaled sufficient
//! statistics and natural-parameter interpolation of the global factors.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cavi::{
    elbo_terms_scaled, eta_beta_hat, update_activations, update_gamma, update_omega, update_psi, update_tau,
    weight_natural, ConvergenceMonitor,
};
use crate::config::NetworkConfig;
use crate::distributions::InvGammaParams;
use crate::error::{Error, Result};
use crate::init::{forward_locals, initialize, InitScheme};
use crate::linalg::Cholesky;
use crate::state::{Dataset, FitResult, GlobalVariational, LocalVariational};

/// Robbins-Monro step size `(1 + t)^(-k)`.
pub fn learning_rate(t: usize, k: f64) -> f64 {
    libm::pow(1.0 + t as f64, -k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviOptions {
    pub batch_size: usize,
    /// Forgetting rate `k` in `(0.5, 1]`.
    pub forgetting_rate: f64,
    pub max_iters: usize,
    /// Relative change of the scaled local ELBO that ends the inner loop.
    pub local_inner_tol: f64,
    pub local_inner_max: usize,
    /// Tolerance on the relative change of the trailing-window mean of the noisy ELBO.
    pub elbo_tol: f64,
    /// Length of the trailing window.
    pub window: usize,
    /// Consecutive below-tolerance window changes needed to stop.
    pub consecutive_hits: usize,
    pub init_scheme: InitScheme,
}

impl Default for SviOptions {
    fn default() -> Self {
        SviOptions {
            batch_size: 10,
            forgetting_rate: 0.7,
            max_iters: 20_000,
            local_inner_tol: 1e-4,
            local_inner_max: 50,
            elbo_tol: 1e-4,
            window: 5,
            consecutive_hits: 3,
            init_scheme: InitScheme::Laplace,
        }
    }
}

impl SviOptions {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!("batch size {} not in 1..={n}", self.batch_size)));
        }
        if !(self.forgetting_rate > 0.5 && self.forgetting_rate <= 1.0) {
            return Err(Error::Config(format!("forgetting rate {} not in (0.5, 1]", self.forgetting_rate)));
        }
        if self.window == 0 || self.consecutive_hits == 0 || !(self.elbo_tol > 0.0 && self.local_inner_tol > 0.0) {
            return Err(Error::Config(format!("bad convergence settings: {self:?}")));
        }
        Ok(())
    }
}

/// Coordinate ascent over `(omega, a, gamma)` of a minibatch with the globals
/// held fixed, until the scaled local ELBO settles.
pub fn fit_batch_locals(
    global: &GlobalVariational,
    batch: &Dataset,
    local: &mut LocalVariational,
    scale: f64,
    tol: f64,
    max_iters: usize,
) -> Result<()> {
    let mut monitor = ConvergenceMonitor::new(tol, 1);
    for _ in 0..max_iters {
        update_omega(global, batch, local);
        update_activations(global, batch, local)?;
        update_gamma(global, batch, local);
        if monitor.push(elbo_terms_scaled(global, batch, local, scale)?.local()) {
            break;
        }
    }
    Ok(())
}

/// Global part of one iteration given fitted minibatch locals: noise factors by
/// harmonic interpolation of the rate, then weight rows by interpolation of the
/// natural parameters (`B^{-1}`, `B^{-1} m`). `n_total / batch.len()` scales the
/// sufficient statistics. The shape of every noise factor is set to its full-data value.
pub fn svi_global_update(
    global: &mut GlobalVariational,
    batch: &Dataset,
    local: &LocalVariational,
    n_total: usize,
    step: f64,
) -> Result<()> {
    let scale = n_total as f64 / batch.len() as f64;
    let depth = global.depth();
    for l in 1..=depth + 1 {
        let prior = if l == depth + 1 { global.priors.noise_out } else { global.priors.noise_hidden };
        for d in 0..global.layers[l - 1].out_dim() {
            let beta_hat = eta_beta_hat(global, batch, local, l, d, scale);
            let old = global.layers[l - 1].noise[d].beta;
            let beta = 1.0 / ((1.0 - step) / old + step / beta_hat);
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::numerical("eta", format!("interpolated beta = {beta} at layer {l}, unit {d}")));
            }
            global.layers[l - 1].noise[d] = InvGammaParams { alpha: prior.alpha + 0.5 * n_total as f64, beta };
        }
    }
    for l in 1..=depth + 1 {
        for d in 0..global.layers[l - 1].out_dim() {
            let (prec_hat, lin_hat) = weight_natural(global, batch, local, l, d, scale)?;
            let row = &global.layers[l - 1].rows[d];
            let old = Cholesky::with_jitter(&row.b, "svi weights")?;
            let mut prec = old.inverse();
            let mut lin = prec.matvec(&row.m);
            prec.scale(1.0 - step);
            prec.add_scaled(step, &prec_hat);
            prec.symmetrize();
            for (v, h) in lin.iter_mut().zip(&lin_hat) {
                *v = (1.0 - step) * *v + step * h;
            }
            let c = Cholesky::with_jitter(&prec, "svi weights")?;
            let row = &mut global.layers[l - 1].rows[d];
            row.m = c.solve(&lin);
            row.b = c.inverse();
        }
    }
    Ok(())
}

/// Outcome of one SVI iteration.
#[derive(Debug, Clone)]
pub struct SviStep {
    /// Noisy ELBO: global terms plus `N/|S|` times the minibatch local terms.
    pub noisy_elbo: f64,
    /// Fitted locals of the minibatch, aligned with `batch`.
    pub local: LocalVariational,
    pub batch: Vec<usize>,
}

/// One iteration on minibatch `batch` (indices into `data`) with step size
/// `step`. `local` supplies starting locals for the minibatch; when `None` they
/// come from a forward pass through the current weight means.
pub fn svi_step(
    global: &mut GlobalVariational,
    data: &Dataset,
    batch: &[usize],
    step: f64,
    local: Option<LocalVariational>,
    options: &SviOptions,
) -> Result<SviStep> {
    let sub = data.subset(batch);
    let scale = data.len() as f64 / batch.len() as f64;
    update_tau(global)?;
    update_psi(global)?;
    let mut local = match local {
        Some(l) => l,
        None => forward_locals(global, &sub)?,
    };
    fit_batch_locals(global, &sub, &mut local, scale, options.local_inner_tol, options.local_inner_max)?;
    svi_global_update(global, &sub, &local, data.len(), step)?;
    let noisy_elbo = elbo_terms_scaled(global, &sub, &local, scale)?.total();
    Ok(SviStep { noisy_elbo, local, batch: batch.to_vec() })
}

/// Sorted uniform sample of `size` distinct indices from `0..n`.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs SVI until the trailing-window mean of the noisy ELBO settles or
/// `max_iters` is reached. The first minibatch also drives the random
/// initialization. Iteration `t` (from 0) uses step size `(1 + t)^(-k)`.
pub fn fit_svi<R: Rng + ?Sized>(
    config: &NetworkConfig,
    data: &Dataset,
    options: &SviOptions,
    rng: &mut R,
) -> Result<FitResult> {
    options.validate(data.len())?;
    let first = sample_batch(data.len(), options.batch_size, rng);
    let (mut global, init_local) = initialize(config, &data.subset(&first), options.init_scheme, rng)?;
    let mut trace = Vec::with_capacity(options.max_iters);
    let mut monitor = ConvergenceMonitor::new(options.elbo_tol, options.consecutive_hits);
    let mut converged = false;
    let mut pending = Some((first, init_local));
    for t in 0..options.max_iters {
        let (batch, local) = match pending.take() {
            Some((b, l)) => (b, Some(l)),
            None => (sample_batch(data.len(), options.batch_size, rng), None),
        };
        let step = svi_step(&mut global, data, &batch, learning_rate(t, options.forgetting_rate), local, options)?;
        trace.push(step.noisy_elbo);
        if trace.len() >= options.window {
            let w = &trace[trace.len() - options.window..];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            if monitor.push(mean) {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult { config: config.clone(), global, elbo_trace: trace, converged, seed: config.seed, wall_time: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_sizes() {
        assert_eq!(learning_rate(0, 0.7), 1.0);
        assert_eq!(learning_rate(3, 1.0), 0.25);
        assert!((learning_rate(1, 0.5) - libm::sqrt(0.5)).abs() < 1e-15);
    }

    #[test]
    fn harmonic_rate_interpolation() {
        let (old, hat, step) = (1.0, 3.0, 0.5);
        let beta: f64 = 1.0 / ((1.0 - step) / old + step / hat);
        assert!((beta - 1.5).abs() < 1e-15);
    }

    #[test]
    fn batches_are_sorted_and_distinct() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(50, 20, &mut rng);
        assert_eq!(b.len(), 20);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_batch(7, 7, &mut rng), (0..7).collect::<Vec<_>>());
    }
}
