//! Multi-start fits combined by tempered-ELBO model averaging.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cavi::{fit_cavi, CaviOptions};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::predict::{predict_point, PredictOptions, PredictiveSummary};
use crate::state::{Dataset, FitResult};

/// Default tempering `zeta`.
pub const DEFAULT_ZETA: f64 = 0.05;

/// `softmax(zeta * elbo)`, evaluated after subtracting the maximum.
pub fn ensemble_weights(elbos: &[f64], zeta: f64) -> Result<Vec<f64>> {
    if elbos.is_empty() {
        return Err(Error::Domain("ensemble needs at least one member".into()));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::Domain(format!("zeta must be positive, got {zeta}")));
    }
    let top = elbos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = elbos.iter().map(|e| libm::exp(zeta * (e - top))).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Moments of the mixture `sum_k w_k N(mu_k, var_k)` per output coordinate.
pub fn mixture(members: &[PredictiveSummary], weights: &[f64]) -> Result<PredictiveSummary> {
    if members.is_empty() || members.len() != weights.len() {
        return Err(Error::Dimension(format!("{} summaries, {} weights", members.len(), weights.len())));
    }
    let dim = members[0].mean.len();
    let mut mean = alloc::vec![0.0; dim];
    let mut within = alloc::vec![0.0; dim];
    let mut signal = alloc::vec![0.0; dim];
    let mut second = alloc::vec![0.0; dim];
    for (s, &w) in members.iter().zip(weights) {
        for i in 0..dim {
            mean[i] += w * s.mean[i];
            within[i] += w * s.variance[i];
            signal[i] += w * s.signal_variance[i];
            second[i] += w * s.mean[i] * s.mean[i];
        }
    }
    let between: Vec<f64> = (0..dim).map(|i| (second[i] - mean[i] * mean[i]).max(0.0)).collect();
    let variance = (0..dim).map(|i| within[i] + between[i]).collect();
    let signal_variance = (0..dim).map(|i| signal[i] + between[i]).collect();
    Ok(PredictiveSummary { mean, variance, signal_variance, samples: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<FitResult>,
    pub weights: Vec<f64>,
    pub zeta: f64,
}

impl EnsembleModel {
    /// Builds the weights from the members' final ELBOs.
    pub fn from_members(members: Vec<FitResult>, zeta: f64) -> Result<Self> {
        let elbos: Vec<f64> = members.iter().map(|m| m.final_elbo()).collect();
        let weights = ensemble_weights(&elbos, zeta)?;
        Ok(EnsembleModel { members, weights, zeta })
    }

    /// Indices of members whose fit stopped before converging.
    pub fn unconverged(&self) -> Vec<usize> {
        self.members.iter().enumerate().filter(|(_, m)| !m.converged).map(|(i, _)| i).collect()
    }

    pub fn predict(&self, x: &[f64], options: &PredictOptions) -> Result<PredictiveSummary> {
        let s = self.members.iter().map(|m| predict_point(&m.global, x, options)).collect::<Result<Vec<_>>>()?;
        mixture(&s, &self.weights)
    }
}

/// Seed, config and init scheme of member `k`.
pub fn member_setup(config: &NetworkConfig, options: &CaviOptions, k: usize) -> (NetworkConfig, CaviOptions) {
    let mut c = config.clone();
    c.seed = config.seed.wrapping_add(k as u64);
    let mut o = options.clone();
    o.init_scheme = if k.is_multiple_of(2) { InitScheme::Laplace } else { InitScheme::SpikeSlab };
    (c, o)
}

/// Fits member `k` with its own deterministic generator.
pub fn fit_member(config: &NetworkConfig, data: &Dataset, options: &CaviOptions, k: usize) -> Result<FitResult> {
    let (c, o) = member_setup(config, options, k);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    fit_cavi(&c, data, &o, &mut rng)
}

/// `k` sequential member fits with seeds `seed + 0..k`, alternating init schemes.
pub fn fit_ensemble(config: &NetworkConfig, data: &Dataset, k: usize, zeta: f64, options: &CaviOptions) -> Result<EnsembleModel> {
    let members = (0..k).map(|i| fit_member(config, data, options, i)).collect::<Result<Vec<_>>>()?;
    EnsembleModel::from_members(members, zeta)
}
