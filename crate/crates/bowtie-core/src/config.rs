//! Network architecture, prior hyperparameters and their depth/width scaling.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distributions::{gig_moments, GigParams, InvGammaParams};
use crate::error::{Error, Result};

/// Shrinkage family of the N-GIG weight prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    /// Inverse-gamma mixing (`lam = 0`); marginal weights are Student-t.
    Ig,
    /// Gamma mixing (`delta = 0`); marginal weights are variance-gamma.
    Gamma,
    /// Inverse-Gaussian mixing (`nu = -1/2`); marginal weights are normal-inverse-Gaussian.
    Igauss,
    /// Unrestricted GIG; no closed-form EM step.
    General,
}

impl PriorFamily {
    /// Default `(global, local)` GIG hyperparameters before scaling.
    pub fn default_priors(self) -> (GigParams, GigParams) {
        let p = match self {
            PriorFamily::Ig => GigParams { nu: -1.5, delta: 1.0, lam: 0.0 },
            PriorFamily::Gamma => GigParams { nu: 2.0, delta: 0.0, lam: 2.0 },
            PriorFamily::Igauss => GigParams { nu: -0.5, delta: 1.0, lam: 1.0 },
            PriorFamily::General => GigParams { nu: -1.0, delta: 1.0, lam: 1.0 },
        };
        (p, p)
    }

    fn admits(self, p: &GigParams) -> bool {
        match self {
            PriorFamily::Ig => p.lam == 0.0,
            PriorFamily::Gamma => p.delta == 0.0,
            PriorFamily::Igauss => p.nu == -0.5 && p.delta > 0.0 && p.lam > 0.0,
            PriorFamily::General => p.delta > 0.0 && p.lam > 0.0,
        }
    }
}

/// Architecture plus every prior hyperparameter of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Layer widths `[D_0, D_1, ..., D_L, D_{L+1}]`: inputs, hidden layers, outputs.
    pub dims: Vec<usize>,
    /// Gate temperature `T`.
    pub temperature: f64,
    pub prior_family: PriorFamily,
    /// Global shrinkage prior before depth scaling.
    pub glob_prior: GigParams,
    /// Local shrinkage prior before width scaling.
    pub loc_prior_base: GigParams,
    /// Prior variance `s0^2` of every bias.
    pub bias_var: f64,
    /// Inverse-gamma prior of the output noise variances.
    pub noise_prior_out: InvGammaParams,
    /// Inverse-gamma prior of the hidden-layer noise variances.
    pub noise_prior_hidden: InvGammaParams,
    pub seed: u64,
}

impl NetworkConfig {
    /// `inputs -> hidden[0] -> ... -> outputs` with default hyperparameters.
    pub fn new(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(inputs);
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let (glob, loc) = PriorFamily::Ig.default_priors();
        NetworkConfig {
            dims,
            temperature: 0.1,
            prior_family: PriorFamily::Ig,
            glob_prior: glob,
            loc_prior_base: loc,
            bias_var: 1.0,
            noise_prior_out: InvGammaParams { alpha: 2.0, beta: 0.5 },
            noise_prior_hidden: InvGammaParams { alpha: 3.0, beta: 0.03 },
            seed: 0,
        }
    }

    /// Switches family and resets the shrinkage hyperparameters to its defaults.
    pub fn with_family(mut self, family: PriorFamily) -> Self {
        let (g, l) = family.default_priors();
        self.prior_family = family;
        self.glob_prior = g;
        self.loc_prior_base = l;
        self
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 3 {
            return Err(Error::Config(format!("need at least one hidden layer, dims = {:?}", self.dims)));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {:?}", self.dims)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.bias_var > 0.0 && self.bias_var.is_finite()) {
            return Err(Error::Config(format!("bias variance must be positive, got {}", self.bias_var)));
        }
        self.noise_prior_out.validate()?;
        self.noise_prior_hidden.validate()?;
        for (name, p) in [("global", &self.glob_prior), ("local", &self.loc_prior_base)] {
            p.validate().map_err(|e| Error::Config(format!("{name} prior: {e}")))?;
            if !self.prior_family.admits(p) {
                return Err(Error::Config(format!(
                    "{name} prior {p:?} is not a member of the {:?} family",
                    self.prior_family
                )));
            }
            // The first sweep reads E[1/x] under the prior; it must exist.
            if !gig_moments(p)?.inv_mean_is_finite() {
                return Err(Error::Config(format!("{name} prior {p:?} has an infinite inverse mean")));
            }
        }
        Ok(())
    }
}

/// Prior hyperparameters after depth/width scaling, carried with the fitted state.
/// `glob` is the value the EM step moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub family: PriorFamily,
    pub temperature: f64,
    pub glob: GigParams,
    /// Local prior of each weight layer `l = 1..=L+1` (index `l - 1`).
    pub loc: Vec<GigParams>,
    pub bias_var: f64,
    pub noise_out: InvGammaParams,
    pub noise_hidden: InvGammaParams,
}

/// `delta_glob / sqrt(L)` and, per layer, `delta_loc / sqrt(D_{l-1})`.
/// Orders and large-x scales are unchanged.
pub fn scale_hyperparameters(config: &NetworkConfig) -> Priors {
    let depth = config.depth() as f64;
    let mut glob = config.glob_prior;
    glob.delta /= libm::sqrt(depth);
    let loc = (1..config.dims.len())
        .map(|l| {
            let mut p = config.loc_prior_base;
            p.delta /= libm::sqrt(config.dims[l - 1] as f64);
            p
        })
        .collect();
    Priors {
        family: config.prior_family,
        temperature: config.temperature,
        glob,
        loc,
        bias_var: config.bias_var,
        noise_out: config.noise_prior_out,
        noise_hidden: config.noise_prior_hidden,
    }
}
