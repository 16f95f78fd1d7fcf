//! Variational state containers and activation-moment bookkeeping.
//!
//! Every weight row is stored augmented: index 0 is the bias, indices `1..` are the
//! weights, so `z = m . (1, a)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, Priors};
use crate::distributions::{gig_moments, GigParams, InvGammaParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Training or test data. Inputs are already normalized; targets are raw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// `N x D_0` inputs.
    pub x: Mat,
    /// `N x D_{L+1}` targets.
    pub y: Mat,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Per-feature mean and standard deviation used to normalize `x`.
    pub norm: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormStats {
    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = (*v - m) / s;
        }
    }
}

impl Dataset {
    /// Unnamed dataset from already-normalized inputs.
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::Dimension(alloc::format!("{} inputs vs {} targets", x.rows(), y.rows())));
        }
        let feature_names = (0..x.cols()).map(|j| alloc::format!("x{j}")).collect();
        let target_names = (0..y.cols()).map(|j| alloc::format!("y{j}")).collect();
        Ok(Dataset { x, y, feature_names, target_names, norm: None })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` in order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = Mat::from_fn(idx.len(), self.x.cols(), |i, j| self.x[(idx[i], j)]);
        let y = Mat::from_fn(idx.len(), self.y.cols(), |i, j| self.y[(idx[i], j)]);
        Dataset {
            x,
            y,
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
            norm: self.norm.clone(),
        }
    }
}

/// Gaussian factor `N(m, B)` of one augmented weight row `(b, W_{l,d})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub m: Vec<f64>,
    pub b: Mat,
}

impl WeightRow {
    /// `E[W~^T W~] = B + m m^T`.
    pub fn second_moment(&self) -> Mat {
        let mut s = self.b.clone();
        s.add_outer(1.0, &self.m);
        s
    }

    /// `E[W^T W]` restricted to the weight block.
    pub fn weight_second_moment(&self) -> Mat {
        let n = self.m.len() - 1;
        Mat::from_fn(n, n, |i, j| self.b[(i + 1, j + 1)] + self.m[i + 1] * self.m[j + 1])
    }

    /// `E[W b]`, one entry per weight.
    pub fn weight_bias_moment(&self) -> Vec<f64> {
        (1..self.m.len()).map(|j| self.b[(j, 0)] + self.m[j] * self.m[0]).collect()
    }

    /// `E[W_j^2]` for the weights only.
    pub fn weight_sq(&self, j: usize) -> f64 {
        self.m[j + 1] * self.m[j + 1] + self.b[(j + 1, j + 1)]
    }
}

/// Global factors of one weight layer `l` (`1..=L+1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGlobal {
    /// One augmented row per output unit `d`.
    pub rows: Vec<WeightRow>,
    /// `q(eta^2_{l,d})`.
    pub noise: Vec<InvGammaParams>,
    /// `q(tau_l)`.
    pub tau: GigParams,
    /// `q(psi_{l,d,j})`, row-major over `(d, j)`.
    pub psi: Vec<GigParams>,
}

impl LayerGlobal {
    pub fn out_dim(&self) -> usize {
        self.rows.len()
    }
    pub fn in_dim(&self) -> usize {
        self.rows[0].m.len() - 1
    }
    pub fn psi_at(&self, d: usize, j: usize) -> &GigParams {
        &self.psi[d * self.in_dim() + j]
    }
    /// `E[1/eta^2_{l,d}]` for every unit.
    pub fn noise_precision(&self) -> Vec<f64> {
        self.noise.iter().map(|q| q.inv_mean()).collect()
    }
    /// Means of the weight block as a `D_l x D_{l-1}` matrix.
    pub fn weight_means(&self) -> Mat {
        Mat::from_fn(self.out_dim(), self.in_dim(), |d, j| self.rows[d].m[j + 1])
    }
    pub fn bias_means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m[0]).collect()
    }

    /// Diagonal prior precision of row `d`: `(1/s0^2, E[1/tau] E[1/psi_{d,j}]...)`.
    pub fn prior_precision(&self, d: usize, bias_var: f64) -> Result<Vec<f64>> {
        let inv_tau = gig_moments(&self.tau)?.inv_mean;
        let mut out = Vec::with_capacity(self.in_dim() + 1);
        out.push(1.0 / bias_var);
        for j in 0..self.in_dim() {
            out.push(inv_tau * gig_moments(self.psi_at(d, j))?.inv_mean);
        }
        Ok(out)
    }
}

/// All global variational factors plus the (EM-updated) scaled priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalVariational {
    pub priors: Priors,
    /// Weight layers `1..=L+1` at indices `0..=L`.
    pub layers: Vec<LayerGlobal>,
}

impl GlobalVariational {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }
    pub fn output(&self) -> &LayerGlobal {
        self.layers.last().unwrap()
    }
}

/// Local factors of observation `n` at hidden layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLayer {
    /// `q(gamma_{n,l,d}) = Bern(rho)`.
    pub rho: Vec<f64>,
    /// Polya-Gamma tilt `A_{n,l,d}` of `q(omega) = PG(1, A)`.
    pub tilt: Vec<f64>,
    /// `q(a_l | a_{l-1}) = N(t + M a_{l-1}, S)`.
    pub t: Vec<f64>,
    pub gain: Mat,
    pub s: Mat,
    pub s_inv: Mat,
    pub s_logdet: f64,
    /// `E[a_l]`.
    pub ea: Vec<f64>,
    /// `E[a_l a_l^T]`.
    pub eaa: Mat,
    /// `E[a_l (1, a_{l-1})^T]`, `D_l x (D_{l-1}+1)`.
    pub cross: Mat,
}

impl LocalLayer {
    pub fn new(width: usize, prev: usize) -> Self {
        LocalLayer {
            rho: vec![0.5; width],
            tilt: vec![0.0; width],
            t: vec![0.0; width],
            gain: Mat::zeros(width, prev),
            s: Mat::zeros(width, width),
            s_inv: Mat::zeros(width, width),
            s_logdet: 0.0,
            ea: vec![0.0; width],
            eaa: Mat::zeros(width, width),
            cross: Mat::zeros(width, prev + 1),
        }
    }

    /// Sets `S` from a covariance matrix, caching its inverse and log-determinant.
    pub fn set_cov(&mut self, s: Mat, block: &'static str) -> Result<()> {
        let c = crate::linalg::Cholesky::with_jitter(&s, block)?;
        self.s_inv = c.inverse();
        self.s_logdet = c.log_det();
        self.s = s;
        Ok(())
    }
}

/// Local factors of one observation across hidden layers `1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsLocal {
    pub layers: Vec<LocalLayer>,
}

/// Local factors for a set of observations, aligned with the rows of a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalVariational {
    pub obs: Vec<ObsLocal>,
}

/// `(1, v)`.
pub fn augment(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(1.0);
    out.extend_from_slice(v);
    out
}

/// `E[(1,a)(1,a)^T]` from `E[a]` and `E[a a^T]`.
pub fn augment_second(ea: &[f64], eaa: &Mat) -> Mat {
    let n = ea.len();
    Mat::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, j) => ea[j - 1],
        (i, 0) => ea[i - 1],
        (i, j) => eaa[(i - 1, j - 1)],
    })
}

/// Mean and augmented second moment of the input to hidden/output layer `l`
/// (1-based): the data point for `l = 1`, otherwise `a_{l-1}`.
pub fn layer_input(x: &[f64], obs: &ObsLocal, l: usize) -> (Vec<f64>, Mat) {
    if l == 1 {
        (augment(x), Mat::outer(&augment(x)))
    } else {
        let prev = &obs.layers[l - 2];
        (augment(&prev.ea), augment_second(&prev.ea, &prev.eaa))
    }
}

/// Refreshes `E[a_l]`, `E[a_l a_l^T]` and the cross moments of every layer from
/// the chain `a_l | a_{l-1} ~ N(t_l + M_l a_{l-1}, S_l)` with `a_0 = x`.
pub fn activation_moments(x: &[f64], obs: &mut ObsLocal) {
    let mut prev_ea = x.to_vec();
    let mut prev_eaa = Mat::outer(x);
    for layer in obs.layers.iter_mut() {
        let mx = layer.gain.matvec(&prev_ea);
        let ea: Vec<f64> = layer.t.iter().zip(&mx).map(|(t, m)| t + m).collect();
        // E[a_l a_{l-1}^T] = t E[a_{l-1}]^T + M E[a_{l-1} a_{l-1}^T]
        let m_eaa = layer.gain.matmul(&prev_eaa);
        let width = ea.len();
        let prev = prev_ea.len();
        let mut cross = Mat::zeros(width, prev + 1);
        for d in 0..width {
            cross[(d, 0)] = ea[d];
            for j in 0..prev {
                cross[(d, j + 1)] = layer.t[d] * prev_ea[j] + m_eaa[(d, j)];
            }
        }
        let mut eaa = layer.s.clone();
        eaa.add_outer(1.0, &layer.t);
        for i in 0..width {
            for j in 0..width {
                eaa[(i, j)] += layer.t[i] * mx[j] + mx[i] * layer.t[j];
            }
        }
        eaa.add_scaled(1.0, &m_eaa.matmul(&layer.gain.transpose()));
        eaa.symmetrize();
        layer.ea = ea;
        layer.eaa = eaa;
        layer.cross = cross;
        prev_ea = layer.ea.clone();
        prev_eaa = layer.eaa.clone();
    }
}

/// Output of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub config: NetworkConfig,
    pub global: GlobalVariational,
    /// ELBO after initialization and after every sweep (noisy estimates for SVI).
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
    /// Wall-clock seconds; filled in by callers that can read a clock.
    pub wall_time: f64,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}
