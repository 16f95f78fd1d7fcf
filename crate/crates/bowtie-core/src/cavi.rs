//! Closed-form coordinate ascent: the block updates, the training ELBO, the EM
//! step for the global shrinkage hyperparameter and the outer loop.
//!
//! Weight layers are numbered `l = 1..=L+1` in the public API (stored at index
//! `l - 1`); hidden layers are `1..=L`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, PriorFamily};
use crate::distributions::{gig_moments, pg1_mean, GigParams};
use crate::error::{Error, Result};
use crate::init::{initialize, InitScheme};
use crate::linalg::{axpy, dot, Cholesky, Mat};
use crate::special::{log_cosh, sigmoid};
use crate::state::{
    activation_moments, layer_input, Dataset, FitResult, GlobalVariational, LocalVariational, ObsLocal,
};

/// Gate probabilities are kept inside `[RHO_FLOOR, 1 - RHO_FLOOR]`.
pub const RHO_FLOOR: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviOptions {
    /// Relative ELBO change regarded as converged during training.
    pub elbo_tol_train: f64,
    /// Same, for the predictive local fits.
    pub elbo_tol_predict: f64,
    pub max_sweeps: usize,
    /// Number of consecutive below-tolerance changes required.
    pub consecutive_hits: usize,
    /// First rung of the Cholesky jitter ladder (informational; the ladder is fixed).
    pub jitter: f64,
    pub em_enabled: bool,
    pub init_scheme: InitScheme,
}

impl Default for CaviOptions {
    fn default() -> Self {
        CaviOptions {
            elbo_tol_train: 1e-5,
            elbo_tol_predict: 1e-4,
            max_sweeps: 2000,
            consecutive_hits: 3,
            jitter: 1e-9,
            em_enabled: true,
            init_scheme: InitScheme::Laplace,
        }
    }
}

impl CaviOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.elbo_tol_train > 0.0 && self.elbo_tol_predict > 0.0) || self.consecutive_hits == 0 {
            return Err(Error::Config(format!("bad convergence settings: {self:?}")));
        }
        Ok(())
    }
}

/// Tracks "k consecutive relative changes below tol".
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    tol: f64,
    needed: usize,
    hits: usize,
    last: Option<f64>,
}

impl ConvergenceMonitor {
    pub fn new(tol: f64, needed: usize) -> Self {
        ConvergenceMonitor { tol, needed, hits: 0, last: None }
    }

    /// Records a value; returns true once converged.
    pub fn push(&mut self, v: f64) -> bool {
        if let Some(prev) = self.last {
            let rel = (v - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < self.tol {
                self.hits += 1;
            } else {
                self.hits = 0;
            }
        }
        self.last = Some(v);
        self.hits >= self.needed
    }
}

/// Moments of the global factors that the local updates read repeatedly.
pub(crate) struct GlobalCache {
    pub temp: f64,
    /// `E[W~^T W~]` per layer and row.
    pub ww: Vec<Vec<Mat>>,
    /// `E[W^T W]`, weight block only.
    pub ww_w: Vec<Vec<Mat>>,
    /// `E[W b]`.
    pub wb: Vec<Vec<Vec<f64>>>,
    /// `E[1/eta^2]`.
    pub prec: Vec<Vec<f64>>,
    pub w_mean: Vec<Mat>,
    pub b_mean: Vec<Vec<f64>>,
}

impl GlobalCache {
    pub fn new(global: &GlobalVariational) -> Self {
        let layers = &global.layers;
        GlobalCache {
            temp: global.priors.temperature,
            ww: layers.iter().map(|l| l.rows.iter().map(|r| r.second_moment()).collect()).collect(),
            ww_w: layers.iter().map(|l| l.rows.iter().map(|r| r.weight_second_moment()).collect()).collect(),
            wb: layers.iter().map(|l| l.rows.iter().map(|r| r.weight_bias_moment()).collect()).collect(),
            prec: layers.iter().map(|l| l.noise_precision()).collect(),
            w_mean: layers.iter().map(|l| l.weight_means()).collect(),
            b_mean: layers.iter().map(|l| l.bias_means()).collect(),
        }
    }
}

// ---------------------------------------------------------------- shrinkage

/// `q(tau_l)` for every layer.
pub fn update_tau(global: &mut GlobalVariational) -> Result<()> {
    let glob = global.priors.glob;
    for layer in global.layers.iter_mut() {
        let mut acc = 0.0;
        for (d, row) in layer.rows.iter().enumerate() {
            for j in 0..layer.in_dim() {
                acc += gig_moments(layer.psi_at(d, j))?.inv_mean * row.weight_sq(j);
            }
        }
        let k = (layer.out_dim() * layer.in_dim()) as f64;
        layer.tau = GigParams { nu: glob.nu - 0.5 * k, delta: libm::sqrt(glob.delta * glob.delta + acc), lam: glob.lam };
        layer.tau.validate()?;
    }
    Ok(())
}

/// `q(psi_{l,d,j})` for every weight.
pub fn update_psi(global: &mut GlobalVariational) -> Result<()> {
    for (li, layer) in global.layers.iter_mut().enumerate() {
        let loc = global.priors.loc[li];
        let inv_tau = gig_moments(&layer.tau)?.inv_mean;
        let in_dim = layer.in_dim();
        for (d, row) in layer.rows.iter().enumerate() {
            for j in 0..in_dim {
                let delta = libm::sqrt(inv_tau * row.weight_sq(j) + loc.delta * loc.delta);
                let p = GigParams { nu: loc.nu - 0.5, delta, lam: loc.lam };
                p.validate()?;
                layer.psi[d * in_dim + j] = p;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- noise

/// `beta_hat` of `q(eta^2_{l,d})`: prior rate plus `scale/2` times the summed
/// expected squared residuals of the given observations.
pub fn eta_beta_hat(
    global: &GlobalVariational,
    data: &Dataset,
    local: &LocalVariational,
    l: usize,
    d: usize,
    scale: f64,
) -> f64 {
    let depth = global.depth();
    let row = &global.layers[l - 1].rows[d];
    let ww = row.second_moment();
    let mut acc = 0.0;
    for (n, obs) in local.obs.iter().enumerate() {
        let (ea_in, eaa_in) = layer_input(data.x.row(n), obs, l);
        let tr = ww.frob_dot(&eaa_in);
        if l == depth + 1 {
            let y = data.y[(n, d)];
            acc += y * y - 2.0 * y * dot(&row.m, &ea_in) + tr;
        } else {
            let lay = &obs.layers[l - 1];
            let rho = lay.rho[d];
            acc += lay.eaa[(d, d)] - 2.0 * rho * dot(&row.m, lay.cross.row(d)) + rho * tr;
        }
    }
    let prior = if l == depth + 1 { global.priors.noise_out } else { global.priors.noise_hidden };
    prior.beta + 0.5 * scale * acc
}

/// `q(eta^2)` for every layer and unit.
pub fn update_eta(global: &mut GlobalVariational, data: &Dataset, local: &LocalVariational) -> Result<()> {
    for l in 1..=global.depth() + 1 {
        update_eta_layer(global, data, local, l)?;
    }
    Ok(())
}

pub fn update_eta_layer(global: &mut GlobalVariational, data: &Dataset, local: &LocalVariational, l: usize) -> Result<()> {
    let n = data.len() as f64;
    let prior = if l == global.depth() + 1 { global.priors.noise_out } else { global.priors.noise_hidden };
    for d in 0..global.layers[l - 1].out_dim() {
        let beta = eta_beta_hat(global, data, local, l, d, 1.0);
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::numerical("eta", format!("beta = {beta} at layer {l}, unit {d}")));
        }
        global.layers[l - 1].noise[d] = crate::distributions::InvGammaParams { alpha: prior.alpha + 0.5 * n, beta };
    }
    Ok(())
}

// ---------------------------------------------------------------- locals

/// Polya-Gamma tilts of one observation at hidden layer `l`.
pub(crate) fn omega_obs(cache: &GlobalCache, x: &[f64], obs: &mut ObsLocal, l: usize) {
    let (_, eaa_in) = layer_input(x, obs, l);
    let temp = cache.temp;
    let tilt: Vec<f64> = cache.ww[l - 1].iter().map(|ww| libm::sqrt(ww.frob_dot(&eaa_in).max(0.0)) / temp).collect();
    obs.layers[l - 1].tilt = tilt;
}

/// Gate probabilities of one observation at hidden layer `l`.
pub(crate) fn gamma_obs(global: &GlobalVariational, cache: &GlobalCache, x: &[f64], obs: &mut ObsLocal, l: usize) {
    let (ea_in, eaa_in) = layer_input(x, obs, l);
    let temp = cache.temp;
    let layer = &global.layers[l - 1];
    let lay = &obs.layers[l - 1];
    let rho: Vec<f64> = (0..layer.out_dim())
        .map(|d| {
            let m = &layer.rows[d].m;
            let prec = cache.prec[l - 1][d];
            let logit = -0.5 * prec * cache.ww[l - 1][d].frob_dot(&eaa_in)
                + prec * dot(m, lay.cross.row(d))
                + dot(m, &ea_in) / temp;
            sigmoid(logit).clamp(RHO_FLOOR, 1.0 - RHO_FLOOR)
        })
        .collect();
    obs.layers[l - 1].rho = rho;
}

/// Optimal `q(a_n)` by backward elimination over the layer chain, followed by a
/// forward refresh of the moments. `y = None` drops the output likelihood, which
/// is the predictive case. `shared_last` optionally caches the factorization of
/// the last hidden layer's precision, which does not depend on `n`.
pub(crate) fn activations_obs(
    global: &GlobalVariational,
    cache: &GlobalCache,
    x: &[f64],
    y: Option<&[f64]>,
    obs: &mut ObsLocal,
    shared_last: Option<&(Mat, Mat, f64)>,
) -> Result<()> {
    let depth = global.depth();
    let temp = cache.temp;
    for l in (1..=depth).rev() {
        let li = l - 1;
        let width = global.layers[li].out_dim();
        let prec_l = &cache.prec[li];
        let rho_l = obs.layers[li].rho.clone();
        let mut h: Vec<f64> = (0..width).map(|d| prec_l[d] * rho_l[d] * cache.b_mean[li][d]).collect();
        let (s, s_inv, logdet);
        if l == depth {
            if let Some(y) = y {
                let out = depth;
                for (d, &yd) in y.iter().enumerate() {
                    let p = cache.prec[out][d];
                    axpy(&mut h, p * yd, cache.w_mean[out].row(d));
                    axpy(&mut h, -p, &cache.wb[out][d]);
                }
            }
            match (y, shared_last) {
                (Some(_), Some(sh)) => {
                    s = sh.0.clone();
                    s_inv = sh.1.clone();
                    logdet = sh.2;
                }
                _ => {
                    let p = last_precision(cache, depth, y.is_some());
                    let c = Cholesky::with_jitter(&p, "activations")?;
                    s = c.inverse();
                    s_inv = p;
                    logdet = -c.log_det();
                }
            }
        } else {
            let next = &obs.layers[l];
            let mut p = Mat::from_diag(prec_l);
            // - M^T S^{-1} M from the already-eliminated layer above
            let sm = next.s_inv.matmul(&next.gain);
            p.add_scaled(-1.0, &next.gain.tmatmul(&sm));
            let sit = next.s_inv.matvec(&next.t);
            let mt_sit = next.gain.tmatvec(&sit);
            axpy(&mut h, 1.0, &mt_sit);
            for d in 0..global.layers[l].out_dim() {
                let rho_n = next.rho[d];
                let coef = cache.prec[l][d] * rho_n + pg1_mean(next.tilt[d]) / (temp * temp);
                p.add_scaled(coef, &cache.ww_w[l][d]);
                axpy(&mut h, (rho_n - 0.5) / temp, cache.w_mean[l].row(d));
                axpy(&mut h, -coef, &cache.wb[l][d]);
            }
            p.symmetrize();
            let c = Cholesky::with_jitter(&p, "activations")?;
            s = c.inverse();
            s_inv = p;
            logdet = -c.log_det();
        }
        let t = s.matvec(&h);
        let coupling = Mat::from_fn(width, cache.w_mean[li].cols(), |d, j| prec_l[d] * rho_l[d] * cache.w_mean[li][(d, j)]);
        let gain = s.matmul(&coupling);
        let lay = &mut obs.layers[li];
        lay.t = t;
        lay.gain = gain;
        lay.s = s;
        lay.s_inv = s_inv;
        lay.s_logdet = logdet;
    }
    activation_moments(x, obs);
    Ok(())
}

/// Precision of `q(a_L | a_{L-1})`: `Sigma_L^{-1}` plus, when the target is observed,
/// `sum_d E[1/eta^2_{L+1,d}] E[W^T W]`.
fn last_precision(cache: &GlobalCache, depth: usize, observed: bool) -> Mat {
    let mut p = Mat::from_diag(&cache.prec[depth - 1]);
    if observed {
        for d in 0..cache.prec[depth].len() {
            p.add_scaled(cache.prec[depth][d], &cache.ww_w[depth][d]);
        }
    }
    p.symmetrize();
    p
}

fn shared_last_factor(cache: &GlobalCache, depth: usize) -> Result<(Mat, Mat, f64)> {
    let p = last_precision(cache, depth, true);
    let c = Cholesky::with_jitter(&p, "activations")?;
    Ok((c.inverse(), p, -c.log_det()))
}

/// `q(omega)` for all observations and hidden layers.
pub fn update_omega(global: &GlobalVariational, data: &Dataset, local: &mut LocalVariational) {
    let cache = GlobalCache::new(global);
    for l in 1..=global.depth() {
        update_omega_layer_cached(&cache, data, local, l);
    }
}

fn update_omega_layer_cached(cache: &GlobalCache, data: &Dataset, local: &mut LocalVariational, l: usize) {
    for (n, obs) in local.obs.iter_mut().enumerate() {
        omega_obs(cache, data.x.row(n), obs, l);
    }
}

/// `q(gamma)` for all observations and hidden layers.
pub fn update_gamma(global: &GlobalVariational, data: &Dataset, local: &mut LocalVariational) {
    let cache = GlobalCache::new(global);
    for l in 1..=global.depth() {
        for (n, obs) in local.obs.iter_mut().enumerate() {
            gamma_obs(global, &cache, data.x.row(n), obs, l);
        }
    }
}

/// `q(a_n)` for every observation.
pub fn update_activations(global: &GlobalVariational, data: &Dataset, local: &mut LocalVariational) -> Result<()> {
    let cache = GlobalCache::new(global);
    update_activations_cached(global, &cache, data, local)
}

pub(crate) fn update_activations_cached(
    global: &GlobalVariational,
    cache: &GlobalCache,
    data: &Dataset,
    local: &mut LocalVariational,
) -> Result<()> {
    let shared = shared_last_factor(cache, global.depth())?;
    for (n, obs) in local.obs.iter_mut().enumerate() {
        activations_obs(global, cache, data.x.row(n), Some(data.y.row(n)), obs, Some(&shared))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- weights

/// Natural parameters `(B^{-1}, B^{-1} m)` of the optimal `q(W~_{l,d})`, with the
/// data sums multiplied by `scale`.
pub fn weight_natural(
    global: &GlobalVariational,
    data: &Dataset,
    local: &LocalVariational,
    l: usize,
    d: usize,
    scale: f64,
) -> Result<(Mat, Vec<f64>)> {
    let layer = &global.layers[l - 1];
    let temp = global.priors.temperature;
    let dim = layer.in_dim() + 1;
    let mut prec = Mat::zeros(dim, dim);
    let mut lin = vec![0.0; dim];
    let noise_prec = layer.noise[d].inv_mean();
    let is_out = l == global.depth() + 1;
    for (n, obs) in local.obs.iter().enumerate() {
        let (ea_in, eaa_in) = layer_input(data.x.row(n), obs, l);
        if is_out {
            prec.add_scaled(noise_prec, &eaa_in);
            axpy(&mut lin, noise_prec * data.y[(n, d)], &ea_in);
        } else {
            let lay = &obs.layers[l - 1];
            let rho = lay.rho[d];
            prec.add_scaled(pg1_mean(lay.tilt[d]) / (temp * temp) + noise_prec * rho, &eaa_in);
            axpy(&mut lin, noise_prec * rho, lay.cross.row(d));
            axpy(&mut lin, (rho - 0.5) / temp, &ea_in);
        }
    }
    prec.scale(scale);
    lin.iter_mut().for_each(|v| *v *= scale);
    for (i, p) in layer.prior_precision(d, global.priors.bias_var)?.into_iter().enumerate() {
        prec[(i, i)] += p;
    }
    prec.symmetrize();
    Ok((prec, lin))
}

/// `q(W~_{l,d})` for every row of weight layer `l`.
pub fn update_weights_layer(
    global: &mut GlobalVariational,
    data: &Dataset,
    local: &LocalVariational,
    l: usize,
) -> Result<()> {
    for d in 0..global.layers[l - 1].out_dim() {
        let (prec, lin) = weight_natural(global, data, local, l, d, 1.0)?;
        let c = Cholesky::with_jitter(&prec, "weights")?;
        let row = &mut global.layers[l - 1].rows[d];
        row.m = c.solve(&lin);
        row.b = c.inverse();
    }
    Ok(())
}

pub fn update_weights(global: &mut GlobalVariational, data: &Dataset, local: &LocalVariational) -> Result<()> {
    for l in 1..=global.depth() + 1 {
        update_weights_layer(global, data, local, l)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- EM

/// Moves the global hyperparameter (`delta_glob` for IG, `lam_glob` for Gamma and
/// IGauss) to the maximizer of the ELBO with `q(tau)` held fixed. Returns the new
/// value, or `None` for the general family, which has no closed form.
pub fn em_update_global(global: &mut GlobalVariational) -> Result<Option<f64>> {
    let layers = global.layers.len() as f64;
    let glob = global.priors.glob;
    let moments: Vec<_> = global.layers.iter().map(|l| gig_moments(&l.tau)).collect::<Result<_>>()?;
    match global.priors.family {
        PriorFamily::Ig => {
            let s: f64 = moments.iter().map(|m| m.inv_mean).sum();
            global.priors.glob.delta = libm::sqrt(-2.0 * glob.nu * layers / s);
            Ok(Some(global.priors.glob.delta))
        }
        PriorFamily::Gamma => {
            let s: f64 = moments.iter().map(|m| m.mean).sum();
            global.priors.glob.lam = libm::sqrt(2.0 * glob.nu * layers / s);
            Ok(Some(global.priors.glob.lam))
        }
        PriorFamily::Igauss => {
            let s: f64 = moments.iter().map(|m| m.mean).sum();
            global.priors.glob.lam = layers * glob.delta / s;
            Ok(Some(global.priors.glob.lam))
        }
        PriorFamily::General => Ok(None),
    }
}

// ---------------------------------------------------------------- ELBO

/// The ELBO split by source. All normalizing constants are included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// `E log p(y | a_L, W, b, eta)`.
    pub likelihood: f64,
    /// `E log p(a_l | gamma, z, eta)` over hidden layers.
    pub activations: f64,
    /// Gate and Polya-Gamma terms net of `q(omega)`.
    pub gates: f64,
    /// Entropies of `q(a)` and `q(gamma)`.
    pub local_entropy: f64,
    /// `E log p(eta) - E log q(eta)`.
    pub noise: f64,
    /// Weight/bias priors plus the entropy of `q(W, b)`.
    pub weights: f64,
    /// `E log p(tau, psi) - E log q(tau, psi)` apart from the pieces in `weights`.
    pub shrinkage: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.activations + self.gates + self.local_entropy + self.noise + self.weights + self.shrinkage
    }

    pub fn local(&self) -> f64 {
        self.likelihood + self.activations + self.gates + self.local_entropy
    }

    pub fn global(&self) -> f64 {
        self.noise + self.weights + self.shrinkage
    }

    fn check(&self) -> Result<()> {
        let named = [
            ("likelihood", self.likelihood),
            ("activations", self.activations),
            ("gates", self.gates),
            ("local entropy", self.local_entropy),
            ("noise", self.noise),
            ("weights", self.weights),
            ("shrinkage", self.shrinkage),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::numerical("elbo", format!("term '{name}' is {v}")));
            }
        }
        Ok(())
    }
}

/// Local ELBO contributions of one observation, unscaled. The output likelihood is
/// included when `y` is given.
pub(crate) fn local_terms_obs(
    global: &GlobalVariational,
    cache: &GlobalCache,
    x: &[f64],
    y: Option<&[f64]>,
    obs: &ObsLocal,
) -> ElboTerms {
    let depth = global.depth();
    let temp = cache.temp;
    let mut t = ElboTerms::default();
    for l in 1..=depth {
        let (ea_in, eaa_in) = layer_input(x, obs, l);
        let lay = &obs.layers[l - 1];
        let layer = &global.layers[l - 1];
        for d in 0..layer.out_dim() {
            let m = &layer.rows[d].m;
            let tr = cache.ww[l - 1][d].frob_dot(&eaa_in);
            let mz = dot(m, &ea_in);
            let rho = lay.rho[d];
            let prec = cache.prec[l - 1][d];
            let sq = lay.eaa[(d, d)] - 2.0 * rho * dot(m, lay.cross.row(d)) + rho * tr;
            t.activations += -0.5 * LN_2PI - 0.5 * layer.noise[d].mean_log() - 0.5 * prec * sq;
            let a = lay.tilt[d];
            let ew = pg1_mean(a);
            t.gates += -LN_2 + (rho - 0.5) * mz / temp - ew * tr / (2.0 * temp * temp) + 0.5 * a * a * ew - log_cosh(0.5 * a);
            t.local_entropy += bernoulli_entropy(rho);
        }
        t.local_entropy += 0.5 * (layer.out_dim() as f64 * (1.0 + LN_2PI) + lay.s_logdet);
    }
    if let Some(y) = y {
        let out = global.output();
        let (ea_in, eaa_in) = layer_input(x, obs, depth + 1);
        for (d, &yd) in y.iter().enumerate() {
            let tr = cache.ww[depth][d].frob_dot(&eaa_in);
            let sq = yd * yd - 2.0 * yd * dot(&out.rows[d].m, &ea_in) + tr;
            t.likelihood += -0.5 * LN_2PI - 0.5 * out.noise[d].mean_log() - 0.5 * cache.prec[depth][d] * sq;
        }
    }
    t
}

pub(crate) fn bernoulli_entropy(p: f64) -> f64 {
    -(p * libm::log(p) + (1.0 - p) * libm::log(1.0 - p))
}

/// `E_q[log p(x)] - E_q[log q(x)]` for one GIG factor whose `E[log x]` also
/// receives `extra_log_coef` from elsewhere in the model, and whose `E[1/x]` is
/// multiplied by `extra_inv` (a negative coefficient) elsewhere. Only the
/// normalizers and the parts not cancelling against the caller are returned.
fn gig_kl_part(prior: &GigParams, q: &GigParams, extra_log_coef: f64) -> Result<f64> {
    let mq = gig_moments(q)?;
    let mut v = prior.log_normalizer()? - q.log_normalizer()?;
    v += -0.5 * (prior.delta * prior.delta - q.delta * q.delta) * mq.inv_mean;
    if prior.lam != q.lam {
        v += -0.5 * (prior.lam * prior.lam - q.lam * q.lam) * mq.mean;
    }
    let coef = prior.nu - q.nu + extra_log_coef;
    if coef != 0.0 {
        v += coef * q.mean_log()?;
    }
    Ok(v)
}

/// Global (data-independent) ELBO terms.
pub fn global_terms(global: &GlobalVariational) -> Result<ElboTerms> {
    let mut t = ElboTerms::default();
    let depth = global.depth();
    let s0 = global.priors.bias_var;
    for (li, layer) in global.layers.iter().enumerate() {
        let noise_prior = if li == depth { global.priors.noise_out } else { global.priors.noise_hidden };
        for q in &layer.noise {
            t.noise += q.cross_log_density(&noise_prior) + q.entropy();
        }
        let inv_tau = gig_moments(&layer.tau)?.inv_mean;
        let in_dim = layer.in_dim();
        for (d, row) in layer.rows.iter().enumerate() {
            let dim = row.m.len() as f64;
            let c = Cholesky::with_jitter(&row.b, "elbo weights")?;
            t.weights += 0.5 * (dim * (1.0 + LN_2PI) + c.log_det());
            t.weights += -0.5 * libm::log(2.0 * PI * s0) - (row.m[0] * row.m[0] + row.b[(0, 0)]) / (2.0 * s0);
            for j in 0..in_dim {
                let psi = layer.psi_at(d, j);
                let inv_psi = gig_moments(psi)?.inv_mean;
                t.weights += -0.5 * LN_2PI - 0.5 * inv_tau * inv_psi * row.weight_sq(j);
                // -1/2 E[log psi] from the weight prior joins the psi factor.
                t.shrinkage += gig_kl_part(&global.priors.loc[li], psi, -0.5)?;
            }
        }
        let k = (layer.out_dim() * in_dim) as f64;
        t.shrinkage += gig_kl_part(&global.priors.glob, &layer.tau, -0.5 * k)?;
    }
    Ok(t)
}

/// ELBO with local sums over the observations in `local` multiplied by `scale`.
/// `scale = 1` over the full data is the exact training ELBO; `N/|S|` over a
/// minibatch is the noisy SVI estimate.
pub fn elbo_terms_scaled(
    global: &GlobalVariational,
    data: &Dataset,
    local: &LocalVariational,
    scale: f64,
) -> Result<ElboTerms> {
    let cache = GlobalCache::new(global);
    let mut t = global_terms(global)?;
    let mut loc = ElboTerms::default();
    for (n, obs) in local.obs.iter().enumerate() {
        let o = local_terms_obs(global, &cache, data.x.row(n), Some(data.y.row(n)), obs);
        loc.likelihood += o.likelihood;
        loc.activations += o.activations;
        loc.gates += o.gates;
        loc.local_entropy += o.local_entropy;
    }
    t.likelihood = scale * loc.likelihood;
    t.activations = scale * loc.activations;
    t.gates = scale * loc.gates;
    t.local_entropy = scale * loc.local_entropy;
    t.check()?;
    Ok(t)
}

pub fn elbo_terms(global: &GlobalVariational, data: &Dataset, local: &LocalVariational) -> Result<ElboTerms> {
    elbo_terms_scaled(global, data, local, 1.0)
}

/// The training ELBO.
pub fn elbo(global: &GlobalVariational, data: &Dataset, local: &LocalVariational) -> Result<f64> {
    Ok(elbo_terms(global, data, local)?.total())
}

// ---------------------------------------------------------------- outer loop

/// One full sweep in the published update order: per hidden layer shrinkage,
/// noise and Polya-Gamma factors; then the output layer's shrinkage and noise;
/// activations; per hidden layer weights then gates; output weights; EM.
pub fn sweep(global: &mut GlobalVariational, data: &Dataset, local: &mut LocalVariational, em: bool) -> Result<()> {
    let depth = global.depth();
    update_tau(global)?;
    update_psi(global)?;
    for l in 1..=depth {
        update_eta_layer(global, data, local, l)?;
        let cache = GlobalCache::new(global);
        update_omega_layer_cached(&cache, data, local, l);
    }
    update_eta_layer(global, data, local, depth + 1)?;
    update_activations(global, data, local)?;
    for l in 1..=depth {
        update_weights_layer(global, data, local, l)?;
        let cache = GlobalCache::new(global);
        for (n, obs) in local.obs.iter_mut().enumerate() {
            gamma_obs(global, &cache, data.x.row(n), obs, l);
        }
    }
    update_weights_layer(global, data, local, depth + 1)?;
    if em {
        em_update_global(global)?;
    }
    Ok(())
}

/// Runs coordinate ascent from a fresh random initialization until the ELBO
/// converges or `max_sweeps` is reached.
pub fn fit_cavi<R: Rng + ?Sized>(
    config: &NetworkConfig,
    data: &Dataset,
    options: &CaviOptions,
    rng: &mut R,
) -> Result<FitResult> {
    options.validate()?;
    let (mut global, mut local) = initialize(config, data, options.init_scheme, rng)?;
    let (elbo_trace, converged) = run_cavi(&mut global, data, &mut local, options)?;
    Ok(FitResult { config: config.clone(), global, elbo_trace, converged, seed: config.seed, wall_time: 0.0 })
}

/// Coordinate ascent from a given state. Returns the ELBO trace (starting with
/// the value at the given state) and whether it converged.
pub fn run_cavi(
    global: &mut GlobalVariational,
    data: &Dataset,
    local: &mut LocalVariational,
    options: &CaviOptions,
) -> Result<(Vec<f64>, bool)> {
    let em = options.em_enabled && global.priors.family != PriorFamily::General;
    let mut trace = vec![elbo(global, data, local)?];
    let mut monitor = ConvergenceMonitor::new(options.elbo_tol_train, options.consecutive_hits);
    monitor.push(trace[0]);
    let mut converged = false;
    for _ in 0..options.max_sweeps {
        sweep(global, data, local, em)?;
        let e = elbo(global, data, local)?;
        trace.push(e);
        if monitor.push(e) {
            converged = true;
            break;
        }
    }
    Ok((trace, converged))
}
