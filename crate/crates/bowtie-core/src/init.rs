//! Random initialization of the variational state.
//!
//! Hidden units get random weight means and a bias chosen so the unit's
//! hyperplane passes through a random anchor inside the (padded) range of its
//! inputs, which keeps every unit's gate active on part of the data. The output
//! layer then starts from a ridge regression on the forward-propagated features.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{scale_hyperparameters, NetworkConfig};
use crate::distributions::{sample_inv_gamma, GigParams, InvGammaParams};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};
use crate::special::sigmoid;
use crate::state::{
    activation_moments, Dataset, GlobalVariational, LayerGlobal, LocalLayer, LocalVariational, ObsLocal,
    WeightRow,
};

/// How hidden-layer weight means are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `Laplace(0, sqrt(2 / D_{l-1}))`.
    Laplace,
    /// Zero with probability `1 - pi`, else `N(0, 2 / sqrt(D_{l-1}))`, where
    /// `pi = 1 / (1 + sqrt(D_{l-1}))`.
    SpikeSlab,
}

/// Inclusion probability of the spike-and-slab scheme.
pub fn spike_slab_pi(fan_in: usize) -> f64 {
    1.0 / (1.0 + libm::sqrt(fan_in as f64))
}

pub const INIT_COV: f64 = 0.01;
pub const RIDGE_PENALTY: f64 = 1.0;

fn draw_weight<R: Rng + ?Sized>(scheme: InitScheme, fan_in: usize, rng: &mut R) -> f64 {
    let n = fan_in as f64;
    match scheme {
        InitScheme::Laplace => {
            let scale = libm::sqrt(2.0 / n);
            let u: f64 = rng.random::<f64>() - 0.5;
            -scale * u.signum() * libm::log(1.0 - 2.0 * u.abs())
        }
        InitScheme::SpikeSlab => {
            if rng.random::<f64>() < spike_slab_pi(fan_in) {
                let sd = libm::sqrt(2.0 / libm::sqrt(n));
                Normal::new(0.0, sd).unwrap().sample(rng)
            } else {
                0.0
            }
        }
    }
}

/// Starting point of a shrinkage factor. Inverse-gamma laws start at a random
/// member whose inverse mean equals a prior draw's inverse; the other families
/// start at the prior.
fn init_gig<R: Rng + ?Sized>(prior: &GigParams, rng: &mut R) -> GigParams {
    if prior.lam == 0.0 {
        let x = sample_inv_gamma(&InvGammaParams { alpha: -prior.nu, beta: 0.5 * prior.delta * prior.delta }, rng);
        GigParams { nu: prior.nu, delta: libm::sqrt(-2.0 * prior.nu * x), lam: 0.0 }
    } else {
        *prior
    }
}

fn padded_ranges(z: &[Vec<f64>], width: usize) -> Vec<(f64, f64)> {
    (0..width)
        .map(|j| {
            let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
            (lo - pad, hi + pad)
        })
        .collect()
}

/// Builds the initial global and local factors for `data`.
pub fn initialize<R: Rng + ?Sized>(
    config: &NetworkConfig,
    data: &Dataset,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<(GlobalVariational, LocalVariational)> {
    config.validate()?;
    let dims = &config.dims;
    if data.x.cols() != dims[0] || data.y.cols() != *dims.last().unwrap() {
        return Err(Error::Dimension(format!(
            "data is {}->{}, network is {:?}",
            data.x.cols(),
            data.y.cols(),
            dims
        )));
    }
    if data.is_empty() {
        return Err(Error::Domain("cannot initialize on an empty dataset".into()));
    }
    let priors = scale_hyperparameters(config);
    let depth = config.depth();
    let n = data.len();
    let temp = config.temperature;

    let mut layers = Vec::with_capacity(depth + 1);
    for l in 1..=depth + 1 {
        let (fan_in, width) = (dims[l - 1], dims[l]);
        let noise = if l == depth + 1 { priors.noise_out } else { priors.noise_hidden };
        let tau = init_gig(&priors.glob, rng);
        let psi = (0..width * fan_in).map(|_| init_gig(&priors.loc[l - 1], rng)).collect();
        let mut cov = Mat::identity(fan_in + 1);
        cov.scale(INIT_COV);
        let rows = (0..width).map(|_| WeightRow { m: alloc::vec![0.0; fan_in + 1], b: cov.clone() }).collect();
        layers.push(LayerGlobal { rows, noise: alloc::vec![noise; width], tau, psi });
    }

    // Forward recursion over the hidden layers.
    let mut z: Vec<Vec<f64>> = (0..n).map(|i| data.x.row(i).to_vec()).collect();
    let mut obs: Vec<ObsLocal> = (0..n).map(|_| ObsLocal { layers: Vec::with_capacity(depth) }).collect();
    for l in 1..=depth {
        let (fan_in, width) = (dims[l - 1], dims[l]);
        let ranges = padded_ranges(&z, fan_in);
        for row in layers[l - 1].rows.iter_mut() {
            let w: Vec<f64> = (0..fan_in).map(|_| draw_weight(scheme, fan_in, rng)).collect();
            let anchor: Vec<f64> = ranges.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
            row.m[0] = -w.iter().zip(&anchor).map(|(a, b)| a * b).sum::<f64>();
            row.m[1..].copy_from_slice(&w);
        }
        let wm = layers[l - 1].weight_means();
        let bm = layers[l - 1].bias_means();
        let mut cov = Mat::identity(width);
        cov.scale(INIT_COV);
        for (i, zi) in z.iter_mut().enumerate() {
            let pre: Vec<f64> = wm.matvec(zi).iter().zip(&bm).map(|(a, b)| a + b).collect();
            let mut local = LocalLayer::new(width, fan_in);
            local.rho = pre.iter().map(|p| sigmoid(p / temp).clamp(1e-12, 1.0 - 1e-12)).collect();
            local.gain = Mat::from_fn(width, fan_in, |d, j| local.rho[d] * wm[(d, j)]);
            local.t = bm.iter().zip(&local.rho).map(|(b, r)| b * r).collect();
            local.set_cov(cov.clone(), "init")?;
            let next: Vec<f64> = local.gain.matvec(zi).iter().zip(&local.t).map(|(a, b)| a + b).collect();
            *zi = next;
            obs[i].layers.push(local);
        }
    }

    // Output layer: ridge regression of each target on (1, z_L).
    let feat = dims[depth] + 1;
    let mut gram = Mat::identity(feat);
    gram.scale(RIDGE_PENALTY);
    for zi in &z {
        gram.add_outer(1.0, &crate::state::augment(zi));
    }
    let chol = Cholesky::with_jitter(&gram, "init ridge")?;
    for (d, row) in layers[depth].rows.iter_mut().enumerate() {
        let mut rhs = alloc::vec![0.0; feat];
        for (i, zi) in z.iter().enumerate() {
            crate::linalg::axpy(&mut rhs, data.y[(i, d)], &crate::state::augment(zi));
        }
        row.m = chol.solve(&rhs);
    }

    let global = GlobalVariational { priors, layers };
    let mut local = LocalVariational { obs };
    for (i, o) in local.obs.iter_mut().enumerate() {
        activation_moments(data.x.row(i), o);
    }
    crate::cavi::update_omega(&global, data, &mut local);
    Ok((global, local))
}

/// Local factors of one point from a deterministic forward pass through the
/// current weight means: `rho = sigma(pre / T)`, `M = diag(rho) m_W`,
/// `t = rho * m_b`, `S = INIT_COV * I`. Polya-Gamma tilts are left at zero.
pub fn forward_obs(global: &GlobalVariational, x: &[f64]) -> Result<ObsLocal> {
    let temp = global.priors.temperature;
    let depth = global.depth();
    let mut z = x.to_vec();
    let mut obs = ObsLocal { layers: Vec::with_capacity(depth) };
    for layer in &global.layers[..depth] {
        let wm = layer.weight_means();
        let bm = layer.bias_means();
        let width = layer.out_dim();
        let pre: Vec<f64> = wm.matvec(&z).iter().zip(&bm).map(|(a, b)| a + b).collect();
        let mut local = LocalLayer::new(width, layer.in_dim());
        local.rho = pre.iter().map(|p| sigmoid(p / temp).clamp(1e-12, 1.0 - 1e-12)).collect();
        local.gain = Mat::from_fn(width, layer.in_dim(), |d, j| local.rho[d] * wm[(d, j)]);
        local.t = bm.iter().zip(&local.rho).map(|(b, r)| b * r).collect();
        let mut cov = Mat::identity(width);
        cov.scale(INIT_COV);
        local.set_cov(cov, "init")?;
        z = local.gain.matvec(&z).iter().zip(&local.t).map(|(a, b)| a + b).collect();
        obs.layers.push(local);
    }
    activation_moments(x, &mut obs);
    Ok(obs)
}

/// [`forward_obs`] for every row of `data`, followed by the Polya-Gamma update.
pub fn forward_locals(global: &GlobalVariational, data: &Dataset) -> Result<LocalVariational> {
    let obs = (0..data.len()).map(|i| forward_obs(global, data.x.row(i))).collect::<Result<_>>()?;
    let mut local = LocalVariational { obs };
    crate::cavi::update_omega(global, data, &mut local);
    Ok(local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let x = Mat::from_fn(n, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = Mat::from_fn(n, 1, |i, _| libm::sin(x[(i, 0)]) * 10.0);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn spike_slab_probability() {
        assert_eq!(spike_slab_pi(16), 0.2);
    }

    #[test]
    fn initial_state_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = toy(40, &mut rng);
        for scheme in [InitScheme::Laplace, InitScheme::SpikeSlab] {
            let config = NetworkConfig::new(2, &[6, 4], 1);
            let (g, loc) = initialize(&config, &data, scheme, &mut rng).unwrap();
            for layer in &g.layers {
                for row in &layer.rows {
                    assert!(row.b.diag().iter().all(|&v| v == 0.01));
                }
            }
            for o in &loc.obs {
                for l in &o.layers {
                    assert!(l.rho.iter().all(|&r| r > 0.0 && r < 1.0));
                    assert!(Cholesky::new(&l.s).is_some());
                    assert!(l.ea.iter().all(|v| v.is_finite()));
                }
            }
        }
    }

    #[test]
    fn anchor_sets_zero_preactivation() {
        // With a single input the anchor is recoverable: s = -b / w.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Mat::from_fn(30, 1, |i, _| i as f64 / 10.0);
        let y = Mat::from_fn(30, 1, |i, _| i as f64);
        let data = Dataset::new(x, y).unwrap();
        let config = NetworkConfig::new(1, &[8], 1);
        let (g, _) = initialize(&config, &data, InitScheme::Laplace, &mut rng).unwrap();
        for row in &g.layers[0].rows {
            let s = -row.m[0] / row.m[1];
            assert!((-0.145 - 1e-12..=3.045 + 1e-12).contains(&s), "anchor {s}");
            assert_eq!(sigmoid((row.m[0] + row.m[1] * s) / 0.1), 0.5);
        }
    }

    #[test]
    fn constant_input_column_pads_by_one() {
        let r = padded_ranges(&[alloc::vec![2.0], alloc::vec![2.0]], 1);
        assert_eq!(r, alloc::vec![(1.0, 3.0)]);
    }
}
