//! Moment kernels for the distributions the variational updates consume: the
//! generalized inverse Gaussian family, Polya-Gamma, inverse-gamma and Gaussian.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::special::{digamma, dlog_bessel_k_dnu, ln_gamma, log_bessel_k};

/// GIG(nu, delta, lam) with density proportional to
/// `x^(nu-1) exp(-(delta^2/x + lam^2 x) / 2)` on `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GigParams {
    pub nu: f64,
    pub delta: f64,
    pub lam: f64,
}

/// Which closed form a [`GigParams`] falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GigKind {
    /// `lam = 0`: inverse-gamma with shape `-nu` and scale `delta^2/2`.
    InvGamma,
    /// `delta = 0`: gamma with shape `nu` and rate `lam^2/2`.
    Gamma,
    /// `nu = -1/2` with both scales positive.
    InvGauss,
    General,
}

impl GigParams {
    pub fn new(nu: f64, delta: f64, lam: f64) -> Result<Self> {
        let p = GigParams { nu, delta, lam };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let GigParams { nu, delta, lam } = *self;
        let bad = !nu.is_finite()
            || !delta.is_finite()
            || !lam.is_finite()
            || delta < 0.0
            || lam < 0.0
            || (delta == 0.0 && lam == 0.0)
            || (delta == 0.0 && nu <= 0.0)
            || (lam == 0.0 && nu >= 0.0);
        if bad {
            return Err(Error::Domain(format!("improper GIG(nu={nu}, delta={delta}, lam={lam})")));
        }
        Ok(())
    }

    pub fn kind(&self) -> GigKind {
        if self.lam == 0.0 {
            GigKind::InvGamma
        } else if self.delta == 0.0 {
            GigKind::Gamma
        } else if self.nu == -0.5 {
            GigKind::InvGauss
        } else {
            GigKind::General
        }
    }

    /// Log of the normalizing constant `C` in `C x^(nu-1) exp(-(delta^2/x + lam^2 x)/2)`.
    pub fn log_normalizer(&self) -> Result<f64> {
        self.validate()?;
        let GigParams { nu, delta, lam } = *self;
        Ok(match self.kind() {
            GigKind::InvGamma => -nu * libm::log(0.5 * delta * delta) - ln_gamma(-nu),
            GigKind::Gamma => nu * libm::log(0.5 * lam * lam) - ln_gamma(nu),
            _ => {
                nu * libm::log(lam / delta)
                    - core::f64::consts::LN_2
                    - log_bessel_k(nu, lam * delta)?
            }
        })
    }

    /// `E[log x]`.
    pub fn mean_log(&self) -> Result<f64> {
        self.validate()?;
        let GigParams { nu, delta, lam } = *self;
        Ok(match self.kind() {
            GigKind::InvGamma => libm::log(0.5 * delta * delta) - digamma(-nu),
            GigKind::Gamma => digamma(nu) - libm::log(0.5 * lam * lam),
            _ => libm::log(delta / lam) + dlog_bessel_k_dnu(nu, lam * delta)?,
        })
    }
}

/// First moment and first inverse moment of a GIG law.
///
/// A moment that diverges is reported as `f64::INFINITY`, never NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    pub mean: f64,
    pub inv_mean: f64,
}

impl GigMoments {
    pub fn mean_is_finite(&self) -> bool {
        self.mean.is_finite()
    }
    pub fn inv_mean_is_finite(&self) -> bool {
        self.inv_mean.is_finite()
    }
}

/// `E[x]` and `E[1/x]` of GIG(nu, delta, lam).
pub fn gig_moments(p: &GigParams) -> Result<GigMoments> {
    p.validate()?;
    let GigParams { nu, delta, lam } = *p;
    Ok(match p.kind() {
        GigKind::InvGamma => {
            let (shape, scale) = (-nu, 0.5 * delta * delta);
            GigMoments {
                mean: if shape > 1.0 { scale / (shape - 1.0) } else { f64::INFINITY },
                inv_mean: shape / scale,
            }
        }
        GigKind::Gamma => {
            let rate = 0.5 * lam * lam;
            GigMoments {
                mean: nu / rate,
                inv_mean: if nu > 1.0 { rate / (nu - 1.0) } else { f64::INFINITY },
            }
        }
        GigKind::InvGauss => GigMoments {
            mean: delta / lam,
            inv_mean: lam / delta + 1.0 / (delta * delta),
        },
        GigKind::General => gig_moments_bessel(p)?,
    })
}

/// The Bessel-ratio path, valid whenever both scales are positive.
pub fn gig_moments_bessel(p: &GigParams) -> Result<GigMoments> {
    let GigParams { nu, delta, lam } = *p;
    if !(delta > 0.0 && lam > 0.0) {
        return Err(Error::Domain(format!("bessel path needs delta, lam > 0 (got {delta}, {lam})")));
    }
    let w = lam * delta;
    let lk = log_bessel_k(nu, w)?;
    // E[x^k] = (delta/lam)^k K_{nu+k}/K_nu; both ratios are positive, so no cancellation.
    let up = libm::exp(log_bessel_k(nu + 1.0, w)? - lk);
    let down = libm::exp(log_bessel_k(nu - 1.0, w)? - lk);
    Ok(GigMoments { mean: delta / lam * up, inv_mean: lam / delta * down })
}

/// Inverse-gamma with density proportional to `x^(-alpha-1) exp(-beta/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl InvGammaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = InvGammaParams { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Domain(format!("InvGamma(alpha={}, beta={})", self.alpha, self.beta)));
        }
        Ok(())
    }

    /// `E[x]`, finite only for `alpha > 1`.
    pub fn mean(&self) -> f64 {
        if self.alpha > 1.0 {
            self.beta / (self.alpha - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// `E[1/x]`.
    pub fn inv_mean(&self) -> f64 {
        self.alpha / self.beta
    }

    /// `E[log x]`.
    pub fn mean_log(&self) -> f64 {
        libm::log(self.beta) - digamma(self.alpha)
    }

    pub fn entropy(&self) -> f64 {
        self.alpha + libm::log(self.beta) + ln_gamma(self.alpha) - (1.0 + self.alpha) * digamma(self.alpha)
    }

    /// `E_q[log p(x)]` when `q` is `self` and `p` is `prior`.
    pub fn cross_log_density(&self, prior: &InvGammaParams) -> f64 {
        prior.alpha * libm::log(prior.beta) - ln_gamma(prior.alpha)
            - (prior.alpha + 1.0) * self.mean_log()
            - prior.beta * self.inv_mean()
    }
}

/// Mean of the Polya-Gamma PG(b, c) law.
pub fn pg_mean(b: f64, c: f64) -> Result<f64> {
    if !(b > 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("pg_mean(b={b}, c={c})")));
    }
    Ok(b * pg1_mean(c))
}

/// Mean of PG(1, c); even in `c`.
pub(crate) fn pg1_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        0.25 - c * c / 48.0
    } else {
        libm::tanh(0.5 * c) / (2.0 * c)
    }
}

/// `mean + L z` with `z` standard normal, `L` lower triangular.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], chol_cov: &Mat, rng: &mut R) -> Result<Vec<f64>> {
    let n = mean.len();
    if chol_cov.rows() != n || chol_cov.cols() != n {
        return Err(Error::Dimension(format!(
            "mean has length {n}, factor is {}x{}",
            chol_cov.rows(),
            chol_cov.cols()
        )));
    }
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = mean.to_vec();
    for i in 0..n {
        let row = chol_cov.row(i);
        out[i] += row[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(out)
}

/// One draw from InvGamma(alpha, beta).
pub fn sample_inv_gamma<R: Rng + ?Sized>(p: &InvGammaParams, rng: &mut R) -> f64 {
    let g = Gamma::new(p.alpha, 1.0 / p.beta).expect("validated inverse-gamma parameters");
    loop {
        let x: f64 = g.sample(rng);
        if x > 0.0 {
            return 1.0 / x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn special_case_moments() {
        let m = gig_moments(&GigParams::new(-2.0, 2.0, 0.0).unwrap()).unwrap();
        assert!(close(m.mean, 2.0, 1e-15) && close(m.inv_mean, 1.0, 1e-15));
        let m = gig_moments(&GigParams::new(2.0, 0.0, 2.0).unwrap()).unwrap();
        assert!(close(m.mean, 1.0, 1e-15) && close(m.inv_mean, 2.0, 1e-15));
        let m = gig_moments(&GigParams::new(-0.5, 2.0, 1.0).unwrap()).unwrap();
        assert!(close(m.mean, 2.0, 1e-15) && close(m.inv_mean, 0.75, 1e-15));
    }

    #[test]
    fn infinite_moments_are_tagged() {
        let m = gig_moments(&GigParams::new(-0.8, 1.0, 0.0).unwrap()).unwrap();
        assert!(!m.mean_is_finite() && m.inv_mean_is_finite());
        let m = gig_moments(&GigParams::new(0.7, 0.0, 1.0).unwrap()).unwrap();
        assert!(m.mean_is_finite() && !m.inv_mean_is_finite());
    }

    #[test]
    fn invalid_gig_rejected() {
        assert!(GigParams::new(1.0, 0.0, 0.0).is_err());
        assert!(GigParams::new(-1.0, 0.0, 1.0).is_err());
        assert!(GigParams::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn inverse_gauss_matches_bessel_path() {
        for &(d, l) in &[(0.3, 2.0), (2.0, 1.0), (5.0, 0.01), (0.01, 40.0)] {
            let p = GigParams::new(-0.5, d, l).unwrap();
            let a = gig_moments(&p).unwrap();
            let b = gig_moments_bessel(&p).unwrap();
            assert!(close(a.mean, b.mean, 1e-12) && close(a.inv_mean, b.inv_mean, 1e-12));
        }
    }

    #[test]
    fn pg_mean_values() {
        assert_eq!(pg_mean(1.0, 0.0).unwrap(), 0.25);
        assert!(close(pg_mean(1.0, 2.0).unwrap(), libm::tanh(1.0) / 4.0, 1e-15));
        assert!((pg_mean(1.0, 2.0).unwrap() - 0.190_398_5).abs() < 1e-7);
        for &c in &[0.0, 1e-5, 0.3, 7.0] {
            assert_eq!(pg_mean(2.0, c).unwrap(), 2.0 * pg_mean(1.0, c).unwrap());
        }
        assert!(pg_mean(0.0, 1.0).is_err());
        // The series branch joins the closed form smoothly.
        assert!(close(pg1_mean(0.99e-4), pg1_mean(1.01e-4), 1e-8));
    }

    #[test]
    fn mvn_zero_factor_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = [1.5, -2.0, 0.25];
        let out = sample_mvn(&mean, &Mat::zeros(3, 3), &mut rng).unwrap();
        assert_eq!(out, mean);
        assert!(sample_mvn(&mean, &Mat::zeros(2, 2), &mut rng).is_err());
    }

    #[test]
    fn mvn_standard_clt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut s = [0.0; 2];
        for _ in 0..n {
            let z = sample_mvn(&[0.0, 0.0], &Mat::identity(2), &mut rng).unwrap();
            s[0] += z[0];
            s[1] += z[1];
        }
        for v in s {
            assert!((v / n as f64).abs() < 4.0 / libm::sqrt(n as f64));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = InvGammaParams::new(3.0, 2.0).unwrap();
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| sample_inv_gamma(&p, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| sample_inv_gamma(&p, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn inv_gamma_sample_mean() {
        let p = InvGammaParams::new(3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_inv_gamma(&p, &mut rng)).collect();
        assert!(xs.iter().all(|&x| x > 0.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 4.0 * libm::sqrt(var / n as f64), "mean {mean}");
    }
}
