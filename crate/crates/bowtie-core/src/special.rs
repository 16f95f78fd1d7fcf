//! Special functions: log-gamma, digamma, log of the modified Bessel function of the
//! second kind, and a few numerically careful scalar helpers.

use alloc::format;
use core::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};

const EULER_EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// Digamma function for `x > 0`, by upward recurrence then the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    let tail = f
        * (-1.0 / 12.0
            + f * (1.0 / 120.0
                + f * (-1.0 / 252.0
                    + f * (1.0 / 240.0
                        + f * (-1.0 / 132.0 + f * (691.0 / 32760.0 + f * (-1.0 / 12.0)))))));
    acc + libm::log(x) - 0.5 / x + tail
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log(cosh(x))` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + libm::log1p(libm::exp(-2.0 * a)) - LN_2
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Chebyshev coefficients for `gam1(mu) = (1/Γ(1-mu) - 1/Γ(1+mu)) / (2 mu)` and
/// `gam2(mu) = (1/Γ(1-mu) + 1/Γ(1+mu)) / 2` on `|mu| <= 1/2`.
const GAM1_CHEB: [f64; 7] = [
    -1.142_022_680_371_168e0,
    6.516_511_267_073_7e-3,
    3.087_090_173_086e-4,
    -3.470_626_964_9e-6,
    6.943_766_4e-9,
    3.677_95e-11,
    -1.356e-13,
];
const GAM2_CHEB: [f64; 8] = [
    1.843_740_587_300_905e0,
    -7.685_284_084_478_67e-2,
    1.271_927_136_654_6e-3,
    -4.971_736_704_2e-6,
    -3.312_611_98e-8,
    2.423_096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// Returns `(gam1, gam2, 1/Γ(1+mu), 1/Γ(1-mu))` for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebev(&GAM1_CHEB, xx);
    let gam2 = chebev(&GAM2_CHEB, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `(log K_mu(x), K_{mu+1}(x) / K_mu(x))` for `|mu| <= 1/2`.
fn log_bessel_k_base(mu: f64, x: f64) -> (f64, f64) {
    if x < 2.0 {
        // Temme's series.
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EULER_EPS { 1.0 } else { pimu / libm::sin(pimu) };
        let d = -libm::log(x2);
        let e = mu * d;
        let fact2 = if e.abs() < EULER_EPS { 1.0 } else { libm::sinh(e) / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * libm::cosh(e) + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = libm::exp(e);
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mu2 = mu * mu;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EULER_EPS {
                break;
            }
        }
        let k1 = sum1 * 2.0 / x;
        (libm::log(sum), k1 / sum)
    } else {
        // Steed's continued fraction CF2, exponentially scaled.
        let mu2 = mu * mu;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut c = a1;
        let mut q = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EULER_EPS {
                break;
            }
        }
        h *= a1;
        let log_kmu = 0.5 * libm::log(PI / (2.0 * x)) - x - libm::log(s);
        (log_kmu, (mu + x + 0.5 - h) / x)
    }
}

/// `log K_nu(x)`, the modified Bessel function of the second kind.
///
/// Works entirely with logs and ratios, so very large orders and arguments up to
/// several hundred neither overflow nor underflow.
pub fn log_bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("log_bessel_k(nu={nu}, x={x})")));
    }
    let nu = nu.abs();
    let n = libm::floor(nu + 0.5);
    let mu = nu - n;
    let (mut log_k, mut ratio) = log_bessel_k_base(mu, x);
    // Upward recurrence K_{v+1} = K_{v-1} + (2v/x) K_v is stable for K; carry ratios.
    let mut prod = 1.0;
    let mut v = mu;
    for _ in 0..n as u64 {
        prod *= ratio;
        if !(1e-200..=1e200).contains(&prod) {
            log_k += libm::log(prod);
            prod = 1.0;
        }
        v += 1.0;
        ratio = 2.0 * v / x + 1.0 / ratio;
    }
    Ok(log_k + libm::log(prod))
}

/// `d/dnu log K_nu(x)` by a fourth-order central difference.
pub fn dlog_bessel_k_dnu(nu: f64, x: f64) -> Result<f64> {
    let h = 1e-3 * (1.0 + nu.abs()).min(10.0);
    let f = |v: f64| log_bessel_k(v, x);
    Ok((8.0 * (f(nu + h)? - f(nu - h)?) - (f(nu + 2.0 * h)? - f(nu - 2.0 * h)?)) / (12.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_integer_closed_form() {
        let v = log_bessel_k(0.5, 2.0).unwrap();
        let want = 0.5 * libm::log(PI / 4.0) - 2.0;
        assert!((v - want).abs() < 1e-14, "{v} vs {want}");
        // K_{3/2}(x) = sqrt(pi/2x) e^{-x} (1 + 1/x)
        for &x in &[1e-6, 0.3, 1.9, 2.1, 15.0, 650.0] {
            let want = 0.5 * libm::log(PI / (2.0 * x)) - x + libm::log1p(1.0 / x);
            let got = log_bessel_k(1.5, x).unwrap();
            assert!((got - want).abs() <= 1e-13 * want.abs().max(1.0), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn order_symmetry() {
        assert_eq!(log_bessel_k(-3.0, 1.5).unwrap(), log_bessel_k(3.0, 1.5).unwrap());
    }

    #[test]
    fn temme_gammas_match_gamma_function() {
        for &mu in &[-0.5, -0.3, -1e-9, 0.0, 0.1, 0.25, 0.49] {
            let (_, _, gampl, gammi) = temme_gammas(mu);
            assert!((gampl - 1.0 / libm::tgamma(1.0 + mu)).abs() < 1e-14);
            assert!((gammi - 1.0 / libm::tgamma(1.0 - mu)).abs() < 1e-14);
        }
    }

    #[test]
    fn digamma_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-14);
        assert!((digamma(0.5) + euler + 2.0 * LN_2).abs() < 1e-14);
        assert!((digamma(10.0) - 2.251_752_589_066_721).abs() < 1e-14);
    }

    #[test]
    fn huge_argument_does_not_underflow() {
        let v = log_bessel_k(3.0, 5000.0).unwrap();
        assert!(v.is_finite() && v < -4999.0);
        let v = log_bessel_k(400.0, 1e-8).unwrap();
        assert!(v.is_finite() && v > 1000.0);
    }

    #[test]
    fn sigmoid_and_log_cosh() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((log_cosh(1000.0) - (1000.0 - LN_2)).abs() < 1e-12);
        assert!((log_cosh(0.3) - libm::log(libm::cosh(0.3))).abs() < 1e-15);
    }
}
