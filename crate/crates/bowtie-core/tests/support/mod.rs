//! Reference computations used as test oracles. Nothing here calls into the
//! crate under test.
#![allow(dead_code)]

/// Gauss-Kronrod 15-point abscissae (positive half) and weights, with the
/// embedded 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for i in 0..7 {
        let (f1, f2) = (f(c - h * XGK[i]), f(c + h * XGK[i]));
        k += WGK[i] * (f1 + f2);
        abs += WGK[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (f1 + f2);
        }
    }
    (k * h, (k - g).abs() * h, abs * h.abs())
}

/// Globally adaptive Gauss-Kronrod integral of `f` over `[a, b]`: the panel with
/// the largest error estimate is bisected until the summed estimate is below
/// `rel` times the integral of `|f|`, or 4000 panels exist.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel: f64) -> f64 {
    let (v, e, s) = gk15(f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut scale = s;
    loop {
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= rel * scale || panels.len() >= 4000 {
            break;
        }
        let (i, _) = panels.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).unwrap();
        let (lo, hi, _, _) = panels.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        let (v1, e1, s1) = gk15(f, lo, mid);
        let (v2, e2, s2) = gk15(f, mid, hi);
        scale = scale.max(s1 + s2);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
    panels.iter().map(|p| p.2).sum()
}

/// Maximizer of a concave function on `[lo, hi]` by golden-section search.
fn argmax_concave<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..300 {
        let m1 = hi - r * (hi - lo);
        let m2 = lo + r * (hi - lo);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    0.5 * (lo + hi)
}

/// `log int_0^inf x^(nu + k - 1) exp(-(delta^2 / x + lam^2 x) / 2) w(log x) dx`,
/// computed on the log scale. `w` must be positive near the peak.
pub fn gig_log_integral<W: Fn(f64) -> f64>(nu: f64, delta: f64, lam: f64, k: f64, w: W) -> f64 {
    let g = |u: f64| (nu + k) * u - 0.5 * (delta * delta * (-u).exp() + lam * lam * u.exp());
    let peak = argmax_concave(&g, -700.0, 700.0);
    let top = g(peak);
    let mut lo = peak;
    while g(lo) > top - 90.0 && lo > -740.0 {
        lo -= 1.0;
    }
    let mut hi = peak;
    while g(hi) > top - 90.0 && hi < 740.0 {
        hi += 1.0;
    }
    let f = |u: f64| w(u) * (g(u) - top).exp();
    let total = integrate(&f, lo, hi, 1e-14);
    top + total.ln()
}

/// Quadrature reference for `(E[x], E[1/x])` under `GIG(nu, delta, lam)`.
pub fn gig_moments_oracle(nu: f64, delta: f64, lam: f64) -> (f64, f64) {
    let z = gig_log_integral(nu, delta, lam, 0.0, |_| 1.0);
    let m = gig_log_integral(nu, delta, lam, 1.0, |_| 1.0);
    let im = gig_log_integral(nu, delta, lam, -1.0, |_| 1.0);
    ((m - z).exp(), (im - z).exp())
}

/// Quadrature reference for `E[log x]`.
pub fn gig_mean_log_oracle(nu: f64, delta: f64, lam: f64) -> f64 {
    let z = gig_log_integral(nu, delta, lam, 0.0, |_| 1.0);
    let g = |u: f64| nu * u - 0.5 * (delta * delta * (-u).exp() + lam * lam * u.exp());
    let peak = argmax_concave(&g, -700.0, 700.0);
    let top = g(peak);
    let mut lo = peak;
    while g(lo) > top - 90.0 && lo > -740.0 {
        lo -= 1.0;
    }
    let mut hi = peak;
    while g(hi) > top - 90.0 && hi < 740.0 {
        hi += 1.0;
    }
    let f = |u: f64| u * (g(u) - top).exp();
    let total = integrate(&f, lo, hi, 1e-14);
    total * (top - z).exp()
}

/// Reference `log K_nu(x)` from `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`.
pub fn log_bessel_k_oracle(nu: f64, x: f64) -> f64 {
    let g = |t: f64| -x * t.cosh() + nu.abs() * t;
    let peak = argmax_concave(&g, 0.0, 800.0).max(0.0);
    let top = g(peak);
    let mut hi = peak;
    while g(hi) > top - 90.0 {
        hi += 0.25;
    }
    let f = |t: f64| (g(t) - top).exp() * 0.5 * (1.0 + (-2.0 * nu.abs() * t).exp());
    let total = integrate(&f, 0.0, hi, 1e-14);
    top + total.ln()
}

/// `E[omega]` for `omega ~ PG(b, c)` from its infinite-convolution
/// representation `omega = (1 / 2 pi^2) sum_k g_k / ((k - 1/2)^2 + c^2 / (4 pi^2))`,
/// `g_k ~ Gamma(b, 1)`, with the tail of the series replaced by its integral.
pub fn pg_mean_oracle(b: f64, c: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let a2 = c * c / (4.0 * pi * pi);
    let terms = 20_000usize;
    let mut sum = 0.0;
    for k in (1..=terms).rev() {
        let h = k as f64 - 0.5;
        sum += 1.0 / (h * h + a2);
    }
    // sum_{k > K} f(k) ~ int_{K + 1/2}^inf f(x) dx - f'(K + 1/2) / 24, with
    // f(x) = 1 / ((x - 1/2)^2 + a^2).
    let kk = terms as f64;
    let tail = if a2 > 0.0 {
        let a = a2.sqrt();
        (0.5 * pi - (kk / a).atan()) / a
    } else {
        1.0 / kk
    };
    let fprime = -2.0 * kk / (kk * kk + a2).powi(2);
    b / (2.0 * pi * pi) * (sum + tail - fprime / 24.0)
}

#[test]
fn quadrature_self_check() {
    let v = integrate(&|x: f64| x.powi(5), 0.0, 1.0, 1e-14);
    assert!((v - 1.0 / 6.0).abs() < 1e-15);
    let v = integrate(&|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-14);
    assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-14);
    // Gamma(3, rate 2) normalizer on the log scale: Gamma(3) / 2^3.
    let v = gig_log_integral(3.0, 0.0, 2.0, 0.0, |_| 1.0);
    assert!((v - (2.0f64 / 8.0).ln()).abs() < 1e-13);
    // K_{1/2}(x) = sqrt(pi / (2x)) e^{-x}.
    let x = 1.7;
    let want = (std::f64::consts::PI / (2.0 * x)).sqrt().ln() - x;
    assert!((log_bessel_k_oracle(0.5, x) - want).abs() < 1e-13);
    // PG(1, 0) has mean 1/4.
    assert!((pg_mean_oracle(1.0, 0.0) - 0.25).abs() < 1e-13);
}
