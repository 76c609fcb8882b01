//! Special functions backing the detector thresholds and the statistical
//! test battery: log-gamma, the regularized incomplete gamma function, the
//! normal and chi-square distributions, and the studentized range.
//!
//! Quantiles are computed by bisection on the corresponding CDF, so no
//! external special-function dependency is required.

/// Lanczos approximation (g = 7, 9 coefficients), |error| < 1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x) = γ(a, x) / Γ(a).
///
/// Series expansion for x < a + 1, Lentz continued fraction otherwise.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p requires a > 0, x >= 0");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    // Modified Lentz algorithm for the continued fraction of Q(a, x).
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - normal_cdf(-x);
    }
    // erf(t) = P(1/2, t^2) for t >= 0.
    0.5 * (1.0 + gamma_p(0.5, 0.5 * x * x))
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    assert!(dof >= 1, "chi2_cdf requires dof >= 1");
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Upper-tail probability of the chi-square distribution.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    (1.0 - chi2_cdf(x, dof)).max(0.0)
}

/// Chi-square quantile: smallest x with CDF(x) >= p, by bisection to 1e-10.
pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
    assert!((0.0..1.0).contains(&p), "quantile requires p in [0, 1)");
    if p == 0.0 {
        return 0.0;
    }
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    bisect(|x| chi2_cdf(x, dof) - p, 0.0, hi, 1e-10)
}

/// CDF of the range of `k` iid standard normals (studentized range with
/// infinite degrees of freedom), by Simpson quadrature.
pub fn studentized_range_cdf(q: f64, k: usize) -> f64 {
    assert!(k >= 2);
    if q <= 0.0 {
        return 0.0;
    }
    // P(R <= q) = k * Int phi(z) * [Phi(z) - Phi(z - q)]^(k-1) dz.
    let lo = -9.0;
    let hi = 9.0 + q;
    let n = 4000; // even
    let h = (hi - lo) / n as f64;
    let f = |z: f64| {
        let inner = (normal_cdf(z) - normal_cdf(z - q)).max(0.0);
        normal_pdf(z) * inner.powi(k as i32 - 1)
    };
    let mut sum = f(lo) + f(hi);
    for i in 1..n {
        let z = lo + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * f(z) } else { 2.0 * f(z) };
    }
    (k as f64 * sum * h / 3.0).clamp(0.0, 1.0)
}

/// Quantile of the studentized range distribution (infinite dof).
pub fn studentized_range_quantile(p: f64, k: usize) -> f64 {
    assert!((0.0..1.0).contains(&p) && p > 0.0);
    let mut hi = 4.0;
    while studentized_range_cdf(hi, k) < p {
        hi *= 2.0;
    }
    bisect(|q| studentized_range_cdf(q, k) - p, 0.0, hi, 1e-9)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    // f(lo) <= 0 <= f(hi) assumed by the callers.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    0.5 * (lo + hi)
}
