//! Chi-square quantiles and von Mises helpers used by the outlier tests.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let ln_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..1000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * ln_prefix.exp()).min(1.0)
    } else {
        // Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
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
            if (del - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - ln_prefix.exp() * h).max(0.0)
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

fn chi2_pdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * dof as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * 2f64.ln() - ln_gamma(k)).exp()
}

/// Inverse CDF of the chi-square distribution.
///
/// Safeguarded Newton iteration on [`chi2_cdf`], falling back to bisection
/// whenever the Newton step leaves the current bracket.
pub fn chi2_inv(p: f64, dof: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("chi2_inv probability must lie in (0,1), got {p}")));
    }
    if dof == 0 {
        return Err(Error::Domain("chi2_inv needs at least one degree of freedom".into()));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 1.0;
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, dof) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_pdf(x, dof);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    Ok(x)
}

/// Two-sided standard normal quantile: the `z` with `P(|Z| <= z) = p`.
///
/// Uses `Z² ~ χ²(1)`.
pub fn normal_two_sided_quantile(p: f64) -> Result<f64> {
    Ok(chi2_inv(p, 1)?.sqrt())
}

/// Standard deviation of the wrapped normal approximating a von Mises(κ).
pub fn von_mises_sigma(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("von Mises concentration must be positive, got {kappa}")));
    }
    Ok(1.0 / kappa.sqrt())
}

/// Draws an angle from von Mises(0, κ) (Best & Fisher, 1979).
pub fn sample_von_mises<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> f64 {
    if kappa < 1e-8 {
        return rng.random_range(-PI..PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}
