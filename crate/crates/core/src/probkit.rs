//! Scalar kernels for the standard and truncated normal distribution.
//!
//! erf/erfc come from `libm` (a port of the musl implementation, about one
//! ulp). Everything else is built on top of those two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Beyond this the upper-tail hazard is taken from the Mills-ratio continued
/// fraction instead of a φ/(1−Φ) quotient.
const HAZARD_SWITCH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: f64,
    pub std: f64,
}

impl GaussianSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::Domain(format!("gaussian needs finite mean and std > 0, got N({mean}, {std})")));
        }
        Ok(Self { mean, std })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSide {
    Below,
    Above,
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    // erfc keeps relative precision in the lower tail, where 1 + erf would not.
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Upper tail 1 − Φ(z) without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Work on the lower half and mirror, so the target tail probability is
    // always represented without rounding against 1.
    let (q, flip) = if p > 0.5 { (1.0 - p, true) } else { (p, false) };
    let mut lo = -40.0_f64;
    let mut hi = 0.0_f64;
    let mut z = initial_quantile_guess(q);
    for _ in 0..100 {
        let f = normal_cdf(z) - q;
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        if f == 0.0 {
            break;
        }
        let step = f / normal_pdf(z);
        let mut next = z - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * z.abs().max(1.0) {
            z = next;
            break;
        }
        z = next;
    }
    Ok(if flip { -z } else { z })
}

// Rough rational approximation used only to seed Newton.
fn initial_quantile_guess(q: f64) -> f64 {
    let t = (-2.0 * q.ln()).sqrt();
    let num = 2.515517 + 0.802853 * t + 0.010328 * t * t;
    let den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t;
    -(t - num / den)
}

/// φ(z)/(1−Φ(z)), the hazard of the upper tail.
pub fn upper_hazard(z: f64) -> f64 {
    if z > HAZARD_SWITCH {
        1.0 / mills_ratio_cf(z)
    } else {
        normal_pdf(z) / normal_sf(z)
    }
}

/// φ(z)/Φ(z), the hazard of the lower tail.
pub fn lower_hazard(z: f64) -> f64 {
    upper_hazard(-z)
}

// (1−Φ(z))/φ(z) = 1/(z+ 1/(z+ 2/(z+ 3/(z+ ...)))), evaluated by modified Lentz.
fn mills_ratio_cf(z: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = z + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = z + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// E[max(Y, 0)] for Y ~ N(mu_t, sigma_t²).
pub fn expected_overload(mu_t: f64, sigma_t: f64) -> f64 {
    if sigma_t <= 0.0 {
        return mu_t.max(0.0);
    }
    let r = mu_t / sigma_t;
    mu_t * normal_cdf(r) + sigma_t * normal_pdf(r)
}

/// Partial derivatives (∂/∂μ, ∂/∂σ) of [`expected_overload`].
///
/// At σ = 0 these are one-sided limits: Φ and φ of ±∞, with the kink
/// at μ = 0 taking the value ½ for the mean slope.
pub fn expected_overload_grad(mu_t: f64, sigma_t: f64) -> (f64, f64) {
    if sigma_t <= 0.0 {
        return if mu_t > 0.0 {
            (1.0, 0.0)
        } else if mu_t < 0.0 {
            (0.0, 0.0)
        } else {
            (0.5, INV_SQRT_2PI)
        };
    }
    let r = mu_t / sigma_t;
    (normal_cdf(r), normal_pdf(r))
}

/// Conditional mean and variance of `spec` restricted to one side of `cut`.
pub fn truncated_moments(spec: GaussianSpec, cut: f64, side: TailSide) -> (f64, f64) {
    let s = spec.std;
    let var = s * s;
    if cut.is_infinite() {
        let untruncated = matches!((side, cut > 0.0), (TailSide::Below, true) | (TailSide::Above, false));
        if untruncated {
            return (spec.mean, var);
        }
    }
    let z = (cut - spec.mean) / s;
    match side {
        TailSide::Above => {
            let h = upper_hazard(z);
            (spec.mean + s * h, var * upper_variance_factor(z, h))
        }
        TailSide::Below => {
            // Mirror image of the upper tail at −z.
            let h = upper_hazard(-z);
            (spec.mean - s * h, var * upper_variance_factor(-z, h))
        }
    }
}

/// 1 + z·h − h² for the upper tail; written as 1 − h(h − z) to keep the small
/// difference h − z accurate far out in the tail.
fn upper_variance_factor(z: f64, h: f64) -> f64 {
    let v = 1.0 - h * (h - z);
    v.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Variance factors (below, above) of the standard normal split at `z`.
pub fn region_variance_factors(z: f64) -> (f64, f64) {
    let ha = upper_hazard(z);
    let hb = upper_hazard(-z);
    (upper_variance_factor(-z, hb), upper_variance_factor(z, ha))
}

pub fn rate_function(spec: GaussianSpec, omega: f64) -> f64 {
    let d = (omega - spec.mean) / spec.std;
    0.5 * d * d
}

/// First-order large-deviation estimate Φ(−√(2I)).
pub fn first_order_tail_estimate(spec: GaussianSpec, omega: f64) -> f64 {
    normal_cdf(-(2.0 * rate_function(spec, omega)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_values() {
        assert!((normal_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((normal_pdf(1.0) - 0.241_970_724_5).abs() < 1e-10);
        assert_eq!(normal_pdf(1.0), normal_pdf(-1.0));
        assert!(normal_pdf(10.0) < 1e-21);
    }

    #[test]
    fn cdf_anchor_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.644_853_6) - 0.95).abs() < 1e-7);
        assert!((normal_cdf(-3.8906) - 5.0e-5).abs() < 1e-7);
    }

    #[test]
    fn quantile_anchor_points() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.95).unwrap() - 1.644_853_6).abs() < 1e-6);
        assert!((normal_quantile(1.0 - 5e-5).unwrap() - 3.8906).abs() < 1e-4);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_extremes() {
        for &p in &[1e-300, 1e-20, 1e-8, 0.3, 0.999_999] {
            let z = normal_quantile(p).unwrap();
            let back = normal_cdf(z);
            assert!((back - p).abs() <= 1e-10 * p.max(1e-10), "p={p} z={z}");
        }
    }

    #[test]
    fn overload_special_cases() {
        assert!((expected_overload(0.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert_eq!(expected_overload(-10.0, 1e-9), 0.0);
        assert_eq!(expected_overload(2.0, 0.0), 2.0);
        assert_eq!(expected_overload(-2.0, 0.0), 0.0);
    }

    #[test]
    fn half_normal_moments() {
        let (m, v) = truncated_moments(GaussianSpec::standard(), 0.0, TailSide::Below);
        assert!((m + 0.797_884_6).abs() < 1e-7);
        assert!((v - 0.363_380_2).abs() < 1e-7);
        let (m, v2) = truncated_moments(GaussianSpec::standard(), 0.0, TailSide::Above);
        assert!((m - 0.797_884_6).abs() < 1e-7);
        assert!((v - v2).abs() < 1e-15);
    }

    #[test]
    fn no_truncation_at_infinity() {
        let g = GaussianSpec::new(0.0, 50.0).unwrap();
        assert_eq!(truncated_moments(g, f64::INFINITY, TailSide::Below), (0.0, 2500.0));
        assert_eq!(truncated_moments(g, f64::NEG_INFINITY, TailSide::Above), (0.0, 2500.0));
    }

    #[test]
    fn deep_tail_stays_in_range() {
        for &z in &[7.9, 8.0, 8.1, 12.0, 20.0, 40.0] {
            let (m, v) = truncated_moments(GaussianSpec::standard(), z, TailSide::Above);
            assert!(m > z && m < z + 1.0 / z + 1e-12, "z={z} m={m}");
            assert!(v > 0.0 && v < 1.0, "z={z} v={v}");
        }
        // Continuity across the switch between the two hazard evaluations.
        let a = normal_pdf(8.0) / normal_sf(8.0);
        let b = 1.0 / mills_ratio_cf(8.0);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn rate_function_values() {
        let g = GaussianSpec::new(0.0, 50.0).unwrap();
        assert_eq!(rate_function(g, 0.0), 0.0);
        assert!((rate_function(g, 50.0) - 0.5).abs() < 1e-15);
        assert!((rate_function(g, 235.0) - 11.045).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(GaussianSpec::new(0.0, 0.0).is_err());
        assert!(GaussianSpec::new(f64::NAN, 1.0).is_err());
        assert!(GaussianSpec::new(0.0, 2.0).is_ok());
    }
}
