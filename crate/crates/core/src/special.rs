//! Standard-normal helpers with tail-stable logarithms.

use statrs::function::erf;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Below this point the lower tail is evaluated through a continued fraction.
const LOWER_TAIL: f64 = -8.0;

#[inline]
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    norm_logpdf(z).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z * FRAC_1_SQRT_2)
}

/// Mills ratio `(1 - Phi(x)) / phi(x)` for `x >= 8` by backward continued fraction.
fn upper_mills_cf(x: f64) -> f64 {
    let mut t = x;
    for n in (1..=60).rev() {
        t = x + n as f64 / t;
    }
    1.0 / t
}

/// `ln Phi(z)`, accurate deep into both tails.
pub fn log_ndtr(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z > 6.0 {
        (-0.5 * erf::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z >= LOWER_TAIL {
        (0.5 * erf::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else if z == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        norm_logpdf(z) + upper_mills_cf(-z).ln()
    }
}

/// `phi(z) / Phi(z)`, the derivative of [`log_ndtr`].
pub fn inv_mills(z: f64) -> f64 {
    if z >= LOWER_TAIL {
        (norm_logpdf(z) - log_ndtr(z)).exp()
    } else {
        1.0 / upper_mills_cf(-z)
    }
}

/// `(ln Phi(z), phi(z) / Phi(z))` sharing one complementary error function.
#[inline]
pub fn log_ndtr_and_inv_mills(z: f64) -> (f64, f64) {
    if z > 6.0 {
        let upper = 0.5 * erf::erfc(z * FRAC_1_SQRT_2);
        ((-upper).ln_1p(), norm_pdf(z) / (1.0 - upper))
    } else if z >= LOWER_TAIL {
        let p = 0.5 * erf::erfc(-z * FRAC_1_SQRT_2);
        (p.ln(), norm_pdf(z) / p)
    } else {
        (log_ndtr(z), inv_mills(z))
    }
}

/// Inverse of the standard normal CDF.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_terms_match_separate_calls() {
        for &z in &[-40.0, -8.5, -8.0, -3.0, 0.0, 1.5, 6.0, 6.5, 12.0, 40.0] {
            let (l, m) = log_ndtr_and_inv_mills(z);
            assert!((l - log_ndtr(z)).abs() <= 1e-14 * log_ndtr(z).abs().max(1e-300), "{z}");
            assert!((m - inv_mills(z)).abs() <= 1e-13 * inv_mills(z).abs().max(1e-300), "{z}");
        }
    }

    #[test]
    fn log_ndtr_matches_direct_in_bulk() {
        for &z in &[-7.5, -3.0, -1.0, 0.0, 0.5, 2.0, 5.0] {
            let direct = norm_cdf(z).ln();
            assert!((log_ndtr(z) - direct).abs() < 1e-13, "z={z}");
        }
    }

    #[test]
    fn log_ndtr_is_continuous_at_tail_switch() {
        let below = log_ndtr(LOWER_TAIL - 1e-12);
        let above = log_ndtr(LOWER_TAIL + 1e-12);
        assert!((below - above).abs() < 1e-9);
        let upper = log_ndtr(6.0 + 1e-12) - log_ndtr(6.0 - 1e-12);
        assert!(upper.abs() < 1e-15);
    }

    #[test]
    fn far_tail_is_finite() {
        // ln Phi(-40) = -804.608442013754 (asymptotic expansion)
        let v = log_ndtr(-40.0);
        assert!((v - (-804.608_442_013_754)).abs() < 1e-9, "{v}");
        assert!(inv_mills(-40.0) > 40.0);
    }

    #[test]
    fn inv_mills_matches_finite_difference() {
        for &z in &[-12.0, -8.5, -3.0, 0.0, 2.5, 7.0] {
            let h = 1e-6;
            let fd = (log_ndtr(z + h) - log_ndtr(z - h)) / (2.0 * h);
            let an = inv_mills(z);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "z={z} fd={fd} an={an}");
        }
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-10, 0.025, 0.5, 0.9, 0.999] {
            assert!((norm_cdf(norm_ppf(p)) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
        }
    }
}
