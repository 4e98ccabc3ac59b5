//! Scalar float helpers routed through `libm`.
//!
//! Going through `libm` rather than `std` intrinsics keeps results
//! bit-identical across platforms and available under `no_std`, which the
//! byte-level reproducibility guarantee depends on.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Logistic function; maps -inf to 0 and +inf to 1.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log(sum(exp(xs))) with max subtraction; returns -inf for an empty or
/// all -inf input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += exp(x - m);
    }
    m + ln(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_saturates() {
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.1, -2.0, 3.5];
        let direct = ln(xs.iter().map(|&x| exp(x)).sum::<f64>());
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_extreme_inputs() {
        let xs = [-1000.0, -1000.5];
        let got = log_sum_exp(&xs);
        let expected = -1000.0 + ln(1.0 + exp(-0.5));
        assert!((got - expected).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }
}
