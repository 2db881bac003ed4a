//! Scalar float helpers backed by `libm` so the crate stays `no_std`.

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(exp(-x))
    } else {
        libm::log1p(exp(x))
    }
}

/// Inverse of [`softplus`]: returns `x` with `softplus(x) = y` for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    // log(e^y - 1), written to stay stable for small and large y.
    if y > 30.0 {
        y
    } else {
        ln(libm::expm1(y))
    }
}

pub const LOG_TWO_PI: f64 = 1.8378770664093453;

/// Log-density of the standard normal distribution.
pub fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LOG_TWO_PI
}
