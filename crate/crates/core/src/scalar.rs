//! Overflow-safe scalar maps shared across modules.

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] on positive arguments.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    // ln(e^y - 1), rewritten to stay stable for small and large y
    y + (-(-y).exp_m1()).ln()
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
