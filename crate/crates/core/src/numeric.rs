//! Log-space reductions used by the filter and the leakage bounds.
//!
//! All reductions run in index order so results do not depend on how callers
//! partition work.

/// `log(sum(exp(v)))` with max subtraction. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights in place into probabilities. Returns the log
/// normalizer, `-inf` when every entry is `-inf` (weights are then left as NaN).
pub fn normalize_log_weights(log_w: &mut [f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in log_w.iter_mut() {
        *v = (*v - max).exp();
    }
    let total = kahan_sum(log_w.iter().copied());
    for v in log_w.iter_mut() {
        *v /= total;
    }
    max + total.ln()
}

/// Compensated sum; weights are renormalized with this so that the
/// `|sum - 1| <= 1e-12` invariant holds for large particle counts.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
