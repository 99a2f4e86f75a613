//! Small dense-vector helpers. Points are plain `Vec<f64>` of length 2 or 3.

pub type Point = Vec<f64>;

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a + s * b`
#[inline]
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// `w * a + (1 - w) * b`
#[inline]
pub fn lerp(a: &[f64], b: &[f64], w: f64) -> Point {
    a.iter()
        .zip(b)
        .map(|(x, y)| w * x + (1.0 - w) * y)
        .collect()
}

#[inline]
pub fn scale(a: &[f64], s: f64) -> Point {
    a.iter().map(|x| s * x).collect()
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
