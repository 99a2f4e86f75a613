//! Smallest enclosing ball (Chebyshev center) of a finite point set.
//!
//! Exact combinatorial solver using the move-to-front variant of Welzl's
//! algorithm. Support sets never exceed `dim + 1` points, so the recursion
//! depth is bounded by the dimension. Input order is kept as-is, which makes
//! the result deterministic.

use crate::error::{Error, Result};
use crate::geom::{self, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    fn empty(dim: usize) -> Self {
        Ball {
            center: vec![0.0; dim],
            radius: -1.0,
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        if self.radius < 0.0 {
            return false;
        }
        geom::dist(&self.center, p) <= self.radius + 1e-12 * self.radius.max(1.0)
    }
}

/// Center minimizing the maximum distance to `points`, and that distance.
pub fn chebyshev_center(points: &[&[f64]]) -> Result<Ball> {
    let first = points.first().ok_or(Error::EmptyParticleSet)?;
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Domain("points have mixed dimensions".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut support = Vec::with_capacity(dim + 1);
    let mut ball = move_to_front(points, &mut order, points.len(), &mut support, dim);
    if !encloses(&ball, points) {
        ball = core_set(points);
    }
    // report the radius actually attained by the returned center
    ball.radius = max_dist(&ball.center, points);
    Ok(ball)
}

pub fn max_dist(center: &[f64], points: &[&[f64]]) -> f64 {
    points
        .iter()
        .map(|p| geom::dist(center, p))
        .fold(0.0, f64::max)
}

fn encloses(ball: &Ball, points: &[&[f64]]) -> bool {
    let tol = 1e-9 * ball.radius.max(1.0);
    points
        .iter()
        .all(|p| geom::dist(&ball.center, p) <= ball.radius + tol)
}

fn move_to_front(
    points: &[&[f64]],
    order: &mut [usize],
    end: usize,
    support: &mut Vec<usize>,
    dim: usize,
) -> Ball {
    let mut ball = ball_from_support(points, support, dim);
    if support.len() == dim + 1 {
        return ball;
    }
    for i in 0..end {
        let idx = order[i];
        if !ball.contains(points[idx]) {
            support.push(idx);
            ball = move_to_front(points, order, i, support, dim);
            support.pop();
            order[..=i].rotate_right(1);
        }
    }
    ball
}

/// Smallest ball with every support point on its boundary (the circumball
/// within the affine hull of the support).
fn ball_from_support(points: &[&[f64]], support: &[usize], dim: usize) -> Ball {
    match support.len() {
        0 => Ball::empty(dim),
        1 => Ball {
            center: points[support[0]].to_vec(),
            radius: 0.0,
        },
        k => {
            let p0 = points[support[0]];
            let v: Vec<Point> = support[1..]
                .iter()
                .map(|&i| geom::sub(points[i], p0))
                .collect();
            let m = k - 1;
            let mut a = vec![vec![0.0; m + 1]; m];
            for i in 0..m {
                for j in 0..m {
                    a[i][j] = 2.0 * dot(&v[i], &v[j]);
                }
                a[i][m] = dot(&v[i], &v[i]);
            }
            match solve(a) {
                Some(lambda) => {
                    let mut c = p0.to_vec();
                    for (l, vi) in lambda.iter().zip(&v) {
                        for (cd, vd) in c.iter_mut().zip(vi) {
                            *cd += l * vd;
                        }
                    }
                    let r = support
                        .iter()
                        .map(|&i| geom::dist(&c, points[i]))
                        .fold(0.0, f64::max);
                    Ball {
                        center: c,
                        radius: r,
                    }
                }
                None => farthest_pair_ball(points, support),
            }
        }
    }
}

fn farthest_pair_ball(points: &[&[f64]], support: &[usize]) -> Ball {
    let mut best = (support[0], support[0], 0.0);
    for (a, &i) in support.iter().enumerate() {
        for &j in &support[a + 1..] {
            let d = geom::dist(points[i], points[j]);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    Ball {
        center: geom::lerp(points[best.0], points[best.1], 0.5),
        radius: 0.5 * best.2,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on an augmented `m x (m+1)`
/// matrix. `None` when the system is numerically singular.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..m].iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for r in rest.iter_mut() {
            let f = r[col] / pivot[col];
            for (v, p) in r[col..=m].iter_mut().zip(&pivot[col..=m]) {
                *v -= f * p;
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|k| a[i][k] * x[k]).sum();
        x[i] = (a[i][m] - s) / a[i][i];
    }
    Some(x)
}

/// Iterative core-set approximation: step towards the farthest point with a
/// shrinking step. Only used if the exact solver returns a ball that fails
/// the enclosure check.
fn core_set(points: &[&[f64]]) -> Ball {
    let mut c = points[0].to_vec();
    for i in 1..20_000 {
        let far = points
            .iter()
            .max_by(|a, b| geom::dist_sq(&c, a).total_cmp(&geom::dist_sq(&c, b)))
            .unwrap();
        let step = 1.0 / (i as f64 + 1.0);
        for (cd, fd) in c.iter_mut().zip(far.iter()) {
            *cd += step * (fd - *cd);
        }
    }
    let radius = max_dist(&c, points);
    Ball { center: c, radius }
}
