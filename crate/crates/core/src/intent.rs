//! Goal intents, the agent's nominal goal-stabilizing dynamics, straight-line
//! reference paths and the tracking envelope.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

/// Goal center, goal radius and desired arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub center: Point,
    pub radius: f64,
    pub arrival: f64,
}

impl Intent {
    pub fn new(center: Point, radius: f64, arrival: f64) -> Self {
        Self {
            center,
            radius,
            arrival,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// The compact intent domain: goal centers in the ball of radius `workspace_radius`,
/// radii in `[r_min, r_max]`, arrival times in `[t_min, t_max]`.
///
/// The workspace used for particle positions is the same ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDomain {
    pub dim: usize,
    pub workspace_radius: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl IntentDomain {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if !(0.0 < self.r_min && self.r_min < self.r_max && self.r_max < self.workspace_radius) {
            return Err(Error::Config(format!(
                "need 0 < r_min < r_max < R, got r_min={} r_max={} R={}",
                self.r_min, self.r_max, self.workspace_radius
            )));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max) {
            return Err(Error::Config(format!(
                "need 0 < t_min < t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, intent: &Intent) -> bool {
        intent.dim() == self.dim
            && geom::norm(&intent.center) <= self.workspace_radius * (1.0 + 1e-12)
            && (self.r_min..=self.r_max).contains(&intent.radius)
            && (self.t_min..=self.t_max).contains(&intent.arrival)
    }

    pub fn in_workspace(&self, p: &[f64]) -> bool {
        p.len() == self.dim && geom::norm(p) <= self.workspace_radius * (1.0 + 1e-12)
    }

    /// Uniform point in the workspace ball.
    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        uniform_in_ball(self.dim, self.workspace_radius, rng)
    }

    /// One draw from the product prior over the domain.
    pub fn sample_intent<R: Rng + ?Sized>(&self, rng: &mut R) -> Intent {
        let center = self.sample_position(rng);
        let radius = rng.random_range(self.r_min..=self.r_max);
        let arrival = rng.random_range(self.t_min..=self.t_max);
        Intent::new(center, radius, arrival)
    }
}

/// Uniform sample from the closed ball of the given radius centered at the origin.
pub fn uniform_in_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Point {
    loop {
        let dir: Point = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = geom::norm(&dir);
        if n > 1e-300 {
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / dim as f64);
            return geom::scale(&dir, r / n);
        }
    }
}

/// Convergence rate `max{dbar / r, ln(R / r) / t}` of the nominal closed loop.
pub fn lambda_rate(intent: &Intent, dbar: f64, workspace_radius: f64) -> Result<f64> {
    if !(intent.radius > 0.0 && intent.arrival > 0.0 && workspace_radius > 0.0) {
        return Err(Error::Domain(format!(
            "lambda needs positive radius, arrival and workspace radius (r={}, t={}, R={})",
            intent.radius, intent.arrival, workspace_radius
        )));
    }
    Ok((dbar / intent.radius).max((workspace_radius / intent.radius).ln() / intent.arrival))
}

/// `-lambda * (x - center)`.
pub fn closed_loop_field(intent: &Intent, lambda: f64, x: &[f64]) -> Point {
    x.iter()
        .zip(&intent.center)
        .map(|(xi, ci)| -lambda * (xi - ci))
        .collect()
}

/// Straight-line reference from `start` to the goal center, reached at the
/// arrival time and held there afterwards.
pub fn reference_point(start: &[f64], intent: &Intent, t: f64) -> Point {
    let s = (t / intent.arrival).clamp(0.0, 1.0);
    if s == 1.0 {
        return intent.center.clone();
    }
    start
        .iter()
        .zip(&intent.center)
        .map(|(q, c)| q + s * (c - q))
        .collect()
}

/// Tracking-error envelope. Only the affine family is provided:
/// `rho(t) = rho0 + (r - rho0) * t / t_arrival`, which keeps growing past the
/// arrival time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnvelopeSpec {
    Affine {
        rho0: f64,
        radius: f64,
        arrival: f64,
    },
}

impl EnvelopeSpec {
    pub fn affine(rho0: f64, intent: &Intent) -> Result<Self> {
        let spec = EnvelopeSpec::Affine {
            rho0,
            radius: intent.radius,
            arrival: intent.arrival,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EnvelopeSpec::Affine {
                rho0,
                radius,
                arrival,
            } => {
                if !(rho0 > 0.0 && rho0 < radius && arrival > 0.0) {
                    return Err(Error::Config(format!(
                        "affine envelope needs 0 < rho0 < r and t > 0 (rho0={rho0}, r={radius}, t={arrival})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether this envelope satisfies `rho(t(theta)) = r(theta)` for `intent`.
    pub fn matches(&self, intent: &Intent) -> bool {
        (self.value(intent.arrival) - intent.radius).abs() <= 1e-12 * intent.radius.max(1.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            EnvelopeSpec::Affine {
                rho0,
                radius,
                arrival,
            } => {
                if t == arrival {
                    radius
                } else {
                    rho0 + (radius - rho0) * t / arrival
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intent2(c: [f64; 2], r: f64, t: f64) -> Intent {
        Intent::new(c.to_vec(), r, t)
    }

    #[test]
    fn lambda_examples() {
        let th = intent2([0.0, 0.0], 0.5, 10.0);
        let l = lambda_rate(&th, 0.1, 10.0).unwrap();
        assert!((l - 0.299_573_227_355_399_1).abs() < 1e-15);

        let th = intent2([0.0, 0.0], 1.0, 1.0);
        let l = lambda_rate(&th, 1.0, std::f64::consts::E).unwrap();
        assert!((l - 1.0).abs() < 1e-15);

        let th = intent2([0.0, 0.0], 2.0, 3.0);
        assert_eq!(lambda_rate(&th, 0.3, 2.0).unwrap(), 0.15);
    }

    #[test]
    fn lambda_rejects_nonpositive() {
        assert!(lambda_rate(&intent2([0.0, 0.0], 0.0, 1.0), 0.1, 10.0).is_err());
        assert!(lambda_rate(&intent2([0.0, 0.0], 1.0, -1.0), 0.1, 10.0).is_err());
        assert!(lambda_rate(&intent2([0.0, 0.0], 1.0, 1.0), 0.1, 0.0).is_err());
    }

    #[test]
    fn field_examples() {
        let th = intent2([1.0, 1.0], 0.5, 5.0);
        assert_eq!(closed_loop_field(&th, 0.7, &[1.0, 1.0]), vec![0.0, 0.0]);
        let th = intent2([0.0, 0.0], 0.5, 5.0);
        assert_eq!(closed_loop_field(&th, 1.0, &[2.0, 0.0]), vec![-2.0, 0.0]);
        let th = intent2([1.0, 1.0], 0.5, 5.0);
        assert_eq!(closed_loop_field(&th, 0.5, &[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn reference_examples() {
        let th = intent2([4.0, 0.0], 1.0, 10.0);
        let q = [0.0, 0.0];
        assert_eq!(reference_point(&q, &th, 0.0), q.to_vec());
        assert_eq!(reference_point(&q, &th, 10.0), th.center);
        assert_eq!(reference_point(&q, &th, 2.5), vec![1.0, 0.0]);
        assert_eq!(reference_point(&q, &th, 25.0), th.center);
    }

    #[test]
    fn envelope_examples() {
        let th = intent2([0.0, 0.0], 1.0, 10.0);
        let env = EnvelopeSpec::affine(0.2, &th).unwrap();
        assert_eq!(env.value(10.0), 1.0);
        assert!((env.value(5.0) - 0.6).abs() < 1e-15);
        assert!(env.matches(&th));
        assert!(EnvelopeSpec::affine(1.5, &th).is_err());
        assert!(EnvelopeSpec::affine(0.0, &th).is_err());
    }

    #[test]
    fn domain_validation() {
        let mut d = IntentDomain {
            dim: 2,
            workspace_radius: 10.0,
            r_min: 0.5,
            r_max: 2.0,
            t_min: 5.0,
            t_max: 20.0,
        };
        assert!(d.validate().is_ok());
        d.r_max = 11.0;
        assert!(d.validate().is_err());
        d.r_max = 2.0;
        d.dim = 4;
        assert!(d.validate().is_err());
    }

    #[test]
    fn samples_stay_in_domain() {
        let d = IntentDomain {
            dim: 3,
            workspace_radius: 4.0,
            r_min: 0.5,
            r_max: 2.0,
            t_min: 5.0,
            t_max: 20.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            assert!(d.contains(&d.sample_intent(&mut rng)));
        }
    }

    fn integrate_to_arrival(
        th: &Intent,
        x0: &[f64],
        dbar: f64,
        r_ws: f64,
        mut disturbance: impl FnMut(&[f64]) -> Point,
    ) -> Point {
        let lam = lambda_rate(th, dbar, r_ws).unwrap();
        let steps = 20_000;
        let h = th.arrival / steps as f64;
        let mut x = x0.to_vec();
        for _ in 0..steps {
            let f = closed_loop_field(th, lam, &x);
            let d = disturbance(&x);
            x = x
                .iter()
                .zip(f.iter().zip(&d))
                .map(|(xi, (fi, di))| xi + h * (fi + di))
                .collect();
        }
        x
    }

    /// Starting within distance R of the goal center, random bounded
    /// disturbances, the goal ball is reached by the arrival time.
    #[test]
    fn nominal_dynamics_reach_goal_ball() {
        let d = IntentDomain {
            dim: 2,
            workspace_radius: 10.0,
            r_min: 0.5,
            r_max: 2.0,
            t_min: 5.0,
            t_max: 20.0,
        };
        let dbar = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let th = d.sample_intent(&mut rng);
            let off = uniform_in_ball(2, d.workspace_radius, &mut rng);
            let x0 = geom::axpy(&th.center, 1.0, &off);
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            let x = integrate_to_arrival(&th, &x0, dbar, d.workspace_radius, |_| {
                uniform_in_ball(2, dbar, &mut noise)
            });
            let e = geom::dist(&x, &th.center);
            assert!(e <= th.radius + 1e-2, "missed goal: {e} vs {}", th.radius);
        }
    }

    /// With a disturbance that always pushes away from the goal the rate only
    /// guarantees the weaker radius `2r - r^2/R`.
    #[test]
    fn worst_case_disturbance_bound() {
        let r_ws = 10.0;
        let dbar = 0.2;
        for (r, t) in [(0.5, 5.0), (2.0, 8.0), (1.0, 20.0), (0.8, 12.0)] {
            let th = Intent::new(vec![1.0, -1.0], r, t);
            let x0 = geom::axpy(&th.center, r_ws, &[1.0, 0.0]);
            let x = integrate_to_arrival(&th, &x0, dbar, r_ws, |x| {
                let away = geom::sub(x, &th.center);
                geom::scale(&away, dbar / geom::norm(&away).max(1e-12))
            });
            let e = geom::dist(&x, &th.center);
            assert!(e <= 2.0 * r - r * r / r_ws + 1e-3, "e={e}");
        }
    }

    proptest! {
        #[test]
        fn envelope_monotone(rho0 in 0.01f64..0.99, t1 in 0.0f64..30.0, dt in 1e-6f64..10.0) {
            let th = Intent::new(vec![0.0, 0.0], 1.0, 10.0);
            let env = EnvelopeSpec::affine(rho0, &th).unwrap();
            prop_assert!(env.value(t1) < env.value(t1 + dt));
        }

        #[test]
        fn reference_is_affine_on_arrival_interval(s in 0.0f64..1.0, u in 0.0f64..1.0,
            qx in -5.0f64..5.0, qy in -5.0f64..5.0) {
            let th = Intent::new(vec![3.0, -2.0], 1.0, 8.0);
            let q = [qx, qy];
            let (ta, tb) = (s * 8.0, u * 8.0);
            let mid = reference_point(&q, &th, 0.5 * (ta + tb));
            let avg = geom::lerp(&reference_point(&q, &th, ta), &reference_point(&q, &th, tb), 0.5);
            prop_assert!(geom::dist(&mid, &avg) < 1e-12);
        }
    }
}
