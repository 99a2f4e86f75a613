//! Information barrier `b(z) = lower_leakage(z) - gamma` and the per-step
//! budgets certifying its one-step probabilistic decrease.
//!
//! The Bayesian-update budget is built from the Chebyshev center of the
//! particle cloud and the Lipschitz constant of the log likelihood ratios; the
//! resampling budget is a Hoeffding bound on the kernel mass of refilled
//! particles. Both budgets are evaluated at the current state rather than as
//! suprema over all states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::intent::Intent;
use crate::leakage::{self, Component, IntentRepresentation};
use crate::miniball;
use crate::numeric::log_sum_exp;
use crate::rbpf::{self, InfoState, ReinitDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    /// Leakage threshold.
    pub gamma: f64,
    /// Sublevel margin for the multiplicative form.
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Horizon failure tolerance.
    pub epsilon: f64,
    pub horizon: usize,
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.delta1) && unit(self.delta2) && unit(self.epsilon)) {
            return Err(Error::Config(format!(
                "delta1, delta2 and epsilon must lie in (0,1): {self:?}"
            )));
        }
        if !(self.beta > 0.0) || self.horizon == 0 {
            return Err(Error::Config(format!(
                "need beta > 0 and horizon >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Per-step failure probability needed for the horizon guarantee.
    pub fn step_budget(&self) -> f64 {
        horizon_budget(self.epsilon, self.horizon)
    }
}

/// Geometry of the particle cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub center: Point,
    pub radius: f64,
    pub diameter: f64,
    pub lipschitz: f64,
    /// Likelihood-ratio spread `B(z, center)`.
    pub psi: f64,
}

pub fn cloud_stats(z: &InfoState, obs_var: f64) -> Result<CloudStats> {
    let pts = z.estimates();
    let ball = miniball::chebyshev_center(&pts)?;
    let diameter = diameter(&pts);
    let psi = ratio_spread(z, &ball.center, obs_var);
    Ok(CloudStats {
        center: ball.center,
        radius: ball.radius,
        diameter,
        // ||Delta^-1|| for the isotropic observation covariance
        lipschitz: diameter / obs_var,
        psi,
    })
}

fn diameter(pts: &[&[f64]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.max(geom::dist_sq(a, b));
        }
    }
    best.sqrt()
}

/// `log r_j(y)` for every particle, where `r_j(y) = p(y | x_j) / sum_i w_i p(y | x_i)`.
pub fn log_ratios(z: &InfoState, y: &[f64], obs_var: f64) -> Vec<f64> {
    let ll: Vec<f64> = z
        .particles
        .iter()
        .map(|p| rbpf::log_likelihood(y, &p.estimate, obs_var))
        .collect();
    let terms: Vec<f64> = z
        .particles
        .iter()
        .zip(&ll)
        .map(|(p, l)| p.weight.ln() + l)
        .collect();
    let norm = log_sum_exp(&terms);
    ll.into_iter().map(|l| l - norm).collect()
}

/// `B(z, y) = max(|log max_j r_j|, |log min_j r_j|)` over all particles,
/// including those with zero weight.
pub fn ratio_spread(z: &InfoState, y: &[f64], obs_var: f64) -> f64 {
    let lr = log_ratios(z, y, obs_var);
    let hi = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = lr.iter().copied().fold(f64::INFINITY, f64::min);
    hi.abs().max(lo.abs())
}

/// Likelihood ratio `r_j(y)` and the gradient of its logarithm,
/// `Delta^-1 (x_j - mu(y))` with `mu` the posterior-weighted mean.
pub fn likelihood_ratio(z: &InfoState, y: &[f64], j: usize, obs_var: f64) -> Result<(f64, Point)> {
    if j >= z.len() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: z.len(),
        });
    }
    let lr = log_ratios(z, y, obs_var);
    let mut mean = vec![0.0; z.dim];
    for (p, l) in z.particles.iter().zip(&lr) {
        let post = p.weight * l.exp();
        for (m, x) in mean.iter_mut().zip(&p.estimate) {
            *m += post * x;
        }
    }
    let grad = z.particles[j]
        .estimate
        .iter()
        .zip(&mean)
        .map(|(x, m)| (x - m) / obs_var)
        .collect();
    Ok((lr[j].exp(), grad))
}

/// Radius with `P(||xi|| <= kappa) >= 1 - delta1` for `xi ~ N(0, Delta)`, from
/// the chi-square tail `n + 2 sqrt(n x) + 2x` with `x = log(1/delta1)`.
pub fn kappa_n(delta1: f64, obs_var_norm: f64, dim: usize) -> f64 {
    let n = dim as f64;
    let x = -delta1.ln();
    (obs_var_norm * (n + 2.0 * (n * x).sqrt() + 2.0 * x)).sqrt()
}

/// Bayesian-update budget terms at the current state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesBudget {
    pub a1: f64,
    pub b1: f64,
    pub mu: f64,
    pub delta_b: f64,
}

impl BayesBudget {
    /// Same terms at a different blend value.
    pub fn with_mu(self, mu: f64) -> Self {
        Self {
            mu,
            delta_b: mu * self.a1 + (1.0 - mu) * self.b1,
            ..self
        }
    }
}

/// `A1 = 3 psi + 3 L (dbar dt + kappa)`, `B1 = 3 L ||x_ref - center||`,
/// `delta_b = mu A1 + (1 - mu) B1`.
pub fn delta_b(
    stats: &CloudStats,
    x_ref_next: &[f64],
    mu: f64,
    kappa: f64,
    dbar: f64,
    dt: f64,
) -> BayesBudget {
    let a1 = 3.0 * stats.psi + 3.0 * stats.lipschitz * (dbar * dt + kappa);
    let b1 = 3.0 * stats.lipschitz * geom::dist(x_ref_next, &stats.center);
    BayesBudget {
        a1,
        b1,
        mu,
        delta_b: 0.0,
    }
    .with_mu(mu)
}

/// Hoeffding deviation `sqrt(log(3/delta2) / (2 n0))`.
pub fn hoeffding_eps(delta2: f64, n0: usize) -> f64 {
    ((3.0 / delta2).ln() / (2.0 * n0 as f64)).sqrt()
}

/// Prior means `E_pi[gamma_nu]` of the three kernels for one true intent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorKernelMeans {
    pub means: [f64; 3],
    pub samples: usize,
}

impl PriorKernelMeans {
    /// Monte Carlo estimate over `samples` prior draws.
    pub fn estimate<R: Rng + ?Sized>(
        prior: &ReinitDistribution,
        target: &Intent,
        rep: &IntentRepresentation,
        samples: usize,
        rng: &mut R,
    ) -> Self {
        let mut sums = [0.0; 3];
        for _ in 0..samples {
            let th = prior.sample_intent(rng);
            for (s, c) in sums.iter_mut().zip(Component::ALL) {
                *s += leakage::gamma_kernel(target, &th, c, rep.sigma(c));
            }
        }
        Self {
            means: sums.map(|s| s / samples as f64),
            samples,
        }
    }
}

/// Resampling budget: the raw log-ratio sum and its value clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleBudget {
    pub raw: f64,
    pub clamped: f64,
    pub triggered: bool,
}

impl ResampleBudget {
    pub const ZERO: ResampleBudget = ResampleBudget {
        raw: 0.0,
        clamped: 0.0,
        triggered: false,
    };
}

/// `sum_nu log((A_nu + n0 (E_pi[gamma_nu] + eps)) / (N S_nu))` at a
/// pre-resampling state, with `A_nu` the kernel mass of the replicas that a
/// triggered resampling would keep. Zero when resampling would not trigger.
pub fn delta_r(
    z_sharp: &InfoState,
    delta2: f64,
    means: &PriorKernelMeans,
    target: &Intent,
    rep: &IntentRepresentation,
    n0: usize,
) -> Result<ResampleBudget> {
    let weights = z_sharp.weights();
    let n_eff = rbpf::ess(&weights)?;
    if n_eff >= n0 {
        return Ok(ResampleBudget::ZERO);
    }
    let keep = rbpf::top_indices(&weights, n_eff);
    let counts = rbpf::replica_counts(&weights, &keep);
    let eps = hoeffding_eps(delta2, n0);
    let n = z_sharp.len() as f64;
    let log_s = leakage::log_kernel_sums(z_sharp, target, rep);
    let mut raw = 0.0;
    for (k, c) in Component::ALL.into_iter().enumerate() {
        let sigma = rep.sigma(c);
        let a: f64 = keep
            .iter()
            .zip(&counts)
            .map(|(&i, &cnt)| {
                cnt as f64 * leakage::gamma_kernel(target, &z_sharp.particles[i].intent, c, sigma)
            })
            .sum();
        raw += (a + n0 as f64 * (means.means[k] + eps)).ln() - n.ln() - log_s[k];
    }
    Ok(ResampleBudget {
        raw,
        clamped: raw.max(0.0),
        triggered: true,
    })
}

/// Combined one-step certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierBudget {
    pub a1: f64,
    pub b1: f64,
    pub delta_b: f64,
    pub delta_r: f64,
    pub delta_total: f64,
    /// Multiplicative rate `1 - delta_total / beta`; set only when feasible.
    pub alpha: Option<f64>,
    /// Composite failure probability `1 - (1 - delta1)(1 - delta2)`.
    pub delta_f: f64,
    pub feasible: bool,
}

pub fn compose_pcbf(
    bayes: &BayesBudget,
    delta_r: f64,
    beta: f64,
    delta1: f64,
    delta2: f64,
    b_current: f64,
) -> BarrierBudget {
    let delta_total = bayes.delta_b + delta_r;
    let feasible = beta > delta_total && b_current >= beta;
    BarrierBudget {
        a1: bayes.a1,
        b1: bayes.b1,
        delta_b: bayes.delta_b,
        delta_r,
        delta_total,
        alpha: feasible.then(|| 1.0 - delta_total / beta),
        delta_f: 1.0 - (1.0 - delta1) * (1.0 - delta2),
        feasible,
    }
}

/// Largest per-step failure probability `delta` with `(1 - delta)^H >= 1 - eps`.
pub fn horizon_budget(epsilon: f64, horizon: usize) -> f64 {
    -((-epsilon).ln_1p() / horizon as f64).exp_m1()
}

pub fn barrier_value(
    z: &InfoState,
    target: &Intent,
    rep: &IntentRepresentation,
    gamma: f64,
) -> f64 {
    leakage::leakage_lower(z, target, rep) - gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::IntentDomain;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn domain() -> IntentDomain {
        IntentDomain {
            dim: 2,
            workspace_radius: 10.0,
            r_min: 0.5,
            r_max: 2.0,
            t_min: 5.0,
            t_max: 20.0,
        }
    }

    fn prior() -> ReinitDistribution {
        ReinitDistribution::new(domain(), 0.2, 0.0)
    }

    fn state(estimates: &[Vec<f64>], weights: &[f64], intents: Option<Vec<Intent>>) -> InfoState {
        let pr = prior();
        let n = estimates.len();
        let intents = intents.unwrap_or_else(|| {
            (0..n)
                .map(|i| Intent::new(vec![i as f64 - 1.0, 0.5], 1.0, 10.0))
                .collect()
        });
        let particles = estimates
            .iter()
            .zip(weights)
            .zip(intents)
            .enumerate()
            .map(|(i, ((e, &w), th))| pr.make_particle(i as u64, th, e.clone(), w).unwrap())
            .collect();
        InfoState {
            dim: estimates[0].len(),
            particles,
            resampled: false,
            retained: (0..n).collect(),
            pre_retained: (0..n).collect(),
            next_lineage: n as u64,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> InfoState {
        let d = domain();
        let est: Vec<Vec<f64>> = (0..n)
            .map(|_| crate::intent::uniform_in_ball(2, spread, rng))
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().ln()).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let intents = (0..n).map(|_| d.sample_intent(rng)).collect();
        state(&est, &w, Some(intents))
    }

    #[test]
    fn point_cloud_stats() {
        let z = state(&vec![vec![1.0, 1.0]; 3], &[0.2, 0.3, 0.5], None);
        let s = cloud_stats(&z, 0.25).unwrap();
        assert_eq!((s.diameter, s.lipschitz, s.psi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn two_point_cloud() {
        let z = state(&[vec![-1.0, 0.0], vec![1.0, 0.0]], &[0.5, 0.5], None);
        let s = cloud_stats(&z, 1.0).unwrap();
        assert_eq!(s.diameter, 2.0);
        assert_eq!(s.lipschitz, 2.0);
        assert!(s.psi.abs() < 1e-15);
        assert!(s.radius <= s.diameter && s.diameter <= 2.0 * s.radius + 1e-15);
    }

    #[test]
    fn ratios_of_identical_cloud() {
        let z = state(&vec![vec![0.3, -0.2]; 4], &[0.1, 0.2, 0.3, 0.4], None);
        for j in 0..4 {
            let (r, g) = likelihood_ratio(&z, &[5.0, 5.0], j, 0.5).unwrap();
            assert!((r - 1.0).abs() < 1e-14);
            assert!(geom::norm(&g) < 1e-12);
        }
        assert!(likelihood_ratio(&z, &[0.0, 0.0], 4, 0.5).is_err());
    }

    #[test]
    fn kappa_examples() {
        assert!((kappa_n((-1.0f64).exp(), 1.0, 2) - 2.613_125_929_752_753).abs() < 1e-12);
        assert!((kappa_n(1.0 - 1e-15, 0.3, 3) - (3.0f64 * 0.3).sqrt()).abs() < 1e-6);
        assert!(kappa_n(0.01, 1.0, 2) > kappa_n(0.05, 1.0, 2));
    }

    #[test]
    fn kappa_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for dim in [2usize, 3] {
            for delta in [0.01, 0.05, 0.2] {
                let obs_var = 0.3;
                let k = kappa_n(delta, obs_var, dim);
                let n = 100_000;
                let hits = (0..n)
                    .filter(|_| {
                        let s: f64 = (0..dim)
                            .map(|_| {
                                let v: f64 = StandardNormal.sample(&mut rng);
                                obs_var * v * v
                            })
                            .sum();
                        s.sqrt() <= k
                    })
                    .count();
                assert!(hits as f64 / n as f64 >= 1.0 - delta);
            }
        }
    }

    #[test]
    fn delta_b_examples() {
        let stats = CloudStats {
            center: vec![0.0, 0.0],
            radius: 1.0,
            diameter: 2.0,
            lipschitz: 2.0,
            psi: 0.1,
        };
        let b = delta_b(&stats, &[1.0, 0.0], 0.5, 2.613_126, 0.5, 0.1);
        assert!((b.a1 - 16.278_756).abs() < 1e-9);
        assert!((b.b1 - 6.0).abs() < 1e-12);
        assert!((b.delta_b - 11.139_378).abs() < 1e-9);

        let b = delta_b(&stats, &[0.0, 0.0], 0.3, 1.0, 0.5, 0.1);
        assert_eq!(b.b1, 0.0);
        assert!((b.delta_b - 0.3 * b.a1).abs() < 1e-15);

        let flat = CloudStats {
            center: vec![1.0, 1.0],
            radius: 0.0,
            diameter: 0.0,
            lipschitz: 0.0,
            psi: 0.0,
        };
        let b = delta_b(&flat, &[4.0, 0.0], 0.7, 3.0, 0.5, 0.1);
        assert_eq!((b.a1, b.b1, b.delta_b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn eps_example() {
        assert!((hoeffding_eps(0.3, 100) - 0.107_298_301_314_467_36).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let bb = BayesBudget {
            a1: 2.0,
            b1: 0.0,
            mu: 0.5,
            delta_b: 1.0,
        };
        let c = compose_pcbf(&bb, 0.0, 4.0, 0.1, 0.2, 5.0);
        assert!(c.feasible);
        assert_eq!(c.alpha, Some(0.75));
        assert!((c.delta_f - 0.28).abs() < 1e-15);
        let c = compose_pcbf(&bb, 3.0, 4.0, 0.1, 0.2, 5.0);
        assert!(!c.feasible);
        assert_eq!(c.alpha, None);
        let c = compose_pcbf(&bb, 0.0, 4.0, 0.0, 0.0, 5.0);
        assert_eq!(c.delta_f, 0.0);
        // below the sublevel set
        assert!(!compose_pcbf(&bb, 0.0, 4.0, 0.1, 0.1, 3.0).feasible);
    }

    #[test]
    fn horizon_examples() {
        assert!((horizon_budget(0.1, 10) - 0.010_480_741_793_785_607).abs() < 1e-15);
        assert!((horizon_budget(0.2, 1) - 0.2).abs() < 1e-15);
        let mut last = 1.0;
        for h in 1..100 {
            let d = horizon_budget(0.05, h);
            assert!(d < last);
            assert!(((1.0 - d).powi(h as i32) - 0.95).abs() < 1e-12);
            last = d;
        }
    }

    #[test]
    fn barrier_examples() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = Intent::new(vec![0.0, 0.0], 1.0, 10.0);
        let z = state(&[vec![0.0, 0.0]], &[1.0], Some(vec![t.clone()]));
        assert!((barrier_value(&z, &t, &rep, -1.0) - 0.386_294_361_119_890_6).abs() < 1e-15);
        let h = leakage::leakage_lower(&z, &t, &rep);
        assert_eq!(barrier_value(&z, &t, &rep, h), 0.0);

        let far = Intent::new(vec![5.0, 0.0], 2.0, 15.0);
        let z0 = state(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[0.5, 0.5],
            Some(vec![t.clone(), far.clone()]),
        );
        let z1 = state(
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[0.1, 0.9],
            Some(vec![t.clone(), far]),
        );
        assert!(barrier_value(&z1, &t, &rep, 0.0) > barrier_value(&z0, &t, &rep, 0.0));
    }

    #[test]
    fn delta_r_no_trigger_is_zero() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = Intent::new(vec![0.0, 0.0], 1.0, 10.0);
        let z = state(&vec![vec![0.0, 0.0]; 4], &[0.25; 4], None);
        let means = PriorKernelMeans {
            means: [0.1, 0.5, 0.5],
            samples: 1,
        };
        assert_eq!(
            delta_r(&z, 0.1, &means, &t, &rep, 3).unwrap(),
            ResampleBudget::ZERO
        );
        let out = rbpf::resample(&z, 3, &prior(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.weights(), z.weights());
    }

    fn erf_mean(target: f64, lo: f64, hi: f64, sigma: f64) -> f64 {
        // E[exp(-(U - target)^2 / (4 sigma^2))] for U ~ Uniform[lo, hi]
        let s = 2.0 * sigma;
        let g = |u: f64| statrs::function::erf::erf((u - target) / s);
        s * std::f64::consts::PI.sqrt() / 2.0 * (g(hi) - g(lo)) / (hi - lo)
    }

    /// Resampling budget against a high-accuracy oracle for the prior means:
    /// closed-form erf integrals for the radius and time kernels and a 10^6
    /// sample estimate for the position kernel.
    #[test]
    fn delta_r_fixture() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = Intent::new(vec![1.0, -2.0], 1.2, 11.0);
        let d = domain();
        let pr = prior();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 50;
        let est: Vec<Vec<f64>> = (0..n).map(|_| d.sample_position(&mut rng)).collect();
        let raw: Vec<f64> = (0..n)
            .map(|i| if i < 6 { 10.0 + i as f64 } else { 0.2 })
            .collect();
        let s: f64 = raw.iter().sum();
        let intents = (0..n).map(|_| d.sample_intent(&mut rng)).collect();
        let z = state(
            &est,
            &raw.iter().map(|v| v / s).collect::<Vec<_>>(),
            Some(intents),
        );
        assert!(z.ess().unwrap() < 20);

        let mut mc = ChaCha8Rng::seed_from_u64(77);
        let mut gx = 0.0;
        let big = 1_000_000;
        for _ in 0..big {
            let c = d.sample_position(&mut mc);
            gx += (-geom::dist_sq(&c, &t.center) / 4.0).exp();
        }
        let oracle = PriorKernelMeans {
            means: [
                gx / big as f64,
                erf_mean(t.radius, d.r_min, d.r_max, rep.sigma_r),
                erf_mean(t.arrival, d.t_min, d.t_max, rep.sigma_t),
            ],
            samples: big,
        };
        let want = delta_r(&z, 0.3, &oracle, &t, &rep, 20).unwrap();
        let est_means =
            PriorKernelMeans::estimate(&pr, &t, &rep, 10_000, &mut ChaCha8Rng::seed_from_u64(5));
        for k in 0..3 {
            assert!((est_means.means[k] - oracle.means[k]).abs() < 0.01, "{k}");
        }
        let got = delta_r(&z, 0.3, &est_means, &t, &rep, 20).unwrap();
        assert!(want.triggered && got.triggered);
        assert!(
            (want.raw - got.raw).abs() < 0.02,
            "{} vs {}",
            want.raw,
            got.raw
        );
        assert_eq!(got.clamped, got.raw.max(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn ratio_normalization_and_gradient(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_state(&mut rng, 5, 3.0);
            let y = crate::intent::uniform_in_ball(2, 4.0, &mut rng);
            let obs_var = 0.8;
            let lr = log_ratios(&z, &y, obs_var);
            let total: f64 = z.particles.iter().zip(&lr).map(|(p, l)| p.weight * l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);

            let stats = cloud_stats(&z, obs_var).unwrap();
            let h = 1e-5;
            for j in 0..5 {
                let (_, g) = likelihood_ratio(&z, &y, j, obs_var).unwrap();
                prop_assert!(geom::norm(&g) <= stats.lipschitz + 1e-9);
                let fd: Vec<f64> = (0..2).map(|k| {
                    let mut a = y.clone();
                    let mut b = y.clone();
                    a[k] += h;
                    b[k] -= h;
                    (log_ratios(&z, &a, obs_var)[j] - log_ratios(&z, &b, obs_var)[j]) / (2.0 * h)
                }).collect();
                let err = geom::dist(&fd, &g) / geom::norm(&g).max(1.0);
                prop_assert!(err <= 1e-5, "rel err {}", err);
            }
        }

        #[test]
        fn bayes_barrier_change_bounded(seed in any::<u64>()) {
            let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_state(&mut rng, 12, 2.0);
            let t = domain().sample_intent(&mut rng);
            let y = crate::intent::uniform_in_ball(2, 3.0, &mut rng);
            let obs_var = 0.5;
            let sharp = rbpf::bayes_update(&z, &y, obs_var).unwrap();
            let change = barrier_value(&sharp, &t, &rep, 0.0) - barrier_value(&z, &t, &rep, 0.0);
            prop_assert!(change.abs() <= 3.0 * ratio_spread(&z, &y, obs_var) + 1e-9);
        }
    }
}
