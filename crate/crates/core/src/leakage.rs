//! Probabilistic intent representation and the KL information-leakage bounds.
//!
//! Every intent `theta` is represented by a product density over
//! `R^n x R x R`: an isotropic Gaussian around the goal center and scalar
//! Gaussians around the radius and arrival time. The radius and time factors
//! live in log coordinates, so their Gaussian means are the raw `r(theta)` and
//! `t(theta)` values. All kernels, closed-form component divergences and the
//! Monte Carlo oracle work in these transformed coordinates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::intent::{Intent, IntentDomain};
use crate::numeric::log_sum_exp;
use crate::rbpf::{EstimatorKind, InfoState, Mixture, Stage};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One of the three intent components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    X,
    R,
    T,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::X, Component::R, Component::T];
}

/// Spreads of the product representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentRepresentation {
    pub sigma_x: f64,
    pub sigma_r: f64,
    pub sigma_t: f64,
}

/// A point of the transformed intent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentPoint {
    pub x: Point,
    pub r: f64,
    pub t: f64,
}

impl IntentRepresentation {
    pub fn new(sigma_x: f64, sigma_r: f64, sigma_t: f64) -> Result<Self> {
        let rep = Self {
            sigma_x,
            sigma_r,
            sigma_t,
        };
        rep.validate()?;
        Ok(rep)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_r > 0.0 && self.sigma_t > 0.0) {
            return Err(Error::Config(format!(
                "representation spreads must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, c: Component) -> f64 {
        match c {
            Component::X => self.sigma_x,
            Component::R => self.sigma_r,
            Component::T => self.sigma_t,
        }
    }

    /// `log q_theta(at)` in transformed coordinates.
    pub fn log_density(&self, intent: &Intent, at: &IntentPoint) -> f64 {
        let n = intent.dim() as f64;
        let (sx2, sr2, st2) = (
            self.sigma_x * self.sigma_x,
            self.sigma_r * self.sigma_r,
            self.sigma_t * self.sigma_t,
        );
        let norm = -0.5 * (n + 2.0) * LN_2PI
            - n * self.sigma_x.ln()
            - self.sigma_r.ln()
            - self.sigma_t.ln();
        let dr = at.r - intent.radius;
        let dt = at.t - intent.arrival;
        norm - geom::dist_sq(&at.x, &intent.center) / (2.0 * sx2)
            - dr * dr / (2.0 * sr2)
            - dt * dt / (2.0 * st2)
    }

    /// The mean of `q_theta`.
    pub fn mean(&self, intent: &Intent) -> IntentPoint {
        IntentPoint {
            x: intent.center.clone(),
            r: intent.radius,
            t: intent.arrival,
        }
    }
}

/// Squared component gap `||nu(a) - nu(b)||^2`.
pub fn component_gap_sq(a: &Intent, b: &Intent, c: Component) -> f64 {
    match c {
        Component::X => geom::dist_sq(&a.center, &b.center),
        Component::R => (a.radius - b.radius).powi(2),
        Component::T => (a.arrival - b.arrival).powi(2),
    }
}

/// `exp(-||nu(theta*) - nu(theta)||^2 / (4 sigma_nu^2))`.
pub fn gamma_kernel(target: &Intent, theta: &Intent, c: Component, sigma: f64) -> f64 {
    log_gamma_kernel(target, theta, c, sigma).exp()
}

#[inline]
pub fn log_gamma_kernel(target: &Intent, theta: &Intent, c: Component, sigma: f64) -> f64 {
    -component_gap_sq(target, theta, c) / (4.0 * sigma * sigma)
}

/// `log S_nu` for the three components, reduced in log space.
pub fn log_kernel_sums(z: &InfoState, target: &Intent, rep: &IntentRepresentation) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut terms = Vec::with_capacity(z.len());
    for (slot, c) in out.iter_mut().zip(Component::ALL) {
        terms.clear();
        let sigma = rep.sigma(c);
        terms.extend(
            z.particles
                .iter()
                .map(|p| p.weight.ln() + log_gamma_kernel(target, &p.intent, c, sigma)),
        );
        *slot = log_sum_exp(&terms);
    }
    out
}

/// `S_nu = sum_j w_j gamma_nu(theta_j)` for `nu = x, r, t`.
pub fn kernel_sums(z: &InfoState, target: &Intent, rep: &IntentRepresentation) -> [f64; 3] {
    log_kernel_sums(z, target, rep).map(f64::exp)
}

/// The additive constant `C = -log(sigma_x^(1-n) (e/2)^((n+2)/2))`.
pub fn leakage_constant(dim: usize, sigma_x: f64) -> f64 {
    let n = dim as f64;
    -((1.0 - n) * sigma_x.ln() + 0.5 * (n + 2.0) * (1.0 - std::f64::consts::LN_2))
}

/// `KL(q_target || q_theta)` for the product representation.
pub fn component_kl(target: &Intent, theta: &Intent, rep: &IntentRepresentation) -> f64 {
    Component::ALL
        .iter()
        .map(|&c| {
            let s = rep.sigma(c);
            component_gap_sq(target, theta, c) / (2.0 * s * s)
        })
        .sum()
}

/// Supremum of the convexity upper bound over all particle configurations
/// in the domain, for a fixed true intent. Attained with all mass on the
/// farthest corner of the gap box.
pub fn leakage_cap(target: &Intent, domain: &IntentDomain, rep: &IntentRepresentation) -> f64 {
    let gx = geom::norm(&target.center) + domain.workspace_radius;
    let gr = (target.radius - domain.r_min).max(domain.r_max - target.radius);
    let gt = (target.arrival - domain.t_min).max(domain.t_max - target.arrival);
    gx * gx / (2.0 * rep.sigma_x.powi(2))
        + gr * gr / (2.0 * rep.sigma_r.powi(2))
        + gt * gt / (2.0 * rep.sigma_t.powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub constant: f64,
    pub lower: f64,
    pub upper: f64,
    pub cap: f64,
    pub kernel_sums: [f64; 3],
}

/// Lower bound `C - sum_nu log S_nu` only.
pub fn leakage_lower(z: &InfoState, target: &Intent, rep: &IntentRepresentation) -> f64 {
    let logs = log_kernel_sums(z, target, rep);
    leakage_constant(z.dim, rep.sigma_x) - logs.iter().sum::<f64>()
}

/// Jensen bound with the kernels multiplied inside the mixture sum,
/// `C - log sum_j w_j prod_nu gamma_nu(theta_j)`. Unlike [`leakage_lower`]
/// it never exceeds the leakage when `sigma_x = 1`.
pub fn leakage_lower_joint(z: &InfoState, target: &Intent, rep: &IntentRepresentation) -> f64 {
    let terms: Vec<f64> = z
        .particles
        .iter()
        .map(|p| {
            p.weight.ln()
                + Component::ALL
                    .iter()
                    .map(|&c| log_gamma_kernel(target, &p.intent, c, rep.sigma(c)))
                    .sum::<f64>()
        })
        .collect();
    leakage_constant(z.dim, rep.sigma_x) - log_sum_exp(&terms)
}

/// Upper bound `sum_j w_j KL(q_target || q_j)`.
pub fn leakage_upper(z: &InfoState, target: &Intent, rep: &IntentRepresentation) -> f64 {
    z.particles
        .iter()
        .map(|p| p.weight * component_kl(target, &p.intent, rep))
        .sum()
}

pub fn leakage_bounds(
    z: &InfoState,
    target: &Intent,
    rep: &IntentRepresentation,
    domain: &IntentDomain,
) -> LeakageReport {
    let logs = log_kernel_sums(z, target, rep);
    let constant = leakage_constant(z.dim, rep.sigma_x);
    LeakageReport {
        constant,
        lower: constant - logs.iter().sum::<f64>(),
        upper: leakage_upper(z, target, rep),
        cap: leakage_cap(target, domain, rep),
        kernel_sums: logs.map(f64::exp),
    }
}

/// Monte Carlo estimate of the leakage and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Estimates `KL(q_target || complete estimator)` by sampling `q_target` in
/// antithetic pairs. `n_samples` counts individual samples and is rounded up
/// to an even number.
pub fn kl_mc_oracle<R: Rng + ?Sized>(
    z: &InfoState,
    target: &Intent,
    rep: &IntentRepresentation,
    n_samples: usize,
    rng: &mut R,
) -> Result<KlEstimate> {
    if n_samples < 1000 {
        return Err(Error::Domain(format!(
            "need at least 1000 samples, got {n_samples}"
        )));
    }
    let stage = if z.resampled { Stage::Post } else { Stage::Pre };
    let mixture = Mixture::new(z, EstimatorKind::Complete, stage, rep)?;
    let pairs = n_samples.div_ceil(2);
    let width = z.dim + 2;
    // draws are taken sequentially so the estimate is independent of threading
    let noise: Vec<f64> = (0..pairs * width)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let mean = rep.mean(target);
    let log_target = |p: &IntentPoint| rep.log_density(target, p);

    let pair_values: Vec<f64> = noise
        .par_chunks(width)
        .map(|e| {
            let mut acc = 0.0;
            for sign in [1.0, -1.0] {
                let p = IntentPoint {
                    x: mean
                        .x
                        .iter()
                        .zip(&e[..z.dim])
                        .map(|(m, v)| m + sign * rep.sigma_x * v)
                        .collect(),
                    r: mean.r + sign * rep.sigma_r * e[z.dim],
                    t: mean.t + sign * rep.sigma_t * e[z.dim + 1],
                };
                acc += log_target(&p) - mixture.log_density(&p);
            }
            0.5 * acc
        })
        .collect();

    let m = pair_values.len() as f64;
    let est = pair_values.iter().sum::<f64>() / m;
    let var = pair_values.iter().map(|v| (v - est).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(KlEstimate {
        estimate: est,
        stderr: (var / m).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbpf::{InfoState, ReinitDistribution};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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

    fn state(intents: Vec<Intent>, weights: Vec<f64>) -> InfoState {
        let pr = ReinitDistribution::new(domain(), 0.2, 0.0);
        let n = intents.len();
        let particles = intents
            .into_iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (th, w))| pr.make_particle(i as u64, th, vec![0.0, 0.0], w).unwrap())
            .collect();
        InfoState {
            dim: 2,
            particles,
            resampled: false,
            retained: (0..n).collect(),
            pre_retained: (0..n).collect(),
            next_lineage: n as u64,
        }
    }

    fn target() -> Intent {
        Intent::new(vec![1.0, 2.0], 1.0, 10.0)
    }

    #[test]
    fn kernel_examples() {
        let t = target();
        assert_eq!(gamma_kernel(&t, &t, Component::X, 0.7), 1.0);
        let far = Intent::new(vec![1.0, 2.0 + 2.0 * 0.7], 1.0, 10.0);
        assert!((gamma_kernel(&t, &far, Component::X, 0.7) - (-1.0f64).exp()).abs() < 1e-15);
        let mut last = 1.0;
        for k in 1..50 {
            let th = Intent::new(vec![1.0 + k as f64 * 0.3, 2.0], 1.0, 10.0);
            let g = gamma_kernel(&t, &th, Component::X, 0.7);
            assert!(g < last);
            last = g;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn kernel_sum_examples() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = target();
        let z = state(vec![t.clone(), t.clone()], vec![0.5, 0.5]);
        for s in kernel_sums(&z, &t, &rep) {
            assert!((s - 1.0).abs() < 1e-15);
        }
        let far = Intent::new(vec![1.0, 4.0], 1.0, 10.0);
        let z = state(vec![t.clone(), far], vec![0.5, 0.5]);
        let s = kernel_sums(&z, &t, &rep);
        assert!((s[0] - 0.683_939_720_585_721_2).abs() < 1e-15);
        assert!((s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = target();
        let z = state(vec![t.clone()], vec![1.0]);
        let rep_out = leakage_bounds(&z, &t, &rep, &domain());
        assert!((rep_out.constant - (-0.613_705_638_880_109_4)).abs() < 1e-15);
        assert!((rep_out.lower - rep_out.constant).abs() < 1e-15);
        assert_eq!(rep_out.upper, 0.0);

        let gap = Intent::new(vec![2.0, 2.0], 1.0, 10.0);
        let z = state(vec![gap], vec![1.0]);
        assert!((leakage_upper(&z, &t, &rep) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cap_dominates_corner() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = target();
        let d = domain();
        let dir = geom::scale(&t.center, -1.0 / geom::norm(&t.center));
        let corner = Intent::new(geom::scale(&dir, d.workspace_radius), d.r_max, d.t_max);
        let z = state(vec![corner], vec![1.0]);
        let cap = leakage_cap(&t, &d, &rep);
        assert!((leakage_upper(&z, &t, &rep) - cap).abs() < 1e-9 * cap);
    }

    #[test]
    fn mc_oracle_zero_for_exact_match() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = target();
        let z = state(vec![t.clone()], vec![1.0]);
        let kl = kl_mc_oracle(&z, &t, &rep, 10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(kl.estimate.abs() <= 3.0 * kl.stderr + 1e-12);
        assert!(kl_mc_oracle(&z, &t, &rep, 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    /// Two components symmetric about the target along x only, so the KL
    /// reduces to a one-dimensional integral computed here by quadrature.
    #[test]
    fn mc_oracle_matches_quadrature() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = Intent::new(vec![0.0, 0.0], 1.0, 10.0);
        let a = Intent::new(vec![-1.5, 0.0], 1.0, 10.0);
        let b = Intent::new(vec![1.5, 0.0], 1.0, 10.0);
        let z = state(vec![a, b], vec![0.5, 0.5]);

        let phi =
            |u: f64, m: f64| (-(u - m) * (u - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (lo, hi, steps) = (-12.0, 12.0, 200_000);
        let h = (hi - lo) / steps as f64;
        let mut quad = 0.0;
        for i in 0..=steps {
            let u = lo + i as f64 * h;
            let p = phi(u, 0.0);
            let q = 0.5 * phi(u, -1.5) + 0.5 * phi(u, 1.5);
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            if p > 0.0 {
                quad += w * p * (p / q).ln();
            }
        }
        quad *= h;

        let kl = kl_mc_oracle(&z, &t, &rep, 200_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(
            (kl.estimate - quad).abs() <= 3.0 * kl.stderr + 1e-4,
            "{} vs {quad}",
            kl.estimate
        );
    }

    #[test]
    fn mc_oracle_is_deterministic() {
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let t = target();
        let z = state(
            vec![t.clone(), Intent::new(vec![3.0, 0.0], 1.5, 12.0)],
            vec![0.3, 0.7],
        );
        let a = kl_mc_oracle(&z, &t, &rep, 4000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = kl_mc_oracle(&z, &t, &rep, 4000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.estimate + 3.0 * a.stderr >= 0.0);
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        // importance-sample the mixture against a broad Gaussian proposal
        let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
        let z = state(
            vec![
                Intent::new(vec![1.0, 0.0], 1.0, 8.0),
                Intent::new(vec![-2.0, 1.0], 1.8, 14.0),
            ],
            vec![0.4, 0.6],
        );
        let mix = Mixture::new(&z, EstimatorKind::Complete, Stage::Post, &rep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (sx, sr, st) = (4.0, 2.0, 6.0);
        let center = IntentPoint {
            x: vec![-0.5, 0.5],
            r: 1.4,
            t: 11.0,
        };
        let n = 200_000;
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let e: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let p = IntentPoint {
                x: vec![center.x[0] + sx * e[0], center.x[1] + sx * e[1]],
                r: center.r + sr * e[2],
                t: center.t + st * e[3],
            };
            let log_prop = -2.0 * LN_2PI
                - 2.0 * f64::ln(sx)
                - f64::ln(sr)
                - f64::ln(st)
                - e.iter().map(|v| v * v).sum::<f64>() / 2.0;
            vals.push((mix.log_density(&p) - log_prop).exp());
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 4.0 * sd / (n as f64).sqrt(), "{mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn log_sums_match_direct(seed in any::<u64>(), n in 1usize..30) {
            let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = domain();
            let intents: Vec<Intent> = (0..n).map(|_| d.sample_intent(&mut rng)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let z = state(intents, raw.iter().map(|v| v / s).collect());
            let t = target();
            let logs = log_kernel_sums(&z, &t, &rep);
            for (c, l) in Component::ALL.iter().zip(logs) {
                let direct: f64 = z.particles.iter().map(|p| p.weight * gamma_kernel(&t, &p.intent, *c, rep.sigma(*c))).sum();
                if direct > 1e-200 {
                    prop_assert!((l - direct.ln()).abs() <= 1e-12 * l.abs().max(1.0));
                }
                prop_assert!(l <= 1e-15);
            }
            prop_assert!(leakage_upper(&z, &t, &rep) <= leakage_cap(&t, &d, &rep) + 1e-9);
        }

        #[test]
        fn moving_mass_to_target_raises_sums(seed in any::<u64>(), frac in 0.0f64..1.0) {
            let rep = IntentRepresentation::new(1.0, 0.5, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = domain();
            let t = target();
            let far = d.sample_intent(&mut rng);
            let other = d.sample_intent(&mut rng);
            let z0 = state(vec![t.clone(), far.clone(), other.clone()], vec![0.2, 0.5, 0.3]);
            let z1 = state(vec![t.clone(), far, other], vec![0.2 + 0.5 * frac, 0.5 * (1.0 - frac), 0.3]);
            let (a, b) = (kernel_sums(&z0, &t, &rep), kernel_sums(&z1, &t, &rep));
            for i in 0..3 {
                prop_assert!(b[i] >= a[i] - 1e-15);
            }
        }
    }
}
