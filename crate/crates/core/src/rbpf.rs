//! The observer's Rao-Blackwellized particle filter.
//!
//! Each particle carries an intent hypothesis and a scalar-covariance Kalman
//! filter for the agent position under that hypothesis. One filter cycle is
//! [`propagate_and_kalman`], [`bayes_update`] and [`resample`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::intent::{self, Intent, IntentDomain};
use crate::leakage::{IntentPoint, IntentRepresentation};
use crate::numeric::{kahan_sum, normalize_log_weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Identifier of the particle this one descends from. Replicas made by
    /// resampling share their parent's lineage; reinitialized particles get a
    /// fresh one.
    pub lineage: u64,
    pub intent: Intent,
    /// Cached convergence rate of `intent`; fixed for the particle's lifetime.
    pub rate: f64,
    pub estimate: Point,
    /// Error covariance is `cov * I`.
    pub cov: f64,
    pub weight: f64,
}

/// Filter state `(intents, estimates, weights)` plus the bookkeeping of the
/// last resampling decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoState {
    pub dim: usize,
    pub particles: Vec<Particle>,
    /// Whether the last call to [`resample`] triggered.
    pub resampled: bool,
    /// Indices of the effective particles after the last update. Equal to
    /// `pre_retained` when no resampling happened, the replica slots otherwise.
    pub retained: Vec<usize>,
    /// Indices of the `N_eff` highest-weight particles after the last Bayesian
    /// update, ascending.
    pub pre_retained: Vec<usize>,
    pub next_lineage: u64,
}

impl InfoState {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn estimates(&self) -> Vec<&[f64]> {
        self.particles
            .iter()
            .map(|p| p.estimate.as_slice())
            .collect()
    }

    pub fn weight_sum(&self) -> f64 {
        kahan_sum(self.particles.iter().map(|p| p.weight))
    }

    pub fn ess(&self) -> Result<usize> {
        ess(&self.weights())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// How the propagation jitter is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    #[default]
    PerParticle,
    Shared,
    Off,
}

/// Observation covariance `obs_std^2 I`, process covariance
/// `(process_scale * dbar)^2 I`, step `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub obs_std: f64,
    pub process_scale: f64,
    pub dbar: f64,
    pub dt: f64,
    #[serde(default)]
    pub jitter: JitterMode,
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.obs_std > 0.0 && self.process_scale > 0.0 && self.dt > 0.0 && self.dbar >= 0.0) {
            return Err(Error::Config(format!(
                "observation model needs obs_std, process_scale, dt > 0 and dbar >= 0: {self:?}"
            )));
        }
        Ok(())
    }

    /// Scalar of the isotropic observation covariance.
    pub fn obs_var(&self) -> f64 {
        self.obs_std * self.obs_std
    }

    /// Scalar of the isotropic process covariance.
    pub fn process_var(&self) -> f64 {
        let s = self.process_scale * self.dbar;
        s * s
    }
}

/// Prior used at initialization and when resampling refills slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinitDistribution {
    pub domain: IntentDomain,
    pub dbar: f64,
    /// Error covariance given to fresh particles.
    pub init_cov: f64,
}

impl ReinitDistribution {
    pub fn new(domain: IntentDomain, dbar: f64, init_cov: f64) -> Self {
        Self {
            domain,
            dbar,
            init_cov,
        }
    }

    pub fn sample_intent<R: Rng + ?Sized>(&self, rng: &mut R) -> Intent {
        self.domain.sample_intent(rng)
    }

    fn particle(&self, lineage: u64, intent: Intent, estimate: Point, weight: f64) -> Particle {
        // domain sampling guarantees positive radius/arrival
        let rate = intent::lambda_rate(&intent, self.dbar, self.domain.workspace_radius)
            .expect("intent drawn from a validated domain");
        Particle {
            lineage,
            intent,
            rate,
            estimate,
            cov: self.init_cov,
            weight,
        }
    }

    /// Builds a particle for an explicit intent, e.g. in fixtures.
    pub fn make_particle(
        &self,
        lineage: u64,
        intent: Intent,
        estimate: Point,
        weight: f64,
    ) -> Result<Particle> {
        let rate = intent::lambda_rate(&intent, self.dbar, self.domain.workspace_radius)?;
        Ok(Particle {
            lineage,
            intent,
            rate,
            estimate,
            cov: self.init_cov,
            weight,
        })
    }
}

/// `N` particles with intents from the prior, all estimates at `y0`, uniform weights.
pub fn init_filter<R: Rng + ?Sized>(
    n: usize,
    prior: &ReinitDistribution,
    y0: &[f64],
    rng: &mut R,
) -> Result<InfoState> {
    if n == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if y0.len() != prior.domain.dim {
        return Err(Error::Domain(format!(
            "initial observation has dimension {}, expected {}",
            y0.len(),
            prior.domain.dim
        )));
    }
    let w = 1.0 / n as f64;
    let particles = (0..n)
        .map(|i| {
            let th = prior.sample_intent(rng);
            prior.particle(i as u64, th, y0.to_vec(), w)
        })
        .collect();
    Ok(InfoState {
        dim: prior.domain.dim,
        particles,
        resampled: false,
        retained: (0..n).collect(),
        pre_retained: (0..n).collect(),
        next_lineage: n as u64,
    })
}

/// Scalar Kalman step for one particle: returns `(prior_cov, gain, posterior_cov)`.
pub fn kalman_scalars(
    transition: f64,
    cov: f64,
    process_var: f64,
    obs_var: f64,
) -> (f64, f64, f64) {
    let prior = transition * transition * cov + process_var;
    let gain = prior / (prior + obs_var);
    (prior, gain, (1.0 - gain) * prior)
}

/// Euler prediction under each particle's own intent followed by the Kalman
/// correction towards `y`. Weights and intents are untouched.
pub fn propagate_and_kalman<R: Rng + ?Sized>(
    z: &InfoState,
    y: &[f64],
    model: &ObservationModel,
    rng: &mut R,
) -> InfoState {
    let dt = model.dt;
    let process_var = model.process_var();
    let obs_var = model.obs_var();
    let jitter_std = dt * process_var.sqrt();
    let jitter = Normal::new(0.0, jitter_std)
        .ok()
        .filter(|_| jitter_std > 0.0);
    let draw = |rng: &mut R| -> Point {
        match jitter {
            Some(nd) => (0..z.dim).map(|_| nd.sample(rng)).collect(),
            None => vec![0.0; z.dim],
        }
    };
    let shared = match model.jitter {
        JitterMode::Shared => Some(draw(rng)),
        _ => None,
    };

    let mut out = z.clone();
    for p in &mut out.particles {
        let drift = intent::closed_loop_field(&p.intent, p.rate, &p.estimate);
        let mut prior = geom::axpy(&p.estimate, dt, &drift);
        match model.jitter {
            JitterMode::PerParticle => {
                let xi = draw(rng);
                prior.iter_mut().zip(&xi).for_each(|(a, b)| *a += b);
            }
            JitterMode::Shared => {
                let xi = shared.as_ref().unwrap();
                prior.iter_mut().zip(xi).for_each(|(a, b)| *a += b);
            }
            JitterMode::Off => {}
        }
        let transition = 1.0 - dt * p.rate;
        let (_, gain, post_cov) = kalman_scalars(transition, p.cov, process_var, obs_var);
        p.estimate = prior
            .iter()
            .zip(y)
            .map(|(x, yi)| x + gain * (yi - x))
            .collect();
        p.cov = post_cov;
    }
    out
}

/// Unnormalized Gaussian log-likelihood `log N(y; x, obs_var I)` without the
/// constant, which cancels in every ratio we take.
#[inline]
pub fn log_likelihood(y: &[f64], x: &[f64], obs_var: f64) -> f64 {
    -geom::dist_sq(y, x) / (2.0 * obs_var)
}

/// Reweights by the observation likelihood in log space. Produces the
/// pre-resampling state with `pre_retained` set to the top-`N_eff` indices.
pub fn bayes_update(z: &InfoState, y: &[f64], obs_var: f64) -> Result<InfoState> {
    let mut log_w: Vec<f64> = z
        .particles
        .iter()
        .map(|p| p.weight.ln() + log_likelihood(y, &p.estimate, obs_var))
        .collect();
    let lse = normalize_log_weights(&mut log_w);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights(lse));
    }
    let mut out = z.clone();
    for (p, w) in out.particles.iter_mut().zip(log_w) {
        p.weight = w;
    }
    let weights = out.weights();
    let n_eff = ess(&weights)?;
    out.pre_retained = top_indices(&weights, n_eff);
    out.retained = out.pre_retained.clone();
    out.resampled = false;
    Ok(out)
}

/// `floor(1 / sum w^2)`, clamped to `[1, N]`.
pub fn ess(weights: &[f64]) -> Result<usize> {
    let sq = kahan_sum(weights.iter().map(|w| w * w));
    if !(sq > 0.0) || !sq.is_finite() {
        return Err(Error::DegenerateWeights(sq));
    }
    // a relative nudge absorbs rounding in the sum of squares, e.g. uniform
    // weights giving 49.999999999 instead of 50
    let v = ((1.0 / sq) * (1.0 + 1e-12)).floor() as usize;
    Ok(v.clamp(1, weights.len()))
}

/// The `k` largest weights, ties going to the lower index; returned ascending.
pub fn top_indices(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Right-hand side of the effective-mass inequality
/// `1 - w_eff <= (N - N_eff)/N * (1 - sqrt((N - N_eff - 1)/((N_eff + 1)(N - 1))))`.
pub fn effective_mass_bound(n: usize, n_eff: usize) -> f64 {
    if n_eff >= n || n <= 1 {
        return 0.0;
    }
    let (nf, ef) = (n as f64, n_eff as f64);
    let inner = (nf - ef - 1.0) / ((ef + 1.0) * (nf - 1.0));
    (nf - ef) / nf * (1.0 - inner.sqrt())
}

/// Mass carried by the top-`N_eff` particles and whether the effective-mass
/// inequality holds for this weight vector.
pub fn effective_mass(weights: &[f64]) -> Result<(f64, bool)> {
    let n_eff = ess(weights)?;
    let top = top_indices(weights, n_eff);
    let mass = kahan_sum(top.iter().map(|&i| weights[i]));
    let holds = 1.0 - mass <= effective_mass_bound(weights.len(), n_eff) + 1e-12;
    Ok((mass, holds))
}

/// Replica counts `floor(w_a N / w_eff)` for the retained set.
pub fn replica_counts(weights: &[f64], retained: &[usize]) -> Vec<usize> {
    let n = weights.len();
    let mass = kahan_sum(retained.iter().map(|&i| weights[i]));
    let mut counts: Vec<usize> = retained
        .iter()
        .map(|&a| ((weights[a] * n as f64 / mass) * (1.0 + 1e-12)).floor() as usize)
        .collect();
    // the nudge above must never push the total past N
    let mut total: usize = counts.iter().sum();
    for c in counts.iter_mut().rev() {
        if total <= n {
            break;
        }
        let cut = (*c).min(total - n);
        *c -= cut;
        total -= cut;
    }
    counts
}

/// Whether a pre-resampling state triggers resampling for threshold `n0`.
pub fn triggers(z: &InfoState, n0: usize) -> Result<bool> {
    Ok(z.ess()? < n0)
}

/// Resampling step. Without a trigger the state passes through with
/// `retained = pre_retained`. With a trigger the retained particles are
/// replicated, the remaining slots are refilled from the prior with a uniform
/// position, and all weights become `1/N`.
pub fn resample<R: Rng + ?Sized>(
    z: &InfoState,
    n0: usize,
    prior: &ReinitDistribution,
    rng: &mut R,
) -> Result<InfoState> {
    let n = z.len();
    if n0 > n {
        return Err(Error::Config(format!(
            "resampling threshold {n0} exceeds particle count {n}"
        )));
    }
    let weights = z.weights();
    let n_eff = ess(&weights)?;
    if n_eff >= n0 {
        let mut out = z.clone();
        out.retained = out.pre_retained.clone();
        out.resampled = false;
        return Ok(out);
    }

    let keep = top_indices(&weights, n_eff);
    let counts = replica_counts(&weights, &keep);
    let w = 1.0 / n as f64;
    let mut particles = Vec::with_capacity(n);
    for (&a, &c) in keep.iter().zip(&counts) {
        for _ in 0..c {
            let mut p = z.particles[a].clone();
            p.weight = w;
            particles.push(p);
        }
    }
    let replicated = particles.len();
    let mut next_lineage = z.next_lineage;
    while particles.len() < n {
        let th = prior.sample_intent(rng);
        let pos = prior.domain.sample_position(rng);
        particles.push(prior.particle(next_lineage, th, pos, w));
        next_lineage += 1;
    }
    Ok(InfoState {
        dim: z.dim,
        particles,
        resampled: true,
        retained: (0..replicated).collect(),
        pre_retained: keep,
        next_lineage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Complete,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pre,
    Post,
}

/// Mixture weights of the requested estimator as `(index, weight)` pairs.
pub fn estimator_weights(
    z: &InfoState,
    kind: EstimatorKind,
    stage: Stage,
) -> Result<Vec<(usize, f64)>> {
    if stage == Stage::Pre && z.resampled {
        return Err(Error::Domain(
            "pre-resampling estimator requested on a resampled state".into(),
        ));
    }
    match kind {
        EstimatorKind::Complete => Ok(z.particles.iter().map(|p| p.weight).enumerate().collect()),
        EstimatorKind::Reduced => {
            let set = match stage {
                Stage::Pre => &z.pre_retained,
                Stage::Post => &z.retained,
            };
            if set.is_empty() {
                return Err(Error::EmptyParticleSet);
            }
            let mass = kahan_sum(set.iter().map(|&i| z.particles[i].weight));
            Ok(set
                .iter()
                .map(|&i| (i, z.particles[i].weight / mass))
                .collect())
        }
    }
}

/// An estimator mixture with its weights resolved, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Mixture<'a> {
    rep: IntentRepresentation,
    components: Vec<(f64, &'a Intent)>,
}

impl<'a> Mixture<'a> {
    pub fn new(
        z: &'a InfoState,
        kind: EstimatorKind,
        stage: Stage,
        rep: &IntentRepresentation,
    ) -> Result<Self> {
        let components = estimator_weights(z, kind, stage)?
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|(i, w)| (w.ln(), &z.particles[i].intent))
            .collect();
        Ok(Self {
            rep: *rep,
            components,
        })
    }

    /// Single-pass streaming log-sum-exp over the components, in index order.
    pub fn log_density(&self, at: &IntentPoint) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut acc = 0.0;
        for &(lw, th) in &self.components {
            let v = lw + self.rep.log_density(th, at);
            if v > max {
                acc = acc * (max - v).exp() + 1.0;
                max = v;
            } else {
                acc += (v - max).exp();
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + acc.ln()
    }
}

/// Log-density of the estimator mixture at a point of the transformed intent space.
pub fn estimator_log_density(
    z: &InfoState,
    kind: EstimatorKind,
    stage: Stage,
    rep: &IntentRepresentation,
    at: &IntentPoint,
) -> Result<f64> {
    Ok(Mixture::new(z, kind, stage, rep)?.log_density(at))
}

pub fn estimator_density(
    z: &InfoState,
    kind: EstimatorKind,
    stage: Stage,
    rep: &IntentRepresentation,
    at: &IntentPoint,
) -> Result<f64> {
    Ok(estimator_log_density(z, kind, stage, rep, at)?.exp())
}
