//! Monte Carlo checks of the probabilistic guarantees.
//!
//! Frequency claims pass when the exact one-sided Clopper-Pearson lower
//! bound on the success rate reaches the required rate in every scenario
//! state. Deterministic claims pass when every trial satisfies the
//! inequality. Every trial draws from its own substream, so reports do not
//! depend on how trials are scheduled across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{self, PriorKernelMeans};
use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::intent::{uniform_in_ball, Intent, IntentDomain};
use crate::leakage::{self, Component, IntentRepresentation};
use crate::rbpf::{self, InfoState, JitterMode, ObservationModel, ReinitDistribution};
use crate::rng::{SimRng, Streams, Substream};
use crate::sim::{self, ControlMode, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClaimId {
    #[serde(rename = "theorem1-sandwich")]
    Theorem1Sandwich,
    Lemma1,
    Lemma2,
    Composite,
    KappaTail,
    HoeffdingEps,
    #[serde(rename = "prop1-mass")]
    Prop1Mass,
    Gradient,
    RspBound,
    Envelope,
}

impl ClaimId {
    pub const ALL: [ClaimId; 10] = [
        ClaimId::Theorem1Sandwich,
        ClaimId::Lemma1,
        ClaimId::Lemma2,
        ClaimId::Composite,
        ClaimId::KappaTail,
        ClaimId::HoeffdingEps,
        ClaimId::Prop1Mass,
        ClaimId::Gradient,
        ClaimId::RspBound,
        ClaimId::Envelope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimId::Theorem1Sandwich => "theorem1-sandwich",
            ClaimId::Lemma1 => "lemma1",
            ClaimId::Lemma2 => "lemma2",
            ClaimId::Composite => "composite",
            ClaimId::KappaTail => "kappa-tail",
            ClaimId::HoeffdingEps => "hoeffding-eps",
            ClaimId::Prop1Mass => "prop1-mass",
            ClaimId::Gradient => "gradient",
            ClaimId::RspBound => "rsp-bound",
            ClaimId::Envelope => "envelope",
        }
    }

    /// Claims checked against a required success rate rather than on every trial.
    pub fn is_frequency(self) -> bool {
        matches!(
            self,
            ClaimId::Lemma1
                | ClaimId::Lemma2
                | ClaimId::Composite
                | ClaimId::KappaTail
                | ClaimId::HoeffdingEps
        )
    }
}

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClaimId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClaimId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownClaim(s.to_string()))
    }
}

/// Settings of the random scenario states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub domain: IntentDomain,
    pub observation: ObservationModel,
    pub representation: IntentRepresentation,
    pub particles: usize,
    pub n0: usize,
    pub init_cov: f64,
    /// Symmetric Dirichlet concentration of the weights; `None` gives uniform weights.
    pub concentration: Option<f64>,
    /// Radius of the ball the particle estimates are spread over.
    pub spread: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Blend value for the Bayes-step claims; drawn per state when unset.
    pub mu: Option<f64>,
    /// Bound on the reference speed used to place the next reference point.
    pub speed: f64,
    /// Samples for the Monte Carlo leakage estimate.
    pub kl_samples: usize,
    pub prior_mc_samples: usize,
    /// Samples for reference values of prior kernel means.
    pub reference_samples: usize,
    /// Steps of each closed-loop run in the envelope claim.
    pub envelope_steps: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            domain: IntentDomain {
                dim: 2,
                workspace_radius: 10.0,
                r_min: 0.5,
                r_max: 2.0,
                t_min: 10.0,
                t_max: 30.0,
            },
            observation: ObservationModel {
                obs_std: 0.5,
                process_scale: 1.0,
                dbar: 0.5,
                dt: 0.1,
                jitter: JitterMode::PerParticle,
            },
            representation: IntentRepresentation {
                sigma_x: 1.0,
                sigma_r: 0.5,
                sigma_t: 2.0,
            },
            particles: 50,
            n0: 25,
            init_cov: 0.25,
            concentration: Some(1.0),
            spread: 1.0,
            delta1: 0.05,
            delta2: 0.3,
            mu: None,
            speed: 1.5,
            kl_samples: 100_000,
            prior_mc_samples: 10_000,
            reference_samples: 1_000_000,
            envelope_steps: 200,
        }
    }
}

impl Scenario {
    pub fn prior(&self) -> ReinitDistribution {
        ReinitDistribution::new(self.domain.clone(), self.observation.dbar, self.init_cov)
    }

    pub fn state_settings(&self) -> StateSettings {
        StateSettings {
            particles: self.particles,
            concentration: self.concentration,
            spread: self.spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSpec {
    pub claim: ClaimId,
    /// Trials per scenario state.
    pub trials: usize,
    /// Independent scenario states; frequency claims must pass in each.
    pub states: usize,
    pub confidence: f64,
    pub seed: u64,
    pub scenario: Scenario,
}

impl ClaimSpec {
    pub fn new(claim: ClaimId, trials: usize, seed: u64) -> Self {
        Self {
            claim,
            trials,
            states: 1,
            confidence: 0.95,
            seed,
            scenario: Scenario::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::Config(format!(
                "need at least 100 trials, got {}",
                self.trials
            )));
        }
        if !(self.confidence > 0.5 && self.confidence < 1.0) {
            return Err(Error::Config(format!(
                "confidence must lie in (0.5, 1), got {}",
                self.confidence
            )));
        }
        if self.states == 0 {
            return Err(Error::Config("need at least one state".into()));
        }
        let s = &self.scenario;
        s.domain.validate()?;
        s.observation.validate()?;
        s.representation.validate()?;
        for d in [s.delta1, s.delta2] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("deltas must lie in (0, 1), got {d}")));
            }
        }
        if s.particles == 0 || s.n0 == 0 || s.n0 > s.particles {
            return Err(Error::Config("need 1 <= n0 <= particles".into()));
        }
        if s.kl_samples < 1000 {
            return Err(Error::Config("kl_samples must be at least 1000".into()));
        }
        if let Some(mu) = s.mu {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::Config("mu must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub claim: ClaimId,
    pub trials: usize,
    pub states: usize,
    pub successes: usize,
    /// Pooled success frequency.
    pub frequency: f64,
    /// Required success frequency; 1 for deterministic claims.
    pub required: f64,
    /// Smallest per-state lower confidence bound (frequency claims only).
    pub lower_bound: Option<f64>,
    pub confidence: f64,
    pub pass: bool,
    /// Wall-clock time; left out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

impl VerifyReport {
    pub fn summary(&self) -> String {
        let lb = self
            .lower_bound
            .map(|v| format!(", lower bound {v:.6}"))
            .unwrap_or_default();
        format!(
            "{} {}: {}/{} succeeded ({:.6}), required {:.6}{lb}",
            if self.pass { "PASS" } else { "FAIL" },
            self.claim,
            self.successes,
            self.trials * self.states,
            self.frequency,
            self.required,
        )
    }
}

/// One-sided lower confidence bound on a binomial rate (Clopper-Pearson).
pub fn clopper_pearson_lower(successes: usize, trials: usize, confidence: f64) -> f64 {
    if successes == 0 || trials == 0 {
        return 0.0;
    }
    if successes == trials {
        return (1.0 - confidence).powf(1.0 / trials as f64);
    }
    // p with P(X >= successes | p) = 1 - confidence, i.e. the
    // (1 - confidence)-quantile of Beta(successes, trials - successes + 1).
    let a = successes as f64;
    let b = (trials - successes) as f64 + 1.0;
    let target = 1.0 - confidence;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if statrs::function::beta::beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Settings for [`random_info_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSettings {
    pub particles: usize,
    pub concentration: Option<f64>,
    pub spread: f64,
}

/// Weights from a symmetric Dirichlet distribution (uniform when `None`).
pub fn dirichlet_weights<R: Rng + ?Sized>(
    n: usize,
    concentration: Option<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let Some(alpha) = concentration else {
        return vec![1.0 / n as f64; n];
    };
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let raw: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            return raw.iter().map(|v| v / total).collect();
        }
    }
}

/// Intents from the prior, estimates spread around a random workspace point
/// (kept inside the workspace), Dirichlet weights.
pub fn random_info_state<R: Rng + ?Sized>(
    settings: &StateSettings,
    prior: &ReinitDistribution,
    rng: &mut R,
) -> Result<InfoState> {
    let domain = &prior.domain;
    let anchor = domain.sample_position(rng);
    let mut particles = Vec::with_capacity(settings.particles);
    let weights = dirichlet_weights(settings.particles, settings.concentration, rng);
    for (i, w) in weights.into_iter().enumerate() {
        let th = prior.sample_intent(rng);
        let mut e = geom::axpy(
            &anchor,
            1.0,
            &uniform_in_ball(domain.dim, settings.spread, rng),
        );
        let norm = geom::norm(&e);
        if norm > domain.workspace_radius {
            e = geom::scale(&e, domain.workspace_radius / norm);
        }
        particles.push(prior.make_particle(i as u64, th, e, w)?);
    }
    let n = particles.len();
    let mut z = InfoState {
        dim: domain.dim,
        particles,
        resampled: false,
        retained: Vec::new(),
        pre_retained: Vec::new(),
        next_lineage: n as u64,
    };
    let n_eff = z.ess()?;
    z.pre_retained = rbpf::top_indices(&z.weights(), n_eff);
    z.retained = z.pre_retained.clone();
    Ok(z)
}

fn state_rng(seed: u64, state: usize) -> SimRng {
    Streams::new(seed).indexed(Substream::Scenario, state as u64)
}

fn trial_rng(seed: u64, state: usize, trial: usize) -> SimRng {
    Streams::new(seed).indexed(Substream::Verify, ((state as u64) << 32) | trial as u64)
}

/// Agent and reference placement shared by the Bayes-step claims.
struct StepSetup {
    z: InfoState,
    target: Intent,
    center: Point,
    x_ref: Point,
    mu: f64,
    bayes: barrier::BayesBudget,
    b0: f64,
}

fn step_setup(s: &Scenario, rng: &mut SimRng) -> Result<StepSetup> {
    let prior = s.prior();
    let z = random_info_state(&s.state_settings(), &prior, rng)?;
    let target = prior.sample_intent(rng);
    let obs_var = s.observation.obs_var();
    let stats = barrier::cloud_stats(&z, obs_var)?;
    let dt = s.observation.dt;
    let x_k = geom::axpy(&stats.center, 1.0, &uniform_in_ball(z.dim, s.spread, rng));
    let x_ref = geom::axpy(&x_k, dt, &uniform_in_ball(z.dim, s.speed, rng));
    let mu = s.mu.unwrap_or_else(|| rng.random());
    let kappa = barrier::kappa_n(s.delta1, obs_var, z.dim);
    let bayes = barrier::delta_b(&stats, &x_ref, mu, kappa, s.observation.dbar, dt);
    let b0 = barrier::barrier_value(&z, &target, &s.representation, 0.0);
    Ok(StepSetup {
        center: stats.center,
        z,
        target,
        x_ref,
        mu,
        bayes,
        b0,
    })
}

/// Observation after one blended step with a random disturbance and noise.
fn blended_observation(s: &Scenario, setup: &StepSetup, rng: &mut SimRng) -> Point {
    let dt = s.observation.dt;
    let d = uniform_in_ball(setup.z.dim, s.observation.dbar, rng);
    let noise = Normal::new(0.0, s.observation.obs_std).expect("validated obs_std");
    geom::lerp(&setup.center, &setup.x_ref, setup.mu)
        .iter()
        .zip(&d)
        .map(|(x, di)| x + dt * di + noise.sample(rng))
        .collect()
}

fn triggering_state(
    s: &Scenario,
    prior: &ReinitDistribution,
    rng: &mut SimRng,
) -> Result<InfoState> {
    for _ in 0..10_000 {
        let z = random_info_state(&s.state_settings(), prior, rng)?;
        if z.ess()? < s.n0 {
            return Ok(z);
        }
    }
    Err(Error::Config(format!(
        "no state with ESS below n0 = {} found; lower the Dirichlet concentration",
        s.n0
    )))
}

/// Outcome of one trial: success plus an optional diagnostic value.
type Outcome = (bool, f64);

fn run_trials<F>(spec: &ClaimSpec, state: usize, f: F) -> Result<Vec<Outcome>>
where
    F: Fn(&mut SimRng) -> Result<Outcome> + Sync,
{
    (0..spec.trials)
        .into_par_iter()
        .map(|t| f(&mut trial_rng(spec.seed, state, t)))
        .collect()
}

fn lemma1_state(spec: &ClaimSpec, state: usize) -> Result<(Vec<Outcome>, f64)> {
    let s = &spec.scenario;
    let setup = step_setup(s, &mut state_rng(spec.seed, state))?;
    let outcomes = run_trials(spec, state, |rng| {
        let y = blended_observation(s, &setup, rng);
        let zs = rbpf::bayes_update(&setup.z, &y, s.observation.obs_var())?;
        let b1 = barrier::barrier_value(&zs, &setup.target, &s.representation, 0.0);
        Ok((b1 >= setup.b0 - setup.bayes.delta_b, setup.b0 - b1))
    })?;
    Ok((outcomes, 1.0 - s.delta1))
}

fn lemma2_state(spec: &ClaimSpec, state: usize) -> Result<(Vec<Outcome>, f64)> {
    let s = &spec.scenario;
    let prior = s.prior();
    let mut rng = state_rng(spec.seed, state);
    let zs = triggering_state(s, &prior, &mut rng)?;
    let target = prior.sample_intent(&mut rng);
    let means = PriorKernelMeans::estimate(
        &prior,
        &target,
        &s.representation,
        s.prior_mc_samples,
        &mut rng,
    );
    let dr = barrier::delta_r(&zs, s.delta2, &means, &target, &s.representation, s.n0)?;
    let b0 = barrier::barrier_value(&zs, &target, &s.representation, 0.0);
    let outcomes = run_trials(spec, state, |rng| {
        let z1 = rbpf::resample(&zs, s.n0, &prior, rng)?;
        let b1 = barrier::barrier_value(&z1, &target, &s.representation, 0.0);
        Ok((b1 >= b0 - dr.raw, b0 - b1))
    })?;
    Ok((outcomes, 1.0 - s.delta2))
}

fn composite_state(spec: &ClaimSpec, state: usize) -> Result<(Vec<Outcome>, f64)> {
    let s = &spec.scenario;
    let prior = s.prior();
    let mut rng = state_rng(spec.seed, state);
    let setup = step_setup(s, &mut rng)?;
    let means = PriorKernelMeans::estimate(
        &prior,
        &setup.target,
        &s.representation,
        s.prior_mc_samples,
        &mut rng,
    );
    let obs_var = s.observation.obs_var();
    let outcomes = run_trials(spec, state, |rng| {
        let y = blended_observation(s, &setup, rng);
        let z1 = rbpf::propagate_and_kalman(&setup.z, &y, &s.observation, rng);
        let zs = rbpf::bayes_update(&z1, &y, obs_var)?;
        let dr = barrier::delta_r(
            &zs,
            s.delta2,
            &means,
            &setup.target,
            &s.representation,
            s.n0,
        )?;
        let z2 = rbpf::resample(&zs, s.n0, &prior, rng)?;
        let b1 = barrier::barrier_value(&z2, &setup.target, &s.representation, 0.0);
        Ok((
            b1 >= setup.b0 - (setup.bayes.delta_b + dr.clamped),
            setup.b0 - b1,
        ))
    })?;
    Ok((outcomes, (1.0 - s.delta1) * (1.0 - s.delta2)))
}

fn kappa_state(spec: &ClaimSpec, state: usize) -> Result<(Vec<Outcome>, f64)> {
    let s = &spec.scenario;
    let dim = s.domain.dim;
    let kappa = barrier::kappa_n(s.delta1, s.observation.obs_var(), dim);
    let noise = Normal::new(0.0, s.observation.obs_std).expect("validated obs_std");
    let outcomes = run_trials(spec, state, |rng| {
        let xi: Point = (0..dim).map(|_| noise.sample(rng)).collect();
        let n = geom::norm(&xi);
        Ok((n <= kappa, n))
    })?;
    Ok((outcomes, 1.0 - s.delta1))
}

/// Prior kernel means from a large sample, used as the reference value.
pub fn reference_kernel_means<R: Rng + ?Sized>(
    prior: &ReinitDistribution,
    target: &Intent,
    rep: &IntentRepresentation,
    samples: usize,
    rng: &mut R,
) -> [f64; 3] {
    PriorKernelMeans::estimate(prior, target, rep, samples, rng).means
}

fn hoeffding_state(spec: &ClaimSpec, state: usize) -> Result<(Vec<Outcome>, f64, [usize; 3])> {
    let s = &spec.scenario;
    let prior = s.prior();
    let mut rng = state_rng(spec.seed, state);
    let target = prior.sample_intent(&mut rng);
    let means = reference_kernel_means(
        &prior,
        &target,
        &s.representation,
        s.reference_samples,
        &mut rng,
    );
    let eps = barrier::hoeffding_eps(s.delta2, s.n0);
    let per: Vec<[bool; 3]> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(spec.seed, state, t);
            let mut sums = [0.0; 3];
            for _ in 0..s.n0 {
                let th = prior.sample_intent(&mut rng);
                for (acc, c) in sums.iter_mut().zip(Component::ALL) {
                    *acc += leakage::gamma_kernel(&target, &th, c, s.representation.sigma(c));
                }
            }
            [0, 1, 2].map(|k| sums[k] / s.n0 as f64 >= means[k] + eps)
        })
        .collect();
    let mut exceed = [0usize; 3];
    for row in &per {
        for k in 0..3 {
            exceed[k] += row[k] as usize;
        }
    }
    let outcomes = per
        .iter()
        .map(|row| (!row.iter().any(|&e| e), 0.0))
        .collect();
    Ok((outcomes, 1.0 - s.delta2, exceed))
}

fn prop1_trials(spec: &ClaimSpec) -> Result<Vec<Outcome>> {
    const SIZES: [usize; 3] = [10, 50, 200];
    run_trials(spec, 0, |rng| {
        let n = SIZES[rng.random_range(0..SIZES.len())];
        let w = dirichlet_weights(n, Some(1.0), rng);
        let (mass, holds) = rbpf::effective_mass(&w)?;
        Ok((holds, mass))
    })
}

fn random_observation(z: &InfoState, spread: f64, rng: &mut SimRng) -> Result<Point> {
    let center = crate::miniball::chebyshev_center(&z.estimates())?.center;
    Ok(geom::axpy(
        &center,
        1.0,
        &uniform_in_ball(z.dim, 3.0 * spread, rng),
    ))
}

fn gradient_trials(spec: &ClaimSpec) -> Result<Vec<Outcome>> {
    let s = &spec.scenario;
    let prior = s.prior();
    let obs_var = s.observation.obs_var();
    run_trials(spec, 0, |rng| {
        let z = random_info_state(&s.state_settings(), &prior, rng)?;
        let y = random_observation(&z, s.spread, rng)?;
        let j = rng.random_range(0..z.len());
        let stats = barrier::cloud_stats(&z, obs_var)?;
        let (_, g) = barrier::likelihood_ratio(&z, &y, j, obs_var)?;
        let h = 1e-5;
        let fd: Point = (0..z.dim)
            .map(|k| {
                let mut a = y.clone();
                let mut b = y.clone();
                a[k] += h;
                b[k] -= h;
                (barrier::log_ratios(&z, &a, obs_var)[j] - barrier::log_ratios(&z, &b, obs_var)[j])
                    / (2.0 * h)
            })
            .collect();
        let rel = geom::dist(&fd, &g) / geom::norm(&g).max(1.0);
        Ok((rel <= 1e-5 && geom::norm(&g) <= stats.lipschitz + 1e-9, rel))
    })
}

fn rsp_trials(spec: &ClaimSpec) -> Result<Vec<Outcome>> {
    let s = &spec.scenario;
    let prior = s.prior();
    let obs_var = s.observation.obs_var();
    run_trials(spec, 0, |rng| {
        let z = random_info_state(&s.state_settings(), &prior, rng)?;
        let target = prior.sample_intent(rng);
        let y = random_observation(&z, s.spread, rng)?;
        let zs = rbpf::bayes_update(&z, &y, obs_var)?;
        let change = barrier::barrier_value(&zs, &target, &s.representation, 0.0)
            - barrier::barrier_value(&z, &target, &s.representation, 0.0);
        let bound = 3.0 * barrier::ratio_spread(&z, &y, obs_var);
        Ok((change.abs() <= bound + 1e-9, change.abs() - bound))
    })
}

fn envelope_trials(spec: &ClaimSpec) -> Result<Vec<Outcome>> {
    let s = &spec.scenario;
    let base = SimConfig::example();
    run_trials(spec, 0, |rng| {
        let mut cfg = base.clone();
        cfg.seed = rng.random();
        cfg.steps = s.envelope_steps;
        cfg.filter.particles = s.particles;
        cfg.filter.n0 = s.n0;
        cfg.controller.mode = ControlMode::Privacy;
        let out = sim::run_simulation(&cfg)?;
        let capped = out.trace.iter().all(|r| r.mu <= r.mu_max);
        Ok((
            capped && out.report.envelope_violations == 0,
            out.report.envelope_violations as f64,
        ))
    })
}

fn theorem1_trials(spec: &ClaimSpec) -> Result<(Vec<Outcome>, usize)> {
    let s = &spec.scenario;
    let prior = s.prior();
    let rows: Vec<(Outcome, bool)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| -> Result<(Outcome, bool)> {
            let rng = &mut trial_rng(spec.seed, 0, t);
            let z = random_info_state(&s.state_settings(), &prior, rng)?;
            let target = prior.sample_intent(rng);
            let lower = leakage::leakage_lower(&z, &target, &s.representation);
            let upper = leakage::leakage_upper(&z, &target, &s.representation);
            let kl = leakage::kl_mc_oracle(&z, &target, &s.representation, s.kl_samples, rng)?;
            let slack = 3.0 * kl.stderr;
            let ok = lower <= kl.estimate + slack && kl.estimate - slack <= upper;
            let joint_ok =
                leakage::leakage_lower_joint(&z, &target, &s.representation) <= kl.estimate + slack;
            Ok((
                (ok, (lower - kl.estimate) / kl.stderr.max(f64::MIN_POSITIVE)),
                joint_ok,
            ))
        })
        .collect::<Result<_>>()?;
    let joint_failures = rows.iter().filter(|r| !r.1).count();
    Ok((rows.into_iter().map(|r| r.0).collect(), joint_failures))
}

/// Runs the trials of one claim and summarizes them.
pub fn monte_carlo_verify(spec: &ClaimSpec) -> Result<VerifyReport> {
    spec.validate()?;
    let started = Instant::now();
    let mut diagnostics = BTreeMap::new();
    let mut successes = 0;
    let mut lower_bound: Option<f64> = None;
    let mut required = 1.0;
    let mut pass = true;
    let states = if spec.claim.is_frequency() {
        spec.states
    } else {
        1
    };

    if spec.claim.is_frequency() {
        let mut exceed = [0usize; 3];
        let mut worst_drop = f64::NEG_INFINITY;
        for state in 0..states {
            let (outcomes, req) = match spec.claim {
                ClaimId::Lemma1 => lemma1_state(spec, state)?,
                ClaimId::Lemma2 => lemma2_state(spec, state)?,
                ClaimId::Composite => composite_state(spec, state)?,
                ClaimId::KappaTail => kappa_state(spec, state)?,
                ClaimId::HoeffdingEps => {
                    let (o, r, e) = hoeffding_state(spec, state)?;
                    for k in 0..3 {
                        exceed[k] += e[k];
                    }
                    (o, r)
                }
                _ => unreachable!(),
            };
            required = req;
            let ok = outcomes.iter().filter(|o| o.0).count();
            successes += ok;
            let lb = clopper_pearson_lower(ok, outcomes.len(), spec.confidence);
            lower_bound = Some(lower_bound.map_or(lb, |v: f64| v.min(lb)));
            pass &= lb >= req;
            worst_drop = outcomes.iter().map(|o| o.1).fold(worst_drop, f64::max);
        }
        if spec.claim == ClaimId::HoeffdingEps {
            let total = (spec.trials * states) as f64;
            for (c, e) in ["x", "r", "t"].iter().zip(exceed) {
                diagnostics.insert(format!("exceed_rate_{c}"), e as f64 / total);
            }
            diagnostics.insert(
                "eps".into(),
                barrier::hoeffding_eps(spec.scenario.delta2, spec.scenario.n0),
            );
        } else {
            diagnostics.insert("max_observed".into(), worst_drop);
        }
    } else {
        let outcomes = match spec.claim {
            ClaimId::Prop1Mass => prop1_trials(spec)?,
            ClaimId::Gradient => gradient_trials(spec)?,
            ClaimId::RspBound => rsp_trials(spec)?,
            ClaimId::Envelope => envelope_trials(spec)?,
            ClaimId::Theorem1Sandwich => {
                let (o, joint) = theorem1_trials(spec)?;
                diagnostics.insert("joint_bound_failures".into(), joint as f64);
                o
            }
            _ => unreachable!(),
        };
        successes = outcomes.iter().filter(|o| o.0).count();
        pass = successes == outcomes.len();
        let worst = outcomes
            .iter()
            .map(|o| o.1)
            .fold(f64::NEG_INFINITY, f64::max);
        diagnostics.insert("max_observed".into(), worst);
    }

    let total = spec.trials * states;
    Ok(VerifyReport {
        claim: spec.claim,
        trials: spec.trials,
        states,
        successes,
        frequency: successes as f64 / total as f64,
        required,
        lower_bound,
        confidence: spec.confidence,
        pass,
        runtime_secs: started.elapsed().as_secs_f64(),
        diagnostics,
    })
}
