//! Closed-loop simulation of the agent against the filtering observer.
//!
//! Each step computes the barrier budgets at the current filter state,
//! chooses the blend, moves the agent under a bounded disturbance, emits a
//! noisy position observation and runs one filter cycle on it.

mod config;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    ControlMode, ControllerConfig, Diagnostics, DisturbanceConfig, DisturbanceModel,
    EnvelopeConfig, FilterConfig, SimConfig,
};
pub use trace::{header, read_trace, write_trace, TraceFormat, TraceRecord, SCHEMA};

use crate::barrier::{self, PriorKernelMeans};
use crate::controller::{self, Feasibility};
use crate::error::Result;
use crate::geom::{self, Point};
use crate::intent::{self, uniform_in_ball, EnvelopeSpec};
use crate::leakage;
use crate::rbpf::{self, InfoState, JitterMode, ReinitDistribution};
use crate::rng::{SimRng, Streams, Substream};

/// Tolerance on envelope checks, absorbing rounding in the position update.
pub const ENVELOPE_TOL: f64 = 1e-9;

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub steps: usize,
    /// First step whose barrier value is negative, counting the final state.
    pub first_negative: Option<usize>,
    pub first_negative_time: Option<f64>,
    pub t_acc: f64,
    /// The barrier stayed nonnegative until at least `t_acc`.
    pub meets_t_acc: bool,
    pub envelope_violations: usize,
    pub envelope_infeasible_steps: usize,
    pub resampling_count: usize,
    pub infeasible_steps: usize,
    pub certified_steps: usize,
    pub mean_mu: f64,
    pub initial_barrier: f64,
    pub final_barrier: f64,
    pub final_h_lower: f64,
    pub initial_kl: Option<f64>,
    pub final_kl: Option<f64>,
    pub final_position: Point,
    pub final_tracking_error: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Vec<TraceRecord>,
    pub report: SimReport,
    pub snapshots: Vec<(usize, InfoState)>,
}

/// Stepwise simulation state.
pub struct Simulation {
    cfg: SimConfig,
    envelope: EnvelopeSpec,
    prior: ReinitDistribution,
    prior_means: PriorKernelMeans,
    kappa: f64,
    streams: Streams,
    disturbance: SimRng,
    observation: SimRng,
    jitter: SimRng,
    reinit: SimRng,
    k: usize,
    x: Point,
    y: Point,
    z: InfoState,
    resampled: bool,
    violations: usize,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let streams = Streams::new(cfg.seed);
        let prior = cfg.prior();
        let prior_means = PriorKernelMeans::estimate(
            &prior,
            &cfg.target,
            &cfg.representation,
            cfg.filter.prior_mc_samples,
            &mut streams.indexed(Substream::MonteCarlo, 0),
        );
        let mut observation = streams.get(Substream::Observation);
        let x = cfg.start.clone();
        let y = observe(&x, &cfg, &mut observation);
        let z = rbpf::init_filter(
            cfg.filter.particles,
            &prior,
            &y,
            &mut streams.get(Substream::Init),
        )?;
        Ok(Self {
            envelope: cfg.envelope_spec()?,
            kappa: barrier::kappa_n(cfg.barrier.delta1, cfg.observation.obs_var(), cfg.dim()),
            disturbance: streams.get(Substream::Disturbance),
            jitter: streams.get(Substream::Jitter),
            reinit: streams.get(Substream::Reinit),
            observation,
            streams,
            prior,
            prior_means,
            k: 0,
            x,
            y,
            z,
            resampled: false,
            violations: 0,
            cfg,
        })
    }

    /// Resumes from an explicit agent position, last observation and filter
    /// state at step `k`. Noise substreams start fresh from the config seed.
    pub fn from_state(cfg: SimConfig, x: Point, y: Point, z: InfoState, k: usize) -> Result<Self> {
        let mut sim = Self::new(cfg)?;
        let dim = sim.cfg.dim();
        if x.len() != dim || y.len() != dim || z.dim != dim || z.is_empty() {
            return Err(crate::Error::Domain(format!(
                "state does not match dimension {dim} or has no particles"
            )));
        }
        sim.resampled = z.resampled;
        sim.x = x;
        sim.y = y;
        sim.z = z;
        sim.k = k;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.observation.dt
    }

    pub fn position(&self) -> &[f64] {
        &self.x
    }

    pub fn state(&self) -> &InfoState {
        &self.z
    }

    pub fn prior_means(&self) -> &PriorKernelMeans {
        &self.prior_means
    }

    pub fn envelope_violations(&self) -> usize {
        self.violations
    }

    pub fn barrier(&self) -> f64 {
        barrier::barrier_value(
            &self.z,
            &self.cfg.target,
            &self.cfg.representation,
            self.cfg.barrier.gamma,
        )
    }

    pub fn tracking_error(&self) -> f64 {
        geom::dist(
            &self.x,
            &intent::reference_point(&self.cfg.start, &self.cfg.target, self.time()),
        )
    }

    /// Monte Carlo leakage of the current filter state, on a substream tied to the step.
    pub fn kl_estimate(&self, samples: usize) -> Result<leakage::KlEstimate> {
        let mut rng = self
            .streams
            .indexed(Substream::MonteCarlo, 1 + self.k as u64);
        leakage::kl_mc_oracle(
            &self.z,
            &self.cfg.target,
            &self.cfg.representation,
            samples,
            &mut rng,
        )
    }

    /// Advances one control period and returns the record of the state it started from.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let cfg = &self.cfg;
        let obs = &cfg.observation;
        let (dt, dbar, obs_var) = (obs.dt, obs.dbar, obs.obs_var());
        let t = self.time();
        let t_next = t + dt;
        let rep = &cfg.representation;
        let bc = &cfg.barrier;

        let stats = barrier::cloud_stats(&self.z, obs_var)?;
        let bounds = leakage::leakage_bounds(&self.z, &cfg.target, rep, &cfg.domain);
        let b = bounds.lower - bc.gamma;
        let x_ref = intent::reference_point(&cfg.start, &cfg.target, t_next);
        let rho_next = self.envelope.value(t_next);
        let bayes = barrier::delta_b(&stats, &x_ref, 0.0, self.kappa, dbar, dt);
        let (cap, envelope_infeasible) =
            controller::mu_max(rho_next, dbar, dt, geom::dist(&x_ref, &stats.center));

        // The resampling budget is taken at the filter state predicted from the
        // nominal next position at the envelope cap.
        let y_hat = geom::lerp(&stats.center, &x_ref, cap);
        let predicted = predict_update(&self.z, &y_hat, obs)?;
        let dr = barrier::delta_r(
            &predicted,
            bc.delta2,
            &self.prior_means,
            &cfg.target,
            rep,
            cfg.filter.n0,
        )?;

        let (mu, feasibility) = match cfg.controller.mode {
            ControlMode::Privacy => controller::select_mu(
                bayes.a1,
                bayes.b1,
                dr.clamped,
                bc.beta,
                cap,
                cfg.controller.margin,
            ),
            ControlMode::Tracking => (0.0, flag_for(&bayes, dr.clamped, bc.beta, 0.0)),
            ControlMode::Fixed => {
                let mu = cfg.controller.mu.unwrap_or(0.0).min(cap);
                (mu, flag_for(&bayes, dr.clamped, bc.beta, mu))
            }
        };
        let (_, _, u) = controller::blend(&self.x, &stats.center, &x_ref, dt, mu);
        let bayes = bayes.with_mu(mu);
        let budget = barrier::compose_pcbf(&bayes, dr.clamped, bc.beta, bc.delta1, bc.delta2, b);

        let kl = match (cfg.diagnostics.kl_samples, cfg.diagnostics.kl_every) {
            (0, _) | (_, 0) => None,
            (n, every) if self.k.is_multiple_of(every) => Some(self.kl_estimate(n)?.estimate),
            _ => None,
        };
        let record = TraceRecord {
            k: self.k,
            t,
            x: self.x.clone(),
            y: self.y.clone(),
            u: u.clone(),
            mu,
            mu_max: cap,
            resampled: self.resampled,
            ess: self.z.ess()?,
            barrier: b,
            h_lower: bounds.lower,
            h_upper: bounds.upper,
            kl,
            psi: stats.psi,
            lipschitz: stats.lipschitz,
            diameter: stats.diameter,
            a1: bayes.a1,
            b1: bayes.b1,
            delta_b: bayes.delta_b,
            delta_r: dr.clamped,
            delta_r_raw: dr.raw,
            delta_total: budget.delta_total,
            alpha: budget.alpha,
            feasibility,
            certified: budget.feasible,
            envelope_infeasible,
            tracking_error: self.tracking_error(),
            rho: self.envelope.value(t),
        };

        let d = sample_disturbance(cfg, &mut self.disturbance);
        let x_next: Point = self
            .x
            .iter()
            .zip(&u)
            .zip(&d)
            .map(|((x, u), d)| x + dt * u + dt * d)
            .collect();
        if geom::dist(&x_next, &x_ref) > rho_next + ENVELOPE_TOL {
            self.violations += 1;
        }
        let y_next = observe(&x_next, cfg, &mut self.observation);
        let z1 = rbpf::propagate_and_kalman(&self.z, &y_next, obs, &mut self.jitter);
        let z2 = rbpf::bayes_update(&z1, &y_next, obs_var)?;
        let z3 = rbpf::resample(&z2, cfg.filter.n0, &self.prior, &mut self.reinit)?;

        self.resampled = z3.resampled;
        self.z = z3;
        self.x = x_next;
        self.y = y_next;
        self.k += 1;
        Ok(record)
    }
}

/// Controller flag for a blend chosen outside the budget-driven policy.
fn flag_for(bayes: &barrier::BayesBudget, delta_r: f64, beta: f64, mu: f64) -> Feasibility {
    if controller::budget_holds(bayes.a1, bayes.b1, delta_r, beta, mu) {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible
    }
}

fn sample_disturbance(cfg: &SimConfig, rng: &mut SimRng) -> Point {
    let dim = cfg.dim();
    match cfg.disturbance.model {
        DisturbanceModel::None => vec![0.0; dim],
        DisturbanceModel::UniformBall => uniform_in_ball(dim, cfg.observation.dbar, rng),
        DisturbanceModel::Constant => cfg
            .disturbance
            .vector
            .clone()
            .unwrap_or_else(|| vec![0.0; dim]),
    }
}

fn observe(x: &[f64], cfg: &SimConfig, rng: &mut SimRng) -> Point {
    if !cfg.diagnostics.observation_noise {
        return x.to_vec();
    }
    let noise = rand_distr::Normal::new(0.0, cfg.observation.obs_std).expect("validated obs_std");
    x.iter()
        .map(|xi| xi + rand_distr::Distribution::sample(&noise, rng))
        .collect()
}

/// Noise-free filter prediction and Bayesian update for a hypothetical observation.
fn predict_update(z: &InfoState, y: &[f64], model: &rbpf::ObservationModel) -> Result<InfoState> {
    let quiet = rbpf::ObservationModel {
        jitter: JitterMode::Off,
        ..*model
    };
    // no draws happen with jitter off
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let z1 = rbpf::propagate_and_kalman(z, y, &quiet, &mut unused);
    rbpf::bayes_update(&z1, y, model.obs_var())
}

/// Runs `cfg.steps` steps and summarizes.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    let mut sim = Simulation::new(cfg.clone())?;
    let diag = cfg.diagnostics;
    let initial_kl = if diag.kl_samples > 0 {
        Some(sim.kl_estimate(diag.kl_samples)?.estimate)
    } else {
        None
    };
    let initial_barrier = sim.barrier();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut snapshots = Vec::new();
    for k in 0..cfg.steps {
        if diag.snapshot_every > 0 && k % diag.snapshot_every == 0 {
            snapshots.push((k, sim.state().clone()));
        }
        trace.push(sim.step()?);
    }
    if diag.snapshot_every > 0 && cfg.steps.is_multiple_of(diag.snapshot_every) {
        snapshots.push((cfg.steps, sim.state().clone()));
    }
    let final_kl = match (diag.kl_samples, cfg.steps) {
        (0, _) => None,
        (_, 0) => initial_kl,
        (n, _) => Some(sim.kl_estimate(n)?.estimate),
    };
    let final_barrier = sim.barrier();
    let first_negative = trace
        .iter()
        .map(|r| r.barrier)
        .chain(std::iter::once(final_barrier))
        .position(|b| b < 0.0);
    let dt = cfg.observation.dt;
    let first_negative_time = first_negative.map(|k| k as f64 * dt);
    let n = trace.len().max(1) as f64;
    let report = SimReport {
        steps: cfg.steps,
        first_negative,
        first_negative_time,
        t_acc: cfg.t_acc,
        meets_t_acc: first_negative_time.is_none_or(|t| t >= cfg.t_acc),
        envelope_violations: sim.envelope_violations(),
        envelope_infeasible_steps: trace.iter().filter(|r| r.envelope_infeasible).count(),
        resampling_count: trace.iter().skip(1).filter(|r| r.resampled).count()
            + sim.resampled as usize,
        infeasible_steps: trace
            .iter()
            .filter(|r| r.feasibility == Feasibility::Infeasible)
            .count(),
        certified_steps: trace.iter().filter(|r| r.certified).count(),
        mean_mu: trace.iter().map(|r| r.mu).sum::<f64>() / n,
        initial_barrier,
        final_barrier,
        final_h_lower: final_barrier + cfg.barrier.gamma,
        initial_kl,
        final_kl,
        final_position: sim.position().to_vec(),
        final_tracking_error: sim.tracking_error(),
    };
    Ok(SimOutput {
        trace,
        report,
        snapshots,
    })
}
