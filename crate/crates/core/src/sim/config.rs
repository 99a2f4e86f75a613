use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierConfig;
use crate::controller::DEFAULT_MARGIN;
use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::intent::{EnvelopeSpec, Intent, IntentDomain};
use crate::leakage::IntentRepresentation;
use crate::rbpf::{ObservationModel, ReinitDistribution};

/// A closed-loop run. Loaded from TOML, or JSON when the file ends in `.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Number of control steps `K`.
    pub steps: usize,
    /// Time before which the barrier should not turn negative. Reporting only.
    pub t_acc: f64,
    pub start: Point,
    pub target: Intent,
    pub domain: IntentDomain,
    pub filter: FilterConfig,
    pub observation: ObservationModel,
    pub representation: IntentRepresentation,
    pub barrier: BarrierConfig,
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub particles: usize,
    /// Resampling threshold `N0`.
    pub n0: usize,
    /// Error covariance of fresh particles.
    pub init_cov: f64,
    #[serde(default = "default_prior_samples")]
    pub prior_mc_samples: usize,
}

fn default_prior_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub rho0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceModel {
    None,
    #[default]
    UniformBall,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub model: DisturbanceModel,
    /// Used by the constant model.
    #[serde(default)]
    pub vector: Option<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Largest blend allowed by the envelope and the barrier budget.
    #[default]
    Privacy,
    /// `mu = 0`.
    Tracking,
    /// `min(mu, mu_max)` with a configured `mu`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::Privacy,
            mu: None,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    /// Samples for the Monte Carlo leakage estimate; 0 disables it.
    #[serde(default)]
    pub kl_samples: usize,
    /// Record the estimate every this many steps; 0 computes it only for
    /// the initial and final state.
    #[serde(default)]
    pub kl_every: usize,
    /// Keep a filter snapshot every this many steps; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
    /// Turning this off makes observations exact (testing aid).
    #[serde(default = "yes")]
    pub observation_noise: bool,
}

fn yes() -> bool {
    true
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            kl_samples: 0,
            kl_every: 0,
            snapshot_every: 0,
            observation_noise: true,
        }
    }
}

impl SimConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: SimConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.into(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.into(),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The planar scenario shipped as `configs/basic.toml`.
    pub fn example() -> Self {
        SimConfig {
            seed: 7,
            steps: 200,
            t_acc: 10.0,
            start: vec![-5.0, -3.0],
            target: Intent::new(vec![6.0, 3.0], 1.0, 10.0),
            domain: IntentDomain {
                dim: 2,
                workspace_radius: 10.0,
                r_min: 0.5,
                r_max: 2.0,
                t_min: 10.0,
                t_max: 30.0,
            },
            filter: FilterConfig {
                particles: 500,
                n0: 250,
                init_cov: 0.25,
                prior_mc_samples: default_prior_samples(),
            },
            observation: ObservationModel {
                obs_std: 0.5,
                process_scale: 1.0,
                dbar: 0.5,
                dt: 0.1,
                jitter: Default::default(),
            },
            representation: IntentRepresentation {
                sigma_x: 1.0,
                sigma_r: 0.5,
                sigma_t: 2.0,
            },
            barrier: BarrierConfig {
                gamma: 0.0,
                beta: 10.0,
                delta1: 0.05,
                delta2: 0.3,
                epsilon: 0.1,
                horizon: 200,
            },
            envelope: EnvelopeConfig { rho0: 0.3 },
            disturbance: DisturbanceConfig::default(),
            controller: ControllerConfig::default(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.observation.validate()?;
        self.representation.validate()?;
        self.barrier.validate()?;
        let dim = self.dim();
        if !self.domain.contains(&self.target) {
            return Err(Error::Config(format!(
                "target {:?} outside the intent domain",
                self.target
            )));
        }
        if !self.domain.in_workspace(&self.start) {
            return Err(Error::Config(format!(
                "start {:?} outside the workspace",
                self.start
            )));
        }
        self.envelope_spec()?;
        let f = &self.filter;
        if f.particles == 0 || f.n0 == 0 || f.n0 > f.particles {
            return Err(Error::Config(format!(
                "need 1 <= n0 <= particles, got n0={} particles={}",
                f.n0, f.particles
            )));
        }
        if !(f.init_cov >= 0.0) || f.prior_mc_samples == 0 {
            return Err(Error::Config(
                "init_cov must be >= 0 and prior_mc_samples >= 1".into(),
            ));
        }
        if self.steps as f64 * self.observation.dt > self.domain.t_max * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "steps * dt = {} exceeds the longest arrival time {}",
                self.steps as f64 * self.observation.dt,
                self.domain.t_max
            )));
        }
        if self.disturbance.model == DisturbanceModel::Constant {
            match &self.disturbance.vector {
                Some(d)
                    if d.len() == dim && geom::norm(d) <= self.observation.dbar * (1.0 + 1e-12) => {
                }
                _ => {
                    return Err(Error::Config(format!(
                        "constant disturbance needs a {dim}-vector with norm <= dbar = {}",
                        self.observation.dbar
                    )))
                }
            }
        }
        if self.controller.mode == ControlMode::Fixed {
            match self.controller.mu {
                Some(mu) if (0.0..=1.0).contains(&mu) => {}
                _ => {
                    return Err(Error::Config(
                        "fixed controller mode needs mu in [0, 1]".into(),
                    ))
                }
            }
        }
        if !(self.controller.margin >= 0.0) {
            return Err(Error::Config("controller margin must be >= 0".into()));
        }
        if self.diagnostics.kl_samples != 0 && self.diagnostics.kl_samples < 1000 {
            return Err(Error::Config(
                "kl_samples must be 0 or at least 1000".into(),
            ));
        }
        Ok(())
    }

    pub fn envelope_spec(&self) -> Result<EnvelopeSpec> {
        EnvelopeSpec::affine(self.envelope.rho0, &self.target)
    }

    pub fn prior(&self) -> ReinitDistribution {
        ReinitDistribution::new(
            self.domain.clone(),
            self.observation.dbar,
            self.filter.init_cov,
        )
    }
}
