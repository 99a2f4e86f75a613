//! Blended privacy/tracking control law and the choice of the blend value.
//!
//! The privacy input drives the next nominal position to the Chebyshev center
//! of the observer's estimates, the tracking input drives it to the reference
//! path. The blend `mu` is the largest value allowed by both the tracking
//! envelope and the barrier budget.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{self, Point};
use crate::intent::{self, Intent};
use crate::miniball;
use crate::rbpf::InfoState;

/// Default strict-inequality margin on the budget cap.
pub const DEFAULT_MARGIN: f64 = 1e-6;

/// Which constraint determined `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    /// Neither cap binds; `mu = 1`.
    Feasible,
    /// The envelope cap binds.
    EnvelopeBound,
    /// The barrier-budget cap binds.
    PcbfBound,
    /// No `mu` in `[0, mu_max]` meets the budget; `mu` minimizes the Bayes budget instead.
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(self) -> bool {
        self != Feasibility::Infeasible
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feasibility::Feasible => "feasible",
            Feasibility::EnvelopeBound => "envelope_bound",
            Feasibility::PcbfBound => "pcbf_bound",
            Feasibility::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub u_p: Point,
    pub u_tr: Point,
    pub u_b: Point,
    pub mu: f64,
    pub mu_max: f64,
    pub feasibility: Feasibility,
    /// Set when the envelope cannot absorb even the disturbance (`rho_next < dbar dt`).
    pub envelope_infeasible: bool,
}

/// Inputs reaching `center` and `x_ref_next` in one step, and their `mu`-blend.
pub fn blend(
    x_k: &[f64],
    center: &[f64],
    x_ref_next: &[f64],
    dt: f64,
    mu: f64,
) -> (Point, Point, Point) {
    let u_p: Point = center.iter().zip(x_k).map(|(c, x)| (c - x) / dt).collect();
    let u_tr: Point = x_ref_next
        .iter()
        .zip(x_k)
        .map(|(r, x)| (r - x) / dt)
        .collect();
    let u_b = geom::lerp(&u_p, &u_tr, mu);
    (u_p, u_tr, u_b)
}

/// Control inputs at state `z` with an explicit blend value. Feasibility
/// fields are left at `Feasible` with `mu_max = 1`.
pub fn control_inputs(
    z: &InfoState,
    x_k: &[f64],
    target: &Intent,
    start: &[f64],
    t_next: f64,
    dt: f64,
    mu: f64,
) -> Result<ControlDecision> {
    let center = miniball::chebyshev_center(&z.estimates())?.center;
    let x_ref = intent::reference_point(start, target, t_next);
    let (u_p, u_tr, u_b) = blend(x_k, &center, &x_ref, dt, mu);
    Ok(ControlDecision {
        u_p,
        u_tr,
        u_b,
        mu,
        mu_max: 1.0,
        feasibility: Feasibility::Feasible,
        envelope_infeasible: false,
    })
}

/// Envelope cap `min{1, (rho_next - dbar dt) / dist}`. The flag is set when
/// the numerator is negative.
pub fn mu_max(rho_next: f64, dbar: f64, dt: f64, dist: f64) -> (f64, bool) {
    let slack = rho_next - dbar * dt;
    if slack < 0.0 {
        return (0.0, true);
    }
    if dist == 0.0 {
        return (1.0, false);
    }
    ((slack / dist).min(1.0), false)
}

/// Largest `mu` in `[0, mu_max]` with `mu A1 + (1 - mu) B1 + delta_r < beta`.
pub fn select_mu(
    a1: f64,
    b1: f64,
    delta_r: f64,
    beta: f64,
    mu_max: f64,
    margin: f64,
) -> (f64, Feasibility) {
    let at_cap = if mu_max < 1.0 {
        Feasibility::EnvelopeBound
    } else {
        Feasibility::Feasible
    };
    // fallback minimizes the Bayes budget over [0, mu_max]
    let fallback = if a1 >= b1 { 0.0 } else { mu_max };
    if beta <= a1.min(b1) + delta_r {
        return (fallback, Feasibility::Infeasible);
    }
    if a1 > b1 {
        let cap = (beta - delta_r - b1) / (a1 - b1) - margin;
        if cap >= mu_max {
            (mu_max, at_cap)
        } else {
            (cap.max(0.0), Feasibility::PcbfBound)
        }
    } else if a1 == b1 {
        (mu_max, at_cap)
    } else {
        let lower = (b1 + delta_r - beta) / (b1 - a1);
        if mu_max > lower {
            (mu_max, at_cap)
        } else {
            (fallback, Feasibility::Infeasible)
        }
    }
}

/// Whether `mu` strictly satisfies the budget inequality.
pub fn budget_holds(a1: f64, b1: f64, delta_r: f64, beta: f64, mu: f64) -> bool {
    beta > a1.min(b1) + delta_r && mu * (a1 - b1) < beta - delta_r - b1
}

/// Full decision from precomputed quantities.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    x_k: &[f64],
    center: &[f64],
    x_ref_next: &[f64],
    rho_next: f64,
    dbar: f64,
    dt: f64,
    budget: (f64, f64, f64),
    beta: f64,
    margin: f64,
) -> ControlDecision {
    let (a1, b1, delta_r) = budget;
    let (cap, envelope_infeasible) = mu_max(rho_next, dbar, dt, geom::dist(x_ref_next, center));
    let (mu, feasibility) = select_mu(a1, b1, delta_r, beta, cap, margin);
    let (u_p, u_tr, u_b) = blend(x_k, center, x_ref_next, dt, mu);
    ControlDecision {
        u_p,
        u_tr,
        u_b,
        mu,
        mu_max: cap,
        feasibility,
        envelope_infeasible,
    }
}
