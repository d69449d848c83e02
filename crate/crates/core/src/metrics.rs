//! Performance metrics and identity diagnostics for closed-loop traces and
//! open-loop plans.
//!
//! Besides the straightforward accumulated/average/transient cost numbers,
//! this module checks two structural identities that hold exactly (up to
//! floating-point noise) along any trajectory:
//!
//! * the rotated-cost decomposition, which rewrites the linearly
//!   discounted sum of `l(x,u) - l* + storage(x) - storage(f(x,u))` as the
//!   discounted cost minus `(N+1)/2 * l*` plus boundary storage terms, and
//! * the one-step dynamic-programming recursion of the value function
//!   (see [`crate::ocp::dpp_residual`]).

use crate::discount::DiscountProfile;
use crate::error::{Error, Result};
use crate::model::{Input, State, SystemModel};
use crate::ocp::{solve, OcpSolution, OcpSpec, SolveStatus, SolverOptions};
use crate::orbit::{distance, PeriodicOrbit};
use crate::simulate::ClosedLoopTrace;

/// Undiscounted sum of the first `t` stage costs of a trace.
pub fn accumulated_cost(trace: &ClosedLoopTrace, t: usize) -> Result<f64> {
    if t > trace.stage_costs.len() {
        return Err(Error::InvalidArgument(format!(
            "t = {t} exceeds trace length {}",
            trace.stage_costs.len()
        )));
    }
    Ok(trace.stage_costs[..t].iter().sum())
}

/// Mean of the final `p` stage costs: the asymptotic-average estimate once
/// the loop has settled into a `p`-periodic pattern.
pub fn aap_estimate(trace: &ClosedLoopTrace, p: usize) -> Result<f64> {
    if !trace.feasible {
        return Err(Error::Infeasible(
            "asymptotic average undefined for a halted trace".into(),
        ));
    }
    if p == 0 || p > trace.stage_costs.len() {
        return Err(Error::InvalidArgument(format!(
            "window p = {p} invalid for trace length {}",
            trace.stage_costs.len()
        )));
    }
    let tail = &trace.stage_costs[trace.stage_costs.len() - p..];
    Ok(tail.iter().sum::<f64>() / p as f64)
}

/// Mean over `T` in `[t_lo, t_hi]` of the excess accumulated cost
/// `J_T - T * optimal_avg_cost`.
pub fn transient_performance(
    trace: &ClosedLoopTrace,
    t_lo: usize,
    t_hi: usize,
    optimal_avg_cost: f64,
) -> Result<f64> {
    if t_lo > t_hi {
        return Err(Error::InvalidArgument(format!("invalid window [{t_lo}, {t_hi}]")));
    }
    if t_hi > trace.stage_costs.len() {
        return Err(Error::InvalidArgument(format!(
            "window end {t_hi} exceeds trace length {}",
            trace.stage_costs.len()
        )));
    }
    let mut total = 0.0;
    let mut running: f64 = trace.stage_costs[..t_lo].iter().sum();
    for t in t_lo..=t_hi {
        total += running - t as f64 * optimal_avg_cost;
        if t < t_hi {
            running += trace.stage_costs[t];
        }
    }
    Ok(total / (t_hi - t_lo + 1) as f64)
}

/// Number of open-loop plan points inside the `eps`-neighborhood of the
/// orbit, measured in the combined state/input distance.
pub fn turnpike_count(
    model: &SystemModel,
    plan: &OcpSolution,
    orbit: &PeriodicOrbit,
    eps: f64,
) -> usize {
    plan.inputs
        .iter()
        .enumerate()
        .filter(|(k, u)| distance(model, &plan.traj.states[*k], u, orbit) <= eps)
        .count()
}

/// Both evaluations of the rotated discounted cost along one trajectory.
#[derive(Clone, Debug)]
pub struct RotatedCost {
    /// Stage-wise sum of the discounted rotated stage cost.
    pub direct: f64,
    /// Boundary form: `J - (N+1)/2 * l* + storage(x0) - mean of storage
    /// along the tail`.
    pub via_identity: f64,
    pub residual: f64,
}

/// Evaluates the rotated cost of `(x0, u)` over horizon `n` with the
/// linear discount, both directly and through the boundary identity, and
/// reports their difference. The identity holds for *any* storage
/// function, which makes the residual a strong self-check of cost,
/// rollout, and weight computations.
pub fn rotated_cost(
    model: &SystemModel,
    storage: &dyn Fn(&State) -> f64,
    optimal_avg_cost: f64,
    x0: &State,
    u: &[Input],
    n: usize,
) -> Result<RotatedCost> {
    if u.len() < n {
        return Err(Error::InvalidArgument(format!(
            "need {n} inputs, got {}",
            u.len()
        )));
    }
    let discount = DiscountProfile::Linear;
    let traj = model.rollout(x0, &u[..n])?;
    let mut direct = 0.0;
    let mut plain = 0.0;
    for k in 0..n {
        let w = discount.weight(k, n)?;
        let stage = model.stage_cost(&traj.states[k], &traj.inputs[k])?;
        let rotated = stage - optimal_avg_cost + storage(&traj.states[k])
            - storage(&traj.states[k + 1]);
        direct += w * rotated;
        plain += w * stage;
    }
    let tail_mean: f64 =
        traj.states[1..=n].iter().map(|x| storage(x)).sum::<f64>() / n as f64;
    let via_identity = plain - (n as f64 + 1.0) / 2.0 * optimal_avg_cost + storage(x0) - tail_mean;
    Ok(RotatedCost { direct, via_identity, residual: (direct - via_identity).abs() })
}

/// Diagnostic for membership in the performance-bounded sublevel set: the
/// discounted value at `x`, recentred by `(N+1)/2 * l*` and the storage
/// bound, minus the constant `reach_steps * (cost_max - l*) + 2 *
/// storage_bound + l* * p_star` that reachability of the orbit in
/// `reach_steps` steps guarantees. Negative values suggest membership.
/// The bound presumes a nonnegative stage cost; shift first if needed.
#[allow(clippy::too_many_arguments)]
pub fn feasibility_margin(
    model: &SystemModel,
    storage: &dyn Fn(&State) -> f64,
    storage_bound: f64,
    optimal_avg_cost: f64,
    p_star: usize,
    cost_max: f64,
    x: &State,
    n: usize,
    reach_steps: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let spec = OcpSpec {
        model,
        x0: x.clone(),
        horizon: n,
        discount: DiscountProfile::Linear,
        warm_start: None,
        opts: opts.clone(),
    };
    let sol = solve(&spec)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("value function undefined at x".into()));
    }
    let lhs = sol.value - (n as f64 + 1.0) / 2.0 * optimal_avg_cost + storage(x) + storage_bound;
    let cap = reach_steps as f64 * (cost_max - optimal_avg_cost)
        + 2.0 * storage_bound
        + optimal_avg_cost * p_star as f64;
    Ok(lhs - cap)
}

/// Summary metrics of one closed-loop trace.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    /// `J_T` for `T = 0..=len`.
    pub accumulated: Vec<f64>,
    /// Mean of the last `p_star` stage costs.
    pub aap: f64,
    pub aap_gap: f64,
    /// Windowed transient performance.
    pub transient: f64,
    /// Per tested neighborhood size, the turnpike count of every kept plan.
    pub turnpike_counts: Vec<(f64, Vec<usize>)>,
    /// Rotated-cost identity residual along the trace with zero storage.
    pub rotated_residual: f64,
    /// One-step value recursion residual, when somebody computed it.
    pub dpp_residual: Option<f64>,
}

impl MetricsReport {
    pub fn from_trace(
        model: &SystemModel,
        trace: &ClosedLoopTrace,
        orbit: &PeriodicOrbit,
        eps_list: &[f64],
        optimal_avg_cost: f64,
        window: (usize, usize),
    ) -> Result<MetricsReport> {
        let len = trace.stage_costs.len();
        let mut accumulated = Vec::with_capacity(len + 1);
        let mut running = 0.0;
        accumulated.push(0.0);
        for c in &trace.stage_costs {
            running += c;
            accumulated.push(running);
        }
        let aap = aap_estimate(trace, orbit.period.min(len.max(1)))?;
        let transient = transient_performance(trace, window.0, window.1, optimal_avg_cost)?;
        let mut turnpike_counts = Vec::new();
        for &eps in eps_list {
            let counts: Vec<usize> = trace
                .steps
                .iter()
                .filter_map(|s| s.plan.as_ref())
                .map(|p| turnpike_count(model, p, orbit, eps))
                .collect();
            turnpike_counts.push((eps, counts));
        }
        let rotated_residual = if len >= 1 {
            rotated_cost(model, &|_| 0.0, optimal_avg_cost, &trace.states[0], &trace.inputs, len)?
                .residual
        } else {
            0.0
        };
        Ok(MetricsReport {
            accumulated,
            aap,
            aap_gap: aap - optimal_avg_cost,
            transient,
            turnpike_counts,
            rotated_residual,
            dpp_residual: None,
        })
    }
}
