//! Closed-loop simulation: drive a controller against its model and record
//! the visited states, applied inputs, stage costs, and per-step solver
//! diagnostics.

use crate::error::Result;
use crate::model::{Input, State, SystemModel};
use crate::mpc::{Controller, StepDiag};
use crate::ocp::{OcpSolution, SolveStatus};

/// Per-step record of what the controller did.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub status: SolveStatus,
    pub iterations: usize,
    pub stationarity_residual: f64,
    /// True when a stored plan was replayed instead of solving.
    pub reused_plan: bool,
    /// Full open-loop solution, kept only when requested.
    pub plan: Option<OcpSolution>,
}

/// Trace of one closed-loop run.
#[derive(Clone, Debug)]
pub struct ClosedLoopTrace {
    /// Visited states, length `T + 1` for a completed run.
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    pub stage_costs: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub feasible: bool,
    /// Step index at which the controller failed, if it did.
    pub halted_at: Option<usize>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Runs `controller` from `x0` for `t_sim` steps. A controller error at
/// step `k` truncates the trace there and marks it infeasible; it is not
/// propagated as an error so sweeps can record partial results.
pub fn run_closed_loop(
    model: &SystemModel,
    controller: &mut Controller,
    x0: &State,
    t_sim: usize,
    keep_plans: bool,
) -> Result<ClosedLoopTrace> {
    let mut states = Vec::with_capacity(t_sim + 1);
    let mut inputs = Vec::with_capacity(t_sim);
    let mut stage_costs = Vec::with_capacity(t_sim);
    let mut steps = Vec::with_capacity(t_sim);
    states.push(x0.clone());

    for k in 0..t_sim {
        let x = states.last().unwrap().clone();
        let (u, diag) = match controller.control_step(model, &x) {
            Ok(pair) => pair,
            Err(_) => {
                return Ok(ClosedLoopTrace {
                    states,
                    inputs,
                    stage_costs,
                    steps,
                    feasible: false,
                    halted_at: Some(k),
                });
            }
        };
        let cost = model.stage_cost(&x, &u)?;
        let next = model.step(&x, &u)?;
        let record = match &diag {
            StepDiag::Solved(sol) => StepRecord {
                status: sol.status,
                iterations: sol.iterations,
                stationarity_residual: sol.stationarity_residual,
                reused_plan: false,
                plan: keep_plans.then(|| sol.clone()),
            },
            StepDiag::ReusedPlan { .. } => StepRecord {
                status: SolveStatus::Optimal,
                iterations: 0,
                stationarity_residual: 0.0,
                reused_plan: true,
                plan: None,
            },
        };
        states.push(next);
        inputs.push(u);
        stage_costs.push(cost);
        steps.push(record);
    }
    Ok(ClosedLoopTrace {
        states,
        inputs,
        stage_costs,
        steps,
        feasible: true,
        halted_at: None,
    })
}
