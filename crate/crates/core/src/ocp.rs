//! Finite-horizon discounted optimal control problems.
//!
//! The cost functional is `J(x0, u) = sum_k w(k, N) l(x_k, u_k)` for a
//! discount profile `w`. Graph models are solved exactly by backward
//! dynamic programming; smooth models by direct single shooting over the
//! stacked input vector with adjoint gradients, input boxes handled by
//! projection and state boxes plus domain guards by an augmented
//! Lagrangian.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discount::DiscountProfile;
use crate::error::{Error, Result};
use crate::model::{GraphModel, Input, SmoothModel, State, SystemModel, Trajectory};
use crate::nlp::{augmented_lagrangian, projected_gradient, AlOptions, AlState, BoxBounds, PgOptions};

/// Tolerances and search effort for the smooth solver.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Projected-gradient stationarity tolerance.
    pub tol_stat: f64,
    /// Maximum constraint violation accepted as feasible.
    pub tol_feas: f64,
    /// Inner iteration cap per augmented-Lagrangian round.
    pub max_iter: usize,
    /// Number of additional uniform-random input starts.
    pub multistart: usize,
    pub seed: u64,
    /// Outer augmented-Lagrangian rounds.
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub armijo_c: f64,
    /// Include a start that holds the state at `x0` when such an input
    /// exists inside the input box. Economic problems routinely have
    /// "remain here" local optima that gradient descent from zero or
    /// random inputs does not find.
    pub stay_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_stat: 1e-8,
            tol_feas: 1e-8,
            max_iter: 4000,
            multistart: 0,
            seed: 0,
            max_outer: 12,
            penalty_init: 10.0,
            penalty_growth: 4.0,
            armijo_c: 1e-4,
            stay_start: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "maxiter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

/// Solution of one finite-horizon problem.
#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub inputs: Vec<Input>,
    pub traj: Trajectory,
    /// Discounted cost of `inputs` under the model's stage cost.
    pub value: f64,
    /// Same cost under the nonnegativity-shifted stage cost the solver
    /// works with internally.
    pub value_shifted: f64,
    pub status: SolveStatus,
    pub stationarity_residual: f64,
    pub iterations: usize,
}

/// Problem statement handed to [`solve`].
#[derive(Clone, Debug)]
pub struct OcpSpec<'a> {
    pub model: &'a SystemModel,
    pub x0: State,
    pub horizon: usize,
    pub discount: DiscountProfile,
    pub warm_start: Option<Vec<Input>>,
    pub opts: SolverOptions,
}

impl<'a> OcpSpec<'a> {
    pub fn new(model: &'a SystemModel, x0: State, horizon: usize, discount: DiscountProfile) -> Self {
        OcpSpec { model, x0, horizon, discount, warm_start: None, opts: SolverOptions::default() }
    }

    pub fn with_warm_start(mut self, warm: Vec<Input>) -> Self {
        self.warm_start = Some(warm);
        self
    }

    pub fn with_options(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }
}

/// Discounted cost of the first `t` stages of `u` under a horizon-`n`
/// weight profile, `t <= n`. With the constant profile this is the plain
/// accumulated cost.
pub fn evaluate_cost(
    model: &SystemModel,
    x0: &State,
    u: &[Input],
    discount: &DiscountProfile,
    t: usize,
    n: usize,
) -> Result<f64> {
    if t > n {
        return Err(Error::InvalidArgument(format!("t = {t} exceeds horizon n = {n}")));
    }
    if u.len() < t {
        return Err(Error::InvalidArgument(format!(
            "input sequence of length {} too short for t = {t}",
            u.len()
        )));
    }
    let mut total = 0.0;
    let mut x = x0.clone();
    for (k, uk) in u.iter().take(t).enumerate() {
        let w = discount.weight(k, n)?;
        total += w * model.stage_cost(&x, uk)?;
        x = model.step(&x, uk)?;
    }
    Ok(total)
}

/// Stage-indexed value table of a finite-graph problem: `values[k][s]` is
/// the optimal cost-to-go from state `s` at stage `k`, with the convention
/// `values[N][s] = 0`. Unreachable combinations hold `+inf`.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

/// Exact solution of the graph OCP by backward dynamic programming.
///
/// Ties between transitions are broken in declaration order, which makes
/// the returned input sequence deterministic.
pub fn solve_dp_finite(
    graph: &GraphModel,
    x0: usize,
    horizon: usize,
    discount: &DiscountProfile,
) -> Result<(OcpSolution, ValueTable)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if x0 >= graph.states.len() {
        return Err(Error::UnknownState(format!("#{x0}")));
    }
    let n_states = graph.states.len();
    let weights = discount.weights(horizon)?;
    let mut values = vec![vec![f64::INFINITY; n_states]; horizon + 1];
    let mut policy = vec![vec![usize::MAX; n_states]; horizon];
    for v in &mut values[horizon] {
        *v = 0.0;
    }
    for k in (0..horizon).rev() {
        for s in 0..n_states {
            let mut best = f64::INFINITY;
            let mut best_t = usize::MAX;
            for &t_idx in graph.outgoing(s) {
                let t = &graph.transitions[t_idx];
                let v = weights[k] * t.cost + values[k + 1][t.to];
                // strict improvement only: earliest declared transition wins ties
                if v < best {
                    best = v;
                    best_t = t_idx;
                }
            }
            values[k][s] = best;
            policy[k][s] = best_t;
        }
    }

    let table = ValueTable { values };
    if !table.values[0][x0].is_finite() {
        let sol = OcpSolution {
            inputs: Vec::new(),
            traj: Trajectory { states: vec![State::Node(x0)], inputs: Vec::new() },
            value: f64::INFINITY,
            value_shifted: f64::INFINITY,
            status: SolveStatus::Infeasible,
            stationarity_residual: 0.0,
            iterations: horizon,
        };
        return Ok((sol, table));
    }

    let mut inputs = Vec::with_capacity(horizon);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut s = x0;
    states.push(State::Node(s));
    for stage_policy in policy.iter().take(horizon) {
        let t = &graph.transitions[stage_policy[s]];
        inputs.push(Input::Node(t.input));
        s = t.to;
        states.push(State::Node(s));
    }
    let value = table.values[0][x0];
    let floor = graph.transitions.iter().map(|t| t.cost).fold(f64::INFINITY, f64::min);
    let value_shifted = value - floor * discount.weight_sum(horizon);
    let sol = OcpSolution {
        traj: Trajectory { states, inputs: inputs.clone() },
        inputs,
        value,
        value_shifted,
        status: SolveStatus::Optimal,
        stationarity_residual: 0.0,
        iterations: horizon,
    };
    Ok((sol, table))
}

/// Single-shooting workspace for one smooth problem instance.
struct Shooting<'a> {
    model: &'a SmoothModel,
    x0: Vec<f64>,
    horizon: usize,
    weights: Vec<f64>,
    n: usize,
    m: usize,
    n_box: usize,
    n_guard: usize,
}

impl<'a> Shooting<'a> {
    fn new(model: &'a SmoothModel, x0: Vec<f64>, horizon: usize, weights: Vec<f64>) -> Self {
        let n = model.state_dim;
        let m = model.input_dim;
        let n_box = horizon * 2 * n;
        let n_guard = if model.has_guard() { horizon } else { 0 };
        Shooting { model, x0, horizon, weights, n, m, n_box, n_guard }
    }

    fn n_ineq(&self) -> usize {
        self.n_box + self.n_guard
    }

    /// States `x_0..x_N` written contiguously into `xs`.
    fn rollout(&self, z: &[f64], xs: &mut Vec<f64>) {
        xs.clear();
        xs.extend_from_slice(&self.x0);
        for k in 0..self.horizon {
            let x = xs[k * self.n..(k + 1) * self.n].to_vec();
            let u = &z[k * self.m..(k + 1) * self.m];
            let next = self.model.dynamics(&x, u);
            xs.extend_from_slice(&next);
        }
    }

    /// Shifted cost of stage `k`; `+inf` when undefined.
    fn stage_value(&self, x: &[f64], u: &[f64]) -> f64 {
        if let Some(g) = self.model.guard_value(x, u) {
            if !(g > 0.0) {
                return f64::INFINITY;
            }
        }
        let c = self.model.cost_raw(x, u) - self.model.cost_floor;
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    }

    /// Bare shifted objective without penalty terms.
    fn objective_raw(&self, z: &[f64], xs: &mut Vec<f64>) -> f64 {
        self.rollout(z, xs);
        let mut total = 0.0;
        for k in 0..self.horizon {
            let x = &xs[k * self.n..(k + 1) * self.n];
            let u = &z[k * self.m..(k + 1) * self.m];
            let v = self.stage_value(x, u);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += self.weights[k] * v;
        }
        total
    }

    /// Inequality constraint values, layout: state boxes for stages
    /// `1..=N` (two per component), then domain-guard deficits.
    fn constraints(&self, z: &[f64], xs: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.rollout(z, xs);
        out.clear();
        for k in 1..=self.horizon {
            let x = &xs[k * self.n..(k + 1) * self.n];
            for i in 0..self.n {
                out.push(x[i] - self.model.x_hi[i]);
                out.push(self.model.x_lo[i] - x[i]);
            }
        }
        if self.model.has_guard() {
            for k in 0..self.horizon {
                let x = &xs[k * self.n..(k + 1) * self.n];
                let u = &z[k * self.m..(k + 1) * self.m];
                let g = self.model.guard_value(x, u).unwrap();
                out.push(self.model.guard_margin - g);
            }
        }
    }

    fn penalized_objective(&self, z: &[f64], st: &AlState, xs: &mut Vec<f64>) -> f64 {
        self.rollout(z, xs);
        let mut total = 0.0;
        for k in 0..self.horizon {
            let x = &xs[k * self.n..(k + 1) * self.n];
            let u = &z[k * self.m..(k + 1) * self.m];
            let v = self.stage_value(x, u);
            if !v.is_finite() {
                return f64::INFINITY;
            }
            total += self.weights[k] * v;
            if self.model.has_guard() {
                let g = self.model.guard_value(x, u).unwrap();
                let mu = st.ineq_mult[self.n_box + k];
                total += AlState::ineq_term(self.model.guard_margin - g, mu, st.penalty);
            }
        }
        for k in 1..=self.horizon {
            let x = &xs[k * self.n..(k + 1) * self.n];
            let base = (k - 1) * 2 * self.n;
            for i in 0..self.n {
                total += AlState::ineq_term(
                    x[i] - self.model.x_hi[i],
                    st.ineq_mult[base + 2 * i],
                    st.penalty,
                );
                total += AlState::ineq_term(
                    self.model.x_lo[i] - x[i],
                    st.ineq_mult[base + 2 * i + 1],
                    st.penalty,
                );
            }
        }
        total
    }

    /// Gradient of the penalized objective by one backward (adjoint) sweep.
    fn penalized_gradient(&self, z: &[f64], st: &AlState, xs: &mut Vec<f64>, grad: &mut [f64]) {
        self.rollout(z, xs);
        let n = self.n;
        let m = self.m;
        // costate at the terminal stage: box penalties on x_N
        let mut costate = vec![0.0; n];
        let x_term = &xs[self.horizon * n..(self.horizon + 1) * n];
        let base = (self.horizon - 1) * 2 * n;
        for i in 0..n {
            costate[i] += AlState::ineq_slope(
                x_term[i] - self.model.x_hi[i],
                st.ineq_mult[base + 2 * i],
                st.penalty,
            );
            costate[i] -= AlState::ineq_slope(
                self.model.x_lo[i] - x_term[i],
                st.ineq_mult[base + 2 * i + 1],
                st.penalty,
            );
        }
        for k in (0..self.horizon).rev() {
            let x = xs[k * n..(k + 1) * n].to_vec();
            let u = &z[k * m..(k + 1) * m];
            let (fx, fu) = self.model.dynamics_jacobians(&x, u);
            let (lx, lu) = self.model.cost_gradient(&x, u);
            let mut gx: Vec<f64> = lx.iter().map(|v| v * self.weights[k]).collect();
            let mut gu: Vec<f64> = lu.iter().map(|v| v * self.weights[k]).collect();
            if self.model.has_guard() {
                let g = self.model.guard_value(&x, u).unwrap();
                let slope = AlState::ineq_slope(
                    self.model.guard_margin - g,
                    st.ineq_mult[self.n_box + k],
                    st.penalty,
                );
                if slope != 0.0 {
                    let (ggx, ggu) = self.model.guard_gradient(&x, u).unwrap();
                    for i in 0..n {
                        gx[i] -= slope * ggx[i];
                    }
                    for i in 0..m {
                        gu[i] -= slope * ggu[i];
                    }
                }
            }
            // input gradient: stage term + dynamics pullback of the costate
            for j in 0..m {
                let mut acc = gu[j];
                for i in 0..n {
                    acc += fu[i * m + j] * costate[i];
                }
                grad[k * m + j] = acc;
            }
            // costate recursion
            let mut new_costate = gx;
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += fx[i * n + j] * costate[i];
                }
                new_costate[j] += acc;
            }
            if k >= 1 {
                let x_cur = &xs[k * n..(k + 1) * n];
                let base = (k - 1) * 2 * n;
                for i in 0..n {
                    new_costate[i] += AlState::ineq_slope(
                        x_cur[i] - self.model.x_hi[i],
                        st.ineq_mult[base + 2 * i],
                        st.penalty,
                    );
                    new_costate[i] -= AlState::ineq_slope(
                        self.model.x_lo[i] - x_cur[i],
                        st.ineq_mult[base + 2 * i + 1],
                        st.penalty,
                    );
                }
            }
            costate = new_costate;
        }
    }
}

/// Finds an input that holds `x0` fixed, if one exists inside the input
/// box: minimizes `|f(x0, u) - x0|^2` by projected gradient.
pub fn fixed_point_input(model: &SmoothModel, x0: &[f64]) -> Option<Vec<f64>> {
    let m = model.input_dim;
    if m == 0 {
        return None;
    }
    let bounds = BoxBounds { lo: model.u_lo.clone(), hi: model.u_hi.clone() };
    let mut start = vec![0.0; m];
    bounds.project(&mut start);
    let residual = |u: &[f64]| -> f64 {
        let fx = model.dynamics(x0, u);
        fx.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let res = projected_gradient(
        &start,
        &bounds,
        residual,
        |u, g| {
            let fx = model.dynamics(x0, u);
            let (_, fu) = model.dynamics_jacobians(x0, u);
            for j in 0..m {
                let mut acc = 0.0;
                for i in 0..model.state_dim {
                    acc += 2.0 * (fx[i] - x0[i]) * fu[i * m + j];
                }
                g[j] = acc;
            }
        },
        &PgOptions { tol_stat: 1e-13, max_iter: 500, armijo_c: 1e-4 },
    );
    if res.value <= 1e-16 {
        Some(res.z)
    } else {
        None
    }
}

fn candidate_starts(
    model: &SmoothModel,
    x0: &[f64],
    horizon: usize,
    warm: Option<&[Input]>,
    opts: &SolverOptions,
) -> Vec<Vec<f64>> {
    let m = model.input_dim;
    let bounds = BoxBounds { lo: model.u_lo.repeat(horizon), hi: model.u_hi.repeat(horizon) };
    let mut starts = Vec::new();
    if let Some(w) = warm {
        if w.iter().all(|u| matches!(u, Input::Vector(_))) {
            let mut z = Vec::with_capacity(horizon * m);
            for u in w.iter().take(horizon) {
                if let Input::Vector(v) = u {
                    z.extend_from_slice(v);
                }
            }
            while z.len() < horizon * m {
                z.push(0.0);
            }
            bounds.project(&mut z);
            starts.push(z);
        }
    }
    let mut zeros = vec![0.0; horizon * m];
    bounds.project(&mut zeros);
    starts.push(zeros.clone());
    if opts.stay_start {
        if let Some(hold) = fixed_point_input(model, x0) {
            starts.push(hold.repeat(horizon));
        }
    }
    if opts.multistart > 0 {
        let finite = model.u_lo.iter().chain(&model.u_hi).all(|v| v.is_finite());
        if finite {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for _ in 0..opts.multistart {
                let mut z = Vec::with_capacity(horizon * m);
                for _ in 0..horizon {
                    for j in 0..m {
                        z.push(rng.gen_range(model.u_lo[j]..=model.u_hi[j]));
                    }
                }
                starts.push(z);
            }
        }
    }
    starts
}

/// Solves the smooth OCP by multistart single shooting. The best feasible
/// local solution wins; ties go to the earlier start.
pub fn solve_smooth(
    model: &SmoothModel,
    x0: &[f64],
    horizon: usize,
    discount: &DiscountProfile,
    warm_start: Option<&[Input]>,
    opts: &SolverOptions,
) -> Result<OcpSolution> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if x0.len() != model.state_dim {
        return Err(Error::DimensionMismatch(format!(
            "x0 has dimension {}, expected {}",
            x0.len(),
            model.state_dim
        )));
    }
    let weights = discount.weights(horizon)?;
    let shoot = Shooting::new(model, x0.to_vec(), horizon, weights);
    let bounds = BoxBounds { lo: model.u_lo.repeat(horizon), hi: model.u_hi.repeat(horizon) };
    let al_opts = AlOptions {
        tol_feas: opts.tol_feas,
        max_outer: opts.max_outer,
        penalty_init: opts.penalty_init,
        penalty_growth: opts.penalty_growth,
        pg: PgOptions { tol_stat: opts.tol_stat, max_iter: opts.max_iter, armijo_c: opts.armijo_c },
    };

    let mut starts = candidate_starts(model, x0, horizon, warm_start, opts);
    // repair starts whose rollout leaves the cost domain
    {
        let mut xs = Vec::new();
        for z in &mut starts {
            let mut tries = 0;
            while !shoot.objective_raw(z, &mut xs).is_finite() && tries < 12 {
                let zeros = bounds.projected(&vec![0.0; z.len()]);
                for (zi, z0) in z.iter_mut().zip(&zeros) {
                    *zi = 0.5 * *zi + 0.5 * z0;
                }
                tries += 1;
            }
        }
    }

    struct Candidate {
        z: Vec<f64>,
        objective: f64,
        stationarity: f64,
        violation: f64,
        iterations: usize,
        converged: bool,
    }

    let run_al = |z0: &[f64], al: &AlOptions| -> Candidate {
        let mut xs_f = Vec::new();
        let mut xs_g = Vec::new();
        let mut xs_c = Vec::new();
        let res = augmented_lagrangian(
            z0,
            &bounds,
            shoot.n_ineq(),
            0,
            |z, st| shoot.penalized_objective(z, st, &mut xs_f),
            |z, st, g| shoot.penalized_gradient(z, st, &mut xs_g, g),
            |z, ineq, _eq| shoot.constraints(z, &mut xs_c, ineq),
            al,
        );
        let mut xs = Vec::new();
        let objective = shoot.objective_raw(&res.z, &mut xs);
        Candidate {
            z: res.z,
            objective,
            stationarity: res.stationarity,
            violation: res.violation,
            iterations: res.iterations,
            converged: res.converged,
        }
    };

    // Screening pass: two cheap penalty rounds per start, then full solves
    // only for starts whose screened value is anywhere near the best. The
    // margin is far wider than the value gaps that separate competing
    // local solutions worth comparing, so screening only drops starts that
    // lost by a wide margin.
    let full_indices: Vec<usize> = if starts.len() > 2 {
        let preview_opts = AlOptions {
            pg: PgOptions { max_iter: 400, ..al_opts.pg },
            max_outer: 2,
            ..al_opts
        };
        let previews: Vec<(f64, f64)> = starts
            .par_iter()
            .map(|z0| {
                let c = run_al(z0, &preview_opts);
                (c.objective, c.violation)
            })
            .collect();
        let score = |(obj, viol): (f64, f64)| -> f64 {
            if !obj.is_finite() {
                return f64::INFINITY;
            }
            obj + 1e6 * (viol - 1e-3).max(0.0)
        };
        let best = previews.iter().map(|p| score(*p)).fold(f64::INFINITY, f64::min);
        let margin = 0.05 * (1.0 + best.abs());
        previews
            .iter()
            .enumerate()
            .filter(|(i, p)| *i == 0 || score(**p) <= best + margin)
            .map(|(i, _)| i)
            .collect()
    } else {
        (0..starts.len()).collect()
    };

    let candidates: Vec<Candidate> = full_indices
        .par_iter()
        .map(|&i| run_al(&starts[i], &al_opts))
        .collect();

    let feasible_best = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.violation <= opts.tol_feas && c.objective.is_finite())
        .min_by(|(ia, a), (ib, b)| a.objective.total_cmp(&b.objective).then(ia.cmp(ib)));
    let (chosen, status) = match feasible_best {
        Some((i, _)) => {
            let c = &candidates[i];
            let status = if c.converged { SolveStatus::Optimal } else { SolveStatus::MaxIter };
            (i, status)
        }
        None => {
            let (i, _) = candidates
                .iter()
                .enumerate()
                .min_by(|(ia, a), (ib, b)| a.violation.total_cmp(&b.violation).then(ia.cmp(ib)))
                .ok_or_else(|| Error::Infeasible("no start available".into()))?;
            (i, SolveStatus::Infeasible)
        }
    };
    let best = &candidates[chosen];
    let total_iterations: usize = candidates.iter().map(|c| c.iterations).sum();

    let m = model.input_dim;
    let inputs: Vec<Input> = (0..horizon)
        .map(|k| Input::Vector(best.z[k * m..(k + 1) * m].to_vec()))
        .collect();
    let mut xs = Vec::new();
    shoot.rollout(&best.z, &mut xs);
    let states: Vec<State> = (0..=horizon)
        .map(|k| State::Vector(xs[k * model.state_dim..(k + 1) * model.state_dim].to_vec()))
        .collect();
    // unshifted value, tolerating the feasibility slack the solver allows
    let mut value = 0.0;
    for k in 0..horizon {
        let x = &xs[k * model.state_dim..(k + 1) * model.state_dim];
        let u = &best.z[k * m..(k + 1) * m];
        value += shoot.weights[k] * model.cost_raw(x, u);
    }
    let value_shifted = value - model.cost_floor * discount.weight_sum(horizon);
    Ok(OcpSolution {
        inputs: inputs.clone(),
        traj: Trajectory { states, inputs },
        value,
        value_shifted,
        status,
        stationarity_residual: best.stationarity,
        iterations: total_iterations,
    })
}

/// Solves the OCP for either model variant.
pub fn solve(spec: &OcpSpec) -> Result<OcpSolution> {
    match spec.model {
        SystemModel::FiniteGraph(g) => {
            let x0 = match &spec.x0 {
                State::Node(s) => *s,
                State::Vector(_) => {
                    return Err(Error::DimensionMismatch(
                        "graph model needs a node state".into(),
                    ))
                }
            };
            Ok(solve_dp_finite(g, x0, spec.horizon, &spec.discount)?.0)
        }
        SystemModel::Smooth(m) => {
            let x0 = spec
                .x0
                .as_vector()
                .ok_or_else(|| Error::DimensionMismatch("smooth model needs a vector state".into()))?;
            solve_smooth(m, x0, spec.horizon, &spec.discount, spec.warm_start.as_deref(), &spec.opts)
        }
    }
}

/// Residual of the one-step dynamic-programming identity
/// `V_N(x) = l(x, u*(0)) + c_N V_{N-1}(f(x, u*(0)))`,
/// where `c_N` is the profile's tail factor. The horizon-`N-1` solve is
/// warm started from the tail of the horizon-`N` solution so both solves
/// describe the same local branch.
pub fn dpp_residual(
    model: &SystemModel,
    x0: &State,
    horizon: usize,
    discount: &DiscountProfile,
    opts: &SolverOptions,
) -> Result<f64> {
    let factor = discount.dpp_factor(horizon).ok_or_else(|| {
        Error::InvalidArgument("discount profile has no horizon recursion".into())
    })?;
    let spec = OcpSpec {
        model,
        x0: x0.clone(),
        horizon,
        discount: discount.clone(),
        warm_start: None,
        opts: opts.clone(),
    };
    let sol = solve(&spec)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("horizon-N problem infeasible".into()));
    }
    let u0 = sol.inputs[0].clone();
    let stage = model.stage_cost(x0, &u0)?;
    let x1 = model.step(x0, &u0)?;
    let tail_value = if horizon == 1 {
        0.0
    } else {
        let tail: Vec<Input> = sol.inputs[1..].to_vec();
        let spec_tail = OcpSpec {
            model,
            x0: x1,
            horizon: horizon - 1,
            discount: discount.clone(),
            warm_start: Some(tail),
            opts: opts.clone(),
        };
        let sol_tail = solve(&spec_tail)?;
        if sol_tail.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible("horizon-(N-1) problem infeasible".into()));
        }
        sol_tail.value
    };
    Ok((sol.value - stage - factor * tail_value).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    /// Every feasible input sequence of length `n` from `s`, as transition
    /// index sequences, in lexicographic declaration order.
    fn enumerate_paths(g: &GraphModel, s: usize, n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for &t_idx in g.outgoing(s) {
            let t = &g.transitions[t_idx];
            for mut tail in enumerate_paths(g, t.to, n - 1) {
                let mut path = vec![t_idx];
                path.append(&mut tail);
                out.push(path);
            }
        }
        out
    }

    /// Exhaustive-enumeration oracle. Sums are accumulated back to front so
    /// exact equality with the backward recursion is meaningful.
    fn brute_force(
        g: &GraphModel,
        x0: usize,
        n: usize,
        discount: &DiscountProfile,
    ) -> Option<(f64, Vec<usize>)> {
        let weights = discount.weights(n).unwrap();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for path in enumerate_paths(g, x0, n) {
            let mut cost = 0.0;
            for (k, &t_idx) in path.iter().enumerate().rev() {
                cost = weights[k] * g.transitions[t_idx].cost + cost;
            }
            let inputs: Vec<usize> = path.iter().map(|&t| g.transitions[t].input).collect();
            match &best {
                Some((c, _)) if *c <= cost => {}
                _ => best = Some((cost, inputs)),
            }
        }
        best
    }

    fn graph_inputs(sol: &OcpSolution) -> Vec<usize> {
        sol.inputs
            .iter()
            .map(|u| match u {
                Input::Node(i) => *i,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn move_vs_wait_costs_match_known_values() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        let x0 = g.state("-1").unwrap();
        // strategy 1 moves immediately, strategy 2 waits one step
        let s1 = vec![
            g.input("0").unwrap(),
            g.input("1").unwrap(),
            g.input("0").unwrap(),
            g.input("1").unwrap(),
        ];
        let s2 = vec![
            g.input("-1").unwrap(),
            g.input("0").unwrap(),
            g.input("1").unwrap(),
            g.input("0").unwrap(),
        ];
        let lin = DiscountProfile::Linear;
        let j1 = evaluate_cost(&p.model, &x0, &s1, &lin, 2, 2).unwrap();
        let j2 = evaluate_cost(&p.model, &x0, &s2, &lin, 2, 2).unwrap();
        assert!((j1 - 1.0).abs() < 1e-15);
        assert!((j2 - 1.5).abs() < 1e-15);
        assert!((j1 - j2 + 0.5).abs() < 1e-15);

        let j1 = evaluate_cost(&p.model, &x0, &s1, &lin, 3, 3).unwrap();
        let j2 = evaluate_cost(&p.model, &x0, &s2, &lin, 3, 3).unwrap();
        assert!((j1 - j2 + 1.0 / 6.0).abs() < 1e-12);

        assert_eq!(evaluate_cost(&p.model, &x0, &s1, &lin, 0, 5).unwrap(), 0.0);
    }

    #[test]
    fn dp_examples_from_the_motivating_system() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        let x0 = g.state_index("-1").unwrap();

        let (sol, table) = solve_dp_finite(g, x0, 2, &DiscountProfile::Linear).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let labels: Vec<&str> =
            graph_inputs(&sol).iter().map(|&i| g.inputs[i].label.as_str()).collect();
        assert_eq!(labels, ["0", "1"]);
        assert!((sol.value - 1.0).abs() < 1e-15);
        assert_eq!(table.horizon(), 2);

        // odd undiscounted horizons prefer waiting
        let (sol, _) = solve_dp_finite(g, x0, 3, &DiscountProfile::Constant).unwrap();
        let first = graph_inputs(&sol)[0];
        assert_eq!(g.inputs[first].label, "-1");
        assert!((sol.value - 2.0).abs() < 1e-15);

        let x0 = g.state_index("0").unwrap();
        let (sol, _) = solve_dp_finite(g, x0, 1, &DiscountProfile::Linear).unwrap();
        assert_eq!(g.inputs[graph_inputs(&sol)[0]].label, "1");
        assert_eq!(sol.value, 0.0);
    }

    #[test]
    fn dp_equals_exhaustive_enumeration_exactly() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        for discount in [DiscountProfile::Constant, DiscountProfile::Linear] {
            for x0 in 0..g.states.len() {
                for n in 1..=8 {
                    let (sol, _) = solve_dp_finite(g, x0, n, &discount).unwrap();
                    let (bf_value, bf_inputs) = brute_force(g, x0, n, &discount).unwrap();
                    assert_eq!(sol.value, bf_value, "x0={x0} n={n} {discount:?}");
                    assert_eq!(graph_inputs(&sol), bf_inputs, "x0={x0} n={n} {discount:?}");
                }
            }
        }
    }

    #[test]
    fn dp_value_table_satisfies_the_stage_recursion() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        let discount = DiscountProfile::Linear;
        let n = 7;
        let (_, table) = solve_dp_finite(g, 0, n, &discount).unwrap();
        let weights = discount.weights(n).unwrap();
        for k in 0..n {
            for s in 0..g.states.len() {
                let expect = g
                    .outgoing(s)
                    .iter()
                    .map(|&ti| {
                        let t = &g.transitions[ti];
                        weights[k] * t.cost + table.values[k + 1][t.to]
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(table.values[k][s], expect);
            }
        }
        assert!(table.values[n].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dpp_identity_exact_on_the_graph() {
        let p = presets::graph();
        let opts = SolverOptions::default();
        for discount in [DiscountProfile::Constant, DiscountProfile::Linear] {
            for s in 0..3 {
                for n in 1..=10 {
                    let r = dpp_residual(&p.model, &State::Node(s), n, &discount, &opts).unwrap();
                    assert!(r <= 1e-12, "state {s}, n {n}, {discount:?}: residual {r:e}");
                }
            }
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        for preset in [presets::oscillator(), presets::growth()] {
            let m = preset.model.as_smooth().unwrap();
            let n = 7;
            let weights = DiscountProfile::Linear.weights(n).unwrap();
            let x0 = preset.model.embed_state(&preset.x0);
            let shoot = Shooting::new(m, x0, n, weights);
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut st = crate::nlp::AlState::new(shoot.n_ineq(), 0, 37.0);
            for mu in st.ineq_mult.iter_mut() {
                *mu = rng.gen_range(0.0..0.3);
            }
            let dim = n * m.input_dim;
            for trial in 0..10 {
                let z: Vec<f64> = (0..dim)
                    .map(|j| {
                        let lo = m.u_lo[j % m.input_dim];
                        let hi = m.u_hi[j % m.input_dim];
                        // keep a margin so central differences stay in domain
                        let pad = 0.05 * (hi - lo);
                        rng.gen_range(lo + pad..hi - pad)
                    })
                    .collect();
                let mut xs = Vec::new();
                if !shoot.penalized_objective(&z, &st, &mut xs).is_finite() {
                    continue;
                }
                let mut grad = vec![0.0; dim];
                shoot.penalized_gradient(&z, &st, &mut xs, &mut grad);
                for j in 0..dim {
                    let h = 1e-6 * (1.0 + z[j].abs());
                    let mut zp = z.clone();
                    zp[j] += h;
                    let fp = shoot.penalized_objective(&zp, &st, &mut xs);
                    zp[j] = z[j] - h;
                    let fm = shoot.penalized_objective(&zp, &st, &mut xs);
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = grad[j].abs().max(fd.abs()).max(1e-3);
                    assert!(
                        (grad[j] - fd).abs() / denom < 1e-5,
                        "{}: trial {trial} component {j}: adjoint {} vs fd {}",
                        preset.name,
                        grad[j],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn fixed_point_inputs_exist_where_expected() {
        let osc = presets::oscillator();
        let m = osc.model.as_smooth().unwrap();
        let x0 = osc.model.embed_state(&osc.x0);
        let hold = fixed_point_input(m, &x0).expect("corner state has a hold input");
        let next = m.dynamics(&x0, &hold);
        for i in 0..2 {
            assert!((next[i] - x0[i]).abs() < 1e-8);
        }
        // the hold input saturates the input box corner
        assert!((hold[0] - (-0.1)).abs() < 1e-7, "hold = {hold:?}");
        assert!((hold[1] - 0.1).abs() < 1e-7);
        // a state too far out has none
        assert!(fixed_point_input(m, &[0.5, 0.5]).is_none());

        let gr = presets::growth();
        let mg = gr.model.as_smooth().unwrap();
        let hold = fixed_point_input(mg, &[2.2344]).unwrap();
        assert!((hold[0] - 2.2344).abs() < 1e-9);
    }
}
