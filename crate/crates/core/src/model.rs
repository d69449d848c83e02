//! System models: dynamics, stage costs, and constraint sets.
//!
//! Two variants are supported. A [`GraphModel`] is a finite set of labeled
//! states with explicitly listed transitions, each carrying an input label
//! and a stage cost; labels have numeric embeddings so that distances to
//! orbits are well defined. A [`SmoothModel`] is a continuous-state system
//! given by closures for the dynamics and the stage cost, box constraints
//! on states and inputs, and an optional scalar domain guard that must stay
//! above a margin for the cost to be defined (e.g. the argument of a log).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A point of either state space: a node index of a graph model or a real
/// vector of a smooth model.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Node(usize),
    Vector(Vec<f64>),
}

impl State {
    pub fn vector(v: &[f64]) -> Self {
        State::Vector(v.to_vec())
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            State::Vector(v) => Some(v),
            State::Node(_) => None,
        }
    }
}

/// An input point, mirroring [`State`].
#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Node(usize),
    Vector(Vec<f64>),
}

impl Input {
    pub fn vector(v: &[f64]) -> Self {
        Input::Vector(v.to_vec())
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Input::Vector(v) => Some(v),
            Input::Node(_) => None,
        }
    }
}

/// A labeled discrete point together with its numeric embedding.
#[derive(Clone, Debug)]
pub struct LabeledPoint {
    pub label: String,
    pub embed: Vec<f64>,
}

/// One allowed move of a graph model.
#[derive(Clone, Debug)]
pub struct Transition {
    pub from: usize,
    pub input: usize,
    pub to: usize,
    pub cost: f64,
}

/// Finite-graph system: states are nodes, inputs are edge labels.
///
/// Transition declaration order is semantically relevant: solvers break
/// ties in favor of the earliest declared transition.
#[derive(Clone, Debug)]
pub struct GraphModel {
    pub states: Vec<LabeledPoint>,
    pub inputs: Vec<LabeledPoint>,
    pub transitions: Vec<Transition>,
    /// Outgoing transition indices per state, in declaration order.
    outgoing: Vec<Vec<usize>>,
}

impl GraphModel {
    pub fn new(
        states: Vec<LabeledPoint>,
        inputs: Vec<LabeledPoint>,
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidModel("graph model has no states".into()));
        }
        let sdim = states[0].embed.len();
        if states.iter().any(|s| s.embed.len() != sdim) {
            return Err(Error::InvalidModel("state embeddings differ in dimension".into()));
        }
        let idim = inputs.first().map(|i| i.embed.len()).unwrap_or(0);
        if inputs.iter().any(|i| i.embed.len() != idim) {
            return Err(Error::InvalidModel("input embeddings differ in dimension".into()));
        }
        let mut outgoing = vec![Vec::new(); states.len()];
        for (t_idx, t) in transitions.iter().enumerate() {
            if t.from >= states.len() || t.to >= states.len() {
                return Err(Error::InvalidModel(format!(
                    "transition {t_idx} references a state out of range"
                )));
            }
            if t.input >= inputs.len() {
                return Err(Error::InvalidModel(format!(
                    "transition {t_idx} references an input out of range"
                )));
            }
            if !t.cost.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "transition {t_idx} has non-finite cost"
                )));
            }
            outgoing[t.from].push(t_idx);
        }
        for (s, out) in outgoing.iter().enumerate() {
            if out.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "state `{}` has no outgoing transition",
                    states[s].label
                )));
            }
        }
        Ok(GraphModel { states, inputs, transitions, outgoing })
    }

    pub fn state_index(&self, label: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownState(label.to_string()))
    }

    pub fn input_index(&self, label: &str) -> Result<usize> {
        self.inputs
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::UnknownInput(label.to_string()))
    }

    pub fn state(&self, label: &str) -> Result<State> {
        Ok(State::Node(self.state_index(label)?))
    }

    pub fn input(&self, label: &str) -> Result<Input> {
        Ok(Input::Node(self.input_index(label)?))
    }

    pub fn outgoing(&self, state: usize) -> &[usize] {
        &self.outgoing[state]
    }

    /// First declared transition from `state` under `input`, if any.
    pub fn transition(&self, state: usize, input: usize) -> Option<&Transition> {
        self.outgoing[state]
            .iter()
            .map(|&i| &self.transitions[i])
            .find(|t| t.input == input)
    }
}

pub type DynamicsFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;
pub type ScalarFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
/// Jacobians of the dynamics: row-major `d f_i / d x_j` and `d f_i / d u_j`.
pub type JacobianFn = dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync;
/// Gradient of a scalar map: `(d/dx, d/du)`.
pub type GradientFn = dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync;

/// Continuous-state system with box constraints and an optional domain guard.
#[derive(Clone)]
pub struct SmoothModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub guard_margin: f64,
    /// Known lower bound of the stage cost over the feasible set. Solvers
    /// optimize the shifted cost `l - cost_floor >= 0`; the shift changes no
    /// minimizer because it adds a constant per horizon.
    pub cost_floor: f64,
    /// Hint for periodic-orbit initialization (planar systems only).
    pub orbit_init: OrbitInitHint,
    dynamics: Arc<DynamicsFn>,
    cost: Arc<ScalarFn>,
    guard: Option<Arc<ScalarFn>>,
    dynamics_jac: Option<Arc<JacobianFn>>,
    cost_grad: Option<Arc<GradientFn>>,
    guard_grad: Option<Arc<GradientFn>>,
}

/// How to seed the periodic-orbit NLP for this model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitInitHint {
    /// Uniform random states in the box with zero inputs.
    Random,
    /// Equally spaced points on a circle of random feasible radius
    /// (two-dimensional state only), plus the random fallback.
    PlanarCircle,
}

impl fmt::Debug for SmoothModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("x_lo", &self.x_lo)
            .field("x_hi", &self.x_hi)
            .field("u_lo", &self.u_lo)
            .field("u_hi", &self.u_hi)
            .field("guard_margin", &self.guard_margin)
            .field("cost_floor", &self.cost_floor)
            .finish()
    }
}

/// Builder for [`SmoothModel`]; gradients are optional and fall back to
/// central finite differences with step `1e-6 * (1 + |z|)`.
pub struct SmoothModelBuilder {
    state_dim: usize,
    input_dim: usize,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    u_lo: Vec<f64>,
    u_hi: Vec<f64>,
    guard_margin: f64,
    cost_floor: Option<f64>,
    orbit_init: OrbitInitHint,
    dynamics: Option<Arc<DynamicsFn>>,
    cost: Option<Arc<ScalarFn>>,
    guard: Option<Arc<ScalarFn>>,
    dynamics_jac: Option<Arc<JacobianFn>>,
    cost_grad: Option<Arc<GradientFn>>,
    guard_grad: Option<Arc<GradientFn>>,
}

impl SmoothModelBuilder {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        SmoothModelBuilder {
            state_dim,
            input_dim,
            x_lo: vec![f64::NEG_INFINITY; state_dim],
            x_hi: vec![f64::INFINITY; state_dim],
            u_lo: vec![f64::NEG_INFINITY; input_dim],
            u_hi: vec![f64::INFINITY; input_dim],
            guard_margin: 1e-6,
            cost_floor: None,
            orbit_init: OrbitInitHint::Random,
            dynamics: None,
            cost: None,
            guard: None,
            dynamics_jac: None,
            cost_grad: None,
            guard_grad: None,
        }
    }

    pub fn dynamics(mut self, f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.dynamics = Some(Arc::new(f));
        self
    }

    pub fn stage_cost(mut self, l: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.cost = Some(Arc::new(l));
        self
    }

    pub fn state_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.x_lo = lo;
        self.x_hi = hi;
        self
    }

    pub fn input_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.u_lo = lo;
        self.u_hi = hi;
        self
    }

    pub fn domain_guard(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        margin: f64,
    ) -> Self {
        self.guard = Some(Arc::new(g));
        self.guard_margin = margin;
        self
    }

    pub fn dynamics_jacobian(
        mut self,
        j: impl Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.dynamics_jac = Some(Arc::new(j));
        self
    }

    pub fn cost_gradient(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.cost_grad = Some(Arc::new(g));
        self
    }

    pub fn guard_gradient(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.guard_grad = Some(Arc::new(g));
        self
    }

    pub fn cost_floor(mut self, floor: f64) -> Self {
        self.cost_floor = Some(floor);
        self
    }

    pub fn orbit_init(mut self, hint: OrbitInitHint) -> Self {
        self.orbit_init = hint;
        self
    }

    pub fn build(self) -> Result<SmoothModel> {
        let dynamics = self
            .dynamics
            .ok_or_else(|| Error::InvalidModel("smooth model needs dynamics".into()))?;
        let cost = self
            .cost
            .ok_or_else(|| Error::InvalidModel("smooth model needs a stage cost".into()))?;
        for (name, lo, hi, dim) in [
            ("state", &self.x_lo, &self.x_hi, self.state_dim),
            ("input", &self.u_lo, &self.u_hi, self.input_dim),
        ] {
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::InvalidModel(format!("{name} bounds have wrong dimension")));
            }
            if lo.iter().zip(hi).any(|(a, b)| a > b) {
                return Err(Error::InvalidModel(format!("{name} bounds violate lo <= hi")));
            }
        }
        let mut model = SmoothModel {
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            u_lo: self.u_lo,
            u_hi: self.u_hi,
            guard_margin: self.guard_margin,
            cost_floor: 0.0,
            orbit_init: self.orbit_init,
            dynamics,
            cost,
            guard: self.guard,
            dynamics_jac: self.dynamics_jac,
            cost_grad: self.cost_grad,
            guard_grad: self.guard_grad,
        };
        model.cost_floor = match self.cost_floor {
            Some(f) => f,
            None => estimate_cost_floor(&model)?,
        };
        Ok(model)
    }
}

impl SmoothModel {
    pub fn builder(state_dim: usize, input_dim: usize) -> SmoothModelBuilder {
        SmoothModelBuilder::new(state_dim, input_dim)
    }

    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(x, u)
    }

    /// Raw stage cost; may be NaN outside the cost domain.
    pub fn cost_raw(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.cost)(x, u)
    }

    pub fn guard_value(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        self.guard.as_ref().map(|g| g(x, u))
    }

    pub fn has_guard(&self) -> bool {
        self.guard.is_some()
    }

    /// Dynamics Jacobians, analytic when supplied, else central differences.
    pub fn dynamics_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if let Some(j) = &self.dynamics_jac {
            return j(x, u);
        }
        let n = self.state_dim;
        let m = self.input_dim;
        let mut fx = vec![0.0; n * n];
        let mut fu = vec![0.0; n * m];
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            let fplus = (self.dynamics)(&xp, u);
            xp[j] = x[j] - h;
            let fminus = (self.dynamics)(&xp, u);
            xp[j] = x[j];
            for i in 0..n {
                fx[i * n + j] = (fplus[i] - fminus[i]) / (2.0 * h);
            }
        }
        let mut up = u.to_vec();
        for j in 0..m {
            let h = fd_step(u[j]);
            up[j] = u[j] + h;
            let fplus = (self.dynamics)(x, &up);
            up[j] = u[j] - h;
            let fminus = (self.dynamics)(x, &up);
            up[j] = u[j];
            for i in 0..n {
                fu[i * m + j] = (fplus[i] - fminus[i]) / (2.0 * h);
            }
        }
        (fx, fu)
    }

    pub fn cost_gradient(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if let Some(g) = &self.cost_grad {
            return g(x, u);
        }
        central_gradient(&*self.cost, x, u)
    }

    pub fn guard_gradient(&self, x: &[f64], u: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let g = self.guard.as_ref()?;
        if let Some(gg) = &self.guard_grad {
            return Some(gg(x, u));
        }
        Some(central_gradient(&**g, x, u))
    }

    pub fn clamp_input(&self, u: &mut [f64]) {
        for i in 0..u.len() {
            u[i] = u[i].clamp(self.u_lo[i], self.u_hi[i]);
        }
    }

    /// Replaces the cost floor (used by the nonnegativity shift).
    pub(crate) fn with_shifted_cost(&self, shift: f64) -> SmoothModel {
        let base = Arc::clone(&self.cost);
        let mut out = self.clone();
        out.cost = Arc::new(move |x: &[f64], u: &[f64]| base(x, u) - shift);
        if let Some(g) = &self.cost_grad {
            // gradient unchanged by a constant shift
            out.cost_grad = Some(Arc::clone(g));
        }
        out.cost_floor = self.cost_floor - shift;
        out
    }
}

fn fd_step(z: f64) -> f64 {
    1e-6 * (1.0 + z.abs())
}

fn central_gradient(f: &ScalarFn, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gu = vec![0.0; u.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp, u);
        xp[j] = x[j] - h;
        let fm = f(&xp, u);
        xp[j] = x[j];
        gx[j] = (fp - fm) / (2.0 * h);
    }
    let mut up = u.to_vec();
    for j in 0..u.len() {
        let h = fd_step(u[j]);
        up[j] = u[j] + h;
        let fp = f(x, &up);
        up[j] = u[j] - h;
        let fm = f(x, &up);
        up[j] = u[j];
        gu[j] = (fp - fm) / (2.0 * h);
    }
    (gx, gu)
}

/// A state/input sequence produced by [`SystemModel::rollout`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Length `T + 1`.
    pub states: Vec<State>,
    /// Length `T`.
    pub inputs: Vec<Input>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Outcome of a feasibility check: worst constraint violation and where.
#[derive(Clone, Debug)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub worst_violation: f64,
    pub worst_index: Option<usize>,
}

/// A dynamical system with stage cost and constraints, in one of two variants.
#[derive(Clone, Debug)]
pub enum SystemModel {
    FiniteGraph(GraphModel),
    Smooth(SmoothModel),
}

impl SystemModel {
    pub fn as_graph(&self) -> Option<&GraphModel> {
        match self {
            SystemModel::FiniteGraph(g) => Some(g),
            SystemModel::Smooth(_) => None,
        }
    }

    pub fn as_smooth(&self) -> Option<&SmoothModel> {
        match self {
            SystemModel::Smooth(s) => Some(s),
            SystemModel::FiniteGraph(_) => None,
        }
    }

    /// One step of the dynamics.
    pub fn step(&self, x: &State, u: &Input) -> Result<State> {
        match (self, x, u) {
            (SystemModel::FiniteGraph(g), State::Node(s), Input::Node(i)) => {
                if *s >= g.states.len() {
                    return Err(Error::UnknownState(format!("#{s}")));
                }
                if *i >= g.inputs.len() {
                    return Err(Error::UnknownInput(format!("#{i}")));
                }
                let t = g.transition(*s, *i).ok_or_else(|| Error::NoTransition {
                    state: g.states[*s].label.clone(),
                    input: g.inputs[*i].label.clone(),
                })?;
                Ok(State::Node(t.to))
            }
            (SystemModel::Smooth(m), State::Vector(xv), Input::Vector(uv)) => {
                if xv.len() != m.state_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "state has dimension {}, expected {}",
                        xv.len(),
                        m.state_dim
                    )));
                }
                if uv.len() != m.input_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "input has dimension {}, expected {}",
                        uv.len(),
                        m.input_dim
                    )));
                }
                Ok(State::Vector(m.dynamics(xv, uv)))
            }
            _ => Err(Error::DimensionMismatch(
                "state/input variant does not match the model".into(),
            )),
        }
    }

    /// Rolls the dynamics out from `x0` under the input sequence `us`.
    ///
    /// Constraint satisfaction is not enforced here; see [`Self::check_feasible`].
    pub fn rollout(&self, x0: &State, us: &[Input]) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(us.len() + 1);
        states.push(x0.clone());
        for u in us {
            let next = self.step(states.last().unwrap(), u)?;
            states.push(next);
        }
        Ok(Trajectory { states, inputs: us.to_vec() })
    }

    /// Checks every state against the state set, every input against the
    /// input set, and the domain guard against its margin, all within `tol`.
    pub fn check_feasible(&self, traj: &Trajectory, tol: f64) -> FeasibilityReport {
        let mut worst = 0.0f64;
        let mut worst_index = None;
        let mut record = |v: f64, idx: usize| {
            if v > worst {
                worst = v;
                worst_index = Some(idx);
            }
        };
        match self {
            // Graph trajectories only contain declared transitions, so the
            // violation is identically zero.
            SystemModel::FiniteGraph(_) => {}
            SystemModel::Smooth(m) => {
                for (k, s) in traj.states.iter().enumerate() {
                    if let State::Vector(x) = s {
                        for i in 0..m.state_dim {
                            record(x[i] - m.x_hi[i], k);
                            record(m.x_lo[i] - x[i], k);
                        }
                    }
                }
                for (k, u) in traj.inputs.iter().enumerate() {
                    if let Input::Vector(uv) = u {
                        for i in 0..m.input_dim {
                            record(uv[i] - m.u_hi[i], k);
                            record(m.u_lo[i] - uv[i], k);
                        }
                    }
                }
                if m.has_guard() {
                    for k in 0..traj.inputs.len() {
                        if let (State::Vector(x), Input::Vector(u)) =
                            (&traj.states[k], &traj.inputs[k])
                        {
                            if let Some(g) = m.guard_value(x, u) {
                                record(m.guard_margin - g, k);
                            }
                        }
                    }
                }
            }
        }
        FeasibilityReport { ok: worst <= tol, worst_violation: worst, worst_index }
    }

    /// Stage cost `l(x, u)`. Domain violations surface as errors, never NaN.
    pub fn stage_cost(&self, x: &State, u: &Input) -> Result<f64> {
        match (self, x, u) {
            (SystemModel::FiniteGraph(g), State::Node(s), Input::Node(i)) => {
                let t = g.transition(*s, *i).ok_or_else(|| Error::NoTransition {
                    state: g.states[*s].label.clone(),
                    input: g.inputs[*i].label.clone(),
                })?;
                Ok(t.cost)
            }
            (SystemModel::Smooth(m), State::Vector(xv), Input::Vector(uv)) => {
                if let Some(g) = m.guard_value(xv, uv) {
                    if g < m.guard_margin {
                        return Err(Error::CostDomain(format!(
                            "guard value {g:.3e} below margin {:.3e} at x={xv:?}, u={uv:?}",
                            m.guard_margin
                        )));
                    }
                }
                let c = m.cost_raw(xv, uv);
                if !c.is_finite() {
                    return Err(Error::CostDomain(format!("cost is {c} at x={xv:?}, u={uv:?}")));
                }
                Ok(c)
            }
            _ => Err(Error::DimensionMismatch(
                "state/input variant does not match the model".into(),
            )),
        }
    }

    /// Euclidean embedding of a state (graph labels map to their embeddings).
    pub fn embed_state(&self, x: &State) -> Vec<f64> {
        match (self, x) {
            (SystemModel::FiniteGraph(g), State::Node(s)) => g.states[*s].embed.clone(),
            (_, State::Vector(v)) => v.clone(),
            (SystemModel::Smooth(_), State::Node(_)) => Vec::new(),
        }
    }

    pub fn embed_input(&self, u: &Input) -> Vec<f64> {
        match (self, u) {
            (SystemModel::FiniteGraph(g), Input::Node(i)) => g.inputs[*i].embed.clone(),
            (_, Input::Vector(v)) => v.clone(),
            (SystemModel::Smooth(_), Input::Node(_)) => Vec::new(),
        }
    }

    /// Concatenated `(x, u)` embedding used for orbit distances.
    pub fn embed_pair(&self, x: &State, u: &Input) -> Vec<f64> {
        let mut v = self.embed_state(x);
        v.extend(self.embed_input(u));
        v
    }

    /// Whether `x` lies in the state set (within `tol` for boxes).
    pub fn state_in_domain(&self, x: &State, tol: f64) -> bool {
        match (self, x) {
            (SystemModel::FiniteGraph(g), State::Node(s)) => *s < g.states.len(),
            (SystemModel::Smooth(m), State::Vector(v)) => {
                v.len() == m.state_dim
                    && v.iter()
                        .zip(m.x_lo.iter().zip(&m.x_hi))
                        .all(|(xi, (lo, hi))| *xi >= lo - tol && *xi <= hi + tol)
            }
            _ => false,
        }
    }

    /// Shifts the stage cost so that its infimum over the feasible set is
    /// (approximately) zero. Returns the shifted model and the subtracted
    /// minimum. OCP minimizers are unchanged: for any discount the costs of
    /// all candidate inputs move by the same constant.
    pub fn shift_cost_nonneg(&self) -> Result<(SystemModel, f64)> {
        match self {
            SystemModel::FiniteGraph(g) => {
                let min = g
                    .transitions
                    .iter()
                    .map(|t| t.cost)
                    .fold(f64::INFINITY, f64::min);
                let mut shifted = g.clone();
                for t in &mut shifted.transitions {
                    t.cost -= min;
                }
                Ok((SystemModel::FiniteGraph(shifted), min))
            }
            SystemModel::Smooth(m) => {
                let floor = estimate_cost_floor(m)?;
                Ok((SystemModel::Smooth(m.with_shifted_cost(floor)), floor))
            }
        }
    }
}

/// Graph models shift by the minimum transition cost; this handles the
/// smooth case: a uniform grid over the feasible box (64 points per
/// dimension) refined by projected-gradient descent from the best 8 points.
pub fn estimate_cost_floor(m: &SmoothModel) -> Result<f64> {
    let dim = m.state_dim + m.input_dim;
    let per_axis: usize = if dim <= 4 { 64 } else { 8 };
    let lo: Vec<f64> = m.x_lo.iter().chain(&m.u_lo).copied().collect();
    let hi: Vec<f64> = m.x_hi.iter().chain(&m.u_hi).copied().collect();
    if lo.iter().any(|v| !v.is_finite()) || hi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(
            "cost floor estimation needs finite state and input bounds".into(),
        ));
    }

    let eval = |z: &[f64]| -> f64 {
        let (x, u) = z.split_at(m.state_dim);
        if let Some(g) = m.guard_value(x, u) {
            if g < m.guard_margin {
                return f64::INFINITY;
            }
        }
        let c = m.cost_raw(x, u);
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    };

    // coarse grid pass, keeping the best few points
    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut z = vec![0.0; dim];
    let mut idx = vec![0usize; dim];
    loop {
        for d in 0..dim {
            let t = if per_axis == 1 { 0.0 } else { idx[d] as f64 / (per_axis - 1) as f64 };
            z[d] = lo[d] + t * (hi[d] - lo[d]);
        }
        let c = eval(&z);
        if c.is_finite() {
            if best.len() < 8 {
                best.push((c, z.clone()));
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
            } else if c < best[7].0 {
                best[7] = (c, z.clone());
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == dim {
                break;
            }
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }
    if best.is_empty() {
        return Err(Error::Infeasible("no feasible point found while estimating cost floor".into()));
    }

    // local refinement: 50 projected-gradient steps with backtracking
    let grad = |z: &[f64]| -> Vec<f64> {
        let (x, u) = z.split_at(m.state_dim);
        let (gx, gu) = m.cost_gradient(x, u);
        gx.into_iter().chain(gu).collect()
    };
    let mut floor = best[0].0;
    for (c0, z0) in &best {
        let mut zc = z0.clone();
        let mut fc = *c0;
        let mut step = 1.0;
        for _ in 0..50 {
            let g = grad(&zc);
            let mut trial = vec![0.0; dim];
            let mut accepted = false;
            for _ in 0..40 {
                for d in 0..dim {
                    trial[d] = (zc[d] - step * g[d]).clamp(lo[d], hi[d]);
                }
                let ft = eval(&trial);
                if ft < fc {
                    zc.copy_from_slice(&trial);
                    fc = ft;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !fc.is_finite() {
            return Err(Error::Infeasible(
                "stage cost appears unbounded below on the feasible set".into(),
            ));
        }
        floor = floor.min(fc);
    }
    if !floor.is_finite() {
        return Err(Error::Infeasible(
            "stage cost appears unbounded below on the feasible set".into(),
        ));
    }
    Ok(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discount::DiscountProfile;
    use crate::ocp::evaluate_cost;
    use crate::presets;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_rollout_follows_labeled_edges() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        let us = vec![g.input("0").unwrap(), g.input("1").unwrap()];
        let traj = p.model.rollout(&g.state("-1").unwrap(), &us).unwrap();
        let labels: Vec<&str> = traj
            .states
            .iter()
            .map(|s| match s {
                State::Node(i) => g.states[*i].label.as_str(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(labels, ["-1", "0", "1"]);
    }

    #[test]
    fn graph_rollout_rejects_missing_transition() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        // no edge from state 0 under input 0
        let us = vec![g.input("0").unwrap()];
        let err = p.model.rollout(&g.state("0").unwrap(), &us).unwrap_err();
        assert!(matches!(err, Error::NoTransition { .. }));
    }

    #[test]
    fn empty_rollout_is_just_the_start() {
        let p = presets::oscillator();
        let x0 = State::vector(&[0.25, -0.5]);
        let traj = p.model.rollout(&x0, &[]).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert!(traj.inputs.is_empty());
        assert_eq!(traj.states[0], x0);
    }

    #[test]
    fn oscillator_free_response_returns_after_six_steps() {
        let p = presets::oscillator();
        let x0 = State::vector(&[0.3, 0.4]);
        let us = vec![Input::vector(&[0.0, 0.0]); 6];
        let traj = p.model.rollout(&x0, &us).unwrap();
        let xe = p.model.embed_state(&traj.states[6]);
        let x0e = p.model.embed_state(&x0);
        for i in 0..2 {
            assert!((xe[i] - x0e[i]).abs() < 1e-9, "component {i}: {} vs {}", xe[i], x0e[i]);
        }
    }

    #[test]
    fn oscillator_transition_matrix_is_a_rotation() {
        let p = presets::oscillator();
        let m = p.model.as_smooth().unwrap();
        let (fx, _) = m.dynamics_jacobians(&[0.0, 0.0], &[0.0, 0.0]);
        let det = fx[0] * fx[3] - fx[1] * fx[2];
        assert!((det - 1.0).abs() < 1e-12, "det = {det}");
        // sixth power is the identity
        let mut acc = [1.0, 0.0, 0.0, 1.0];
        for _ in 0..6 {
            acc = [
                fx[0] * acc[0] + fx[1] * acc[2],
                fx[0] * acc[1] + fx[1] * acc[3],
                fx[2] * acc[0] + fx[3] * acc[2],
                fx[2] * acc[1] + fx[3] * acc[3],
            ];
        }
        let id = [1.0, 0.0, 0.0, 1.0];
        for i in 0..4 {
            assert!((acc[i] - id[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn feasibility_report_flags_input_violations() {
        let p = presets::oscillator();
        let x0 = State::vector(&[0.0, 0.0]);
        let ok_traj = p
            .model
            .rollout(&x0, &vec![Input::vector(&[0.1, -0.05]); 4])
            .unwrap();
        assert!(p.model.check_feasible(&ok_traj, 1e-9).ok);

        let bad_traj = p
            .model
            .rollout(&x0, &vec![Input::vector(&[0.2, 0.0]); 2])
            .unwrap();
        let report = p.model.check_feasible(&bad_traj, 1e-9);
        assert!(!report.ok);
        assert!((report.worst_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn growth_guard_violation_is_reported() {
        let p = presets::growth();
        let m = p.model.as_smooth().unwrap();
        // pick u equal to production so the log argument is exactly zero
        let x = 0.5f64;
        let u = 5.0 * x.powf(0.34);
        assert!(u <= 10.0);
        let traj = Trajectory {
            states: vec![State::vector(&[x]), State::vector(&[u])],
            inputs: vec![Input::vector(&[u])],
        };
        let report = p.model.check_feasible(&traj, 1e-9);
        assert!(!report.ok);
        assert!(report.worst_violation >= m.guard_margin);
    }

    #[test]
    fn graph_stage_costs_match_declared_edges() {
        let p = presets::graph();
        let g = p.model.as_graph().unwrap();
        let c01 = p
            .model
            .stage_cost(&g.state("0").unwrap(), &g.input("1").unwrap())
            .unwrap();
        let c10 = p
            .model
            .stage_cost(&g.state("1").unwrap(), &g.input("0").unwrap())
            .unwrap();
        assert_eq!(c01, 0.0);
        assert_eq!(c10, 1.5);
    }

    #[test]
    fn oscillator_corner_state_cost() {
        let p = presets::oscillator();
        let m = p.model.as_smooth().unwrap();
        let x0 = p.x0.clone();
        let cost = p.model.stage_cost(&x0, &Input::vector(&[0.0, 0.0])).unwrap();
        // exactly the cube of the corner coordinate ...
        let r = 0.1 / (std::f64::consts::TAU / 6.0);
        assert_eq!(cost, -(r * r * r));
        // ... and equal to the reference steady-state cost up to the ~1e-8
        // constraint slack that reference carries
        assert!((cost - (-8.70791681846556e-4)).abs() < 1e-9, "cost = {cost:e}");
        assert!(m.cost_floor == -1.0);
    }

    #[test]
    fn growth_stage_cost_matches_scalar_formula() {
        let p = presets::growth();
        let x = State::vector(&[2.2344]);
        let u = Input::vector(&[2.2344]);
        let cost = p.model.stage_cost(&x, &u).unwrap();
        let oracle = -(5.0 * 2.2344f64.powf(0.34) - 2.2344).ln();
        assert!((cost - oracle).abs() < 1e-12);
        assert!((cost - (-1.4673)).abs() < 1e-3, "cost = {cost}");
    }

    #[test]
    fn cost_domain_violation_is_an_error_not_nan() {
        let p = presets::growth();
        let x = State::vector(&[0.5]);
        let u = Input::vector(&[5.0 * 0.5f64.powf(0.34)]);
        let err = p.model.stage_cost(&x, &u).unwrap_err();
        assert!(matches!(err, Error::CostDomain(_)));
    }

    #[test]
    fn graph_shift_is_identity() {
        let p = presets::graph();
        let (shifted, min) = p.model.shift_cost_nonneg().unwrap();
        assert_eq!(min, 0.0);
        let g0 = p.model.as_graph().unwrap();
        let g1 = shifted.as_graph().unwrap();
        for (a, b) in g0.transitions.iter().zip(&g1.transitions) {
            assert_eq!(a.cost, b.cost);
        }
    }

    #[test]
    fn oscillator_floor_is_minus_one() {
        let p = presets::oscillator();
        let m = p.model.as_smooth().unwrap();
        assert_eq!(m.cost_floor, -1.0);
        // the sampling estimator agrees: the grid contains the corner
        let est = estimate_cost_floor(m).unwrap();
        assert!((est - (-1.0)).abs() < 1e-9, "estimate = {est}");
    }

    #[test]
    fn growth_floor_matches_independent_grid_refinement() {
        let p = presets::growth();
        let m = p.model.as_smooth().unwrap();
        // independent oracle: dense 2-d grid plus coordinate pattern search
        let f = |x: f64, u: f64| -> f64 {
            let g = 5.0 * x.powf(0.34) - u;
            if g < 1e-6 {
                f64::INFINITY
            } else {
                -g.ln()
            }
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let x = 0.1 + 9.9 * i as f64 / n as f64;
                let u = 0.1 + 9.9 * j as f64 / n as f64;
                let v = f(x, u);
                if v < best.0 {
                    best = (v, x, u);
                }
            }
        }
        let (mut bv, mut bx, mut bu) = best;
        let mut h = 9.9 / n as f64;
        while h > 1e-10 {
            let mut improved = false;
            for (dx, du) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
                let x = (bx + dx).clamp(0.1, 10.0);
                let u = (bu + du).clamp(0.1, 10.0);
                let v = f(x, u);
                if v < bv {
                    bv = v;
                    bx = x;
                    bu = u;
                    improved = true;
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        assert!((m.cost_floor - bv).abs() < 1e-6, "floor {} vs oracle {}", m.cost_floor, bv);
        let est = estimate_cost_floor(m).unwrap();
        assert!((est - bv).abs() < 1e-6, "estimate {} vs oracle {}", est, bv);
    }

    #[test]
    fn shift_changes_costs_by_a_constant_per_horizon() {
        let p = presets::oscillator();
        let (shifted, min) = p.model.shift_cost_nonneg().unwrap();
        assert!((min - (-1.0)).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 9;
        for profile in [DiscountProfile::Constant, DiscountProfile::Linear] {
            let expected = -min * profile.weight_sum(n);
            for _ in 0..10 {
                let x0 = State::vector(&[rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
                let us: Vec<Input> = (0..n)
                    .map(|_| {
                        Input::vector(&[rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)])
                    })
                    .collect();
                let j0 = evaluate_cost(&p.model, &x0, &us, &profile, n, n).unwrap();
                let j1 = evaluate_cost(&shifted, &x0, &us, &profile, n, n).unwrap();
                assert!((j1 - (j0 + expected)).abs() < 1e-12);
            }
        }
    }
}
