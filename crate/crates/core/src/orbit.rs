//! Periodic orbits: search for the best orbit of a given period, scans
//! over period lengths, and distances from points to orbits.
//!
//! An orbit of period `p` is a `p`-tuple of `(x, u)` pairs closed under the
//! dynamics. Its average cost is the arithmetic mean of the stage costs
//! along it, and it is *minimal* when its state points are pairwise
//! distinct. Graph models are searched exactly over closed walks of the
//! requested length; smooth models solve a nonlinear program with the
//! periodicity as equality constraints.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GraphModel, Input, OrbitInitHint, SmoothModel, State, SystemModel};
use crate::nlp::{augmented_lagrangian, AlOptions, AlState, BoxBounds, PgOptions};
use crate::ocp::SolverOptions;

/// A feasible periodic orbit together with its average cost.
#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<(State, Input)>,
    pub avg_cost: f64,
    pub minimal: bool,
}

impl PeriodicOrbit {
    pub fn state(&self, k: usize) -> &State {
        &self.points[k % self.period].0
    }

    pub fn input(&self, k: usize) -> &Input {
        &self.points[k % self.period].1
    }
}

/// Euclidean distance of a state/input pair to the nearest orbit point,
/// measured on the concatenated embeddings.
pub fn distance(model: &SystemModel, x: &State, u: &Input, orbit: &PeriodicOrbit) -> f64 {
    let point = model.embed_pair(x, u);
    orbit
        .points
        .iter()
        .map(|(ox, ou)| {
            let o = model.embed_pair(ox, ou);
            sq_dist(&point, &o).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// State-only distance to the orbit's state sequence.
pub fn state_distance(model: &SystemModel, x: &State, orbit: &PeriodicOrbit) -> f64 {
    let point = model.embed_state(x);
    orbit
        .points
        .iter()
        .map(|(ox, _)| sq_dist(&point, &model.embed_state(ox)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// True iff the orbit's state points are pairwise separated by more than `tol`.
pub fn is_minimal(model: &SystemModel, orbit: &PeriodicOrbit, tol: f64) -> bool {
    for i in 0..orbit.points.len() {
        for j in (i + 1)..orbit.points.len() {
            let a = model.embed_state(&orbit.points[i].0);
            let b = model.embed_state(&orbit.points[j].0);
            if sq_dist(&a, &b).sqrt() <= tol {
                return false;
            }
        }
    }
    true
}

/// Default separation below which two orbit states count as the same point.
pub const MINIMALITY_TOL: f64 = 1e-6;

/// Search effort for the smooth orbit NLP.
#[derive(Clone, Debug)]
pub struct OrbitOptions {
    /// Random multistarts of the smooth NLP.
    pub multistart: usize,
    pub seed: u64,
    /// Dynamics-consistency tolerance of a returned orbit.
    pub orbit_tol: f64,
    /// Costs closer than this count as equal when identifying the best period.
    pub scan_tol: f64,
    pub solver: SolverOptions,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            multistart: 20,
            seed: 0,
            orbit_tol: 1e-8,
            scan_tol: 1e-6,
            solver: SolverOptions::default(),
        }
    }
}

/// Best orbit of period exactly `p`.
pub fn best_orbit(model: &SystemModel, p: usize, opts: &OrbitOptions) -> Result<PeriodicOrbit> {
    best_orbit_with_starts(model, p, opts, &[])
}

/// Like [`best_orbit`], with additional caller-supplied starting guesses
/// for the smooth case (flattened `(states, inputs)` vectors).
pub fn best_orbit_with_starts(
    model: &SystemModel,
    p: usize,
    opts: &OrbitOptions,
    extra_starts: &[Vec<f64>],
) -> Result<PeriodicOrbit> {
    if p == 0 {
        return Err(Error::InvalidArgument("orbit period must be >= 1".into()));
    }
    match model {
        SystemModel::FiniteGraph(g) => best_graph_orbit(model, g, p),
        SystemModel::Smooth(m) => best_smooth_orbit(model, m, p, opts, extra_starts),
    }
}

/// Exact search over closed walks of length `p` by dynamic programming on
/// (walk length, start node, current node), ties broken toward earlier
/// declared transitions.
fn best_graph_orbit(model: &SystemModel, g: &GraphModel, p: usize) -> Result<PeriodicOrbit> {
    let n = g.states.len();
    // cost[s][t]: best walk of the current length from s to t
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    // choice[l][s][t]: transition taken at step l on the best (l+1)-walk s->t
    let mut choice = vec![vec![vec![usize::MAX; n]; n]; p];
    for s in 0..n {
        cost[s][s] = 0.0;
    }
    for l in 0..p {
        let mut next = vec![vec![f64::INFINITY; n]; n];
        for s in 0..n {
            for mid in 0..n {
                let c = cost[s][mid];
                if !c.is_finite() {
                    continue;
                }
                for &t_idx in g.outgoing(mid) {
                    let t = &g.transitions[t_idx];
                    let v = c + t.cost;
                    if v < next[s][t.to] {
                        next[s][t.to] = v;
                        choice[l][s][t.to] = t_idx;
                    }
                }
            }
        }
        cost = next;
    }
    let mut best_start = usize::MAX;
    let mut best_cost = f64::INFINITY;
    for s in 0..n {
        if cost[s][s] < best_cost {
            best_cost = cost[s][s];
            best_start = s;
        }
    }
    if best_start == usize::MAX {
        return Err(Error::Infeasible(format!("graph has no closed walk of length {p}")));
    }
    // backtrack the chosen walk
    let mut rev = Vec::with_capacity(p);
    let mut cur = best_start;
    for l in (0..p).rev() {
        let t_idx = choice[l][best_start][cur];
        let t = &g.transitions[t_idx];
        rev.push(t_idx);
        cur = t.from;
    }
    rev.reverse();
    let points: Vec<(State, Input)> = rev
        .iter()
        .map(|&t_idx| {
            let t = &g.transitions[t_idx];
            (State::Node(t.from), Input::Node(t.input))
        })
        .collect();
    let avg_cost = best_cost / p as f64;
    let orbit = PeriodicOrbit { period: p, points, avg_cost, minimal: false };
    let minimal = is_minimal(model, &orbit, MINIMALITY_TOL);
    Ok(PeriodicOrbit { minimal, ..orbit })
}

/// Decision layout of the orbit NLP: `p` states then `p` inputs, flattened.
struct OrbitNlp<'a> {
    model: &'a SmoothModel,
    p: usize,
    n: usize,
    m: usize,
}

impl<'a> OrbitNlp<'a> {
    fn dim(&self) -> usize {
        self.p * (self.n + self.m)
    }

    fn x<'b>(&self, z: &'b [f64], k: usize) -> &'b [f64] {
        &z[k * self.n..(k + 1) * self.n]
    }

    fn u<'b>(&self, z: &'b [f64], k: usize) -> &'b [f64] {
        let base = self.p * self.n;
        &z[base + k * self.m..base + (k + 1) * self.m]
    }

    fn objective_raw(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.p {
            let x = self.x(z, k);
            let u = self.u(z, k);
            if let Some(g) = self.model.guard_value(x, u) {
                if !(g > 0.0) {
                    return f64::INFINITY;
                }
            }
            let c = self.model.cost_raw(x, u) - self.model.cost_floor;
            if !c.is_finite() {
                return f64::INFINITY;
            }
            total += c;
        }
        total / self.p as f64
    }

    /// Equalities: `x_{k+1 mod p} - f(x_k, u_k) = 0`, flattened by stage.
    fn equalities(&self, z: &[f64], out: &mut [f64]) {
        for k in 0..self.p {
            let fx = self.model.dynamics(self.x(z, k), self.u(z, k));
            let xn = self.x(z, (k + 1) % self.p);
            for i in 0..self.n {
                out[k * self.n + i] = xn[i] - fx[i];
            }
        }
    }

    fn n_guard(&self) -> usize {
        if self.model.has_guard() {
            self.p
        } else {
            0
        }
    }

    fn penalized_objective(&self, z: &[f64], st: &AlState, eq: &mut Vec<f64>) -> f64 {
        let base = self.objective_raw(z);
        if !base.is_finite() {
            return f64::INFINITY;
        }
        let mut total = base;
        eq.resize(self.p * self.n, 0.0);
        self.equalities(z, eq);
        for (i, &h) in eq.iter().enumerate() {
            total += AlState::eq_term(h, st.eq_mult[i], st.penalty);
        }
        if self.model.has_guard() {
            for k in 0..self.p {
                let g = self.model.guard_value(self.x(z, k), self.u(z, k)).unwrap();
                total += AlState::ineq_term(self.model.guard_margin - g, st.ineq_mult[k], st.penalty);
            }
        }
        total
    }

    fn penalized_gradient(&self, z: &[f64], st: &AlState, grad: &mut [f64]) {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        let wp = 1.0 / self.p as f64;
        let xbase = 0;
        let ubase = self.p * self.n;
        let mut eq = vec![0.0; self.p * self.n];
        self.equalities(z, &mut eq);
        for k in 0..self.p {
            let x = self.x(z, k);
            let u = self.u(z, k);
            let (lx, lu) = self.model.cost_gradient(x, u);
            for i in 0..self.n {
                grad[xbase + k * self.n + i] += wp * lx[i];
            }
            for j in 0..self.m {
                grad[ubase + k * self.m + j] += wp * lu[j];
            }
            if self.model.has_guard() {
                let g = self.model.guard_value(x, u).unwrap();
                let slope =
                    AlState::ineq_slope(self.model.guard_margin - g, st.ineq_mult[k], st.penalty);
                if slope != 0.0 {
                    let (ggx, ggu) = self.model.guard_gradient(x, u).unwrap();
                    for i in 0..self.n {
                        grad[xbase + k * self.n + i] -= slope * ggx[i];
                    }
                    for j in 0..self.m {
                        grad[ubase + k * self.m + j] -= slope * ggu[j];
                    }
                }
            }
            // equality block k couples (x_k, u_k) through -f and x_{k+1} directly
            let (fx, fu) = self.model.dynamics_jacobians(x, u);
            let knext = (k + 1) % self.p;
            for i in 0..self.n {
                let s = AlState::eq_slope(eq[k * self.n + i], st.eq_mult[k * self.n + i], st.penalty);
                grad[xbase + knext * self.n + i] += s;
                for j in 0..self.n {
                    grad[xbase + k * self.n + j] -= s * fx[i * self.n + j];
                }
                for j in 0..self.m {
                    grad[ubase + k * self.m + j] -= s * fu[i * self.m + j];
                }
            }
        }
    }
}

fn smooth_orbit_starts(
    m: &SmoothModel,
    p: usize,
    opts: &OrbitOptions,
    extra: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = m.state_dim;
    let mi = m.input_dim;
    let dim = p * (n + mi);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (p as u64).wrapping_mul(0x9e37_79b9));
    let mut starts: Vec<Vec<f64>> = extra.iter().filter(|z| z.len() == dim).cloned().collect();
    let ubox = BoxBounds { lo: m.u_lo.clone(), hi: m.u_hi.clone() };
    let mut zero_u = vec![0.0; mi];
    ubox.project(&mut zero_u);

    if m.orbit_init == OrbitInitHint::PlanarCircle && n == 2 {
        let r_hi = m
            .x_hi
            .iter()
            .chain(&m.x_lo)
            .fold(0.0f64, |a, &b| if b.is_finite() { a.max(b.abs()) } else { a });
        for _ in 0..opts.multistart.div_ceil(2) {
            let r = rng.gen_range(0.1..=r_hi.max(0.2));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut z = vec![0.0; dim];
            for k in 0..p {
                let a = phase + std::f64::consts::TAU * k as f64 / p as f64;
                z[k * 2] = (r * a.cos()).clamp(m.x_lo[0], m.x_hi[0]);
                z[k * 2 + 1] = (r * a.sin()).clamp(m.x_lo[1], m.x_hi[1]);
            }
            for k in 0..p {
                z[p * n + k * mi..p * n + (k + 1) * mi].copy_from_slice(&zero_u);
            }
            starts.push(z);
        }
    }
    let finite = m.x_lo.iter().chain(&m.x_hi).all(|v| v.is_finite());
    while starts.len() < extra.len() + opts.multistart {
        let mut z = vec![0.0; dim];
        for k in 0..p {
            for i in 0..n {
                z[k * n + i] = if finite {
                    rng.gen_range(m.x_lo[i]..=m.x_hi[i])
                } else {
                    rng.gen_range(-1.0..=1.0)
                };
            }
            z[p * n + k * mi..p * n + (k + 1) * mi].copy_from_slice(&zero_u);
        }
        starts.push(z);
    }
    if starts.is_empty() {
        let mut z = vec![0.0; dim];
        for k in 0..p {
            for i in 0..n {
                z[k * n + i] = 0.0f64.clamp(m.x_lo[i], m.x_hi[i]);
            }
            z[p * n + k * mi..p * n + (k + 1) * mi].copy_from_slice(&zero_u);
        }
        starts.push(z);
    }
    starts
}

fn best_smooth_orbit(
    model: &SystemModel,
    m: &SmoothModel,
    p: usize,
    opts: &OrbitOptions,
    extra_starts: &[Vec<f64>],
) -> Result<PeriodicOrbit> {
    let nlp = OrbitNlp { model: m, p, n: m.state_dim, m: m.input_dim };
    let mut lo = Vec::with_capacity(nlp.dim());
    let mut hi = Vec::with_capacity(nlp.dim());
    for _ in 0..p {
        lo.extend_from_slice(&m.x_lo);
        hi.extend_from_slice(&m.x_hi);
    }
    for _ in 0..p {
        lo.extend_from_slice(&m.u_lo);
        hi.extend_from_slice(&m.u_hi);
    }
    let bounds = BoxBounds { lo, hi };
    let sopts = &opts.solver;
    let al_opts = AlOptions {
        tol_feas: sopts.tol_feas,
        max_outer: sopts.max_outer,
        penalty_init: sopts.penalty_init,
        penalty_growth: sopts.penalty_growth,
        pg: PgOptions {
            tol_stat: sopts.tol_stat,
            max_iter: sopts.max_iter,
            armijo_c: sopts.armijo_c,
        },
    };
    let starts = smooth_orbit_starts(m, p, opts, extra_starts);
    let n_eq = p * m.state_dim;
    let results: Vec<_> = starts
        .par_iter()
        .map(|z0| {
            let mut eq_buf = Vec::new();
            augmented_lagrangian(
                z0,
                &bounds,
                nlp.n_guard(),
                n_eq,
                |z, st| nlp.penalized_objective(z, st, &mut eq_buf),
                |z, st, g| nlp.penalized_gradient(z, st, g),
                |z, ineq, eq| {
                    nlp.equalities(z, eq);
                    if m.has_guard() {
                        for k in 0..p {
                            ineq[k] = m.guard_margin - m.guard_value(nlp.x(z, k), nlp.u(z, k)).unwrap();
                        }
                    }
                },
                &al_opts,
            )
        })
        .collect();

    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.violation <= opts.orbit_tol.max(sopts.tol_feas))
        .map(|(i, r)| (i, r, nlp.objective_raw(&r.z)))
        .filter(|(_, _, obj)| obj.is_finite())
        .min_by(|(ia, _, a), (ib, _, b)| a.total_cmp(b).then(ia.cmp(ib)));
    let (_, chosen, _) = best.ok_or_else(|| {
        Error::Infeasible(format!("no feasible period-{p} orbit found within tolerance"))
    })?;

    let points: Vec<(State, Input)> = (0..p)
        .map(|k| {
            (
                State::Vector(nlp.x(&chosen.z, k).to_vec()),
                Input::Vector(nlp.u(&chosen.z, k).to_vec()),
            )
        })
        .collect();
    let avg_cost = (0..p)
        .map(|k| m.cost_raw(nlp.x(&chosen.z, k), nlp.u(&chosen.z, k)))
        .sum::<f64>()
        / p as f64;
    let orbit = PeriodicOrbit { period: p, points, avg_cost, minimal: false };
    let minimal = is_minimal(model, &orbit, MINIMALITY_TOL);
    Ok(PeriodicOrbit { minimal, ..orbit })
}

/// Result of a period scan: one orbit (or error) per period, the smallest
/// period attaining the minimum average cost, and that cost.
#[derive(Debug)]
pub struct PeriodScan {
    pub orbits: Vec<(usize, Result<PeriodicOrbit>)>,
    pub best_period: usize,
    pub best_avg_cost: f64,
}

impl PeriodScan {
    pub fn orbit(&self, p: usize) -> Option<&PeriodicOrbit> {
        self.orbits
            .iter()
            .find(|(q, _)| *q == p)
            .and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn best_orbit(&self) -> Option<&PeriodicOrbit> {
        self.orbit(self.best_period)
    }
}

/// Scans periods `1..=p_max`. Failures for individual periods are recorded,
/// not fatal. For composite periods, replicated copies of the orbits found
/// at divisor periods seed the search, so the scan respects
/// `avg_cost(k p) <= avg_cost(p)` up to solver tolerance.
pub fn scan_periods(model: &SystemModel, p_max: usize, opts: &OrbitOptions) -> Result<PeriodScan> {
    if p_max == 0 {
        return Err(Error::InvalidArgument("p_max must be >= 1".into()));
    }
    // independent first pass, parallel over periods
    let first: Vec<(usize, Result<PeriodicOrbit>)> = (1..=p_max)
        .into_par_iter()
        .map(|p| (p, best_orbit(model, p, opts)))
        .collect();

    // sequential second pass: try replicating each divisor's orbit
    let mut orbits = first;
    if model.as_smooth().is_some() {
        for p in 2..=p_max {
            let mut extra: Vec<Vec<f64>> = Vec::new();
            for d in 1..p {
                if p % d != 0 {
                    continue;
                }
                if let Some(base) = orbits[d - 1].1.as_ref().ok() {
                    extra.push(replicate_flat(model, base, p / d));
                }
            }
            if extra.is_empty() {
                continue;
            }
            let mut no_random = opts.clone();
            no_random.multistart = 0;
            if let Ok(cand) = best_orbit_with_starts(model, p, &no_random, &extra) {
                let better = match &orbits[p - 1].1 {
                    Ok(existing) => cand.avg_cost < existing.avg_cost,
                    Err(_) => true,
                };
                if better {
                    orbits[p - 1].1 = Ok(cand);
                }
            }
        }
    }

    let mut best_avg = f64::INFINITY;
    for (_, r) in &orbits {
        if let Ok(o) = r {
            best_avg = best_avg.min(o.avg_cost);
        }
    }
    if !best_avg.is_finite() {
        return Err(Error::Infeasible("no feasible orbit for any scanned period".into()));
    }
    let best_period = orbits
        .iter()
        .filter_map(|(p, r)| r.as_ref().ok().map(|o| (*p, o.avg_cost)))
        .find(|(_, c)| *c <= best_avg + opts.scan_tol)
        .map(|(p, _)| p)
        .unwrap();
    let best_avg_cost = orbits[best_period - 1].1.as_ref().unwrap().avg_cost;
    Ok(PeriodScan { orbits, best_period, best_avg_cost })
}

/// Flattens `laps` copies of an orbit into the NLP decision layout.
fn replicate_flat(model: &SystemModel, orbit: &PeriodicOrbit, laps: usize) -> Vec<f64> {
    let p = orbit.period * laps;
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for k in 0..p {
        let (x, u) = &orbit.points[k % orbit.period];
        xs.extend(model.embed_state(x));
        us.extend(model.embed_input(u));
    }
    xs.extend(us);
    xs
}
