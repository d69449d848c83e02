//! Internal optimization machinery shared by the smooth OCP solver and the
//! periodic-orbit search: projected gradient descent with Armijo
//! backtracking on a box, wrapped in an augmented-Lagrangian outer loop for
//! equality and inequality constraints.

/// Box bounds for the decision vector.
#[derive(Clone, Debug)]
pub(crate) struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn project(&self, z: &mut [f64]) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn projected(&self, z: &[f64]) -> Vec<f64> {
        let mut out = z.to_vec();
        self.project(&mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PgOptions {
    pub tol_stat: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct PgResult {
    pub z: Vec<f64>,
    pub value: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Line search exhausted: float resolution reached before `tol_stat`.
    pub stalled: bool,
    /// Objective at every accepted iterate (monotone by construction).
    #[allow(dead_code)] // read by the line-search tests
    pub history: Vec<f64>,
}

/// Minimizes `f` over the box by projected gradient steps. `f` may return
/// `+inf` outside its domain; such trial points are rejected by the line
/// search. The gradient callback writes into its output slice.
pub(crate) fn projected_gradient<F, G>(
    z0: &[f64],
    bounds: &BoxBounds,
    mut f: F,
    mut grad: G,
    opts: &PgOptions,
) -> PgResult
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64], &mut [f64]),
{
    let dim = z0.len();
    let mut z = bounds.projected(z0);
    let mut fz = f(&z);
    let mut history = vec![fz];
    let mut g = vec![0.0; dim];
    let mut g_prev = vec![0.0; dim];
    let mut z_prev = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut have_prev = false;
    let mut step = 1.0f64;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;
    let mut stalled = false;

    if !fz.is_finite() {
        // infeasible start for the unconstrained part; nothing to minimize
        return PgResult {
            z,
            value: fz,
            stationarity,
            iterations,
            converged: false,
            stalled: true,
            history,
        };
    }

    for _ in 0..opts.max_iter {
        grad(&z, &mut g);
        // projected-gradient stationarity with unit step
        stationarity = 0.0;
        for i in 0..dim {
            let moved = (z[i] - g[i]).clamp(bounds.lo[i], bounds.hi[i]);
            stationarity = stationarity.max((z[i] - moved).abs());
        }
        if stationarity <= opts.tol_stat {
            return PgResult {
                z,
                value: fz,
                stationarity,
                iterations,
                converged: true,
                stalled: false,
                history,
            };
        }

        // Barzilai-Borwein step length: matches the local curvature scale,
        // so the backtracking below rarely has to work
        if have_prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..dim {
                let s = z[i] - z_prev[i];
                let y = g[i] - g_prev[i];
                ss += s * s;
                sy += s * y;
            }
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e8);
            }
        }
        z_prev.copy_from_slice(&z);
        g_prev.copy_from_slice(&g);

        let mut accepted = false;
        let mut t = step;
        for _ in 0..60 {
            let mut dir_dot_g = 0.0;
            for i in 0..dim {
                trial[i] = (z[i] - t * g[i]).clamp(bounds.lo[i], bounds.hi[i]);
                dir_dot_g += g[i] * (trial[i] - z[i]);
            }
            if dir_dot_g >= 0.0 {
                // no feasible descent at this step size
                t *= 0.5;
                continue;
            }
            let ft = f(&trial);
            // the rounding allowance keeps progress possible once descent
            // increments fall below the objective's float resolution
            let allowance = 4.0 * f64::EPSILON * fz.abs().max(1.0);
            if ft.is_finite() && ft <= fz + opts.armijo_c * dir_dot_g + allowance {
                z.copy_from_slice(&trial);
                fz = ft;
                history.push(fz);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // line search exhausted; the current point is as good as this
            // method gets at this penalty level
            stalled = true;
            break;
        }
        step = t;
    }
    let converged = stationarity <= opts.tol_stat;
    PgResult { z, value: fz, stationarity, iterations, converged, stalled, history }
}

/// Multiplier state for one augmented-Lagrangian solve.
#[derive(Clone, Debug)]
pub(crate) struct AlState {
    /// Multipliers for inequality constraints `c(z) <= 0`.
    pub ineq_mult: Vec<f64>,
    /// Multipliers for equality constraints `h(z) = 0`.
    pub eq_mult: Vec<f64>,
    pub penalty: f64,
}

impl AlState {
    pub fn new(n_ineq: usize, n_eq: usize, penalty: f64) -> Self {
        AlState { ineq_mult: vec![0.0; n_ineq], eq_mult: vec![0.0; n_eq], penalty }
    }

    /// Penalty term for one inequality value `c <= 0` with multiplier `mu`.
    pub fn ineq_term(c: f64, mu: f64, rho: f64) -> f64 {
        let t = (mu + rho * c).max(0.0);
        (t * t - mu * mu) / (2.0 * rho)
    }

    /// d/dc of [`Self::ineq_term`].
    pub fn ineq_slope(c: f64, mu: f64, rho: f64) -> f64 {
        (mu + rho * c).max(0.0)
    }

    pub fn eq_term(h: f64, mu: f64, rho: f64) -> f64 {
        mu * h + 0.5 * rho * h * h
    }

    pub fn eq_slope(h: f64, mu: f64, rho: f64) -> f64 {
        mu + rho * h
    }

    pub fn update_ineq(&mut self, values: &[f64]) {
        for (mu, &c) in self.ineq_mult.iter_mut().zip(values) {
            *mu = (*mu + self.penalty * c).max(0.0);
        }
    }

    pub fn update_eq(&mut self, values: &[f64]) {
        for (mu, &h) in self.eq_mult.iter_mut().zip(values) {
            *mu += self.penalty * h;
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AlOptions {
    pub tol_feas: f64,
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub pg: PgOptions,
}

#[derive(Clone, Debug)]
pub(crate) struct AlResult {
    pub z: Vec<f64>,
    pub stationarity: f64,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the augmented-Lagrangian outer loop. The caller supplies, for a
/// given multiplier state, the penalized objective and gradient plus a
/// constraint evaluator returning `(ineq_values, eq_values)` at a point.
pub(crate) fn augmented_lagrangian<F, G, C>(
    z0: &[f64],
    bounds: &BoxBounds,
    n_ineq: usize,
    n_eq: usize,
    mut objective: F,
    mut gradient: G,
    mut constraints: C,
    opts: &AlOptions,
) -> AlResult
where
    F: FnMut(&[f64], &AlState) -> f64,
    G: FnMut(&[f64], &AlState, &mut [f64]),
    C: FnMut(&[f64], &mut Vec<f64>, &mut Vec<f64>),
{
    let mut state = AlState::new(n_ineq, n_eq, opts.penalty_init);
    let mut z = bounds.projected(z0);
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    let mut ineq_vals = vec![0.0; n_ineq];
    let mut eq_vals = vec![0.0; n_eq];
    let mut violation = f64::INFINITY;

    for round in 0..opts.max_outer {
        let pg = {
            let st = &state;
            projected_gradient(
                &z,
                bounds,
                |p| objective(p, st),
                |p, g| gradient(p, st, g),
                &opts.pg,
            )
        };
        z = pg.z;
        stationarity = pg.stationarity;
        iterations += pg.iterations;

        constraints(&z, &mut ineq_vals, &mut eq_vals);
        let prev_violation = violation;
        violation = 0.0;
        for &c in &ineq_vals {
            violation = violation.max(c.max(0.0));
        }
        for &h in &eq_vals {
            violation = violation.max(h.abs());
        }
        if violation <= opts.tol_feas && pg.converged {
            return AlResult { z, stationarity, violation, iterations, converged: true };
        }
        if violation <= opts.tol_feas && pg.stalled {
            // feasible, and the inner method is at its float resolution:
            // further rounds cannot improve the certificate
            return AlResult { z, stationarity, violation, iterations, converged: false };
        }
        state.update_ineq(&ineq_vals);
        state.update_eq(&eq_vals);
        // multiplier updates alone shrink the violation roughly by the
        // penalty factor per round when the inner solves are accurate;
        // grow the penalty only when that contraction fails to show up
        if round + 1 < opts.max_outer && violation > 0.1 * prev_violation {
            state.penalty = (state.penalty * opts.penalty_growth).min(1e10);
        }
    }
    AlResult { z, stationarity, violation, iterations, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds(lo: f64, hi: f64, n: usize) -> BoxBounds {
        BoxBounds { lo: vec![lo; n], hi: vec![hi; n] }
    }

    #[test]
    fn quadratic_on_box_hits_interior_min() {
        let b = bounds(-2.0, 2.0, 3);
        let target = [0.3, -1.1, 0.7];
        let res = projected_gradient(
            &[2.0, 2.0, -2.0],
            &b,
            |z| z.iter().zip(&target).map(|(zi, ti)| (zi - ti).powi(2)).sum(),
            |z, g| {
                for i in 0..3 {
                    g[i] = 2.0 * (z[i] - target[i]);
                }
            },
            &PgOptions { tol_stat: 1e-10, max_iter: 5000, armijo_c: 1e-4 },
        );
        assert!(res.converged);
        for i in 0..3 {
            assert!((res.z[i] - target[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn stiff_penalized_quadratic_reaches_tight_stationarity() {
        let b = bounds(-10.0, 10.0, 2);
        let res = projected_gradient(
            &[0.0, 0.0],
            &b,
            |z| (z[0] - 1.0).powi(2) + (z[1] - 1.0).powi(2) + 10.0 * (z[0] + z[1] - 1.0).powi(2),
            |z, g| {
                let h = 20.0 * (z[0] + z[1] - 1.0);
                g[0] = 2.0 * (z[0] - 1.0) + h;
                g[1] = 2.0 * (z[1] - 1.0) + h;
            },
            &PgOptions { tol_stat: 1e-10, max_iter: 20000, armijo_c: 1e-4 },
        );
        assert!(res.converged, "stat {:e} after {} iters", res.stationarity, res.iterations);
        assert!(res.iterations < 500);
    }

    #[test]
    fn quadratic_min_outside_box_lands_on_boundary() {
        let b = bounds(-1.0, 1.0, 2);
        let res = projected_gradient(
            &[0.0, 0.0],
            &b,
            |z| (z[0] - 3.0).powi(2) + (z[1] + 2.0).powi(2),
            |z, g| {
                g[0] = 2.0 * (z[0] - 3.0);
                g[1] = 2.0 * (z[1] + 2.0);
            },
            &PgOptions { tol_stat: 1e-10, max_iter: 2000, armijo_c: 1e-4 },
        );
        assert!(res.converged);
        assert!((res.z[0] - 1.0).abs() < 1e-9);
        assert!((res.z[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn accepted_objective_values_never_increase() {
        let b = bounds(-5.0, 5.0, 4);
        let res = projected_gradient(
            &[4.0, -4.0, 4.0, -4.0],
            &b,
            |z| z.iter().enumerate().map(|(i, zi)| (i as f64 + 1.0) * zi * zi).sum::<f64>()
                + (z[0] * z[1]).powi(2),
            |z, g| {
                for i in 0..4 {
                    g[i] = 2.0 * (i as f64 + 1.0) * z[i];
                }
                g[0] += 2.0 * z[0] * z[1] * z[1];
                g[1] += 2.0 * z[1] * z[0] * z[0];
            },
            &PgOptions { tol_stat: 1e-9, max_iter: 5000, armijo_c: 1e-4 },
        );
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn equality_constrained_projection_onto_line() {
        // min (z0-1)^2 + (z1-1)^2  s.t.  z0 + z1 = 1
        let b = bounds(-10.0, 10.0, 2);
        let opts = AlOptions {
            tol_feas: 1e-9,
            max_outer: 12,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            pg: PgOptions { tol_stat: 1e-8, max_iter: 5000, armijo_c: 1e-4 },
        };
        let res = augmented_lagrangian(
            &[0.0, 0.0],
            &b,
            0,
            1,
            |z, st| {
                let h = z[0] + z[1] - 1.0;
                (z[0] - 1.0).powi(2)
                    + (z[1] - 1.0).powi(2)
                    + AlState::eq_term(h, st.eq_mult[0], st.penalty)
            },
            |z, st, g| {
                let h = z[0] + z[1] - 1.0;
                let s = AlState::eq_slope(h, st.eq_mult[0], st.penalty);
                g[0] = 2.0 * (z[0] - 1.0) + s;
                g[1] = 2.0 * (z[1] - 1.0) + s;
            },
            |z, _ineq, eq| {
                eq[0] = z[0] + z[1] - 1.0;
            },
            &opts,
        );
        assert!(res.converged, "violation {} stat {}", res.violation, res.stationarity);
        assert!((res.z[0] - 0.5).abs() < 1e-7);
        assert!((res.z[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn inequality_constraint_becomes_active() {
        // min (z-2)^2 s.t. z <= 1  (ineq form c = z - 1 <= 0)
        let b = bounds(-10.0, 10.0, 1);
        let opts = AlOptions {
            tol_feas: 1e-9,
            max_outer: 12,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            pg: PgOptions { tol_stat: 1e-8, max_iter: 5000, armijo_c: 1e-4 },
        };
        let res = augmented_lagrangian(
            &[0.0],
            &b,
            1,
            0,
            |z, st| {
                (z[0] - 2.0).powi(2) + AlState::ineq_term(z[0] - 1.0, st.ineq_mult[0], st.penalty)
            },
            |z, st, g| {
                g[0] = 2.0 * (z[0] - 2.0)
                    + AlState::ineq_slope(z[0] - 1.0, st.ineq_mult[0], st.penalty);
            },
            |z, ineq, _eq| {
                ineq[0] = z[0] - 1.0;
            },
            &opts,
        );
        assert!(res.converged, "violation {} stat {}", res.violation, res.stationarity);
        assert!((res.z[0] - 1.0).abs() < 1e-7, "z = {}", res.z[0]);
    }
}
