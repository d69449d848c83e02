//! The three shipped example systems.
//!
//! * `graph` — a four-transition system on states `{-1, 0, 1}` whose best
//!   behavior is the two-cycle between `0` and `1` with average cost 3/4.
//!   Waiting at `-1` costs 1 per step, moving to `0` costs 1, the cheap
//!   edge `0 -> 1` costs 0 and the return edge costs 1.5. From `-1` the
//!   "move" transition is declared before the "wait" self-loop, so exact
//!   ties (which occur at horizon 1) resolve toward making progress.
//! * `oscillator` — an exactly discretized planar harmonic oscillator with
//!   box constraints and stage cost `x1^3`; its best orbit has period 6.
//! * `growth` — a scalar capital-accumulation model `x+ = u` with stage
//!   cost `-log(5 x^0.34 - u)`, best operated at a steady state.

use crate::error::{Error, Result};
use crate::model::{
    GraphModel, LabeledPoint, OrbitInitHint, SmoothModel, State, SystemModel, Transition,
};

/// A named model plus the companion data experiments need.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: String,
    pub model: SystemModel,
    /// Default initial state of the closed-loop experiments.
    pub x0: State,
    /// Period-scan depth that comfortably covers the best period.
    pub scan_pmax: usize,
}

pub fn by_name(name: &str) -> Result<Preset> {
    match name {
        "graph" => Ok(graph()),
        "oscillator" => Ok(oscillator()),
        "growth" => Ok(growth()),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected graph, oscillator, or growth)"
        ))),
    }
}

pub fn graph() -> Preset {
    let states = vec![
        LabeledPoint { label: "-1".into(), embed: vec![-1.0] },
        LabeledPoint { label: "0".into(), embed: vec![0.0] },
        LabeledPoint { label: "1".into(), embed: vec![1.0] },
    ];
    let inputs = vec![
        LabeledPoint { label: "-1".into(), embed: vec![-1.0] },
        LabeledPoint { label: "0".into(), embed: vec![0.0] },
        LabeledPoint { label: "1".into(), embed: vec![1.0] },
    ];
    let transitions = vec![
        // from -1: move first, then wait, so horizon-1 ties prefer moving
        Transition { from: 0, input: 1, to: 1, cost: 1.0 },
        Transition { from: 0, input: 0, to: 0, cost: 1.0 },
        Transition { from: 1, input: 2, to: 2, cost: 0.0 },
        Transition { from: 2, input: 1, to: 1, cost: 1.5 },
    ];
    let model = SystemModel::FiniteGraph(
        GraphModel::new(states, inputs, transitions).expect("graph preset is valid"),
    );
    Preset { name: "graph".into(), model, x0: State::Node(0), scan_pmax: 4 }
}

/// Angular frequency of the shipped oscillator: one sixth of a turn per step.
pub const OSCILLATOR_OMEGA0: f64 = std::f64::consts::TAU / 6.0;

pub fn oscillator() -> Preset {
    oscillator_with(OSCILLATOR_OMEGA0, 1.0, 1.0, 0.1)
}

/// Planar harmonic oscillator, discretized exactly over a step of length
/// `h`: the state rotates by `h * omega0` per step and the input enters
/// through the zero-order-hold integral of the rotation.
pub fn oscillator_with(omega0: f64, h: f64, x_max: f64, u_max: f64) -> Preset {
    let c = (h * omega0).cos();
    let s = (h * omega0).sin();
    let a = [[c, -s], [s, c]];
    let b = [[s / omega0, (c - 1.0) / omega0], [(1.0 - c) / omega0, s / omega0]];
    let dyn_a = a;
    let dyn_b = b;
    let model = SmoothModel::builder(2, 2)
        .dynamics(move |x, u| {
            vec![
                dyn_a[0][0] * x[0] + dyn_a[0][1] * x[1] + dyn_b[0][0] * u[0] + dyn_b[0][1] * u[1],
                dyn_a[1][0] * x[0] + dyn_a[1][1] * x[1] + dyn_b[1][0] * u[0] + dyn_b[1][1] * u[1],
            ]
        })
        .dynamics_jacobian(move |_x, _u| {
            (
                vec![dyn_a[0][0], dyn_a[0][1], dyn_a[1][0], dyn_a[1][1]],
                vec![dyn_b[0][0], dyn_b[0][1], dyn_b[1][0], dyn_b[1][1]],
            )
        })
        .stage_cost(|x, _u| x[0] * x[0] * x[0])
        .cost_gradient(|x, _u| (vec![3.0 * x[0] * x[0], 0.0], vec![0.0, 0.0]))
        .state_bounds(vec![-x_max, -x_max], vec![x_max, x_max])
        .input_bounds(vec![-u_max, -u_max], vec![u_max, u_max])
        .cost_floor(-(x_max * x_max * x_max))
        .orbit_init(OrbitInitHint::PlanarCircle)
        .build()
        .expect("oscillator preset is valid");
    // the corner state whose hold input sits exactly on the input bound
    let r = u_max / omega0;
    Preset {
        name: "oscillator".into(),
        model: SystemModel::Smooth(model),
        x0: State::Vector(vec![-r, -r]),
        scan_pmax: 12,
    }
}

pub fn growth() -> Preset {
    growth_with(0.1, 10.0, 1e-6)
}

/// Scalar growth model `x+ = u` with production `5 x^0.34` and stage cost
/// `-log(5 x^0.34 - u)`; the guard keeps the log argument above `margin`.
/// State and input share the box `[lo, hi]`.
pub fn growth_with(lo: f64, hi: f64, margin: f64) -> Preset {
    const SCALE: f64 = 5.0;
    const EXPONENT: f64 = 0.34;
    let production = |x: f64| SCALE * x.powf(EXPONENT);
    let model = SmoothModel::builder(1, 1)
        .dynamics(|_x, u| vec![u[0]])
        .dynamics_jacobian(|_x, _u| (vec![0.0], vec![1.0]))
        .stage_cost(move |x, u| -(production(x[0]) - u[0]).ln())
        .cost_gradient(move |x, u| {
            let g = production(x[0]) - u[0];
            let dgdx = SCALE * EXPONENT * x[0].powf(EXPONENT - 1.0);
            (vec![-dgdx / g], vec![1.0 / g])
        })
        .domain_guard(move |x, u| production(x[0]) - u[0], margin)
        .guard_gradient(move |x, _u| {
            (vec![SCALE * EXPONENT * x[0].powf(EXPONENT - 1.0)], vec![-1.0])
        })
        .state_bounds(vec![lo], vec![hi])
        .input_bounds(vec![lo], vec![hi])
        .cost_floor(-(production(hi) - lo).ln())
        .build()
        .expect("growth preset is valid");
    Preset {
        name: "growth".into(),
        model: SystemModel::Smooth(model),
        x0: State::Vector(vec![2.2344]),
        scan_pmax: 4,
    }
}
