//! Model construction from structured text (TOML) configs.
//!
//! A config selects a model family via `variant` and parameterizes it:
//!
//! ```toml
//! variant = "oscillator"   # "graph" | "oscillator" | "growth"
//! omega0 = 1.0471975511965976
//! h = 1.0
//! x_max = 1.0
//! u_max = 0.1
//! x0 = [-0.0955, -0.0955]
//! ```
//!
//! Graph configs list states and transitions explicitly; embeddings default
//! to the numeric value of the label:
//!
//! ```toml
//! variant = "graph"
//! x0 = "-1"
//! [[states]]
//! label = "-1"
//! [[transitions]]
//! from = "-1"
//! input = "0"
//! to = "0"
//! cost = 1.0
//! ```

use serde::Deserialize;

use crate::discount::DiscountProfile;
use crate::error::{Error, Result};
use crate::model::{GraphModel, LabeledPoint, State, SystemModel, Transition};
use crate::presets::{self, Preset, OSCILLATOR_OMEGA0};

#[derive(Debug, Deserialize)]
struct RawPoint {
    label: String,
    embed: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct RawTransition {
    from: String,
    input: String,
    to: String,
    cost: f64,
}

#[derive(Debug, Deserialize)]
struct RawModel {
    variant: String,
    // graph
    states: Option<Vec<RawPoint>>,
    inputs: Option<Vec<RawPoint>>,
    transitions: Option<Vec<RawTransition>>,
    // oscillator
    omega0: Option<f64>,
    h: Option<f64>,
    x_max: Option<f64>,
    u_max: Option<f64>,
    // growth
    x_lo: Option<f64>,
    x_hi: Option<f64>,
    guard_margin: Option<f64>,
    // shared
    x0: Option<toml::Value>,
}

/// Parses a model config; unknown `variant`s and malformed keys are
/// reported with the TOML parser's line/column diagnostics where possible.
pub fn preset_from_toml(text: &str) -> Result<Preset> {
    let raw: RawModel = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut preset = match raw.variant.as_str() {
        "graph" => graph_from_raw(&raw)?,
        "oscillator" => presets::oscillator_with(
            raw.omega0.unwrap_or(OSCILLATOR_OMEGA0),
            raw.h.unwrap_or(1.0),
            raw.x_max.unwrap_or(1.0),
            raw.u_max.unwrap_or(0.1),
        ),
        "growth" => presets::growth_with(
            raw.x_lo.unwrap_or(0.1),
            raw.x_hi.unwrap_or(10.0),
            raw.guard_margin.unwrap_or(1e-6),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown variant `{other}` (expected graph, oscillator, or growth)"
            )))
        }
    };
    if let Some(x0) = &raw.x0 {
        preset.x0 = parse_x0(&preset.model, x0)?;
    }
    Ok(preset)
}

fn parse_x0(model: &SystemModel, value: &toml::Value) -> Result<State> {
    match (model, value) {
        (SystemModel::FiniteGraph(g), toml::Value::String(label)) => g.state(label),
        (SystemModel::Smooth(m), v) => {
            let vec = match v {
                toml::Value::Float(f) => vec![*f],
                toml::Value::Integer(i) => vec![*i as f64],
                toml::Value::Array(items) => items
                    .iter()
                    .map(|it| match it {
                        toml::Value::Float(f) => Ok(*f),
                        toml::Value::Integer(i) => Ok(*i as f64),
                        _ => Err(Error::Config("x0 entries must be numbers".into())),
                    })
                    .collect::<Result<Vec<f64>>>()?,
                _ => return Err(Error::Config("x0 must be a number or array".into())),
            };
            if vec.len() != m.state_dim {
                return Err(Error::Config(format!(
                    "x0 has dimension {}, model expects {}",
                    vec.len(),
                    m.state_dim
                )));
            }
            Ok(State::Vector(vec))
        }
        (SystemModel::FiniteGraph(_), _) => {
            Err(Error::Config("graph x0 must be a state label string".into()))
        }
    }
}

fn embed_for(point: &RawPoint) -> Result<Vec<f64>> {
    if let Some(e) = &point.embed {
        return Ok(e.clone());
    }
    point
        .label
        .parse::<f64>()
        .map(|v| vec![v])
        .map_err(|_| Error::Config(format!("label `{}` needs an explicit embed", point.label)))
}

fn graph_from_raw(raw: &RawModel) -> Result<Preset> {
    let rstates = raw
        .states
        .as_ref()
        .ok_or_else(|| Error::Config("graph variant needs [[states]]".into()))?;
    let rtrans = raw
        .transitions
        .as_ref()
        .ok_or_else(|| Error::Config("graph variant needs [[transitions]]".into()))?;
    let states: Vec<LabeledPoint> = rstates
        .iter()
        .map(|p| Ok(LabeledPoint { label: p.label.clone(), embed: embed_for(p)? }))
        .collect::<Result<_>>()?;
    // inputs may be listed explicitly or collected from the transitions
    let mut inputs: Vec<LabeledPoint> = Vec::new();
    if let Some(ri) = &raw.inputs {
        for p in ri {
            inputs.push(LabeledPoint { label: p.label.clone(), embed: embed_for(p)? });
        }
    } else {
        for t in rtrans {
            if !inputs.iter().any(|p| p.label == t.input) {
                inputs.push(LabeledPoint {
                    label: t.input.clone(),
                    embed: embed_for(&RawPoint { label: t.input.clone(), embed: None })?,
                });
            }
        }
    }
    let sidx = |label: &str| -> Result<usize> {
        states
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::Config(format!("transition references unknown state `{label}`")))
    };
    let iidx = |label: &str| -> Result<usize> {
        inputs
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| Error::Config(format!("transition references unknown input `{label}`")))
    };
    let transitions: Vec<Transition> = rtrans
        .iter()
        .map(|t| {
            Ok(Transition {
                from: sidx(&t.from)?,
                input: iidx(&t.input)?,
                to: sidx(&t.to)?,
                cost: t.cost,
            })
        })
        .collect::<Result<_>>()?;
    let model = SystemModel::FiniteGraph(GraphModel::new(states, inputs, transitions)?);
    Ok(Preset { name: "custom-graph".into(), model, x0: State::Node(0), scan_pmax: 4 })
}

/// Parses the `discount` config value: `"constant"`, `"linear"`, or an
/// array of weights.
pub fn discount_from_value(value: &toml::Value) -> Result<DiscountProfile> {
    match value {
        toml::Value::String(s) => match s.as_str() {
            "constant" => Ok(DiscountProfile::Constant),
            "linear" => Ok(DiscountProfile::Linear),
            other => Err(Error::Config(format!(
                "unknown discount `{other}` (expected constant, linear, or a weight array)"
            ))),
        },
        toml::Value::Array(items) => {
            let weights = items
                .iter()
                .map(|it| match it {
                    toml::Value::Float(f) => Ok(*f),
                    toml::Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Error::Config("discount weights must be numbers".into())),
                })
                .collect::<Result<Vec<f64>>>()?;
            DiscountProfile::custom(weights)
        }
        _ => Err(Error::Config("discount must be a string or weight array".into())),
    }
}
