//! Browser bindings for the disclosure simulator. Each export takes plain
//! values and returns JSON text; the `*_json` functions behind them are
//! ordinary Rust so they can be tested natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use disclosure_sim::agent::epsilon;
use disclosure_sim::config::SimConfig;
use disclosure_sim::dataset::{synthetic, SyntheticSpec};
use disclosure_sim::engine::{calibrate, privacy_params, Prepared, RecommenderPlatform, Simulation};
use disclosure_sim::eval::EpochMetrics;
use disclosure_sim::mechanism::{percentage_split, AttrMode, Granularity, MechanismSpec, Strategy};
use disclosure_sim::recommender::ModelSpec;

/// Vectors beyond this are counted but not listed.
const MAX_LISTED: usize = 256;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MechanismPreview {
    pub segments: Vec<usize>,
    pub size: usize,
    pub vectors: Vec<String>,
}

/// Segment sizes for a history of `n_behaviors`, and the choice space.
pub fn mechanism_preview_json(strategy: &str, p: &str, n_behaviors: usize, attr_units: usize) -> Result<String, String> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let p: Granularity = p.parse().map_err(err)?;
    let segments = percentage_split(n_behaviors, p).map_err(err)?.iter().map(|r| r.len()).collect();
    let space = disclosure_sim::mechanism::build_choice_space(strategy, attr_units, p.segments()).map_err(err)?;
    let preview = MechanismPreview {
        segments,
        size: space.len(),
        vectors: space.vectors.iter().take(MAX_LISTED).map(|v| v.to_string()).collect(),
    };
    serde_json::to_string(&preview).map_err(err)
}

pub fn epsilon_curve(space_size: usize, epochs: usize) -> Vec<f64> {
    (0..epochs).map(|t| epsilon(t, space_size.max(1))).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyParams {
    pub users: usize,
    pub items: usize,
    pub strategy: String,
    pub p: String,
    pub model: String,
    pub epochs: usize,
    pub seed: u64,
    /// Multipliers of the non-sensitive, normal and sensitive groups.
    pub w: [f64; 3],
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            users: 60,
            items: 80,
            strategy: "separate".into(),
            p: "1/4".into(),
            model: "popularity".into(),
            epochs: 60,
            seed: 1,
            w: [0.0, 1.0, 10.0],
        }
    }
}

/// Runs a small synthetic population and returns per-epoch group metrics.
pub fn toy_simulation_json(params: &str) -> Result<String, String> {
    let params: ToyParams = serde_json::from_str(params).map_err(err)?;
    if params.users < 3 || params.users > 500 || params.items < 10 || params.items > 1000 {
        return Err("users must be in 3..=500 and items in 10..=1000".into());
    }
    if params.epochs == 0 || params.epochs > 1000 {
        return Err("epochs must be in 1..=1000".into());
    }
    let model: ModelSpec = params.model.parse().map_err(err)?;
    let mechanism = MechanismSpec {
        strategy: params.strategy.parse().map_err(err)?,
        p: params.p.parse().map_err(err)?,
        attr_mode: AttrMode::None,
    };
    let histories = synthetic(&SyntheticSpec {
        users: params.users,
        items: params.items,
        seed: params.seed,
        ..SyntheticSpec::default()
    });
    let prepared = Prepared::new(histories, &mechanism).map_err(err)?;

    let mut config = SimConfig::new("synthetic", params.epochs);
    config.mechanism = mechanism;
    config.model = model.clone();
    config.benchmark = model.clone();
    config.seed = params.seed;
    for (g, w) in config.groups.iter_mut().zip(params.w) {
        g.w = w;
    }
    config.validate().map_err(err)?;

    let calibration = calibrate(&prepared, &config).map_err(err)?;
    let labels: Vec<String> = config.groups.iter().map(|g| g.label.clone()).collect();
    let privacy = privacy_params(&prepared, &calibration, &labels).map_err(err)?;
    let platform = RecommenderPlatform::new(&prepared, model, config.eval.clone(), config.seed);
    let mut sim = Simulation::new(&prepared, privacy, labels, platform, config.seed).map_err(err)?;
    let series: Vec<EpochMetrics> = (0..params.epochs)
        .map(|t| sim.run_epoch(t).map(|o| o.metrics))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    serde_json::to_string(&series).map_err(err)
}

#[wasm_bindgen(js_name = mechanismPreview)]
pub fn mechanism_preview(strategy: &str, p: &str, n_behaviors: usize, attr_units: usize) -> Result<String, JsError> {
    mechanism_preview_json(strategy, p, n_behaviors, attr_units).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = epsilonCurve)]
pub fn epsilon_curve_js(space_size: usize, epochs: usize) -> Vec<f64> {
    epsilon_curve(space_size, epochs)
}

#[wasm_bindgen(js_name = toySimulation)]
pub fn toy_simulation(params: &str) -> Result<String, JsError> {
    toy_simulation_json(params).map_err(|e| JsError::new(&e))
}
