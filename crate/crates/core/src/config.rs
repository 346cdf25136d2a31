//! Declarative experiment description and runtime parameter access.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::SimState;
use crate::error::{Error, Result};
use crate::hypernet::HyperParams;
use crate::neuroevo::{EvolutionRates, GenomePool, POOL_CAPACITY};
use crate::physics::PhysicsParams;
use crate::substrate::{ChannelSpec, DisplayNorm, Substrate, COMMUNICATION, ENERGY, INFRASTRUCTURE};

pub const MIN_SIDE: usize = 4;
/// Frame headers carry dimensions as u16.
pub const MAX_SIDE: usize = u16::MAX as usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { width: 256, height: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: u64,
    /// Metrics cadence in steps; 0 disables sampling.
    pub metrics_every: u64,
    /// Snapshot cadence in steps; 0 disables periodic snapshots.
    pub snapshot_every: u64,
    pub frame_fps: u32,
    /// Channel analyzed by MSC.
    pub msc_channel: String,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            metrics_every: 10,
            snapshot_every: 0,
            frame_fps: 10,
            msc_channel: INFRASTRUCTURE.to_string(),
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".to_string(),
            port: 8080,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub seed: u64,
    pub initial_population: usize,
    /// Channel table. Must contain energy (1), infrastructure (1) and
    /// communication (3); further channels are carried but not sensed.
    pub channels: Vec<ChannelSpec>,
    pub physics: PhysicsParams,
    pub evolution: EvolutionRates,
    pub hypernet: HyperParams,
    pub run: RunConfig,
    pub display: DisplayNorm,
    pub serve: ServeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            seed: 0,
            initial_population: 64,
            channels: ChannelSpec::ecosystem(),
            physics: PhysicsParams::default(),
            evolution: EvolutionRates::default(),
            hypernet: HyperParams::default(),
            run: RunConfig::default(),
            display: DisplayNorm::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("grid.width", self.grid.width), ("grid.height", self.grid.height)] {
            if v < MIN_SIDE {
                return Err(Error::config(name, format!("must be ≥ {MIN_SIDE}")));
            }
            if v > MAX_SIDE {
                return Err(Error::config(name, format!("must be ≤ {MAX_SIDE}")));
            }
        }
        let cells = self.grid.width * self.grid.height;
        if self.initial_population > POOL_CAPACITY.min(cells) {
            return Err(Error::config(
                "initial_population",
                format!("must be ≤ {}", POOL_CAPACITY.min(cells)),
            ));
        }
        for (name, arity) in [(ENERGY, 1), (INFRASTRUCTURE, 1), (COMMUNICATION, 3)] {
            match self.channels.iter().find(|c| c.name == name) {
                None => return Err(Error::config("channels", format!("missing required channel {name}"))),
                Some(c) if c.arity != arity => {
                    return Err(Error::config("channels", format!("{name} must have arity {arity}")))
                }
                _ => {}
            }
        }
        crate::substrate::ChannelLayout::new(self.channels.clone())
            .map_err(|e| Error::config("channels", e.to_string()))?;
        if !self.channels.iter().any(|c| c.name == self.run.msc_channel) {
            return Err(Error::config(
                "run.msc_channel",
                format!("names no channel: {}", self.run.msc_channel),
            ));
        }
        if self.run.frame_fps == 0 || self.run.frame_fps > 240 {
            return Err(Error::config("run.frame_fps", "must be in 1..=240"));
        }
        for (name, v) in [("display.energy", self.display.energy), ("display.infrastructure", self.display.infrastructure)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be > 0"));
            }
        }
        self.physics.validate(cells)?;
        self.evolution.validate()?;
        self.hypernet.validate()
    }

    /// Fresh simulation at step 0 with the initial population seeded.
    pub fn build(&self) -> Result<SimState> {
        self.validate()?;
        let substrate = Substrate::new(self.grid.width, self.grid.height, self.channels.clone())?;
        let pool = GenomePool::new(POOL_CAPACITY, self.hypernet.clone());
        let mut state = SimState::from_parts(
            substrate,
            pool,
            self.physics.clone(),
            self.evolution.clone(),
            self.seed,
        )?;
        if self.run.workers > 0 {
            state.set_workers(self.run.workers)?;
        }
        state.seed_initial_population(self.initial_population)?;
        Ok(state)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        Error::Config { path: key, msg } if key.is_empty() => {
            Error::config(path.display().to_string(), msg)
        }
        other => other,
    })
}

/// Sections of the running state that accept live numeric changes.
const LIVE_SECTIONS: [&str; 2] = ["physics", "evolution"];

fn set_field<T: Serialize + DeserializeOwned>(value: &T, section: &str, field: &str, x: f64) -> Result<T> {
    let path = format!("{section}.{field}");
    let mut tree = serde_json::to_value(value)?;
    let slot = tree
        .as_object_mut()
        .and_then(|m| m.get_mut(field))
        .ok_or_else(|| Error::config(&path, "is not a parameter"))?;
    if !slot.is_number() {
        return Err(Error::config(&path, "is not numeric"));
    }
    *slot = serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .ok_or_else(|| Error::config(&path, "must be finite"))?;
    serde_json::from_value(tree).map_err(|e| Error::config(&path, e.to_string()))
}

/// Change one numeric parameter, e.g. `physics.cycle_amplitude`. The new
/// value is validated before it replaces the old one and is seen by the
/// next step.
pub fn set_param(state: &mut SimState, path: &str, value: f64) -> Result<()> {
    let (section, field) = path
        .split_once('.')
        .ok_or_else(|| Error::config(path, "is not a parameter"))?;
    match section {
        "physics" => {
            let next = set_field(&state.physics, section, field, value)?;
            next.validate(state.substrate.cells())?;
            state.physics = next;
        }
        "evolution" => {
            let next = set_field(&state.evolution, section, field, value)?;
            next.validate()?;
            state.evolution = next;
        }
        _ => {
            return Err(Error::config(
                path,
                format!("cannot be changed at runtime (adjustable: {})", LIVE_SECTIONS.join(", ")),
            ))
        }
    }
    Ok(())
}

/// Current numeric parameters as `(path, value)` pairs.
pub fn param_values(state: &SimState) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let sections = [
        ("physics", serde_json::to_value(&state.physics)),
        ("evolution", serde_json::to_value(&state.evolution)),
    ];
    for (name, tree) in sections {
        if let Ok(serde_json::Value::Object(map)) = tree {
            for (k, v) in map {
                if let Some(x) = v.as_f64() {
                    out.push((format!("{name}.{k}"), x));
                }
            }
        }
    }
    out
}
