//! Flat key-value configuration shared by every subcommand.
//!
//! One namespace covers the fitting, topology, simulation, lifting and
//! service parameters. Values come from an optional TOML file and are then
//! overridden by `key=value` pairs from the command line.

use std::path::Path;

use sandsim_core::fitting::FitConfig;
use sandsim_physics::{LiftConfig, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

/// Interactive service parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    /// Frames pushed to each client per second.
    pub frame_rate: f64,
    /// Simulation steps between two published frames.
    pub steps_per_frame: usize,
    /// Steps between two progressive deposits.
    pub settle_steps: usize,
    /// Kernels revealed per script event.
    pub kernels_per_frame: usize,
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            frame_rate: 20.0,
            steps_per_frame: 4,
            settle_steps: 20,
            kernels_per_frame: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub fit: FitConfig,
    pub sim: SimConfig,
    pub lift: LiftConfig,
    pub serve: ServeConfig,
}

fn keys_of<T: Serialize>(value: &T) -> Table {
    Table::try_from(value).expect("config structs serialize to tables")
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn extract<T: DeserializeOwned>(section: &str, table: Table) -> Result<T, UsageError> {
    Value::Table(table)
        .try_into()
        .map_err(|e| UsageError(format!("invalid {section} setting: {e}")))
}

impl Settings {
    /// Merges `file` (if any) and `overrides` over the defaults.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, UsageError> {
        let mut merged = Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            merged = toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        }
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| UsageError(format!("override {kv:?} is not key=value")))?;
            merged.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        Self::from_table(merged)
    }

    pub fn from_table(merged: Table) -> Result<Self, UsageError> {
        let defaults = Settings::default();
        let sections = [
            keys_of(&defaults.fit),
            keys_of(&defaults.sim),
            keys_of(&defaults.lift),
            keys_of(&defaults.serve),
        ];
        let mut parts = [Table::new(), Table::new(), Table::new(), Table::new()];
        for (k, v) in merged {
            let Some(i) = sections.iter().position(|s| s.contains_key(&k)) else {
                return Err(UsageError(format!("unknown config key {k:?}")));
            };
            parts[i].insert(k, v);
        }
        let [fit, sim, lift, serve] = parts;
        let settings = Settings {
            fit: extract("fit", fit)?,
            sim: extract("simulation", sim)?,
            lift: extract("lift", lift)?,
            serve: extract("serve", serve)?,
        };
        settings.fit.validate().map_err(|e| UsageError(e.to_string()))?;
        settings.sim.validate().map_err(|e| UsageError(e.to_string()))?;
        settings.lift.validate().map_err(|e| UsageError(e.to_string()))?;
        if !(settings.serve.frame_rate > 0.0) || settings.serve.kernels_per_frame == 0 {
            return Err(UsageError("frame_rate and kernels_per_frame must be positive".into()));
        }
        Ok(settings)
    }

    /// Every accepted key with its current value, as a flat TOML document.
    pub fn to_toml(&self) -> String {
        let mut all = keys_of(&self.fit);
        all.extend(keys_of(&self.sim));
        all.extend(keys_of(&self.lift));
        all.extend(keys_of(&self.serve));
        toml::to_string(&all).expect("flat table serializes")
    }
}
