use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Writes CSV tables (and optional JSON mirrors) into one directory.
pub struct Sink {
    dir: PathBuf,
    json: bool,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, json: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            json,
            written: Vec::new(),
        })
    }

    pub fn table<R: Serialize>(&mut self, stem: &str, rows: &[R]) -> Result<(), CliError> {
        let path = self.dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(e.to_string()))?;
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        if self.json {
            self.json_value(stem, &rows)?;
        }
        Ok(())
    }

    /// JSON-only output, e.g. summaries.
    pub fn json_value<T: Serialize + ?Sized>(&mut self, stem: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(format!("{stem}.json"));
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), value)
            .map_err(|e| CliError::Io(e.to_string()))?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// File-name fragment for a grid value: `122.5` -> `122.5`, `-1` -> `m1`.
pub fn tag(v: f64) -> String {
    format!("{v}").replace('-', "m")
}

#[derive(Debug, Serialize)]
pub struct RiskRow {
    pub k: usize,
    pub t: f64,
    pub theta: f64,
    pub sigma: f64,
    pub s_mean: f64,
    pub s_low: f64,
    pub s_high: f64,
    pub miss_risk_to_date: f64,
}

#[derive(Debug, Serialize)]
pub struct RiskSummaryRow {
    pub rate: f64,
    pub miss_risk: f64,
}

/// Policy export; `w` is present only for augmented models.
#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyRow {
    pub k: usize,
    pub x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<i64>,
    pub i: usize,
    pub action: usize,
    #[serde(rename = "R_of_action", default)]
    pub rate: f64,
}

#[derive(Debug, Serialize)]
pub struct ValueRow {
    pub i: usize,
    pub x: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<i64>,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_E")]
    pub j_e: f64,
    #[serde(rename = "J_I")]
    pub j_i: f64,
    #[serde(rename = "J_0")]
    pub j_0: f64,
}

#[derive(Debug, Serialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t: f64,
    pub x: usize,
    pub w: i64,
    pub s: f64,
    pub action: usize,
    #[serde(rename = "R")]
    pub rate: f64,
    pub stage_reward: f64,
    pub cumulative_reward: f64,
    pub done: bool,
}

#[derive(Debug, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub elastic_utility: f64,
    pub inelastic_utility: f64,
    pub total_utility: f64,
}

#[derive(Debug, Serialize)]
pub struct RateBoundRow {
    #[serde(rename = "R0")]
    pub r0: f64,
    #[serde(rename = "B_true")]
    pub b_true: f64,
    pub elastic_utility_nominal_policy: f64,
    pub inelastic_utility_nominal_policy: f64,
    pub elastic_utility_omniscient: f64,
    pub inelastic_utility_omniscient: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub states: usize,
    pub actions: usize,
    pub lambda_i: f64,
    pub utility: f64,
    pub elastic_utility: f64,
    pub inelastic_utility: f64,
    pub rate_bound_cost: f64,
    pub miss_risk: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SimSummaryRow {
    pub count: usize,
    pub seed: u64,
    pub miss_rate: f64,
    pub miss_rate_half_width: f64,
    pub mean_total_reward: f64,
    pub total_reward_half_width: f64,
    pub mean_elastic_reward: f64,
    pub elastic_reward_half_width: f64,
    pub mean_inelastic_reward: f64,
    pub inelastic_reward_half_width: f64,
}
