use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::args::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Some grid points failed and were interpolated.
    Partial,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub path: String,
    pub expr: Option<String>,
    pub blocks: Option<Vec<usize>>,
    pub target: Option<usize>,
    pub symbols: Vec<String>,
    pub settings: Option<Settings>,
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationStats {
    pub min: usize,
    pub median: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<String>,
    pub config: ConfigEcho,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub grid_size: Option<usize>,
    pub epsilon: Option<f64>,
    pub iterations: Option<IterationStats>,
    pub failed_points: Vec<f64>,
    pub mass: Option<f64>,
    pub min_raw: Option<f64>,
    /// First four moments of the normalized density.
    pub moments: Option<Vec<f64>>,
    pub eigenvalue_count: Option<usize>,
    pub ks_distance: Option<f64>,
}

impl RunReport {
    pub fn new(command: &str, path: &Path, threads: usize) -> Self {
        RunReport {
            command: command.to_string(),
            status: Status::Ok,
            exit_code: 0,
            error: None,
            config: ConfigEcho {
                path: path.display().to_string(),
                expr: None,
                blocks: None,
                target: None,
                symbols: Vec::new(),
                settings: None,
                threads,
            },
            timings: BTreeMap::new(),
            grid_size: None,
            epsilon: None,
            iterations: None,
            failed_points: Vec::new(),
            mass: None,
            min_raw: None,
            moments: None,
            eigenvalue_count: None,
            ks_distance: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
