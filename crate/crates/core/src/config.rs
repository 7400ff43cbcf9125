//! JSON experiment configuration: parsing, field-level validation, and
//! conversion into the validated domain objects.
//!
//! All physical quantities are plain numbers in consistent units (arc length
//! per time unit for velocities, etc.). See `configs/paper_1x2.json` for a
//! complete example.

use crate::dynamics::DiscretizationGrid;
use crate::lower_level::{sample_demand_basis, ArcLevels, DemandBasis, DemandStepSpec};
use crate::network::{ArcSpec, NetworkTree};
use crate::operators::ObservationKind;
use crate::upper_level::{DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub time_horizon: f64,
    pub dt: f64,
    pub sigma: f64,
    pub demand_basis: DemandBasisConfig,
    pub observations: ObservationsConfig,
    pub settings: Vec<SettingConfig>,
    #[serde(default = "default_qp_tol")]
    pub qp_tol: f64,
    #[serde(default = "default_qp_max_iter")]
    pub qp_max_iter: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_qp_tol() -> f64 {
    DEFAULT_QP_TOL
}

fn default_qp_max_iter() -> usize {
    DEFAULT_QP_MAX_ITER
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arc_length: f64,
    pub arcs: Vec<ArcConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcConfig {
    pub id: usize,
    pub from: usize,
    pub velocity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandBasisConfig {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<ArcLevelsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcLevelsConfig {
    pub arc: usize,
    pub delta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationsConfig {
    /// Weight rows per demand arc; row r of every arc together forms the
    /// r-th observed scenario. The first row doubles as the benchmark.
    pub beta_rows: Vec<ArcBetaRowsConfig>,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcBetaRowsConfig {
    pub arc: usize,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub name: String,
    pub kind: String,
    pub kappa: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_hat: Option<f64>,
}

/// Everything needed to run the experiment, built from a validated config.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub net: NetworkTree,
    pub grid: DiscretizationGrid,
    pub basis: DemandBasis,
    pub sigma: f64,
    /// Flattened weight rows, blocks ordered by ascending demand arc.
    pub beta_rows: Vec<Vec<f64>>,
    pub noise_amplitude: f64,
    pub seed: u64,
    pub settings: Vec<PreparedSetting>,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub output_dir: String,
}

#[derive(Debug, Clone)]
pub struct PreparedSetting {
    pub name: String,
    pub kind: ObservationKind,
    pub kappa: Vec<f64>,
    pub t_hat: Option<f64>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        // Schema-level defects (missing/unknown fields) are reported as
        // validation problems so the offending field is named; everything
        // else is a parse failure.
        if msg.starts_with("missing field") || msg.starts_with("unknown field") {
            ConfigError::Validation(vec![msg])
        } else {
            ConfigError::Parse(msg)
        }
    })
}

fn parse_kind(raw: &str) -> Option<ObservationKind> {
    match raw {
        "C1" => Some(ObservationKind::C1),
        "C2" => Some(ObservationKind::C2),
        "C3" => Some(ObservationKind::C3),
        _ => None,
    }
}

/// Validate a parsed config and build the domain objects, collecting every
/// detectable problem with its field path.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<PreparedExperiment, ConfigError> {
    let mut errors: Vec<String> = Vec::new();

    let specs: Vec<ArcSpec> = cfg
        .network
        .arcs
        .iter()
        .map(|a| ArcSpec {
            id: a.id,
            start: a.from,
            velocity: a.velocity,
            alpha: a.alpha,
        })
        .collect();
    let net = match NetworkTree::build_tree(&specs, cfg.network.arc_length) {
        Ok(net) => Some(net),
        Err(e) => {
            errors.push(format!("network: {e}"));
            None
        }
    };

    if cfg.sigma <= 0.0 || !cfg.sigma.is_finite() {
        errors.push(format!("sigma: must be positive, got {}", cfg.sigma));
    }

    let grid =
        net.as_ref().and_then(
            |net| match DiscretizationGrid::new(net, cfg.dt, cfg.time_horizon) {
                Ok(grid) => Some(grid),
                Err(e) => {
                    errors.push(format!("dt/time_horizon: {e}"));
                    None
                }
            },
        );

    let step_spec = DemandStepSpec {
        breakpoints: cfg.demand_basis.breakpoints.clone(),
        levels: cfg
            .demand_basis
            .levels
            .iter()
            .map(|l| ArcLevels {
                arc: l.arc,
                delta: l.delta.clone(),
            })
            .collect(),
    };
    let basis = grid
        .as_ref()
        .and_then(|grid| match sample_demand_basis(&step_spec, grid) {
            Ok(basis) => Some(basis),
            Err(e) => {
                errors.push(format!("demand_basis: {e}"));
                None
            }
        });
    if let (Some(net), Some(basis)) = (net.as_ref(), basis.as_ref()) {
        if basis.arcs() != net.demand_arcs() {
            errors.push(format!(
                "demand_basis.levels: covers arcs {:?}, demand arcs are {:?}",
                basis.arcs(),
                net.demand_arcs()
            ));
        }
    }

    // Flatten the observation weight rows into block order.
    let mut beta_rows: Vec<Vec<f64>> = Vec::new();
    if let (Some(net), Some(basis)) = (net.as_ref(), basis.as_ref()) {
        let m = basis.m();
        let mut per_arc = cfg.observations.beta_rows.clone();
        per_arc.sort_by_key(|r| r.arc);
        let arcs: Vec<usize> = per_arc.iter().map(|r| r.arc).collect();
        if arcs != net.demand_arcs() {
            errors.push(format!(
                "observations.beta_rows: covers arcs {arcs:?}, demand arcs are {:?}",
                net.demand_arcs()
            ));
        } else if per_arc.is_empty() || per_arc[0].rows.is_empty() {
            errors.push("observations.beta_rows: need at least one row".into());
        } else {
            let p = per_arc[0].rows.len();
            let mut consistent = true;
            for entry in &per_arc {
                if entry.rows.len() != p {
                    errors.push(format!(
                        "observations.beta_rows[arc {}]: {} rows, expected {p}",
                        entry.arc,
                        entry.rows.len()
                    ));
                    consistent = false;
                }
                for (r, row) in entry.rows.iter().enumerate() {
                    if row.len() != m {
                        errors.push(format!(
                            "observations.beta_rows[arc {}][{r}]: length {}, expected {m}",
                            entry.arc,
                            row.len()
                        ));
                        consistent = false;
                    } else if row.iter().any(|v| !v.is_finite()) {
                        errors.push(format!(
                            "observations.beta_rows[arc {}][{r}]: non-finite entry",
                            entry.arc
                        ));
                        consistent = false;
                    }
                }
            }
            if consistent {
                for r in 0..p {
                    let mut row = Vec::with_capacity(m * per_arc.len());
                    for entry in &per_arc {
                        row.extend_from_slice(&entry.rows[r]);
                    }
                    beta_rows.push(row);
                }
            }
        }
    }

    if cfg.observations.noise_amplitude < 0.0 || !cfg.observations.noise_amplitude.is_finite() {
        errors.push(format!(
            "observations.noise_amplitude: must be nonnegative, got {}",
            cfg.observations.noise_amplitude
        ));
    }

    let mut settings = Vec::new();
    let mut seen_names = std::collections::BTreeSet::new();
    for (i, setting) in cfg.settings.iter().enumerate() {
        let path = format!("settings[{i}]");
        if setting.name.is_empty()
            || !setting
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            errors.push(format!(
                "{path}.name: must be nonempty and use only [A-Za-z0-9_-], got {:?}",
                setting.name
            ));
        } else if !seen_names.insert(setting.name.clone()) {
            errors.push(format!("{path}.name: duplicate name {:?}", setting.name));
        }
        let kind = match parse_kind(&setting.kind) {
            Some(kind) => kind,
            None => {
                errors.push(format!(
                    "{path}.kind: expected C1, C2 or C3, got {:?}",
                    setting.kind
                ));
                continue;
            }
        };
        if let Some(net) = net.as_ref() {
            if setting.kappa.len() != net.arc_count() {
                errors.push(format!(
                    "{path}.kappa: {} weights for {} arcs",
                    setting.kappa.len(),
                    net.arc_count()
                ));
            }
        }
        if setting.kappa.iter().any(|k| !k.is_finite() || *k < 0.0) {
            errors.push(format!("{path}.kappa: weights must be nonnegative"));
        }
        match (kind, setting.t_hat) {
            (ObservationKind::C3, None) => {
                errors.push(format!("{path}.t_hat: required for kind C3"));
            }
            (ObservationKind::C3, Some(t_hat)) if !(0.0..cfg.time_horizon).contains(&t_hat) => {
                errors.push(format!(
                    "{path}.t_hat: {t_hat} outside [0, {})",
                    cfg.time_horizon
                ));
            }
            _ => {}
        }
        settings.push(PreparedSetting {
            name: setting.name.clone(),
            kind,
            kappa: setting.kappa.clone(),
            t_hat: setting.t_hat,
        });
    }

    if cfg.qp_tol <= 0.0 || !cfg.qp_tol.is_finite() {
        errors.push(format!("qp_tol: must be positive, got {}", cfg.qp_tol));
    }
    if cfg.qp_max_iter == 0 {
        errors.push("qp_max_iter: must be positive".into());
    }

    if !errors.is_empty() {
        return Err(ConfigError::Validation(errors));
    }
    Ok(PreparedExperiment {
        net: net.unwrap(),
        grid: grid.unwrap(),
        basis: basis.unwrap(),
        sigma: cfg.sigma,
        beta_rows,
        noise_amplitude: cfg.observations.noise_amplitude,
        seed: cfg.observations.seed,
        settings,
        qp_tol: cfg.qp_tol,
        qp_max_iter: cfg.qp_max_iter,
        output_dir: cfg.output_dir.clone(),
    })
}
