//! Layered configuration: defaults, then the TOML config file, then
//! `ECORE_*` environment variables, then CLI flags (flags are bound to
//! their environment variables by clap, so precedence falls out of the
//! merge order here).

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ecore::harness::{DeterministicOverheads, ReplayConfig, SfConfig};
use ecore::{
    BackendMode, EstimatorKind, Fidelity, GroupRule, GroupRules, IdleConfig, ProfileTable, Strategy,
};

use crate::CommonArgs;

#[derive(Debug)]
pub enum AppError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Validation(msg) => write!(f, "{msg}"),
            AppError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ecore::ProfileError> for AppError {
    fn from(e: ecore::ProfileError) -> Self {
        AppError::Validation(e.to_string())
    }
}

impl From<ecore::WorkloadError> for AppError {
    fn from(e: ecore::WorkloadError) -> Self {
        AppError::Validation(e.to_string())
    }
}

impl From<ecore::HarnessError> for AppError {
    fn from(e: ecore::HarnessError) -> Self {
        match e {
            ecore::HarnessError::Config(msg) => AppError::Validation(msg),
            other => AppError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub profile: ProfileSection,
    pub rules: Option<Vec<GroupRule>>,
    pub routing: RoutingSection,
    pub estimator: EstimatorSection,
    pub backend: BackendSection,
    pub gateway: GatewaySection,
    pub idle: IdleConfig,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingSection {
    pub strategy: Option<String>,
    pub estimator: Option<String>,
    pub delta_map: f64,
    pub fallback: ecore::FallbackPolicy,
    pub seed: u64,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            strategy: None,
            estimator: None,
            delta_map: 5.0,
            fallback: ecore::FallbackPolicy::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub ed: ecore::EdConfig,
    pub sf: SfConfig,
    pub ob_default: u32,
    pub gateway_power_w: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            ed: ecore::EdConfig::default(),
            sf: SfConfig::default(),
            ob_default: 0,
            gateway_power_w: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub mode: BackendMode,
    pub network_ms: f64,
    pub miss_rate: Option<f64>,
    pub seed: u64,
    pub endpoints: BTreeMap<String, String>,
    pub http_timeout_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            mode: BackendMode::Simulate,
            network_ms: 0.0,
            miss_rate: None,
            seed: 0,
            endpoints: BTreeMap::new(),
            http_timeout_ms: 2_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub out_dir: PathBuf,
    pub deterministic: bool,
    pub overhead_ms: DeterministicOverheads,
    pub include_log: bool,
    pub dataset_seed: u64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("reports"),
            deterministic: false,
            overhead_ms: DeterministicOverheads::default(),
            include_log: false,
            dataset_seed: 13,
        }
    }
}

/// Fully merged configuration ready to drive a replay or the service.
pub struct Resolved {
    pub table: ProfileTable,
    pub profile_path: Option<PathBuf>,
    pub rules: GroupRules,
    pub replay: ReplayConfig,
    pub out_dir: PathBuf,
    pub listen: String,
    pub include_log: bool,
}

/// Split a composed strategy label (`greedy-ed`, `hmg`, ...) into the
/// strategy and its estimator; an explicit estimator always wins.
pub fn parse_strategy_spec(
    spec: &str,
    estimator: Option<&str>,
) -> Result<(Strategy, EstimatorKind), AppError> {
    let (strategy, implied): (Strategy, Option<EstimatorKind>) =
        if let Some(rest) = spec.strip_prefix("greedy-") {
            (
                Strategy::Greedy,
                Some(rest.parse().map_err(AppError::Validation)?),
            )
        } else {
            (spec.parse().map_err(AppError::Validation)?, None)
        };
    let kind = match estimator {
        Some(e) => e.parse().map_err(AppError::Validation)?,
        None => implied.unwrap_or_else(|| ecore::default_estimator(strategy)),
    };
    if strategy.needs_count() && kind == EstimatorKind::None {
        return Err(AppError::Validation(format!(
            "strategy `{}` needs an estimator",
            strategy.as_str()
        )));
    }
    Ok((strategy, kind))
}

pub fn load_config_file(path: Option<&PathBuf>) -> Result<AppConfig, AppError> {
    match path {
        None => Ok(AppConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                AppError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| AppError::Validation(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn sibling_binary(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let candidate = exe.parent()?.join(name);
    candidate.exists().then_some(candidate)
}

/// Fall back to the bundled stdio stub when the sf estimator has no
/// detector configured.
pub fn ensure_sf_detector(replay: &mut ReplayConfig) -> Result<(), AppError> {
    if replay.sf.endpoint.is_some() || replay.sf.spawn.is_some() {
        return Ok(());
    }
    match sibling_binary("ecore-detector-stub") {
        Some(stub) => {
            replay.sf.spawn = Some(vec![stub.display().to_string(), "--stdio".into()]);
            Ok(())
        }
        None => Err(AppError::Validation(
            "sf estimator needs --detector (no bundled stub found)".into(),
        )),
    }
}

pub fn resolve(
    common: &CommonArgs,
    delta: Option<f64>,
    include_log: bool,
) -> Result<Resolved, AppError> {
    let file = load_config_file(common.config.as_ref())?;

    let profile_path = common.profile.clone().or(file.profile.path.clone());
    let table = match &profile_path {
        Some(path) => ProfileTable::load_path(path)?,
        None => ecore::seed_profile(),
    };

    let rules = match (&common.rules, &file.rules) {
        (Some(path), _) => GroupRules::load_json(path)?,
        (None, Some(rules)) => {
            GroupRules::new(rules.clone()).map_err(|e| AppError::Validation(e.to_string()))?
        }
        (None, None) => GroupRules::default_five(),
    };

    let strategy_spec = common
        .strategy
        .clone()
        .or(file.routing.strategy.clone())
        .unwrap_or_else(|| "greedy".into());
    let estimator_flag = common.estimator.clone().or(file.routing.estimator.clone());
    let (strategy, estimator) = parse_strategy_spec(&strategy_spec, estimator_flag.as_deref())?;

    let mut replay = ReplayConfig::new(strategy, estimator);
    replay.routing.delta_map = delta.unwrap_or(file.routing.delta_map);
    if replay.routing.delta_map < 0.0 {
        return Err(AppError::Validation("delta must be non-negative".into()));
    }
    replay.routing.rules = rules.clone();
    replay.routing.fallback = file.routing.fallback;
    replay.routing.rnd_seed = common.seed.unwrap_or(file.routing.seed);

    replay.backend.mode = match common.backend_mode.as_deref() {
        Some("simulate") => BackendMode::Simulate,
        Some("http") => BackendMode::Http,
        Some(other) => {
            return Err(AppError::Validation(format!(
                "unknown backend mode `{other}`"
            )))
        }
        None => file.backend.mode,
    };
    replay.backend.network_ms = common.network_ms.unwrap_or(file.backend.network_ms);
    let miss_rate = common.miss_rate.or(file.backend.miss_rate);
    replay.backend.fidelity = match miss_rate {
        Some(p) if !(0.0..=1.0).contains(&p) => {
            return Err(AppError::Validation(format!(
                "miss rate {p} outside [0, 1]"
            )))
        }
        Some(p) => Fidelity::MissRate { p },
        None => Fidelity::Exact,
    };
    replay.backend.seed = file.backend.seed;
    replay.backend.realtime = common.realtime;
    replay.backend.endpoints = file.backend.endpoints.clone();
    replay.backend.http_timeout_ms = file.backend.http_timeout_ms;

    replay.gateway.power_w = file.estimator.gateway_power_w;
    replay.gateway.deterministic = common.deterministic || file.report.deterministic;
    replay.gateway.overheads = file.report.overhead_ms;

    replay.ed = file.estimator.ed;
    replay.sf = file.estimator.sf.clone();
    if let Some(detector) = &common.detector {
        if let Some(cmd) = detector.strip_prefix("spawn:") {
            replay.sf.spawn = Some(cmd.split_whitespace().map(String::from).collect());
            replay.sf.endpoint = None;
        } else {
            replay.sf.endpoint = Some(detector.clone());
            replay.sf.spawn = None;
        }
    }
    if estimator == EstimatorKind::Sf {
        ensure_sf_detector(&mut replay)?;
    }
    replay.ob_default = file.estimator.ob_default;
    replay.idle = file.idle.clone();
    replay.dataset_seed = file.report.dataset_seed;

    Ok(Resolved {
        table,
        profile_path,
        rules,
        replay,
        out_dir: common.out.clone().unwrap_or(file.report.out_dir.clone()),
        listen: file.gateway.listen.clone(),
        include_log: include_log || file.report.include_log,
    })
}
