//! Closed-loop replay of workload manifests, metrics accounting, and
//! delta sweeps.
//!
//! A replay walks one manifest strictly sequentially: estimate, route,
//! dispatch, observe, accumulate — request i+1 starts only once
//! response i has been folded in. Time is virtual (profile sums), so a
//! multi-thousand-image replay finishes in milliseconds; gateway
//! overhead is measured wall time unless deterministic mode pins it to
//! configured constants.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{idle_baseline, Backend, BackendConfig, BackendError, Request};
use crate::detector::DetectorHandle;
use crate::estimator::{
    CountEstimator, EdConfig, EdEstimator, EstimatorError, EstimatorKind, NullEstimator,
    ObEstimator, OracleEstimator, OverheadModel, SfEstimator,
};
use crate::profile::{GroupLabel, PairKey, ProfileTable};
use crate::router::{route, RouteError, RouterState, RoutingConfig, Strategy};
use crate::workload::{ManifestItem, WorkloadError, WorkloadManifest};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("profile has no entry for pair {pair} in group {group}")]
    MissingProfileCell { pair: PairKey, group: GroupLabel },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pinned per-estimator gateway wall times used in deterministic mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeterministicOverheads {
    pub oracle_ms: f64,
    pub ed_ms: f64,
    pub sf_ms: f64,
    pub ob_ms: f64,
}

impl Default for DeterministicOverheads {
    fn default() -> Self {
        Self {
            oracle_ms: 0.0,
            ed_ms: 2.0,
            sf_ms: 30.0,
            ob_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub power_w: f64,
    pub deterministic: bool,
    pub overheads: DeterministicOverheads,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            power_w: 5.0,
            deterministic: false,
            overheads: DeterministicOverheads::default(),
        }
    }
}

/// How to reach the front-end detector for the sf estimator: a TCP
/// address, or a command to spawn that speaks the protocol on stdio.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfConfig {
    pub endpoint: Option<String>,
    pub spawn: Option<Vec<String>>,
    pub timeout_ms: u64,
}

impl SfConfig {
    fn timeout(&self) -> Duration {
        Duration::from_millis(if self.timeout_ms == 0 {
            2_000
        } else {
            self.timeout_ms
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdleConfig {
    pub default_power_w: f64,
    pub per_device_w: BTreeMap<String, f64>,
}

impl Default for IdleConfig {
    fn default() -> Self {
        Self {
            default_power_w: 2.5,
            per_device_w: BTreeMap::new(),
        }
    }
}

impl IdleConfig {
    pub fn powers_for<'a>(&self, devices: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        devices
            .into_iter()
            .map(|d| {
                self.per_device_w
                    .get(d)
                    .copied()
                    .unwrap_or(self.default_power_w)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayConfig {
    pub strategy: Strategy,
    pub estimator: EstimatorKind,
    pub routing: RoutingConfig,
    pub backend: BackendConfig,
    pub gateway: GatewayConfig,
    pub ed: EdConfig,
    pub sf: SfConfig,
    pub ob_default: u32,
    pub idle: IdleConfig,
    pub dataset_seed: u64,
    pub stream_id: String,
}

impl ReplayConfig {
    pub fn new(strategy: Strategy, estimator: EstimatorKind) -> Self {
        Self {
            strategy,
            estimator,
            routing: RoutingConfig::default(),
            backend: BackendConfig::default(),
            gateway: GatewayConfig::default(),
            ed: EdConfig::default(),
            sf: SfConfig::default(),
            ob_default: 0,
            idle: IdleConfig::default(),
            dataset_seed: 13,
            stream_id: "replay".into(),
        }
    }

    /// Combined strategy/estimator label used in file names and the
    /// summary pivot.
    pub fn label(&self) -> String {
        match (self.strategy, self.estimator) {
            (Strategy::Greedy, est) => format!("greedy-{}", est.as_str()),
            (Strategy::HighestMapGroup, EstimatorKind::Oracle) => "highest-map-group".into(),
            (Strategy::HighestMapGroup, est) => format!("highest-map-group-{}", est.as_str()),
            (strategy, _) => strategy.as_str().to_string(),
        }
    }
}

/// The natural estimator for strategies that need a count.
pub fn default_estimator(strategy: Strategy) -> EstimatorKind {
    if strategy.needs_count() {
        EstimatorKind::Oracle
    } else {
        EstimatorKind::None
    }
}

pub fn build_estimator(
    kind: EstimatorKind,
    cfg: &ReplayConfig,
) -> Result<Box<dyn CountEstimator>, HarnessError> {
    let overhead = |pinned_ms: f64| OverheadModel {
        gateway_power_w: cfg.gateway.power_w,
        deterministic_ms: cfg.gateway.deterministic.then_some(pinned_ms),
    };
    match kind {
        EstimatorKind::None => Ok(Box::new(NullEstimator)),
        EstimatorKind::Oracle => Ok(Box::new(OracleEstimator)),
        EstimatorKind::Ed => {
            cfg.ed.validate().map_err(HarnessError::Config)?;
            Ok(Box::new(EdEstimator::new(
                cfg.ed,
                overhead(cfg.gateway.overheads.ed_ms),
            )))
        }
        EstimatorKind::Ob => Ok(Box::new(ObEstimator::new(
            cfg.ob_default,
            overhead(cfg.gateway.overheads.ob_ms),
        ))),
        EstimatorKind::Sf => {
            let model = overhead(cfg.gateway.overheads.sf_ms);
            let handle = match (&cfg.sf.endpoint, &cfg.sf.spawn) {
                (Some(addr), _) => DetectorHandle::connect_tcp(addr, cfg.sf.timeout())?,
                (None, Some(cmd)) if !cmd.is_empty() => {
                    DetectorHandle::spawn(&cmd[0], &cmd[1..], cfg.sf.timeout())?
                }
                _ => {
                    return Err(HarnessError::Config(
                        "sf estimator needs a detector endpoint or spawn command".into(),
                    ))
                }
            };
            Ok(Box::new(SfEstimator::new(handle, model)))
        }
    }
}

/// Everything recorded about one processed request. Written to report
/// logs and compared request-by-request in parity tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: u64,
    pub item_id: String,
    pub truth_count: Option<u32>,
    pub true_group: Option<GroupLabel>,
    pub estimated_count: Option<u32>,
    pub group: GroupLabel,
    pub pair: PairKey,
    pub map_max: Option<f64>,
    pub map_floor: Option<f64>,
    pub feasible_count: usize,
    pub fallback_used: bool,
    pub chosen_map: f64,
    pub detected_count: u32,
    pub gateway_ms: f64,
    pub network_ms: f64,
    pub inference_ms: f64,
    pub backend_energy_mwh: f64,
    pub gateway_energy_mwh: f64,
    pub modeled_map: Option<f64>,
    pub virtual_start_ms: f64,
    pub virtual_end_ms: f64,
}

/// One logical request stream: estimator state, router state, and the
/// virtual clock. The gateway service keeps one per stream id; a
/// replay owns exactly one.
pub struct Session {
    strategy: Strategy,
    estimator: Box<dyn CountEstimator>,
    router_state: RouterState,
    routing: RoutingConfig,
    gateway: GatewayConfig,
    stream_id: String,
    virtual_now_ms: f64,
    next_id: u64,
}

impl Session {
    pub fn new(cfg: &ReplayConfig) -> Result<Self, HarnessError> {
        Ok(Self {
            strategy: cfg.strategy,
            estimator: build_estimator(cfg.estimator, cfg)?,
            router_state: RouterState::new(cfg.routing.rnd_seed),
            routing: cfg.routing.clone(),
            gateway: cfg.gateway.clone(),
            stream_id: cfg.stream_id.clone(),
            virtual_now_ms: 0.0,
            next_id: 1,
        })
    }

    /// Run the full closed-loop step for one request. Estimator
    /// failures surface as `HarnessError::Estimator` so callers can
    /// decide between skipping (replay) and reporting (service).
    pub fn process(
        &mut self,
        table: &ProfileTable,
        backend: &Backend,
        item_id: &str,
        image_path: Option<std::path::PathBuf>,
        raster: Option<crate::image::ImageRaster>,
        truth_count: Option<u32>,
    ) -> Result<RequestRecord, HarnessError> {
        let req = Request {
            id: self.next_id,
            image_path,
            raster,
            truth_count,
            stream_id: self.stream_id.clone(),
        };

        let estimate = if self.strategy.needs_count() {
            Some(self.estimator.estimate(&req)?)
        } else {
            None
        };

        let route_started = Instant::now();
        let mut decision = route(
            self.strategy,
            table,
            estimate.as_ref().map(|e| e.count),
            &self.routing,
            &mut self.router_state,
        )?;
        decision.decision_overhead_ms = if self.gateway.deterministic {
            0.0
        } else {
            route_started.elapsed().as_secs_f64() * 1e3
        };
        decision.decision_overhead_mwh =
            self.gateway.power_w * decision.decision_overhead_ms / 3600.0;

        let response = backend.dispatch(table, &decision, &req)?;
        self.estimator.observe_response(&response);

        let true_group = truth_count.map(|c| self.routing.rules.group_of(c));
        // Accuracy is charged from the profile cell (pair, true group).
        // A fallback decision on a partial table may lack that cell;
        // the request then carries no accuracy sample. For regular
        // decisions a missing cell is a table defect and aborts.
        let modeled_map = match &true_group {
            Some(group) => match table.entry_for(&decision.pair, group) {
                Some(entry) => Some(entry.map),
                None if decision.fallback_used => None,
                None => {
                    return Err(HarnessError::MissingProfileCell {
                        pair: decision.pair.clone(),
                        group: group.clone(),
                    })
                }
            },
            None => None,
        };

        let (est_ms, est_mwh) = estimate
            .as_ref()
            .map(|e| (e.overhead_ms, e.overhead_mwh))
            .unwrap_or((0.0, 0.0));
        let gateway_ms = est_ms + decision.decision_overhead_ms;
        let gateway_energy_mwh = est_mwh + decision.decision_overhead_mwh;

        let virtual_start_ms = self.virtual_now_ms;
        let virtual_end_ms =
            virtual_start_ms + gateway_ms + response.network_ms + response.inference_ms;
        self.virtual_now_ms = virtual_end_ms;
        self.next_id += 1;

        Ok(RequestRecord {
            index: req.id,
            item_id: item_id.to_string(),
            truth_count,
            true_group,
            estimated_count: estimate.as_ref().map(|e| e.count),
            group: decision.group.clone(),
            pair: decision.pair.clone(),
            map_max: decision.map_max,
            map_floor: decision.map_floor,
            feasible_count: decision.feasible_count,
            fallback_used: decision.fallback_used,
            chosen_map: decision.chosen_map,
            detected_count: response.detected_count,
            gateway_ms,
            network_ms: response.network_ms,
            inference_ms: response.inference_ms,
            backend_energy_mwh: response.energy_mwh,
            gateway_energy_mwh,
            modeled_map,
            virtual_start_ms,
            virtual_end_ms,
        })
    }

    pub fn process_item(
        &mut self,
        table: &ProfileTable,
        backend: &Backend,
        item: &ManifestItem,
    ) -> Result<RequestRecord, HarnessError> {
        self.process(
            table,
            backend,
            &item.id,
            Some(item.image.clone()),
            None,
            Some(item.count),
        )
    }
}

/// Running totals across one stream or one service instance.
#[derive(Debug, Default)]
pub struct MetricsAccumulator {
    requests: u64,
    skipped: u64,
    backend_energy_mwh: f64,
    gateway_energy_mwh: f64,
    gateway_ms: f64,
    network_ms: f64,
    inference_ms: f64,
    modeled_map_sum: f64,
    accuracy_samples: u64,
    group_histogram: BTreeMap<String, u64>,
    switch_count: u64,
    fallback_count: u64,
    last_pair: Option<PairKey>,
}

impl MetricsAccumulator {
    pub fn record(&mut self, rec: &RequestRecord) {
        self.requests += 1;
        self.backend_energy_mwh += rec.backend_energy_mwh;
        self.gateway_energy_mwh += rec.gateway_energy_mwh;
        self.gateway_ms += rec.gateway_ms;
        self.network_ms += rec.network_ms;
        self.inference_ms += rec.inference_ms;
        if let Some(map) = rec.modeled_map {
            self.modeled_map_sum += map;
            self.accuracy_samples += 1;
        }
        *self
            .group_histogram
            .entry(rec.group.to_string())
            .or_insert(0) += 1;
        if let Some(prev) = &self.last_pair {
            if prev != &rec.pair {
                self.switch_count += 1;
            }
        }
        self.last_pair = Some(rec.pair.clone());
        if rec.fallback_used {
            self.fallback_count += 1;
        }
    }

    pub fn record_skip(&mut self) {
        self.skipped += 1;
    }

    pub fn snapshot(&self, idle_power_w: &[f64]) -> MetricsSnapshot {
        let total_latency_s = (self.gateway_ms + self.network_ms + self.inference_ms) / 1000.0;
        MetricsSnapshot {
            requests: self.requests,
            skipped: self.skipped,
            dynamic_energy_mwh: self.backend_energy_mwh + self.gateway_energy_mwh,
            backend_energy_mwh: self.backend_energy_mwh,
            gateway_energy_mwh: self.gateway_energy_mwh,
            total_latency_s,
            gateway_ms: self.gateway_ms,
            network_ms: self.network_ms,
            inference_ms: self.inference_ms,
            modeled_map: if self.accuracy_samples > 0 {
                self.modeled_map_sum / self.accuracy_samples as f64
            } else {
                0.0
            },
            accuracy_samples: self.accuracy_samples,
            group_histogram: self.group_histogram.clone(),
            switch_count: self.switch_count,
            fallback_count: self.fallback_count,
            idle_baseline_mwh: idle_baseline(total_latency_s, idle_power_w.iter().copied()),
        }
    }
}

/// Serializable totals. Dynamic energy is backend plus gateway; the
/// idle baseline over the replay window is reported separately, never
/// mixed into the dynamic figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub skipped: u64,
    pub dynamic_energy_mwh: f64,
    pub backend_energy_mwh: f64,
    pub gateway_energy_mwh: f64,
    pub total_latency_s: f64,
    pub gateway_ms: f64,
    pub network_ms: f64,
    pub inference_ms: f64,
    pub modeled_map: f64,
    pub accuracy_samples: u64,
    pub group_histogram: BTreeMap<String, u64>,
    pub switch_count: u64,
    pub fallback_count: u64,
    pub idle_baseline_mwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSeeds {
    pub router: u64,
    pub backend: u64,
    pub dataset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub strategy: String,
    pub estimator: String,
    pub delta_map: f64,
    pub workload: String,
    pub profile_source: String,
    pub deterministic: bool,
    pub seeds: ReportSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub header: ReportHeader,
    pub metrics: MetricsSnapshot,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<RequestRecord>>,
}

impl ExperimentReport {
    pub fn label(&self) -> String {
        if self.header.strategy == "greedy" {
            format!("greedy-{}", self.header.estimator)
        } else {
            self.header.strategy.clone()
        }
    }

    pub fn to_json(&self, include_log: bool) -> String {
        let mut report = self.clone();
        if !include_log {
            report.log = None;
        }
        serde_json::to_string_pretty(&report).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path, include_log: bool) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json(include_log))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad report {}: {e}", path.display())))
    }
}

/// Replay a workload through estimate → route → dispatch → observe →
/// accumulate. Estimator faults are logged and the request is skipped;
/// routing and backend faults abort the replay.
pub fn replay(
    workload: &WorkloadManifest,
    cfg: &ReplayConfig,
    table: &ProfileTable,
) -> Result<ExperimentReport, HarnessError> {
    let mut session = Session::new(cfg)?;
    let backend = Backend::new(cfg.backend.clone());
    let mut acc = MetricsAccumulator::default();
    let mut log = Vec::with_capacity(workload.len());
    for item in &workload.items {
        match session.process_item(table, &backend, item) {
            Ok(rec) => {
                acc.record(&rec);
                log.push(rec);
            }
            Err(HarnessError::Estimator(e)) => {
                log::warn!("estimator fault on item {}: {e}; request skipped", item.id);
                acc.record_skip();
            }
            Err(fatal) => return Err(fatal),
        }
    }

    let devices = table.distinct_devices();
    let idle_powers = cfg.idle.powers_for(devices.iter().map(String::as_str));
    Ok(ExperimentReport {
        header: ReportHeader {
            strategy: cfg.strategy.as_str().to_string(),
            estimator: cfg.estimator.as_str().to_string(),
            delta_map: cfg.routing.delta_map,
            workload: workload.name.clone(),
            profile_source: table.source.clone(),
            deterministic: cfg.gateway.deterministic,
            seeds: ReportSeeds {
                router: cfg.routing.rnd_seed,
                backend: cfg.backend.seed,
                dataset: cfg.dataset_seed,
            },
        },
        metrics: acc.snapshot(&idle_powers),
        log: Some(log),
    })
}

/// Mean profiled mAP of the chosen pairs charged at each request's
/// true group — the modeled accuracy of a decision log.
pub fn modeled_accuracy(log: &[RequestRecord], table: &ProfileTable) -> Result<f64, HarnessError> {
    let mut sum = 0.0;
    let mut samples = 0u64;
    for rec in log {
        let group = match &rec.true_group {
            Some(g) => g,
            None => continue,
        };
        let entry =
            table
                .entry_for(&rec.pair, group)
                .ok_or_else(|| HarnessError::MissingProfileCell {
                    pair: rec.pair.clone(),
                    group: group.clone(),
                })?;
        sum += entry.map;
        samples += 1;
    }
    Ok(if samples > 0 {
        sum / samples as f64
    } else {
        0.0
    })
}

/// One replay per (strategy, estimator, delta) cell with shared seeds.
/// Logs are dropped from the returned reports to keep sweeps light.
pub fn sweep_delta(
    workload: &WorkloadManifest,
    base: &ReplayConfig,
    combos: &[(Strategy, EstimatorKind)],
    deltas: &[f64],
    table: &ProfileTable,
) -> Result<Vec<ExperimentReport>, HarnessError> {
    let mut reports = Vec::with_capacity(combos.len() * deltas.len());
    for &(strategy, estimator) in combos {
        for &delta in deltas {
            let mut cfg = base.clone();
            cfg.strategy = strategy;
            cfg.estimator = estimator;
            cfg.routing.delta_map = delta;
            let mut report = replay(workload, &cfg, table)?;
            report.log = None;
            reports.push(report);
        }
    }
    Ok(reports)
}

/// Pivot CSV over reports:
/// `strategy,delta,energy_mwh,latency_s,modeled_map,gateway_mwh,gateway_ms`.
pub fn summary_csv(reports: &[ExperimentReport]) -> String {
    let mut out =
        String::from("strategy,delta,energy_mwh,latency_s,modeled_map,gateway_mwh,gateway_ms\n");
    for report in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            report.label(),
            report.header.delta_map,
            report.metrics.dynamic_energy_mwh,
            report.metrics.total_latency_s,
            report.metrics.modeled_map,
            report.metrics.gateway_energy_mwh,
            report.metrics.gateway_ms,
        ));
    }
    out
}
