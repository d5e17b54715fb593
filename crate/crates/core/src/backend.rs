//! Stand-in for the edge-device pool: charges profiled energy and
//! latency per dispatched request, or forwards to real HTTP endpoints.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageRaster;
use crate::profile::{PairKey, ProfileTable};
use crate::router::RoutingDecision;

/// One image job travelling through the gateway.
#[derive(Debug, Clone)]
pub struct Request {
    pub id: u64,
    pub image_path: Option<PathBuf>,
    pub raster: Option<ImageRaster>,
    pub truth_count: Option<u32>,
    pub stream_id: String,
}

/// The backend's answer with the energy and latency it charged.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResponse {
    pub request_id: u64,
    pub pair: PairKey,
    pub detected_count: u32,
    pub inference_ms: f64,
    pub energy_mwh: f64,
    pub network_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Simulate,
    Http,
}

/// Detection model of the simulated pool: `Exact` echoes the ground
/// truth, `MissRate` drops each object independently with probability
/// `p` using the seeded generator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Fidelity {
    #[default]
    Exact,
    MissRate { p: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub network_ms: f64,
    pub fidelity: Fidelity,
    pub seed: u64,
    /// Sleep for the charged latency instead of pure virtual-time
    /// accounting. Only useful for live demos.
    pub realtime: bool,
    /// `model@device` to base URL, http mode only.
    pub endpoints: BTreeMap<String, String>,
    pub http_timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Simulate,
            network_ms: 0.0,
            fidelity: Fidelity::Exact,
            seed: 0,
            realtime: false,
            endpoints: BTreeMap::new(),
            http_timeout_ms: 2_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no profile entry for pair {pair} in group {group}")]
    UnknownPair { pair: PairKey, group: String },
    #[error("backend for {pair} unreachable: {detail}")]
    BackendUnreachable { pair: PairKey, detail: String },
    #[error(
        "request {request_id} carries no ground-truth count required by the simulated backend"
    )]
    MissingTruth { request_id: u64 },
    #[error("request {request_id} carries no image to forward")]
    MissingImage { request_id: u64 },
    #[error("backend for {pair} returned an invalid response: {detail}")]
    InvalidResponse { pair: PairKey, detail: String },
}

/// Cumulative per-pair charges, for conservation checks and metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PairTotals {
    pub requests: u64,
    pub energy_mwh: f64,
    pub inference_ms: f64,
}

#[derive(Deserialize)]
struct HttpInferReply {
    count: u32,
    inference_ms: f64,
}

/// Backend pool facade. Safe to share across threads; the fidelity
/// generator and the per-pair counters sit behind locks so concurrent
/// dispatches settle to one consistent total.
pub struct Backend {
    cfg: BackendConfig,
    rng: Mutex<ChaCha8Rng>,
    totals: Mutex<BTreeMap<PairKey, PairTotals>>,
    http: Option<reqwest::blocking::Client>,
}

impl Backend {
    pub fn new(cfg: BackendConfig) -> Self {
        let http = match cfg.mode {
            BackendMode::Http => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(cfg.http_timeout_ms))
                    .build()
                    .expect("http client"),
            ),
            BackendMode::Simulate => None,
        };
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed)),
            totals: Mutex::new(BTreeMap::new()),
            http,
            cfg,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// Execute one routed request. Simulation copies the profile
    /// entry's inference time and energy verbatim; http mode posts the
    /// image and takes the measured inference time from the reply while
    /// still charging the profiled energy.
    pub fn dispatch(
        &self,
        table: &ProfileTable,
        decision: &RoutingDecision,
        req: &Request,
    ) -> Result<DetectionResponse, BackendError> {
        let entry = table
            .entry_for(&decision.pair, &decision.group)
            .ok_or_else(|| BackendError::UnknownPair {
                pair: decision.pair.clone(),
                group: decision.group.to_string(),
            })?;

        let (detected_count, inference_ms) = match self.cfg.mode {
            BackendMode::Simulate => {
                let truth = req
                    .truth_count
                    .ok_or(BackendError::MissingTruth { request_id: req.id })?;
                let detected = match self.cfg.fidelity {
                    Fidelity::Exact => truth,
                    Fidelity::MissRate { p } => {
                        let mut rng = self.rng.lock().unwrap();
                        (0..truth).filter(|_| rng.gen_bool(1.0 - p)).count() as u32
                    }
                };
                (detected, entry.latency_ms)
            }
            BackendMode::Http => self.dispatch_http(decision, req)?,
        };

        if self.cfg.realtime {
            std::thread::sleep(Duration::from_secs_f64(
                (inference_ms + self.cfg.network_ms) / 1000.0,
            ));
        }

        {
            let mut totals = self.totals.lock().unwrap();
            let t = totals.entry(decision.pair.clone()).or_default();
            t.requests += 1;
            t.energy_mwh += entry.energy_mwh;
            t.inference_ms += inference_ms;
        }

        Ok(DetectionResponse {
            request_id: req.id,
            pair: decision.pair.clone(),
            detected_count,
            inference_ms,
            energy_mwh: entry.energy_mwh,
            network_ms: self.cfg.network_ms,
        })
    }

    fn dispatch_http(
        &self,
        decision: &RoutingDecision,
        req: &Request,
    ) -> Result<(u32, f64), BackendError> {
        let pair = decision.pair.clone();
        let key = pair.to_string();
        let endpoint =
            self.cfg
                .endpoints
                .get(&key)
                .ok_or_else(|| BackendError::BackendUnreachable {
                    pair: pair.clone(),
                    detail: format!("no endpoint configured for {key}"),
                })?;
        let body = match (&req.raster, &req.image_path) {
            (Some(raster), _) => {
                let mut bytes = Vec::new();
                raster.write_pnm(&mut bytes).expect("in-memory write");
                bytes
            }
            (None, Some(path)) => {
                std::fs::read(path).map_err(|e| BackendError::BackendUnreachable {
                    pair: pair.clone(),
                    detail: format!("cannot read image {}: {e}", path.display()),
                })?
            }
            (None, None) => return Err(BackendError::MissingImage { request_id: req.id }),
        };
        let client = self.http.as_ref().expect("http client in http mode");
        let resp = client
            .post(format!("{endpoint}/infer"))
            .header("content-type", "application/octet-stream")
            .body(body)
            .send()
            .map_err(|e| BackendError::BackendUnreachable {
                pair: pair.clone(),
                detail: e.to_string(),
            })?;
        if !resp.status().is_success() {
            return Err(BackendError::BackendUnreachable {
                pair,
                detail: format!("status {}", resp.status()),
            });
        }
        let reply: HttpInferReply = resp.json().map_err(|e| BackendError::InvalidResponse {
            pair: pair.clone(),
            detail: e.to_string(),
        })?;
        Ok((reply.count, reply.inference_ms))
    }

    pub fn totals(&self) -> BTreeMap<PairKey, PairTotals> {
        self.totals.lock().unwrap().clone()
    }
}

/// Idle energy drawn by a set of devices over a window, in mWh.
/// 3.6 W·s equals one mWh.
pub fn idle_baseline(duration_s: f64, idle_power_w: impl IntoIterator<Item = f64>) -> f64 {
    assert!(duration_s >= 0.0, "duration must be non-negative");
    idle_power_w
        .into_iter()
        .map(|p| {
            assert!(p >= 0.0, "idle power must be non-negative");
            p * duration_s / 3.6
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::seed_profile;
    use crate::router::{route_greedy, RoutingConfig};
    use proptest::prelude::*;

    fn request(truth: Option<u32>) -> Request {
        Request {
            id: 1,
            image_path: None,
            raster: None,
            truth_count: truth,
            stream_id: "test".into(),
        }
    }

    #[test]
    fn exact_fidelity_echoes_truth_and_profile_costs() {
        let table = seed_profile();
        let cfg = RoutingConfig::default();
        let decision = route_greedy(&table, 5, &cfg).unwrap();
        let backend = Backend::new(BackendConfig::default());
        let resp = backend
            .dispatch(&table, &decision, &request(Some(5)))
            .unwrap();
        assert_eq!(resp.detected_count, 5);
        let entry = table.entry_for(&decision.pair, &decision.group).unwrap();
        assert_eq!(resp.energy_mwh, entry.energy_mwh);
        assert_eq!(resp.inference_ms, entry.latency_ms);
    }

    #[test]
    fn full_miss_rate_detects_nothing() {
        let table = seed_profile();
        let decision = route_greedy(&table, 5, &RoutingConfig::default()).unwrap();
        let backend = Backend::new(BackendConfig {
            fidelity: Fidelity::MissRate { p: 1.0 },
            ..BackendConfig::default()
        });
        let resp = backend
            .dispatch(&table, &decision, &request(Some(5)))
            .unwrap();
        assert_eq!(resp.detected_count, 0);
    }

    #[test]
    fn unknown_pair_is_rejected() {
        let table = seed_profile();
        let mut decision = route_greedy(&table, 0, &RoutingConfig::default()).unwrap();
        decision.pair = PairKey::new("nope", "nowhere");
        let backend = Backend::new(BackendConfig::default());
        let err = backend
            .dispatch(&table, &decision, &request(Some(1)))
            .unwrap_err();
        assert!(matches!(err, BackendError::UnknownPair { .. }));
    }

    #[test]
    fn simulate_without_truth_is_rejected() {
        let table = seed_profile();
        let decision = route_greedy(&table, 0, &RoutingConfig::default()).unwrap();
        let backend = Backend::new(BackendConfig::default());
        let err = backend
            .dispatch(&table, &decision, &request(None))
            .unwrap_err();
        assert!(matches!(err, BackendError::MissingTruth { .. }));
    }

    #[test]
    fn http_mode_reports_unreachable_endpoint() {
        let table = seed_profile();
        let decision = route_greedy(&table, 0, &RoutingConfig::default()).unwrap();
        let mut cfg = BackendConfig {
            mode: BackendMode::Http,
            http_timeout_ms: 200,
            ..BackendConfig::default()
        };
        cfg.endpoints.insert(
            decision.pair.to_string(),
            // unroutable port on localhost
            "http://127.0.0.1:9".into(),
        );
        let backend = Backend::new(cfg);
        let mut req = request(Some(1));
        req.raster = Some(ImageRaster::filled(4, 4, 1, 0));
        let err = backend.dispatch(&table, &decision, &req).unwrap_err();
        assert!(matches!(err, BackendError::BackendUnreachable { .. }));
    }

    #[test]
    fn http_mode_round_trip_against_canned_server() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = [0u8; 4096];
            let _ = sock.read(&mut buf).unwrap();
            let body = r#"{"count": 3, "inference_ms": 12.5}"#;
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            sock.write_all(reply.as_bytes()).unwrap();
        });

        let table = seed_profile();
        let decision = route_greedy(&table, 0, &RoutingConfig::default()).unwrap();
        let mut cfg = BackendConfig {
            mode: BackendMode::Http,
            ..BackendConfig::default()
        };
        cfg.endpoints
            .insert(decision.pair.to_string(), format!("http://{addr}"));
        let backend = Backend::new(cfg);
        let mut req = request(None);
        req.raster = Some(ImageRaster::filled(4, 4, 1, 0));
        let resp = backend.dispatch(&table, &decision, &req).unwrap();
        assert_eq!(resp.detected_count, 3);
        assert_eq!(resp.inference_ms, 12.5);
        server.join().unwrap();
    }

    #[test]
    fn idle_baseline_unit_arithmetic() {
        assert_eq!(idle_baseline(0.0, [3.6]), 0.0);
        assert!((idle_baseline(1000.0, [3.6]) - 1000.0).abs() < 1e-9);
        assert!((idle_baseline(1800.0, [2.0, 2.0]) - 2000.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn thinning_never_exceeds_truth(truth in 0u32..64, p in 0.0f64..1.0, seed in 0u64..32) {
            let table = seed_profile();
            let decision = route_greedy(&table, truth, &RoutingConfig::default()).unwrap();
            let backend = Backend::new(BackendConfig {
                fidelity: Fidelity::MissRate { p },
                seed,
                ..BackendConfig::default()
            });
            let resp = backend
                .dispatch(&table, &decision, &request(Some(truth)))
                .unwrap();
            prop_assert!(resp.detected_count <= truth);
        }

        #[test]
        fn thinning_is_seed_reproducible(truth in 0u32..64, seed in 0u64..32) {
            let table = seed_profile();
            let decision = route_greedy(&table, truth, &RoutingConfig::default()).unwrap();
            let run = || {
                let backend = Backend::new(BackendConfig {
                    fidelity: Fidelity::MissRate { p: 0.5 },
                    seed,
                    ..BackendConfig::default()
                });
                backend
                    .dispatch(&table, &decision, &request(Some(truth)))
                    .unwrap()
                    .detected_count
            };
            prop_assert_eq!(run(), run());
        }
    }
}
