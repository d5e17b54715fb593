//! Per-request object-count estimators that feed the router.
//!
//! Four front-ends are available: ground truth (oracle), Canny edge
//! analysis (ed), an external lightweight detector process (sf), and
//! reuse of the previous backend response (ob). Each estimate carries
//! the gateway wall time it cost and the energy modeled from it.

use std::borrow::Cow;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{DetectionResponse, Request};
use crate::canny::{canny, CannyError};
use crate::components::{close, connected_components};
use crate::detector::DetectorHandle;
use crate::image::{ImageError, ImageRaster};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Canny(#[from] CannyError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("detector protocol error: {0}")]
    DetectorProtocolError(String),
    #[error("detector exceeded the {deadline_ms} ms deadline")]
    DetectorTimeout { deadline_ms: u64 },
    #[error("request {request_id} carries no ground-truth count")]
    MissingGroundTruth { request_id: u64 },
    #[error("request {request_id} carries no image")]
    MissingImage { request_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    None,
    Oracle,
    Ed,
    Sf,
    Ob,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::None => "none",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Ed => "ed",
            EstimatorKind::Sf => "sf",
            EstimatorKind::Ob => "ob",
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "oracle" => Ok(Self::Oracle),
            "ed" => Ok(Self::Ed),
            "sf" => Ok(Self::Sf),
            "ob" => Ok(Self::Ob),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// A count plus the gateway overhead spent producing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub count: u32,
    pub method: EstimatorKind,
    pub overhead_ms: f64,
    pub overhead_mwh: f64,
}

/// Converts measured (or pinned) gateway wall time into modeled energy:
/// `power_w * ms / 3600` is mWh, since 3.6 W·s equals one mWh.
#[derive(Debug, Clone, Copy)]
pub struct OverheadModel {
    pub gateway_power_w: f64,
    /// When set, replaces the measured wall time for reproducible runs.
    pub deterministic_ms: Option<f64>,
}

impl OverheadModel {
    pub fn charge(&self, started: Instant) -> (f64, f64) {
        let ms = match self.deterministic_ms {
            Some(pinned) => pinned,
            None => started.elapsed().as_secs_f64() * 1e3,
        };
        (ms, self.energy_mwh(ms))
    }

    pub fn energy_mwh(&self, ms: f64) -> f64 {
        self.gateway_power_w * ms / 3600.0
    }
}

pub trait CountEstimator: Send {
    fn kind(&self) -> EstimatorKind;
    fn estimate(&mut self, req: &Request) -> Result<CountEstimate, EstimatorError>;
    /// Called after every backend response; only the output-based
    /// estimator keeps state.
    fn observe_response(&mut self, _resp: &DetectionResponse) {}
}

fn request_raster<'a>(req: &'a Request) -> Result<Cow<'a, ImageRaster>, EstimatorError> {
    if let Some(raster) = &req.raster {
        return Ok(Cow::Borrowed(raster));
    }
    let path = req
        .image_path
        .as_ref()
        .ok_or(EstimatorError::MissingImage { request_id: req.id })?;
    Ok(Cow::Owned(ImageRaster::load_pnm(path)?))
}

/// Edge-detection estimator parameters. Thresholds are fractions of the
/// peak gradient magnitude; the area gate is a fraction of the image
/// area applied to component bounding boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdConfig {
    pub sigma: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub closing_radius: usize,
    pub min_area_fraction: f64,
}

impl Default for EdConfig {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            t_low: 0.1,
            t_high: 0.3,
            closing_radius: 2,
            min_area_fraction: 0.005,
        }
    }
}

impl EdConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_low > 0.0 && self.t_low < self.t_high && self.t_high <= 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 < t_low < t_high <= 1, got {} / {}",
                self.t_low, self.t_high
            ));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.min_area_fraction) {
            return Err(format!(
                "min_area_fraction must be in [0, 1], got {}",
                self.min_area_fraction
            ));
        }
        Ok(())
    }
}

/// Count objects as 8-connected components of the closed edge map whose
/// bounding box clears the area gate. Deterministic, and invariant
/// under mirroring by construction.
pub fn count_objects(img: &ImageRaster, cfg: &EdConfig) -> Result<u32, EstimatorError> {
    let edges = canny(img, cfg.sigma, cfg.t_low, cfg.t_high)?;
    let closed = close(&edges.mask, edges.width, edges.height, cfg.closing_radius);
    let components = connected_components(&closed, edges.width, edges.height);
    let gate = cfg.min_area_fraction * (img.width * img.height) as f64;
    Ok(components
        .iter()
        .filter(|c| c.bbox_area() as f64 >= gate)
        .count() as u32)
}

pub struct EdEstimator {
    cfg: EdConfig,
    overhead: OverheadModel,
}

impl EdEstimator {
    pub fn new(cfg: EdConfig, overhead: OverheadModel) -> Self {
        Self { cfg, overhead }
    }
}

impl CountEstimator for EdEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Ed
    }

    fn estimate(&mut self, req: &Request) -> Result<CountEstimate, EstimatorError> {
        let started = Instant::now();
        let raster = request_raster(req)?;
        let count = count_objects(&raster, &self.cfg)?;
        let (overhead_ms, overhead_mwh) = self.overhead.charge(started);
        Ok(CountEstimate {
            count,
            method: EstimatorKind::Ed,
            overhead_ms,
            overhead_mwh,
        })
    }
}

/// Front-end detector estimator backed by an external process speaking
/// the detector wire protocol.
pub struct SfEstimator {
    handle: DetectorHandle,
    overhead: OverheadModel,
}

impl SfEstimator {
    pub fn new(handle: DetectorHandle, overhead: OverheadModel) -> Self {
        Self { handle, overhead }
    }

    pub fn connect_tcp(
        addr: &str,
        timeout: Duration,
        overhead: OverheadModel,
    ) -> Result<Self, EstimatorError> {
        Ok(Self::new(
            DetectorHandle::connect_tcp(addr, timeout)?,
            overhead,
        ))
    }
}

impl CountEstimator for SfEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Sf
    }

    fn estimate(&mut self, req: &Request) -> Result<CountEstimate, EstimatorError> {
        let started = Instant::now();
        let path = req
            .image_path
            .as_ref()
            .ok_or(EstimatorError::MissingImage { request_id: req.id })?;
        let count = self.handle.detect(path)?;
        let (overhead_ms, overhead_mwh) = self.overhead.charge(started);
        Ok(CountEstimate {
            count,
            method: EstimatorKind::Sf,
            overhead_ms,
            overhead_mwh,
        })
    }
}

/// Output-based estimator: reuses the detected count of the previous
/// response on this stream, starting from a configured default.
pub struct ObEstimator {
    last_count: u32,
    initialized: bool,
    overhead: OverheadModel,
}

impl ObEstimator {
    pub fn new(default_count: u32, overhead: OverheadModel) -> Self {
        Self {
            last_count: default_count,
            initialized: false,
            overhead,
        }
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }
}

impl CountEstimator for ObEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Ob
    }

    fn estimate(&mut self, _req: &Request) -> Result<CountEstimate, EstimatorError> {
        let started = Instant::now();
        let (overhead_ms, overhead_mwh) = self.overhead.charge(started);
        Ok(CountEstimate {
            count: self.last_count,
            method: EstimatorKind::Ob,
            overhead_ms,
            overhead_mwh,
        })
    }

    fn observe_response(&mut self, resp: &DetectionResponse) {
        self.last_count = resp.detected_count;
        self.initialized = true;
    }
}

/// Ideal benchmark: reads the ground-truth count carried as request
/// metadata. Zero modeled overhead by definition.
pub struct OracleEstimator;

impl CountEstimator for OracleEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Oracle
    }

    fn estimate(&mut self, req: &Request) -> Result<CountEstimate, EstimatorError> {
        let count = req
            .truth_count
            .ok_or(EstimatorError::MissingGroundTruth { request_id: req.id })?;
        Ok(CountEstimate {
            count,
            method: EstimatorKind::Oracle,
            overhead_ms: 0.0,
            overhead_mwh: 0.0,
        })
    }
}

/// Placeholder for strategies that ignore the estimate entirely.
pub struct NullEstimator;

impl CountEstimator for NullEstimator {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::None
    }

    fn estimate(&mut self, _req: &Request) -> Result<CountEstimate, EstimatorError> {
        Ok(CountEstimate {
            count: 0,
            method: EstimatorKind::None,
            overhead_ms: 0.0,
            overhead_mwh: 0.0,
        })
    }
}
