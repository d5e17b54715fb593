//! Energy-conscious routing for edge object-detection workloads.
//!
//! A gateway estimates the object count of each incoming image with a
//! lightweight front-end (ground truth, Canny edge analysis, an
//! external detector process, or the previous response), buckets the
//! count into a group, and routes the request to the profiled
//! model–device pair that minimizes energy while staying within a
//! configurable accuracy tolerance of the group's best mAP. The crate
//! also ships the simulation backend, dataset builders, and the
//! closed-loop replay harness used to evaluate routing strategies.

pub mod backend;
pub mod canny;
pub mod components;
pub mod detector;
pub mod estimator;
pub mod harness;
pub mod image;
pub mod profile;
pub mod router;
pub mod workload;

pub use backend::{
    idle_baseline, Backend, BackendConfig, BackendError, BackendMode, DetectionResponse, Fidelity,
    Request,
};
pub use canny::{canny, CannyError, EdgeMap};
pub use estimator::{
    count_objects, CountEstimate, CountEstimator, EdConfig, EstimatorError, EstimatorKind,
};
pub use harness::{
    build_estimator, default_estimator, modeled_accuracy, replay, summary_csv, sweep_delta,
    DeterministicOverheads, ExperimentReport, GatewayConfig, HarnessError, IdleConfig,
    MetricsAccumulator, MetricsSnapshot, ReplayConfig, RequestRecord, Session, SfConfig,
};
pub use image::{ImageError, ImageRaster};
pub use profile::{
    pareto_front, seed_profile, seed_profile_arc, GroupLabel, GroupRule, GroupRules, Objective,
    PairKey, ProfileEntry, ProfileError, ProfileFormat, ProfileTable,
};
pub use router::{
    route, route_baseline, route_greedy, route_reference_bruteforce, FallbackPolicy, RouteError,
    RouterState, RoutingConfig, RoutingDecision, Strategy, TieBreak,
};
pub use workload::{
    build_balanced_sorted, default_count_weights, generate_synthetic, import_coco_counts,
    import_frame_labels, import_manifest, ManifestItem, ManifestOrdering, SyntheticSpec,
    WorkloadError, WorkloadManifest,
};
