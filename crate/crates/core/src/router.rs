//! Routing strategies over the profile table.
//!
//! The greedy router buckets the estimated object count into a group,
//! keeps the group's entries whose mAP is within `delta_map` points of
//! the group maximum, and returns the feasible entry with the lowest
//! energy. Threshold-first filtering reduces the choice to a
//! one-dimensional argmin, so the greedy pick is exactly optimal; a
//! brute-force reference implementation exists to check that claim.

use std::cmp::Ordering;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{GroupLabel, GroupRules, PairKey, ProfileEntry, ProfileTable};

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("no profile entries for group {0}")]
    EmptyGroup(GroupLabel),
    #[error("strategy `{0}` requires an object-count estimate")]
    MissingCount(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    RoundRobin,
    Random,
    LowestEnergy,
    LowestInference,
    HighestMap,
    HighestMapGroup,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::RoundRobin => "round-robin",
            Strategy::Random => "random",
            Strategy::LowestEnergy => "lowest-energy",
            Strategy::LowestInference => "lowest-inference",
            Strategy::HighestMap => "highest-map",
            Strategy::HighestMapGroup => "highest-map-group",
        }
    }

    /// Whether routing needs a per-request object-count estimate.
    pub fn needs_count(&self) -> bool {
        matches!(self, Strategy::Greedy | Strategy::HighestMapGroup)
    }

    pub const ALL: [Strategy; 7] = [
        Strategy::Greedy,
        Strategy::RoundRobin,
        Strategy::Random,
        Strategy::LowestEnergy,
        Strategy::LowestInference,
        Strategy::HighestMap,
        Strategy::HighestMapGroup,
    ];
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "rr" | "round-robin" | "round_robin" => Ok(Strategy::RoundRobin),
            "rnd" | "random" => Ok(Strategy::Random),
            "le" | "lowest-energy" | "lowest_energy" => Ok(Strategy::LowestEnergy),
            "li" | "lowest-inference" | "lowest_inference" => Ok(Strategy::LowestInference),
            "hm" | "highest-map" | "highest_map" => Ok(Strategy::HighestMap),
            "hmg" | "highest-map-group" | "highest_map_group" => Ok(Strategy::HighestMapGroup),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// What to do when the estimated group has no profile entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    #[default]
    Error,
    GlobalTable,
}

/// Deterministic total order used to break metric ties: lower energy,
/// then lower latency, then higher mAP, then lexicographic pair id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    Standard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub delta_map: f64,
    pub rules: GroupRules,
    pub fallback: FallbackPolicy,
    pub tie_break: TieBreak,
    pub rnd_seed: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            delta_map: 0.0,
            rules: GroupRules::default_five(),
            fallback: FallbackPolicy::default(),
            tie_break: TieBreak::default(),
            rnd_seed: 42,
        }
    }
}

/// Mutable per-stream state: the round-robin cursor and the seeded
/// generator for the random router. One instance per request stream.
#[derive(Debug)]
pub struct RouterState {
    rr_cursor: usize,
    rnd: ChaCha8Rng,
}

impl RouterState {
    pub fn new(seed: u64) -> Self {
        Self {
            rr_cursor: 0,
            rnd: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Outcome of one routing step, including the audit trail of the
/// feasibility filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub pair: PairKey,
    /// Group of the profile entry whose costs the decision charges.
    /// Equals the estimated group except under the global-table
    /// fallback, which sets `fallback_used`.
    pub group: GroupLabel,
    pub estimated_count: Option<u32>,
    pub map_max: Option<f64>,
    pub map_floor: Option<f64>,
    pub feasible_count: usize,
    pub strategy: String,
    pub chosen_map: f64,
    pub chosen_latency_ms: f64,
    pub chosen_energy_mwh: f64,
    pub fallback_used: bool,
    pub decision_overhead_ms: f64,
    pub decision_overhead_mwh: f64,
}

// Energy first, then latency, then accuracy (descending), then pair id.
fn preference(a: &ProfileEntry, b: &ProfileEntry) -> Ordering {
    a.energy_mwh
        .total_cmp(&b.energy_mwh)
        .then(a.latency_ms.total_cmp(&b.latency_ms))
        .then(b.map.total_cmp(&a.map))
        .then(a.model_id.cmp(&b.model_id))
        .then(a.device_id.cmp(&b.device_id))
}

// Accuracy first (descending), remaining ties as in `preference`.
fn accuracy_preference(a: &ProfileEntry, b: &ProfileEntry) -> Ordering {
    b.map
        .total_cmp(&a.map)
        .then(a.energy_mwh.total_cmp(&b.energy_mwh))
        .then(a.latency_ms.total_cmp(&b.latency_ms))
        .then(a.model_id.cmp(&b.model_id))
        .then(a.device_id.cmp(&b.device_id))
}

fn decision_from_entry(
    entry: &ProfileEntry,
    strategy: Strategy,
    estimated_count: Option<u32>,
    map_max: Option<f64>,
    map_floor: Option<f64>,
    feasible_count: usize,
    fallback_used: bool,
) -> RoutingDecision {
    RoutingDecision {
        pair: entry.pair(),
        group: entry.group.clone(),
        estimated_count,
        map_max,
        map_floor,
        feasible_count,
        strategy: strategy.as_str().to_string(),
        chosen_map: entry.map,
        chosen_latency_ms: entry.latency_ms,
        chosen_energy_mwh: entry.energy_mwh,
        fallback_used,
        decision_overhead_ms: 0.0,
        decision_overhead_mwh: 0.0,
    }
}

// Group pool with the configured fallback. The bool reports whether the
// fallback widened the pool to the whole table.
fn group_pool<'a>(
    table: &'a ProfileTable,
    group: &GroupLabel,
    cfg: &RoutingConfig,
) -> Result<(Vec<&'a ProfileEntry>, bool), RouteError> {
    let pool: Vec<&ProfileEntry> = table.entries.iter().filter(|e| &e.group == group).collect();
    if !pool.is_empty() {
        return Ok((pool, false));
    }
    match cfg.fallback {
        FallbackPolicy::Error => Err(RouteError::EmptyGroup(group.clone())),
        FallbackPolicy::GlobalTable => Ok((table.entries.iter().collect(), true)),
    }
}

/// Greedy selection: within the count's group, keep entries whose mAP
/// is at least `map_max - delta_map` and return the cheapest by energy.
pub fn route_greedy(
    table: &ProfileTable,
    count: u32,
    cfg: &RoutingConfig,
) -> Result<RoutingDecision, RouteError> {
    let group = cfg.rules.group_of(count);
    let (pool, fallback_used) = group_pool(table, &group, cfg)?;

    let map_max = pool.iter().map(|e| e.map).fold(f64::NEG_INFINITY, f64::max);
    let map_floor = map_max - cfg.delta_map;
    let feasible: Vec<&ProfileEntry> = pool.into_iter().filter(|e| e.map >= map_floor).collect();
    let chosen = feasible
        .iter()
        .min_by(|a, b| preference(a, b))
        .expect("feasible set contains the group maximum");
    Ok(decision_from_entry(
        chosen,
        Strategy::Greedy,
        Some(count),
        Some(map_max),
        Some(map_floor),
        feasible.len(),
        fallback_used,
    ))
}

// Per-pair aggregate used by the count-independent strategies. Energy
// and latency are means across the pair's group entries; the accuracy
// score is the pair's best group mAP.
struct PairAggregate<'a> {
    mean_energy: f64,
    mean_latency: f64,
    best_map: f64,
    first_entry: &'a ProfileEntry,
    best_entry: &'a ProfileEntry,
}

fn aggregate_pairs<'a>(table: &'a ProfileTable) -> Vec<PairAggregate<'a>> {
    let mut aggs: Vec<(PairKey, PairAggregate<'a>)> = Vec::new();
    for entry in &table.entries {
        let pair = entry.pair();
        match aggs.iter_mut().find(|(p, _)| *p == pair) {
            Some((_, agg)) => {
                agg.mean_energy += entry.energy_mwh;
                agg.mean_latency += entry.latency_ms;
                if entry.map > agg.best_map {
                    agg.best_map = entry.map;
                    agg.best_entry = entry;
                }
            }
            None => aggs.push((
                pair,
                PairAggregate {
                    mean_energy: entry.energy_mwh,
                    mean_latency: entry.latency_ms,
                    best_map: entry.map,
                    first_entry: entry,
                    best_entry: entry,
                },
            )),
        }
    }
    let counts: Vec<usize> = aggs
        .iter()
        .map(|(p, _)| table.entries.iter().filter(|e| e.pair() == *p).count())
        .collect();
    for ((_, agg), n) in aggs.iter_mut().zip(counts) {
        agg.mean_energy /= n as f64;
        agg.mean_latency /= n as f64;
    }
    aggs.into_iter().map(|(_, a)| a).collect()
}

fn pick_pair_by<'a>(
    aggs: &[PairAggregate<'a>],
    mut better: impl FnMut(&PairAggregate<'a>, &PairAggregate<'a>) -> bool,
) -> &'a ProfileEntry {
    let mut best = &aggs[0];
    for agg in &aggs[1..] {
        if better(agg, best) {
            best = agg;
        }
    }
    best.first_entry
}

fn lex_less(a: &ProfileEntry, b: &ProfileEntry) -> bool {
    (&a.model_id, &a.device_id) < (&b.model_id, &b.device_id)
}

/// Baseline strategies. Round-robin cycles the distinct pairs in table
/// order, the random router draws uniformly with the per-stream seeded
/// generator, and the remaining strategies are count-independent
/// argmins/argmaxes over the distinct pairs (highest-map-group being
/// the per-group argmax, which does need `count`).
pub fn route_baseline(
    strategy: Strategy,
    table: &ProfileTable,
    count: Option<u32>,
    cfg: &RoutingConfig,
    state: &mut RouterState,
) -> Result<RoutingDecision, RouteError> {
    if strategy == Strategy::HighestMapGroup {
        let count = count.ok_or(RouteError::MissingCount("highest-map-group"))?;
        let group = cfg.rules.group_of(count);
        let (pool, fallback_used) = group_pool(table, &group, cfg)?;
        let map_max = pool.iter().map(|e| e.map).fold(f64::NEG_INFINITY, f64::max);
        let feasible = pool.iter().filter(|e| e.map >= map_max).count();
        let chosen = pool
            .iter()
            .min_by(|a, b| accuracy_preference(a, b))
            .expect("group pool is non-empty");
        return Ok(decision_from_entry(
            chosen,
            strategy,
            Some(count),
            Some(map_max),
            Some(map_max),
            feasible,
            fallback_used,
        ));
    }

    let aggs = aggregate_pairs(table);
    let pairs = aggs.len();
    let chosen: &ProfileEntry = match strategy {
        Strategy::RoundRobin => {
            let entry = aggs[state.rr_cursor % pairs].first_entry;
            state.rr_cursor = (state.rr_cursor + 1) % pairs;
            entry
        }
        Strategy::Random => aggs[state.rnd.gen_range(0..pairs)].first_entry,
        Strategy::LowestEnergy => pick_pair_by(&aggs, |a, b| {
            a.mean_energy < b.mean_energy
                || (a.mean_energy == b.mean_energy && a.mean_latency < b.mean_latency)
                || (a.mean_energy == b.mean_energy
                    && a.mean_latency == b.mean_latency
                    && lex_less(a.first_entry, b.first_entry))
        }),
        Strategy::LowestInference => pick_pair_by(&aggs, |a, b| {
            a.mean_latency < b.mean_latency
                || (a.mean_latency == b.mean_latency && a.mean_energy < b.mean_energy)
                || (a.mean_latency == b.mean_latency
                    && a.mean_energy == b.mean_energy
                    && lex_less(a.first_entry, b.first_entry))
        }),
        Strategy::HighestMap => {
            let agg = aggs
                .iter()
                .reduce(|best, a| {
                    if a.best_map > best.best_map
                        || (a.best_map == best.best_map && a.mean_energy < best.mean_energy)
                        || (a.best_map == best.best_map
                            && a.mean_energy == best.mean_energy
                            && lex_less(a.first_entry, best.first_entry))
                    {
                        a
                    } else {
                        best
                    }
                })
                .expect("table is non-empty");
            agg.best_entry
        }
        Strategy::Greedy | Strategy::HighestMapGroup => unreachable!("handled above"),
    };
    Ok(decision_from_entry(
        chosen, strategy, count, None, None, pairs, false,
    ))
}

/// Single entry point used by the harness and the gateway service.
pub fn route(
    strategy: Strategy,
    table: &ProfileTable,
    count: Option<u32>,
    cfg: &RoutingConfig,
    state: &mut RouterState,
) -> Result<RoutingDecision, RouteError> {
    match strategy {
        Strategy::Greedy => {
            route_greedy(table, count.ok_or(RouteError::MissingCount("greedy"))?, cfg)
        }
        _ => route_baseline(strategy, table, count, cfg, state),
    }
}

/// Exhaustive reference for the greedy router: scans every entry,
/// applies the feasibility predicate, and tracks the minimum with
/// explicit tie-break comparisons. Exists as an independent oracle for
/// equivalence testing; do not use it on the hot path.
pub fn route_reference_bruteforce(
    table: &ProfileTable,
    count: u32,
    cfg: &RoutingConfig,
) -> Result<RoutingDecision, RouteError> {
    let group = cfg.rules.group_of(count);
    let mut pool: Vec<&ProfileEntry> = Vec::new();
    for entry in &table.entries {
        if entry.group == group {
            pool.push(entry);
        }
    }
    let mut fallback_used = false;
    if pool.is_empty() {
        match cfg.fallback {
            FallbackPolicy::Error => return Err(RouteError::EmptyGroup(group)),
            FallbackPolicy::GlobalTable => {
                pool = table.entries.iter().collect();
                fallback_used = true;
            }
        }
    }

    let mut map_max = f64::NEG_INFINITY;
    for entry in &pool {
        if entry.map > map_max {
            map_max = entry.map;
        }
    }
    let map_floor = map_max - cfg.delta_map;

    let mut best: Option<&ProfileEntry> = None;
    let mut feasible_count = 0usize;
    for entry in &pool {
        if entry.map < map_floor {
            continue;
        }
        feasible_count += 1;
        best = Some(match best {
            None => entry,
            Some(b) => {
                if entry.energy_mwh < b.energy_mwh {
                    entry
                } else if entry.energy_mwh > b.energy_mwh {
                    b
                } else if entry.latency_ms < b.latency_ms {
                    entry
                } else if entry.latency_ms > b.latency_ms {
                    b
                } else if entry.map > b.map {
                    entry
                } else if entry.map < b.map {
                    b
                } else if lex_less(entry, b) {
                    entry
                } else {
                    b
                }
            }
        });
    }
    let chosen = best.expect("feasible set contains the maximum");
    Ok(decision_from_entry(
        chosen,
        Strategy::Greedy,
        Some(count),
        Some(map_max),
        Some(map_floor),
        feasible_count,
        fallback_used,
    ))
}
