//! Acceptance gates for the routing engine. Each test is one criterion
//! and prints a PASS line with the measured figures (visible with
//! `cargo test -p ecore --test acceptance -- --nocapture`).

use std::net::TcpListener;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ecore::detector::{serve_stub_tcp, StubOptions};
use ecore::estimator::count_objects;
use ecore::harness::{replay, sweep_delta, ExperimentReport, ReplayConfig};
use ecore::profile::{
    seed_profile, GroupLabel, GroupRule, GroupRules, PairKey, ProfileEntry, ProfileTable,
};
use ecore::router::{
    route_baseline, route_greedy, route_reference_bruteforce, FallbackPolicy, RouteError,
    RouterState, RoutingConfig, Strategy,
};
use ecore::workload::{
    build_balanced_sorted, generate_synthetic, render_rectangles, SyntheticSpec, WorkloadManifest,
};
use ecore::{EdConfig, EstimatorKind};

struct Corpus {
    _dir: tempfile::TempDir,
    manifest: WorkloadManifest,
    table: ProfileTable,
}

/// Shared 1000-item synthetic workload with a long-tailed count mix,
/// rendered once per test process.
fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let spec = SyntheticSpec {
            items: 1000,
            width: 160,
            height: 160,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let manifest = generate_synthetic(dir.path(), &spec, &GroupRules::default_five())
            .expect("synthetic corpus");
        Corpus {
            _dir: dir,
            manifest,
            table: seed_profile(),
        }
    })
}

fn det_config(strategy: Strategy, estimator: EstimatorKind, delta: f64) -> ReplayConfig {
    let mut cfg = ReplayConfig::new(strategy, estimator);
    cfg.routing.delta_map = delta;
    cfg.gateway.deterministic = true;
    cfg
}

fn spawn_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let _ = serve_stub_tcp(listener, StubOptions::default());
    });
    addr
}

fn fuzz_rules(rng: &mut ChaCha8Rng) -> GroupRules {
    let n_groups = rng.gen_range(1..=5u32);
    let rules = (0..n_groups)
        .map(|g| GroupRule {
            lo: g,
            hi: (g + 1 < n_groups).then_some(g),
            label: format!("G{}", g + 1).into(),
        })
        .collect();
    GroupRules::new(rules).unwrap()
}

fn fuzz_table(rng: &mut ChaCha8Rng, rules: &GroupRules) -> ProfileTable {
    let labels = rules.labels();
    let n_entries = rng.gen_range(5..=64usize);
    let mut entries: Vec<ProfileEntry> = Vec::new();
    let mut keys = std::collections::BTreeSet::new();
    let mut attempts = 0;
    while entries.len() < n_entries && attempts < 2000 {
        attempts += 1;
        let model = format!("m{}", rng.gen_range(0..8u32));
        let device = format!("d{}", rng.gen_range(0..8u32));
        let group = labels[rng.gen_range(0..labels.len())].clone();
        if !keys.insert((model.clone(), device.clone(), group.clone())) {
            continue;
        }
        let energy = if !entries.is_empty() && rng.gen_bool(0.3) {
            // deliberate ties exercise the tie-break order
            entries[rng.gen_range(0..entries.len())].energy_mwh
        } else {
            rng.gen_range(1..=500u32) as f64 / 100.0
        };
        entries.push(ProfileEntry {
            model_id: model,
            device_id: device,
            framework: "fw".into(),
            group,
            map: rng.gen_range(0..=1000u32) as f64 / 10.0,
            latency_ms: rng.gen_range(10..=1000u32) as f64 / 10.0,
            energy_mwh: energy,
        });
    }
    ProfileTable::from_entries(entries, "fuzz").unwrap()
}

/// Criterion 1: the greedy router returns the identical pair to the
/// exhaustive reference on 1000 fuzzed instances, in under 5 seconds.
/// Criterion 2's feasibility invariant is asserted on every instance.
#[test]
fn acceptance_c01_greedy_matches_bruteforce_on_fuzzed_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xEC0);
    let started = Instant::now();
    let mut checked = 0u32;
    for case in 0..1000 {
        let rules = fuzz_rules(&mut rng);
        let table = fuzz_table(&mut rng, &rules);
        let cfg = RoutingConfig {
            delta_map: rng.gen_range(0..=300u32) as f64 / 10.0,
            rules,
            fallback: if case % 2 == 0 {
                FallbackPolicy::Error
            } else {
                FallbackPolicy::GlobalTable
            },
            ..RoutingConfig::default()
        };
        let count = rng.gen_range(0..12u32);
        let fast = route_greedy(&table, count, &cfg);
        let slow = route_reference_bruteforce(&table, count, &cfg);
        match (fast, slow) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.pair, b.pair, "case {case}: pair mismatch");
                assert_eq!(a.feasible_count, b.feasible_count, "case {case}");
                assert!(
                    a.chosen_map >= a.map_floor.unwrap(),
                    "case {case}: infeasible pick"
                );
                assert!(a.feasible_count >= 1);
                checked += 1;
            }
            (Err(RouteError::EmptyGroup(a)), Err(RouteError::EmptyGroup(b))) => {
                assert_eq!(a, b);
            }
            (fast, slow) => panic!("case {case}: divergent outcomes {fast:?} vs {slow:?}"),
        }
    }
    let elapsed = started.elapsed();
    assert!(checked > 500, "too few routable instances: {checked}");
    assert!(
        elapsed < Duration::from_secs(5),
        "fuzz equivalence took {elapsed:?}"
    );
    println!("ACCEPTANCE C1 greedy-vs-bruteforce: PASS ({checked} routed instances, {elapsed:?})");
}

/// Criterion 2: every greedy and highest-map-group decision across
/// replay runs satisfies chosen mAP >= map_max(group) - delta.
#[test]
fn acceptance_c02_feasibility_invariant_in_replays() {
    let corpus = corpus();
    let mut decisions = 0u64;
    for (strategy, estimator) in [
        (Strategy::Greedy, EstimatorKind::Oracle),
        (Strategy::Greedy, EstimatorKind::Ob),
        (Strategy::HighestMapGroup, EstimatorKind::Oracle),
    ] {
        for delta in [0.0, 5.0, 15.0] {
            let report = replay(
                &corpus.manifest,
                &det_config(strategy, estimator, delta),
                &corpus.table,
            )
            .unwrap();
            for rec in report.log.as_ref().unwrap() {
                let floor = rec.map_floor.expect("greedy/hmg decisions carry a floor");
                assert!(
                    rec.chosen_map >= floor,
                    "feasibility violated: {} < {floor}",
                    rec.chosen_map
                );
                decisions += 1;
            }
        }
    }
    println!("ACCEPTANCE C2 feasibility invariant: PASS ({decisions} decisions, 0 violations)");
}

/// Criterion 3: the seed profile reproduces the per-metric winners:
/// lowest-energy, lowest-inference, the five per-group accuracy
/// leaders, and greedy at delta zero equals highest-map-per-group.
#[test]
fn acceptance_c03_seed_profile_reproduces_selection_table() {
    let table = seed_profile();
    let cfg = RoutingConfig::default();
    let mut state = RouterState::new(1);

    let le = route_baseline(Strategy::LowestEnergy, &table, None, &cfg, &mut state).unwrap();
    assert_eq!(le.pair, PairKey::new("ssd_v1", "jetson_orin_nano"));

    let li = route_baseline(Strategy::LowestInference, &table, None, &cfg, &mut state).unwrap();
    assert_eq!(li.pair, PairKey::new("ssd_v1", "pi5"));

    let expected_leaders = [
        (0u32, PairKey::new("ssd_v1", "pi5_tpu")),
        (1, PairKey::new("ssd_lite", "pi5")),
        (2, PairKey::new("yolov8_small", "jetson_orin_nano")),
        (3, PairKey::new("yolov8_small", "pi5_ai_hat")),
        (4, PairKey::new("yolov8_small", "pi5_ai_hat")),
    ];
    for (count, want) in &expected_leaders {
        let hmg = route_baseline(
            Strategy::HighestMapGroup,
            &table,
            Some(*count),
            &cfg,
            &mut state,
        )
        .unwrap();
        assert_eq!(&hmg.pair, want, "group leader for count {count}");
    }

    for count in 0..=10u32 {
        let greedy = route_greedy(&table, count, &cfg).unwrap();
        let hmg = route_baseline(
            Strategy::HighestMapGroup,
            &table,
            Some(count),
            &cfg,
            &mut state,
        )
        .unwrap();
        assert_eq!(
            greedy.pair, hmg.pair,
            "delta-zero equality at count {count}"
        );
    }
    println!("ACCEPTANCE C3 selection-table reproduction: PASS");
}

/// Criterion 4: oracle energy is non-increasing across the delta grid
/// and modeled accuracy never drops below the per-group ceiling minus
/// delta.
#[test]
fn acceptance_c04_delta_sweep_monotone() {
    let corpus = corpus();
    let deltas = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0];
    let base = det_config(Strategy::Greedy, EstimatorKind::Oracle, 0.0);
    let reports = sweep_delta(
        &corpus.manifest,
        &base,
        &[(Strategy::Greedy, EstimatorKind::Oracle)],
        &deltas,
        &corpus.table,
    )
    .unwrap();

    let hmg = replay(
        &corpus.manifest,
        &det_config(Strategy::HighestMapGroup, EstimatorKind::Oracle, 0.0),
        &corpus.table,
    )
    .unwrap();

    let energies: Vec<f64> = reports
        .iter()
        .map(|r| r.metrics.dynamic_energy_mwh)
        .collect();
    for window in energies.windows(2) {
        assert!(
            window[1] <= window[0] + 1e-9,
            "energy not monotone: {energies:?}"
        );
    }
    for (report, delta) in reports.iter().zip(deltas) {
        assert!(
            report.metrics.modeled_map >= hmg.metrics.modeled_map - delta - 1e-9,
            "accuracy floor violated at delta {delta}"
        );
    }
    println!(
        "ACCEPTANCE C4 delta-sweep monotonicity: PASS (energy mWh {:?})",
        energies
            .iter()
            .map(|e| (e * 10.0).round() / 10.0)
            .collect::<Vec<_>>()
    );
}

fn run_all_strategies(corpus: &Corpus, sf_addr: &str) -> Vec<(String, ExperimentReport)> {
    let combos = [
        (Strategy::Greedy, EstimatorKind::Oracle),
        (Strategy::Greedy, EstimatorKind::Ed),
        (Strategy::Greedy, EstimatorKind::Sf),
        (Strategy::Greedy, EstimatorKind::Ob),
        (Strategy::RoundRobin, EstimatorKind::None),
        (Strategy::Random, EstimatorKind::None),
        (Strategy::LowestEnergy, EstimatorKind::None),
        (Strategy::LowestInference, EstimatorKind::None),
        (Strategy::HighestMap, EstimatorKind::None),
        (Strategy::HighestMapGroup, EstimatorKind::Oracle),
    ];
    combos
        .iter()
        .map(|&(strategy, estimator)| {
            let mut cfg = det_config(strategy, estimator, 5.0);
            cfg.sf.endpoint = Some(sf_addr.to_string());
            let report = replay(&corpus.manifest, &cfg, &corpus.table).unwrap();
            (cfg.label(), report)
        })
        .collect()
}

/// Criterion 5: on the synthetic workload with exact-fidelity backends,
/// lowest-energy has minimal energy, highest-map-per-group has maximal
/// modeled accuracy, and lowest-inference has minimal latency across
/// all ten strategies, within a 10 second budget. The oracle router
/// additionally stays within delta of the accuracy ceiling.
#[test]
fn acceptance_c05_router_ordering_on_synthetic_workload() {
    let corpus = corpus();
    let sf_addr = spawn_stub();
    let started = Instant::now();
    let reports = run_all_strategies(corpus, &sf_addr);
    let elapsed = started.elapsed();

    let by_label = |label: &str| {
        &reports
            .iter()
            .find(|(l, _)| l == label)
            .unwrap_or_else(|| panic!("missing report {label}"))
            .1
    };
    let le = by_label("lowest-energy");
    let li = by_label("lowest-inference");
    let hmg = by_label("highest-map-group");
    let orc = by_label("greedy-oracle");

    for (label, report) in &reports {
        assert!(report.metrics.skipped == 0, "{label} skipped requests");
        assert!(
            le.metrics.dynamic_energy_mwh <= report.metrics.dynamic_energy_mwh + 1e-9,
            "lowest-energy beaten by {label}"
        );
        assert!(
            hmg.metrics.modeled_map >= report.metrics.modeled_map - 1e-9,
            "highest-map-group beaten by {label}"
        );
        assert!(
            li.metrics.total_latency_s <= report.metrics.total_latency_s + 1e-9,
            "lowest-inference beaten by {label}"
        );
    }
    assert!(
        orc.metrics.modeled_map >= hmg.metrics.modeled_map - 5.0 - 1e-9,
        "oracle fell below the ceiling minus delta"
    );
    assert!(
        elapsed < Duration::from_secs(10),
        "strategy matrix took {elapsed:?}"
    );
    println!("ACCEPTANCE C5 router ordering: PASS (10 strategies, {elapsed:?})");
}

/// Criterion 6: the edge-detection greedy router at delta 5 saves at
/// least 30% energy against the accuracy-centric baseline while
/// keeping at least 95% of its modeled accuracy.
#[test]
fn acceptance_c06_greedy_ed_energy_band() {
    let corpus = corpus();
    let ed = replay(
        &corpus.manifest,
        &det_config(Strategy::Greedy, EstimatorKind::Ed, 5.0),
        &corpus.table,
    )
    .unwrap();
    let hmg = replay(
        &corpus.manifest,
        &det_config(Strategy::HighestMapGroup, EstimatorKind::Oracle, 0.0),
        &corpus.table,
    )
    .unwrap();

    let energy_ratio = ed.metrics.dynamic_energy_mwh / hmg.metrics.dynamic_energy_mwh;
    let map_ratio = ed.metrics.modeled_map / hmg.metrics.modeled_map;
    assert!(ed.metrics.skipped == 0);
    assert!(
        energy_ratio <= 0.70,
        "energy ratio {energy_ratio:.4} exceeds 0.70"
    );
    assert!(map_ratio >= 0.95, "map ratio {map_ratio:.4} below 0.95");
    println!(
        "ACCEPTANCE C6 energy band: PASS (energy ratio {energy_ratio:.3}, accuracy ratio {map_ratio:.3})"
    );
}

/// Criterion 7: on the balanced sorted workload the output-based greedy
/// router switches pairs at most five times, and its modeled accuracy
/// stays above the ceiling minus delta minus the analytic one-request
/// transition penalty.
#[test]
fn acceptance_c07_ob_switch_bound_and_accuracy_floor() {
    let corpus = corpus();
    let delta = 5.0;
    let rules = GroupRules::default_five();
    let balanced = build_balanced_sorted(&corpus.manifest, 200, 17, &rules).unwrap();

    let report = replay(
        &balanced,
        &det_config(Strategy::Greedy, EstimatorKind::Ob, delta),
        &corpus.table,
    )
    .unwrap();
    assert!(
        report.metrics.switch_count <= 5,
        "switch count {} exceeds 5",
        report.metrics.switch_count
    );

    // Ceiling: mean per-item group maximum.
    let group_max = |label: &GroupLabel| {
        corpus
            .table
            .entries
            .iter()
            .filter(|e| &e.group == label)
            .map(|e| e.map)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let hmg_map: f64 = balanced
        .items
        .iter()
        .map(|i| group_max(&i.group))
        .sum::<f64>()
        / balanced.len() as f64;

    // Analytic penalty: at each group transition exactly one request is
    // still routed with the previous block's pair and charged at the
    // new group.
    let cfg = RoutingConfig {
        delta_map: delta,
        ..RoutingConfig::default()
    };
    let block_counts: Vec<u32> = {
        let mut firsts = Vec::new();
        let mut last_group: Option<GroupLabel> = None;
        for item in &balanced.items {
            if last_group.as_ref() != Some(&item.group) {
                firsts.push(item.count);
                last_group = Some(item.group.clone());
            }
        }
        firsts
    };
    let mut penalty = 0.0;
    for pair in block_counts.windows(2) {
        let prev_pick = route_greedy(&corpus.table, pair[0], &cfg).unwrap();
        let new_pick = route_greedy(&corpus.table, pair[1], &cfg).unwrap();
        let new_group = cfg.rules.group_of(pair[1]);
        let prev_at_new = corpus
            .table
            .entry_for(&prev_pick.pair, &new_group)
            .expect("seed table is complete")
            .map;
        let new_at_new = corpus
            .table
            .entry_for(&new_pick.pair, &new_group)
            .expect("seed table is complete")
            .map;
        penalty += (new_at_new - prev_at_new).max(0.0);
    }
    penalty /= balanced.len() as f64;

    let floor = hmg_map - delta - penalty;
    assert!(
        report.metrics.modeled_map >= floor - 1e-9,
        "modeled map {} below floor {floor}",
        report.metrics.modeled_map
    );
    println!(
        "ACCEPTANCE C7 output-based bound: PASS (switches {}, map {:.3} >= floor {:.3})",
        report.metrics.switch_count, report.metrics.modeled_map, floor
    );
}

/// Criterion 8: the edge-detection estimator counts synthetic
/// rectangle scenes exactly for k in 0..=6, in under 2 seconds.
#[test]
fn acceptance_c08_ed_exact_on_synthetic_rectangles() {
    let started = Instant::now();
    let cfg = EdConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xED);
    for k in 0..=6usize {
        let img = render_rectangles(256, 256, k, &mut rng);
        let counted = count_objects(&img, &cfg).unwrap();
        assert_eq!(counted as usize, k, "expected {k} rectangles");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(2), "took {elapsed:?}");
    println!("ACCEPTANCE C8 edge-count exactness: PASS (k = 0..=6, {elapsed:?})");
}

/// Criterion 9: report totals equal per-request sums exactly, dynamic
/// energy decomposes into backend plus gateway energy, and the idle
/// baseline is reported separately from dynamic energy.
#[test]
fn acceptance_c09_accounting_identities() {
    let corpus = corpus();
    let cfg = det_config(Strategy::Greedy, EstimatorKind::Oracle, 5.0);
    let report = replay(&corpus.manifest, &cfg, &corpus.table).unwrap();
    let log = report.log.as_ref().unwrap();

    let rel_eq = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);

    let backend: f64 = log.iter().map(|r| r.backend_energy_mwh).sum();
    let gateway: f64 = log.iter().map(|r| r.gateway_energy_mwh).sum();
    let latency_ms: f64 = log
        .iter()
        .map(|r| r.gateway_ms + r.network_ms + r.inference_ms)
        .sum();

    assert!(rel_eq(report.metrics.backend_energy_mwh, backend));
    assert!(rel_eq(report.metrics.gateway_energy_mwh, gateway));
    assert!(rel_eq(report.metrics.dynamic_energy_mwh, backend + gateway));
    assert!(rel_eq(report.metrics.total_latency_s, latency_ms / 1000.0));

    let devices = corpus.table.distinct_devices();
    let powers = cfg.idle.powers_for(devices.iter().map(String::as_str));
    let expected_idle =
        ecore::idle_baseline(report.metrics.total_latency_s, powers.iter().copied());
    assert!(rel_eq(report.metrics.idle_baseline_mwh, expected_idle));
    // idle stays out of the dynamic figure
    assert!(rel_eq(report.metrics.dynamic_energy_mwh, backend + gateway));

    println!(
        "ACCEPTANCE C9 accounting identities: PASS ({} requests, dynamic {:.3} mWh, idle {:.3} mWh)",
        report.metrics.requests, report.metrics.dynamic_energy_mwh, report.metrics.idle_baseline_mwh
    );
}
