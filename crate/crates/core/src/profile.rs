//! Profiling table of model–device pairs plus object-count group rules.
//!
//! Every deployable (model, device) pair is profiled per object-count
//! group with its accuracy (mAP, 0–100 points), per-request latency and
//! per-request energy. The table is immutable after load and is the
//! single input the routers search.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact, ordered header of the canonical profile CSV format.
pub const PROFILE_CSV_HEADER: [&str; 7] = [
    "model_id",
    "device_id",
    "framework",
    "group",
    "map",
    "latency_ms",
    "energy_mwh",
];

const SEED_PROFILE_CSV: &str = include_str!("../assets/seed_profile.csv");

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("malformed row at line {line}, column `{column}`: {message}")]
    MalformedRow {
        line: u64,
        column: String,
        message: String,
    },
    #[error("duplicate entry for ({model_id}, {device_id}, {group})")]
    DuplicateEntry {
        model_id: String,
        device_id: String,
        group: GroupLabel,
    },
    #[error("profile table is empty")]
    EmptyTable,
    #[error("no profile entries for group {0}")]
    EmptyGroup(GroupLabel),
    #[error("invalid group rules: {0}")]
    BadRules(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Stable key for an object-count group, shared across profiles,
/// workloads, routing decisions and reports.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupLabel(pub String);

impl GroupLabel {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupLabel {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for GroupLabel {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// The routing unit: a detection model deployed on a specific device.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub model_id: String,
    pub device_id: String,
}

impl PairKey {
    pub fn new(model_id: impl Into<String>, device_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            device_id: device_id.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.model_id, self.device_id)
    }
}

/// One inclusive count range mapped to a group label. `hi = None`
/// means the range is open-ended above.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRule {
    pub lo: u32,
    #[serde(default)]
    pub hi: Option<u32>,
    pub label: GroupLabel,
}

impl GroupRule {
    fn contains(&self, count: u32) -> bool {
        count >= self.lo && self.hi.is_none_or(|hi| count <= hi)
    }
}

/// Ordered count-range to group-label mapping. Validated so the ranges
/// are disjoint, ascending, and cover every non-negative integer,
/// which makes [`GroupRules::group_of`] total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GroupRule>", into = "Vec<GroupRule>")]
pub struct GroupRules {
    rules: Vec<GroupRule>,
}

impl GroupRules {
    pub fn new(rules: Vec<GroupRule>) -> Result<Self, ProfileError> {
        if rules.is_empty() {
            return Err(ProfileError::BadRules("no rules given".into()));
        }
        if rules[0].lo != 0 {
            return Err(ProfileError::BadRules(format!(
                "first range must start at 0, starts at {}",
                rules[0].lo
            )));
        }
        for pair in rules.windows(2) {
            let hi = pair[0].hi.ok_or_else(|| {
                ProfileError::BadRules(format!(
                    "open-ended range for {} must be last",
                    pair[0].label
                ))
            })?;
            if hi < pair[0].lo {
                return Err(ProfileError::BadRules(format!(
                    "empty range [{}, {hi}]",
                    pair[0].lo
                )));
            }
            if pair[1].lo != hi + 1 {
                return Err(ProfileError::BadRules(format!(
                    "ranges must be contiguous and ascending: [{}, {hi}] then lo={}",
                    pair[0].lo, pair[1].lo
                )));
            }
        }
        let last = rules.last().unwrap();
        if last.hi.is_some() {
            return Err(ProfileError::BadRules(
                "last range must be open-ended to cover all counts".into(),
            ));
        }
        Ok(Self { rules })
    }

    /// The five default buckets: 0, 1, 2, 3 and "4 or more" objects.
    pub fn default_five() -> Self {
        let rule = |lo, hi, label: &str| GroupRule {
            lo,
            hi,
            label: label.into(),
        };
        Self::new(vec![
            rule(0, Some(0), "G1"),
            rule(1, Some(1), "G2"),
            rule(2, Some(2), "G3"),
            rule(3, Some(3), "G4"),
            rule(4, None, "G5"),
        ])
        .expect("default rules are valid")
    }

    /// Map a count onto the label of the unique range containing it.
    /// Total by construction.
    pub fn group_of(&self, count: u32) -> GroupLabel {
        for rule in &self.rules {
            if rule.contains(count) {
                return rule.label.clone();
            }
        }
        // unreachable by the constructor invariant; the last rule is
        // open-ended
        self.rules.last().unwrap().label.clone()
    }

    pub fn rules(&self) -> &[GroupRule] {
        &self.rules
    }

    /// Distinct labels in rule order.
    pub fn labels(&self) -> Vec<GroupLabel> {
        let mut seen = BTreeSet::new();
        self.rules
            .iter()
            .filter(|r| seen.insert(r.label.clone()))
            .map(|r| r.label.clone())
            .collect()
    }

    /// Index of the first rule carrying `label`, used to order groups.
    pub fn rule_index(&self, label: &GroupLabel) -> Option<usize> {
        self.rules.iter().position(|r| &r.label == label)
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let rules: Vec<GroupRule> =
            serde_json::from_reader(reader).map_err(|e| ProfileError::BadRules(e.to_string()))?;
        Self::new(rules)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        Self::from_json_reader(BufReader::new(File::open(path)?))
    }
}

impl Default for GroupRules {
    fn default() -> Self {
        Self::default_five()
    }
}

impl TryFrom<Vec<GroupRule>> for GroupRules {
    type Error = String;
    fn try_from(rules: Vec<GroupRule>) -> Result<Self, String> {
        Self::new(rules).map_err(|e| e.to_string())
    }
}

impl From<GroupRules> for Vec<GroupRule> {
    fn from(r: GroupRules) -> Self {
        r.rules
    }
}

/// One (model, device) pair's profiled figures for one object-count
/// group. mAP is on the 0–100 point scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub model_id: String,
    pub device_id: String,
    pub framework: String,
    pub group: GroupLabel,
    pub map: f64,
    pub latency_ms: f64,
    pub energy_mwh: f64,
}

impl ProfileEntry {
    pub fn pair(&self) -> PairKey {
        PairKey::new(self.model_id.clone(), self.device_id.clone())
    }

    fn check(&self) -> Result<(), (String, String)> {
        let field_err = |col: &str, msg: String| Err((col.to_string(), msg));
        if self.model_id.is_empty() {
            return field_err("model_id", "must not be empty".into());
        }
        if self.device_id.is_empty() {
            return field_err("device_id", "must not be empty".into());
        }
        if self.group.as_str().is_empty() {
            return field_err("group", "must not be empty".into());
        }
        if !self.map.is_finite() || !(0.0..=100.0).contains(&self.map) {
            return field_err("map", format!("{} outside [0, 100]", self.map));
        }
        if !self.latency_ms.is_finite() || self.latency_ms <= 0.0 {
            return field_err("latency_ms", format!("{} must be > 0", self.latency_ms));
        }
        if !self.energy_mwh.is_finite() || self.energy_mwh <= 0.0 {
            return field_err("energy_mwh", format!("{} must be > 0", self.energy_mwh));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileFormat {
    Csv,
    Json,
}

/// Immutable, validated collection of profile entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub source: String,
    pub entries: Vec<ProfileEntry>,
}

impl ProfileTable {
    /// Validate entries (invariants plus key uniqueness) and build a
    /// table. Entry positions are reported 1-based in errors.
    pub fn from_entries(
        entries: Vec<ProfileEntry>,
        source: impl Into<String>,
    ) -> Result<Self, ProfileError> {
        if entries.is_empty() {
            return Err(ProfileError::EmptyTable);
        }
        let mut seen = BTreeSet::new();
        for (idx, entry) in entries.iter().enumerate() {
            entry
                .check()
                .map_err(|(column, message)| ProfileError::MalformedRow {
                    line: idx as u64 + 1,
                    column,
                    message,
                })?;
            if !seen.insert((
                entry.model_id.clone(),
                entry.device_id.clone(),
                entry.group.clone(),
            )) {
                return Err(ProfileError::DuplicateEntry {
                    model_id: entry.model_id.clone(),
                    device_id: entry.device_id.clone(),
                    group: entry.group.clone(),
                });
            }
        }
        Ok(Self {
            source: source.into(),
            entries,
        })
    }

    pub fn load<R: Read>(reader: R, format: ProfileFormat) -> Result<Self, ProfileError> {
        match format {
            ProfileFormat::Csv => Self::load_csv(reader),
            ProfileFormat::Json => Self::load_json(reader),
        }
    }

    pub fn load_csv<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(&e))?.clone();
        for (idx, expected) in PROFILE_CSV_HEADER.iter().enumerate() {
            if headers.get(idx) != Some(expected) {
                return Err(ProfileError::MalformedRow {
                    line: 1,
                    column: (*expected).to_string(),
                    message: format!(
                        "header mismatch, expected `{}`",
                        PROFILE_CSV_HEADER.join(",")
                    ),
                });
            }
        }

        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(&e))?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |idx: usize, col: &str| -> Result<&str, ProfileError> {
                record.get(idx).ok_or_else(|| ProfileError::MalformedRow {
                    line,
                    column: col.to_string(),
                    message: "missing field".into(),
                })
            };
            let float = |idx: usize, col: &str| -> Result<f64, ProfileError> {
                f64::from_str(field(idx, col)?).map_err(|e| ProfileError::MalformedRow {
                    line,
                    column: col.to_string(),
                    message: e.to_string(),
                })
            };
            let entry = ProfileEntry {
                model_id: field(0, "model_id")?.to_string(),
                device_id: field(1, "device_id")?.to_string(),
                framework: field(2, "framework")?.to_string(),
                group: field(3, "group")?.into(),
                map: float(4, "map")?,
                latency_ms: float(5, "latency_ms")?,
                energy_mwh: float(6, "energy_mwh")?,
            };
            entry
                .check()
                .map_err(|(column, message)| ProfileError::MalformedRow {
                    line,
                    column,
                    message,
                })?;
            if !seen.insert((
                entry.model_id.clone(),
                entry.device_id.clone(),
                entry.group.clone(),
            )) {
                return Err(ProfileError::DuplicateEntry {
                    model_id: entry.model_id,
                    device_id: entry.device_id,
                    group: entry.group,
                });
            }
            entries.push(entry);
        }
        if entries.is_empty() {
            return Err(ProfileError::EmptyTable);
        }
        Ok(Self {
            source: "csv".into(),
            entries,
        })
    }

    pub fn load_json<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let raw: ProfileTable =
            serde_json::from_reader(reader).map_err(|e| ProfileError::MalformedRow {
                line: e.line() as u64,
                column: "json".into(),
                message: e.to_string(),
            })?;
        Self::from_entries(raw.entries, raw.source)
    }

    /// Load from a path, picking the format from the extension
    /// (`.json` is JSON, anything else CSV).
    pub fn load_path(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let path = path.as_ref();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ProfileFormat::Json,
            _ => ProfileFormat::Csv,
        };
        let mut table = Self::load(BufReader::new(File::open(path)?), format)?;
        table.source = path.display().to_string();
        Ok(table)
    }

    pub fn save_csv<W: Write>(&self, writer: W) -> Result<(), ProfileError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(PROFILE_CSV_HEADER)
            .map_err(|e| csv_error(&e))?;
        for e in &self.entries {
            wtr.write_record([
                e.model_id.as_str(),
                e.device_id.as_str(),
                e.framework.as_str(),
                e.group.as_str(),
                &e.map.to_string(),
                &e.latency_ms.to_string(),
                &e.energy_mwh.to_string(),
            ])
            .map_err(|e| csv_error(&e))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_json<W: Write>(&self, writer: W) -> Result<(), ProfileError> {
        serde_json::to_writer_pretty(writer, self).map_err(|e| ProfileError::MalformedRow {
            line: 0,
            column: "json".into(),
            message: e.to_string(),
        })
    }

    pub fn save_path(&self, path: impl AsRef<Path>) -> Result<(), ProfileError> {
        let path = path.as_ref();
        let w = BufWriter::new(File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.save_json(w),
            _ => self.save_csv(w),
        }
    }

    /// Entries of one group, order preserved.
    pub fn filter_by_group(&self, group: &GroupLabel) -> Result<ProfileTable, ProfileError> {
        let entries: Vec<ProfileEntry> = self
            .entries
            .iter()
            .filter(|e| &e.group == group)
            .cloned()
            .collect();
        if entries.is_empty() {
            return Err(ProfileError::EmptyGroup(group.clone()));
        }
        Ok(ProfileTable {
            source: self.source.clone(),
            entries,
        })
    }

    /// Distinct deployed pairs in order of first appearance.
    pub fn distinct_pairs(&self) -> Vec<PairKey> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .map(ProfileEntry::pair)
            .filter(|p| seen.insert(p.clone()))
            .collect()
    }

    /// Distinct device ids in order of first appearance.
    pub fn distinct_devices(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .map(|e| e.device_id.clone())
            .filter(|d| seen.insert(d.clone()))
            .collect()
    }

    pub fn entry_for(&self, pair: &PairKey, group: &GroupLabel) -> Option<&ProfileEntry> {
        self.entries.iter().find(|e| {
            e.model_id == pair.model_id && e.device_id == pair.device_id && &e.group == group
        })
    }

    /// Group labels the rules expect but the table lacks. A non-empty
    /// result marks the table as partial.
    pub fn missing_groups(&self, rules: &GroupRules) -> Vec<GroupLabel> {
        let present: BTreeSet<&GroupLabel> = self.entries.iter().map(|e| &e.group).collect();
        rules
            .labels()
            .into_iter()
            .filter(|l| !present.contains(l))
            .collect()
    }

    pub fn is_partial(&self, rules: &GroupRules) -> bool {
        !self.missing_groups(rules).is_empty()
    }
}

fn csv_error(e: &csv::Error) -> ProfileError {
    ProfileError::MalformedRow {
        line: e.position().map_or(0, |p| p.line()),
        column: String::new(),
        message: e.to_string(),
    }
}

/// Built-in profile covering six pairs over the five default groups.
/// Energy and latency are constant per pair; mAP varies by group.
pub fn seed_profile() -> ProfileTable {
    let mut table =
        ProfileTable::load_csv(SEED_PROFILE_CSV.as_bytes()).expect("seed profile is valid");
    table.source = "builtin:seed".into();
    table
}

/// Shared handle to the seed profile for call sites that want one
/// allocation.
pub fn seed_profile_arc() -> Arc<ProfileTable> {
    Arc::new(seed_profile())
}

/// Optimization direction per metric for Pareto filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    MaximizeMap,
    MinimizeLatency,
    MinimizeEnergy,
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "map" => Ok(Self::MaximizeMap),
            "latency" | "latency_ms" => Ok(Self::MinimizeLatency),
            "energy" | "energy_mwh" => Ok(Self::MinimizeEnergy),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

fn objective_value(e: &ProfileEntry, obj: Objective) -> f64 {
    match obj {
        Objective::MaximizeMap => e.map,
        Objective::MinimizeLatency => e.latency_ms,
        Objective::MinimizeEnergy => e.energy_mwh,
    }
}

/// True when `a` dominates `b`: at least as good on every objective and
/// strictly better on one.
pub fn dominates(a: &ProfileEntry, b: &ProfileEntry, objectives: &[Objective]) -> bool {
    let mut strictly_better = false;
    for &obj in objectives {
        let (va, vb) = (objective_value(a, obj), objective_value(b, obj));
        let (better, worse) = match obj {
            Objective::MaximizeMap => (va > vb, va < vb),
            _ => (va < vb, va > vb),
        };
        if worse {
            return false;
        }
        if better {
            strictly_better = true;
        }
    }
    strictly_better
}

/// Non-dominated subset of `entries` under the given objectives,
/// preserving input order. Entries with identical metric vectors are
/// all retained.
pub fn pareto_front(entries: &[ProfileEntry], objectives: &[Objective]) -> Vec<ProfileEntry> {
    assert!(!objectives.is_empty(), "objectives must be non-empty");
    // Incremental front maintenance: drop candidates dominated by the
    // current front, evict front members the candidate dominates.
    // Candidates arrive in input order, so the front stays in input
    // order too.
    let mut front: Vec<&ProfileEntry> = Vec::new();
    for candidate in entries {
        if front.iter().any(|f| dominates(f, candidate, objectives)) {
            continue;
        }
        front.retain(|f| !dominates(candidate, f, objectives));
        front.push(candidate);
    }
    front.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(model: &str, device: &str, group: &str, map: f64, lat: f64, mwh: f64) -> ProfileEntry {
        ProfileEntry {
            model_id: model.into(),
            device_id: device.into(),
            framework: "fw".into(),
            group: group.into(),
            map,
            latency_ms: lat,
            energy_mwh: mwh,
        }
    }

    #[test]
    fn seed_profile_loads_and_flags_nothing_missing() {
        let table = seed_profile();
        assert_eq!(table.entries.len(), 30);
        assert_eq!(table.distinct_pairs().len(), 6);
        assert!(!table.is_partial(&GroupRules::default_five()));
        let first = &table.entries[0];
        assert_eq!(first.model_id, "ssd_v1");
        assert_eq!(first.device_id, "jetson_orin_nano");
        assert_eq!(first.framework, "tensorrt");
        assert_eq!(first.group, "G1".into());
    }

    #[test]
    fn empty_csv_is_rejected() {
        let err = ProfileTable::load_csv(
            &b"model_id,device_id,framework,group,map,latency_ms,energy_mwh\n"[..],
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::EmptyTable));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let csv = "model_id,device_id,framework,group,map,latency_ms,energy_mwh\n\
                   m,d,fw,G1,50,10,1\n\
                   m,d,fw,G1,60,11,2\n";
        let err = ProfileTable::load_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, ProfileError::DuplicateEntry { .. }));
    }

    #[test]
    fn malformed_value_reports_line_and_column() {
        let csv = "model_id,device_id,framework,group,map,latency_ms,energy_mwh\n\
                   m,d,fw,G1,50,10,1\n\
                   m,d,fw,G2,oops,10,1\n";
        match ProfileTable::load_csv(csv.as_bytes()).unwrap_err() {
            ProfileError::MalformedRow { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "map");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_reports_column() {
        let csv = "model_id,device_id,framework,group,map,latency_ms,energy_mwh\n\
                   m,d,fw,G1,101,10,1\n";
        match ProfileTable::load_csv(csv.as_bytes()).unwrap_err() {
            ProfileError::MalformedRow { column, .. } => assert_eq!(column, "map"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let csv = "model,device_id,framework,group,map,latency_ms,energy_mwh\nm,d,f,G1,1,1,1\n";
        match ProfileTable::load_csv(csv.as_bytes()).unwrap_err() {
            ProfileError::MalformedRow { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn default_rules_bucket_counts() {
        let rules = GroupRules::default_five();
        assert_eq!(rules.group_of(0), "G1".into());
        assert_eq!(rules.group_of(2), "G3".into());
        assert_eq!(rules.group_of(4), "G5".into());
        assert_eq!(rules.group_of(100), "G5".into());
    }

    #[test]
    fn rules_reject_gaps_and_overlaps() {
        let rule = |lo, hi, label: &str| GroupRule {
            lo,
            hi,
            label: label.into(),
        };
        assert!(GroupRules::new(vec![rule(0, Some(0), "A"), rule(2, None, "B")]).is_err());
        assert!(GroupRules::new(vec![rule(0, Some(2), "A"), rule(2, None, "B")]).is_err());
        assert!(GroupRules::new(vec![rule(0, Some(2), "A")]).is_err());
        assert!(GroupRules::new(vec![rule(1, None, "A")]).is_err());
        assert!(GroupRules::new(vec![]).is_err());
    }

    #[test]
    fn filter_by_group_keeps_order_and_errors_when_absent() {
        let table = seed_profile();
        let g3 = table.filter_by_group(&"G3".into()).unwrap();
        assert_eq!(g3.entries.len(), 6);
        assert!(g3.entries.iter().all(|e| e.group == "G3".into()));
        let err = table.filter_by_group(&"G9".into()).unwrap_err();
        assert!(matches!(err, ProfileError::EmptyGroup(_)));
    }

    #[test]
    fn filter_by_group_single_entry_identity() {
        let table =
            ProfileTable::from_entries(vec![entry("m", "d", "G1", 10.0, 1.0, 1.0)], "t").unwrap();
        let filtered = table.filter_by_group(&"G1".into()).unwrap();
        assert_eq!(filtered.entries, table.entries);
    }

    #[test]
    fn pareto_strict_dominance_drops_loser() {
        let a = entry("a", "d", "G1", 60.0, 10.0, 1.0);
        let b = entry("b", "d", "G1", 50.0, 10.0, 2.0);
        let front = pareto_front(
            &[a.clone(), b],
            &[Objective::MaximizeMap, Objective::MinimizeEnergy],
        );
        assert_eq!(front, vec![a]);
    }

    #[test]
    fn pareto_retains_identical_vectors() {
        let a = entry("a", "d", "G1", 50.0, 10.0, 1.0);
        let b = entry("b", "d", "G1", 50.0, 10.0, 1.0);
        let front = pareto_front(
            &[a, b],
            &[Objective::MaximizeMap, Objective::MinimizeEnergy],
        );
        assert_eq!(front.len(), 2);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let table = seed_profile();
        let mut bytes = Vec::new();
        table.save_csv(&mut bytes).unwrap();
        let mut back = ProfileTable::load_csv(&bytes[..]).unwrap();
        back.source = table.source.clone();
        assert_eq!(back, table);
    }

    #[test]
    fn json_round_trip_is_identity() {
        let table = seed_profile();
        let mut bytes = Vec::new();
        table.save_json(&mut bytes).unwrap();
        let back = ProfileTable::load_json(&bytes[..]).unwrap();
        assert_eq!(back, table);
    }

    prop_compose! {
        fn arb_entry()(
            model in 0..6u8,
            device in 0..4u8,
            group in 0..5u8,
            map in 0.0..100.0f64,
            lat in 1.0..50.0f64,
            mwh in 0.01..2.0f64,
        ) -> ProfileEntry {
            entry(
                &format!("m{model}"),
                &format!("d{device}"),
                &format!("G{}", group + 1),
                (map * 10.0).round() / 10.0,
                (lat * 10.0).round() / 10.0,
                (mwh * 100.0).round() / 100.0,
            )
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The front is an antichain and every excluded entry is
        /// dominated by some member, checked against the full pairwise
        /// scan.
        #[test]
        fn pareto_matches_pairwise_bruteforce(entries in prop::collection::vec(arb_entry(), 1..200)) {
            let objectives = [
                Objective::MaximizeMap,
                Objective::MinimizeLatency,
                Objective::MinimizeEnergy,
            ];
            let front = pareto_front(&entries, &objectives);
            let expected: Vec<ProfileEntry> = entries
                .iter()
                .filter(|e| !entries.iter().any(|o| dominates(o, e, &objectives)))
                .cloned()
                .collect();
            prop_assert_eq!(&front, &expected);
            for a in &front {
                for b in &front {
                    prop_assert!(!dominates(a, b, &objectives) || a == b);
                }
            }
        }

        #[test]
        fn group_of_is_total_and_stable(count in 0u32..10_000) {
            let rules = GroupRules::default_five();
            let label = rules.group_of(count);
            prop_assert_eq!(rules.group_of(count), label.clone());
            if count >= 4 {
                prop_assert_eq!(label, GroupLabel::from("G5"));
            }
        }
    }
}
