//! Workload manifests, dataset builders, and the synthetic image
//! corpus used for desk-scale experiments.
//!
//! Manifest interchange is JSONL with one record per image:
//! `{"id": "...", "image": "<path>", "count": <n>}`. Groups are derived
//! from the active rules at load time.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::sidecar_path;
use crate::image::ImageRaster;
use crate::profile::{GroupLabel, GroupRules};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("source workload has no images for group {0}")]
    EmptySourceGroup(GroupLabel),
    #[error("workload is empty")]
    EmptyWorkload,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestOrdering {
    Natural,
    SortedByGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub image: PathBuf,
    pub count: u32,
    pub group: GroupLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadManifest {
    pub name: String,
    pub ordering: ManifestOrdering,
    pub items: Vec<ManifestItem>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    image: String,
    count: i64,
}

impl WorkloadManifest {
    pub fn from_items(
        name: impl Into<String>,
        items: Vec<ManifestItem>,
        rules: &GroupRules,
    ) -> Self {
        let ordering = detect_ordering(&items, rules);
        Self {
            name: name.into(),
            ordering,
            items,
        }
    }

    pub fn from_jsonl_reader<R: Read>(
        reader: R,
        name: impl Into<String>,
        rules: &GroupRules,
    ) -> Result<Self, WorkloadError> {
        let mut items = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord =
                serde_json::from_str(&line).map_err(|e| WorkloadError::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if raw.count < 0 {
                return Err(WorkloadError::MalformedRecord {
                    line: line_no,
                    message: format!("count {} must be non-negative", raw.count),
                });
            }
            let count = raw.count as u32;
            items.push(ManifestItem {
                id: raw.id,
                image: PathBuf::from(raw.image),
                count,
                group: rules.group_of(count),
            });
        }
        Ok(Self::from_items(name, items, rules))
    }

    pub fn load_jsonl(path: impl AsRef<Path>, rules: &GroupRules) -> Result<Self, WorkloadError> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "workload".into());
        Self::from_jsonl_reader(BufReader::new(File::open(path)?), name, rules)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), WorkloadError> {
        for item in &self.items {
            let raw = RawRecord {
                id: item.id.clone(),
                image: item.image.display().to_string(),
                count: item.count as i64,
            };
            let line = serde_json::to_string(&raw).expect("manifest record serializes");
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<(), WorkloadError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn group_histogram(&self) -> BTreeMap<GroupLabel, usize> {
        let mut hist = BTreeMap::new();
        for item in &self.items {
            *hist.entry(item.group.clone()).or_insert(0) += 1;
        }
        hist
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

// Sorted iff the group rule indices never decrease, i.e. each group
// occupies one contiguous block in ascending rule order.
fn detect_ordering(items: &[ManifestItem], rules: &GroupRules) -> ManifestOrdering {
    let indices: Vec<usize> = items
        .iter()
        .map(|i| rules.rule_index(&i.group).unwrap_or(usize::MAX))
        .collect();
    if indices.windows(2).all(|w| w[0] <= w[1]) {
        ManifestOrdering::SortedByGroup
    } else {
        ManifestOrdering::Natural
    }
}

/// Import a manifest from count-annotation JSONL. Same format the
/// harness writes; validation failures name the offending line.
pub fn import_manifest<R: Read>(
    reader: R,
    name: impl Into<String>,
    rules: &GroupRules,
) -> Result<WorkloadManifest, WorkloadError> {
    WorkloadManifest::from_jsonl_reader(reader, name, rules)
}

#[derive(Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: i64,
}

/// Convert COCO-style instance annotations (images plus annotations
/// keyed by image id) into a manifest. Images without annotations get
/// count zero. Only the `id`/`file_name`/`image_id` fields are read.
pub fn import_coco_counts<R: Read>(
    reader: R,
    images_dir: Option<&Path>,
    rules: &GroupRules,
) -> Result<WorkloadManifest, WorkloadError> {
    let doc: CocoDoc =
        serde_json::from_reader(reader).map_err(|e| WorkloadError::MalformedRecord {
            line: e.line(),
            message: e.to_string(),
        })?;
    let mut counts: BTreeMap<i64, u32> = BTreeMap::new();
    for ann in &doc.annotations {
        *counts.entry(ann.image_id).or_insert(0) += 1;
    }
    let items = doc
        .images
        .iter()
        .map(|img| {
            let count = counts.get(&img.id).copied().unwrap_or(0);
            let image = match images_dir {
                Some(dir) => dir.join(&img.file_name),
                None => PathBuf::from(&img.file_name),
            };
            ManifestItem {
                id: img.id.to_string(),
                image,
                count,
                group: rules.group_of(count),
            }
        })
        .collect();
    Ok(WorkloadManifest::from_items("coco-import", items, rules))
}

/// Import per-frame counts from a directory of extracted frames with
/// YOLO-style label sidecars: `<stem>.txt` holds one line per detected
/// object; a missing label file means zero objects.
pub fn import_frame_labels(
    dir: &Path,
    rules: &GroupRules,
) -> Result<WorkloadManifest, WorkloadError> {
    const IMAGE_EXTENSIONS: [&str; 5] = ["pgm", "ppm", "jpg", "jpeg", "png"];
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    frames.sort();
    let mut items = Vec::new();
    for frame in frames {
        let labels = frame.with_extension("txt");
        let count = match std::fs::read_to_string(&labels) {
            Ok(text) => text.lines().filter(|l| !l.trim().is_empty()).count() as u32,
            Err(_) => 0,
        };
        items.push(ManifestItem {
            id: frame
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            image: frame,
            count,
            group: rules.group_of(count),
        });
    }
    Ok(WorkloadManifest::from_items("frames-import", items, rules))
}

/// Build a balanced dataset sorted by group: exactly `per_group` items
/// per label, contiguous in ascending rule order. Groups short of
/// unique images are padded with seeded random duplicates appended
/// after the uniques.
pub fn build_balanced_sorted(
    source: &WorkloadManifest,
    per_group: usize,
    seed: u64,
    rules: &GroupRules,
) -> Result<WorkloadManifest, WorkloadError> {
    if source.is_empty() {
        return Err(WorkloadError::EmptyWorkload);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(per_group * rules.labels().len());
    let mut dup_counter = 0usize;
    for label in rules.labels() {
        let bucket: Vec<&ManifestItem> = source.items.iter().filter(|i| i.group == label).collect();
        if bucket.is_empty() {
            return Err(WorkloadError::EmptySourceGroup(label));
        }
        for item in bucket.iter().take(per_group) {
            items.push((*item).clone());
        }
        for _ in bucket.len()..per_group {
            let pick = bucket[rng.gen_range(0..bucket.len())];
            dup_counter += 1;
            let mut dup = pick.clone();
            dup.id = format!("{}~dup{dup_counter}", pick.id);
            items.push(dup);
        }
    }
    Ok(WorkloadManifest {
        name: format!("{}_balanced{per_group}", source.name),
        ordering: ManifestOrdering::SortedByGroup,
        items,
    })
}

/// Long-tailed object-count mix typical of natural scene datasets:
/// few empty frames, a mode at one or two objects, and a tail out to
/// fourteen.
pub fn default_count_weights() -> Vec<(u32, f64)> {
    [
        (0, 2.0),
        (1, 17.0),
        (2, 15.0),
        (3, 12.0),
        (4, 10.0),
        (5, 8.0),
        (6, 7.0),
        (7, 6.0),
        (8, 5.0),
        (9, 4.0),
        (10, 4.0),
        (11, 3.0),
        (12, 3.0),
        (13, 2.0),
        (14, 2.0),
    ]
    .to_vec()
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub items: usize,
    pub width: usize,
    pub height: usize,
    pub weights: Vec<(u32, f64)>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            items: 1000,
            width: 160,
            height: 160,
            weights: default_count_weights(),
            seed: 7,
        }
    }
}

/// Render `k` disjoint dark rectangles on a light background. Placement
/// uses a jittered 4x4 grid with a 4 px inset per cell, which keeps
/// every pair of rectangles at least 8 px apart so morphological
/// closing cannot merge them; each side is at least `sqrt(2 * gate)`
/// so every rectangle clears twice the default area gate.
pub fn render_rectangles(
    width: usize,
    height: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> ImageRaster {
    const GRID: usize = 4;
    const MARGIN: usize = 8;
    const INSET: usize = 4;
    assert!(k <= GRID * GRID, "at most {} rectangles", GRID * GRID);
    let mut img = ImageRaster::filled(width, height, 1, 230);
    let cell_w = (width - 2 * MARGIN) / GRID;
    let cell_h = (height - 2 * MARGIN) / GRID;
    let gate = 0.005 * (width * height) as f64;
    let side_min = (2.0 * gate).sqrt().ceil() as usize;
    let side_max_w = cell_w - 2 * INSET;
    let side_max_h = cell_h - 2 * INSET;
    assert!(
        side_min <= side_max_w && side_min <= side_max_h,
        "image too small for gated rectangles"
    );

    let mut cells: Vec<usize> = (0..GRID * GRID).collect();
    // seeded partial shuffle picks k distinct cells
    for i in 0..k {
        let j = rng.gen_range(i..cells.len());
        cells.swap(i, j);
    }
    for &cell in cells.iter().take(k) {
        let (cx, cy) = (cell % GRID, cell / GRID);
        let w = rng.gen_range(side_min..=side_max_w);
        let h = rng.gen_range(side_min..=side_max_h);
        let x0 = MARGIN + cx * cell_w + INSET + rng.gen_range(0..=side_max_w - w);
        let y0 = MARGIN + cy * cell_h + INSET + rng.gen_range(0..=side_max_h - h);
        img.fill_rect(x0, y0, w, h, 25);
    }
    img
}

/// Generate a synthetic workload: seeded count sampling from the
/// weight table, one grayscale image per item, a `.count` sidecar for
/// the detector stub, and `manifest.jsonl` in the target directory.
pub fn generate_synthetic(
    dir: &Path,
    spec: &SyntheticSpec,
    rules: &GroupRules,
) -> Result<WorkloadManifest, WorkloadError> {
    std::fs::create_dir_all(dir)?;
    let weights =
        WeightedIndex::new(spec.weights.iter().map(|(_, w)| *w)).expect("weights must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::with_capacity(spec.items);
    for i in 0..spec.items {
        let count = spec.weights[weights.sample(&mut rng)].0;
        let image = render_rectangles(spec.width, spec.height, count as usize, &mut rng);
        let id = format!("img_{i:05}");
        let path = dir.join(format!("{id}.pgm"));
        image.save_pnm(&path)?;
        std::fs::write(sidecar_path(&path), format!("{count}\n"))?;
        items.push(ManifestItem {
            id,
            image: path,
            count,
            group: rules.group_of(count),
        });
    }
    let manifest = WorkloadManifest::from_items("synthetic", items, rules);
    manifest.save_jsonl(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{count_objects, EdConfig};

    fn rules() -> GroupRules {
        GroupRules::default_five()
    }

    #[test]
    fn jsonl_groups_derive_from_rules() {
        let jsonl = r#"{"id":"a","image":"a.pgm","count":0}
{"id":"b","image":"b.pgm","count":2}
{"id":"c","image":"c.pgm","count":9}
"#;
        let manifest = import_manifest(jsonl.as_bytes(), "t", &rules()).unwrap();
        let groups: Vec<&str> = manifest.items.iter().map(|i| i.group.as_str()).collect();
        assert_eq!(groups, vec!["G1", "G3", "G5"]);
    }

    #[test]
    fn negative_count_reports_line() {
        let jsonl = "{\"id\":\"a\",\"image\":\"a.pgm\",\"count\":1}\n{\"id\":\"b\",\"image\":\"b.pgm\",\"count\":-2}\n";
        match import_manifest(jsonl.as_bytes(), "t", &rules()).unwrap_err() {
            WorkloadError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn histogram_matches_independent_recount() {
        let mut jsonl = String::new();
        let mut expected: BTreeMap<&str, usize> = BTreeMap::new();
        for i in 0..5000 {
            let count = (i * 7 + 3) % 9;
            jsonl.push_str(&format!(
                "{{\"id\":\"i{i}\",\"image\":\"x.pgm\",\"count\":{count}}}\n"
            ));
            let label = match count {
                0 => "G1",
                1 => "G2",
                2 => "G3",
                3 => "G4",
                _ => "G5",
            };
            *expected.entry(label).or_insert(0) += 1;
        }
        let manifest = import_manifest(jsonl.as_bytes(), "t", &rules()).unwrap();
        let hist = manifest.group_histogram();
        for (label, n) in expected {
            assert_eq!(hist[&GroupLabel::from(label)], n, "{label}");
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let jsonl = "{\"id\":\"a\",\"image\":\"a.pgm\",\"count\":1}\n";
        let manifest = import_manifest(jsonl.as_bytes(), "t", &rules()).unwrap();
        let mut out = Vec::new();
        manifest.write_jsonl(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), jsonl);
    }

    fn synthetic_source(per_group: &[usize]) -> WorkloadManifest {
        let mut items = Vec::new();
        for (idx, &n) in per_group.iter().enumerate() {
            let count = idx as u32; // groups G1..G5 via counts 0..4
            for j in 0..n {
                items.push(ManifestItem {
                    id: format!("g{idx}_{j}"),
                    image: PathBuf::from(format!("g{idx}_{j}.pgm")),
                    count,
                    group: rules().group_of(count),
                });
            }
        }
        WorkloadManifest::from_items("src", items, &rules())
    }

    #[test]
    fn balanced_sorted_pads_with_seeded_duplicates() {
        let source = synthetic_source(&[250, 150, 220, 10, 400]);
        let built = build_balanced_sorted(&source, 200, 11, &rules()).unwrap();
        assert_eq!(built.len(), 1000);
        assert_eq!(built.ordering, ManifestOrdering::SortedByGroup);
        let hist = built.group_histogram();
        assert!(hist.values().all(|&n| n == 200));

        // G2 block: 150 uniques then 50 duplicates
        let g2: Vec<&ManifestItem> = built
            .items
            .iter()
            .filter(|i| i.group == GroupLabel::from("G2"))
            .collect();
        let dups = g2.iter().filter(|i| i.id.contains("~dup")).count();
        assert_eq!(dups, 50);
        assert!(!g2[..150].iter().any(|i| i.id.contains("~dup")));

        // same seed, same manifest
        let again = build_balanced_sorted(&source, 200, 11, &rules()).unwrap();
        assert_eq!(built, again);
    }

    #[test]
    fn balanced_sorted_one_per_group() {
        let source = synthetic_source(&[3, 3, 3, 3, 3]);
        let built = build_balanced_sorted(&source, 1, 1, &rules()).unwrap();
        assert_eq!(built.len(), 5);
        let groups: Vec<&str> = built.items.iter().map(|i| i.group.as_str()).collect();
        assert_eq!(groups, vec!["G1", "G2", "G3", "G4", "G5"]);
    }

    #[test]
    fn balanced_sorted_missing_group_errors() {
        let source = synthetic_source(&[3, 0, 3, 3, 3]);
        let err = build_balanced_sorted(&source, 2, 1, &rules()).unwrap_err();
        assert!(matches!(err, WorkloadError::EmptySourceGroup(_)));
    }

    #[test]
    fn synthetic_corpus_is_consistent_and_ed_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            items: 24,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let manifest = generate_synthetic(dir.path(), &spec, &rules()).unwrap();
        assert_eq!(manifest.len(), 24);
        assert!(dir.path().join("manifest.jsonl").exists());
        for item in &manifest.items {
            let sidecar = std::fs::read_to_string(sidecar_path(&item.image)).unwrap();
            assert_eq!(sidecar.trim().parse::<u32>().unwrap(), item.count);
            let img = ImageRaster::load_pnm(&item.image).unwrap();
            assert_eq!(
                count_objects(&img, &EdConfig::default()).unwrap(),
                item.count,
                "item {}",
                item.id
            );
        }
    }

    #[test]
    fn coco_conversion_counts_annotations() {
        let doc = r#"{
            "images": [
                {"id": 1, "file_name": "a.jpg"},
                {"id": 2, "file_name": "b.jpg"},
                {"id": 3, "file_name": "c.jpg"}
            ],
            "annotations": [
                {"image_id": 2}, {"image_id": 2}, {"image_id": 3},
                {"image_id": 2}, {"image_id": 3}, {"image_id": 2}
            ]
        }"#;
        let manifest =
            import_coco_counts(doc.as_bytes(), Some(Path::new("imgs")), &rules()).unwrap();
        let counts: Vec<u32> = manifest.items.iter().map(|i| i.count).collect();
        assert_eq!(counts, vec![0, 4, 2]);
        assert_eq!(manifest.items[1].image, PathBuf::from("imgs/b.jpg"));
    }

    #[test]
    fn frame_labels_count_non_empty_lines() {
        let dir = tempfile::tempdir().unwrap();
        for (name, labels) in [("f1.pgm", Some("0 1 2 3 4\n0 1 2 3 4\n")), ("f2.pgm", None)] {
            ImageRaster::filled(4, 4, 1, 0)
                .save_pnm(dir.path().join(name))
                .unwrap();
            if let Some(text) = labels {
                std::fs::write(dir.path().join(name).with_extension("txt"), text).unwrap();
            }
        }
        let manifest = import_frame_labels(dir.path(), &rules()).unwrap();
        let counts: Vec<u32> = manifest.items.iter().map(|i| i.count).collect();
        assert_eq!(counts, vec![2, 0]);
    }
}
