//! Portable corpus format: a manifest plus one JSON document per scenario
//! and per map. Layout under the corpus root:
//!
//!   manifest.json
//!   maps/<map_id>.json
//!   scenarios/<scenario_id>.json        (or .json.gz when gzip is enabled)
//!
//! Field names are part of the contract; floats round-trip exactly through
//! their shortest decimal representation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_scenario, Provenance, RoadMap, Scenario, SplitTag};
use crate::rng::StreamKey;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scenario_id: String,
    pub file: String,
    pub split: SplitTag,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn of(&self, split: SplitTag) -> usize {
        match split {
            SplitTag::Train => self.train,
            SplitTag::Val => self.val,
            SplitTag::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub maps: Vec<String>,
    pub scenarios: Vec<ManifestEntry>,
    pub counts: SplitCounts,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    schema_version: u32,
    #[serde(flatten)]
    scenario: Scenario,
}

#[derive(Serialize, Deserialize)]
struct MapDoc {
    schema_version: u32,
    #[serde(flatten)]
    map: RoadMap,
}

fn write_json(path: &Path, bytes: &[u8], gzip: bool) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if gzip {
        let mut enc = flate2::write::GzEncoder::new(&mut file, flate2::Compression::default());
        enc.write_all(bytes)
            .and_then(|_| enc.finish().map(|_| ()))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    } else {
        file.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Write a corpus directory. Every scenario must validate against its map or
/// nothing is written at all.
pub fn write_corpus(
    scenarios: &[Scenario],
    maps: &[RoadMap],
    dir: &Path,
    gzip: bool,
) -> Result<CorpusManifest> {
    let map_index: BTreeMap<&str, &RoadMap> =
        maps.iter().map(|m| (m.map_id.as_str(), m)).collect();

    let mut seen_ids = std::collections::BTreeSet::new();
    for scenario in scenarios {
        let map = map_index.get(scenario.map_id.as_str()).ok_or_else(|| {
            Error::ValidationFailed {
                scenario_id: scenario.scenario_id.clone(),
                violations: vec![crate::model::Violation {
                    code: "missing-map".to_string(),
                    track_id: None,
                    frame: None,
                    detail: format!("map '{}' not provided", scenario.map_id),
                }],
            }
        })?;
        let report = validate_scenario(scenario, map);
        if !report.is_valid() {
            return Err(Error::ValidationFailed {
                scenario_id: scenario.scenario_id.clone(),
                violations: report.violations,
            });
        }
        if !seen_ids.insert(scenario.scenario_id.as_str()) {
            return Err(Error::ValidationFailed {
                scenario_id: scenario.scenario_id.clone(),
                violations: vec![crate::model::Violation {
                    code: "duplicate-scenario-id".to_string(),
                    track_id: None,
                    frame: None,
                    detail: "scenario_id reused within corpus".to_string(),
                }],
            });
        }
    }

    let scenarios_dir = dir.join("scenarios");
    let maps_dir = dir.join("maps");
    std::fs::create_dir_all(&scenarios_dir)
        .map_err(|e| Error::io(scenarios_dir.display().to_string(), e))?;
    std::fs::create_dir_all(&maps_dir)
        .map_err(|e| Error::io(maps_dir.display().to_string(), e))?;

    let mut manifest = CorpusManifest {
        schema_version: SCHEMA_VERSION,
        maps: Vec::new(),
        scenarios: Vec::new(),
        counts: SplitCounts::default(),
    };

    for map in maps {
        let rel = format!("maps/{}.json", map.map_id);
        let doc = MapDoc {
            schema_version: SCHEMA_VERSION,
            map: map.clone(),
        };
        let bytes = serde_json::to_vec(&doc).expect("map serializes");
        write_json(&dir.join(&rel), &bytes, false)?;
        manifest.maps.push(rel);
    }

    for scenario in scenarios {
        let ext = if gzip { "json.gz" } else { "json" };
        let rel = format!("scenarios/{}.{}", scenario.scenario_id, ext);
        let doc = ScenarioDoc {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.clone(),
        };
        let bytes = serde_json::to_vec(&doc).expect("scenario serializes");
        write_json(&dir.join(&rel), &bytes, gzip)?;
        manifest.scenarios.push(ManifestEntry {
            scenario_id: scenario.scenario_id.clone(),
            file: rel,
            split: scenario.split,
            provenance: scenario.provenance,
        });
        match scenario.split {
            SplitTag::Train => manifest.counts.train += 1,
            SplitTag::Val => manifest.counts.val += 1,
            SplitTag::Test => manifest.counts.test += 1,
        }
    }

    let manifest_path = dir.join("manifest.json");
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_json(&manifest_path, &bytes, false)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join("manifest.json");
    let bytes = read_maybe_gz(&path)?;
    let manifest: CorpusManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptCorpus {
            detail: format!("manifest: {}", e),
        })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedSchema {
            found: manifest.schema_version,
        });
    }
    Ok(manifest)
}

/// Open handle over a corpus directory; maps are loaded eagerly, scenarios
/// stream lazily in manifest order.
#[derive(Debug)]
pub struct CorpusReader {
    dir: PathBuf,
    pub manifest: CorpusManifest,
    maps: BTreeMap<String, Arc<RoadMap>>,
    filter: Option<SplitTag>,
}

impl CorpusReader {
    pub fn open(dir: &Path, filter: Option<SplitTag>) -> Result<CorpusReader> {
        let manifest = read_manifest(dir)?;
        let mut maps = BTreeMap::new();
        for rel in &manifest.maps {
            let bytes = read_maybe_gz(&dir.join(rel)).map_err(|e| match e {
                Error::Io { path, .. } => Error::CorruptCorpus {
                    detail: format!("missing map file {}", path),
                },
                other => other,
            })?;
            let doc: MapDoc = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptCorpus {
                detail: format!("map {}: {}", rel, e),
            })?;
            maps.insert(doc.map.map_id.clone(), Arc::new(doc.map));
        }
        Ok(CorpusReader {
            dir: dir.to_path_buf(),
            manifest,
            maps,
            filter,
        })
    }

    pub fn len(&self) -> usize {
        match self.filter {
            None => self.manifest.scenarios.len(),
            Some(split) => self
                .manifest
                .scenarios
                .iter()
                .filter(|e| e.split == split)
                .count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map(&self, map_id: &str) -> Option<Arc<RoadMap>> {
        self.maps.get(map_id).cloned()
    }

    pub fn maps(&self) -> &BTreeMap<String, Arc<RoadMap>> {
        &self.maps
    }

    pub fn read_entry(&self, entry: &ManifestEntry) -> Result<(Scenario, Arc<RoadMap>)> {
        let path = self.dir.join(&entry.file);
        let bytes = read_maybe_gz(&path).map_err(|e| match e {
            Error::Io { path, .. } => Error::CorruptCorpus {
                detail: format!("missing scenario file {}", path),
            },
            other => other,
        })?;
        let doc: ScenarioDoc = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptCorpus {
            detail: format!("scenario {}: {}", entry.file, e),
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                found: doc.schema_version,
            });
        }
        let map = self
            .maps
            .get(&doc.scenario.map_id)
            .cloned()
            .ok_or_else(|| Error::CorruptCorpus {
                detail: format!(
                    "scenario '{}' references unknown map '{}'",
                    doc.scenario.scenario_id, doc.scenario.map_id
                ),
            })?;
        Ok((doc.scenario, map))
    }

    pub fn entries(&self) -> Vec<ManifestEntry> {
        self.manifest
            .scenarios
            .iter()
            .filter(|e| self.filter.is_none_or(|f| e.split == f))
            .cloned()
            .collect()
    }

    /// Scenarios in manifest order, restricted to the split filter.
    pub fn iter(&self) -> impl Iterator<Item = Result<(Scenario, Arc<RoadMap>)>> + '_ {
        self.manifest
            .scenarios
            .iter()
            .filter(move |e| self.filter.is_none_or(|f| e.split == f))
            .map(move |e| self.read_entry(e))
    }

    /// Load everything into memory.
    pub fn load_all(&self) -> Result<Vec<(Scenario, Arc<RoadMap>)>> {
        self.iter().collect()
    }
}

/// Deterministically assign splits by seeded shuffle and largest-remainder
/// apportionment. A pure function of (ids, ratios, seed); the input order of
/// ids does not matter.
pub fn assign_splits(
    scenario_ids: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<BTreeMap<String, SplitTag>> {
    if scenario_ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::BadSplitRatios { sum });
    }

    let mut ids: Vec<&String> = scenario_ids.iter().collect();
    ids.sort();
    ids.dedup();
    {
        use rand::seq::SliceRandom;
        let mut rng = StreamKey::new(seed).with_str("splits").rng();
        ids.shuffle(&mut rng);
    }

    let n = ids.len();
    let raw = [ratios.0 * n as f64, ratios.1 * n as f64, ratios.2 * n as f64];
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remainder: Vec<(f64, usize)> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| (r - r.floor(), i))
        .collect();
    remainder.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = n - counts.iter().sum::<usize>();
    for &(_, i) in remainder.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    let mut out = BTreeMap::new();
    let mut cursor = 0usize;
    for (split, count) in [
        (SplitTag::Train, counts[0]),
        (SplitTag::Val, counts[1]),
        (SplitTag::Test, counts[2]),
    ] {
        for id in &ids[cursor..cursor + count] {
            out.insert((*id).clone(), split);
        }
        cursor += count;
    }
    Ok(out)
}
