//! Oracle-labelled clip datasets: generation, on-disk format and loading.
//!
//! A dataset directory holds `manifest.json` and one line-delimited JSON file
//! per clip under `clips/`. Every line is one 2 Hz step.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::loss::Sample;
use crate::controller::ControlCommand;
use crate::encoders::{Command, Observation};
use crate::error::{Error, Result};
use crate::experts::FEATURE_DIM;
use crate::sim::{
    rollout_oracle_perturbed, EpisodeRecord, Perturbation, ScenarioKind, Projection, DEFAULT_TIME_LIMIT, WAYPOINTS,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLIP_DIR: &str = "clips";
pub const FORMAT_VERSION: u32 = 1;
const PROJECTION_SALT: u64 = 0x7E11_C0DE;

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub clips_per_scenario: usize,
    /// Kinds to generate, in id order.
    pub scenarios: Vec<ScenarioKind>,
    /// Relative clip count per kind, indexed by kind id.
    pub proportions: [f64; ScenarioKind::COUNT],
    pub val_fraction: f64,
    pub time_limit: f64,
    /// Disturbances applied to the executed oracle controls while recording.
    #[serde(default)]
    pub perturbation: Perturbation,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clips_per_scenario: 50,
            scenarios: ScenarioKind::ALL.to_vec(),
            proportions: [1.0; ScenarioKind::COUNT],
            val_fraction: 0.05,
            time_limit: DEFAULT_TIME_LIMIT,
            perturbation: Perturbation::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios selected".into()));
        }
        if self.proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config(format!("invalid proportions {:?}", self.proportions)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::Config(format!("time_limit {} must be positive", self.time_limit)));
        }
        self.perturbation.validate()?;
        if self.total_clips() == 0 {
            return Err(Error::Config("configuration yields zero clips".into()));
        }
        Ok(())
    }

    pub fn clips_for(&self, kind: ScenarioKind) -> usize {
        if !self.scenarios.contains(&kind) {
            return 0;
        }
        (self.clips_per_scenario as f64 * self.proportions[kind.id()]).round() as usize
    }

    pub fn total_clips(&self) -> usize {
        ScenarioKind::ALL.iter().map(|&k| self.clips_for(k)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub file: String,
    pub steps: usize,
    pub sha256: String,
    pub split: Split,
    pub oracle_success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: GenConfig,
    pub projection: Projection,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn seeds(&self) -> Vec<u64> {
        self.clips.iter().map(|c| c.seed).collect()
    }
}

/// One line of a clip file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub scenario_id: usize,
    pub t: f64,
    pub obs: ObsRecord,
    pub oracle: OracleRecord,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub grid: Vec<f64>,
    pub speed: f64,
    pub command: Command,
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    /// `x₁, y₁, …, x₄, y₄` in the ego frame.
    pub waypoints: Vec<f64>,
    pub value: f64,
    pub feature: Vec<f64>,
    pub controls: ControlCommand,
}

impl StepRecord {
    pub fn into_sample(self) -> Result<Sample> {
        let kind = ScenarioKind::from_id(self.scenario_id)
            .ok_or_else(|| Error::MissingTarget(format!("unknown scenario_id {}", self.scenario_id)))?;
        if self.oracle.waypoints.len() != 2 * WAYPOINTS {
            return Err(Error::MissingTarget(format!(
                "{} waypoint coordinates, expected {}",
                self.oracle.waypoints.len(),
                2 * WAYPOINTS
            )));
        }
        let mut waypoints = [[0.0; 2]; WAYPOINTS];
        for (w, c) in waypoints.iter_mut().zip(self.oracle.waypoints.chunks(2)) {
            *w = [c[0], c[1]];
        }
        let sample = Sample {
            kind,
            speed: self.obs.speed,
            obs: Observation {
                grid: self.obs.grid,
                speed: self.obs.speed,
                command: self.obs.command,
                goal: self.obs.goal,
            },
            waypoints,
            value: self.oracle.value,
            feature: self.oracle.feature,
        };
        sample.validate()?;
        Ok(sample)
    }
}

fn records(ep: &EpisodeRecord) -> Vec<StepRecord> {
    ep.steps
        .iter()
        .enumerate()
        .map(|(i, s)| StepRecord {
            scenario_id: ep.kind.id(),
            t: i as f64 * 0.5,
            obs: ObsRecord {
                grid: s.obs.grid.clone(),
                speed: s.obs.speed,
                command: s.obs.command,
                goal: s.obs.goal,
            },
            oracle: OracleRecord {
                waypoints: s.oracle.waypoints.iter().flatten().copied().collect(),
                value: s.oracle.value,
                feature: s.oracle.teacher_feature.clone(),
                controls: s.oracle.controls,
            },
            reward: s.oracle.reward,
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Validation clip count per kind: `round(total·fraction)` spread by largest
/// remainder, ties to the lower kind id.
fn val_allocation(config: &GenConfig) -> [usize; ScenarioKind::COUNT] {
    let counts: Vec<usize> = ScenarioKind::ALL.iter().map(|&k| config.clips_for(k)).collect();
    let total = counts.iter().sum::<usize>();
    let target = (total as f64 * config.val_fraction).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * config.val_fraction).collect();
    let mut alloc = [0usize; ScenarioKind::COUNT];
    for (a, e) in alloc.iter_mut().zip(&exact) {
        *a = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..ScenarioKind::COUNT).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(alloc.iter().sum());
    for k in order {
        if missing == 0 {
            break;
        }
        if alloc[k] < counts[k] {
            alloc[k] += 1;
            missing -= 1;
        }
    }
    alloc
}

/// Generates the dataset into `out`, which must not already hold a manifest.
pub fn generate(config: &GenConfig, out: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let clip_dir = out.join(CLIP_DIR);
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let projection = Projection::from_seed(config.seed ^ PROJECTION_SALT);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let val = val_allocation(config);
    let mut clips = Vec::new();
    for kind in ScenarioKind::ALL {
        let n = config.clips_for(kind);
        let seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let val_set: Vec<usize> = order[..val[kind.id()]].to_vec();
        for (i, seed) in seeds.into_iter().enumerate() {
            let ep = rollout_oracle_perturbed(kind, seed, config.time_limit, &projection, &config.perturbation)?;
            let id = format!("{}-{i:04}", kind.name());
            let file = format!("{CLIP_DIR}/{id}.jsonl");
            let path = out.join(&file);
            let mut bytes = Vec::new();
            for r in records(&ep) {
                serde_json::to_writer(&mut bytes, &r).expect("records serialise");
                bytes.push(b'\n');
            }
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            clips.push(ClipEntry {
                id,
                kind,
                seed,
                file,
                steps: ep.steps.len(),
                sha256: sha256_hex(&bytes),
                split: if val_set.contains(&i) { Split::Val } else { Split::Train },
                oracle_success: ep.outcome.success,
            });
        }
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        config: config.clone(),
        projection,
        clips,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).expect("values serialise");
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A loaded dataset, split into train and validation samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub manifest_hash: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    /// Loads and hash-checks every clip listed in the manifest.
    pub fn load(root: &Path) -> Result<Self> {
        let mpath = root.join(MANIFEST_FILE);
        let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::data(&mpath, e.to_string()))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::data(&mpath, format!("unsupported version {}", manifest.version)));
        }
        manifest
            .projection
            .validate()
            .map_err(|e| Error::data(&mpath, e.to_string()))?;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for clip in &manifest.clips {
            let samples = load_clip(root, clip)?;
            match clip.split {
                Split::Train => train.extend(samples),
                Split::Val => val.extend(samples),
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest_hash: sha256_hex(&bytes),
            manifest,
            train,
            val,
        })
    }

    /// Training samples grouped by scenario kind.
    pub fn subsets(&self) -> [Vec<&Sample>; ScenarioKind::COUNT] {
        let mut out: [Vec<&Sample>; ScenarioKind::COUNT] = Default::default();
        for s in &self.train {
            out[s.kind.id()].push(s);
        }
        out
    }
}

fn load_clip(root: &Path, clip: &ClipEntry) -> Result<Vec<Sample>> {
    let path = root.join(&clip.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let found = sha256_hex(&bytes);
    if found != clip.sha256 {
        return Err(Error::HashMismatch {
            what: clip.file.clone(),
            expected: clip.sha256.clone(),
            found,
        });
    }
    let mut samples = Vec::with_capacity(clip.steps);
    for (n, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let rec: StepRecord =
            serde_json::from_str(&line).map_err(|e| Error::data(&path, format!("line {}: {e}", n + 1)))?;
        if rec.scenario_id != clip.kind.id() {
            return Err(Error::data(&path, format!("line {}: scenario_id disagrees with manifest", n + 1)));
        }
        if rec.oracle.feature.len() != FEATURE_DIM {
            return Err(Error::data(&path, format!("line {}: teacher feature length", n + 1)));
        }
        samples.push(rec.into_sample().map_err(|e| Error::data(&path, format!("line {}: {e}", n + 1)))?);
    }
    if samples.len() != clip.steps {
        return Err(Error::data(&path, format!("{} steps, manifest says {}", samples.len(), clip.steps)));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(clips: usize) -> GenConfig {
        GenConfig {
            clips_per_scenario: clips,
            time_limit: 6.0,
            ..GenConfig::default()
        }
    }

    #[test]
    fn default_split_is_237_13() {
        let c = GenConfig::default();
        assert_eq!(c.total_clips(), 250);
        let v = val_allocation(&c);
        assert_eq!(v.iter().sum::<usize>(), 13);
        assert!(v.iter().all(|&n| n == 2 || n == 3));
    }

    #[test]
    fn proportions_scale_subsets() {
        let mut c = GenConfig::default();
        c.proportions[ScenarioKind::GiveWay.id()] = 0.1;
        assert_eq!(c.clips_for(ScenarioKind::GiveWay), 5);
        assert_eq!(c.total_clips(), 205);
        c.clips_per_scenario = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn generate_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&small(2), dir.path()).unwrap();
        assert_eq!(m.clips.len(), 10);
        let d = Dataset::load(dir.path()).unwrap();
        assert_eq!(d.train.len() + d.val.len(), m.clips.iter().map(|c| c.steps).sum::<usize>());
        assert!(d.subsets().iter().all(|s| !s.is_empty()));
        // Every clip lands in exactly one kind.
        let total: usize = d.subsets().iter().map(|s| s.len()).sum();
        assert_eq!(total, d.train.len());
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate(&small(1), a.path()).unwrap();
        generate(&small(1), b.path()).unwrap();
        assert_eq!(
            fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(b.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn tampered_clip_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&small(1), dir.path()).unwrap();
        let path = dir.path().join(&m.clips[0].file);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push('\n');
        fs::write(&path, text).unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::HashMismatch { .. })));
    }
}
