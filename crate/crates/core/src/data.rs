//! Episode pairs, world collections and the line-delimited dataset format.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, invalid_arg, Error, Result};
use crate::metrics::SUCCESS_RADIUS;
use crate::seeding;
use crate::world::{generate_world, oracle_instruction, Instruction, NavGraph, Path, Provenance, Split};

/// Named collection of worlds.
#[derive(Clone, Debug, Default)]
pub struct WorldSet {
    worlds: Vec<NavGraph>,
    index: HashMap<String, usize>,
}

impl WorldSet {
    pub fn new(worlds: Vec<NavGraph>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, w) in worlds.iter().enumerate() {
            if index.insert(w.id().to_string(), i).is_some() {
                return Err(invalid_arg(format!("duplicate world id {}", w.id())));
            }
        }
        Ok(Self { worlds, index })
    }

    pub fn get(&self, id: &str) -> Result<&NavGraph> {
        self.index
            .get(id)
            .map(|&i| &self.worlds[i])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown world {id:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &NavGraph> {
        self.worlds.iter()
    }

    pub fn of_split(&self, split: Split) -> Vec<&NavGraph> {
        self.worlds.iter().filter(|w| w.split() == split).collect()
    }

    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }

    /// Subset containing only the named worlds.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let worlds = ids.into_iter().map(|id| self.get(id).cloned()).collect::<Result<Vec<_>>>()?;
        Self::new(worlds)
    }
}

/// Resolves world ids for training and evaluation code.
pub trait WorldLookup {
    fn world(&self, id: &str) -> Result<&NavGraph>;
}

impl WorldLookup for WorldSet {
    fn world(&self, id: &str) -> Result<&NavGraph> {
        self.get(id)
    }
}

/// A single graph resolves only its own id, so code handed one world cannot read another.
impl WorldLookup for NavGraph {
    fn world(&self, id: &str) -> Result<&NavGraph> {
        if id == self.id() {
            Ok(self)
        } else {
            Err(Error::PolicyViolation(format!("world {id:?} requested while restricted to {}", self.id())))
        }
    }
}

/// Split tag of an episode. Validation-seen episodes live in training worlds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EpisodeSplit {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val-seen")]
    ValSeen,
    #[serde(rename = "val-unseen")]
    ValUnseen,
    #[serde(rename = "test-unseen")]
    TestUnseen,
    #[serde(rename = "aug")]
    Augmented,
}

impl EpisodeSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeSplit::Train => "train",
            EpisodeSplit::ValSeen => "val-seen",
            EpisodeSplit::ValUnseen => "val-unseen",
            EpisodeSplit::TestUnseen => "test-unseen",
            EpisodeSplit::Augmented => "aug",
        }
    }
}

/// One (path, instruction) training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodePair {
    pub path: Path,
    pub instruction: Instruction,
    pub split: EpisodeSplit,
}

impl EpisodePair {
    pub fn env(&self) -> &str {
        &self.path.env
    }
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    env: String,
    split: EpisodeSplit,
    nodes: Vec<usize>,
    tokens: Vec<u16>,
    provenance: Provenance,
}

pub fn write_episodes<W: Write>(episodes: &[EpisodePair], mut w: W) -> Result<()> {
    for e in episodes {
        let rec = EpisodeRecord {
            env: e.path.env.clone(),
            split: e.split,
            nodes: e.path.nodes.clone(),
            tokens: e.instruction.tokens().to_vec(),
            provenance: e.instruction.provenance(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| format_err("episode", e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads episodes, validating every path against its world.
pub fn read_episodes<R: BufRead>(r: R, worlds: &WorldSet) -> Result<Vec<EpisodePair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord =
            serde_json::from_str(&line).map_err(|e| format_err("episode", e.to_string()))?;
        let g = worlds.get(&rec.env)?;
        out.push(EpisodePair {
            path: Path::from_nodes(g, rec.nodes)?,
            instruction: Instruction::new(rec.tokens, rec.provenance)?,
            split: rec.split,
        });
    }
    Ok(out)
}

/// Sizes and seeds of the generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub nodes: usize,
    pub train_worlds: usize,
    pub val_unseen_worlds: usize,
    pub test_unseen_worlds: usize,
}

fn world_id(split: Split, index: usize) -> String {
    let prefix = match split {
        Split::TrainSeen => "train",
        Split::ValUnseen => "val",
        Split::TestUnseen => "test",
    };
    format!("{prefix}-{index:03}")
}

pub fn generate_worlds(spec: &WorldSpec) -> Result<WorldSet> {
    let mut worlds = Vec::new();
    for (split, count) in [
        (Split::TrainSeen, spec.train_worlds),
        (Split::ValUnseen, spec.val_unseen_worlds),
        (Split::TestUnseen, spec.test_unseen_worlds),
    ] {
        for i in 0..count {
            let seed = seeding::derive(spec.seed, split.as_str(), i as u64);
            worlds.push(generate_world(world_id(split, i), seed, spec.nodes, split)?);
        }
    }
    WorldSet::new(worlds)
}

/// Inclusive hop-count range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HopRange {
    pub min: usize,
    pub max: usize,
}

impl HopRange {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max {
            return Err(invalid_arg(format!("bad hop range {min}..={max}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, hops: usize) -> bool {
        (self.min..=self.max).contains(&hops)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

/// Samples distinct shortest-path episodes whose hop count lies in `hops` and
/// whose goal lies outside the success radius of the start, skipping endpoint
/// pairs listed in `exclude`. Returns fewer than `count` only
/// when the world has too few eligible pairs.
pub fn sample_shortest_episodes(
    g: &NavGraph,
    count: usize,
    hops: HopRange,
    split: EpisodeSplit,
    exclude: &HashSet<(usize, usize)>,
    seed: u64,
) -> Result<Vec<EpisodePair>> {
    let n = g.node_count();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b && g.distance(a, b) > SUCCESS_RADIUS && !exclude.contains(&(a, b)) {
                pairs.push((a, b));
            }
        }
    }
    let mut rng = seeding::rng(seed, g.id(), split as u64);
    pairs.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for (a, b) in pairs {
        if out.len() == count {
            break;
        }
        let path = g.shortest_path(a, b)?;
        if hops.contains(path.hops()) {
            let instruction = oracle_instruction(g, &path)?;
            out.push(EpisodePair { path, instruction, split });
        }
    }
    Ok(out)
}

/// Ground-truth episodes for every split.
#[derive(Clone, Debug, Default)]
pub struct Datasets {
    pub train: Vec<EpisodePair>,
    pub val_seen: Vec<EpisodePair>,
    pub val_unseen: Vec<EpisodePair>,
    pub test_unseen: Vec<EpisodePair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub hops: HopRange,
    pub train_per_world: usize,
    pub val_seen_per_world: usize,
    pub unseen_per_world: usize,
}

pub fn generate_datasets(worlds: &WorldSet, spec: &DatasetSpec) -> Result<Datasets> {
    let mut d = Datasets::default();
    for g in worlds.iter() {
        match g.split() {
            Split::TrainSeen => {
                let train = sample_shortest_episodes(
                    g,
                    spec.train_per_world,
                    spec.hops,
                    EpisodeSplit::Train,
                    &HashSet::new(),
                    spec.seed,
                )?;
                let used: HashSet<(usize, usize)> =
                    train.iter().map(|e| (e.path.start(), e.path.end())).collect();
                d.val_seen.extend(sample_shortest_episodes(
                    g,
                    spec.val_seen_per_world,
                    spec.hops,
                    EpisodeSplit::ValSeen,
                    &used,
                    spec.seed,
                )?);
                d.train.extend(train);
            }
            Split::ValUnseen => d.val_unseen.extend(sample_shortest_episodes(
                g,
                spec.unseen_per_world,
                spec.hops,
                EpisodeSplit::ValUnseen,
                &HashSet::new(),
                spec.seed,
            )?),
            Split::TestUnseen => d.test_unseen.extend(sample_shortest_episodes(
                g,
                spec.unseen_per_world,
                spec.hops,
                EpisodeSplit::TestUnseen,
                &HashSet::new(),
                spec.seed,
            )?),
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (WorldSet, Datasets) {
        let worlds = generate_worlds(&WorldSpec {
            seed: 3,
            nodes: 24,
            train_worlds: 3,
            val_unseen_worlds: 2,
            test_unseen_worlds: 1,
        })
        .unwrap();
        let d = generate_datasets(
            &worlds,
            &DatasetSpec {
                seed: 3,
                hops: HopRange::new(4, 6).unwrap(),
                train_per_world: 10,
                val_seen_per_world: 4,
                unseen_per_world: 5,
            },
        )
        .unwrap();
        (worlds, d)
    }

    #[test]
    fn datasets_have_requested_shape() {
        let (_, d) = small();
        assert_eq!(d.train.len(), 30);
        assert_eq!(d.val_seen.len(), 12);
        assert_eq!(d.val_unseen.len(), 10);
        assert_eq!(d.test_unseen.len(), 5);
        for e in d.train.iter().chain(&d.val_seen) {
            assert!((4..=6).contains(&e.path.hops()));
            assert!(e.env().starts_with("train-"));
        }
        let train: HashSet<_> = d.train.iter().map(|e| (e.env().to_string(), e.path.start(), e.path.end())).collect();
        assert!(d.val_seen.iter().all(|e| !train.contains(&(e.env().to_string(), e.path.start(), e.path.end()))));
    }

    #[test]
    fn jsonl_round_trip() {
        let (worlds, d) = small();
        let mut buf = Vec::new();
        write_episodes(&d.train, &mut buf).unwrap();
        let back = read_episodes(buf.as_slice(), &worlds).unwrap();
        assert_eq!(back, d.train);
    }

    #[test]
    fn rejects_paths_invalid_in_world() {
        let (worlds, _) = small();
        let line = r#"{"env":"train-000","split":"train","nodes":[0,0],"tokens":[2],"provenance":"oracle"}"#;
        assert!(read_episodes(line.as_bytes(), &worlds).is_err());
        let line = r#"{"env":"nowhere","split":"train","nodes":[0,1],"tokens":[2],"provenance":"oracle"}"#;
        assert!(read_episodes(line.as_bytes(), &worlds).is_err());
    }
}
