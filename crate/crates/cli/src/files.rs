//! On-disk layout of worlds, episode files and checkpoints.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aps_core::data::{read_episodes, write_episodes, Datasets, EpisodePair, WorldSet};
use aps_core::nn::Checkpoint;
use aps_core::world::{read_world, write_world};

use crate::error::{CliError, CliResult};

pub const SPLIT_FILES: [&str; 4] = ["train", "val-seen", "val-unseen", "test-unseen"];

pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.display().to_string()))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(aps_core::Error::from)?;
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(aps_core::Error::from)?))
}

/// Writes one `<id>.world` file per world; returns the paths in world order.
pub fn write_worlds(worlds: &WorldSet, dir: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut out = Vec::new();
    for g in worlds.iter() {
        let path = dir.join(format!("{}.world", g.id()));
        let mut w = create(&path)?;
        write_world(g, &mut w)?;
        w.flush().map_err(aps_core::Error::from)?;
        out.push(path);
    }
    Ok(out)
}

/// Reads every `*.world` file of a directory, in file-name order.
pub fn read_worlds(dir: &Path) -> CliResult<WorldSet> {
    require(dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(aps_core::Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "world"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Missing(format!("no .world files in {}", dir.display())));
    }
    let worlds = paths
        .iter()
        .map(|p| Ok(read_world(BufReader::new(File::open(p).map_err(aps_core::Error::from)?))?))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(WorldSet::new(worlds)?)
}

pub fn write_episode_file(episodes: &[EpisodePair], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    write_episodes(episodes, &mut w)?;
    w.flush().map_err(aps_core::Error::from)?;
    Ok(())
}

pub fn read_episode_file(path: &Path, worlds: &WorldSet) -> CliResult<Vec<EpisodePair>> {
    require(path)?;
    Ok(read_episodes(BufReader::new(File::open(path).map_err(aps_core::Error::from)?), worlds)?)
}

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

pub fn write_datasets(data: &Datasets, dir: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let sets = [&data.train, &data.val_seen, &data.val_unseen, &data.test_unseen];
    let mut out = Vec::new();
    for (name, set) in SPLIT_FILES.iter().zip(sets) {
        let path = split_path(dir, name);
        write_episode_file(set, &path)?;
        out.push(path);
    }
    Ok(out)
}

pub fn read_datasets(dir: &Path, worlds: &WorldSet) -> CliResult<Datasets> {
    let [train, val_seen, val_unseen, test_unseen] =
        SPLIT_FILES.map(|name| read_episode_file(&split_path(dir, name), worlds));
    Ok(Datasets { train: train?, val_seen: val_seen?, val_unseen: val_unseen?, test_unseen: test_unseen? })
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require(path)?;
    Ok(Checkpoint::load(path)?)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    Ok(ck.save(path)?)
}

pub fn write_json_lines<T: serde::Serialize>(rows: &[T], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Usage(e.to_string()))?;
        w.write_all(b"\n").map_err(aps_core::Error::from)?;
    }
    w.flush().map_err(aps_core::Error::from)?;
    Ok(())
}
