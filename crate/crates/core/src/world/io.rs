//! Line-oriented world files. Features are recomputed from the seed, never stored.
//!
//! ```text
//! world id=train-000 seed=17 split=train-seen nodes=24
//! node 0 0 0 3 5
//! edge 0 1
//! ```

use std::io::{BufRead, Write};

use super::{Landmark, NavGraph, Split};
use crate::error::{format_err, Result};

pub fn write_world<W: Write>(g: &NavGraph, mut w: W) -> Result<()> {
    writeln!(w, "world id={} seed={} split={} nodes={}", g.id(), g.seed(), g.split(), g.node_count())?;
    for n in 0..g.node_count() {
        let [x, y] = g.position(n);
        let lm = g.landmark(n);
        writeln!(w, "node {n} {x:?} {y:?} {} {}", lm.color, lm.noun)?;
    }
    for (a, b) in g.edges() {
        writeln!(w, "edge {a} {b}")?;
    }
    Ok(())
}

fn field<'a>(parts: &[&'a str], key: &str) -> Result<&'a str> {
    parts
        .iter()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| format_err("world header", format!("missing {key}")))
}

fn num<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<T> {
    s.parse().map_err(|_| format_err(what, format!("cannot parse {s:?}")))
}

pub fn read_world<R: BufRead>(r: R) -> Result<NavGraph> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err("world file", "empty"))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.first() != Some(&"world") {
        return Err(format_err("world header", header.clone()));
    }
    let id = field(&parts, "id")?.to_string();
    let seed: u64 = num(field(&parts, "seed")?, "world seed")?;
    let split: Split = field(&parts, "split")?.parse()?;
    let count: usize = num(field(&parts, "nodes")?, "node count")?;

    let mut positions = vec![None; count];
    let mut landmarks = vec![Landmark { color: 0, noun: 0 }; count];
    let mut edges = Vec::new();
    for line in lines {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] => {}
            ["node", id, x, y, color, noun] => {
                let id: usize = num(id, "node id")?;
                if id >= count {
                    return Err(format_err("world node", format!("id {id} >= {count}")));
                }
                positions[id] = Some([num(x, "node x")?, num(y, "node y")?]);
                landmarks[id] = Landmark { color: num(color, "color")?, noun: num(noun, "noun")? };
            }
            ["edge", a, b] => edges.push((num(a, "edge")?, num(b, "edge")?)),
            _ => return Err(format_err("world record", line.clone())),
        }
    }
    let positions = positions
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| format_err("world file", format!("node {i} missing"))))
        .collect::<Result<Vec<_>>>()?;
    NavGraph::from_parts(id, seed, split, positions, landmarks, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_world;

    #[test]
    fn file_reproduces_world_and_features() {
        let g = generate_world("val-003", 77, 16, Split::ValUnseen).unwrap();
        let mut buf = Vec::new();
        write_world(&g, &mut buf).unwrap();
        let back = read_world(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.feature_rows(5), g.feature_rows(5));
    }

    #[test]
    fn malformed_records_fail() {
        assert!(read_world("world id=x seed=1 split=train-seen nodes=2\nnode 0 0 0 0 0\n".as_bytes()).is_err());
        assert!(read_world("planet id=x\n".as_bytes()).is_err());
        assert!(read_world("world id=x seed=1 split=moon nodes=1\n".as_bytes()).is_err());
    }
}
