mod common;

use aps_core::data::WorldSet;
use aps_core::seeding;
use aps_core::world::{shortest_path_transform, Landmark, NavGraph, Path, Split};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn shortest_paths_and_next_hops_match_enumeration() {
    let mut pairs = 0;
    for i in 0..50 {
        pairs += common::check_world_against_enumeration(&common::small_world(i)).unwrap();
    }
    assert!(pairs >= 50 * 8 * 7);
}

#[test]
fn direct_edge_beats_slightly_longer_detour() {
    let bx = 1.95;
    let by = (4.0f64 - bx * bx).sqrt();
    let g = NavGraph::from_parts(
        "tri",
        0,
        Split::TrainSeen,
        vec![[0.0, 0.0], [bx, by], [3.9, 0.0]],
        vec![Landmark { color: 0, noun: 0 }; 3],
        &[(0, 1), (1, 2), (0, 2)],
    )
    .unwrap();
    let p = g.shortest_path(0, 2).unwrap();
    assert_eq!(p.nodes, [0, 2]);
    assert!((p.length - 3.9).abs() < 1e-12);
    assert_eq!(common::all_simple_paths(&g, 0, 2).len(), 2);
}

#[test]
fn transform_preserves_endpoints_on_sampled_paths() {
    let (worlds, paths) = common::aps_paths(1000);
    let refused = common::check_transforms(&worlds, &paths).unwrap();
    let closed = paths.iter().filter(|p| p.start() == p.end()).count();
    assert_eq!(refused, closed);
    assert!(refused < 1000);
}

#[test]
fn back_and_forth_collapses_to_one_edge() {
    let g = common::small_world(3);
    let (a, b) = (0, g.neighbors(0)[0]);
    let p = Path::from_nodes(&g, vec![a, b, a, b]).unwrap();
    let t = shortest_path_transform(&g, &p).unwrap();
    assert_eq!(t.nodes, [a, b]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walk_transform_never_lengthens(world in 0u64..200, seed in any::<u64>(), hops in 1usize..8) {
        let g = common::small_world(world);
        let mut rng = seeding::rng(seed, "walk", 0);
        let mut node = rng.gen_range(0..g.node_count());
        let mut nodes = vec![node];
        for _ in 0..hops {
            node = g.neighbors(node)[rng.gen_range(0..g.degree(node))];
            nodes.push(node);
        }
        let p = Path::from_nodes(&g, nodes).unwrap();
        let worlds = WorldSet::new(vec![g]).unwrap();
        common::check_transforms(&worlds, &[p]).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn shortest_path_is_symmetric_in_length(world in 0u64..200, a in 0usize..8, b in 0usize..8) {
        prop_assume!(a != b);
        let g = common::small_world(world);
        let (ab, ba) = (g.shortest_path(a, b).unwrap(), g.shortest_path(b, a).unwrap());
        prop_assert!((ab.length - ba.length).abs() < 1e-9);
    }
}
