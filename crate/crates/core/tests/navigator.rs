use aps_core::config::ExperimentConfig;
use aps_core::data::{EpisodePair, WorldSet};
use aps_core::experiment::Benchmark;
use aps_core::metrics::evaluate;
use aps_core::navigator::{Flavor, NavConfig, NavModel, RolloutMode, STEP_CAP};
use aps_core::seeding;
use aps_core::trainer::{nav_loss, NavTrainer};
use aps_core::world::{oracle_instruction, DistanceTable, NavGraph};

fn small() -> Benchmark {
    let mut cfg = ExperimentConfig::desk();
    cfg.world_train = 3;
    cfg.world_val_unseen = 1;
    cfg.world_test_unseen = 0;
    cfg.data_train_per_world = 10;
    Benchmark::generate(&cfg).unwrap()
}

#[test]
fn untrained_loss_is_near_log_of_action_space() {
    let b = small();
    let episodes = &b.data.train[..6];
    let (mut losses, mut options) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let nav = NavModel::new(&NavConfig::default(), seed).unwrap();
        let per = nav_loss(&nav, episodes, &b.worlds, seed).unwrap();
        for (i, e) in episodes.iter().enumerate() {
            let g = b.worlds.get(e.env()).unwrap();
            let teacher = DistanceTable::to_goal(g, e.path.end());
            let mut rng = seeding::rng(seed, "nav-example", i as u64);
            let mode = RolloutMode::StudentForcing { teacher: &teacher, rng: &mut rng };
            let t = nav.rollout(g, e.path.start(), &e.instruction, mode, STEP_CAP).unwrap();
            assert!((t.mean_loss().unwrap() - per.per_path[i]).abs() < 1e-12);
            losses.extend(&t.losses);
            options.extend(t.nodes[..t.losses.len()].iter().map(|&n| (g.degree(n) + 1) as f64));
        }
        assert!((per.mean - per.per_path.iter().sum::<f64>() / per.per_path.len() as f64).abs() < 1e-12);
    }
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let expected = (options.iter().sum::<f64>() / options.len() as f64).ln();
    assert!((mean_loss / expected - 1.0).abs() <= 0.3, "loss {mean_loss} vs ln(options) {expected}");
}

fn degree_three_node(worlds: &WorldSet) -> (&NavGraph, usize) {
    worlds
        .iter()
        .find_map(|g| (0..g.node_count()).find(|&n| g.degree(n) == 3).map(|n| (g, n)))
        .expect("a node of degree 3")
}

#[test]
fn untrained_distributions_do_not_collapse() {
    let b = small();
    let (g, node) = degree_three_node(&b.worlds);
    let path = g.shortest_path(node, g.neighbors(node)[0]).unwrap();
    let instr = oracle_instruction(g, &path).unwrap();
    for seed in 0..100 {
        let nav = NavModel::new(&NavConfig::default(), seed).unwrap();
        let ctx = nav.encode_instruction(&instr);
        let (probs, _) = nav.decode_step(g, node, &nav.initial_state(&ctx), &ctx).unwrap();
        assert_eq!(probs.len(), 4);
        assert!(probs.iter().all(|p| (0.05..=0.6).contains(p)), "seed {seed}: {probs:?}");
    }
}

fn overfit(flavor: Flavor, episodes: &[EpisodePair], worlds: &WorldSet) -> NavModel {
    let cfg = NavConfig { flavor, ..NavConfig::default() };
    let mut t = NavTrainer::new(NavModel::new(&cfg, 4).unwrap(), 1e-3);
    t.train(episodes, worlds, 500, episodes.len(), 4, "overfit").unwrap();
    t.nav
}

#[test]
fn overfit_navigator_memorises_ten_episodes() {
    let b = small();
    let episodes = &b.data.train[..10];
    for flavor in [Flavor::Panoramic, Flavor::Visuomotor] {
        let mut nav = overfit(flavor, episodes, &b.worlds);
        let m = evaluate(&nav, episodes, &b.worlds, "overfit", "train").unwrap();
        assert_eq!(m.sr, 1.0, "{flavor:?}");
        nav.set_dropout(0.0);
        let loss = nav_loss(&nav, episodes, &b.worlds, 1).unwrap();
        assert!(loss.per_path.iter().all(|&l| l < 0.05), "{flavor:?}: {:?}", loss.per_path);
        for e in episodes {
            let g = b.worlds.get(e.env()).unwrap();
            let t = nav.rollout(g, e.path.start(), &e.instruction, RolloutMode::Greedy, STEP_CAP).unwrap();
            assert!(g.distance(t.final_node(), e.path.end()) <= 3.0);
        }
    }
}
