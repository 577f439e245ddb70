use aps_core::config::ExperimentConfig;
use aps_core::experiment::Benchmark;
use aps_core::navigator::NavModel;
use aps_core::preexplore::{pre_explore, pre_explore_curve, PreExploreConfig};
use aps_core::sampler::ApsModel;
use aps_core::speaker::SpeakerModel;
use aps_core::world::Split;

#[test]
fn adaptation_touches_only_its_world_and_freezes_both_helpers() {
    let mut cfg = ExperimentConfig::desk();
    cfg.world_train = 2;
    cfg.world_val_unseen = 2;
    cfg.world_test_unseen = 1;
    let b = Benchmark::generate(&cfg).unwrap();
    let nav = NavModel::new(&cfg.nav_config(), 1).unwrap();
    let aps = ApsModel::new(&cfg.aps_config(), 1).unwrap();
    let speaker = SpeakerModel::new(&cfg.speaker_config(), 1).unwrap();
    let (aps_bytes, speaker_bytes) = (aps.to_checkpoint().to_bytes(), speaker.to_checkpoint().to_bytes());
    let calls: Vec<u64> = b.worlds.iter().map(|g| g.planner_calls()).collect();

    let g = b.worlds.of_split(Split::ValUnseen)[0];
    let pcfg = PreExploreConfig { lr: 1e-3, ..cfg.preexplore_config() };
    let navs = pre_explore_curve(&nav, &aps, &speaker, g, &[0, 3, 6], &pcfg, 4).unwrap();
    assert!(navs[0].params().values_bit_equal(nav.params()));
    assert!(!navs[2].params().values_bit_equal(nav.params()));
    let direct = pre_explore(&nav, &aps, &speaker, g, 6, &pcfg, 4).unwrap();
    assert!(direct.params().values_bit_equal(navs[2].params()));

    assert_eq!(aps.to_checkpoint().to_bytes(), aps_bytes);
    assert_eq!(speaker.to_checkpoint().to_bytes(), speaker_bytes);
    let after: Vec<u64> = b.worlds.iter().map(|g| g.planner_calls()).collect();
    assert_eq!(calls, after, "planner queried during pre-exploration");

    let seen = b.worlds.of_split(Split::TrainSeen)[0];
    assert!(matches!(
        pre_explore(&nav, &aps, &speaker, seen, 1, &pcfg, 4),
        Err(aps_core::Error::PolicyViolation(_))
    ));
}
