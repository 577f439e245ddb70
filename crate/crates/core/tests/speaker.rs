use aps_core::config::ExperimentConfig;
use aps_core::experiment::{pretrain_speaker, Benchmark};
use aps_core::world::{oracle_instruction, MAX_TOKENS};

#[test]
fn pretrained_speaker_reproduces_oracle_instructions() {
    let cfg = ExperimentConfig::desk();
    let b = Benchmark::generate(&cfg).unwrap();
    let t = pretrain_speaker(&cfg, &b).unwrap();
    let upticks = t.epoch_losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(upticks as f64 <= 0.05 * (t.epoch_losses.len() - 1) as f64, "{:?}", t.epoch_losses);

    let acc = t.model.token_accuracy(&b.data.train, &b.worlds).unwrap();
    assert!(acc >= 0.95, "token accuracy {acc}");
    let exact = b
        .data
        .train
        .iter()
        .filter(|e| {
            let g = b.worlds.get(e.env()).unwrap();
            let generated = t.model.generate(g, &e.path);
            assert!(generated.len() <= MAX_TOKENS);
            assert_eq!(generated, t.model.generate(g, &e.path));
            generated.tokens() == oracle_instruction(g, &e.path).unwrap().tokens()
        })
        .count();
    assert!(exact as f64 >= 0.8 * b.data.train.len() as f64, "{exact} of {}", b.data.train.len());
}
