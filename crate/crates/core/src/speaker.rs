//! Back-translation speaker: path encoder LSTM, attentive token decoder.

use rand::seq::SliceRandom;

use crate::data::{EpisodePair, WorldSet};
use crate::error::{invalid_arg, Result};
use crate::nn::{adam_step, AdamState, Checkpoint, LstmParams, ParamId, ParamSet, Tape, Var};
use crate::seeding::{self, Rng};
use crate::world::{
    path_turns, Instruction, NavGraph, Path, Provenance, Turn, Vocab, ACTION_FEATURE_DIM, FEATURE_DIM,
    MAX_TOKENS, VOCAB_SIZE,
};

/// Motion classes fed to the encoder: forward, left, right and the closing stop step.
pub const MOTION_CLASSES: usize = 4;
const STOP_CLASS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerConfig {
    pub hidden: usize,
    pub embed: usize,
    pub action_embed: usize,
    pub attention: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
            action_embed: 16,
            attention: 32,
            dropout: 0.5,
            lr: 1e-2,
            weight_decay: 5e-4,
            batch: 8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Handles {
    motion: ParamId,
    encoder: LstmParams,
    tokens: ParamId,
    decoder: LstmParams,
    att_query: ParamId,
    att_key: ParamId,
    mix_w: ParamId,
    mix_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl Handles {
    fn bind(p: &ParamSet) -> Result<Self> {
        Ok(Self {
            motion: p.require("spk/motion")?,
            encoder: LstmParams::lookup(p, "spk/enc")?,
            tokens: p.require("spk/tokens")?,
            decoder: LstmParams::lookup(p, "spk/dec")?,
            att_query: p.require("spk/att/q")?,
            att_key: p.require("spk/att/k")?,
            mix_w: p.require("spk/mix/w")?,
            mix_b: p.require("spk/mix/b")?,
            out_w: p.require("spk/out/w")?,
            out_b: p.require("spk/out/b")?,
        })
    }
}

/// Encoder input of one path step: candidate descriptor plus motion class.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub feature: [f64; ACTION_FEATURE_DIM],
    pub motion: usize,
}

/// One input per step, then a stop step carrying the end node's front patch.
pub fn path_inputs(g: &NavGraph, p: &Path) -> Vec<StepInput> {
    let mut out: Vec<StepInput> = path_turns(g, p)
        .into_iter()
        .enumerate()
        .map(|(t, turn)| StepInput {
            feature: g.action_feature(p.nodes[t], p.actions[t]),
            motion: match turn {
                Turn::Forward => 0,
                Turn::Left => 1,
                Turn::Right => 2,
            },
        })
        .collect();
    let mut feature = [0.0; ACTION_FEATURE_DIM];
    feature[..FEATURE_DIM].copy_from_slice(&g.patch_feature(p.end(), 0));
    out.push(StepInput { feature, motion: STOP_CLASS });
    out
}

#[derive(Clone, Debug)]
pub struct SpeakerModel {
    params: ParamSet,
    net: Net,
}

/// Parameter handles plus hyper-parameters; the forward pass lives here so it
/// can borrow parameter values while gradients are borrowed mutably.
#[derive(Clone, Copy, Debug)]
struct Net {
    handles: Handles,
    dropout: f64,
}

/// Result of [`train_speaker`].
#[derive(Clone, Debug)]
pub struct SpeakerTraining {
    pub model: SpeakerModel,
    /// Mean per-token loss on the training set after the last epoch (dropout off).
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

struct Encoded {
    keys: Var,
    projected: Var,
    h: Var,
    c: Var,
}

#[derive(Clone, Copy)]
struct DecState {
    h: Var,
    c: Var,
}

impl DecState {
    fn start(enc: &Encoded) -> Self {
        Self { h: enc.h, c: enc.c }
    }
}

impl SpeakerModel {
    pub fn new(cfg: &SpeakerConfig, seed: u64) -> Result<Self> {
        let mut rng = seeding::rng(seed, "speaker-init", 0);
        let mut p = ParamSet::new();
        let h = cfg.hidden;
        p.insert_uniform("spk/motion", &[MOTION_CLASSES, cfg.action_embed], cfg.action_embed, &mut rng)?;
        LstmParams::new(&mut p, "spk/enc", ACTION_FEATURE_DIM + cfg.action_embed, h, &mut rng)?;
        p.insert_uniform("spk/tokens", &[VOCAB_SIZE, cfg.embed], cfg.embed, &mut rng)?;
        LstmParams::new(&mut p, "spk/dec", cfg.embed, h, &mut rng)?;
        p.insert_uniform("spk/att/q", &[cfg.attention, h], h, &mut rng)?;
        p.insert_uniform("spk/att/k", &[cfg.attention, h], h, &mut rng)?;
        p.insert_uniform("spk/mix/w", &[h, 3 * h], 3 * h, &mut rng)?;
        p.insert_uniform("spk/mix/b", &[h], 3 * h, &mut rng)?;
        p.insert_uniform("spk/out/w", &[VOCAB_SIZE, h], h, &mut rng)?;
        p.insert_uniform("spk/out/b", &[VOCAB_SIZE], h, &mut rng)?;
        let handles = Handles::bind(&p)?;
        Ok(Self { params: p, net: Net { handles, dropout: cfg.dropout } })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params).with_meta("dropout", vec![self.net.dropout])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let params = ck.params()?;
        let handles = Handles::bind(&params)?;
        let dropout = ck.meta("dropout").map(|t| t.values()[0]).unwrap_or(0.0);
        Ok(Self { params, net: Net { handles, dropout } })
    }

    /// Teacher-forced loss of every target token of one pair, dropout off.
    pub fn token_losses(&self, g: &NavGraph, pair: &EpisodePair) -> Vec<f64> {
        let steps = path_inputs(g, &pair.path);
        let mut tape = Tape::new(self.params.values());
        let enc = self.net.encode(&mut tape, &steps);
        let mut state = DecState::start(&enc);
        let mut prev = Vocab::BOS;
        let mut out = Vec::new();
        for &target in pair.instruction.tokens() {
            let logits;
            (logits, state) = self.net.decode_step(&mut tape, &enc, prev, state, None);
            let loss = tape.cross_entropy(logits, target as usize);
            out.push(tape.scalar(loss));
            prev = target;
        }
        out
    }

    /// Mean per-token loss of one pair, dropout off.
    pub fn pair_loss(&self, g: &NavGraph, pair: &EpisodePair) -> f64 {
        let steps = path_inputs(g, &pair.path);
        let mut tape = Tape::new(self.params.values());
        let (loss, _) = self.net.forced(&mut tape, &steps, pair.instruction.tokens(), None);
        tape.scalar(loss)
    }

    /// Mean over pairs of the per-pair token loss.
    pub fn mean_loss(&self, dataset: &[EpisodePair], worlds: &WorldSet) -> Result<f64> {
        if dataset.is_empty() {
            return Err(invalid_arg("empty dataset"));
        }
        let mut total = 0.0;
        for pair in dataset {
            total += self.pair_loss(worlds.get(pair.env())?, pair);
        }
        Ok(total / dataset.len() as f64)
    }

    /// Teacher-forced argmax accuracy over all target tokens.
    pub fn token_accuracy(&self, dataset: &[EpisodePair], worlds: &WorldSet) -> Result<f64> {
        let (mut correct, mut total) = (0, 0);
        for pair in dataset {
            let steps = path_inputs(worlds.get(pair.env())?, &pair.path);
            let mut tape = Tape::new(self.params.values());
            let tokens = pair.instruction.tokens();
            correct += self.net.forced(&mut tape, &steps, tokens, None).1;
            total += tokens.len();
        }
        Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
    }

    /// Greedy decode until `<eos>` or the length cap.
    pub fn generate(&self, g: &NavGraph, p: &Path) -> Instruction {
        let steps = path_inputs(g, p);
        let mut tape = Tape::new(self.params.values());
        let enc = self.net.encode(&mut tape, &steps);
        let mut state = DecState::start(&enc);
        let mut prev = Vocab::BOS;
        let mut words = Vec::new();
        while words.len() < MAX_TOKENS - 1 {
            let logits;
            (logits, state) = self.net.decode_step(&mut tape, &enc, prev, state, None);
            let lv = tape.value(logits);
            // Never emit padding or a second start marker.
            let next = (Vocab::EOS as usize..VOCAB_SIZE)
                .max_by(|&a, &b| lv[a].total_cmp(&lv[b]).then(b.cmp(&a)))
                .expect("non-empty vocabulary") as u16;
            if next == Vocab::EOS {
                break;
            }
            words.push(next);
            prev = next;
        }
        Instruction::terminated(words, Provenance::Speaker).expect("generated ids are in vocabulary")
    }
}

impl Net {
    fn encode(&self, tape: &mut Tape<'_>, steps: &[StepInput]) -> Encoded {
        let hd = self.handles;
        let mut h = tape.zeros(hd.encoder.hidden);
        let mut c = tape.zeros(hd.encoder.hidden);
        let mut states = Vec::with_capacity(steps.len());
        for s in steps {
            let f = tape.input(s.feature.to_vec());
            let m = tape.embed(hd.motion, s.motion);
            let x = tape.concat(&[f, m]);
            (h, c) = hd.encoder.step(tape, x, h, c);
            states.push(h);
        }
        let keys = tape.stack(&states);
        let projected = tape.affine_rows(hd.att_key, keys, states.len());
        Encoded { keys, projected, h, c }
    }

    /// Logits for the next token given the previous token and decoder state.
    fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        enc: &Encoded,
        prev: u16,
        state: DecState,
        rng: Option<&mut Rng>,
    ) -> (Var, DecState) {
        let hd = self.handles;
        let e = tape.embed(hd.tokens, prev as usize);
        let (h, c) = hd.decoder.step(tape, e, state.h, state.c);
        let (ctx, _) = tape.attention_projected(h, hd.att_query, enc.keys, enc.projected);
        // The final path encoding is fed to every step so end-of-path details stay reachable.
        let joint = tape.concat(&[h, ctx, enc.h]);
        let pre = tape.affine(hd.mix_w, Some(hd.mix_b), joint);
        let mut mixed = tape.tanh(pre);
        if let Some(r) = rng {
            mixed = tape.dropout(mixed, self.dropout, r);
        }
        (tape.affine(hd.out_w, Some(hd.out_b), mixed), DecState { h, c })
    }

    /// Teacher-forced mean token loss; returns `(loss, correct argmax count)`.
    fn forced(
        &self,
        tape: &mut Tape<'_>,
        steps: &[StepInput],
        tokens: &[u16],
        mut rng: Option<&mut Rng>,
    ) -> (Var, usize) {
        let enc = self.encode(tape, steps);
        let mut state = DecState::start(&enc);
        let mut prev = Vocab::BOS;
        let mut losses = Vec::with_capacity(tokens.len());
        let mut correct = 0;
        for &target in tokens {
            let logits;
            (logits, state) = self.decode_step(tape, &enc, prev, state, rng.as_deref_mut());
            if argmax(tape.value(logits)) == target as usize {
                correct += 1;
            }
            losses.push(tape.cross_entropy(logits, target as usize));
            prev = target;
        }
        (tape.mean(&losses), correct)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn train_speaker(dataset: &[EpisodePair], worlds: &WorldSet, epochs: usize, seed: u64) -> Result<SpeakerTraining> {
    train_speaker_with(dataset, worlds, &SpeakerConfig::default(), epochs, seed)
}

/// Teacher-forced cross-entropy training with Adam over shuffled minibatches.
/// The learning rate decays linearly to a tenth of `cfg.lr` over the epochs.
pub fn train_speaker_with(
    dataset: &[EpisodePair],
    worlds: &WorldSet,
    cfg: &SpeakerConfig,
    epochs: usize,
    seed: u64,
) -> Result<SpeakerTraining> {
    if dataset.is_empty() {
        return Err(invalid_arg("speaker training needs a non-empty dataset"));
    }
    if dataset.iter().any(|p| p.instruction.provenance() != Provenance::Oracle) {
        return Err(invalid_arg("speaker trains on oracle instructions only"));
    }
    let inputs: Vec<Vec<StepInput>> = dataset
        .iter()
        .map(|p| Ok(path_inputs(worlds.get(p.env())?, &p.path)))
        .collect::<Result<_>>()?;
    let mut model = SpeakerModel::new(cfg, seed)?;
    let mut adam = AdamState::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    let batch = cfg.batch.max(1);
    for epoch in 0..epochs {
        adam.lr = cfg.lr * (1.0 - 0.9 * epoch as f64 / epochs as f64);
        order.shuffle(&mut seeding::rng(seed, "speaker-shuffle", epoch as u64));
        for (b, chunk) in order.chunks(batch).enumerate() {
            let mut drop_rng = seeding::rng(seed, "speaker-dropout", ((epoch as u64) << 32) | b as u64);
            let weight = 1.0 / chunk.len() as f64;
            let net = model.net;
            let (values, grads) = model.params.split_mut();
            for &i in chunk {
                let mut tape = Tape::new(values);
                let (loss, _) =
                    net.forced(&mut tape, &inputs[i], dataset[i].instruction.tokens(), Some(&mut drop_rng));
                tape.backward(loss, weight, grads);
            }
            adam_step(&mut model.params, &mut adam)?;
        }
        epoch_losses.push(model.mean_loss(dataset, worlds)?);
        log::debug!("speaker epoch {epoch}: loss {:.4}", epoch_losses[epoch]);
    }
    let final_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => model.mean_loss(dataset, worlds)?,
    };
    Ok(SpeakerTraining { model, final_loss, epoch_losses })
}

impl PartialEq for SpeakerModel {
    fn eq(&self, other: &Self) -> bool {
        self.params.values_bit_equal(&other.params) && self.net.dropout.to_bits() == other.net.dropout.to_bits()
    }
}
