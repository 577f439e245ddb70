//! Closed instruction vocabulary and the deterministic oracle grammar.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{NavGraph, Path};
use crate::error::{invalid_arg, Result};

const WORDS: [&str; 25] = [
    "<pad>", "<bos>", "<eos>", "forward", "left", "right", "to", "the", "stop", //
    "red", "blue", "green", "yellow", "white", "black", "brown", "gray", //
    "door", "table", "chair", "sofa", "bed", "lamp", "plant", "window",
];

pub const VOCAB_SIZE: usize = WORDS.len();
/// Longest instruction, end marker included.
pub const MAX_TOKENS: usize = 24;

/// Token ids of the closed vocabulary.
pub struct Vocab;

impl Vocab {
    pub const PAD: u16 = 0;
    pub const BOS: u16 = 1;
    pub const EOS: u16 = 2;
    pub const FORWARD: u16 = 3;
    pub const LEFT: u16 = 4;
    pub const RIGHT: u16 = 5;
    pub const TO: u16 = 6;
    pub const THE: u16 = 7;
    pub const STOP: u16 = 8;
    const COLOR_BASE: u16 = 9;
    const NOUN_BASE: u16 = 17;

    pub fn color(index: u8) -> u16 {
        Self::COLOR_BASE + index as u16
    }

    pub fn noun(index: u8) -> u16 {
        Self::NOUN_BASE + index as u16
    }

    pub fn word(id: u16) -> Option<&'static str> {
        WORDS.get(id as usize).copied()
    }

    pub fn id(word: &str) -> Option<u16> {
        WORDS.iter().position(|w| *w == word).map(|i| i as u16)
    }

    /// Space-separated words to ids.
    pub fn encode(text: &str) -> Result<Vec<u16>> {
        text.split_whitespace()
            .map(|w| Self::id(w).ok_or_else(|| invalid_arg(format!("unknown word {w:?}"))))
            .collect()
    }

    pub fn decode(ids: &[u16]) -> String {
        ids.iter().map(|&i| Self::word(i).unwrap_or("<?>")).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Speaker,
}

/// Token sequence terminated by `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    tokens: Vec<u16>,
    provenance: Provenance,
}

impl Instruction {
    pub fn new(tokens: Vec<u16>, provenance: Provenance) -> Result<Self> {
        if tokens.is_empty() || tokens.len() > MAX_TOKENS {
            return Err(invalid_arg(format!("instruction length {} outside 1..={MAX_TOKENS}", tokens.len())));
        }
        if tokens.iter().any(|&t| t as usize >= VOCAB_SIZE) {
            return Err(invalid_arg("token id outside vocabulary"));
        }
        if *tokens.last().expect("non-empty") != Vocab::EOS {
            return Err(invalid_arg("instruction must end with <eos>"));
        }
        Ok(Self { tokens, provenance })
    }

    /// Appends `<eos>` to `words` (truncating to fit).
    pub fn terminated(mut words: Vec<u16>, provenance: Provenance) -> Result<Self> {
        words.truncate(MAX_TOKENS - 1);
        words.push(Vocab::EOS);
        Self::new(words, provenance)
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    /// Tokens without the trailing end marker.
    pub fn words(&self) -> &[u16] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Motion class of one step relative to the current heading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Turn {
    Forward,
    Left,
    Right,
}

impl Turn {
    pub fn token(self) -> u16 {
        match self {
            Turn::Forward => Vocab::FORWARD,
            Turn::Left => Vocab::LEFT,
            Turn::Right => Vocab::RIGHT,
        }
    }
}

/// Forward below 45 degrees of heading change, otherwise left (counter-clockwise) or right.
pub fn turn_class(from_heading: f64, to_heading: f64) -> Turn {
    let mut delta = (to_heading - from_heading).rem_euclid(2.0 * PI);
    if delta > PI {
        delta -= 2.0 * PI;
    }
    if delta.abs() < PI / 4.0 {
        Turn::Forward
    } else if delta > 0.0 {
        Turn::Left
    } else {
        Turn::Right
    }
}

/// Turn class of every step; the agent starts facing heading 0.
pub fn path_turns(g: &NavGraph, p: &Path) -> Vec<Turn> {
    let mut heading = 0.0;
    p.nodes
        .windows(2)
        .map(|w| {
            let h = g.heading(w[0], w[1]);
            let t = turn_class(heading, h);
            heading = h;
            t
        })
        .collect()
}

/// One motion word per step, then `to the <color> <noun> stop`.
pub fn oracle_instruction(g: &NavGraph, p: &Path) -> Result<Instruction> {
    if p.hops() == 0 {
        return Err(invalid_arg("oracle instruction for an empty path"));
    }
    let mut words: Vec<u16> = path_turns(g, p).into_iter().map(Turn::token).collect();
    let lm = g.landmark(p.end());
    words.extend([Vocab::TO, Vocab::THE, Vocab::color(lm.color), Vocab::noun(lm.noun), Vocab::STOP]);
    Instruction::terminated(words, Provenance::Oracle)
}
