use std::fmt;

use gseal_grad::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

/// Binary watermark, most significant bit first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    bits: Vec<u8>,
}

/// Lengths used by the pipeline; other multiples of four parse but are
/// meant for tests.
pub const MESSAGE_LENGTHS: [usize; 4] = [16, 32, 48, 64];

impl Message {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() % 4 != 0 || bits.len() > 64 {
            return Err(Error::Validation(format!(
                "message length {} must be a positive multiple of 4, at most 64",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Validation("message bits must be 0 or 1".into()));
        }
        Ok(Message { bits })
    }

    /// Parses `0x`-prefixed hex; each digit contributes four bits.
    pub fn from_hex(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or_else(|| Error::Validation(format!("message {s:?} must start with 0x")))?;
        let mut bits = Vec::with_capacity(4 * digits.len());
        for ch in digits.chars() {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Validation(format!("invalid hex digit {ch:?} in {s:?}")))?;
            bits.extend((0..4).rev().map(|k| ((v >> k) & 1) as u8));
        }
        Self::from_bits(bits)
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::from_bits((0..len).map(|_| rng.random_range(0..2u8)).collect())
    }

    /// Bits of positive logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Self::from_bits(logits.iter().map(|&l| (l > 0.0) as u8).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_hex(&self) -> String {
        let digits: String = self
            .bits
            .chunks(4)
            .map(|c| {
                let v = c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).unwrap().to_ascii_uppercase()
            })
            .collect();
        format!("0x{digits}")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.len()], self.bits.iter().map(|&b| b as f64).collect()).expect("non-empty")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let mut bits = Vec::with_capacity(t.numel());
        for &v in t.data() {
            match v {
                0.0 => bits.push(0),
                1.0 => bits.push(1),
                _ => return Err(Error::Validation(format!("message tensor value {v} is not binary"))),
            }
        }
        Self::from_bits(bits)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn message_to_tensor(m: &Message) -> Tensor {
    m.to_tensor()
}
