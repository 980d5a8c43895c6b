//! Flat binary model record:
//!
//! ```text
//! b"MIAM" | version u8 | arch tag u8 | dim u32 | classes u32 | hidden u32
//! | n_weights u64 | weights f64 × n | train_hash [u8; 32]
//! ```
//! All integers and floats little-endian.

use super::{ArchKind, Architecture, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MIAM";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 4 + 4 + 4 + 8;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let arch = &model.arch;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.weights.len() + 32);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(arch.tag());
    for v in [arch.dim, arch.classes, arch.hidden_len()] {
        out.extend((v as u32).to_le_bytes());
    }
    out.extend((model.weights.len() as u64).to_le_bytes());
    for w in &model.weights {
        out.extend(w.to_le_bytes());
    }
    out.extend_from_slice(&model.train_hash);
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let bad = |what: &str| Error::Input(format!("malformed model record: {what}"));
    if bytes.len() < HEADER_LEN + 32 || &bytes[..4] != MAGIC {
        return Err(bad("header"));
    }
    if bytes[4] != VERSION {
        return Err(bad("version"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (dim, classes, hidden) = (u32_at(6), u32_at(10), u32_at(14));
    let kind = match bytes[5] {
        0 => ArchKind::Linear,
        1 => ArchKind::Mlp { hidden_units: hidden },
        _ => return Err(bad("architecture tag")),
    };
    let arch = Architecture { kind, dim, classes };
    let n = u64::from_le_bytes(bytes[18..26].try_into().unwrap()) as usize;
    if n != arch.param_count() || bytes.len() != HEADER_LEN + 8 * n + 32 {
        return Err(bad("length"));
    }
    let weights = bytes[HEADER_LEN..HEADER_LEN + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut train_hash = [0u8; 32];
    train_hash.copy_from_slice(&bytes[HEADER_LEN + 8 * n..]);
    Model::new(arch, weights, train_hash)
}
