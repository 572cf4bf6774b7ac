//! Training checkpoints: the model as a MONO1 packet plus optimizer state.
//!
//! ```text
//! "MCKP" | version u8 | epoch u32 | step u64 | total_steps u64
//! | config_len u32 | config JSON | packet_len u32 | MONO1 packet
//! | tensor_count u32 | (len u32 | f32 * len)* | crc32 u32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::Tensor;
use crate::train::{LossConfig, TrainConfig, Trainer};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"MCKP";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Configs {
    train: TrainConfig,
    loss: LossConfig,
}

pub struct Checkpoint {
    pub state: ModelState,
    pub trainer: Trainer,
}

pub fn encode_checkpoint(state: &ModelState, trainer: &Trainer) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.len32(trainer.epoch)?;
    w.u64(trainer.step as u64);
    w.u64(trainer.total_steps as u64);
    let cfg = serde_json::to_vec(&Configs {
        train: trainer.config,
        loss: trainer.loss,
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.len32(cfg.len())?;
    w.bytes(&cfg);
    let packet = codec::encode(state)?;
    w.len32(packet.len())?;
    w.bytes(&packet);
    w.len32(trainer.velocity.len())?;
    for v in &trainer.velocity {
        w.len32(v.len())?;
        w.f32s(v.data());
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < MAGIC.len() + 1 + 4 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader::new(&body[4..]);
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let epoch = r.usize32()?;
    let step = r.u64()? as usize;
    let total_steps = r.u64()? as usize;
    let n = r.usize32()?;
    let cfg: Configs = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = r.usize32()?;
    let state = codec::decode(r.take(n)?)?;
    let count = r.usize32()?;
    let shapes: Vec<Vec<usize>> = state.learnables().iter().map(|t| t.shape().to_vec()).collect();
    if count != shapes.len() {
        return Err(bad("optimizer state does not match the model"));
    }
    let mut velocity = Vec::with_capacity(count);
    for shape in &shapes {
        let len = r.usize32()?;
        let data = r.f32s(len)?;
        velocity.push(Tensor::from_vec(shape, data).map_err(|_| bad("velocity shape mismatch"))?);
    }
    r.finish()?;
    cfg.train.validate()?;
    cfg.loss.validate()?;
    Ok(Checkpoint {
        state,
        trainer: Trainer {
            config: cfg.train,
            loss: cfg.loss,
            velocity,
            step,
            epoch,
            total_steps,
        },
    })
}

pub fn save_checkpoint(path: &Path, state: &ModelState, trainer: &Trainer) -> Result<()> {
    let bytes = encode_checkpoint(state, trainer)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
