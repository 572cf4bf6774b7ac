//! The MONO1 model packet.
//!
//! A packet carries the architecture, the FGF settings and seed of every
//! generated layer, the seed filters and the remaining ordinary weights.
//! Generated banks are not transmitted; [`decode`] re-expands them, which
//! yields banks bitwise identical to the sender's. The byte layout is
//! described in `docs/mono1.md`.

use serde::Serialize;

use crate::bank::expand_bank;
use crate::error::{Error, Result};
use crate::fgf::{FgfConfig, FgfKind};
use crate::model::{LayerParams, LayerSpec, ModelDescriptor, ModelState};
use crate::ops::ConvGeometry;
use crate::tensor::Tensor;
use crate::wire::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"MONO";
pub const VERSION: u8 = 1;

pub const TAG_MONO_CONV: u8 = 0x01;
pub const TAG_STD_CONV: u8 = 0x02;
pub const TAG_RELU: u8 = 0x03;
pub const TAG_MAXPOOL: u8 = 0x04;
pub const TAG_GLOBAL_AVG_POOL: u8 = 0x05;
pub const TAG_DENSE: u8 = 0x06;

/// Bytes of FGF settings in front of each seed filter: kind, a, b, seed.
pub const FGF_RECORD_BYTES: usize = 1 + 4 + 4 + 8;
const HEADER_BYTES: usize = MAGIC.len() + 1;
const CRC_BYTES: usize = 4;
/// Decoding refuses to expand a bank larger than this many floats.
const MAX_BANK_ELEMENTS: usize = 1 << 28;

pub fn encode(state: &ModelState) -> Result<Vec<u8>> {
    let desc = &state.descriptor;
    desc.validate()?;
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u8(VERSION);
    let block = descriptor_block(desc)?;
    w.len32(block.len())?;
    w.bytes(&block);
    if state.layers.len() != desc.layers.len() {
        return Err(Error::Shape("parameter list length differs from layer count".into()));
    }
    for (spec, params) in desc.layers.iter().zip(&state.layers) {
        match (spec, params) {
            (LayerSpec::MonoConv { fgf, .. }, LayerParams::Mono(bank)) => {
                if bank.config != *fgf {
                    return Err(Error::Shape("bank config differs from descriptor".into()));
                }
                w.u8(fgf.kind.code());
                w.f32(fgf.beta_lower);
                w.f32(fgf.beta_upper);
                w.u64(fgf.seed);
                w.f32s(bank.seed_filter.data());
            }
            (LayerSpec::StdConv { .. }, LayerParams::Conv(weights)) => w.f32s(weights.data()),
            (LayerSpec::Dense { .. }, LayerParams::Dense { weights, bias }) => {
                w.f32s(weights.data());
                w.f32s(bias.data());
            }
            (LayerSpec::Relu | LayerSpec::MaxPool2x2 | LayerSpec::GlobalAvgPool, LayerParams::None) => {}
            _ => return Err(Error::Shape("layer parameters do not match spec".into())),
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

fn descriptor_block(desc: &ModelDescriptor) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.len16(desc.name.len())?;
    w.bytes(desc.name.as_bytes());
    for &d in &desc.input_shape {
        w.len32(d)?;
    }
    w.len16(desc.layers.len())?;
    for layer in &desc.layers {
        let mut v = Writer::default();
        let tag = match layer {
            LayerSpec::MonoConv { geom, fgf } => {
                put_geom(&mut v, geom)?;
                v.u8(u8::try_from(fgf.terms).map_err(|_| Error::Config("terms must fit in u8".into()))?);
                TAG_MONO_CONV
            }
            LayerSpec::StdConv { geom } => {
                put_geom(&mut v, geom)?;
                TAG_STD_CONV
            }
            LayerSpec::Relu => TAG_RELU,
            LayerSpec::MaxPool2x2 => TAG_MAXPOOL,
            LayerSpec::GlobalAvgPool => TAG_GLOBAL_AVG_POOL,
            LayerSpec::Dense { input, output } => {
                v.len32(*input)?;
                v.len32(*output)?;
                TAG_DENSE
            }
        };
        w.u8(tag);
        w.len16(v.buf.len())?;
        w.bytes(&v.buf);
    }
    w.len16(desc.stage_boundaries.len())?;
    for &b in &desc.stage_boundaries {
        w.len32(b)?;
    }
    Ok(w.buf)
}

fn put_geom(w: &mut Writer, g: &ConvGeometry) -> Result<()> {
    for v in [g.in_channels, g.out_channels, g.kernel, g.stride, g.padding] {
        w.len32(v)?;
    }
    Ok(())
}

fn get_geom(r: &mut Reader<'_>) -> Result<ConvGeometry> {
    Ok(ConvGeometry {
        in_channels: r.usize32()?,
        out_channels: r.usize32()?,
        kernel: r.usize32()?,
        stride: r.usize32()?,
        padding: r.usize32()?,
    })
}

/// Verify and parse a packet, regenerating every filter bank.
///
/// The CRC is checked before anything else, so any corruption of a
/// complete packet, header included, is reported as [`Error::CrcMismatch`].
pub fn decode(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < HEADER_BYTES + CRC_BYTES {
        let n = bytes.len().min(MAGIC.len());
        if bytes[..n] != MAGIC[..n] {
            return Err(Error::BadMagic {
                expected: MAGIC.to_vec(),
                found: bytes[..n].to_vec(),
            });
        }
        return Err(Error::Truncated {
            offset: 0,
            needed: HEADER_BYTES + CRC_BYTES,
            available: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CRC_BYTES);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut r = Reader::new(body);
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let block_len = r.usize32()?;
    let block = r.take(block_len)?;
    let (desc, terms) = parse_descriptor(block)?;

    let mut layers = Vec::with_capacity(desc.layers.len());
    let mut specs = Vec::with_capacity(desc.layers.len());
    for (i, spec) in desc.layers.iter().enumerate() {
        let (spec, params) = match spec {
            LayerSpec::StdConv { geom } => {
                let w = r.f32s(geom.filter_len() * geom.out_channels)?;
                (spec.clone(), LayerParams::Conv(Tensor::from_vec(&geom.weight_shape(), w)?))
            }
            LayerSpec::MonoConv { geom, .. } => {
                let kind = FgfKind::from_code(r.u8()?).map_err(|e| Error::Malformed(format!("layer {i}: {e}")))?;
                if geom.out_channels.saturating_mul(geom.filter_len()) > MAX_BANK_ELEMENTS {
                    return Err(Error::Malformed(format!("layer {i}: generated bank too large")));
                }
                let fgf = FgfConfig {
                    kind,
                    beta_lower: r.f32()?,
                    beta_upper: r.f32()?,
                    seed: r.u64()?,
                    m: geom.out_channels,
                    terms: terms[i],
                };
                fgf.validate().map_err(|e| Error::Malformed(format!("layer {i}: {e}")))?;
                let seed = r.f32s(geom.filter_len())?;
                let seed = Tensor::from_vec(&[geom.in_channels, geom.kernel, geom.kernel], seed)?;
                (
                    LayerSpec::MonoConv { geom: *geom, fgf },
                    LayerParams::Mono(expand_bank(&seed, &fgf)?),
                )
            }
            LayerSpec::Dense { input, output } => {
                let w = Tensor::from_vec(&[*output, *input], r.f32s(input * output)?)?;
                let b = Tensor::from_vec(&[*output], r.f32s(*output)?)?;
                (spec.clone(), LayerParams::Dense { weights: w, bias: b })
            }
            _ => (spec.clone(), LayerParams::None),
        };
        specs.push(spec);
        layers.push(params);
    }
    r.finish()?;
    let desc = ModelDescriptor { layers: specs, ..desc };
    ModelState::from_parts(desc, layers).map_err(|e| Error::Malformed(e.to_string()))
}

/// Parsed descriptor with placeholder FGF configs, plus the term count of
/// each generated layer (0 elsewhere).
fn parse_descriptor(block: &[u8]) -> Result<(ModelDescriptor, Vec<usize>)> {
    let mut r = Reader::new(block);
    let name = r.string16()?;
    let input_shape = [r.usize32()?, r.usize32()?, r.usize32()?];
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    let mut terms = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u8()?;
        let len = r.u16()? as usize;
        let mut v = Reader::new(r.take(len)?);
        let (layer, t) = match tag {
            TAG_MONO_CONV => {
                let geom = get_geom(&mut v)?;
                let t = v.u8()? as usize;
                let fgf = FgfConfig::monomial(0, geom.out_channels).with_terms(t);
                (LayerSpec::MonoConv { geom, fgf }, t)
            }
            TAG_STD_CONV => (LayerSpec::StdConv { geom: get_geom(&mut v)? }, 0),
            TAG_RELU => (LayerSpec::Relu, 0),
            TAG_MAXPOOL => (LayerSpec::MaxPool2x2, 0),
            TAG_GLOBAL_AVG_POOL => (LayerSpec::GlobalAvgPool, 0),
            TAG_DENSE => (
                LayerSpec::Dense {
                    input: v.usize32()?,
                    output: v.usize32()?,
                },
                0,
            ),
            other => return Err(Error::Malformed(format!("layer {i}: unknown tag {other:#04x}"))),
        };
        v.finish().map_err(|_| Error::Malformed(format!("layer {i}: record length {len} does not match tag")))?;
        layers.push(layer);
        terms.push(t);
    }
    let n = r.u16()? as usize;
    let mut stage_boundaries = Vec::with_capacity(n);
    for _ in 0..n {
        stage_boundaries.push(r.usize32()?);
    }
    r.finish()?;
    let desc = ModelDescriptor {
        name,
        input_shape,
        layers,
        stage_boundaries,
    };
    desc.validate().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok((desc, terms))
}

/// Exact packet length for a descriptor, without encoding anything.
pub fn encoded_len(desc: &ModelDescriptor) -> Result<usize> {
    desc.validate()?;
    let block = descriptor_block(desc)?.len();
    let params: usize = desc.layers.iter().map(layer_payload_bytes).sum();
    Ok(HEADER_BYTES + 4 + block + params + CRC_BYTES)
}

fn layer_payload_bytes(spec: &LayerSpec) -> usize {
    match spec {
        LayerSpec::MonoConv { geom, .. } => FGF_RECORD_BYTES + 4 * geom.filter_len(),
        LayerSpec::StdConv { geom } => 4 * geom.filter_len() * geom.out_channels,
        LayerSpec::Dense { input, output } => 4 * (input * output + output),
        _ => 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeReport {
    pub mono_bytes: u64,
    /// Packet of the same model with every generated bank sent as ordinary
    /// convolution weights.
    pub full_bytes: u64,
    pub ratio: f64,
    /// Convolution weight bytes only: seed filters on the mono side, full
    /// banks on the other. FGF records are not counted.
    pub conv_mono_bytes: u64,
    pub conv_full_bytes: u64,
    pub conv_ratio: f64,
}

pub fn size_report(desc: &ModelDescriptor) -> Result<SizeReport> {
    let twin = desc.standard_twin();
    let mono = encoded_len(desc)? as u64;
    let full = encoded_len(&twin)? as u64;
    let conv = |d: &ModelDescriptor| -> u64 {
        d.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::MonoConv { .. } | LayerSpec::StdConv { .. }))
            .map(|l| match l {
                LayerSpec::MonoConv { geom, .. } => 4 * geom.filter_len() as u64,
                other => layer_payload_bytes(other) as u64,
            })
            .sum()
    };
    let (cm, cf) = (conv(desc), conv(&twin));
    Ok(SizeReport {
        mono_bytes: mono,
        full_bytes: full,
        ratio: full as f64 / mono as f64,
        conv_mono_bytes: cm,
        conv_full_bytes: cf,
        conv_ratio: if cm == 0 { 1.0 } else { cf as f64 / cm as f64 },
    })
}
