//! `ADSH` network checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "ADSH" | version u16
//! height u32 | width u32 | channels u32 | num_classes u32
//! activation u8 (0 relu, 1 identity) | seed u64
//! hidden_count u32, then per layer: tag u8 (0 dense: width u32 | 1 conv: filters u32, kernel u32)
//! block_count u32, then per block: len u32, len x f32
//! ```
//!
//! Blocks alternate weight, bias per layer; weights are column-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use super::config::{Activation, InputDims, LayerSpec, NetConfig};
use super::net::{DiffNet, LayerParams};
use crate::binio::{self, Reader, Writer};
use crate::error::Result;

pub const MAGIC: &[u8; 4] = b"ADSH";
pub const VERSION: u16 = 1;

pub(crate) fn write_config(w: &mut Writer, config: &NetConfig) -> Result<()> {
    w.len_u32(config.input.height)?;
    w.len_u32(config.input.width)?;
    w.len_u32(config.input.channels)?;
    w.len_u32(config.num_classes)?;
    w.u8(match config.activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    });
    w.u64(config.seed);
    w.len_u32(config.hidden.len())?;
    for layer in &config.hidden {
        match *layer {
            LayerSpec::Dense { width } => {
                w.u8(0);
                w.len_u32(width)?;
            }
            LayerSpec::Conv { filters, kernel } => {
                w.u8(1);
                w.len_u32(filters)?;
                w.len_u32(kernel)?;
            }
        }
    }
    Ok(())
}

fn read_config(r: &mut Reader) -> Result<NetConfig> {
    let input = InputDims::new(r.usize()?, r.usize()?, r.usize()?);
    let num_classes = r.usize()?;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Identity,
        t => return Err(r.fail(format!("unknown activation tag {t}"))),
    };
    let seed = r.u64()?;
    let count = r.usize()?;
    r.ensure_remaining(count, 5)?;
    let mut hidden = Vec::with_capacity(count);
    for _ in 0..count {
        hidden.push(match r.u8()? {
            0 => LayerSpec::Dense { width: r.usize()? },
            1 => LayerSpec::Conv {
                filters: r.usize()?,
                kernel: r.usize()?,
            },
            t => return Err(r.fail(format!("unknown layer tag {t}"))),
        });
    }
    Ok(NetConfig {
        input,
        hidden,
        num_classes,
        activation,
        seed,
    })
}

/// Serializes a network. Parameters are narrowed to `f32`.
pub fn encode(net: &DiffNet) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    write_config(&mut w, net.config())?;
    let blocks = net.blocks();
    w.len_u32(blocks.len())?;
    for block in blocks {
        w.len_u32(block.len())?;
        for &v in block {
            w.f32(v as f32);
        }
    }
    Ok(w.into_inner())
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DiffNet> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let config = read_config(&mut r)?;
    config
        .validate()
        .map_err(|e| r.fail(format!("invalid stored config: {e}")))?;
    let shapes = config.layer_shapes();
    let count = r.usize()?;
    if count != 2 * shapes.len() {
        return Err(r.fail(format!("expected {} blocks, found {count}", 2 * shapes.len())));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.iter().enumerate() {
        let (rows, cols) = shape.weight_shape();
        let weight = read_block(&mut r, rows * cols, 2 * i)?;
        let bias = read_block(&mut r, rows, 2 * i + 1)?;
        layers.push(LayerParams {
            weight: DMatrix::from_vec(rows, cols, weight),
            bias: DVector::from_vec(bias),
        });
    }
    r.finish()?;
    DiffNet::from_params(config, layers)
}

fn read_block(r: &mut Reader, expected: usize, index: usize) -> Result<Vec<f64>> {
    let len = r.usize()?;
    if len != expected {
        return Err(r.fail(format!("block {index}: length {len}, expected {expected}")));
    }
    r.ensure_remaining(len, 4)?;
    (0..len).map(|_| r.f32().map(f64::from)).collect()
}

pub fn save(net: &DiffNet, path: &Path) -> Result<()> {
    binio::write_atomic(path, &encode(net)?)
}

pub fn load(path: &Path) -> Result<DiffNet> {
    decode(&binio::read_file(path)?, path)
}

/// Hex SHA-256 of a network's checkpoint encoding.
pub fn model_hash(net: &DiffNet) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode(net)?)))
}

pub fn model_digest(net: &DiffNet) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(encode(net)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn conv_config() -> NetConfig {
        NetConfig {
            input: InputDims::new(5, 5, 2),
            hidden: vec![LayerSpec::Conv { filters: 3, kernel: 2 }, LayerSpec::Dense { width: 4 }],
            num_classes: 3,
            activation: Activation::Relu,
            seed: 11,
        }
    }

    #[test]
    fn round_trip_after_f32_rounding_is_exact() {
        let mut net = DiffNet::build(conv_config()).unwrap();
        net.round_to_f32();
        let bytes = encode(&net).unwrap();
        assert_eq!(&bytes[..4], b"ADSH");
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = DiffNet::build(NetConfig::dense(3, &[2], 2, 1)).unwrap();
        let mut bytes = encode(&net).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], Path::new("x")),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn hash_changes_with_parameters() {
        let mut net = DiffNet::build(NetConfig::dense(3, &[2], 2, 1)).unwrap();
        let h0 = model_hash(&net).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        assert_ne!(h0, model_hash(&net).unwrap());
    }
}
