//! Binary model files.
//!
//! Layout (little endian): the 7-byte magic `CANSAE1`, then `m`, `w`,
//! `period` and the layer count as `u32`; per layer `in`, `out`, `kh`, `kw`
//! as `u32` plus activation and resampling codes as `u8`; finally every
//! layer's weights followed by its biases as row-major `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::net::{Activation, ConvLayer, Network, Resample};
use super::{AeConfig, AeModel, ModelError};

pub const MODEL_MAGIC: &[u8; 7] = b"CANSAE1";

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
    }
}

fn resample_code(r: Resample) -> u8 {
    match r {
        Resample::None => 0,
        Resample::MaxPool2 => 1,
        Resample::Upsample2 => 2,
    }
}

pub fn write_model(model: &AeModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut out = BufWriter::new(File::create(path)?);
    encode(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn encode<W: Write>(model: &AeModel, out: &mut W) -> Result<(), ModelError> {
    let net = &model.net;
    out.write_all(MODEL_MAGIC)?;
    for v in [net.rows, net.cols, model.period, net.layers.len()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for layer in &net.layers {
        for v in [layer.in_channels, layer.out_channels, 3, 3] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        out.write_all(&[activation_code(layer.activation), resample_code(layer.resample)])?;
    }
    for layer in &net.layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads a model and checks its header against `config`: image size, layer
/// widths and, when given, the sampling period.
pub fn read_model(path: impl AsRef<Path>, config: &AeConfig, period: Option<usize>) -> Result<AeModel, ModelError> {
    let mut input = BufReader::new(File::open(path)?);
    decode(&mut input, config, period)
}

fn read_u32<R: Read>(input: &mut R) -> Result<usize, ModelError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

fn read_u8<R: Read>(input: &mut R) -> Result<u8, ModelError> {
    let mut buf = [0u8; 1];
    input.read_exact(&mut buf)?;
    Ok(buf[0])
}

pub(crate) fn decode<R: Read>(input: &mut R, config: &AeConfig, period: Option<usize>) -> Result<AeModel, ModelError> {
    let mut magic = [0u8; 7];
    input.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let (m, w, file_period, n_layers) = (read_u32(input)?, read_u32(input)?, read_u32(input)?, read_u32(input)?);
    if (m, w) != (config.m, config.w) {
        return Err(ModelError::ShapeMismatch { expected: (config.m, config.w), found: (m, w) });
    }
    if let Some(p) = period {
        if p != file_period {
            return Err(ModelError::PeriodMismatch { expected: p, found: file_period });
        }
    }
    if n_layers != config.filters.len() {
        return Err(ModelError::Format(format!("{} layers on disk, {} configured", n_layers, config.filters.len())));
    }
    let mut specs = Vec::with_capacity(n_layers);
    let mut expected_in = 1;
    for (i, &filters) in config.filters.iter().enumerate() {
        let (cin, cout, kh, kw) = (read_u32(input)?, read_u32(input)?, read_u32(input)?, read_u32(input)?);
        let activation = match read_u8(input)? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            c => return Err(ModelError::Format(format!("unknown activation code {c}"))),
        };
        let resample = match read_u8(input)? {
            0 => Resample::None,
            1 => Resample::MaxPool2,
            2 => Resample::Upsample2,
            c => return Err(ModelError::Format(format!("unknown resample code {c}"))),
        };
        if cin != expected_in || cout != filters || (kh, kw) != (3, 3) || resample != super::RESAMPLES[i] {
            return Err(ModelError::Format(format!("layer {i} does not match the configuration")));
        }
        expected_in = cout;
        specs.push((cin, cout, activation, resample));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (cin, cout, activation, resample) in specs {
        let weights = read_f32s(input, cout * cin * 9)?;
        let bias = read_f32s(input, cout)?;
        layers.push(ConvLayer { in_channels: cin, out_channels: cout, activation, resample, weights, bias });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after the last tensor".into()));
    }
    let net = Network {
        rows: m,
        cols: w,
        padded_rows: super::net::pad_to_four(m),
        padded_cols: super::net::pad_to_four(w),
        layers,
    };
    Ok(AeModel {
        config: config.clone(),
        period: file_period,
        net,
        history: Vec::new(),
        validation_history: Vec::new(),
    })
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>, ModelError> {
    let mut buf = vec![0u8; n * 4];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> AeConfig {
        AeConfig { m: 6, w: 10, ..AeConfig::default() }
    }

    #[test]
    fn write_then_read_restores_weights() {
        let model = AeModel::build(config(), 5).unwrap();
        let mut bytes = Vec::new();
        encode(&model, &mut bytes).unwrap();
        assert_eq!(&bytes[..7], MODEL_MAGIC);
        assert_eq!(bytes.len(), 7 + 16 + 5 * 18 + 4 * model.net.parameter_count());
        let loaded = decode(&mut bytes.as_slice(), &config(), Some(5)).unwrap();
        assert_eq!(loaded.net, model.net);
        assert_eq!(loaded.period, 5);
    }

    #[test]
    fn header_mismatches_are_reported() {
        let model = AeModel::build(config(), 5).unwrap();
        let mut bytes = Vec::new();
        encode(&model, &mut bytes).unwrap();
        let other = AeConfig { m: 8, ..config() };
        assert!(matches!(decode(&mut bytes.as_slice(), &other, None), Err(ModelError::ShapeMismatch { .. })));
        assert!(matches!(decode(&mut bytes.as_slice(), &config(), Some(1)), Err(ModelError::PeriodMismatch { .. })));
        let narrow = AeConfig { filters: vec![16, 16, 16, 32, 1], ..config() };
        assert!(matches!(decode(&mut bytes.as_slice(), &narrow, None), Err(ModelError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&mut bad.as_slice(), &config(), None), Err(ModelError::Format(_))));
        bytes.pop();
        assert!(decode(&mut bytes.as_slice(), &config(), None).is_err());
    }
}
