//! Flat binary model checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! magic "BATM" | version | layer count | input dim
//! per layer:   output dim | activation code (0 identity, 1 relu, 2 sigmoid)
//! payload:     per layer, weight (out × in, row-major) then bias,
//!              as little-endian f64
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::activation::Activation;
use super::model::{Dense, Model};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BATM";
pub const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &Model, mut out: W) -> Result<()> {
    out.write_all(&MAGIC)?;
    for v in [VERSION, model.layers().len() as u32, model.input_dim() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for layer in model.layers() {
        out.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        out.write_all(&layer.activation.code().to_le_bytes())?;
    }
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let input_dim = read_u32(&mut input)? as usize;
    if count == 0 || input_dim == 0 {
        return Err(Error::Checkpoint("empty model".into()));
    }
    let mut shapes = Vec::with_capacity(count);
    let mut fan_in = input_dim;
    for _ in 0..count {
        let out = read_u32(&mut input)? as usize;
        let code = read_u32(&mut input)?;
        let act = Activation::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown activation {code}")))?;
        shapes.push((out, fan_in, act));
        fan_in = out;
    }
    let mut layers = Vec::with_capacity(count);
    for (out, inp, act) in shapes {
        let weight = Array2::from_shape_vec((out, inp), read_f64s(&mut input, out * inp)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = Array1::from(read_f64s(&mut input, out)?);
        layers.push(Dense::new(weight, bias, act)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Model::new(layers)
}

pub fn save(model: &Model, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Model> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
