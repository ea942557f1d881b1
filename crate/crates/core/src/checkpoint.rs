//! Binary checkpoint container for generators and value functions.
//!
//! Layout, in order:
//!
//! 1. 8-byte magic (`SLGEN\0\0\x01` for generators, `SLVFN\0\0\x01` for
//!    value functions — last byte is the container version);
//! 2. `u32` little-endian JSON header length;
//! 3. JSON header: model configuration, the attribute specs the model was
//!    trained against, a named parameter layout, and the payload byte
//!    count;
//! 4. raw little-endian 32-bit floats, in layout order.
//!
//! Parameters are computed in `f64` but stored as `f32`: the models are
//! small, retraining is cheap, and half the bytes keeps artifacts light.
//! Loads re-widen to `f64` and verify magic, header consistency, payload
//! length, and finiteness, citing the offending file in every error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attr::AttributeSpec;
use crate::error::Error;
use crate::generator::{Generator, GeneratorConfig};
use crate::value::ValueFunction;
use crate::Result;

const GEN_MAGIC: [u8; 8] = *b"SLGEN\x00\x00\x01";
const VFN_MAGIC: [u8; 8] = *b"SLVFN\x00\x00\x01";
/// Upper bound on the JSON header, to reject garbage length prefixes
/// before allocating.
const MAX_HEADER_BYTES: u32 = 1 << 20;

/// One named segment of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    /// Element count (not bytes).
    pub len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorHeader {
    config: GeneratorConfig,
    attributes: Vec<AttributeSpec>,
    layout: Vec<LayoutEntry>,
    payload_bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueFnHeader {
    dims: Vec<usize>,
    lambda: f64,
    attributes: Vec<AttributeSpec>,
    layout: Vec<LayoutEntry>,
    payload_bytes: u64,
}

fn loc(path: &Path) -> String {
    path.display().to_string()
}

fn generator_layout(config: &GeneratorConfig) -> Vec<LayoutEntry> {
    let (v, h, e) = (
        config.vocab_size as usize,
        config.hidden_dim,
        config.embed_dim,
    );
    vec![
        LayoutEntry { name: "embed".into(), len: v * e },
        LayoutEntry { name: "w_h".into(), len: h * h },
        LayoutEntry { name: "w_x".into(), len: h * e },
        LayoutEntry { name: "b_h".into(), len: h },
        LayoutEntry { name: "w_o".into(), len: v * h },
        LayoutEntry { name: "b_o".into(), len: v },
    ]
}

fn value_fn_layout(dims: &[usize]) -> Vec<LayoutEntry> {
    let mut layout = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        layout.push(LayoutEntry {
            name: format!("layer{i}.w"),
            len: pair[0] * pair[1],
        });
        layout.push(LayoutEntry {
            name: format!("layer{i}.b"),
            len: pair[1],
        });
    }
    layout
}

fn write_container(
    path: &Path,
    magic: &[u8; 8],
    header_json: &[u8],
    params: &[f64],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(magic)?;
    let header_len = u32::try_from(header_json.len()).map_err(|_| {
        Error::Malformed {
            location: loc(path),
            message: "checkpoint header exceeds u32 length".into(),
        }
    })?;
    out.write_all(&header_len.to_le_bytes())?;
    out.write_all(header_json)?;
    for &p in params {
        out.write_all(&(p as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

struct Container {
    header_json: Vec<u8>,
    params: Vec<f64>,
}

fn read_container(path: &Path, magic: &[u8; 8], kind: &str) -> Result<Container> {
    let mut file = BufReader::new(File::open(path)?);
    let mut got_magic = [0u8; 8];
    file.read_exact(&mut got_magic).map_err(|_| Error::Malformed {
        location: loc(path),
        message: "file too short for the 8-byte magic".into(),
    })?;
    if got_magic != *magic {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!(
                "bad magic {:?}: not a {kind} checkpoint (expected {:?})",
                got_magic, magic
            ),
        });
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes).map_err(|_| Error::Malformed {
        location: loc(path),
        message: "file too short for the header length".into(),
    })?;
    let header_len = u32::from_le_bytes(len_bytes);
    if header_len == 0 || header_len > MAX_HEADER_BYTES {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!("implausible header length {header_len}"),
        });
    }
    let mut header_json = vec![0u8; header_len as usize];
    file.read_exact(&mut header_json).map_err(|_| Error::Malformed {
        location: loc(path),
        message: format!("file too short for the {header_len}-byte header"),
    })?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!("payload of {} bytes is not float-aligned", payload.len()),
        });
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Container { header_json, params })
}

fn check_payload(
    path: &Path,
    layout: &[LayoutEntry],
    payload_bytes: u64,
    params: &[f64],
) -> Result<()> {
    let expected: usize = layout.iter().map(|l| l.len).sum();
    if payload_bytes != (expected * 4) as u64 {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!(
                "header claims {payload_bytes} payload bytes but the layout needs {}",
                expected * 4
            ),
        });
    }
    if params.len() != expected {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!(
                "payload holds {} parameters but the layout needs {expected}",
                params.len()
            ),
        });
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!("non-finite parameter at index {i}"),
        });
    }
    Ok(())
}

// =============================================================================
// Generator checkpoints
// =============================================================================

/// Saves a generator with the attribute specs it is meant to be scored
/// against.
pub fn save_generator(
    path: &Path,
    gen: &Generator,
    attributes: &[AttributeSpec],
) -> Result<()> {
    let header = GeneratorHeader {
        config: gen.config().clone(),
        attributes: attributes.to_vec(),
        layout: generator_layout(gen.config()),
        payload_bytes: (gen.param_count() * 4) as u64,
    };
    let header_json = serde_json::to_vec(&header)?;
    write_container(path, &GEN_MAGIC, &header_json, &gen.to_flat())
}

/// Loads a generator checkpoint, returning the model and the attribute
/// specs stored alongside it.
pub fn load_generator(path: &Path) -> Result<(Generator, Vec<AttributeSpec>)> {
    let container = read_container(path, &GEN_MAGIC, "generator")?;
    let header: GeneratorHeader =
        serde_json::from_slice(&container.header_json).map_err(|e| Error::Malformed {
            location: loc(path),
            message: format!("unreadable header: {e}"),
        })?;
    header.config.validate()?;
    let expected_layout = generator_layout(&header.config);
    if header.layout != expected_layout {
        return Err(Error::Malformed {
            location: loc(path),
            message: "parameter layout disagrees with the stored configuration".into(),
        });
    }
    check_payload(path, &header.layout, header.payload_bytes, &container.params)?;
    for spec in &header.attributes {
        spec.validate()?;
    }
    let gen = Generator::from_flat(header.config, &container.params)?;
    Ok((gen, header.attributes))
}

// =============================================================================
// Value-function checkpoints
// =============================================================================

/// Saves a value function together with the TD(λ) mixing weight and
/// attribute specs it was trained under.
pub fn save_value_fn(
    path: &Path,
    vf: &ValueFunction,
    lambda: f64,
    attributes: &[AttributeSpec],
) -> Result<()> {
    let header = ValueFnHeader {
        dims: vf.dims().to_vec(),
        lambda,
        attributes: attributes.to_vec(),
        layout: value_fn_layout(vf.dims()),
        payload_bytes: (vf.param_count() * 4) as u64,
    };
    let header_json = serde_json::to_vec(&header)?;
    write_container(path, &VFN_MAGIC, &header_json, &vf.to_flat())
}

/// Loads a value-function checkpoint: the model, its λ, and the attribute
/// specs stored alongside it.
pub fn load_value_fn(path: &Path) -> Result<(ValueFunction, f64, Vec<AttributeSpec>)> {
    let container = read_container(path, &VFN_MAGIC, "value-function")?;
    let header: ValueFnHeader =
        serde_json::from_slice(&container.header_json).map_err(|e| Error::Malformed {
            location: loc(path),
            message: format!("unreadable header: {e}"),
        })?;
    if header.layout != value_fn_layout(&header.dims) {
        return Err(Error::Malformed {
            location: loc(path),
            message: "parameter layout disagrees with the stored dimensions".into(),
        });
    }
    if !(0.0..=1.0).contains(&header.lambda) || !header.lambda.is_finite() {
        return Err(Error::Malformed {
            location: loc(path),
            message: format!("stored lambda {} is outside [0, 1]", header.lambda),
        });
    }
    check_payload(path, &header.layout, header.payload_bytes, &container.params)?;
    for spec in &header.attributes {
        spec.validate()?;
    }
    let vf = ValueFunction::from_flat(&header.dims, &container.params)?;
    Ok((vf, header.lambda, header.attributes))
}

// =============================================================================
// Tests
// =============================================================================
