//! Binary model checkpoints.
//!
//! Layout: one JSON header line describing the bundle and every layer shape,
//! then each layer's weights (row-major) and bias as little-endian `f64`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{EvalHead, TrainedModel};
use crate::error::{Error, Result};
use crate::model::{BundleDims, ModelBundle};
use crate::rng::seeded;
use crate::tensor_net::Matrix;

const MAGIC: &str = "adgkt-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    dims: BundleDims,
    eval_head: EvalHead,
    layers: Vec<LayerShape>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct LayerShape {
    name: String,
    fan_in: usize,
    fan_out: usize,
}

fn shapes(bundle: &ModelBundle) -> Vec<LayerShape> {
    bundle
        .components()
        .iter()
        .flat_map(|(_, m)| m.params.layers.iter())
        .map(|l| LayerShape {
            name: l.name.clone(),
            fan_in: l.fan_in(),
            fan_out: l.fan_out(),
        })
        .collect()
}

pub fn write_checkpoint(model: &TrainedModel, mut w: impl Write) -> Result<()> {
    let header = Header {
        magic: MAGIC.into(),
        version: VERSION,
        dims: model.bundle.dims,
        eval_head: model.head,
        layers: shapes(&model.bundle),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, m) in model.bundle.components() {
        for layer in &m.params.layers {
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<TrainedModel> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Data(format!("bad checkpoint header: {e}")))?;
    if header.magic != MAGIC || header.version != VERSION {
        return Err(Error::Data(format!(
            "not a version {VERSION} checkpoint (magic {:?}, version {})",
            header.magic, header.version
        )));
    }
    // architecture comes from the header; the init values are overwritten below
    let mut bundle = ModelBundle::new(header.dims, &mut seeded(0))?;
    if shapes(&bundle) != header.layers {
        return Err(Error::Data(
            "layer shapes disagree with the stored dimensions".into(),
        ));
    }
    let mut buf = [0u8; 8];
    let mut next = |r: &mut BufReader<_>| -> Result<f64> {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Data("checkpoint truncated".into()))?;
        Ok(f64::from_le_bytes(buf))
    };
    for (_, m) in bundle.components_mut() {
        for layer in &mut m.params.layers {
            let (rows, cols) = layer.weight.shape();
            let w: Vec<f64> = (0..rows * cols)
                .map(|_| next(&mut r))
                .collect::<Result<_>>()?;
            layer.weight = Matrix::from_vec(rows, cols, w)?;
            for b in layer.bias.iter_mut() {
                *b = next(&mut r)?;
            }
            if !layer.bias.iter().all(|b| b.is_finite()) {
                return Err(Error::NonFinite("checkpoint bias"));
            }
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Data(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    Ok(TrainedModel {
        bundle,
        head: header.eval_head,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    read_checkpoint(std::fs::File::open(path)?)
}
