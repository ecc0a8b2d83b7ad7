//! Weight checkpoint format.
//!
//! ```text
//! "SSAL"            4 bytes magic
//! version           1 byte (currently 1)
//! header_len        u32 little-endian
//! header            UTF-8 JSON {"config": NetConfig, "seed": u64,
//!                               "tensors": [{"name", "shape"}, ...]}
//! data              f32 little-endian arrays, tensors in name-sorted order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSAL";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

pub fn write_checkpoint<W: Write>(model: &Model<f32>, mut out: W) -> Result<()> {
    let mut order: Vec<usize> = (0..model.params().len()).collect();
    order.sort_by(|&a, &b| model.params()[a].name.cmp(&model.params()[b].name));
    let header = Header {
        config: model.config().clone(),
        seed: model.seed(),
        tensors: order
            .iter()
            .map(|&i| TensorEntry {
                name: model.params()[i].name.clone(),
                shape: model.params()[i].shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    out.write_all(&[VERSION]).map_err(io)?;
    out.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for &i in &order {
        let bytes: Vec<u8> = model.params()[i]
            .value
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        out.write_all(&bytes).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Model<f32>> {
    let mut magic = [0u8; 5];
    input
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated before header"))?;
    if &magic[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    if magic[4] != VERSION {
        return Err(bad(format!("unsupported version {}", magic[4])));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    let mut named = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| bad(format!("truncated tensor {}", t.name)))?;
        let value = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        named.push((t.name, t.shape, value));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::io("<checkpoint>", e))? != 0 {
        return Err(bad("trailing bytes"));
    }
    Model::from_parts(header.config, header.seed, named)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Head;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetConfig {
            base_channels: 4,
            depth: 2,
            input_size: (8, 8),
            head: Head::Segmentation,
            ..NetConfig::default()
        };
        let model = Model::<f32>::build(&cfg, 17).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"SSAL");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.params(), model.params());

        buf.push(0);
        assert!(read_checkpoint(buf.as_slice()).is_err());
        buf.truncate(buf.len() - 9);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
