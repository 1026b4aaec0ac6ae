//! Network checkpoints: a self-describing binary of named little-endian
//! float32 tensors (weights, biases and Adam moments) next to a JSON
//! manifest of the network configuration.
//!
//! Binary layout: magic `OFRSCKPT`, format version u32, tensor count u32,
//! then per tensor: name length u32, UTF-8 name, rank u32, dims (u32 each),
//! raw f32 data. All integers little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use offres_core::network::{
    AdamState, ConvLayer, LayerGrads, NetConfig, NetParams, NetState, Scalar,
};

use crate::{ensure_parent, format_err, Result};

const MAGIC: &[u8; 8] = b"OFRSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    n_res_blocks: usize,
    channels: usize,
    kernel: usize,
    global_skip: bool,
    learning_rate: f64,
    patch: usize,
    patch_stride: usize,
    batch: usize,
    seed: u64,
    adam_step: u64,
    epoch: Option<usize>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

struct TensorWriter<W: Write> {
    out: W,
    count: u32,
}

impl<W: Write> TensorWriter<W> {
    fn tensor<T: Scalar>(&mut self, name: &str, dims: &[usize], data: &[T]) -> Result<()> {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.out.write_all(&(name.len() as u32).to_le_bytes())?;
        self.out.write_all(name.as_bytes())?;
        self.out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            self.out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in data {
            self.out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        self.count += 1;
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(
    base: &Path,
    state: &NetState<T>,
    epoch: Option<usize>,
) -> Result<()> {
    let cfg = &state.params.cfg;
    let bin_path = with_suffix(base, ".ckpt");
    ensure_parent(&bin_path)?;
    let mut payload = Vec::new();
    {
        let mut w = TensorWriter { out: &mut payload, count: 0 };
        let k = cfg.kernel;
        for (li, layer) in state.params.layers.iter().enumerate() {
            let wd = [layer.c_out, layer.c_in, k, k, k];
            w.tensor(&format!("layer{li}.weight"), &wd, &layer.w)?;
            w.tensor(&format!("layer{li}.bias"), &[layer.c_out], &layer.b)?;
            w.tensor(&format!("adam.m.layer{li}.weight"), &wd, &state.adam.m[li].w)?;
            w.tensor(&format!("adam.m.layer{li}.bias"), &[layer.c_out], &state.adam.m[li].b)?;
            w.tensor(&format!("adam.v.layer{li}.weight"), &wd, &state.adam.v[li].w)?;
            w.tensor(&format!("adam.v.layer{li}.bias"), &[layer.c_out], &state.adam.v[li].b)?;
        }
        let count = w.count;
        let mut file = std::io::BufWriter::new(fs::File::create(&bin_path)?);
        file.write_all(MAGIC)?;
        file.write_all(&VERSION.to_le_bytes())?;
        file.write_all(&count.to_le_bytes())?;
        file.write_all(&payload)?;
        file.flush()?;
    }

    let manifest = CheckpointManifest {
        n_res_blocks: cfg.n_res_blocks,
        channels: cfg.channels,
        kernel: cfg.kernel,
        global_skip: cfg.global_skip,
        learning_rate: cfg.learning_rate,
        patch: cfg.patch,
        patch_stride: cfg.patch_stride,
        batch: cfg.batch,
        seed: cfg.seed,
        adam_step: state.adam.step,
        epoch,
    };
    fs::write(
        with_suffix(base, ".ckpt.json"),
        serde_json::to_string_pretty(&manifest).map_err(format_err)?,
    )?;
    Ok(())
}

struct TensorReader {
    bytes: Vec<u8>,
    pos: usize,
}

impl TensorReader {
    fn u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(format_err("truncated checkpoint"));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name_len = self.u32()? as usize;
        if self.pos + name_len > self.bytes.len() {
            return Err(format_err("truncated checkpoint name"));
        }
        let name = String::from_utf8(self.bytes[self.pos..self.pos + name_len].to_vec())
            .map_err(|_| format_err("checkpoint tensor name is not UTF-8"))?;
        self.pos += name_len;
        let rank = self.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        if self.pos + 4 * n > self.bytes.len() {
            return Err(format_err(format!("truncated checkpoint tensor '{name}'")));
        }
        let data = self.bytes[self.pos..self.pos + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += 4 * n;
        Ok((name, dims, data))
    }
}

pub fn load_checkpoint(base: &Path) -> Result<NetState<f32>> {
    let text = fs::read_to_string(with_suffix(base, ".ckpt.json"))
        .map_err(|e| format_err(format!("missing checkpoint manifest: {e}")))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| format_err(format!("bad checkpoint manifest: {e}")))?;
    let cfg = NetConfig {
        n_res_blocks: manifest.n_res_blocks,
        channels: manifest.channels,
        kernel: manifest.kernel,
        global_skip: manifest.global_skip,
        learning_rate: manifest.learning_rate,
        patch: manifest.patch,
        patch_stride: manifest.patch_stride,
        batch: manifest.batch,
        seed: manifest.seed,
    };
    cfg.validate()?;

    let mut file = fs::File::open(with_suffix(base, ".ckpt"))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(format_err("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let mut reader = TensorReader { bytes, pos: 16 };
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let (name, dims, data) = reader.tensor()?;
        tensors.insert(name, (dims, data));
    }

    let k = cfg.kernel;
    let mut dims_list: Vec<(usize, usize)> = vec![(2, cfg.channels)];
    for _ in 0..cfg.n_res_blocks {
        dims_list.push((cfg.channels, cfg.channels));
        dims_list.push((cfg.channels, cfg.channels));
    }
    dims_list.push((cfg.channels, 2));

    let mut take = |name: &str, want: &[usize]| -> Result<Vec<f32>> {
        let (dims, data) = tensors
            .remove(name)
            .ok_or_else(|| format_err(format!("checkpoint missing tensor '{name}'")))?;
        if dims != want {
            return Err(format_err(format!(
                "tensor '{name}' has shape {dims:?}, expected {want:?}"
            )));
        }
        Ok(data)
    };

    let mut layers = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (li, (c_in, c_out)) in dims_list.into_iter().enumerate() {
        let wd = vec![c_out, c_in, k, k, k];
        let bd = vec![c_out];
        layers.push(ConvLayer {
            c_in,
            c_out,
            kernel: k,
            w: take(&format!("layer{li}.weight"), &wd)?,
            b: take(&format!("layer{li}.bias"), &bd)?,
        });
        m.push(LayerGrads {
            w: take(&format!("adam.m.layer{li}.weight"), &wd)?,
            b: take(&format!("adam.m.layer{li}.bias"), &bd)?,
        });
        v.push(LayerGrads {
            w: take(&format!("adam.v.layer{li}.weight"), &wd)?,
            b: take(&format!("adam.v.layer{li}.bias"), &bd)?,
        });
    }
    Ok(NetState {
        params: NetParams { cfg, layers },
        adam: AdamState { m, v, step: manifest.adam_step },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use offres_core::network::net_init;

    #[test]
    fn checkpoint_round_trip() {
        let cfg = NetConfig {
            n_res_blocks: 2,
            channels: 6,
            kernel: 3,
            patch: 8,
            patch_stride: 8,
            ..Default::default()
        };
        let mut state = NetState::new(net_init::<f32>(&cfg).unwrap());
        state.adam.step = 17;
        state.adam.m[1].w[3] = 0.25;

        let dir = std::env::temp_dir().join("offres-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        let base = dir.join("net");
        save_checkpoint(&base, &state, Some(4)).unwrap();
        let back = load_checkpoint(&base).unwrap();
        assert_eq!(back.params, state.params);
        assert_eq!(back.adam.step, 17);
        assert_eq!(back.adam.m[1].w[3], 0.25);
    }

    #[test]
    fn truncated_checkpoint_is_detected() {
        let cfg = NetConfig {
            n_res_blocks: 1,
            channels: 4,
            kernel: 3,
            patch: 8,
            patch_stride: 8,
            ..Default::default()
        };
        let state = NetState::new(net_init::<f32>(&cfg).unwrap());
        let dir = std::env::temp_dir().join("offres-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        let base = dir.join("cut");
        save_checkpoint(&base, &state, None).unwrap();
        let path = with_suffix(&base, ".ckpt");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&base).is_err());
    }
}
