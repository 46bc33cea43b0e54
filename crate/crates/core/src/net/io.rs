//! Binary weights file.
//!
//! Layout: 8-byte magic, u32 format version, u64 config-JSON length + the
//! JSON bytes, u32 tensor count, then per tensor: u32 name length + name,
//! u32 ndim, u64 dims, and little-endian f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelParams, NetError, NetworkConfig};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"TGWEIGHT";
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> NetError + '_ {
    move |source| NetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(WEIGHTS_MAGIC).map_err(io_err(path))?;
    w.write_all(&WEIGHTS_FORMAT_VERSION.to_le_bytes())
        .map_err(io_err(path))?;
    let config_json = serde_json::to_vec(&params.config)
        .map_err(|e| NetError::BadWeightsFile(e.to_string()))?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())
        .map_err(io_err(path))?;
    w.write_all(&config_json).map_err(io_err(path))?;

    let named = params.named_tensors();
    w.write_all(&(named.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    for (name, tensor) in named {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())
            .map_err(io_err(path))?;
        w.write_all(name_bytes).map_err(io_err(path))?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())
            .map_err(io_err(path))?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err(path))?;
        }
        for &v in tensor.iter() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, NetError> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| NetError::BadWeightsFile("truncated file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_params(path: &Path) -> Result<ModelParams, NetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let magic = r.bytes(8)?;
    if magic != WEIGHTS_MAGIC {
        return Err(NetError::BadWeightsFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(NetError::BadWeightsFile(format!(
            "unsupported format version {version}"
        )));
    }
    let json_len = r.u64()? as usize;
    let config: NetworkConfig = serde_json::from_slice(&r.bytes(json_len)?)
        .map_err(|e| NetError::BadWeightsFile(format!("bad config block: {e}")))?;

    let mut params = ModelParams::zeros(&config)?;
    let n_tensors = r.u32()? as usize;
    let expected = params.named_tensors();
    if n_tensors != expected.len() {
        return Err(NetError::BadWeightsFile(format!(
            "expected {} tensors, file has {n_tensors}",
            expected.len()
        )));
    }
    let expected_names: Vec<String> = expected.iter().map(|(n, _)| n.clone()).collect();
    let expected_shapes: Vec<Vec<usize>> =
        expected.iter().map(|(_, t)| t.shape().to_vec()).collect();

    for i in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| NetError::BadWeightsFile("non-utf8 tensor name".into()))?;
        if name != expected_names[i] {
            return Err(NetError::BadWeightsFile(format!(
                "tensor {i}: expected `{}`, found `{name}`",
                expected_names[i]
            )));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != expected_shapes[i] {
            return Err(NetError::BadWeightsFile(format!(
                "tensor `{name}`: shape {shape:?} does not match config {:?}",
                expected_shapes[i]
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        *params.tensors_mut()[i] = Tensor::from_vec(&shape, data);
    }
    if !params.all_finite() {
        return Err(NetError::BadWeightsFile("non-finite parameter".into()));
    }
    Ok(params)
}
