//! `UADT` binary tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "UADT" | version u8 = 1 | dtype u8 | ndim u8 | ndim × u64 dims | payload
//! ```
//!
//! dtype 1 = f32, 2 = f64, 3 = u8. The payload is row-major and must be
//! exactly `product(dims) × sizeof(dtype)` bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"UADT";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated {section}: expected {expected} bytes, found {found}")]
    Truncated { section: &'static str, expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("dims {dims:?} do not fit in memory")]
    Overflow { dims: Vec<u64> },
    #[error("expected {expected} tensor, found {found}")]
    WrongDtype { expected: &'static str, found: &'static str },
    #[error("expected {expected} elements for dims {dims:?}, found {found}")]
    ShapeMismatch { dims: Vec<u64>, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "float32",
            TensorData::F64(_) => "float64",
            TensorData::U8(_) => "uint8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array in one of the three supported element types.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn element_count(dims: &[u64]) -> Result<usize, TensorError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .ok_or_else(|| TensorError::Overflow { dims: dims.to_vec() })
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self, TensorError> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch { dims, expected, found: data.len() });
        }
        Ok(Tensor { dims, data })
    }

    pub fn f32(dims: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::F32(data))
    }

    pub fn f64(dims: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::F64(data))
    }

    pub fn u8(dims: &[usize], data: Vec<u8>) -> Result<Self, TensorError> {
        Self::new(dims.iter().map(|&d| d as u64).collect(), TensorData::U8(data))
    }

    pub fn scalar_f64(v: f64) -> Self {
        Tensor { dims: vec![], data: TensorData::F64(vec![v]) }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    /// Elements widened to f64 (u8 is taken as-is, not rescaled).
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Elements narrowed or widened to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8], TensorError> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(TensorError::WrongDtype { expected: "uint8", found: other.name() }),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 8 * self.dims.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses one tensor from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), TensorError> {
        if bytes.len() < 7 {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(TensorError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(TensorError::Truncated { section: "header", expected: 7, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(TensorError::UnsupportedVersion(bytes[4]));
        }
        let code = bytes[5];
        let elem = match code {
            1 => 4,
            2 => 8,
            3 => 1,
            c => return Err(TensorError::UnsupportedDtype(c)),
        };
        let ndim = bytes[6] as usize;
        let dims_end = 7 + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(TensorError::Truncated { section: "dims", expected: dims_end, found: bytes.len() });
        }
        let dims: Vec<u64> = bytes[7..dims_end].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        let count = element_count(&dims)?;
        let payload_len = count.checked_mul(elem).ok_or_else(|| TensorError::Overflow { dims: dims.clone() })?;
        let end = dims_end + payload_len;
        if bytes.len() < end {
            return Err(TensorError::Truncated { section: "payload", expected: payload_len, found: bytes.len() - dims_end });
        }
        let p = &bytes[dims_end..end];
        let data = match code {
            1 => TensorData::F32(p.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => TensorData::F64(p.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => TensorData::U8(p.to_vec()),
        };
        Ok((Tensor { dims, data }, end))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let (t, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(TensorError::TrailingBytes(bytes.len() - used));
        }
        Ok(t)
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let wrap = |source| crate::Error::File { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(wrap)?;
        f.write_all(bytes).map_err(wrap)?;
        f.sync_all().map_err(wrap)?;
    }
    fs::rename(&tmp, path).map_err(wrap)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> crate::Result<()> {
    write_atomic(path, &tensor.encode())
}

pub fn read_tensor(path: &Path) -> crate::Result<Tensor> {
    let bytes = fs::read(path).map_err(|source| crate::Error::File { path: path.to_path_buf(), source })?;
    Ok(Tensor::decode(&bytes)?)
}
