//! Single-tensor binary container and the on-disk layer bundle.
//!
//! Layout of a tensor file:
//!
//! ```text
//! bytes 0..6    magic  \x93 C P R U N
//! byte  6       format version (0x01)
//! bytes 7..9    header length H, little-endian u16
//! bytes 9..9+H  ASCII "dtype=<f32|f64>;shape=<d0,d1,...>;" space padded
//! rest          little-endian row-major payload
//! ```
//!
//! The header is padded so the payload starts on a 16-byte boundary.
//! A layer bundle is a directory with `weights` ([d, n]), `bias` ([n]) and a
//! JSON `meta` manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub const MAGIC: &[u8; 6] = b"\x93CPRUN";
pub const FORMAT_VERSION: u8 = 1;
const PREFIX_LEN: usize = 9;
const ALIGN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("shape mismatch in {path}: header wants {expected} bytes of payload, found {actual}")]
    ShapeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported dtype `{dtype}` in {path}")]
    UnsupportedDtype { path: PathBuf, dtype: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl TensorIoError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedHeader { .. } => "MalformedHeader",
            Self::ShapeMismatch { .. } => "ShapeMismatch",
            Self::UnsupportedDtype { .. } => "UnsupportedDtype",
            Self::MissingFile(_) => "MissingFile",
            Self::DimensionMismatch(_) => "DimensionMismatch",
            Self::InvalidTensor(_) => "InvalidTensor",
            Self::MalformedManifest { .. } => "MalformedManifest",
            Self::IoFailure { .. } => "IoFailure",
        }
    }
}

type Result<T> = std::result::Result<T, TensorIoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Element buffer of a tensor, kept in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let want = element_count(&shape)
            .ok_or_else(|| TensorIoError::InvalidTensor(format!("shape {shape:?} overflows")))?;
        if want != data.len() {
            return Err(TensorIoError::InvalidTensor(format!(
                "shape {shape:?} needs {want} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: TensorData::F64(m.as_slice().to_vec()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Interprets a rank-2 tensor as a matrix, widening to f64.
    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape[..] {
            [r, c] => Ok(Matrix::from_vec(r, c, self.data.to_f64())
                .expect("invariant: shape product equals buffer length")),
            _ => Err(TensorIoError::DimensionMismatch(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Interprets a rank-1 tensor as a vector, widening to f64.
    pub fn to_vector(&self) -> Result<Vec<f64>> {
        if self.shape.len() != 1 {
            return Err(TensorIoError::DimensionMismatch(format!(
                "expected a rank-1 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data.to_f64())
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// Serialises a tensor into the container byte layout.
pub fn encode_tensor(t: &TensorFile) -> Vec<u8> {
    let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
    let mut header = format!("dtype={};shape={};", t.dtype().tag(), dims.join(","));
    let unpadded = PREFIX_LEN + header.len();
    let padded = unpadded.div_ceil(ALIGN) * ALIGN;
    header.extend(std::iter::repeat_n(' ', padded - unpadded));
    let header_len = u16::try_from(header.len()).expect("header longer than u16::MAX");

    let mut out = Vec::with_capacity(padded + t.data.len() * t.dtype().size());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &t.data {
        TensorData::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Parses container bytes. `path` is only used for error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<TensorFile> {
    let malformed = |reason: &str| TensorIoError::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < PREFIX_LEN || &bytes[..6] != MAGIC {
        return Err(malformed("bad magic"));
    }
    if bytes[6] != FORMAT_VERSION {
        return Err(malformed(&format!("unknown format version {}", bytes[6])));
    }
    let header_len = usize::from(u16::from_le_bytes([bytes[7], bytes[8]]));
    let header_end = PREFIX_LEN + header_len;
    if bytes.len() < header_end {
        return Err(malformed("header runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[PREFIX_LEN..header_end])
        .ok()
        .filter(|h| h.is_ascii())
        .ok_or_else(|| malformed("header is not ASCII"))?;

    let mut dtype = None;
    let mut shape = None;
    for field in header
        .trim_end_matches(' ')
        .split(';')
        .filter(|f| !f.is_empty())
    {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(&format!("field `{field}` has no `=`")))?;
        match key {
            "dtype" => {
                dtype = Some(match value {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    other => {
                        return Err(TensorIoError::UnsupportedDtype {
                            path: path.to_path_buf(),
                            dtype: other.to_string(),
                        })
                    }
                })
            }
            "shape" => {
                let dims = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| malformed(&format!("bad shape `{value}`")))?
                };
                shape = Some(dims);
            }
            other => return Err(malformed(&format!("unknown header key `{other}`"))),
        }
    }
    let dtype = dtype.ok_or_else(|| malformed("missing dtype"))?;
    let shape = shape.ok_or_else(|| malformed("missing shape"))?;

    let payload = &bytes[header_end..];
    let expected = element_count(&shape)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| malformed("shape overflows"))?;
    if payload.len() != expected {
        return Err(TensorIoError::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(TensorFile { shape, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
        _ => TensorIoError::IoFailure {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    decode_tensor(&bytes, path)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorFile) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| TensorIoError::IoFailure {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"),
        })?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        })
    }
}

/// Contents of a layer's `meta` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerMeta {
    pub name: String,
    pub activation: Activation,
    pub d: usize,
    pub n: usize,
}

/// One dense layer `y = act(Wᵀx + b)` with `W` of shape [d, n]; neurons are
/// the columns of `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBundle {
    pub name: String,
    pub activation: Activation,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerBundle {
    pub fn new(
        name: impl Into<String>,
        activation: Activation,
        weights: Matrix,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.cols() != bias.len() {
            return Err(TensorIoError::DimensionMismatch(format!(
                "weights have {} columns but bias has {} entries",
                weights.cols(),
                bias.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            activation,
            weights,
            bias,
        })
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.weights.rows()
    }

    /// Neuron count.
    pub fn n(&self) -> usize {
        self.weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn meta(&self) -> LayerMeta {
        LayerMeta {
            name: self.name.clone(),
            activation: self.activation,
            d: self.d(),
            n: self.n(),
        }
    }
}

pub const WEIGHTS_FILE: &str = "weights";
pub const BIAS_FILE: &str = "bias";
pub const META_FILE: &str = "meta";

pub fn read_layer(dir: impl AsRef<Path>) -> Result<LayerBundle> {
    let dir = dir.as_ref();
    for file in [WEIGHTS_FILE, BIAS_FILE, META_FILE] {
        if !dir.join(file).is_file() {
            return Err(TensorIoError::MissingFile(dir.join(file)));
        }
    }
    let weights = read_tensor(dir.join(WEIGHTS_FILE))?.to_matrix()?;
    let bias = read_tensor(dir.join(BIAS_FILE))?.to_vector()?;
    let meta_path = dir.join(META_FILE);
    let meta: LayerMeta = read_json(&meta_path)?;
    if weights.cols() != bias.len() {
        return Err(TensorIoError::DimensionMismatch(format!(
            "weights [{}, {}] vs bias [{}]",
            weights.rows(),
            weights.cols(),
            bias.len()
        )));
    }
    if (meta.d, meta.n) != weights.shape() {
        return Err(TensorIoError::DimensionMismatch(format!(
            "meta says d={} n={}, weights are [{}, {}]",
            meta.d,
            meta.n,
            weights.rows(),
            weights.cols()
        )));
    }
    LayerBundle::new(meta.name, meta.activation, weights, bias)
}

pub fn write_layer(dir: impl AsRef<Path>, layer: &LayerBundle) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    write_tensor(
        dir.join(WEIGHTS_FILE),
        &TensorFile::from_matrix(&layer.weights),
    )?;
    write_tensor(
        dir.join(BIAS_FILE),
        &TensorFile::from_f64(vec![layer.bias.len()], layer.bias.clone())?,
    )?;
    write_json(&dir.join(META_FILE), &layer.meta())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => TensorIoError::MissingFile(path.to_path_buf()),
        _ => TensorIoError::IoFailure {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    serde_json::from_str(&text).map_err(|e| TensorIoError::MalformedManifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serialises");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
