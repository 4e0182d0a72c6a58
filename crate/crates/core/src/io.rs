//! On-disk containers: the named-tensor file (`SSTF`), the single-feature
//! file (`SSFT`), the pairwise-distance file (`SSPD`), and 8-bit portable
//! pixel-map export.
//!
//! All payloads are little-endian `f32`, row-major. Tensors of either
//! scalar width can be written; values narrow to `f32` on disk, so `f32`
//! pipelines round-trip bitwise.
//!
//! Layouts:
//!
//! ```text
//! SSTF: "SSTF" | version u8 | count u32 | count x (name_len u32, name utf8)
//!       | count x (rank u8, dims u32 x rank, values f32 x prod(dims))
//! SSFT: "SSFT" | version u8 | rank u8 (1 or 3) | dims u32 x rank | values f32
//! SSPD: "SSPD" | count u32 | upper-triangle f32 x count(count-1)/2
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"SSTF";
pub const FEATURE_MAGIC: &[u8; 4] = b"SSFT";
pub const PAIRWISE_MAGIC: &[u8; 4] = b"SSPD";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("{format}: unsupported version {version}")]
    UnsupportedVersion { format: &'static str, version: u8 },
    #[error("unexpected end of file reading {what}: expected {expected} bytes, found {found}")]
    UnexpectedEof {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{name}: element count mismatch: expected {expected}, found {found}")]
    ElementCount {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate array name {0:?}")]
    DuplicateName(String),
    #[error("array name is not valid UTF-8")]
    BadName,
    #[error("unsupported tensor rank {0}")]
    UnsupportedRank(u8),
    #[error("feature rank must be 1 or 3, got {0}")]
    BadFeatureRank(u8),
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("{count} trailing bytes after payload")]
    TrailingBytes { count: usize },
    #[error("pairwise file: count {n} needs {expected} distances, found {found}")]
    PairCount {
        n: u32,
        expected: usize,
        found: usize,
    },
    #[error("image export supports 1 or 3 channels, got {0}")]
    UnsupportedChannels(usize),
    #[error("image contains non-finite values")]
    NonFiniteImage,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::UnexpectedEof {
                what: what.to_string(),
                expected: n,
                found: self.buf.len() - self.pos,
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn magic(&mut self, expected: &'static [u8; 4], name: &'static str) -> Result<(), FormatError> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(FormatError::BadMagic {
                expected: name,
                found: got.to_vec(),
            });
        }
        Ok(())
    }
}

fn write_f32_values<T: Scalar, W: Write>(out: &mut W, values: &[T]) -> Result<(), FormatError> {
    for v in values {
        let bits = v.to_f32().unwrap_or(f32::NAN).to_le_bytes();
        out.write_all(&bits)?;
    }
    Ok(())
}

fn parse_f32_values<T: Scalar>(
    cursor: &mut Cursor<'_>,
    count: usize,
    what: &str,
) -> Result<Vec<T>, FormatError> {
    let bytes = cursor.take(count * 4, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap())
        .collect())
}

fn dims_product(dims: &[usize], name: &str) -> Result<usize, FormatError> {
    let mut product = 1usize;
    for &d in dims {
        product = product.checked_mul(d).ok_or_else(|| FormatError::ElementCount {
            name: name.to_string(),
            expected: usize::MAX,
            found: 0,
        })?;
    }
    Ok(product)
}

/// Writes a named-tensor container. Names must be unique.
pub fn write_tensor_file<T: Scalar, P: AsRef<Path>>(
    path: P,
    arrays: &[(String, Tensor<T>)],
) -> Result<(), FormatError> {
    for (i, (name, _)) in arrays.iter().enumerate() {
        if arrays[..i].iter().any(|(other, _)| other == name) {
            return Err(FormatError::DuplicateName(name.clone()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, _) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for (_, tensor) in arrays {
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        write_f32_values(&mut out, tensor.data())?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a named-tensor container back, in file order.
pub fn read_tensor_file<T: Scalar, P: AsRef<Path>>(
    path: P,
) -> Result<Vec<(String, Tensor<T>)>, FormatError> {
    let buf = fs::read(path)?;
    let mut cursor = Cursor::new(&buf);
    cursor.magic(TENSOR_MAGIC, "SSTF")?;
    let version = cursor.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            format: "SSTF",
            version,
        });
    }
    let count = cursor.u32("array count")? as usize;
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cursor.u32("name length")? as usize;
        let raw = cursor.take(len, "name")?;
        let name = std::str::from_utf8(raw).map_err(|_| FormatError::BadName)?;
        if names.iter().any(|n| n == name) {
            return Err(FormatError::DuplicateName(name.to_string()));
        }
        names.push(name.to_string());
    }
    let mut arrays = Vec::with_capacity(count);
    for name in names {
        let rank = cursor.u8("rank")?;
        if rank == 0 || rank > 4 {
            return Err(FormatError::UnsupportedRank(rank));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(cursor.u32("dims")? as usize);
        }
        let expected = dims_product(&dims, &name)?;
        let available = cursor.remaining() / 4;
        if available < expected {
            return Err(FormatError::ElementCount {
                name,
                expected,
                found: available,
            });
        }
        let values = parse_f32_values::<T>(&mut cursor, expected, "tensor payload")?;
        arrays.push((name, Tensor::from_vec(&dims, values).unwrap()));
    }
    if cursor.remaining() > 0 {
        return Err(FormatError::TrailingBytes {
            count: cursor.remaining(),
        });
    }
    Ok(arrays)
}

/// Writes a single feature array, rank 1 (flat) or rank 3 (`c, h, w`).
pub fn write_feature_file<T: Scalar, P: AsRef<Path>>(
    path: P,
    tensor: &Tensor<T>,
) -> Result<(), FormatError> {
    if tensor.rank() != 1 && tensor.rank() != 3 {
        return Err(FormatError::BadFeatureRank(tensor.rank() as u8));
    }
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(tensor.rank() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    write_f32_values(&mut out, tensor.data())?;
    fs::write(path, out)?;
    Ok(())
}

/// Reads a feature array, validating header, element count, and that every
/// value is finite.
pub fn read_feature_file<T: Scalar, P: AsRef<Path>>(path: P) -> Result<Tensor<T>, FormatError> {
    let buf = fs::read(path)?;
    let mut cursor = Cursor::new(&buf);
    cursor.magic(FEATURE_MAGIC, "SSFT")?;
    let version = cursor.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            format: "SSFT",
            version,
        });
    }
    let rank = cursor.u8("rank")?;
    if rank != 1 && rank != 3 {
        return Err(FormatError::BadFeatureRank(rank));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(cursor.u32("dims")? as usize);
    }
    let expected = dims_product(&dims, "feature")?;
    let available = cursor.remaining() / 4;
    if available != expected || !cursor.remaining().is_multiple_of(4) {
        return Err(FormatError::ElementCount {
            name: "feature payload".to_string(),
            expected,
            found: available,
        });
    }
    let values = parse_f32_values::<T>(&mut cursor, expected, "feature payload")?;
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
    }
    Ok(Tensor::from_vec(&dims, values).unwrap())
}

/// Symmetric pairwise distances over `n` items, stored as the strict upper
/// triangle in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseDistances<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> PairwiseDistances<T> {
    pub fn new(n: usize, values: Vec<T>) -> Result<Self, FormatError> {
        let expected = n * n.saturating_sub(1) / 2;
        if values.len() != expected {
            return Err(FormatError::PairCount {
                n: n as u32,
                expected,
                found: values.len(),
            });
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Distance between items `i` and `j`; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> T {
        assert!(i < self.n && j < self.n);
        if i == j {
            return T::zero();
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // rows of the strict upper triangle shrink by one each step
        let offset = a * self.n - a * (a + 1) / 2 + (b - a - 1);
        self.values[offset]
    }
}

pub fn write_pairwise_file<T: Scalar, P: AsRef<Path>>(
    path: P,
    distances: &PairwiseDistances<T>,
) -> Result<(), FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(PAIRWISE_MAGIC);
    out.extend_from_slice(&(distances.n as u32).to_le_bytes());
    write_f32_values(&mut out, &distances.values)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pairwise_file<T: Scalar, P: AsRef<Path>>(
    path: P,
) -> Result<PairwiseDistances<T>, FormatError> {
    let buf = fs::read(path)?;
    let mut cursor = Cursor::new(&buf);
    cursor.magic(PAIRWISE_MAGIC, "SSPD")?;
    let n = cursor.u32("count")? as usize;
    let expected = n * n.saturating_sub(1) / 2;
    let available = cursor.remaining() / 4;
    if available != expected || !cursor.remaining().is_multiple_of(4) {
        return Err(FormatError::PairCount {
            n: n as u32,
            expected,
            found: available,
        });
    }
    let values = parse_f32_values::<T>(&mut cursor, expected, "distances")?;
    PairwiseDistances::new(n, values)
}

/// Exports an `(h, w, c)` array as a binary portable pixel-map: `P6` for 3
/// channels, `P5` for 1. Values clamp to `[0, 1]` and quantize by
/// `round(v * 255)`, rounding halves up.
pub fn export_image<T: Scalar, P: AsRef<Path>>(
    tensor: &Tensor<T>,
    path: P,
) -> Result<(), FormatError> {
    if tensor.rank() != 3 {
        return Err(FormatError::UnsupportedChannels(0));
    }
    let (h, w, c) = (tensor.shape()[0], tensor.shape()[1], tensor.shape()[2]);
    let format = match c {
        1 => "P5",
        3 => "P6",
        other => return Err(FormatError::UnsupportedChannels(other)),
    };
    if !tensor.all_finite() {
        return Err(FormatError::NonFiniteImage);
    }
    let file = fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write!(out, "{format}\n{w} {h}\n255\n")?;
    let zero = T::zero();
    let one = T::one();
    let max = T::from(255).unwrap();
    let bytes: Vec<u8> = tensor
        .data()
        .iter()
        .map(|&v| (v.max(zero).min(one) * max).round().to_u8().unwrap_or(255))
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}
