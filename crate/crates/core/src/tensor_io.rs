//! NPY (format versions 1 and 2) persistence for every array exchanged between
//! pipeline stages.
//!
//! Supported element types are little-endian `float32` (`<f4`), `uint8`
//! (`|u1`) and little-endian `int32` (`<i4`), always in C (row-major) order.
//! Files whose payload is shorter or longer than the header announces are
//! rejected.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, Dimension, IxDyn};
use npyz::{DType, Endianness, NpyFile, Order, TypeChar, TypeStr, WriteOptions, WriterBuilder};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Float32,
    Uint8,
    Int32,
}

impl Dtype {
    /// NumPy type string written into headers.
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::Float32 => "<f4",
            Dtype::Uint8 => "|u1",
            Dtype::Int32 => "<i4",
        }
    }
}

/// A dense array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    U8(ArrayD<u8>),
    I32(ArrayD<i32>),
}

impl Tensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor::F32(_) => Dtype::Float32,
            Tensor::U8(_) => Dtype::Uint8,
            Tensor::I32(_) => Dtype::Int32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::U8(a) => a.shape(),
            Tensor::I32(a) => a.shape(),
        }
    }

    pub fn into_f32(self) -> Result<ArrayD<f32>> {
        match self {
            Tensor::F32(a) => Ok(a),
            other => Err(Error::UnsupportedType(format!(
                "{} where <f4 was expected",
                other.dtype().descr()
            ))),
        }
    }

    pub fn into_u8(self) -> Result<ArrayD<u8>> {
        match self {
            Tensor::U8(a) => Ok(a),
            other => Err(Error::UnsupportedType(format!(
                "{} where |u1 was expected",
                other.dtype().descr()
            ))),
        }
    }

    pub fn into_i32(self) -> Result<ArrayD<i32>> {
        match self {
            Tensor::I32(a) => Ok(a),
            other => Err(Error::UnsupportedType(format!(
                "{} where <i4 was expected",
                other.dtype().descr()
            ))),
        }
    }
}

impl<D: Dimension> From<ndarray::Array<f32, D>> for Tensor {
    fn from(a: ndarray::Array<f32, D>) -> Self {
        Tensor::F32(a.into_dyn())
    }
}

impl<D: Dimension> From<ndarray::Array<u8, D>> for Tensor {
    fn from(a: ndarray::Array<u8, D>) -> Self {
        Tensor::U8(a.into_dyn())
    }
}

impl<D: Dimension> From<ndarray::Array<i32, D>> for Tensor {
    fn from(a: ndarray::Array<i32, D>) -> Self {
        Tensor::I32(a.into_dyn())
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensor)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses an in-memory NPY container.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = Cursor::new(bytes);
    let npy = NpyFile::new(&mut cursor).map_err(|e| Error::Format(e.to_string()))?;
    if npy.order() != Order::C {
        return Err(Error::UnsupportedType("Fortran-ordered array".into()));
    }
    let dtype = classify(&npy.dtype())?;
    let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
    let expected = shape.iter().product::<usize>();
    let item = match dtype {
        Dtype::Uint8 => 1,
        Dtype::Float32 | Dtype::Int32 => 4,
    };

    let header_len = cursor.position() as usize;
    let payload = bytes.len() - header_len;
    if payload != expected * item {
        return Err(Error::Format(format!(
            "payload holds {payload} bytes but header shape {shape:?} requires {}",
            expected * item
        )));
    }
    let npy = NpyFile::new(Cursor::new(bytes)).map_err(|e| Error::Format(e.to_string()))?;
    let dim = IxDyn(&shape);
    let fmt = |e: std::io::Error| Error::Format(e.to_string());
    let tensor = match dtype {
        Dtype::Float32 => Tensor::F32(to_array(dim, npy.into_vec::<f32>().map_err(fmt)?)?),
        Dtype::Uint8 => Tensor::U8(to_array(dim, npy.into_vec::<u8>().map_err(fmt)?)?),
        Dtype::Int32 => Tensor::I32(to_array(dim, npy.into_vec::<i32>().map_err(fmt)?)?),
    };
    Ok(tensor)
}

/// Serializes a tensor into an NPY container (version 1 whenever the header fits).
pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let descr: TypeStr = tensor.dtype().descr().parse().expect("static type string");
    let shape: Vec<u64> = tensor.shape().iter().map(|&d| d as u64).collect();
    let io = |e: std::io::Error| Error::Format(e.to_string());
    match tensor {
        Tensor::F32(a) => {
            let mut w = WriteOptions::<f32>::new()
                .dtype(DType::Plain(descr))
                .shape(&shape)
                .writer(&mut buf)
                .begin_nd()
                .map_err(io)?;
            w.extend(a.iter().copied()).map_err(io)?;
            w.finish().map_err(io)?;
        }
        Tensor::U8(a) => {
            let mut w = WriteOptions::<u8>::new()
                .dtype(DType::Plain(descr))
                .shape(&shape)
                .writer(&mut buf)
                .begin_nd()
                .map_err(io)?;
            w.extend(a.iter().copied()).map_err(io)?;
            w.finish().map_err(io)?;
        }
        Tensor::I32(a) => {
            let mut w = WriteOptions::<i32>::new()
                .dtype(DType::Plain(descr))
                .shape(&shape)
                .writer(&mut buf)
                .begin_nd()
                .map_err(io)?;
            w.extend(a.iter().copied()).map_err(io)?;
            w.finish().map_err(io)?;
        }
    }
    Ok(buf)
}

fn classify(dtype: &DType) -> Result<Dtype> {
    let DType::Plain(ts) = dtype else {
        return Err(Error::UnsupportedType(dtype.descr()));
    };
    let little = matches!(ts.endianness(), Endianness::Little | Endianness::Irrelevant);
    match (ts.type_char(), ts.size_field(), little) {
        (TypeChar::Float, 4, true) => Ok(Dtype::Float32),
        (TypeChar::Uint, 1, _) => Ok(Dtype::Uint8),
        (TypeChar::Int, 4, true) => Ok(Dtype::Int32),
        _ => Err(Error::UnsupportedType(ts.to_string())),
    }
}

fn to_array<T>(dim: IxDyn, data: Vec<T>) -> Result<ArrayD<T>> {
    ArrayD::from_shape_vec(dim, data).map_err(|e| Error::Format(e.to_string()))
}

fn expect_rank<T>(a: ArrayD<T>, rank: usize, what: &str) -> Result<ArrayD<T>> {
    if a.ndim() != rank {
        return Err(Error::shape(format!(
            "{what}: expected a rank-{rank} array, got shape {:?}",
            a.shape()
        )));
    }
    Ok(a)
}

pub fn read_f32_2d(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let a = expect_rank(read_tensor(path)?.into_f32()?, 2, &path.display().to_string())?;
    Ok(a.into_dimensionality().expect("rank checked"))
}

pub fn read_f32_3d(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let a = expect_rank(read_tensor(path)?.into_f32()?, 3, &path.display().to_string())?;
    Ok(a.into_dimensionality().expect("rank checked"))
}

pub fn read_u8_2d(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let a = expect_rank(read_tensor(path)?.into_u8()?, 2, &path.display().to_string())?;
    Ok(a.into_dimensionality().expect("rank checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, array, Array4};
    use proptest::prelude::*;

    #[test]
    fn zeros_round_trip() {
        let a = Array2::<f32>::zeros((2, 2));
        let t = decode(&encode(&a.clone().into()).unwrap()).unwrap();
        assert_eq!(t, Tensor::F32(a.into_dyn()));
    }

    #[test]
    fn single_byte_payload_follows_header() {
        let bytes = encode(&array![[5u8]].into()).unwrap();
        assert_eq!(&bytes[..6], b"\x93NUMPY");
        assert_eq!(bytes[6], 1, "version 1 header");
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!(bytes.len(), 10 + header_len + 1);
        assert_eq!(*bytes.last().unwrap(), 5);
        assert_eq!((10 + header_len) % 64, 0);
    }

    #[test]
    fn scalar_round_trip() {
        let t: Tensor = arr0(3.5f32).into();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[] as &[usize]);
        assert_eq!(back, t);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode(&Array2::<f32>::ones((3, 4)).into()).unwrap();
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = encode(&Array2::<i32>::ones((2, 2)).into()).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_header_is_format_error() {
        assert!(matches!(decode(b"not an npy file"), Err(Error::Format(_))));
        let mut bytes = encode(&array![1u8, 2].into()).unwrap();
        bytes[12] = b'#';
        assert!(decode(&bytes).is_err());
    }

    fn npy_with_descr(descr: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': (2,), }}");
        while !(10 + header.len() + 1).is_multiple_of(64) {
            header.push(' ');
        }
        header.push('\n');
        let mut out = b"\x93NUMPY\x01\x00".to_vec();
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn unsupported_dtypes_are_named() {
        let f8 = npy_with_descr("<f8", &[0; 16]);
        assert!(matches!(decode(&f8), Err(Error::UnsupportedType(_))));
        let be = npy_with_descr(">f4", &[0; 8]);
        assert!(matches!(decode(&be), Err(Error::UnsupportedType(_))));
        let ok = npy_with_descr("<i4", &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(decode(&ok).unwrap(), Tensor::I32(array![1, 2].into_dyn()));
    }

    #[test]
    fn version_two_header_is_read() {
        let mut header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 2), }".to_string();
        while !(12 + header.len() + 1).is_multiple_of(64) {
            header.push(' ');
        }
        header.push('\n');
        let mut bytes = b"\x93NUMPY\x02\x00".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), Tensor::F32(array![[1.5f32, -2.0]].into_dyn()));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.npy");
        let a = Array3::from_shape_fn((3, 4, 2), |(i, j, k)| (i * 8 + j * 2 + k) as f32 * 0.1);
        write_tensor(&path, &a.clone().into()).unwrap();
        assert_eq!(read_f32_3d(&path).unwrap(), a);
        assert!(matches!(
            read_tensor(dir.path().join("nope.npy")),
            Err(Error::Io { .. })
        ));
        assert!(matches!(
            write_tensor(dir.path().join("missing/dir/a.npy"), &a.into()),
            Err(Error::Io { .. })
        ));
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..5, 0..=4)
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(shape in shape_strategy(), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            // arbitrary bit patterns, including NaN payloads and signed zeros
            let data: Vec<f32> = (0..n as u32)
                .map(|k| f32::from_bits(k.wrapping_mul(2_654_435_761).wrapping_add(seed)))
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap();
            let back = decode(&encode(&Tensor::F32(a.clone())).unwrap()).unwrap().into_f32().unwrap();
            prop_assert_eq!(back.shape(), a.shape());
            for (x, y) in back.iter().zip(a.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn integer_round_trips(shape in shape_strategy(), seed in any::<i32>()) {
            let n: usize = shape.iter().product();
            let ints: Vec<i32> = (0..n as i32).map(|k| k.wrapping_mul(seed)).collect();
            let bytes: Vec<u8> = ints.iter().map(|&v| v as u8).collect();
            let ai = Tensor::I32(ArrayD::from_shape_vec(IxDyn(&shape), ints).unwrap());
            let au = Tensor::U8(ArrayD::from_shape_vec(IxDyn(&shape), bytes).unwrap());
            prop_assert_eq!(&decode(&encode(&ai).unwrap()).unwrap(), &ai);
            prop_assert_eq!(&decode(&encode(&au).unwrap()).unwrap(), &au);
        }
    }

    #[test]
    fn rank_four_round_trip() {
        let a = Array4::from_shape_fn((2, 1, 3, 2), |(a, b, c, d)| (a + b + c + d) as u8);
        assert_eq!(
            decode(&encode(&a.clone().into()).unwrap()).unwrap(),
            Tensor::U8(a.into_dyn())
        );
    }
}
