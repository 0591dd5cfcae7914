//! Binary checkpoints for encoders, heads and memory banks.
//!
//! All integers are little-endian `u64` unless noted; all reals are
//! little-endian IEEE-754 `f64`, whatever the in-memory scalar type.
//!
//! Model file:
//!
//! ```text
//! magic      4 bytes  "KDCK"
//! version    u32      1
//! n_widths   u64      then n_widths x u64 widths
//! acts       (n_widths - 2) x u8 activation codes (0 = relu, 1 = tanh)
//! seed       u64
//! layers     per layer: weight (in x out, row-major) then bias (out)
//! has_head   u8       0 or 1
//! head       classes u64, dim u64, scale f64, margin f64, weights (classes x dim, row-major)
//! ```
//!
//! Momentum buffers are not stored; a loaded model resumes with zero velocity.
//!
//! Bank file: magic `"KDBK"`, version `u32`, capacity, dim, fill, then `fill`
//! entries of `tag u64` followed by `dim` reals, oldest first.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{KdError, Result};
use crate::memory_bank::MemoryBank;
use crate::scalar::Scalar;
use crate::toy_models::{Activation, DenseNetSpec, FrHeadParams, Layer, MarginHead, NetworkState};
use crate::trainer::Model;

pub const MODEL_MAGIC: [u8; 4] = *b"KDCK";
pub const BANK_MAGIC: [u8; 4] = *b"KDBK";
pub const FORMAT_VERSION: u32 = 1;

// Guards against absurd allocations from corrupt headers.
const MAX_DIM: u64 = 1 << 24;

fn io_err(e: std::io::Error) -> KdError {
    KdError::Checkpoint(e.to_string())
}

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(io_err)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn reals<'a, T: Scalar>(&mut self, values: impl IntoIterator<Item = &'a T>) -> Result<()> {
        for v in values {
            self.f64(v.as_f64())?;
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| KdError::Checkpoint(format!("truncated checkpoint: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v == 0 || v > MAX_DIM {
            return Err(KdError::Checkpoint(format!("implausible {what}: {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn reals<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.f64().map(T::lit)).collect()
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Array2<T>> {
        let data = self.reals(rows * cols)?;
        Array2::from_shape_vec((rows, cols), data).map_err(|e| KdError::Checkpoint(e.to_string()))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.array()?;
        if found != magic {
            return Err(KdError::Checkpoint(format!("bad magic {found:?}")));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(KdError::Checkpoint(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut rest = Vec::new();
        self.inner.read_to_end(&mut rest).map_err(io_err)?;
        if rest.is_empty() {
            Ok(())
        } else {
            Err(KdError::Checkpoint(format!("{} trailing bytes", rest.len())))
        }
    }
}

pub fn write_model<T: Scalar, W: Write>(out: W, encoder: &NetworkState<T>, head: Option<&MarginHead<T>>) -> Result<()> {
    let mut w = Writer { inner: out };
    w.bytes(&MODEL_MAGIC)?;
    w.bytes(&FORMAT_VERSION.to_le_bytes())?;
    let spec = encoder.spec();
    w.u64(spec.widths.len() as u64)?;
    for &width in &spec.widths {
        w.u64(width as u64)?;
    }
    let codes: Vec<u8> = spec.activations.iter().map(|a| a.code()).collect();
    w.bytes(&codes)?;
    w.u64(spec.seed)?;
    for layer in encoder.layers() {
        w.reals(layer.weight.iter())?;
        w.reals(layer.bias.iter())?;
    }
    match head {
        None => w.bytes(&[0]),
        Some(h) => {
            w.bytes(&[1])?;
            w.u64(h.weights.nrows() as u64)?;
            w.u64(h.weights.ncols() as u64)?;
            w.f64(h.params.scale)?;
            w.f64(h.params.margin)?;
            w.reals(h.weights.iter())
        }
    }?;
    w.inner.flush().map_err(io_err)
}

pub fn read_model<T: Scalar, R: Read>(input: R) -> Result<(NetworkState<T>, Option<MarginHead<T>>)> {
    let mut r = Reader { inner: input };
    r.header(MODEL_MAGIC)?;
    let n = r.u64()?;
    if !(2..=1024).contains(&n) {
        return Err(KdError::Checkpoint(format!("implausible layer count {n}")));
    }
    let widths = (0..n).map(|_| r.dim("width")).collect::<Result<Vec<_>>>()?;
    let activations = (0..n - 2)
        .map(|_| {
            let code = r.u8()?;
            Activation::from_code(code).ok_or_else(|| KdError::Checkpoint(format!("unknown activation code {code}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let spec = DenseNetSpec {
        widths,
        activations,
        seed,
    };
    let mut layers = Vec::with_capacity(spec.widths.len() - 1);
    for pair in spec.widths.windows(2) {
        let weight = r.matrix(pair[0], pair[1])?;
        let bias = Array1::from(r.reals(pair[1])?);
        layers.push(Layer { weight, bias });
    }
    let encoder = NetworkState::from_layers(spec, layers)?;
    let head = match r.u8()? {
        0 => None,
        1 => {
            let classes = r.dim("class count")?;
            let dim = r.dim("head dim")?;
            let params = FrHeadParams {
                classes,
                scale: r.f64()?,
                margin: r.f64()?,
            };
            params.validate().map_err(|e| KdError::Checkpoint(e.to_string()))?;
            let weights = r.matrix(classes, dim)?;
            Some(MarginHead {
                params,
                velocity: Array2::zeros(weights.dim()),
                weights,
            })
        }
        flag => return Err(KdError::Checkpoint(format!("bad head flag {flag}"))),
    };
    r.expect_end()?;
    Ok((encoder, head))
}

pub fn save_model<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_model(std::io::BufWriter::new(file), &model.encoder, Some(&model.head))
}

/// Loads a model written by [`save_model`]; the file must contain a head.
pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let file = std::fs::File::open(path).map_err(io_err)?;
    let (encoder, head) = read_model(std::io::BufReader::new(file))?;
    let head = head.ok_or_else(|| KdError::Checkpoint("checkpoint has no head".into()))?;
    Ok(Model { encoder, head })
}

pub fn write_bank<T: Scalar, W: Write>(out: W, bank: &MemoryBank<T>) -> Result<()> {
    let mut w = Writer { inner: out };
    w.bytes(&BANK_MAGIC)?;
    w.bytes(&FORMAT_VERSION.to_le_bytes())?;
    w.u64(bank.capacity() as u64)?;
    w.u64(bank.dim() as u64)?;
    w.u64(bank.fill() as u64)?;
    for (tag, row) in bank.entries() {
        w.u64(tag)?;
        w.reals(row.iter())?;
    }
    w.inner.flush().map_err(io_err)
}

pub fn read_bank<T: Scalar, R: Read>(input: R) -> Result<MemoryBank<T>> {
    let mut r = Reader { inner: input };
    r.header(BANK_MAGIC)?;
    let capacity = r.dim("capacity")?;
    let dim = r.dim("dim")?;
    let fill = r.u64()? as usize;
    if fill > capacity {
        return Err(KdError::Checkpoint(format!("fill {fill} exceeds capacity {capacity}")));
    }
    let entries = (0..fill)
        .map(|_| Ok((r.u64()?, r.reals(dim)?)))
        .collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    MemoryBank::from_entries(capacity, dim, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn model() -> Model<f64> {
        Model::init(
            DenseNetSpec::new(vec![4, 6, 3], Activation::Tanh, 11),
            FrHeadParams {
                classes: 5,
                ..FrHeadParams::default()
            },
        )
        .unwrap()
    }

    fn encode(m: &Model<f64>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(&mut buf, &m.encoder, Some(&m.head)).unwrap();
        buf
    }

    #[test]
    fn model_round_trip_is_exact() {
        let m = model();
        let buf = encode(&m);
        let (enc, head) = read_model::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(enc.layers(), m.encoder.layers());
        assert_eq!(enc.spec(), m.encoder.spec());
        assert_eq!(head.unwrap().weights, m.head.weights);
    }

    #[test]
    fn layout_matches_documentation() {
        let m = model();
        let buf = encode(&m);
        assert_eq!(&buf[..4], b"KDCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
        // three widths, one activation byte, the seed, then the first weight
        let first = 16 + 3 * 8 + 1 + 8;
        let w00 = f64::from_le_bytes(buf[first..first + 8].try_into().unwrap());
        assert_eq!(w00, m.encoder.layers()[0].weight[[0, 0]]);
        let w01 = f64::from_le_bytes(buf[first + 8..first + 16].try_into().unwrap());
        assert_eq!(w01, m.encoder.layers()[0].weight[[0, 1]]);
        let params = 4 * 6 + 6 + 6 * 3 + 3;
        let head = 1 + 8 + 8 + 8 + 8 + 5 * 3;
        assert_eq!(buf.len(), first + 8 * params + head + 8 * 15 - 15);
    }

    #[test]
    fn rejects_corruption() {
        let buf = encode(&model());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model::<f64, _>(bad.as_slice()), Err(KdError::Checkpoint(_))));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_model::<f64, _>(v2.as_slice()), Err(KdError::Checkpoint(_))));
        assert!(read_model::<f64, _>(&buf[..buf.len() - 3]).is_err());
        let mut long = buf;
        long.push(0);
        assert!(read_model::<f64, _>(long.as_slice()).is_err());
    }

    #[test]
    fn f32_model_survives_round_trip() {
        let m = Model::<f32>::init(
            DenseNetSpec::new(vec![3, 2], Activation::Relu, 1),
            FrHeadParams {
                classes: 2,
                ..FrHeadParams::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m.encoder, Some(&m.head)).unwrap();
        let (enc, _) = read_model::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(enc.layers(), m.encoder.layers());
    }

    #[test]
    fn bank_round_trip_keeps_order_and_tags() {
        let mut bank = MemoryBank::<f64>::new(3, 2).unwrap();
        bank.enqueue_tagged(arr2(&[[1.0, 2.0], [3.0, 4.0]]).view(), &[7, 8]).unwrap();
        bank.enqueue_tagged(arr2(&[[5.0, 6.0], [7.0, 8.0]]).view(), &[9, 10]).unwrap();
        let mut buf = Vec::new();
        write_bank(&mut buf, &bank).unwrap();
        let back = read_bank::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(back.tags(), vec![8, 9, 10]);
        assert_eq!(back.snapshot().unwrap(), bank.snapshot().unwrap());
        assert_eq!(back.capacity(), 3);
    }
}
