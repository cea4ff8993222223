//! "CNT1" tensor container: 4-byte magic, dtype code byte (0 = float32),
//! axis-count byte, little-endian u32 extents, then row-major little-endian
//! float32 payload. Storage is f32; in-memory compute stays f64.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CNT1";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CntError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"CNT1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
}

pub fn write_tensor<W: Write>(mut w: W, tensor: &Tensor) -> Result<(), CntError> {
    w.write_all(MAGIC)?;
    w.write_all(&[DTYPE_F32, tensor.ndim() as u8])?;
    for &extent in tensor.shape() {
        w.write_all(&(extent as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor, CntError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CntError::BadMagic(magic));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    if head[0] != DTYPE_F32 {
        return Err(CntError::UnsupportedDtype(head[0]));
    }
    let ndim = head[1] as usize;
    if ndim == 0 || ndim > 4 {
        return Err(CntError::InvalidHeader(format!("axis count {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        data.push(f32::from_le_bytes(b) as f64);
    }
    Ok(Tensor::new(shape, data)?)
}

pub fn save(path: &Path, tensor: &Tensor) -> Result<(), CntError> {
    let file = std::fs::File::create(path)?;
    write_tensor(std::io::BufWriter::new(file), tensor)
}

pub fn load(path: &Path) -> Result<Tensor, CntError> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_in_f32() {
        let t = Tensor::new(vec![2, 3, 1, 2], (0..12).map(|i| i as f64 * 0.25).collect()).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"CNT1");
        assert_eq!(buf[4], 0);
        assert_eq!(buf[5], 4);
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(back, t);

        // Writing the re-read tensor again reproduces identical bytes.
        let mut buf2 = Vec::new();
        write_tensor(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let err = read_tensor(&b"XNT1\x00\x01"[..]).unwrap_err();
        assert!(matches!(err, CntError::BadMagic(_)));
        let err = read_tensor(&b"CNT1\x07\x01"[..]).unwrap_err();
        assert!(matches!(err, CntError::UnsupportedDtype(7)));
    }
}
