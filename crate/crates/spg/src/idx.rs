//! Reader and writer for the IDX format used by MNIST-style datasets.
//!
//! Images: big-endian magic `0x00000803`, then `n`, `rows`, `cols` as u32,
//! then `n * rows * cols` bytes. Labels: magic `0x00000801`, `n`, then `n`
//! bytes.

use std::fs;
use std::path::Path;

use spg_core::Matrix;

use crate::error::IdxError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io { path: path.into(), source })
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Check magic and header length, returning the header's dimension fields.
fn header(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<Vec<usize>, IdxError> {
    let need = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(IdxError::Truncated { path: path.into(), expected: need, actual: bytes.len() });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IdxError::BadMagic { path: path.into(), expected: magic, found });
    }
    if bytes.len() < need {
        return Err(IdxError::Truncated { path: path.into(), expected: need, actual: bytes.len() });
    }
    Ok((0..ndims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect())
}

fn payload<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8], IdxError> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { path: path.into(), expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes { path: path.into(), extra: bytes.len() - expected });
    }
    Ok(&bytes[offset..])
}

/// Images as an `n × (rows·cols)` matrix with pixels scaled to `[0, 1]`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Matrix, IdxError> {
    let dims = header(path, bytes, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = payload(path, bytes, 16, n * rows * cols)?;
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Matrix::new(n, rows * cols, data).expect("payload length checked"))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    let dims = header(path, bytes, LABELS_MAGIC, 1)?;
    Ok(payload(path, bytes, 8, dims[0])?.iter().map(|&b| b as usize).collect())
}

/// Load a matching pair of image and label files.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Matrix, Vec<usize>), IdxError> {
    let images = parse_images(images_path, &read(images_path)?)?;
    let labels = parse_labels(labels_path, &read(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(IdxError::CountMismatch { images: images.rows(), labels: labels.len() });
    }
    Ok((images, labels))
}

/// Encode raw `u8` images (`n` images of `rows × cols`) as IDX bytes.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len().checked_div(rows * cols).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn scales_endpoints() {
        let bytes = encode_images(1, 2, &[0, 255]);
        let m = parse_images(p(), &bytes).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn label_magic_on_images_is_rejected() {
        let bytes = encode_labels(&[1, 2]);
        match parse_images(p(), &bytes) {
            Err(IdxError::BadMagic { expected, found, .. }) => {
                assert_eq!(expected, IMAGES_MAGIC);
                assert_eq!(found, LABELS_MAGIC);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_header_and_payload() {
        assert!(matches!(parse_labels(p(), &[0, 0]), Err(IdxError::Truncated { .. })));
        let mut bytes = encode_labels(&[1, 2, 3]);
        bytes.pop();
        assert!(matches!(
            parse_labels(p(), &bytes),
            Err(IdxError::Truncated { expected: 11, actual: 10, .. })
        ));
        let mut bytes = encode_labels(&[1]);
        bytes.push(0);
        assert!(matches!(parse_labels(p(), &bytes), Err(IdxError::TrailingBytes { extra: 1, .. })));
    }
}
