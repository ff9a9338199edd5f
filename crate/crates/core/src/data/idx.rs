//! IDX (MNIST) and CIFAR-10 binary readers. Gzip-compressed files are
//! detected by their magic bytes and inflated transparently.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::malformed(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::malformed(path, "truncated header"))
}

/// Parses an IDX image file image into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::malformed(path, format!("wrong magic {magic:#010x} for an image file")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::malformed(path, "image dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < len {
        return Err(Error::malformed(
            path,
            format!("truncated payload: {} of {len} pixel bytes", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(Error::malformed(path, "trailing bytes after pixels"));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

/// Parses an IDX label file image.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::malformed(path, format!("wrong magic {magic:#010x} for a label file")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::malformed(
            path,
            format!("truncated payload: {} of {n} labels", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(Error::malformed(path, "trailing bytes after labels"));
    }
    Ok(payload.to_vec())
}

/// Loads an MNIST-style image/label pair; pixels are scaled by 1/255.
pub fn load_mnist_idx<S: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<S>> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(ip)?, ip)?;
    let ys = parse_idx_labels(&read_maybe_gz(lp)?, lp)?;
    if ys.len() != n {
        return Err(Error::malformed(
            lp,
            format!("{} labels for {n} images", ys.len()),
        ));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= 10) {
        return Err(Error::malformed(lp, format!("label {bad} outside 0..10")));
    }
    let scale = S::lit(255.0);
    let features = pixels.iter().map(|&p| S::lit(f64::from(p)) / scale).collect();
    Dataset::new(
        features,
        ys.into_iter().map(usize::from).collect(),
        rows * cols,
        10,
        format!("idx:{}", ip.display()),
    )
}

/// Writes an uncompressed IDX image file.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rows * cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::shape("pixel count is not a multiple of rows × cols"));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, (pixels.len() / (rows * cols)) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_all(path, &out)
}

/// Writes an uncompressed IDX label file.
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_all(path, &out)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Loads CIFAR-10 binary batches (records of one label byte and 3072 pixel
/// bytes, channel-major), concatenated in the given order.
pub fn load_cifar_binary<S: Scalar, P: AsRef<Path>>(batches: &[P]) -> Result<Dataset<S>> {
    let scale = S::lit(255.0);
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for p in batches {
        let path = p.as_ref();
        let bytes = read_maybe_gz(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::malformed(
                path,
                format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] >= 10 {
                return Err(Error::malformed(path, format!("label {} outside 0..10", rec[0])));
            }
            labels.push(usize::from(rec[0]));
            features.extend(rec[1..].iter().map(|&b| S::lit(f64::from(b)) / scale));
        }
    }
    let tag = match batches.first() {
        Some(p) => format!("cifar:{}", p.as_ref().display()),
        None => return Err(Error::invalid("no CIFAR batches given")),
    };
    Dataset::new(features, labels, 3072, 10, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_two_images() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let pixels: Vec<u8> = (0..8).map(|i| (i * 36) as u8).chain([255, 0]).collect();
        write_idx_images(&ip, 1, 5, &pixels).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        let d = load_mnist_idx::<f64>(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 5);
        assert_eq!(d.labels(), &[3, 7]);
        assert_eq!(d.x(1)[3], 1.0);
        let back: Vec<u8> = d.features().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
    }

    #[test]
    fn swapped_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 1, 1, &[1, 2]).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();
        assert!(matches!(load_mnist_idx::<f64>(&lp, &ip), Err(Error::Malformed { .. })));
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let p = Path::new("mem");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7]);
        assert!(parse_idx_images(&bytes, p).is_err());
        assert!(parse_idx_images(&bytes[..10], p).is_err());

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, 1, 1, &[1, 2]).unwrap();
        write_idx_labels(&lp, &[0, 1, 2]).unwrap();
        assert!(load_mnist_idx::<f64>(&ip, &lp).is_err());
    }

    #[test]
    fn gzip_is_detected() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i.gz"), dir.path().join("l"));
        let mut raw = Vec::new();
        for v in [IMAGES_MAGIC, 1, 1, 2] {
            raw.extend_from_slice(&v.to_be_bytes());
        }
        raw.extend_from_slice(&[0, 255]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        std::fs::write(&ip, enc.finish().unwrap()).unwrap();
        write_idx_labels(&lp, &[4]).unwrap();
        let d = load_mnist_idx::<f32>(&ip, &lp).unwrap();
        assert_eq!(d.features(), &[0.0, 1.0]);
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let mut bytes = vec![9u8];
        bytes.extend(std::iter::repeat(51u8).take(3072));
        std::fs::write(&p, &bytes).unwrap();
        let d = load_cifar_binary::<f64, _>(&[&p]).unwrap();
        assert_eq!((d.len(), d.dim(), d.y(0)), (1, 3072, 9));
        assert_eq!(d.x(0)[0], 0.2);
        std::fs::write(&p, &bytes[..100]).unwrap();
        assert!(load_cifar_binary::<f64, _>(&[&p]).is_err());
    }
}
