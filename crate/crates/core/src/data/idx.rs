//! IDX binary format (big-endian header, unsigned byte payload), optionally gzipped.

use std::borrow::Cow;
use std::io::Read;

use flate2::read::GzDecoder;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Largest decompressed stream accepted; far above the MNIST training set.
pub const MAX_DECOMPRESSED: u64 = 256 << 20;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Decoded image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn idx_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Idx {
        offset,
        message: message.into(),
    }
}

/// Inflates gzip input; passes anything else through untouched.
pub fn maybe_gunzip(bytes: &[u8]) -> Result<Cow<'_, [u8]>> {
    if !bytes.starts_with(&GZIP_MAGIC) {
        return Ok(Cow::Borrowed(bytes));
    }
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .take(MAX_DECOMPRESSED + 1)
        .read_to_end(&mut out)
        .map_err(|e| idx_err(0, format!("gzip stream: {e}")))?;
    if out.len() as u64 > MAX_DECOMPRESSED {
        return Err(idx_err(
            0,
            format!("decompressed stream exceeds {MAX_DECOMPRESSED} bytes"),
        ));
    }
    Ok(Cow::Owned(out))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            idx_err(
                self.bytes.len(),
                format!("truncated header: {what} needs bytes {}..{end}", self.pos),
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32("magic number")?;
        if got != expected {
            return Err(idx_err(0, format!("bad magic 0x{got:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(idx_err(
                self.bytes.len(),
                format!(
                    "truncated payload: expected {len} bytes after offset {}, found {available}",
                    self.pos
                ),
            ));
        }
        if available > len {
            return Err(idx_err(
                self.pos + len,
                format!("{} trailing bytes after payload", available - len),
            ));
        }
        let out = &self.bytes[self.pos..];
        self.pos += len;
        Ok(out)
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let bytes = maybe_gunzip(bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    c.magic(IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| idx_err(4, "image dimensions overflow"))?;
    let pixels = c.payload(len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    c.magic(LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    Ok(c.payload(count)?.to_vec())
}

/// Decodes an image/label file pair into a single-channel dataset scaled to `[0, 1]`.
/// The class count is the largest label plus one.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let images = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(idx_err(
            4,
            format!("count mismatch: {} images, {} labels", images.count, labels.len()),
        ));
    }
    if images.count == 0 {
        return Err(idx_err(4, "empty dataset"));
    }
    let num_classes = *labels.iter().max().expect("non-empty") as usize + 1;
    let data = images.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Tensor::new([images.count, 1, images.rows, images.cols], data)?;
    Dataset::new(
        "idx",
        tensor,
        labels.into_iter().map(usize::from).collect(),
        num_classes,
    )
}

/// Inverse of [`parse_idx`] (uncompressed). Pixels are quantised to bytes.
pub fn serialize_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = dataset.image_shape();
    if shape[0] != 1 {
        return Err(Error::InvalidArgument(format!(
            "IDX holds single-channel images, got {} channels",
            shape[0]
        )));
    }
    if dataset.labels().iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::InvalidArgument("IDX labels must fit in a byte".into()));
    }
    let n = dataset.len();
    let mut images = Vec::with_capacity(16 + dataset.images().numel());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, shape[1], shape[2]] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(dataset.images().data().iter().map(|&v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&l| l as u8));
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [count, rows, cols] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut v = LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn hand_encoded_image() {
        let bytes = [
            0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 0,
        ];
        let d = parse_idx(&bytes, &[0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        assert_eq!(d.images().shape(), &[1, 1, 2, 2]);
        assert_eq!(d.images().data(), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(d.labels(), &[7]);
        assert_eq!(d.num_classes(), 8);
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(&image_file(2, 1, 1, &[0, 0]), &label_file(&[0, 1, 2])).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut f = label_file(&[1]);
        f[3] = 0x03;
        match parse_idx_labels(&f) {
            Err(Error::Idx { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_header_and_payload() {
        let f = image_file(1, 2, 2, &[1, 2, 3]);
        match parse_idx_images(&f) {
            Err(Error::Idx { offset, message }) => {
                assert_eq!(offset, 19);
                assert!(message.contains("truncated payload"));
            }
            other => panic!("{other:?}"),
        }
        match parse_idx_images(&f[..10]) {
            Err(Error::Idx { offset, message }) => {
                assert_eq!(offset, 10);
                assert!(message.contains("truncated header"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut f = label_file(&[1, 2]);
        f.push(9);
        assert!(matches!(parse_idx_labels(&f), Err(Error::Idx { offset: 10, .. })));
    }

    #[test]
    fn dimension_overflow_is_an_error() {
        let f = image_file(u32::MAX, u32::MAX, u32::MAX, &[]);
        assert!(parse_idx_images(&f).is_err());
    }

    #[test]
    fn gzip_is_transparent() {
        let raw = label_file(&[3, 1, 4]);
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_labels(&gz).unwrap(), vec![3, 1, 4]);
        assert!(parse_idx_labels(&gz[..gz.len() / 2]).is_err());
    }

    #[test]
    fn serialize_round_trip() {
        let pixels: Vec<u8> = (0..=255).collect();
        let labels: Vec<u8> = (0..4).collect();
        let (img, lab) = (image_file(4, 8, 8, &pixels), label_file(&labels));
        let d = parse_idx(&img, &lab).unwrap();
        let (img2, lab2) = serialize_idx(&d).unwrap();
        assert_eq!((img2, lab2), (img, lab));
    }
}
