//! Reader for the big-endian IDX files MNIST ships in.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor2;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn u32_at(&self, offset: usize) -> Result<u32> {
        let chunk = self
            .bytes
            .get(offset..offset + 4)
            .ok_or_else(|| self.err(format!("truncated header at byte offset {offset}")))?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&self, offset: usize, len: usize) -> Result<&[u8]> {
        self.bytes.get(offset..offset + len).ok_or_else(|| {
            self.err(format!(
                "truncated file: expected {} bytes, data ends at byte offset {}",
                offset + len,
                self.bytes.len()
            ))
        })
    }
}

fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let r = Reader { bytes: &bytes, path };
    let magic = r.u32_at(0)?;
    if magic != IMAGE_MAGIC {
        return Err(r.err(format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")));
    }
    let n = r.u32_at(4)? as usize;
    let h = r.u32_at(8)? as usize;
    let w = r.u32_at(12)? as usize;
    let pixels = r.body(16, n * h * w)?;
    Ok((n, h, w, pixels.iter().map(|&p| f64::from(p) / 255.0).collect()))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = std::fs::read(path)?;
    let r = Reader { bytes: &bytes, path };
    let magic = r.u32_at(0)?;
    if magic != LABEL_MAGIC {
        return Err(r.err(format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")));
    }
    let n = r.u32_at(4)? as usize;
    Ok(r.body(8, n)?.iter().map(|&l| usize::from(l)).collect())
}

/// One split (train or test) of MNIST: pixels scaled to [0, 1], shape
/// (28, 28, 1), 10 classes.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let (n, h, w, pixels) = read_images(images_path)?;
    let labels = read_labels(labels_path.as_ref())?;
    if labels.len() != n {
        return Err(Error::Parse {
            path: labels_path.as_ref().to_path_buf(),
            message: format!("count mismatch: {n} images but {} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Parse {
            path: labels_path.as_ref().to_path_buf(),
            message: format!("label {bad} outside 0..10"),
        });
    }
    Dataset::new(Tensor2::from_vec(n, h * w, pixels)?, labels, 10, Some((h, w, 1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    fn images(n: u32, h: u32, w: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, n, h, w] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    fn labels(n: u32, body: &[u8]) -> Vec<u8> {
        let mut v = LABEL_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&n.to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn parses_tiny_files() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &images(2, 1, 2, &[0, 255, 51, 102]));
        let l = write(dir.path(), "l", &labels(2, &[3, 9]));
        let d = load_mnist_idx(&i, &l).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[3, 9]);
        assert_eq!(d.inputs().values(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.image_shape(), Some((1, 2, 1)));
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &labels(2, &[0, 0]));
        let l = write(dir.path(), "l", &labels(2, &[0, 0]));
        let e = load_mnist_idx(&i, &l).unwrap_err().to_string();
        assert!(e.contains("magic"), "{e}");
    }

    #[test]
    fn truncation_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &images(2, 2, 2, &[1, 2, 3]));
        let l = write(dir.path(), "l", &labels(2, &[0, 0]));
        let e = load_mnist_idx(&i, &l).unwrap_err().to_string();
        assert!(e.contains("byte offset 19"), "{e}");
        let short = write(dir.path(), "s", &IMAGE_MAGIC.to_be_bytes()[..3]);
        assert!(load_mnist_idx(&short, &l).unwrap_err().to_string().contains("byte offset 0"));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i", &images(2, 1, 1, &[1, 2]));
        let l = write(dir.path(), "l", &labels(3, &[0, 0, 0]));
        assert!(load_mnist_idx(&i, &l).unwrap_err().to_string().contains("count mismatch"));
    }
}
