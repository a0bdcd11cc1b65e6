//! Loader for IDX-format image/label pairs (the MNIST container format).
//!
//! Images use magic 2051 (`u8` pixels, dims `count x rows x cols`), labels
//! magic 2049 (`u8` labels, dims `count`); all header words are big-endian.
//! Pixels are scaled to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated IDX header while reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads an IDX image file into row-major `[0, 1]` floats.
/// Returns `(pixels, count, rows * cols)`.
pub fn load_images(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32(&mut r, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic} (expected {IMAGE_MAGIC})",
            path.display()
        )));
    }
    let count = read_u32(&mut r, "image count")? as usize;
    let rows = read_u32(&mut r, "image rows")? as usize;
    let cols = read_u32(&mut r, "image cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("{}: zero image dimensions", path.display())));
    }
    let mut raw = vec![0u8; count * rows * cols];
    r.read_exact(&mut raw).map_err(|_| {
        Error::Format(format!(
            "{}: expected {} pixel bytes",
            path.display(),
            count * rows * cols
        ))
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes after pixel data", path.display())));
    }
    let pixels = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok((pixels, count, rows * cols))
}

/// Reads an IDX label file into class ids.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32(&mut r, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic} (expected {LABEL_MAGIC})",
            path.display()
        )));
    }
    let count = read_u32(&mut r, "label count")? as usize;
    let mut raw = vec![0u8; count];
    r.read_exact(&mut raw).map_err(|_| {
        Error::Format(format!("{}: expected {count} label bytes", path.display()))
    })?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes after label data", path.display())));
    }
    Ok(raw.into_iter().map(usize::from).collect())
}

/// Loads a matching image/label pair into a [`Dataset`]. `num_classes`
/// defaults to `max label + 1` when not given.
pub fn load_dataset(
    images_path: &Path,
    labels_path: &Path,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (pixels, count, feature_dim) = load_images(images_path)?;
    let labels = load_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "image/label count mismatch: {count} images vs {} labels",
            labels.len()
        )));
    }
    let c = match num_classes {
        Some(c) => c,
        None => labels.iter().max().map_or(0, |&m| m + 1),
    };
    if c == 0 {
        return Err(Error::Format("label file is empty".into()));
    }
    Dataset::new(pixels, feature_dim, labels, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(cols as u32).to_be_bytes()).unwrap();
        for img in images {
            assert_eq!(img.len(), rows * cols);
            f.write_all(img).unwrap();
        }
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn round_trips_a_small_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs.idx");
        let lbl_path = dir.path().join("lbls.idx");
        write_images(&img_path, 2, 3, &[vec![0, 51, 102, 153, 204, 255], vec![255; 6]]);
        write_labels(&lbl_path, &[4, 1]);

        let d = load_dataset(&img_path, &lbl_path, None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.feature_dim(), 6);
        assert_eq!(d.num_classes(), 5);
        assert_eq!(d.labels(), &[4, 1]);
        assert!((d.row(0)[1] - 0.2).abs() < 1e-12);
        assert!((d.row(1)[5] - 1.0).abs() < 1e-12);

        let d10 = load_dataset(&img_path, &lbl_path, Some(10)).unwrap();
        assert_eq!(d10.num_classes(), 10);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs.idx");
        let lbl_path = dir.path().join("lbls.idx");

        // Label magic in the image slot.
        write_labels(&img_path, &[0]);
        write_labels(&lbl_path, &[0]);
        assert!(matches!(load_dataset(&img_path, &lbl_path, None), Err(Error::Format(_))));

        // Header promises more pixels than the file holds.
        let mut f = File::create(&img_path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[7u8; 5]).unwrap();
        drop(f);
        assert!(matches!(load_images(&img_path), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs.idx");
        let lbl_path = dir.path().join("lbls.idx");
        write_images(&img_path, 1, 1, &[vec![9], vec![8]]);
        write_labels(&lbl_path, &[0]);
        assert!(matches!(load_dataset(&img_path, &lbl_path, None), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.idx");
        assert!(matches!(load_images(&missing), Err(Error::Io(_))));
    }
}
