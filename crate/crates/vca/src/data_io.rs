//! Dataset ingestion (IDX binary images/labels, headerless CSV point sets)
//! and JSON persistence for fitted models.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use serde::{de::DeserializeOwned, Serialize};

use crate::basis::PointSet;
use crate::error::VcaError;
use crate::Result;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw IDX image tensor: `count` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Images plus labels, pixels scaled to [0, 1].
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub points: PointSet,
    pub labels: Vec<u8>,
    pub side: usize,
}

fn fmt_err(path: &Path, offset: u64, message: impl Into<String>) -> VcaError {
    VcaError::Format {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

/// Parse a big-endian IDX image file (magic 0x00000803).
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 0, "truncated: missing magic"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt_err(path, 0, format!("wrong magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let count = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 4, "truncated: missing item count"))? as usize;
    let rows = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 8, "truncated: missing row count"))? as usize;
    let cols = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 12, "truncated: missing column count"))? as usize;
    let expected = count * rows * cols;
    let mut pixels = vec![0u8; expected];
    r.read_exact(&mut pixels)
        .map_err(|_| fmt_err(path, 16, format!("truncated: expected {expected} pixel bytes")))?;
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Parse a big-endian IDX label file (magic 0x00000801).
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let magic = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 0, "truncated: missing magic"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt_err(path, 0, format!("wrong magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let count = r
        .read_u32::<BigEndian>()
        .map_err(|_| fmt_err(path, 4, "truncated: missing item count"))? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| fmt_err(path, 8, format!("truncated: expected {count} label bytes")))?;
    Ok(labels)
}

/// Load a paired image/label dataset, scaling pixels by 1/255.
pub fn load_labeled_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images = read_idx_images(&images_path)?;
    let labels = read_idx_labels(&labels_path)?;
    if images.count != labels.len() {
        return Err(VcaError::invalid(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    if images.rows != images.cols {
        return Err(VcaError::invalid(format!(
            "expected square images, got {}x{}",
            images.rows, images.cols
        )));
    }
    let side = images.rows;
    let dim = side * side;
    let mut data = Array2::zeros((images.count, dim));
    for i in 0..images.count {
        for j in 0..dim {
            data[[i, j]] = images.pixels[i * dim + j] as f64 / 255.0;
        }
    }
    Ok(LabeledDataset {
        points: PointSet::new(data)?,
        labels,
        side,
    })
}

/// Read a headerless numeric CSV, one point per row.
pub fn read_csv_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| VcaError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| VcaError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("non-numeric cell '{}'", cell.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(VcaError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("ragged row: {} cells, expected {w}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    PointSet::from_rows(&rows)
}

/// Format a float with 17 significant digits; round-trips value-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write rows of floats as CSV ('.' decimal separator, ',' delimiter).
pub fn write_csv(
    path: impl AsRef<Path>,
    header: Option<&[String]>,
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    if let Some(h) = header {
        writeln!(w, "{}", h.join(",")).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    }
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    }
    Ok(())
}

pub fn write_csv_points(path: impl AsRef<Path>, points: &PointSet) -> Result<()> {
    let rows = points
        .data()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect::<Vec<_>>();
    write_csv(path, None, rows)
}

/// Persist any serializable model as pretty JSON.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| VcaError::io(path.display().to_string(), e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    fn write_idx_images(path: &Path, images: &[[u8; 4]]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    #[test]
    fn idx_images_roundtrip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.idx");
        write_idx_images(&path, &[[0, 64, 128, 255], [1, 2, 3, 4]]);
        let raw = read_idx_images(&path).unwrap();
        assert_eq!((raw.count, raw.rows, raw.cols), (2, 2, 2));
        assert_eq!(raw.pixels, vec![0, 64, 128, 255, 1, 2, 3, 4]);
    }

    #[test]
    fn idx_wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut f = File::create(&path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&0u32.to_be_bytes()).unwrap();
        drop(f);
        let err = read_idx_images(&path).unwrap_err();
        assert!(matches!(err, VcaError::Format { offset: 0, .. }));
    }

    #[test]
    fn idx_zero_items_ok() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.idx");
        write_idx_images(&path, &[]);
        let raw = read_idx_images(&path).unwrap();
        assert_eq!(raw.count, 0);
        let lpath = dir.path().join("empty-labels.idx");
        let mut f = File::create(&lpath).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&0u32.to_be_bytes()).unwrap();
        drop(f);
        assert!(read_idx_labels(&lpath).unwrap().is_empty());
    }

    #[test]
    fn idx_labels_fixture_and_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.idx");
        let mut f = File::create(&path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&3u32.to_be_bytes()).unwrap();
        f.write_all(&[7u8, 0, 9]).unwrap();
        drop(f);
        assert_eq!(read_idx_labels(&path).unwrap(), vec![7, 0, 9]);
        assert!(read_idx_images(&path).is_err());
    }

    #[test]
    fn idx_truncated_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.idx");
        let mut f = File::create(&path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&5u32.to_be_bytes()).unwrap();
        drop(f);
        let err = read_idx_images(&path).unwrap_err();
        assert!(matches!(err, VcaError::Format { offset: 8, .. }), "{err}");
    }

    #[test]
    fn csv_parse_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "1,2\n3,4\n").unwrap();
        let p = read_csv_points(&path).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.data()[[1, 1]], 4.0);
    }

    #[test]
    fn csv_roundtrip_bitwise() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let p = PointSet::new(Array2::from_shape_fn((10, 5), |_| {
            rng.random_range(-1.0e3..1.0e3) * rng.random_range(1e-12..1.0)
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        write_csv_points(&path, &p).unwrap();
        let q = read_csv_points(&path).unwrap();
        assert_eq!(p.data(), q.data());
    }

    #[test]
    fn csv_ragged_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        match read_csv_points(&path).unwrap_err() {
            VcaError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn csv_non_numeric_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(&path, "1,abc\n").unwrap();
        assert!(matches!(
            read_csv_points(&path).unwrap_err(),
            VcaError::Parse { line: 1, .. }
        ));
    }
}
