//! Dataset ingestion: numeric CSV for regression, IDX images for
//! classification, plus standardisation and the reproducible split protocol.

use crate::numerics::{RngStream, Tensor};
use crate::{Error, Result};
use std::io::Read;
use std::path::Path;

/// Parse a numeric CSV whose last column is the regression target. A header
/// row is detected by attempting to parse the first line; if any cell fails,
/// that line is skipped. Later non-numeric cells are reported with their
/// 1-based row and column.
pub fn load_csv_regression(path: &Path) -> Result<(Tensor, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line_idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        let mut parsed = Vec::with_capacity(cells.len());
        let mut failed_col = None;
        for (ci, cell) in cells.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) => parsed.push(v),
                Err(_) => {
                    failed_col = Some(ci);
                    break;
                }
            }
        }
        if let Some(ci) = failed_col {
            if line_idx == 0 {
                continue; // header row
            }
            return Err(Error::Parse {
                row: line_idx + 1,
                col: ci + 1,
                msg: format!("non-numeric cell {:?}", cells[ci]),
            });
        }
        if let Some(w) = width {
            if parsed.len() != w {
                return Err(Error::Parse {
                    row: line_idx + 1,
                    col: parsed.len(),
                    msg: format!("expected {w} columns"),
                });
            }
        } else {
            if parsed.len() < 2 {
                return Err(Error::Parse {
                    row: line_idx + 1,
                    col: 1,
                    msg: "need at least one feature column and one target column".into(),
                });
            }
            width = Some(parsed.len());
        }
        rows.push(parsed);
    }
    let width = width.ok_or_else(|| Error::Parse {
        row: 0,
        col: 0,
        msg: format!("{}: no numeric rows", path.display()),
    })?;
    let n = rows.len();
    let d = width - 1;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for row in rows {
        x.extend_from_slice(&row[..d]);
        y.push(row[d]);
    }
    Ok((Tensor::from_vec(vec![n, d], x)?, y))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Load IDX image/label files. Pixels are divided by 255 so features live in
/// [0,1]. `limit` keeps only the leading records (reading stops early).
pub fn load_idx_images(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<(Tensor, Vec<usize>)> {
    let mut images = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32_be(&mut images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("{}: image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}", images_path.display()),
        });
    }
    let count = read_u32_be(&mut images)? as usize;
    let rows = read_u32_be(&mut images)? as usize;
    let cols = read_u32_be(&mut images)? as usize;

    let mut labels = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let label_magic = read_u32_be(&mut labels)?;
    if label_magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("{}: label magic {label_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}", labels_path.display()),
        });
    }
    let label_count = read_u32_be(&mut labels)? as usize;
    if label_count != count {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("{count} images vs {label_count} labels"),
        });
    }

    let take = limit.map_or(count, |l| l.min(count));
    let d = rows * cols;
    let mut pixel_buf = vec![0u8; d];
    let mut x = Vec::with_capacity(take * d);
    for _ in 0..take {
        images.read_exact(&mut pixel_buf)?;
        x.extend(pixel_buf.iter().map(|&b| b as f64 / 255.0));
    }
    let mut label_buf = vec![0u8; take];
    labels.read_exact(&mut label_buf)?;
    let y: Vec<usize> = label_buf.iter().map(|&b| b as usize).collect();
    if let Some(&bad) = label_buf.iter().find(|&&b| b > 9) {
        return Err(Error::Parse { row: 0, col: 0, msg: format!("label byte {bad} out of 0..9") });
    }
    Ok((Tensor::from_vec(vec![take, d], x)?, y))
}

/// Per-column affine standardisation fitted on training rows only.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the selected rows of `x`. Constant columns get std 1 so the
    /// transform stays invertible.
    pub fn fit_rows(x: &Tensor, rows: &[usize]) -> Result<Standardizer> {
        let (_, d) = x.dims2()?;
        if rows.is_empty() {
            return Err(Error::EmptyReduction);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for &r in rows {
            for j in 0..d {
                let diff = x.at2(r, j) - mean[j];
                std[j] += diff * diff / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn fit_values(y: &[f64], rows: &[usize]) -> Result<Standardizer> {
        let t = Tensor::from_vec(vec![y.len(), 1], y.to_vec())?;
        Standardizer::fit_rows(&t, rows)
    }

    /// Standardise the selected rows into a new tensor.
    pub fn transform_rows(&self, x: &Tensor, rows: &[usize]) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "standardizer fitted on {} columns, given {d}",
                self.mean.len()
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            for j in 0..d {
                out.push((x.at2(r, j) - self.mean[j]) / self.std[j]);
            }
        }
        Tensor::from_vec(vec![rows.len(), d], out)
    }

    pub fn transform_values(&self, y: &[f64], rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| (y[r] - self.mean[0]) / self.std[0]).collect()
    }
}

/// Reproducible shuffled split: a pure function of (seed, split index, n).
/// The index permutation comes from a Fisher-Yates shuffle driven by
/// `RngStream::new(seed).substream(split_index).substream(n)`; the last
/// `max(1, round(test_fraction * n))` shuffled indices form the test set.
pub fn split_indices(
    seed: u64,
    split_index: u64,
    n: usize,
    test_fraction: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut stream = RngStream::new(seed).substream(split_index).substream(n as u64);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (stream.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let split_at = n - n_test;
    let test = order.split_off(split_at);
    (order, test)
}

/// Copy the selected rows of a matrix into a new tensor.
pub fn gather_rows(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(x.row(r));
    }
    Tensor::from_vec(vec![rows.len(), d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn csv_two_row_toy() {
        let f = write_temp(b"1,2\n3,4\n");
        let (x, y) = load_csv_regression(f.path()).unwrap();
        assert_eq!(x.shape(), &[2, 1]);
        assert_eq!(x.data(), &[1.0, 3.0]);
        assert_eq!(y, vec![2.0, 4.0]);
    }

    #[test]
    fn csv_header_is_skipped_and_bad_cells_are_located() {
        let f = write_temp(b"a,b\n1,2\n3,4\n");
        let (x, _) = load_csv_regression(f.path()).unwrap();
        assert_eq!(x.shape(), &[2, 1]);

        let f = write_temp(b"1,2\n3,oops\n");
        let err = load_csv_regression(f.path()).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_empty_file_is_an_error() {
        let f = write_temp(b"");
        assert!(load_csv_regression(f.path()).is_err());
    }

    #[test]
    fn standardised_columns_have_zero_mean_unit_std() {
        let f = write_temp(b"1,10\n2,20\n3,30\n4,40\n");
        let (x, y) = load_csv_regression(f.path()).unwrap();
        let rows: Vec<usize> = (0..4).collect();
        let sx = Standardizer::fit_rows(&x, &rows).unwrap();
        let xt = sx.transform_rows(&x, &rows).unwrap();
        let mean: f64 = xt.data().iter().sum::<f64>() / 4.0;
        let var: f64 = xt.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-10);
        let sy = Standardizer::fit_values(&y, &rows).unwrap();
        let yt = sy.transform_values(&y, &rows);
        assert!(yt.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn idx_loader_parses_and_normalises() {
        // Two 2x2 images with one 255 pixel, labels {3, 7}.
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 0, 0, 255, 0, 0, 0, 0]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[3, 7]);
        let fi = write_temp(&images);
        let fl = write_temp(&labels);
        let (x, y) = load_idx_images(fi.path(), fl.path(), None).unwrap();
        assert_eq!(x.shape(), &[2, 4]);
        assert_eq!(x.at2(0, 3), 1.0);
        assert_eq!(x.at2(0, 0), 0.0);
        assert_eq!(y, vec![3, 7]);
        // Limit keeps the head only.
        let (x1, y1) = load_idx_images(fi.path(), fl.path(), Some(1)).unwrap();
        assert_eq!(x1.shape(), &[1, 4]);
        assert_eq!(y1, vec![3]);
    }

    #[test]
    fn idx_loader_rejects_bad_magic_and_count_mismatch() {
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0804u32.to_be_bytes());
        images.extend_from_slice(&[0; 12]);
        let fi = write_temp(&images);
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&0u32.to_be_bytes());
        let fl = write_temp(&labels);
        assert!(load_idx_images(fi.path(), fl.path(), None).is_err());

        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.push(9);
        let fi = write_temp(&images);
        assert!(load_idx_images(fi.path(), fl.path(), None).is_err());
    }

    #[test]
    fn split_protocol_is_pure_and_disjoint() {
        let (train_a, test_a) = split_indices(7, 3, 100, 0.1);
        let (train_b, test_b) = split_indices(7, 3, 100, 0.1);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(test_a.len(), 10);
        assert_eq!(train_a.len(), 90);
        let mut all: Vec<usize> = train_a.iter().chain(test_a.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (_, test_c) = split_indices(7, 4, 100, 0.1);
        assert_ne!(test_a, test_c, "different split index must reshuffle");
    }
}
