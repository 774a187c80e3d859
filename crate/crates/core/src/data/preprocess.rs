use std::path::Path;

use nalgebra::DMatrix;

use super::dataset::Dataset;
use crate::diffnet::InputDims;
use crate::error::{Error, Result};

/// Central `crop x crop` window of each image; with `scale`, integer pixel
/// values in [0,255] are divided by 255.
pub fn preprocess(
    images: &DMatrix<f64>,
    dims: InputDims,
    crop: usize,
    scale: bool,
) -> Result<(DMatrix<f64>, InputDims)> {
    if crop == 0 || crop > dims.height || crop > dims.width {
        return Err(Error::input(format!(
            "crop {crop} does not fit {}x{} images",
            dims.height, dims.width
        )));
    }
    if images.ncols() != dims.len() {
        return Err(Error::input("image width does not match dims"));
    }
    let top = (dims.height - crop) / 2;
    let left = (dims.width - crop) / 2;
    let c = dims.channels;
    let out_dims = InputDims::new(crop, crop, c);
    let factor = if scale { 1.0 / 255.0 } else { 1.0 };
    let out = DMatrix::from_fn(images.nrows(), out_dims.len(), |r, j| {
        let ch = j % c;
        let x = (j / c) % crop;
        let y = j / (c * crop);
        let src = ((top + y) * dims.width + left + x) * c + ch;
        images[(r, src)] * factor
    });
    Ok((out, out_dims))
}

/// Reads `label,p0,p1,...` rows. With `scale`, pixels are divided by 255.
pub fn import_csv(path: &Path, dims: InputDims, scale: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != dims.len() + 1 {
            return Err(Error::format(
                path,
                format!("row {line}: expected {} fields, got {}", dims.len() + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("row {line}: bad label `{}`", &record[0])))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {line}: bad pixel `{field}`")))?;
            let v = if scale { v / 255.0 } else { v };
            flat.push(v as f32 as f64);
        }
    }
    let images = DMatrix::from_row_slice(labels.len(), dims.len(), &flat);
    Dataset::new(dims, images, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_crop_is_identity() {
        let dims = InputDims::new(10, 10, 1);
        let imgs = DMatrix::from_fn(2, 100, |r, c| (r * 100 + c) as f64 / 200.0);
        let (out, d) = preprocess(&imgs, dims, 10, false).unwrap();
        assert_eq!(out, imgs);
        assert_eq!(d, dims);
    }

    #[test]
    fn center_crop_keeps_middle_rows_and_cols() {
        let dims = InputDims::new(6, 6, 1);
        let imgs = DMatrix::from_fn(1, 36, |_, j| j as f64);
        let (out, d) = preprocess(&imgs, dims, 4, false).unwrap();
        assert_eq!(d, InputDims::new(4, 4, 1));
        let expected: Vec<f64> = (1..5).flat_map(|y| (1..5).map(move |x| (y * 6 + x) as f64)).collect();
        assert_eq!(out.row(0).iter().copied().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn scaling_endpoints() {
        let imgs = DMatrix::from_row_slice(1, 2, &[255.0, 0.0]);
        let (out, _) = preprocess(&imgs, InputDims::new(1, 2, 1), 1, true).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);
        let (out, _) = preprocess(&imgs, InputDims::new(2, 1, 1), 1, true).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);
        let (out, _) = preprocess(
            &DMatrix::from_row_slice(1, 3, &[9.0, 0.0, 9.0]),
            InputDims::new(1, 3, 1),
            1,
            true,
        )
        .unwrap();
        assert_eq!(out.as_slice(), &[0.0]);
    }

    #[test]
    fn oversized_crop_is_input_error() {
        let imgs = DMatrix::zeros(1, 16);
        assert!(matches!(
            preprocess(&imgs, InputDims::new(4, 4, 1), 5, false),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.csv");
        std::fs::write(&path, "1,0,255\n0,51,102\n").unwrap();
        let ds = import_csv(&path, InputDims::flat(2), true).unwrap();
        assert_eq!(ds.labels, Some(vec![1, 0]));
        assert_eq!(ds.images[(0, 1)], 1.0);
        assert_eq!(ds.images[(1, 0)], 0.2f32 as f64);
    }
}
