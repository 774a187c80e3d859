//! Two-dimensional principal-component view of penultimate features.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::diffnet::DiffNet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub true_class: Option<usize>,
    pub predicted_class: usize,
    pub adversarial: bool,
}

/// Projects the rows of `features` onto their top two principal axes. Axes
/// are ordered by variance and signed so their largest-magnitude component
/// is positive. With one feature the second coordinate is zero.
pub fn principal_components_2d(features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::input(format!("projection needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::input("projection needs at least one feature"));
    }
    let mean = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = DMatrix::zeros(d, 2);
    for (k, &i) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v = -v;
        }
        axes.set_column(k, &v);
    }
    Ok(centered * axes)
}

/// Penultimate features of `inputs` (`N x D`) reduced to 2-D, tagged with
/// labels, predictions and the clean/adversarial flag.
pub fn project_features(
    net: &DiffNet,
    inputs: &DMatrix<f64>,
    true_classes: Option<&[usize]>,
    adversarial: &[bool],
) -> Result<Vec<ProjectedPoint>> {
    let n = inputs.nrows();
    if adversarial.len() != n || true_classes.is_some_and(|t| t.len() != n) {
        return Err(Error::input("labels and flags must match the number of inputs"));
    }
    let fwd = net.forward_inputs(inputs)?;
    let coords = principal_components_2d(&fwd.features)?;
    let preds = fwd.predictions();
    Ok((0..n)
        .map(|i| ProjectedPoint {
            x: coords[(i, 0)],
            y: coords[(i, 1)],
            true_class: true_classes.map(|t| t[i]),
            predicted_class: preds[i],
            adversarial: adversarial[i],
        })
        .collect())
}

/// Writes `x,y,true_class,predicted_class,adversarial` rows.
pub fn write_projection(points: &[ProjectedPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::input(e.to_string());
    w.write_record(["x", "y", "true_class", "predicted_class", "adversarial"])
        .map_err(to_err)?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.true_class.map(|c| c.to_string()).unwrap_or_default(),
            p.predicted_class.to_string(),
            u8::from(p.adversarial).to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    binio::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_input_is_rotated_only() {
        let f = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 2.0, 3.0, 1.0, -1.0, 4.0, 2.5, -0.5]);
        let p = principal_components_2d(&f).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let a = (f.row(i) - f.row(j)).norm();
                let b = (p.row(i) - p.row(j)).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn duplicates_share_coordinates() {
        let f = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 0.0, 5.0, 1.0, 2.0, 2.0, 2.0]);
        let p = principal_components_2d(&f).unwrap();
        assert_eq!(p.row(0), p.row(1));
    }

    #[test]
    fn first_axis_carries_most_variance() {
        let f = DMatrix::from_fn(50, 3, |i, j| match j {
            0 => i as f64,
            1 => (i % 3) as f64 * 0.1,
            _ => 1.0,
        });
        let p = principal_components_2d(&f).unwrap();
        let var = |c: usize| p.column(c).iter().map(|v| v * v).sum::<f64>();
        assert!(var(0) > var(1));
    }

    #[test]
    fn single_sample_is_input_error() {
        assert!(matches!(
            principal_components_2d(&DMatrix::zeros(1, 2)),
            Err(Error::Input(_))
        ));
    }
}
