//! `ADUD` detector files: magic, `u16` version, class count, then per class
//! `J`, `n`, regularization, weights, means and row-major covariances as
//! little-endian `f64`; a thresholds flag and values; the 32-byte source-model
//! digest.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::detector::UadModel;
use super::gmm::ClassGmm;
use crate::binio::{self, Reader, Writer};
use crate::error::Result;

const MAGIC: &[u8; 4] = b"ADUD";
const VERSION: u16 = 1;

pub fn encode(uad: &UadModel) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.len_u32(uad.gmms.len())?;
    for g in &uad.gmms {
        w.len_u32(g.components())?;
        w.len_u32(g.dim())?;
        w.f64(g.diag_reg);
        for &p in &g.weights {
            w.f64(p);
        }
        for m in &g.means {
            m.iter().for_each(|&v| w.f64(v));
        }
        for c in &g.covariances {
            for row in c.row_iter() {
                row.iter().for_each(|&v| w.f64(v));
            }
        }
    }
    match &uad.thresholds {
        Some(t) => {
            w.u8(1);
            t.iter().for_each(|&v| w.f64(v));
        }
        None => w.u8(0),
    }
    w.bytes(&uad.source_model);
    Ok(w.into_inner())
}

fn read_f64s(r: &mut Reader, n: usize) -> Result<Vec<f64>> {
    r.ensure_remaining(n, 8)?;
    (0..n).map(|_| r.f64()).collect()
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<UadModel> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported detector version {version}")));
    }
    let classes = r.usize()?;
    let mut gmms = Vec::new();
    for class in 0..classes {
        let j = r.usize()?;
        let n = r.usize()?;
        if j == 0 || n == 0 {
            return Err(r.fail(format!("class {class}: empty mixture")));
        }
        let reg = r.f64()?;
        let weights = read_f64s(&mut r, j)?;
        let means = (0..j)
            .map(|_| read_f64s(&mut r, n).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let covs = (0..j)
            .map(|_| read_f64s(&mut r, n * n).map(|v| DMatrix::from_row_slice(n, n, &v)))
            .collect::<Result<Vec<_>>>()?;
        let gmm = ClassGmm::new(class, weights, means, covs, reg).map_err(|e| r.fail(format!("class {class}: {e}")))?;
        gmms.push(gmm);
    }
    let thresholds = match r.u8()? {
        0 => None,
        1 => Some(read_f64s(&mut r, classes)?),
        f => return Err(r.fail(format!("bad thresholds flag {f}"))),
    };
    let mut source_model = [0u8; 32];
    source_model.copy_from_slice(r.take(32)?);
    r.finish()?;
    UadModel::new(gmms, thresholds, source_model).map_err(|e| r.fail(e.to_string()))
}

pub fn save(uad: &UadModel, path: &Path) -> Result<()> {
    binio::write_atomic(path, &encode(uad)?)
}

pub fn load(path: &Path) -> Result<UadModel> {
    decode(&binio::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> UadModel {
        let g0 = ClassGmm::new(
            0,
            vec![0.25, 0.75],
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5])],
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
                DMatrix::identity(2, 2),
            ],
            1e-4,
        )
        .unwrap();
        let g1 = ClassGmm::new(
            1,
            vec![1.0],
            vec![DVector::zeros(2)],
            vec![DMatrix::identity(2, 2)],
            0.0,
        )
        .unwrap();
        UadModel::new(vec![g0, g1], Some(vec![-3.5, f64::NEG_INFINITY]), [7u8; 32]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let uad = sample();
        let bytes = encode(&uad).unwrap();
        assert_eq!(&bytes[..4], b"ADUD");
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), uad);
        let mut uncal = uad.clone();
        uncal.thresholds = None;
        assert_eq!(decode(&encode(&uncal).unwrap(), Path::new("mem")).unwrap(), uncal);
    }

    #[test]
    fn corrupt_input_is_format_error() {
        let bytes = encode(&sample()).unwrap();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..cut], Path::new("x")),
                Err(Error::Format { .. })
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra, Path::new("x")), Err(Error::Format { .. })));
    }
}
