//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Serialize a `DMatrix` as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Cholesky factor of a symmetric PSD matrix. On failure adds
/// `1e-10 * tr(K)/n` to the diagonal and retries, growing tenfold up to three
/// times. Returns the factor and the jitter that was used.
pub fn cholesky_jitter(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let n = k.nrows().max(1) as f64;
    let mut jitter = 1e-10 * (k.trace().abs() / n).max(f64::MIN_POSITIVE);
    for _ in 0..=3 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            log::debug!("cholesky needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::LinearAlgebra(format!(
        "matrix not positive definite even with jitter {:e}",
        jitter / 10.0
    )))
}

pub fn logdet_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// `ln det` of a symmetric positive-definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let (c, _) = cholesky_jitter(m)?;
    Ok(logdet_chol(&c))
}

/// Conjugate gradient for `A x = b` with `A` given as a matrix-vector product.
/// Returns `(x, iterations, residual_norm)`.
pub fn conjugate_gradient<F>(apply: F, b: &DVector<f64>, max_iter: usize, tol: f64) -> (DVector<f64>, usize, f64)
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut it = 0;
    while it < max_iter && rr.sqrt() > tol {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
        it += 1;
    }
    (x, it, rr.sqrt())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn mean_rows(rows: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut m = DVector::zeros(dim);
    for r in rows {
        m += r;
    }
    if !rows.is_empty() {
        m /= rows.len() as f64;
    }
    m
}
