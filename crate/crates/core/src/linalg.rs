//! Small dense least-squares helper shared by the fitters.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative singular-value threshold below which a column set is rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Solves `min ||A x - y||` where `A` is given column-wise.
///
/// Columns are scaled to unit norm before the SVD so that badly scaled
/// bases (e.g. `t` next to `cos(wt)`) do not trip the rank test.
pub fn lstsq(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = columns.len();
    if p == 0 {
        return Ok(Vec::new());
    }
    let n = y.len();
    for c in columns {
        if c.len() != n {
            return Err(Error::LengthMismatch(c.len(), n));
        }
    }
    if n < p {
        return Err(Error::RankDeficient(format!("{n} rows for {p} unknowns")));
    }
    let norms: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::RankDeficient(format!("column {j} is zero")));
    }
    let a = DMatrix::from_fn(n, p, |i, j| columns[j][i] / norms[j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient(format!(
            "condition {:.3e}",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(x.iter().zip(&norms).map(|(v, s)| v / s).collect())
}

/// Evaluates `sum c[i] x^i` by Horner's rule.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        let sol = lstsq(&[vec![1.0; 10], x], &y).unwrap();
        assert!((sol[0] - 3.0).abs() < 1e-12);
        assert!((sol[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_rejected() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(matches!(
            lstsq(&[x.clone(), x2], &x),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn horner() {
        assert_eq!(polyval(&[1.0, 2.0, 3.0], 2.0), 17.0);
        assert_eq!(polyval(&[], 2.0), 0.0);
    }
}
