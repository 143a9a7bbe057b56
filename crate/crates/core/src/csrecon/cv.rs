//! K-fold cross-validation of the LASSO penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lasso::{Lasso, LassoOptions};
use crate::error::{invalid, Result};

pub const PATH_LENGTH: usize = 50;
/// Smallest penalty on the path relative to the null penalty.
pub const PATH_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub penalty: f64,
    pub mean_error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Penalty picked by the one-standard-error rule.
    pub penalty: f64,
    /// Penalty with the smallest mean held-out error.
    pub min_penalty: f64,
    pub path: Vec<CvPoint>,
}

/// `count` log-spaced penalties from `top` down to `PATH_RATIO·top`.
pub fn penalty_path(top: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![top];
    }
    let lo = (PATH_RATIO * top).ln();
    let hi = top.ln();
    (0..count)
        .map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Interleaved folds (`row % folds`, capped at one row per fold); held-out
/// error is the mean squared residual of the LASSO fit (not refit) on the
/// held-out rows.
pub fn cross_validate(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    options: LassoOptions,
) -> Result<CvResult> {
    let m = a.nrows();
    if folds < 2 {
        return Err(invalid(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if m < 2 {
        return Err(invalid(format!(
            "cross-validation needs at least 2 measurements, got {m}"
        )));
    }
    // Fewer rows than folds: leave one out.
    let folds = folds.min(m);
    let top = Lasso::new(a, options).null_penalty(y);
    if top == 0.0 {
        return Ok(CvResult {
            penalty: 0.0,
            min_penalty: 0.0,
            path: Vec::new(),
        });
    }
    let penalties = penalty_path(top, PATH_LENGTH);
    // errors[p][f]: held-out error of penalty p on fold f.
    let mut errors = vec![vec![0.0; folds]; penalties.len()];
    #[allow(clippy::needless_range_loop)]
    for f in 0..folds {
        let train: Vec<usize> = (0..m).filter(|j| j % folds != f).collect();
        let test: Vec<usize> = (0..m).filter(|j| j % folds == f).collect();
        let a_tr = a.select_rows(&train);
        let y_tr = DVector::from_iterator(train.len(), train.iter().map(|&j| y[j]));
        let a_te = a.select_rows(&test);
        let y_te = DVector::from_iterator(test.len(), test.iter().map(|&j| y[j]));
        let solver = Lasso::new(&a_tr, options);
        let xs = solver.path(&y_tr, &penalties)?;
        for (p, x) in xs.iter().enumerate() {
            errors[p][f] = (&y_te - &a_te * x).norm_squared() / test.len() as f64;
        }
    }
    let path: Vec<CvPoint> = penalties
        .iter()
        .zip(&errors)
        .map(|(&penalty, e)| {
            let mean = e.iter().sum::<f64>() / folds as f64;
            let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (folds - 1) as f64;
            CvPoint {
                penalty,
                mean_error: mean,
                stderr: (var / folds as f64).sqrt(),
            }
        })
        .collect();
    let best = path
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean_error.total_cmp(&b.1.mean_error))
        .map(|(i, _)| i)
        .expect("path is non-empty");
    let limit = path[best].mean_error + path[best].stderr;
    // Penalties descend along the path; the first within one SE is the largest.
    let chosen = path
        .iter()
        .position(|p| p.mean_error <= limit)
        .unwrap_or(best);
    Ok(CvResult {
        penalty: path[chosen].penalty,
        min_penalty: path[best].penalty,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_endpoints() {
        let p = penalty_path(2.0, 50);
        assert_eq!(p.len(), 50);
        assert!((p[0] - 2.0).abs() < 1e-14);
        assert!((p[49] - 2e-4).abs() < 1e-16);
        assert!(p.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn fold_count_is_checked() {
        let a = DMatrix::from_element(3, 4, 1.0);
        let y = DVector::from_element(3, 1.0);
        assert!(cross_validate(&a, &y, 1, LassoOptions::default()).is_err());
        assert!(cross_validate(&a, &y, 4, LassoOptions::default()).is_ok());
        let one = DMatrix::from_element(1, 4, 1.0);
        assert!(cross_validate(
            &one,
            &DVector::from_element(1, 1.0),
            10,
            LassoOptions::default()
        )
        .is_err());
    }
}
