//! Coordinate-descent LASSO: `min ½‖Ax - y‖² + λ‖x‖₁`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub const MAX_SWEEPS: usize = 100_000;
/// Duality-gap tolerance relative to `‖y‖²`.
pub const GAP_TOLERANCE: f64 = 1e-8;
/// Subgradient (KKT) tolerance relative to the penalty.
pub const KKT_TOLERANCE: f64 = 1e-6;
/// Sweeps after which the exact homotopy path is tried.
const HOMOTOPY_AFTER: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LassoOptions {
    /// Restrict to `x ≥ 0`.
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub x: DVector<f64>,
    pub gap: f64,
    pub sweeps: usize,
}

/// Reusable solver state for one design matrix.
pub struct Lasso<'a> {
    a: &'a DMatrix<f64>,
    col_sq: Vec<f64>,
    options: LassoOptions,
}

impl<'a> Lasso<'a> {
    pub fn new(a: &'a DMatrix<f64>, options: LassoOptions) -> Self {
        let col_sq = a.column_iter().map(|c| c.norm_squared()).collect();
        Self { a, col_sq, options }
    }

    /// Smallest penalty at which `x = 0` is optimal.
    pub fn null_penalty(&self, y: &DVector<f64>) -> f64 {
        let g = self.a.tr_mul(y);
        if self.options.nonnegative {
            g.max().max(0.0)
        } else {
            g.amax()
        }
    }

    fn violation(&self, g: f64, xi: f64, penalty: f64) -> f64 {
        if xi > 0.0 {
            (g - penalty).abs()
        } else if xi < 0.0 {
            (g + penalty).abs()
        } else if self.options.nonnegative {
            (g - penalty).max(0.0)
        } else {
            (g.abs() - penalty).max(0.0)
        }
    }

    fn gap(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        r: &DVector<f64>,
        g: &DVector<f64>,
        penalty: f64,
    ) -> f64 {
        let primal = 0.5 * r.norm_squared() + penalty * x.lp_norm(1);
        let worst = if self.options.nonnegative {
            g.max().max(0.0)
        } else {
            g.amax()
        };
        let s = if worst > penalty {
            penalty / worst
        } else {
            1.0
        };
        let theta = r * s;
        let dual = 0.5 * y.norm_squared() - 0.5 * (y - theta).norm_squared();
        (primal - dual).max(0.0)
    }

    /// Exact solution for the current support and sign pattern:
    /// `x_S = (A_SᵀA_S)⁻¹(A_Sᵀy - λ·sign(x_S))`. Coordinate descent crawls
    /// when columns are nearly collinear; once it has found the right active
    /// set this finishes the job. Returns `None` if the signs do not persist.
    fn polish(&self, y: &DVector<f64>, x: &DVector<f64>, penalty: f64) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
        if support.is_empty() || support.len() > self.a.nrows() {
            return None;
        }
        let sub = self.a.select_columns(&support);
        let gram = sub.tr_mul(&sub);
        let sign = DVector::from_iterator(support.len(), support.iter().map(|&i| x[i].signum()));
        let rhs = sub.tr_mul(y) - sign.clone() * penalty;
        let coef = gram.cholesky()?.solve(&rhs);
        if coef.iter().zip(sign.iter()).any(|(c, s)| c * s <= 0.0) {
            return None;
        }
        let mut out = DVector::zeros(x.len());
        for (k, &i) in support.iter().enumerate() {
            out[i] = coef[k];
        }
        Some(out)
    }

    /// Gap of `x` if it meets both stopping tolerances.
    fn certify(
        &self,
        y: &DVector<f64>,
        x: &DVector<f64>,
        penalty: f64,
        kkt_tol: f64,
        gap_tol: f64,
    ) -> Option<f64> {
        let r = y - self.a * x;
        let g = self.a.tr_mul(&r);
        let kkt = (0..x.len())
            .map(|i| self.violation(g[i], x[i], penalty))
            .fold(0.0, f64::max);
        let gap = if penalty > 0.0 {
            self.gap(y, x, &r, &g, penalty)
        } else {
            0.0
        };
        (kkt <= kkt_tol && gap <= gap_tol).then_some(gap)
    }

    /// Exact solutions at each of the descending `penalties`, found by
    /// following the piecewise-linear solution path down from the null
    /// penalty (LARS with the LASSO drop rule). `None` if the path cannot
    /// be followed, e.g. when the active Gram matrix becomes singular.
    pub fn homotopy_path(&self, y: &DVector<f64>, penalties: &[f64]) -> Option<Vec<DVector<f64>>> {
        let (m, n) = self.a.shape();
        let nonneg = self.options.nonnegative;
        let mut out = Vec::with_capacity(penalties.len());
        let mut x = DVector::<f64>::zeros(n);
        let mut lambda = self.null_penalty(y);
        let mut next = 0;
        while next < penalties.len() && penalties[next] >= lambda {
            out.push(x.clone());
            next += 1;
        }
        if next == penalties.len() {
            return Some(out);
        }
        let c0 = self.a.tr_mul(y);
        let first = if nonneg { c0.imax() } else { c0.iamax() };
        let mut active = vec![first];
        let mut signs = vec![if nonneg { 1.0 } else { c0[first].signum() }];
        let mut dropped: Option<usize> = None;
        let tiny = 1e-14 * lambda;
        for _ in 0..20 * (m + n) {
            let r = y - self.a * &x;
            let c = self.a.tr_mul(&r);
            let sub = self.a.select_columns(&active);
            let s = DVector::from_column_slice(&signs);
            let d = sub.tr_mul(&sub).cholesky()?.solve(&s);
            let a = self.a.tr_mul(&(&sub * &d));

            let mut gamma = lambda;
            let mut event: Option<(usize, bool)> = None;
            for j in 0..n {
                if Some(j) == dropped || self.col_sq[j] == 0.0 || active.contains(&j) {
                    continue;
                }
                let up = (lambda - c[j]) / (1.0 - a[j]);
                let down = (lambda + c[j]) / (1.0 + a[j]);
                for g in [Some(up), (!nonneg).then_some(down)].into_iter().flatten() {
                    if g > tiny && g < gamma {
                        gamma = g;
                        event = Some((j, true));
                    }
                }
            }
            for (k, &i) in active.iter().enumerate() {
                if d[k] * signs[k] < 0.0 {
                    let g = (-x[i] / d[k]).max(0.0);
                    if g < gamma {
                        gamma = g;
                        event = Some((k, false));
                    }
                }
            }
            // Record every requested penalty passed on this segment.
            while next < penalties.len() && penalties[next] >= lambda - gamma {
                let step = lambda - penalties[next].max(0.0);
                let mut xp = x.clone();
                for (k, &i) in active.iter().enumerate() {
                    xp[i] += step * d[k];
                }
                out.push(xp);
                next += 1;
            }
            if next == penalties.len() {
                return Some(out);
            }
            for (k, &i) in active.iter().enumerate() {
                x[i] += gamma * d[k];
            }
            lambda -= gamma;
            match event {
                None => return None,
                Some((j, true)) => {
                    if active.len() >= m {
                        return None;
                    }
                    let cj = c[j] - gamma * a[j];
                    active.push(j);
                    signs.push(if nonneg { 1.0 } else { cj.signum() });
                    dropped = None;
                }
                Some((k, false)) => {
                    let i = active.remove(k);
                    signs.remove(k);
                    x[i] = 0.0;
                    dropped = Some(i);
                    if active.is_empty() {
                        return None;
                    }
                }
            }
        }
        None
    }

    fn homotopy(&self, y: &DVector<f64>, penalty: f64) -> Option<DVector<f64>> {
        self.homotopy_path(y, &[penalty]).and_then(|mut v| v.pop())
    }

    /// Solves at `penalty`, starting from `warm` if given.
    pub fn solve(
        &self,
        y: &DVector<f64>,
        penalty: f64,
        warm: Option<&DVector<f64>>,
    ) -> Result<LassoSolution> {
        let (m, n) = self.a.shape();
        if y.len() != m {
            return Err(invalid(format!(
                "expected {m} measurements, got {}",
                y.len()
            )));
        }
        if !(penalty.is_finite() && penalty >= 0.0) {
            return Err(invalid(format!(
                "penalty must be finite and non-negative, got {penalty}"
            )));
        }
        let mut x = match warm {
            Some(w) if w.len() == n => w.clone(),
            _ => DVector::zeros(n),
        };
        if self.options.nonnegative {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let y_sq = y.norm_squared();
        if y_sq == 0.0 && penalty > 0.0 {
            return Ok(LassoSolution {
                x: DVector::zeros(n),
                gap: 0.0,
                sweeps: 0,
            });
        }
        let mut r = y - self.a * &x;
        let gap_tol = GAP_TOLERANCE * y_sq;
        let kkt_tol = if penalty > 0.0 {
            KKT_TOLERANCE * penalty
        } else {
            KKT_TOLERANCE * self.null_penalty(y).max(f64::MIN_POSITIVE)
        };

        let mut sweeps = 0;
        let mut full = true;
        let mut tried_homotopy = false;
        loop {
            let mut max_delta: f64 = 0.0;
            for i in 0..n {
                if self.col_sq[i] == 0.0 || (!full && x[i] == 0.0) {
                    continue;
                }
                let col = self.a.column(i);
                let z = x[i] + col.dot(&r) / self.col_sq[i];
                let t = penalty / self.col_sq[i];
                let new = if self.options.nonnegative {
                    (z - t).max(0.0)
                } else {
                    z.signum() * (z.abs() - t).max(0.0)
                };
                let d = new - x[i];
                if d != 0.0 {
                    r.axpy(-d, &col, 1.0);
                    x[i] = new;
                    max_delta = max_delta.max(d.abs() * self.col_sq[i].sqrt());
                }
            }
            sweeps += 1;

            let settled = max_delta <= 1e-12 * y_sq.sqrt().max(f64::MIN_POSITIVE);
            if full || settled || sweeps % 64 == 0 {
                let g = self.a.tr_mul(&r);
                let kkt = (0..n)
                    .map(|i| self.violation(g[i], x[i], penalty))
                    .fold(0.0, f64::max);
                let gap = if penalty > 0.0 {
                    self.gap(y, &x, &r, &g, penalty)
                } else {
                    0.0
                };
                if kkt <= kkt_tol && gap <= gap_tol {
                    return Ok(LassoSolution { x, gap, sweeps });
                }
                if let Some(p) = self.polish(y, &x, penalty) {
                    if let Some(gap) = self.certify(y, &p, penalty, kkt_tol, gap_tol) {
                        return Ok(LassoSolution { x: p, gap, sweeps });
                    }
                }
                if sweeps >= HOMOTOPY_AFTER && !tried_homotopy {
                    tried_homotopy = true;
                    if let Some(p) = self.homotopy(y, penalty) {
                        if let Some(gap) = self.certify(y, &p, penalty, kkt_tol, gap_tol) {
                            return Ok(LassoSolution { x: p, gap, sweeps });
                        }
                    }
                }
                if !gap.is_finite() {
                    return Err(Error::SolverFailure { gap, sweeps });
                }
                if sweeps >= MAX_SWEEPS {
                    log::debug!(
                        "lasso stopped at the sweep limit with gap {gap:e} (penalty {penalty:e})"
                    );
                    return Ok(LassoSolution { x, gap, sweeps });
                }
                // After the active set settles, re-examine every coordinate.
                full = settled && !full;
            } else if sweeps >= MAX_SWEEPS {
                let g = self.a.tr_mul(&r);
                let gap = self.gap(y, &x, &r, &g, penalty);
                if !gap.is_finite() {
                    return Err(Error::SolverFailure { gap, sweeps });
                }
                log::debug!(
                    "lasso stopped at the sweep limit with gap {gap:e} (penalty {penalty:e})"
                );
                return Ok(LassoSolution { x, gap, sweeps });
            }
        }
    }

    /// Solutions along a descending penalty path. The exact homotopy path is
    /// used where it certifies; remaining penalties fall back to warm-started
    /// coordinate descent.
    pub fn path(&self, y: &DVector<f64>, penalties: &[f64]) -> Result<Vec<DVector<f64>>> {
        let exact = self.homotopy_path(y, penalties);
        let y_sq = y.norm_squared();
        let null = self.null_penalty(y).max(f64::MIN_POSITIVE);
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(penalties.len());
        for (k, &p) in penalties.iter().enumerate() {
            if let Some(x) = exact.as_ref().map(|e| &e[k]) {
                let kkt_tol = KKT_TOLERANCE * if p > 0.0 { p } else { null };
                if self
                    .certify(y, x, p, kkt_tol, GAP_TOLERANCE * y_sq)
                    .is_some()
                {
                    out.push(x.clone());
                    continue;
                }
            }
            let warm = exact.as_ref().map(|e| &e[k]).or(out.last());
            let sol = self.solve(y, p, warm)?;
            out.push(sol.x);
        }
        Ok(out)
    }
}

/// One-shot LASSO solve.
pub fn lasso_solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: f64,
    options: LassoOptions,
) -> Result<LassoSolution> {
    Lasso::new(a, options).solve(y, penalty, None)
}

/// Least squares restricted to `support`, minimum-norm when rank deficient.
pub fn refit_on_support(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if support.is_empty() {
        return x;
    }
    let sub = a.select_columns(support);
    let svd = sub.svd(true, true);
    let coef = svd
        .solve(y, 1e-12 * svd.singular_values.max())
        .expect("both factors were requested");
    for (k, &i) in support.iter().enumerate() {
        x[i] = coef[k];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_problem(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        (a, y)
    }

    #[test]
    fn zero_measurements_give_zero() {
        let (a, _) = random_problem(5, 12, 1);
        let sol = lasso_solve(&a, &DVector::zeros(5), 0.3, LassoOptions::default()).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn null_threshold() {
        let (a, y) = random_problem(6, 20, 2);
        let solver = Lasso::new(&a, LassoOptions::default());
        let lmax = solver.null_penalty(&y);
        let sol = solver.solve(&y, lmax, None).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
        let below = solver.solve(&y, 0.9 * lmax, None).unwrap();
        assert!(below.x.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn kkt_holds_at_solution() {
        for seed in 0..20 {
            let (a, y) = random_problem(8, 30, seed);
            for nonneg in [false, true] {
                let opts = LassoOptions {
                    nonnegative: nonneg,
                };
                let solver = Lasso::new(&a, opts);
                let pen = 0.1 * solver.null_penalty(&y);
                let sol = solver.solve(&y, pen, None).unwrap();
                let g = a.tr_mul(&(&y - &a * &sol.x));
                for i in 0..30 {
                    assert!(solver.violation(g[i], sol.x[i], pen) <= 1e-6 * pen);
                    if nonneg {
                        assert!(sol.x[i] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn homotopy_matches_coordinate_descent() {
        for seed in 0..20 {
            let (a, y) = random_problem(8, 30, seed);
            for nonneg in [false, true] {
                let solver = Lasso::new(
                    &a,
                    LassoOptions {
                        nonnegative: nonneg,
                    },
                );
                let top = solver.null_penalty(&y);
                let pens: Vec<f64> = (1..6).map(|k| top * 0.5f64.powi(k)).collect();
                let path = solver.homotopy_path(&y, &pens).unwrap();
                for (p, x) in pens.iter().zip(&path) {
                    let g = a.tr_mul(&(&y - &a * x));
                    for i in 0..30 {
                        assert!(
                            solver.violation(g[i], x[i], *p) <= 1e-9 * p,
                            "seed {seed} nonneg {nonneg}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn refit_is_least_squares() {
        let (a, y) = random_problem(10, 6, 3);
        let x = refit_on_support(&a, &y, &[1, 4]);
        let r = &y - &a * &x;
        assert!(a.column(1).dot(&r).abs() < 1e-10);
        assert!(a.column(4).dot(&r).abs() < 1e-10);
        assert_eq!(x[0], 0.0);
    }
}
