//! Small dense numerical kernel: weighted least squares through a
//! Householder QR, an LU solver for the p×p systems that show up in the
//! influence corrections, and a step-halving Newton solver for the
//! logistic likelihood.

use crate::error::{Error, Result};

/// Relative pivot tolerance used for every rank decision in the crate.
pub const RANK_TOL: f64 = 1e-12;

/// Dense row-major design matrix with column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if cols == 0 || rows < cols {
            return Err(Error::DimensionMismatch(format!(
                "design needs n >= p >= 1, got n = {rows}, p = {cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if labels.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {cols} labels, got {}",
                labels.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite design entry at row {}, column `{}`",
                pos / cols,
                labels[pos % cols]
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            labels,
        })
    }

    /// Build from a list of rows; labels default to `c0, c1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let labels = (0..cols).map(|k| format!("c{k}")).collect();
        Self::new(rows.len(), cols, rows.concat(), labels)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.cols + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, k)).collect()
    }

    /// X β for every row.
    pub fn mul_vec(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }
}

/// Outcome of a kernel solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the final estimating-equation residual (normal equations
    /// for least squares, score for the logistic fit).
    pub grad_norm: f64,
    /// Deviance after each accepted Newton step, starting value first.
    /// Empty for least squares.
    pub deviance_trace: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Numerically stable logistic function.
pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Minimizes Σ w_i (y_i − X_i β)² over the rows with positive weight.
///
/// Columns are equilibrated before a Householder QR; a diagonal entry of R
/// below `RANK_TOL` times the largest one is reported as rank deficiency.
/// One step of iterative refinement on the normal equations follows.
pub fn least_squares(x: &DesignMatrix, y: &[f64], w: Option<&[f64]>) -> Result<SolveReport> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {n} rows",
            y.len()
        )));
    }
    if let Some(w) = w {
        if w.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "weights have length {}, design has {n} rows",
                w.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
    }
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let support: Vec<usize> = (0..n).filter(|&i| weight(i) > 0.0).collect();
    for &i in &support {
        if !y[i].is_finite() {
            return Err(Error::InvalidInput(format!("non-finite response at row {i}")));
        }
    }
    let m = support.len();
    if m < p {
        return Err(Error::rank(format!("{m} weighted rows for {p} columns")));
    }

    // Column-major scaled copy: a[k][r] = sqrt(w) X[i, k] / scale_k.
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            support
                .iter()
                .map(|&i| weight(i).sqrt() * x.get(i, k))
                .collect()
        })
        .collect();
    let mut scale = vec![1.0; p];
    for k in 0..p {
        let norm = a[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::rank(format!("column `{}` is zero on the support", x.labels()[k])));
        }
        scale[k] = norm;
        a[k].iter_mut().for_each(|v| *v /= norm);
    }
    let b: Vec<f64> = support.iter().map(|&i| weight(i).sqrt() * y[i]).collect();
    let a_orig = a.clone();

    let qr = Householder::factor(a)?;
    if let Some(k) = qr.deficient_column() {
        return Err(Error::rank(format!(
            "column `{}` is numerically dependent on the preceding columns",
            x.labels()[k]
        )));
    }

    let mut coef = qr.solve_ls(&b);
    // residual r = b - A coef, g = A^T r, refine with (R^T R) d = g
    let resid = |coef: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|r| b[r] - (0..p).map(|k| a_orig[k][r] * coef[k]).sum::<f64>())
            .collect()
    };
    let r = resid(&coef);
    let g: Vec<f64> = (0..p).map(|k| dot(&a_orig[k], &r)).collect();
    let d = qr.solve_normal(&g);
    coef.iter_mut().zip(&d).for_each(|(c, d)| *c += d);

    let beta: Vec<f64> = coef.iter().zip(&scale).map(|(c, s)| c / s).collect();

    // Report the unscaled normal-equation residual Σ w X_k r.
    let mut grad = vec![0.0; p];
    for &i in &support {
        let ri = weight(i) * (y[i] - dot(x.row(i), &beta));
        for (g, xk) in grad.iter_mut().zip(x.row(i)) {
            *g += xk * ri;
        }
    }
    Ok(SolveReport {
        coefficients: beta,
        converged: true,
        iterations: 1,
        grad_norm: sup_norm(&grad),
        deviance_trace: Vec::new(),
    })
}

/// Householder QR of a column-major m×p matrix.
struct Householder {
    /// Column-major: R above the diagonal, Householder vectors below.
    qr: Vec<Vec<f64>>,
    rdiag: Vec<f64>,
    m: usize,
}

impl Householder {
    fn factor(mut a: Vec<Vec<f64>>) -> Result<Self> {
        let p = a.len();
        let m = a[0].len();
        let mut rdiag = vec![0.0; p];
        for k in 0..p {
            let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                rdiag[k] = 0.0;
                continue;
            }
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            // v = a_k - alpha e_k, stored in place, normalized so v_k = 1 is implicit via beta.
            a[k][k] -= alpha;
            let vnorm2: f64 = a[k][k..].iter().map(|v| v * v).sum();
            for j in (k + 1)..p {
                let s: f64 = (k..m).map(|r| a[k][r] * a[j][r]).sum::<f64>() * 2.0 / vnorm2;
                for r in k..m {
                    let vk = a[k][r];
                    a[j][r] -= s * vk;
                }
            }
            rdiag[k] = alpha;
        }
        Ok(Self { qr: a, rdiag, m })
    }

    fn deficient_column(&self) -> Option<usize> {
        let largest = self.rdiag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.rdiag
            .iter()
            .position(|v| !(v.abs() > RANK_TOL * largest))
    }

    fn apply_qt(&self, b: &[f64]) -> Vec<f64> {
        let mut b = b.to_vec();
        let p = self.qr.len();
        for k in 0..p {
            let v = &self.qr[k];
            let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            let s: f64 = (k..self.m).map(|r| v[r] * b[r]).sum::<f64>() * 2.0 / vnorm2;
            for r in k..self.m {
                b[r] -= s * v[r];
            }
        }
        b
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.rdiag[i]
        } else {
            self.qr[j][i]
        }
    }

    fn back_substitute(&self, rhs: &mut [f64]) {
        let p = self.qr.len();
        for i in (0..p).rev() {
            let mut s = rhs[i];
            for j in (i + 1)..p {
                s -= self.r(i, j) * rhs[j];
            }
            rhs[i] = s / self.rdiag[i];
        }
    }

    fn solve_ls(&self, b: &[f64]) -> Vec<f64> {
        let p = self.qr.len();
        let qtb = self.apply_qt(b);
        let mut x = qtb[..p].to_vec();
        self.back_substitute(&mut x);
        x
    }

    /// Solves (R^T R) x = g.
    fn solve_normal(&self, g: &[f64]) -> Vec<f64> {
        let p = self.qr.len();
        let mut z = g.to_vec();
        for i in 0..p {
            let mut s = z[i];
            for j in 0..i {
                s -= self.r(j, i) * z[j];
            }
            z[i] = s / self.rdiag[i];
        }
        self.back_substitute(&mut z);
        z
    }
}

/// Solves the p×p system `a x = b` (row-major `a`) by LU with partial
/// pivoting. Returns `None` when a pivot falls below `RANK_TOL` times the
/// largest absolute entry of the row-equilibrated matrix.
pub fn solve_square(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    debug_assert_eq!(a.len(), p * p);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for i in 0..p {
        let rs = sup_norm(&m[i * p..(i + 1) * p]);
        if !(rs > 0.0) || !rs.is_finite() {
            return None;
        }
        m[i * p..(i + 1) * p].iter_mut().for_each(|v| *v /= rs);
        x[i] /= rs;
    }
    for k in 0..p {
        let (piv, pmax) = (k..p)
            .map(|i| (i, m[i * p + k].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(pmax > RANK_TOL) {
            return None;
        }
        if piv != k {
            for j in 0..p {
                m.swap(k * p + j, piv * p + j);
            }
            x.swap(k, piv);
        }
        for i in (k + 1)..p {
            let f = m[i * p + k] / m[k * p + k];
            if f != 0.0 {
                for j in k..p {
                    m[i * p + j] -= f * m[k * p + j];
                }
                x[i] -= f * x[k];
            }
        }
    }
    for i in (0..p).rev() {
        let mut s = x[i];
        for j in (i + 1)..p {
            s -= m[i * p + j] * x[j];
        }
        x[i] = s / m[i * p + i];
    }
    Some(x)
}

/// Options for [`logistic_newton`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Tolerance on the sup-norm of the score.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Coefficients beyond this sup-norm are taken as divergence.
    pub divergence_bound: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
            divergence_bound: 1e4,
        }
    }
}

/// Any fitted probability this close to 0 or 1 at convergence is read as
/// quasi-complete separation.
const SATURATION: f64 = 1e-8;

/// Relative slack when comparing deviances of successive Newton steps;
/// near the optimum the difference is below summation rounding.
const DEVIANCE_SLACK: f64 = 1e-12;

struct LogisticState {
    coef: Vec<f64>,
    prob: Vec<f64>,
    deviance: f64,
    score: Vec<f64>,
}

impl LogisticState {
    fn eval(x: &DesignMatrix, t: &[bool], coef: Vec<f64>) -> Self {
        let p = x.ncols();
        let mut prob = Vec::with_capacity(x.nrows());
        let mut deviance = 0.0;
        let mut score = vec![0.0; p];
        for (i, &ti) in t.iter().enumerate() {
            let row = x.row(i);
            let eta = dot(row, &coef);
            let pi = expit(eta);
            deviance += 2.0 * if ti { softplus(-eta) } else { softplus(eta) };
            // t - expit(eta), written to keep precision near saturation
            let resid = if ti { expit(-eta) } else { -pi };
            for (s, xk) in score.iter_mut().zip(row) {
                *s += resid * xk;
            }
            prob.push(pi);
        }
        Self {
            coef,
            prob,
            deviance,
            score,
        }
    }
}

/// Maximum-likelihood logistic regression by Newton–Raphson from zero.
pub fn logistic_newton(x: &DesignMatrix, t: &[bool], opts: NewtonOptions) -> Result<SolveReport> {
    logistic_newton_from(x, t, &vec![0.0; x.ncols()], opts)
}

/// Newton–Raphson with step halving from a given start.
///
/// Deviance below 2 ln 2 certifies complete separation: every observation
/// is then strictly on its own side of the fitted boundary.
pub fn logistic_newton_from(
    x: &DesignMatrix,
    t: &[bool],
    start: &[f64],
    opts: NewtonOptions,
) -> Result<SolveReport> {
    let n = x.nrows();
    let p = x.ncols();
    if t.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "indicator has length {}, design has {n} rows",
            t.len()
        )));
    }
    if start.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "start has length {}, design has {p} columns",
            start.len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let ones = t.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(Error::OneClassOnly);
    }
    let complete_separation = 2.0 * std::f64::consts::LN_2;

    let mut state = LogisticState::eval(x, t, start.to_vec());
    let mut trace = vec![state.deviance];
    let mut iterations = 0;

    while sup_norm(&state.score) > opts.tol && iterations < opts.max_iter {
        if sup_norm(&state.coef) > opts.divergence_bound {
            return Err(Error::Separated);
        }
        let mut hess = vec![0.0; p * p];
        for i in 0..n {
            let row = x.row(i);
            let w = state.prob[i] * (1.0 - state.prob[i]);
            for a in 0..p {
                let wa = w * row[a];
                for b in a..p {
                    hess[a * p + b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[a * p + b] = hess[b * p + a];
            }
        }
        let step = match solve_square(&hess, &state.score) {
            Some(s) => s,
            None if saturated(&state.prob) => return Err(Error::Separated),
            None => return Err(Error::rank("logistic information matrix")),
        };

        let mut accepted = None;
        let mut factor = 1.0;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = state
                .coef
                .iter()
                .zip(&step)
                .map(|(c, s)| c + factor * s)
                .collect();
            let next = LogisticState::eval(x, t, cand);
            if next.deviance <= state.deviance * (1.0 + DEVIANCE_SLACK) {
                accepted = Some(next);
                break;
            }
            factor *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        iterations += 1;
        state = next;
        trace.push(state.deviance);
        if state.deviance < complete_separation {
            return Err(Error::Separated);
        }
    }

    let grad_norm = sup_norm(&state.score);
    if grad_norm > opts.tol {
        if saturated(&state.prob) || sup_norm(&state.coef) > opts.divergence_bound {
            return Err(Error::Separated);
        }
        return Err(Error::NotConverged {
            iterations,
            grad_norm,
        });
    }
    if saturated(&state.prob) {
        return Err(Error::Separated);
    }
    Ok(SolveReport {
        coefficients: state.coef,
        converged: true,
        iterations,
        grad_norm,
        deviance_trace: trace,
    })
}

fn saturated(prob: &[f64]) -> bool {
    prob.iter().any(|&p| p < SATURATION || p > 1.0 - SATURATION)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DesignMatrix {
        DesignMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn exact_linear_fit() {
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let r = least_squares(&x, &[1.0, 2.0, 3.0], None).unwrap();
        assert!((r.coefficients[0] - 1.0).abs() < 1e-14);
        assert!((r.coefficients[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn intercept_only_is_mean() {
        let x = mat(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let r = least_squares(&x, &[2.0, 4.0, 6.0, 8.0], Some(&[1.0; 4])).unwrap();
        assert!((r.coefficients[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_fit_matches_hand_normal_equations() {
        // Σw = 6, Σwx = 10, Σwx² = 24, Σwy = 9, Σwxy = 22
        // [6 10; 10 24] β = (9, 22) → β = (-1/11, 21/22)
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]);
        let r = least_squares(&x, &[0.0, 1.0, 1.0, 3.0], Some(&[1.0, 2.0, 1.0, 2.0])).unwrap();
        assert!((r.coefficients[0] + 1.0 / 11.0).abs() < 1e-14);
        assert!((r.coefficients[1] - 21.0 / 22.0).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 9.0]]);
        let r = least_squares(&x, &[1.0, 2.0, 3.0, 1e6], Some(&[1.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((r.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_rank_deficient() {
        let x = mat(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(
            least_squares(&x, &[1.0, 2.0, 3.0], None),
            Err(Error::RankDeficient { .. })
        ));
        // too few weighted rows
        let x = mat(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        assert!(matches!(
            least_squares(&x, &[1.0, 2.0, 3.0], Some(&[1.0, 0.0, 0.0])),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let x = mat(&[&[1.0], &[1.0]]);
        assert!(matches!(
            least_squares(&x, &[1.0], None),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(DesignMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn solve_square_detects_singularity() {
        assert!(solve_square(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]).is_none());
        let x = solve_square(&[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn expit_examples() {
        assert_eq!(expit(0.0), 0.5);
        let v = expit(700.0);
        assert_eq!(v, 1.0);
        assert!(expit(-700.0) > 0.0);
        assert!((expit(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(expit(-745.0) >= 0.0);
    }

    #[test]
    fn logistic_intercept_only() {
        let x = mat(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let r = logistic_newton(&x, &[true, true, true, false], NewtonOptions::default()).unwrap();
        assert!((r.coefficients[0] - 3f64.ln()).abs() < 1e-10);
        let x = mat(&[&[1.0], &[1.0]]);
        let r = logistic_newton(&x, &[true, false], NewtonOptions::default()).unwrap();
        assert_eq!(r.coefficients[0], 0.0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn logistic_separated() {
        let x = mat(&[&[1.0, -1.0], &[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0]]);
        let r = logistic_newton(&x, &[false, false, true, true], NewtonOptions::default());
        assert_eq!(r, Err(Error::Separated));
    }

    #[test]
    fn logistic_quasi_separated() {
        // x >= 1 always observed, x <= 1 mixed at x = 1 only
        let x = mat(&[
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[1.0, 1.0],
            &[1.0, 1.0],
            &[1.0, 2.0],
            &[1.0, 3.0],
        ]);
        let r = logistic_newton(
            &x,
            &[false, false, true, false, true, true],
            NewtonOptions::default(),
        );
        assert_eq!(r, Err(Error::Separated));
    }

    #[test]
    fn logistic_one_class() {
        let x = mat(&[&[1.0], &[1.0], &[1.0]]);
        assert_eq!(
            logistic_newton(&x, &[true, true, true], NewtonOptions::default()),
            Err(Error::OneClassOnly)
        );
    }

    #[test]
    fn logistic_not_converged_when_out_of_iterations() {
        let x = mat(&[&[1.0, 0.5], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0], &[1.0, -1.0]]);
        let t = [true, false, true, true, false];
        let opts = NewtonOptions {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(
            logistic_newton(&x, &t, opts),
            Err(Error::NotConverged { iterations: 1, .. })
        ));
        assert!(logistic_newton(&x, &t, NewtonOptions::default()).is_ok());
    }
}
