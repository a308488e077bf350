//! Small dense linear algebra, the stochastic Lyapunov equation
//! `PA + AᵀP + Σ SᵢᵀPSᵢ = −Q`, and the local quadratic certificate.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::expr::{EvalError, Expr};
use crate::system::StochasticSystem;
use crate::verify::{self, Condition, Constraint, ExprFn, LevelError, LevelOptions, VerifyOptions, VerifyOutcome};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// # Panics
    /// If `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Matrix { rows, cols, data }
    }

    /// # Panics
    /// If the rows are ragged.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix { rows: rows.len(), cols, data: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// # Panics
    /// On a shape mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "shape mismatch in matmul");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch in add");
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * c).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|a| a * a).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = 1.0 + self.max_abs();
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale))
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                s += x[i] * self[(i, j)] * x[j];
            }
        }
        s
    }

    /// Solve `M y = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinAlgError> {
        let n = self.rows;
        if !self.is_square() || b.len() != n {
            return Err(LinAlgError::Shape);
        }
        let mut a = self.data.clone();
        let mut y = b.to_vec();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
            if a[piv * n + col].abs() <= 1e-13 * scale {
                return Err(LinAlgError::Singular);
            }
            if piv != col {
                for k in 0..n {
                    a.swap(col * n + k, piv * n + k);
                }
                y.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let factor = a[r * n + col] / d;
                if factor == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[r * n + k] -= factor * a[col * n + k];
                }
                y[r] -= factor * y[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = y[col];
            for k in col + 1..n {
                s -= a[col * n + k] * y[k];
            }
            y[col] = s / a[col * n + col];
        }
        Ok(y)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LinAlgError {
    #[error("matrix shapes do not match")]
    Shape,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("linear system is singular")]
    Singular,
    #[error("A is not Hurwitz")]
    NotHurwitz,
    #[error("Q is not positive definite (smallest eigenvalue {0})")]
    QNotPositiveDefinite(f64),
    #[error("P is not positive definite (smallest eigenvalue {0}); noise too strong for a quadratic certificate")]
    PNotPositiveDefinite(f64),
    #[error("Jacobi iteration did not converge")]
    NoConvergence,
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// ascending. Iterates until the off-diagonal norm is below `1e-12`
/// (relative to the Frobenius norm).
pub fn symmetric_eigen(m: &Matrix) -> Result<Vec<f64>, LinAlgError> {
    if !m.is_symmetric(1e-12) {
        return Err(LinAlgError::NotSymmetric);
    }
    let n = m.rows();
    let mut a = m.clone();
    let norm = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let off = |a: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        libm::sqrt(s)
    };
    let mut sweeps = 0;
    while off(&a) > 1e-12 * norm {
        sweeps += 1;
        if sweeps > 100 {
            return Err(LinAlgError::NoConvergence);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Matrix of the linear map `P ↦ PA + AᵀP + Σ SᵢᵀPSᵢ` on row-major
/// `vec(P)`.
pub fn lyapunov_operator(a: &Matrix, s: &[Matrix]) -> Matrix {
    let n = a.rows();
    let nn = n * n;
    let mut k = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for l in 0..n {
                // (PA)_ij = Σ_l P_il A_lj
                k[(row, i * n + l)] += a[(l, j)];
                // (AᵀP)_ij = Σ_l A_li P_lj
                k[(row, l * n + j)] += a[(l, i)];
            }
            for sk in s {
                for p in 0..n {
                    let spi = sk[(p, i)];
                    if spi == 0.0 {
                        continue;
                    }
                    for q in 0..n {
                        k[(row, p * n + q)] += spi * sk[(q, j)];
                    }
                }
            }
        }
    }
    k
}

fn solve_vectorized(a: &Matrix, s: &[Matrix], q: &Matrix) -> Result<Matrix, LinAlgError> {
    let n = a.rows();
    let rhs: Vec<f64> = q.data().iter().map(|v| -v).collect();
    let sol = lyapunov_operator(a, s).solve(&rhs)?;
    let p = Matrix::from_vec(n, n, sol);
    Ok(p.add(&p.transpose()).scale(0.5))
}

/// Hurwitz test via the Lyapunov criterion: `A` is Hurwitz iff
/// `AᵀX + XA = −I` has a positive definite solution.
pub fn is_hurwitz(a: &Matrix) -> bool {
    if !a.is_square() {
        return false;
    }
    match solve_vectorized(a, &[], &Matrix::identity(a.rows())) {
        Ok(x) => symmetric_eigen(&x).map(|ev| ev[0] > 0.0).unwrap_or(false),
        Err(_) => false,
    }
}

/// Solve `PA + AᵀP + Σ SᵢᵀPSᵢ = −Q` for symmetric positive definite `P`.
pub fn solve_stochastic_lyapunov(a: &Matrix, s: &[Matrix], q: &Matrix) -> Result<Matrix, LinAlgError> {
    let n = a.rows();
    if !a.is_square() || q.rows() != n || !q.is_square() || s.iter().any(|m| m.rows() != n || !m.is_square()) {
        return Err(LinAlgError::Shape);
    }
    let q_min = symmetric_eigen(q)?[0];
    if q_min <= 0.0 {
        return Err(LinAlgError::QNotPositiveDefinite(q_min));
    }
    if !is_hurwitz(a) {
        return Err(LinAlgError::NotHurwitz);
    }
    let p = solve_vectorized(a, s, q)?;
    let p_min = symmetric_eigen(&p)?[0];
    if p_min <= 0.0 {
        return Err(LinAlgError::PNotPositiveDefinite(p_min));
    }
    Ok(p)
}

/// `‖PA + AᵀP + Σ SᵢᵀPSᵢ + Q‖_F`.
pub fn lyapunov_residual(p: &Matrix, a: &Matrix, s: &[Matrix], q: &Matrix) -> f64 {
    let mut r = p.matmul(a).add(&a.transpose().matmul(p)).add(q);
    for sk in s {
        r = r.add(&sk.transpose().matmul(p).matmul(sk));
    }
    r.frobenius_norm()
}

/// Local certificate objects for `V_P = xᵀPx`: `h = LV_P` and
/// `M = D²h + 2Q`.
#[derive(Clone, Debug)]
pub struct LocalExpressions {
    pub v: Expr,
    pub h: Expr,
    /// Row-major `n × n`.
    pub m: Vec<Expr>,
}

impl LocalExpressions {
    /// `‖M‖_F²` as one expression.
    pub fn frobenius_squared(&self) -> Expr {
        Expr::sum(self.m.iter().map(|e| Expr::pow(e.clone(), 2)))
    }
}

pub fn local_certificate_expressions(sys: &StochasticSystem, p: &Matrix, q: &Matrix) -> LocalExpressions {
    let n = sys.n();
    let v = Expr::quadratic_form(p.data(), n);
    let h = sys.generator_apply(&v);
    let m = h
        .hessian(n)
        .into_iter()
        .enumerate()
        .map(|(k, e)| Expr::add(e, Expr::Const(2.0 * q.data()[k])))
        .collect();
    LocalExpressions { v, h, m }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum QuadError {
    #[error("linearization failed: {0}")]
    Linearize(#[from] EvalError),
    #[error("stochastic Lyapunov equation: {0}")]
    Lyapunov(#[from] LinAlgError),
    #[error("r = {0} must be positive")]
    NonPositiveR(f64),
    #[error("sublevel cap is not positive ({0})")]
    BadCap(f64),
    #[error("local level search: {0}")]
    LocalLevel(LevelError),
    #[error("extended level search: {0}")]
    ExtendedLevel(LevelError),
}

/// Largest certified `c` with `xᵀPx ≤ c ⇒ ‖M(x)‖_F² ≤ 4r²`.
pub fn find_local_level(
    sys: &StochasticSystem,
    local: &LocalExpressions,
    r: f64,
    cap: f64,
    opts: &VerifyOptions,
    level: &LevelOptions,
) -> Result<verify::LevelSearch, QuadError> {
    if r <= 0.0 {
        return Err(QuadError::NonPositiveR(r));
    }
    let n = sys.n();
    let v = ExprFn::new(local.v.clone(), n);
    let target = ExprFn::new(local.frobenius_squared(), n);
    let bound = 4.0 * r * r;
    let domain = sys.domain().clone();
    verify::search_largest(0.0, cap, level, |c| {
        let cond = Condition { target: &target, region: vec![Constraint::at_most(&v, c)], bound, domain: domain.clone() };
        verify::check(&cond, opts)
    })
    .map_err(QuadError::LocalLevel)
}

/// Settings for [`certify_quadratic`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuadSettings {
    pub q: Option<Matrix>,
    /// `ε = epsilon_rel · λ_min(Q)`.
    pub epsilon_rel: f64,
    pub zeta_rel: f64,
    pub zeta_floor: f64,
    pub verify: VerifyOptions,
    pub level: LevelOptions,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            q: None,
            epsilon_rel: 1e-4,
            zeta_rel: 1e-4,
            zeta_floor: 1e-6,
            verify: VerifyOptions::default(),
            level: LevelOptions::default(),
        }
    }
}

/// Quadratic local Lyapunov certificate `V_P = xᵀPx`.
#[derive(Clone, Debug)]
pub struct QuadraticCertificate {
    pub a: Matrix,
    pub s: Vec<Matrix>,
    pub p: Matrix,
    pub q: Matrix,
    pub residual: f64,
    pub epsilon: f64,
    pub r: f64,
    /// Largest `c` with `{V ≤ c} ⊆ domain`.
    pub cap: f64,
    pub c_local: f64,
    pub local_outcome: VerifyOutcome,
    /// `LV ≤ −ζ` margin used for the extended level.
    pub zeta: f64,
    pub c2: f64,
    pub extended_outcome: VerifyOutcome,
    pub probes: usize,
}

impl QuadraticCertificate {
    pub fn v_expr(&self) -> Expr {
        Expr::quadratic_form(self.p.data(), self.p.rows())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.p.quadratic_form(x)
    }
}

/// Linearize, solve the stochastic Lyapunov equation, certify the local
/// level and extend it with `LV ≤ −ζ` on `{c_local ≤ V ≤ c₂}`.
pub fn certify_quadratic(sys: &StochasticSystem, settings: &QuadSettings) -> Result<QuadraticCertificate, QuadError> {
    let n = sys.n();
    let lin = sys.linearize()?;
    let q = settings.q.clone().unwrap_or_else(|| Matrix::identity(n));
    let p = solve_stochastic_lyapunov(&lin.a, &lin.s, &q)?;
    let residual = lyapunov_residual(&p, &lin.a, &lin.s, &q);
    let q_min = symmetric_eigen(&q)?[0];
    let epsilon = settings.epsilon_rel * q_min;
    let r = q_min - epsilon;

    let local = local_certificate_expressions(sys, &p, &q);
    let v = ExprFn::new(local.v.clone(), n);
    let cap = verify::sublevel_cap(&v, sys.domain(), &settings.verify);
    if cap <= 0.0 {
        return Err(QuadError::BadCap(cap));
    }
    let loc = find_local_level(sys, &local, r, cap, &settings.verify, &settings.level)?;

    let lv = ExprFn::new(local.h.clone(), n);
    let zeta = verify::default_zeta(&lv, sys.domain(), settings.zeta_rel, settings.zeta_floor);
    // the local level already reaches the cap: the annulus is empty
    let ext = if loc.level >= cap {
        verify::LevelSearch { level: cap, outcome: loc.outcome.clone(), rejected: None, probes: 0 }
    } else {
        verify::find_largest_level(&lv, &v, Some(loc.level), -zeta, cap, sys.domain(), &settings.verify, &settings.level)
            .map_err(QuadError::ExtendedLevel)?
    };

    Ok(QuadraticCertificate {
        a: lin.a,
        s: lin.s,
        p,
        q,
        residual,
        epsilon,
        r,
        cap,
        c_local: loc.level,
        local_outcome: loc.outcome,
        zeta,
        c2: ext.level,
        extended_outcome: ext.outcome,
        probes: loc.probes + ext.probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Hyperbox};

    fn vdp_lin() -> (Matrix, Vec<Matrix>) {
        (
            Matrix::from_rows(&[&[0.0, -1.0], &[1.0, -1.0]]),
            vec![Matrix::from_rows(&[&[0.5, 0.0], &[0.0, 0.0]]), Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.5]])],
        )
    }

    #[test]
    fn minus_identity_gives_half_identity() {
        let a = Matrix::identity(2).scale(-1.0);
        let p = solve_stochastic_lyapunov(&a, &[Matrix::zeros(2, 2)], &Matrix::identity(2)).unwrap();
        assert!((p.add(&Matrix::identity(2).scale(-0.5))).max_abs() < 1e-15);
    }

    #[test]
    fn van_der_pol_p_matches_reported_matrix() {
        let (a, s) = vdp_lin();
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&a, &s, &q).unwrap();
        let expected = Matrix::from_rows(&[&[2.2439, -0.7805], &[-0.7805, 1.4634]]);
        assert!(p.add(&expected.scale(-1.0)).max_abs() < 1e-4);
        assert!(lyapunov_residual(&p, &a, &s, &q) < 1e-12);
    }

    #[test]
    fn non_hurwitz_is_rejected() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let err = solve_stochastic_lyapunov(&a, &[], &Matrix::identity(2)).unwrap_err();
        assert_eq!(err, LinAlgError::NotHurwitz);
        assert!(!is_hurwitz(&Matrix::from_rows(&[&[0.1, 0.0], &[0.0, -1.0]])));
        assert!(is_hurwitz(&vdp_lin().0));
    }

    #[test]
    fn strong_noise_has_no_quadratic_certificate() {
        let a = Matrix::identity(1).scale(-1.0);
        // 2a + s² = 2 - 4 < 0 ⇒ P would be negative
        let s = [Matrix::from_rows(&[&[2.0]])];
        let err = solve_stochastic_lyapunov(&a, &s, &Matrix::identity(1)).unwrap_err();
        assert!(matches!(err, LinAlgError::PNotPositiveDefinite(_)));
    }

    #[test]
    fn jacobi_examples() {
        assert_eq!(symmetric_eigen(&Matrix::identity(2)).unwrap(), vec![1.0, 1.0]);
        let ev = symmetric_eigen(&Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        assert_eq!(symmetric_eigen(&Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]])), Err(LinAlgError::NotSymmetric));
    }

    #[test]
    fn jacobi_matches_characteristic_polynomial() {
        // 2x2: λ = tr/2 ± sqrt(tr²/4 − det)
        let p = Matrix::from_rows(&[&[2.2439, -0.7805], &[-0.7805, 1.4634]]);
        let tr = 2.2439 + 1.4634;
        let det = 2.2439 * 1.4634 - 0.7805 * 0.7805;
        let disc = libm::sqrt(tr * tr / 4.0 - det);
        let ev = symmetric_eigen(&p).unwrap();
        assert!((ev[0] - (tr / 2.0 - disc)).abs() < 1e-10);
        assert!((ev[1] - (tr / 2.0 + disc)).abs() < 1e-10);
        assert!(ev[0] > 0.0);

        // 3x3 with known spectrum {1, 2, 4}: [[2,1,1],[1,2,1],[1,1,2]] has {1,1,4}
        let m = Matrix::from_rows(&[&[2.0, 1.0, 1.0], &[1.0, 2.0, 1.0], &[1.0, 1.0, 2.0]]);
        let ev = symmetric_eigen(&m).unwrap();
        for (got, want) in ev.iter().zip([1.0, 1.0, 4.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        // tridiagonal [[2,-1,0],[-1,2,-1],[0,-1,2]]: 2 - √2, 2, 2 + √2
        let m = Matrix::from_rows(&[&[2.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 2.0]]);
        let ev = symmetric_eigen(&m).unwrap();
        let r2 = libm::sqrt(2.0);
        for (got, want) in ev.iter().zip([2.0 - r2, 2.0, 2.0 + r2]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    // xorshift for reproducible random instances
    struct Rng(u64);
    impl Rng {
        fn next(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
        fn matrix(&mut self, n: usize, scale: f64) -> Matrix {
            Matrix::from_vec(n, n, (0..n * n).map(|_| scale * self.next()).collect())
        }
    }

    #[test]
    fn random_stable_instances_have_small_residual() {
        let mut rng = Rng(0x9e37_79b9_7f4a_7c15);
        for k in 0..100 {
            let n = 1 + k % 6;
            // shift a random matrix so that it is strongly stable
            let a = rng.matrix(n, 1.0).add(&Matrix::identity(n).scale(-(n as f64 + 1.0)));
            let s: Vec<Matrix> = (0..2).map(|_| rng.matrix(n, 0.3)).collect();
            let b = rng.matrix(n, 1.0);
            let q = b.matmul(&b.transpose()).add(&Matrix::identity(n));
            let p = solve_stochastic_lyapunov(&a, &s, &q).unwrap();
            assert!(lyapunov_residual(&p, &a, &s, &q) <= 1e-8, "instance {k}");
            assert!(p.is_symmetric(0.0));
        }
    }

    #[test]
    fn zero_noise_matches_deterministic_lyapunov() {
        // oracle: vectorized AᵀP + PA = −Q built from Kronecker products
        let mut rng = Rng(12345);
        for n in 1..=5 {
            let a = rng.matrix(n, 1.0).add(&Matrix::identity(n).scale(-(n as f64 + 1.0)));
            let q = Matrix::identity(n);
            let p = solve_stochastic_lyapunov(&a, &[], &q).unwrap();
            let nn = n * n;
            let mut k = Matrix::zeros(nn, nn);
            // kron(I, Aᵀ) + kron(Aᵀ, I) in row-major vec convention
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        k[(i * n + j, i * n + l)] += a[(l, j)];
                        k[(i * n + j, l * n + j)] += a[(l, i)];
                    }
                }
            }
            let rhs: Vec<f64> = q.data().iter().map(|v| -v).collect();
            let oracle = k.solve(&rhs).unwrap();
            for (x, y) in p.data().iter().zip(&oracle) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    fn exprs(src: &[&str], n: usize) -> Vec<Expr> {
        src.iter().map(|s| parse(s, n).unwrap()).collect()
    }

    fn van_der_pol() -> StochasticSystem {
        StochasticSystem::new(
            exprs(&["-x2", "x1 - (1 - x1^2)*x2"], 2),
            vec![exprs(&["0.5*x1", "0"], 2), exprs(&["0", "0.5*x2"], 2)],
            parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
            Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]),
        )
        .unwrap()
    }

    fn linear_system() -> StochasticSystem {
        StochasticSystem::new(
            exprs(&["-x1 + 0.5*x2", "-x2"], 2),
            vec![exprs(&["0.2*x1"], 2), exprs(&["0.1*x2"], 2)],
            parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
            Hyperbox::cube(2, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn m_vanishes_at_origin_and_for_linear_systems() {
        let sys = van_der_pol();
        let (a, s) = vdp_lin();
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&a, &s, &q).unwrap();
        let loc = local_certificate_expressions(&sys, &p, &q);
        let fro = loc.frobenius_squared().eval_point(&[0.0, 0.0]).unwrap();
        assert!(fro.abs() < 1e-20, "{fro}");
        for e in &loc.m {
            assert!(e.polynomial_degree().unwrap() <= 2);
        }

        let lin_sys = linear_system();
        let lin = lin_sys.linearize().unwrap();
        let p = solve_stochastic_lyapunov(&lin.a, &lin.s, &q).unwrap();
        let loc = local_certificate_expressions(&lin_sys, &p, &q);
        for x in [[0.3, -1.2], [1.9, 1.9], [-0.7, 0.1]] {
            for e in &loc.m {
                assert!(e.eval_point(&x).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_system_local_level_is_cap() {
        let sys = linear_system();
        let lin = sys.linearize().unwrap();
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&lin.a, &lin.s, &q).unwrap();
        let loc = local_certificate_expressions(&sys, &p, &q);
        let res = find_local_level(&sys, &loc, 0.9999, 3.0, &VerifyOptions::default(), &LevelOptions::default()).unwrap();
        assert_eq!(res.level, 3.0);
        assert!(matches!(
            find_local_level(&sys, &loc, 0.0, 3.0, &VerifyOptions::default(), &LevelOptions::default()),
            Err(QuadError::NonPositiveR(_))
        ));
    }

    #[test]
    fn van_der_pol_local_level_in_band() {
        let sys = van_der_pol();
        let (a, s) = vdp_lin();
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&a, &s, &q).unwrap();
        let loc = local_certificate_expressions(&sys, &p, &q);
        let v = ExprFn::new(loc.v.clone(), 2);
        let cap = verify::sublevel_cap(&v, sys.domain(), &VerifyOptions::default());
        let res = find_local_level(&sys, &loc, 0.9999, cap, &VerifyOptions::default(), &LevelOptions::default()).unwrap();
        assert!(res.level >= 0.25 && res.level <= 0.34, "c_local = {}", res.level);
    }

    #[test]
    fn local_level_monotone_in_r() {
        let sys = van_der_pol();
        let (a, s) = vdp_lin();
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&a, &s, &q).unwrap();
        let loc = local_certificate_expressions(&sys, &p, &q);
        let opts = VerifyOptions::default();
        let lvl = LevelOptions::default();
        let big = find_local_level(&sys, &loc, 0.9999, 5.0, &opts, &lvl).unwrap().level;
        let small = find_local_level(&sys, &loc, 0.5, 5.0, &opts, &lvl).unwrap().level;
        assert!(small <= big, "{small} > {big}");
    }
}
