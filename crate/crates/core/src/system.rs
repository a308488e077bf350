//! The stochastic system `dX = f(X) dt + σ(X) dB`, its generator and the
//! stochastic Zubov residual.

use alloc::vec;
use alloc::vec::Vec;

use crate::expr::{EvalError, Expr, Hyperbox, Program};
use crate::linlyap::Matrix;
use crate::verify::{self, Constraint, ExprFn, InfNorm, VerifyOptions};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SystemError {
    #[error("drift has {got} components, expected {n}")]
    DriftLength { got: usize, n: usize },
    #[error("diffusion must be {n}×{m}")]
    DiffusionShape { n: usize, m: usize },
    #[error("domain has dimension {got}, expected {n}")]
    DomainDimension { got: usize, n: usize },
    #[error("{what} uses x{} but n = {n}", .index + 1)]
    VariableOutOfRange { what: &'static str, index: usize, n: usize },
    #[error("f{} does not vanish at the origin ({value})", .index + 1)]
    DriftNotZeroAtOrigin { index: usize, value: f64 },
    #[error("sigma[{}][{}] does not vanish at the origin ({value})", .row + 1, .col + 1)]
    DiffusionNotZeroAtOrigin { row: usize, col: usize, value: f64 },
    #[error("g(0) = {0}, expected 0")]
    WeightNotZeroAtOrigin(f64),
    #[error("g is not positive on the annulus (certified lower bound {lower})")]
    WeightNotPositive { lower: f64 },
    #[error("the origin is not inside the domain")]
    OriginOutsideDomain,
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

const ORIGIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct StochasticSystem {
    n: usize,
    m: usize,
    drift: Vec<Expr>,
    /// Row-major `n × m`.
    diffusion: Vec<Expr>,
    weight: Expr,
    domain: Hyperbox,
    /// `σσᵀ`, row-major `n × n`, expanded once.
    diffusion_outer: Vec<Expr>,
    weight_lower: f64,
}

impl StochasticSystem {
    /// Validates the equilibrium conditions and certifies that `g` is
    /// positive away from the origin. The annulus excludes the box
    /// `‖x‖∞ < 0.01·radius(domain)`.
    pub fn new(drift: Vec<Expr>, diffusion: Vec<Vec<Expr>>, weight: Expr, domain: Hyperbox) -> Result<Self, SystemError> {
        let delta = 1e-2 * domain.radius();
        Self::with_weight_radius(drift, diffusion, weight, domain, delta)
    }

    pub fn with_weight_radius(
        drift: Vec<Expr>,
        diffusion: Vec<Vec<Expr>>,
        weight: Expr,
        domain: Hyperbox,
        delta: f64,
    ) -> Result<Self, SystemError> {
        let n = drift.len();
        let m = diffusion.first().map_or(0, Vec::len);
        if domain.dim() != n {
            return Err(SystemError::DomainDimension { got: domain.dim(), n });
        }
        if diffusion.len() != n || diffusion.iter().any(|row| row.len() != m) {
            return Err(SystemError::DiffusionShape { n, m });
        }
        let check_vars = |what: &'static str, e: &Expr| match e.max_var() {
            Some(i) if i >= n => Err(SystemError::VariableOutOfRange { what, index: i, n }),
            _ => Ok(()),
        };
        for e in &drift {
            check_vars("drift", e)?;
        }
        for e in diffusion.iter().flatten() {
            check_vars("diffusion", e)?;
        }
        check_vars("g", &weight)?;
        if !domain.contains(&vec![0.0; n]) {
            return Err(SystemError::OriginOutsideDomain);
        }

        let origin = vec![0.0; n];
        for (index, e) in drift.iter().enumerate() {
            let value = e.eval_point(&origin)?;
            if value.abs() > ORIGIN_TOL {
                return Err(SystemError::DriftNotZeroAtOrigin { index, value });
            }
        }
        for (row, r) in diffusion.iter().enumerate() {
            for (col, e) in r.iter().enumerate() {
                let value = e.eval_point(&origin)?;
                if value.abs() > ORIGIN_TOL {
                    return Err(SystemError::DiffusionNotZeroAtOrigin { row, col, value });
                }
            }
        }
        let g0 = weight.eval_point(&origin)?;
        if g0.abs() > ORIGIN_TOL {
            return Err(SystemError::WeightNotZeroAtOrigin(g0));
        }

        let mut outer = vec![Expr::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let e = Expr::sum((0..m).map(|k| Expr::mul(diffusion[i][k].clone(), diffusion[j][k].clone())));
                outer[j * n + i] = e.clone();
                outer[i * n + j] = e;
            }
        }

        let mut sys = StochasticSystem {
            n,
            m,
            drift,
            diffusion: diffusion.into_iter().flatten().collect(),
            weight,
            domain,
            diffusion_outer: outer,
            weight_lower: 0.0,
        };
        sys.weight_lower = sys.certify_weight(delta)?;
        Ok(sys)
    }

    // Positive definiteness of g: sampled on a grid, then an interval lower
    // bound on {δ ≤ ‖x‖∞} ∩ domain.
    fn certify_weight(&self, delta: f64) -> Result<f64, SystemError> {
        let g = ExprFn::new(self.weight.clone(), self.n);
        let grid = 9usize;
        let total = grid.pow(self.n as u32);
        for idx in 0..total {
            let mut k = idx;
            let u: Vec<f64> = (0..self.n)
                .map(|_| {
                    let t = (k % grid) as f64 / (grid - 1) as f64;
                    k /= grid;
                    t
                })
                .collect();
            let x = self.domain.from_unit(&u);
            if x.iter().all(|v| v.abs() < delta) {
                continue;
            }
            let v = self.weight.eval_point(&x)?;
            if v <= 0.0 {
                return Err(SystemError::WeightNotPositive { lower: v });
            }
        }
        let norm = InfNorm::new(self.n);
        let region = [Constraint::at_least(&norm, delta)];
        let opts = VerifyOptions { max_boxes: 200_000, ..VerifyOptions::default() };
        let ext = verify::bound_min(&g, &region, &self.domain, &opts, 0.5);
        if ext.lower > 0.0 {
            Ok(ext.lower)
        } else {
            Err(SystemError::WeightNotPositive { lower: ext.lower })
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn drift(&self) -> &[Expr] {
        &self.drift
    }

    pub fn diffusion(&self, row: usize, col: usize) -> &Expr {
        &self.diffusion[row * self.m + col]
    }

    /// `σσᵀ` entry `(i, j)`.
    pub fn diffusion_outer(&self, i: usize, j: usize) -> &Expr {
        &self.diffusion_outer[i * self.n + j]
    }

    pub fn weight(&self) -> &Expr {
        &self.weight
    }

    /// Certified lower bound of `g` away from the origin.
    pub fn weight_lower_bound(&self) -> f64 {
        self.weight_lower
    }

    pub fn domain(&self) -> &Hyperbox {
        &self.domain
    }

    /// `LV = V_x f + ½ Tr[σᵀ V_xx σ]` as an expression.
    pub fn generator_apply(&self, v: &Expr) -> Expr {
        let n = self.n;
        let grad = v.gradient(n);
        let mut terms = Vec::new();
        for (gi, fi) in grad.iter().zip(&self.drift) {
            terms.push(Expr::mul(gi.clone(), fi.clone()));
        }
        for i in 0..n {
            for j in i..n {
                let d = &self.diffusion_outer[i * n + j];
                if d.is_zero() {
                    continue;
                }
                let h = grad[i].differentiate(j);
                if h.is_zero() {
                    continue;
                }
                // off-diagonal pairs appear twice in the trace
                let c = if i == j { 0.5 } else { 1.0 };
                terms.push(Expr::mul(Expr::Const(c), Expr::mul(d.clone(), h)));
            }
        }
        Expr::sum(terms)
    }

    /// `A = Df(0)` and `S_k = Dσ_k(0)` from symbolic derivatives.
    pub fn linearize(&self) -> Result<Linearization, EvalError> {
        let n = self.n;
        let origin = vec![0.0; n];
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.drift[i].differentiate(j).eval_point(&origin)?;
            }
        }
        let mut s = Vec::with_capacity(self.m);
        for k in 0..self.m {
            let mut sk = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    sk[(i, j)] = self.diffusion(i, k).differentiate(j).eval_point(&origin)?;
                }
            }
            s.push(sk);
        }
        Ok(Linearization { a, s })
    }

    /// Residual of the stochastic Zubov equation,
    /// `x ↦ LW(x) + g(x)(1 − W(x))`.
    pub fn zubov_residual<'a, W: SmoothFunction + ?Sized>(&'a self, w: &'a W) -> ZubovResidual<'a, W> {
        ZubovResidual { terms: self.compile(), w }
    }

    pub fn compile(&self) -> CompiledSystem {
        CompiledSystem {
            n: self.n,
            m: self.m,
            drift: self.drift.iter().map(Expr::compile).collect(),
            diffusion: self.diffusion.iter().map(Expr::compile).collect(),
            outer: self.diffusion_outer.iter().map(Expr::compile).collect(),
            weight: self.weight.compile(),
        }
    }
}

/// Linear part of the SDE at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization {
    pub a: Matrix,
    pub s: Vec<Matrix>,
}

/// Point values of a twice differentiable function.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `n × n`.
    pub hess: Vec<f64>,
}

/// Anything that can report value, gradient and Hessian at a point.
pub trait SmoothFunction {
    fn dim(&self) -> usize;
    fn jet(&self, x: &[f64]) -> Jet;
}

/// An expression with precompiled first and second derivatives.
#[derive(Clone, Debug)]
pub struct SymbolicFunction {
    n: usize,
    value: Program,
    grad: Vec<Program>,
    hess: Vec<Program>,
}

impl SymbolicFunction {
    pub fn new(e: &Expr, n: usize) -> Self {
        SymbolicFunction {
            n,
            value: e.compile(),
            grad: e.gradient(n).iter().map(Expr::compile).collect(),
            hess: e.hessian(n).iter().map(Expr::compile).collect(),
        }
    }
}

impl SmoothFunction for SymbolicFunction {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, x: &[f64]) -> Jet {
        let ev = |p: &Program| p.eval(x).unwrap_or(f64::NAN);
        Jet { value: ev(&self.value), grad: self.grad.iter().map(ev).collect(), hess: self.hess.iter().map(ev).collect() }
    }
}

/// Drift, diffusion, `σσᵀ` and `g` as postfix programs.
#[derive(Clone, Debug)]
pub struct CompiledSystem {
    pub n: usize,
    pub m: usize,
    pub drift: Vec<Program>,
    pub diffusion: Vec<Program>,
    pub outer: Vec<Program>,
    pub weight: Program,
}

/// Pointwise coefficients of the generator at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTerms {
    pub f: Vec<f64>,
    /// `σσᵀ`, row-major.
    pub outer: Vec<f64>,
    pub g: f64,
}

impl CompiledSystem {
    pub fn terms(&self, x: &[f64]) -> Result<GeneratorTerms, EvalError> {
        let mut stack = Vec::new();
        let mut ev = |p: &Program| p.eval_with(x, &mut stack);
        let f = self.drift.iter().map(&mut ev).collect::<Result<Vec<_>, _>>()?;
        let outer = self.outer.iter().map(&mut ev).collect::<Result<Vec<_>, _>>()?;
        let g = ev(&self.weight)?;
        Ok(GeneratorTerms { f, outer, g })
    }
}

impl GeneratorTerms {
    /// `LW + g(1 − W)` given the jet of `W`.
    pub fn residual(&self, jet: &Jet) -> f64 {
        self.generator(jet) + self.g * (1.0 - jet.value)
    }

    /// `LW` given the jet of `W`.
    pub fn generator(&self, jet: &Jet) -> f64 {
        let n = self.f.len();
        let mut lw = 0.0;
        for i in 0..n {
            lw += jet.grad[i] * self.f[i];
        }
        let mut tr = 0.0;
        for i in 0..n * n {
            tr += self.outer[i] * jet.hess[i];
        }
        lw + 0.5 * tr
    }
}

/// Callable Zubov residual for a fixed `W`.
pub struct ZubovResidual<'a, W: SmoothFunction + ?Sized> {
    terms: CompiledSystem,
    w: &'a W,
}

impl<W: SmoothFunction + ?Sized> ZubovResidual<'_, W> {
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let t = self.terms.terms(x)?;
        Ok(t.residual(&self.w.jet(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::linlyap::solve_stochastic_lyapunov;

    fn exprs(src: &[&str], n: usize) -> Vec<Expr> {
        src.iter().map(|s| parse(s, n).unwrap()).collect()
    }

    pub(crate) fn van_der_pol() -> StochasticSystem {
        let n = 2;
        StochasticSystem::new(
            exprs(&["-x2", "x1 - (1 - x1^2)*x2"], n),
            vec![exprs(&["0.5*x1", "0"], n), exprs(&["0", "0.5*x2"], n)],
            parse("0.1*(x1^2 + x2^2)", n).unwrap(),
            Hyperbox::from_bounds(&[(-2.5, 2.5), (-3.5, 3.5)]),
        )
        .unwrap()
    }

    fn stable_diag() -> StochasticSystem {
        StochasticSystem::new(
            exprs(&["-x1", "-x2"], 2),
            vec![exprs(&["0"], 2), exprs(&["0"], 2)],
            parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
            Hyperbox::cube(2, 1.0),
        )
        .unwrap()
    }

    fn sample_points(count: usize, r: f64) -> Vec<Vec<f64>> {
        // deterministic low-discrepancy points in [-r, r]^2
        (0..count)
            .map(|k| {
                let a = (k as f64 * 0.618_033_988_75).fract();
                let b = (k as f64 * 0.754_877_666_2 + 0.3).fract();
                vec![r * (2.0 * a - 1.0), r * (2.0 * b - 1.0)]
            })
            .collect()
    }

    #[test]
    fn deterministic_quadratic_generator() {
        let sys = stable_diag();
        let v = parse("x1^2 + x2^2", 2).unwrap();
        let lv = sys.generator_apply(&v);
        for x in sample_points(20, 1.0) {
            let expect = -2.0 * x[0] * x[0] - 2.0 * x[1] * x[1];
            assert!((lv.eval_point(&x).unwrap() - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_system_generator_is_minus_xqx() {
        // f = Ax, σ_k = S_k x, V = xᵀPx with P from the stochastic equation
        let a = Matrix::from_rows(&[&[-1.0, 0.5], &[-0.3, -0.8]]);
        let s1 = Matrix::from_rows(&[&[0.3, 0.0], &[0.1, 0.2]]);
        let s2 = Matrix::from_rows(&[&[0.0, -0.2], &[0.25, 0.0]]);
        let q = Matrix::identity(2);
        let p = solve_stochastic_lyapunov(&a, &[s1.clone(), s2.clone()], &q).unwrap();
        let lin = |m: &Matrix, i: usize| Expr::sum((0..2).map(|j| Expr::mul(Expr::Const(m[(i, j)]), Expr::var(j))));
        let sys = StochasticSystem::new(
            vec![lin(&a, 0), lin(&a, 1)],
            vec![vec![lin(&s1, 0), lin(&s2, 0)], vec![lin(&s1, 1), lin(&s2, 1)]],
            Expr::mul(Expr::Const(0.1), Expr::squared_norm(2)),
            Hyperbox::cube(2, 2.0),
        )
        .unwrap();
        let lv = sys.generator_apply(&Expr::quadratic_form(p.data(), 2));
        for x in sample_points(100, 2.0) {
            let xqx = q.quadratic_form(&x);
            assert!((lv.eval_point(&x).unwrap() + xqx).abs() < 1e-10);
        }
    }

    #[test]
    fn generator_vanishes_at_origin() {
        let sys = van_der_pol();
        for v in ["x1^2 + 3*x2^2", "tanh(x1 + x2)^2", "exp(x1*x2) - 1 + x2^4"] {
            let lv = sys.generator_apply(&parse(v, 2).unwrap());
            assert_eq!(lv.eval_point(&[0.0, 0.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn generator_is_linear_in_v() {
        let sys = van_der_pol();
        let v1 = parse("x1^2 + x1*x2^3", 2).unwrap();
        let v2 = parse("tanh(x1 - x2)", 2).unwrap();
        let (a, b) = (1.7, -0.4);
        let combo = Expr::add(Expr::mul(Expr::Const(a), v1.clone()), Expr::mul(Expr::Const(b), v2.clone()));
        let l1 = sys.generator_apply(&v1);
        let l2 = sys.generator_apply(&v2);
        let lc = sys.generator_apply(&combo);
        for x in sample_points(50, 2.0) {
            let lhs = lc.eval_point(&x).unwrap();
            let rhs = a * l1.eval_point(&x).unwrap() + b * l2.eval_point(&x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn zero_noise_generator_is_lie_derivative() {
        let sys = StochasticSystem::new(
            exprs(&["-x2", "x1 - (1 - x1^2)*x2"], 2),
            vec![exprs(&["0"], 2), exprs(&["0"], 2)],
            parse("0.1*(x1^2 + x2^2)", 2).unwrap(),
            Hyperbox::cube(2, 2.0),
        )
        .unwrap();
        let v = parse("x1^2*exp(x2) + tanh(x1)", 2).unwrap();
        let lv = sys.generator_apply(&v);
        for x in sample_points(40, 1.5) {
            // independent route: central differences of V along f
            let h = 1e-6;
            let f = [-x[1], x[0] - (1.0 - x[0] * x[0]) * x[1]];
            let mut lie = 0.0;
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                lie += f[i] * (v.eval_point(&xp).unwrap() - v.eval_point(&xm).unwrap()) / (2.0 * h);
            }
            assert!((lv.eval_point(&x).unwrap() - lie).abs() < 1e-6 * (1.0 + lie.abs()));
        }
    }

    #[test]
    fn van_der_pol_linearization() {
        let lin = van_der_pol().linearize().unwrap();
        assert_eq!(lin.a, Matrix::from_rows(&[&[0.0, -1.0], &[1.0, -1.0]]));
        assert_eq!(lin.s[0], Matrix::from_rows(&[&[0.5, 0.0], &[0.0, 0.0]]));
        assert_eq!(lin.s[1], Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.5]]));
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let sys = StochasticSystem::new(
            exprs(&["-x1 + x2*tanh(x1) + x2^3", "-2*x2 + exp(x1) - 1"], 2),
            vec![exprs(&["0.2*x1 + x2^2", "tanh(0.3*x2)"], 2), exprs(&["0", "x1*x2 + 0.1*x1"], 2)],
            parse("x1^2 + x2^2", 2).unwrap(),
            Hyperbox::cube(2, 1.0),
        )
        .unwrap();
        let lin = sys.linearize().unwrap();
        let h = 1e-7;
        for i in 0..2 {
            for j in 0..2 {
                let mut e = [0.0; 2];
                e[j] = h;
                let mut em = [0.0; 2];
                em[j] = -h;
                let fd = (sys.drift()[i].eval_point(&e).unwrap() - sys.drift()[i].eval_point(&em).unwrap()) / (2.0 * h);
                assert!((lin.a[(i, j)] - fd).abs() < 1e-6);
                for k in 0..2 {
                    let d = sys.diffusion(i, k);
                    let fd = (d.eval_point(&e).unwrap() - d.eval_point(&em).unwrap()) / (2.0 * h);
                    assert!((lin.s[k][(i, j)] - fd).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn simple_linearization() {
        let lin = stable_diag().linearize().unwrap();
        assert_eq!(lin.a, Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -1.0]]));
        assert_eq!(lin.s, vec![Matrix::zeros(2, 2)]);
    }

    #[test]
    fn rejects_nonzero_equilibrium_data() {
        let err = StochasticSystem::new(
            exprs(&["1 - x1", "-x2"], 2),
            vec![exprs(&["0"], 2), exprs(&["0"], 2)],
            parse("x1^2 + x2^2", 2).unwrap(),
            Hyperbox::cube(2, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::DriftNotZeroAtOrigin { index: 0, .. }));
        let err = StochasticSystem::new(
            exprs(&["-x1"], 1),
            vec![exprs(&["0.1 + x1"], 1)],
            parse("x1^2", 1).unwrap(),
            Hyperbox::cube(1, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::DiffusionNotZeroAtOrigin { .. }));
        let err = StochasticSystem::new(
            exprs(&["-x1", "-x2"], 2),
            vec![exprs(&["0"], 2), exprs(&["0"], 2)],
            parse("x1^2", 2).unwrap(),
            Hyperbox::cube(2, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::WeightNotPositive { .. }));
    }

    #[test]
    fn weight_lower_bound_is_positive() {
        let sys = van_der_pol();
        assert!(sys.weight_lower_bound() > 0.0);
    }

    #[test]
    fn zubov_residual_examples() {
        let sys = van_der_pol();
        let zero = SymbolicFunction::new(&Expr::zero(), 2);
        let one = SymbolicFunction::new(&Expr::one(), 2);
        let r0 = sys.zubov_residual(&zero);
        let r1 = sys.zubov_residual(&one);
        for x in sample_points(30, 2.0) {
            let g = sys.weight().eval_point(&x).unwrap();
            assert_eq!(r0.eval(&x).unwrap(), g);
            assert_eq!(r1.eval(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn one_dimensional_zubov_solution_has_zero_residual() {
        let sys = StochasticSystem::new(
            exprs(&["-x1"], 1),
            vec![exprs(&["0"], 1)],
            parse("0.1*x1^2", 1).unwrap(),
            Hyperbox::cube(1, 2.0),
        )
        .unwrap();
        // closed form of the value function: ∫ 0.1 x0² e^{-2t} dt = 0.05 x0²
        let w = parse("1 - exp(-0.05*x1^2)", 1).unwrap();
        let lw = sys.generator_apply(&w);
        let residual_expr = Expr::add(lw, Expr::mul(sys.weight().clone(), Expr::sub(Expr::one(), w.clone())));
        let sw = SymbolicFunction::new(&w, 1);
        let r = sys.zubov_residual(&sw);
        for k in 0..=40 {
            let x = -2.0 + 0.1 * k as f64;
            assert!(residual_expr.eval_point(&[x]).unwrap().abs() < 1e-15);
            assert!(r.eval(&[x]).unwrap().abs() < 1e-15);
        }
    }
}
