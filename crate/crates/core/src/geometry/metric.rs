//! Lorentzian metric fields. Implementations supply the inverse metric and,
//! where cheap, its first and second derivatives; everything else has
//! finite-difference defaults.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::fields::{fd_axis, Scalar};
use crate::tol::{H_FD, H_FD2};

/// `d[i]` is the matrix `partial_i g^{jk}`.
pub type Deriv = Vec<DMatrix<f64>>;
/// `d2[i][j]` is the matrix `partial_i partial_j g^{jk}`.
pub type Deriv2 = Vec<Vec<DMatrix<f64>>>;

pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    /// Inverse metric `g^{jk}(x)`.
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64>;

    /// Metric `g_{jk}(x)`.
    fn g_lower(&self, x: &[f64]) -> DMatrix<f64> {
        let gu = self.g_upper(x);
        gu.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(gu.nrows(), gu.ncols(), f64::NAN))
    }

    fn d_g_upper(&self, x: &[f64]) -> Deriv {
        (0..x.len()).map(|i| fd_axis(x, i, H_FD, |y| self.g_upper(y))).collect()
    }

    fn d2_g_upper(&self, x: &[f64]) -> Deriv2 {
        let d = x.len();
        let cols: Vec<Deriv> = (0..d)
            .map(|j| {
                let mut y = x.to_vec();
                let x0 = x[j];
                let mut eval = |s: f64| {
                    y[j] = x0 + s;
                    self.d_g_upper(&y)
                };
                let (p2, p1, m1, m2) = (eval(2.0 * H_FD2), eval(H_FD2), eval(-H_FD2), eval(-2.0 * H_FD2));
                (0..d)
                    .map(|i| (&p1[i] - &m1[i]) * (8.0 / (12.0 * H_FD2)) + (&m2[i] - &p2[i]) * (1.0 / (12.0 * H_FD2)))
                    .collect()
            })
            .collect();
        // symmetrize in (i, j)
        (0..d)
            .map(|i| (0..d).map(|j| (&cols[j][i] + &cols[i][j]) * 0.5).collect())
            .collect()
    }

    /// `partial_i g_{jk} = -g (partial_i g^{-1}) g`.
    fn d_g_lower(&self, x: &[f64]) -> Deriv {
        let gl = self.g_lower(x);
        self.d_g_upper(x).into_iter().map(|du| -(&gl * du * &gl)).collect()
    }
}

pub type Metric = Arc<dyn MetricField>;

fn zeros(d: usize) -> Deriv {
    vec![DMatrix::zeros(d, d); d]
}

fn zeros2(d: usize) -> Deriv2 {
    vec![vec![DMatrix::zeros(d, d); d]; d]
}

/// Minkowski metric `-dt^2 + |dx|^2` with time on axis 0.
#[derive(Clone, Debug)]
pub struct Minkowski {
    pub dim: usize,
}

impl MetricField for Minkowski {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "minkowski".into()
    }
    fn g_upper(&self, _x: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::identity(self.dim, self.dim);
        g[(0, 0)] = -1.0;
        g
    }
    fn g_lower(&self, x: &[f64]) -> DMatrix<f64> {
        self.g_upper(x)
    }
    fn d_g_upper(&self, _x: &[f64]) -> Deriv {
        zeros(self.dim)
    }
    fn d2_g_upper(&self, _x: &[f64]) -> Deriv2 {
        zeros2(self.dim)
    }
}

/// Constant-coefficient metric given by its lower matrix.
#[derive(Clone, Debug)]
pub struct ConstantMetric {
    pub lower: DMatrix<f64>,
    upper: DMatrix<f64>,
}

impl ConstantMetric {
    pub fn new(lower: DMatrix<f64>) -> crate::Result<Self> {
        let upper = lower
            .clone()
            .try_inverse()
            .ok_or(crate::Error::DegenerateMetric(lower.determinant()))?;
        Ok(ConstantMetric { lower, upper })
    }
}

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.lower.nrows()
    }
    fn name(&self) -> String {
        "constant".into()
    }
    fn g_upper(&self, _x: &[f64]) -> DMatrix<f64> {
        self.upper.clone()
    }
    fn g_lower(&self, _x: &[f64]) -> DMatrix<f64> {
        self.lower.clone()
    }
    fn d_g_upper(&self, _x: &[f64]) -> Deriv {
        zeros(self.dim())
    }
    fn d2_g_upper(&self, _x: &[f64]) -> Deriv2 {
        zeros2(self.dim())
    }
}

/// `-dt^2 + c(x)^{-2} |dx|^2`, so `g^{-1} = diag(-1, c^2, ..., c^2)`.
#[derive(Clone)]
pub struct SpeedProfile {
    pub dim: usize,
    pub c: Scalar,
}

impl MetricField for SpeedProfile {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "speed-profile".into()
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        let c = self.c.value(x);
        let mut g = DMatrix::identity(self.dim, self.dim) * (c * c);
        g[(0, 0)] = -1.0;
        g
    }
    fn d_g_upper(&self, x: &[f64]) -> Deriv {
        let c = self.c.value(x);
        let gc = self.c.gradient(x);
        (0..self.dim)
            .map(|i| {
                let mut m = DMatrix::identity(self.dim, self.dim) * (2.0 * c * gc[i]);
                m[(0, 0)] = 0.0;
                m
            })
            .collect()
    }
    fn d2_g_upper(&self, x: &[f64]) -> Deriv2 {
        let c = self.c.value(x);
        let gc = self.c.gradient(x);
        let hc = self.c.hessian(x);
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| {
                        let mut m = DMatrix::identity(self.dim, self.dim) * (2.0 * (gc[i] * gc[j] + c * hc[(i, j)]));
                        m[(0, 0)] = 0.0;
                        m
                    })
                    .collect()
            })
            .collect()
    }
}

/// `e^{-2 phi} base`; with base Minkowski and `phi -> -phi` this is the
/// conformal-minkowski family `e^{2 phi} eta`.
#[derive(Clone)]
pub struct Conformal {
    pub base: Metric,
    pub phi: Scalar,
}

impl Conformal {
    /// `e^{2 phi} eta`.
    pub fn minkowski(dim: usize, phi: Scalar) -> Self {
        Conformal {
            base: Arc::new(Minkowski { dim }),
            phi: Arc::new(crate::fields::Scaled(-1.0, phi)),
        }
    }
}

impl MetricField for Conformal {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn name(&self) -> String {
        format!("conformal({})", self.base.name())
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.g_upper(x) * (2.0 * self.phi.value(x)).exp()
    }
    fn g_lower(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.g_lower(x) * (-2.0 * self.phi.value(x)).exp()
    }
    fn d_g_upper(&self, x: &[f64]) -> Deriv {
        let e = (2.0 * self.phi.value(x)).exp();
        let dp = self.phi.gradient(x);
        let g = self.base.g_upper(x);
        self.base
            .d_g_upper(x)
            .into_iter()
            .enumerate()
            .map(|(i, dg)| (dg + &g * (2.0 * dp[i])) * e)
            .collect()
    }
    fn d2_g_upper(&self, x: &[f64]) -> Deriv2 {
        let d = self.dim();
        let e = (2.0 * self.phi.value(x)).exp();
        let dp = self.phi.gradient(x);
        let hp = self.phi.hessian(x);
        let g = self.base.g_upper(x);
        let dg = self.base.d_g_upper(x);
        let d2g = self.base.d2_g_upper(x);
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let s = 4.0 * dp[i] * dp[j] + 2.0 * hp[(i, j)];
                        (&d2g[i][j] + &g * s + &dg[j] * (2.0 * dp[i]) + &dg[i] * (2.0 * dp[j])) * e
                    })
                    .collect()
            })
            .collect()
    }
}

/// Metric in semigeodesic half-space form: `x^n >= 0` is the last axis,
/// `g^{nn} = 1`, `g^{n alpha} = 0` and the tangential inverse block is
/// `G(x^n) = G0 + x^n G1 + (x^n)^2 G2 / 2`, independent of the boundary
/// coordinates.
#[derive(Clone, Debug)]
pub struct Layered {
    pub g0: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
}

impl Layered {
    pub fn new(g0: DMatrix<f64>, g1: DMatrix<f64>, g2: DMatrix<f64>) -> Self {
        Layered { g0, g1, g2 }
    }

    /// Tangential inverse block and its first two normal derivatives.
    pub fn jets(&self, xn: f64) -> [DMatrix<f64>; 3] {
        [
            &self.g0 + &self.g1 * xn + &self.g2 * (0.5 * xn * xn),
            &self.g1 + &self.g2 * xn,
            self.g2.clone(),
        ]
    }

    fn embed(&self, m: &DMatrix<f64>, nn: f64) -> DMatrix<f64> {
        let n = self.g0.nrows();
        let mut g = DMatrix::zeros(n + 1, n + 1);
        g.view_mut((0, 0), (n, n)).copy_from(m);
        g[(n, n)] = nn;
        g
    }
}

impl MetricField for Layered {
    fn dim(&self) -> usize {
        self.g0.nrows() + 1
    }
    fn name(&self) -> String {
        "layered".into()
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        let [g, _, _] = self.jets(x[self.dim() - 1]);
        self.embed(&g, 1.0)
    }
    fn d_g_upper(&self, x: &[f64]) -> Deriv {
        let d = self.dim();
        let [_, g1, _] = self.jets(x[d - 1]);
        let mut out = zeros(d);
        out[d - 1] = self.embed(&g1, 0.0);
        out
    }
    fn d2_g_upper(&self, x: &[f64]) -> Deriv2 {
        let d = self.dim();
        let mut out = zeros2(d);
        out[d - 1][d - 1] = self.embed(&self.g2, 0.0);
        let _ = x;
        out
    }
}

/// Diffeomorphism of the chart with an explicit Jacobian.
pub trait Diffeo: Send + Sync {
    fn map(&self, x: &[f64]) -> DVector<f64>;
    /// `J[(i, j)] = partial_j Phi^i`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `Phi(x) = x + b(x) v` with a scalar bump `b`.
#[derive(Clone)]
pub struct BumpShift {
    pub bump: Scalar,
    pub v: Vec<f64>,
}

impl Diffeo for BumpShift {
    fn map(&self, x: &[f64]) -> DVector<f64> {
        let b = self.bump.value(x);
        DVector::from_iterator(x.len(), x.iter().zip(&self.v).map(|(xi, vi)| xi + b * vi))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let db = self.bump.gradient(x);
        let v = DVector::from_column_slice(&self.v);
        DMatrix::identity(x.len(), x.len()) + v * db.transpose()
    }
}

pub struct Identity;

impl Diffeo for Identity {
    fn map(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
}

/// `Phi^* g`: inverse metric `J^{-1} g^{-1}(Phi(x)) J^{-T}`.
#[derive(Clone)]
pub struct Pullback {
    pub base: Metric,
    pub phi: Arc<dyn Diffeo>,
}

impl MetricField for Pullback {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn name(&self) -> String {
        format!("pullback({})", self.base.name())
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        let y = self.phi.map(x);
        let j = self.phi.jacobian(x);
        match j.try_inverse() {
            Some(ji) => &ji * self.base.g_upper(y.as_slice()) * ji.transpose(),
            None => DMatrix::from_element(x.len(), x.len(), f64::NAN),
        }
    }
    fn g_lower(&self, x: &[f64]) -> DMatrix<f64> {
        let y = self.phi.map(x);
        let j = self.phi.jacobian(x);
        j.transpose() * self.base.g_lower(y.as_slice()) * j
    }
}

/// Metric from closures of the inverse metric only.
pub struct FnMetric {
    pub dim: usize,
    pub label: String,
    pub upper: Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
}

impl MetricField for FnMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        self.label.clone()
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        (self.upper)(x)
    }
}

/// Finite-difference derivatives of `g^{-1}` regardless of what the field
/// provides analytically.
pub fn fd_d_g_upper(field: &dyn MetricField, x: &[f64]) -> Deriv {
    (0..x.len()).map(|i| fd_axis(x, i, H_FD, |y| field.g_upper(y))).collect()
}
