//! Scalar, complex scalar and covector fields on a coordinate chart.
//!
//! Every field exposes values and first derivatives; second derivatives of
//! real scalar fields are needed by conformal factors and gauge functions.
//! Missing derivatives fall back to fourth-order central differences.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::tol::H_FD;

/// Fourth-order central difference of `f` along axis `i`.
pub fn fd_axis<T, F>(x: &[f64], i: usize, h: f64, f: F) -> T
where
    F: Fn(&[f64]) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut y = x.to_vec();
    let x0 = x[i];
    y[i] = x0 + 2.0 * h;
    let f2 = f(&y);
    y[i] = x0 + h;
    let f1 = f(&y);
    y[i] = x0 - h;
    let fm1 = f(&y);
    y[i] = x0 - 2.0 * h;
    let fm2 = f(&y);
    (f1 - fm1) * (8.0 / (12.0 * h)) + (fm2 - f2) * (1.0 / (12.0 * h))
}

/// Fourth-order central difference of a complex vector function.
pub fn fd_axis_cvec<F>(x: &[f64], i: usize, h: f64, f: F) -> DVector<Complex64>
where
    F: Fn(&[f64]) -> DVector<Complex64>,
{
    let mut y = x.to_vec();
    let mut at = |s: f64| {
        y[i] = x[i] + s;
        f(&y)
    };
    let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
    let c1 = Complex64::new(8.0 / (12.0 * h), 0.0);
    let c2 = Complex64::new(1.0 / (12.0 * h), 0.0);
    (p1 - m1) * c1 + (m2 - p2) * c2
}

pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), (0..x.len()).map(|i| fd_axis(x, i, H_FD, |y| self.value(y))))
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            let col = fd_axis(x, i, crate::tol::H_FD2, |y| self.gradient(y));
            h.set_column(i, &col);
        }
        (&h + h.transpose()) * 0.5
    }
}

pub type Scalar = Arc<dyn ScalarField>;

#[derive(Clone, Debug)]
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// Affine function `offset + coeffs . x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl ScalarField for Linear {
    fn value(&self, x: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), (0..x.len()).map(|i| self.coeffs.get(i).copied().unwrap_or(0.0)))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// Polynomial in a single coordinate: `sum_k coeffs[k] * x[axis]^k`.
#[derive(Clone, Debug)]
pub struct AxisPolynomial {
    pub axis: usize,
    pub coeffs: Vec<f64>,
}

impl AxisPolynomial {
    fn eval(&self, s: f64, order: usize) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(order) {
            let mut fall = 1.0;
            for j in 0..order {
                fall *= (k - j) as f64;
            }
            acc += c * fall * s.powi((k - order) as i32);
        }
        acc
    }
}

impl ScalarField for AxisPolynomial {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x[self.axis], 0)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[self.axis] = self.eval(x[self.axis], 1);
        g
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.len(), x.len());
        h[(self.axis, self.axis)] = self.eval(x[self.axis], 2);
        h
    }
}

/// `amp * (1 - |x_s - c|^2 / R^2)^power` on the spatial coordinates, where the
/// time axis is excluded. Vanishes to order `power` on the sphere of radius R.
/// Optionally restricted to the ball (zero outside).
#[derive(Clone, Debug)]
pub struct BallBump {
    pub amp: f64,
    pub power: i32,
    pub radius: f64,
    pub center: Vec<f64>,
    pub time_axis: usize,
    pub clip: bool,
}

impl BallBump {
    pub fn new(amp: f64, power: i32, radius: f64, dim: usize) -> Self {
        BallBump { amp, power, radius, center: vec![0.0; dim], time_axis: 0, clip: false }
    }

    fn w(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let d = x.len();
        let r2 = self.radius * self.radius;
        let mut dw = DVector::zeros(d);
        let mut s = 0.0;
        for i in 0..d {
            if i == self.time_axis {
                continue;
            }
            let c = self.center.get(i).copied().unwrap_or(0.0);
            s += (x[i] - c) * (x[i] - c);
            dw[i] = -2.0 * (x[i] - c) / r2;
        }
        (1.0 - s / r2, dw)
    }

    fn inside(&self, w: f64) -> bool {
        !self.clip || w > 0.0
    }
}

impl ScalarField for BallBump {
    fn value(&self, x: &[f64]) -> f64 {
        let (w, _) = self.w(x);
        if !self.inside(w) {
            return 0.0;
        }
        self.amp * w.powi(self.power)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let (w, dw) = self.w(x);
        if !self.inside(w) || self.power == 0 {
            return DVector::zeros(x.len());
        }
        dw * (self.amp * self.power as f64 * w.powi(self.power - 1))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let (w, dw) = self.w(x);
        if !self.inside(w) || self.power == 0 {
            return DMatrix::zeros(d, d);
        }
        let p = self.power as f64;
        let r2 = self.radius * self.radius;
        let mut hw = DMatrix::zeros(d, d);
        for i in 0..d {
            if i != self.time_axis {
                hw[(i, i)] = -2.0 / r2;
            }
        }
        let mut h = &dw * dw.transpose() * (self.amp * p * (p - 1.0) * w.powi(self.power - 2));
        h += hw * (self.amp * p * w.powi(self.power - 1));
        h
    }
}

/// `amp * exp(-|x - c|^2 / (2 sigma^2))` over the listed axes.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub amp: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
    pub axes: Vec<usize>,
}

impl ScalarField for Gaussian {
    fn value(&self, x: &[f64]) -> f64 {
        let s: f64 = self.axes.iter().map(|&i| (x[i] - self.center[i]).powi(2)).sum();
        self.amp * (-s / (2.0 * self.sigma * self.sigma)).exp()
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let v = self.value(x);
        let mut g = DVector::zeros(x.len());
        for &i in &self.axes {
            g[i] = -v * (x[i] - self.center[i]) / (self.sigma * self.sigma);
        }
        g
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let v = self.value(x);
        let s2 = self.sigma * self.sigma;
        let mut h = DMatrix::zeros(x.len(), x.len());
        for &i in &self.axes {
            for &j in &self.axes {
                let di = x[i] - self.center[i];
                let dj = x[j] - self.center[j];
                h[(i, j)] = v * (di * dj / (s2 * s2) - if i == j { 1.0 / s2 } else { 0.0 });
            }
        }
        h
    }
}

/// Sum of scalar fields.
#[derive(Clone)]
pub struct Sum(pub Vec<Scalar>);

impl ScalarField for Sum {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|f| f.value(x)).sum()
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.0.iter().fold(DVector::zeros(x.len()), |acc, f| acc + f.gradient(x))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.0.iter().fold(DMatrix::zeros(x.len(), x.len()), |acc, f| acc + f.hessian(x))
    }
}

/// `c * f`.
#[derive(Clone)]
pub struct Scaled(pub f64, pub Scalar);

impl ScalarField for Scaled {
    fn value(&self, x: &[f64]) -> f64 {
        self.0 * self.1.value(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.1.gradient(x) * self.0
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.1.hessian(x) * self.0
    }
}

/// Product `f * g`.
#[derive(Clone)]
pub struct Product(pub Scalar, pub Scalar);

impl ScalarField for Product {
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x) * self.1.value(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.0.gradient(x) * self.1.value(x) + self.1.gradient(x) * self.0.value(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (a, b) = (self.0.value(x), self.1.value(x));
        let (ga, gb) = (self.0.gradient(x), self.1.gradient(x));
        self.0.hessian(x) * b + self.1.hessian(x) * a + &ga * gb.transpose() + &gb * ga.transpose()
    }
}

/// Scalar field from a closure; derivatives by finite differences.
pub struct FnScalar(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl ScalarField for FnScalar {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub trait ComplexScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> Complex64;

    fn gradient(&self, x: &[f64]) -> DVector<Complex64> {
        DVector::from_iterator(x.len(), (0..x.len()).map(|i| fd_axis(x, i, H_FD, |y| self.value(y))))
    }
}

pub type CScalar = Arc<dyn ComplexScalarField>;

/// `re + i im` built from two real fields.
#[derive(Clone)]
pub struct ComplexPair {
    pub re: Scalar,
    pub im: Scalar,
}

impl ComplexPair {
    pub fn real(re: Scalar) -> Self {
        ComplexPair { re, im: Arc::new(Constant(0.0)) }
    }
    pub fn constant(c: Complex64) -> Self {
        ComplexPair { re: Arc::new(Constant(c.re)), im: Arc::new(Constant(c.im)) }
    }
}

impl ComplexScalarField for ComplexPair {
    fn value(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.value(x), self.im.value(x))
    }
    fn gradient(&self, x: &[f64]) -> DVector<Complex64> {
        let a = self.re.gradient(x);
        let b = self.im.gradient(x);
        DVector::from_iterator(x.len(), a.iter().zip(b.iter()).map(|(r, i)| Complex64::new(*r, *i)))
    }
}

/// Complex scalar from a closure.
pub struct FnComplex(pub Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>);

impl ComplexScalarField for FnComplex {
    fn value(&self, x: &[f64]) -> Complex64 {
        (self.0)(x)
    }
}

/// Sum of complex scalars.
pub struct ComplexSum(pub Vec<CScalar>);

impl ComplexScalarField for ComplexSum {
    fn value(&self, x: &[f64]) -> Complex64 {
        self.0.iter().map(|f| f.value(x)).sum()
    }
    fn gradient(&self, x: &[f64]) -> DVector<Complex64> {
        self.0.iter().fold(DVector::zeros(x.len()), |acc, f| acc + f.gradient(x))
    }
}

/// One-form `A_j(x) dx^j` with complex components.
pub trait CovectorField: Send + Sync {
    fn value(&self, x: &[f64]) -> DVector<Complex64>;

    /// `J[(i, j)] = d_i A_j`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = x.len();
        let mut j = DMatrix::zeros(d, d);
        for i in 0..d {
            let row = fd_axis_cvec(x, i, H_FD, |y| self.value(y));
            for k in 0..d {
                j[(i, k)] = row[k];
            }
        }
        j
    }
}

pub type Covector = Arc<dyn CovectorField>;

pub struct ZeroForm(pub usize);

impl CovectorField for ZeroForm {
    fn value(&self, _x: &[f64]) -> DVector<Complex64> {
        DVector::zeros(self.0)
    }
    fn jacobian(&self, _x: &[f64]) -> DMatrix<Complex64> {
        DMatrix::zeros(self.0, self.0)
    }
}

/// Componentwise one-form.
pub struct Components(pub Vec<CScalar>);

impl CovectorField for Components {
    fn value(&self, x: &[f64]) -> DVector<Complex64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|c| c.value(x)))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = self.0.len();
        let mut j = DMatrix::zeros(d, d);
        for (k, c) in self.0.iter().enumerate() {
            let g = c.gradient(x);
            for i in 0..d {
                j[(i, k)] = g[i];
            }
        }
        j
    }
}

/// `scale * d psi`.
pub struct Exact {
    pub psi: Scalar,
    pub scale: Complex64,
}

impl CovectorField for Exact {
    fn value(&self, x: &[f64]) -> DVector<Complex64> {
        self.psi.gradient(x).map(|v| self.scale * v)
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<Complex64> {
        self.psi.hessian(x).map(|v| self.scale * v)
    }
}

/// Sum of one-forms.
pub struct FormSum(pub Vec<Covector>);

impl CovectorField for FormSum {
    fn value(&self, x: &[f64]) -> DVector<Complex64> {
        let d = x.len();
        self.0.iter().fold(DVector::zeros(d), |acc, f| acc + f.value(x))
    }
    fn jacobian(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = x.len();
        self.0.iter().fold(DMatrix::zeros(d, d), |acc, f| acc + f.jacobian(x))
    }
}

/// One-form from a closure.
pub struct FnForm(pub Arc<dyn Fn(&[f64]) -> DVector<Complex64> + Send + Sync>);

impl CovectorField for FnForm {
    fn value(&self, x: &[f64]) -> DVector<Complex64> {
        (self.0)(x)
    }
}

/// Constant one-form.
pub fn constant_form(c: Vec<Complex64>) -> Covector {
    Arc::new(Components(c.into_iter().map(|v| Arc::new(ComplexPair::constant(v)) as CScalar).collect()))
}

/// Real constant complex scalar.
pub fn constant_scalar(c: Complex64) -> CScalar {
    Arc::new(ComplexPair::constant(c))
}
