//! Charts, Lorentzian metric fields, coefficient triples `(g, A, q)` and
//! pointwise tensor algebra.

pub mod boundary;
pub mod metric;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use boundary::{Boundary, CoordJets, Cylinder, HalfSpace, Slab};
pub use metric::{
    BumpShift, Conformal, ConstantMetric, Diffeo, FnMetric, Identity, Layered, Metric, MetricField, Minkowski,
    Pullback, SpeedProfile,
};

use crate::error::{check_finite, Error, Result};
use crate::fields::{
    CScalar, Covector, CovectorField, Exact, FnComplex, FormSum, Scalar, ScalarField,
};
use crate::tol::{DET_FLOOR, ON_BOUNDARY};

/// Coordinate chart with boundary defining function and time axis.
#[derive(Clone)]
pub struct Chart {
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub boundary: Arc<dyn Boundary>,
    pub time_axis: usize,
}

impl Chart {
    pub fn new(bounds: Vec<(f64, f64)>, boundary: Arc<dyn Boundary>) -> Result<Self> {
        let dim = bounds.len();
        if dim < 2 {
            return Err(Error::Invalid(format!("chart dimension {dim} < 2")));
        }
        if boundary.dim() != dim {
            return Err(Error::Invalid(format!("boundary dimension {} != chart dimension {dim}", boundary.dim())));
        }
        Ok(Chart { dim, bounds, boundary, time_axis: 0 })
    }

    /// Orientation field `Z`: the coordinate vector of the time axis.
    pub fn z_field(&self, _x: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim);
        z[self.time_axis] = 1.0;
        z
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn diameter(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| (hi - lo).powi(2)).sum::<f64>().sqrt()
    }

    /// Deterministic boundary sample points: `k` per boundary coordinate on
    /// every patch. Periodic coordinates cover one period, the others the
    /// chart range of the matching axis.
    pub fn boundary_samples(&self, k: usize) -> Vec<DVector<f64>> {
        let b = &self.boundary;
        let per = b.periods();
        let n = self.dim - 1;
        let mut out = Vec::new();
        for patch in 0..b.patches() {
            let total = k.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let y: Vec<f64> = (0..n)
                    .map(|a| {
                        let i = rem % k;
                        rem /= k;
                        let f = (i as f64 + 0.5) / k as f64;
                        match per[a] {
                            Some(p) => f * p,
                            None => {
                                let (lo, hi) = self.bounds[a];
                                lo + f * (hi - lo)
                            }
                        }
                    })
                    .collect();
                out.push(b.embed(patch, &y));
            }
        }
        out
    }
}

/// `(g, A, q)` defining `P = |g|^{-1/2}(d_j - iA_j)|g|^{1/2} g^{jk}(d_k - iA_k) + q`.
#[derive(Clone)]
pub struct CoefficientTriple {
    pub g: Metric,
    pub a: Covector,
    pub q: CScalar,
}

impl CoefficientTriple {
    pub fn new(g: Metric, a: Covector, q: CScalar) -> Self {
        CoefficientTriple { g, a, q }
    }

    /// `(g, 0, 0)`.
    pub fn bare(g: Metric) -> Self {
        let d = g.dim();
        CoefficientTriple {
            g,
            a: Arc::new(crate::fields::ZeroForm(d)),
            q: crate::fields::constant_scalar(Complex64::new(0.0, 0.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCovector {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
}

/// Rejects non-finite, degenerate or wrongly signed metrics at `x`.
pub fn check_metric(field: &dyn MetricField, x: &[f64]) -> Result<DMatrix<f64>> {
    let gu = field.g_upper(x);
    check_finite("g_upper", gu.as_slice())?;
    let det = gu.determinant();
    if !det.is_finite() || det.abs() < DET_FLOOR || (1.0 / det).abs() < DET_FLOOR {
        return Err(Error::DegenerateMetric(1.0 / det));
    }
    let eig = nalgebra::SymmetricEigen::new(gu.clone()).eigenvalues;
    let neg = eig.iter().filter(|v| **v < 0.0).count();
    if neg != 1 {
        return Err(Error::Signature(format!("{neg} negative eigenvalues at {x:?}")));
    }
    Ok(gu)
}

/// Norm `g^{jk} xi_j xi_k`.
pub fn dual_norm(field: &dyn MetricField, x: &[f64], xi: &[f64]) -> f64 {
    let v = DVector::from_column_slice(xi);
    (v.transpose() * field.g_upper(x) * &v)[(0, 0)]
}

pub fn classify(field: &dyn MetricField, pc: &PointCovector, tol: f64) -> Result<CausalClass> {
    check_finite("x", &pc.x)?;
    check_finite("xi", &pc.xi)?;
    let n2: f64 = pc.xi.iter().map(|v| v * v).sum();
    let q = dual_norm(field, &pc.x, &pc.xi);
    check_finite("g(xi, xi)", &[q])?;
    Ok(if q.abs() <= tol * n2 {
        CausalClass::Lightlike
    } else if q < 0.0 {
        CausalClass::Timelike
    } else {
        CausalClass::Spacelike
    })
}

pub fn raise(field: &dyn MetricField, x: &[f64], xi: &[f64]) -> DVector<f64> {
    field.g_upper(x) * DVector::from_column_slice(xi)
}

pub fn lower(field: &dyn MetricField, x: &[f64], v: &[f64]) -> DVector<f64> {
    field.g_lower(x) * DVector::from_column_slice(v)
}

/// `gamma[i][(j, k)] = Gamma^i_{jk}`.
pub fn christoffel(field: &dyn MetricField, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let d = field.dim();
    let gu = check_metric(field, x)?;
    let dgl = field.d_g_lower(x);
    for m in &dgl {
        check_finite("d g", m.as_slice())?;
    }
    let mut out = vec![DMatrix::zeros(d, d); d];
    for j in 0..d {
        for k in j..d {
            // lowered symbol Gamma_{l jk}
            let low = DVector::from_iterator(d, (0..d).map(|l| 0.5 * (dgl[j][(l, k)] + dgl[k][(l, j)] - dgl[l][(j, k)])));
            let up = &gu * low;
            for i in 0..d {
                out[i][(j, k)] = up[i];
                out[i][(k, j)] = up[i];
            }
        }
    }
    Ok(out)
}

/// `partial_j log sqrt|det g| = -1/2 tr(g_lower partial_j g^{-1})`.
pub fn log_sqrt_det_grad(field: &dyn MetricField, x: &[f64]) -> DVector<f64> {
    let gl = field.g_lower(x);
    let dg = field.d_g_upper(x);
    DVector::from_iterator(x.len(), dg.iter().map(|m| -0.5 * (&gl * m).trace()))
}

/// Drift part of the wave operator: `b^k = partial_j g^{jk} + (partial_j log sqrt|g|) g^{jk}`,
/// so that `box u = g^{jk} u_jk + b^k u_k`.
pub fn box_drift(field: &dyn MetricField, x: &[f64]) -> DVector<f64> {
    let d = x.len();
    let gu = field.g_upper(x);
    let dg = field.d_g_upper(x);
    let l = log_sqrt_det_grad(field, x);
    let mut b = gu.transpose() * &l;
    for k in 0..d {
        for (j, m) in dg.iter().enumerate() {
            b[k] += m[(j, k)];
        }
    }
    b
}

/// `box_g u` at `x` for a real scalar field.
pub fn box_g(field: &dyn MetricField, u: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    let gu = check_metric(field, x)?;
    let h = u.hessian(x);
    let du = u.gradient(x);
    let v = gu.component_mul(&h).sum() + box_drift(field, x).dot(&du);
    check_finite("box_g", &[v])?;
    Ok(v)
}

/// `box_g u` from the complex jet `(du, hess u)` of `u` at `x`.
pub fn box_jet(field: &dyn MetricField, x: &[f64], du: &DVector<Complex64>, hu: &DMatrix<Complex64>) -> Complex64 {
    let gu = field.g_upper(x);
    let b = box_drift(field, x);
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..x.len() {
        s += b[j] * du[j];
        for k in 0..x.len() {
            s += gu[(j, k)] * hu[(j, k)];
        }
    }
    s
}

/// Metric pairing `g^{jk} a_j b_k` of two complex covectors (no conjugation).
pub fn pair(gu: &DMatrix<f64>, a: &DVector<Complex64>, b: &DVector<Complex64>) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..a.len() {
        for k in 0..b.len() {
            s += gu[(j, k)] * a[j] * b[k];
        }
    }
    s
}

/// Divergence `|g|^{-1/2} partial_j(|g|^{1/2} g^{jk} A_k)` of a one-form.
pub fn div_form(field: &dyn MetricField, a: &dyn CovectorField, x: &[f64]) -> Complex64 {
    let gu = field.g_upper(x);
    let ja = a.jacobian(x);
    let av = a.value(x);
    let b = box_drift(field, x);
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..x.len() {
        s += b[j] * av[j];
        for k in 0..x.len() {
            s += gu[(j, k)] * ja[(j, k)];
        }
    }
    s
}

/// `P_{g,A,q} u` at `x` from the jet `(u, du, hess u)`:
/// `box u - 2i<A, du> - i (div A) u - <A, A> u + q u`.
pub fn apply_p_jet(
    triple: &CoefficientTriple,
    x: &[f64],
    u: Complex64,
    du: &DVector<Complex64>,
    hu: &DMatrix<Complex64>,
    with_q: bool,
) -> Complex64 {
    let i = Complex64::i();
    let gu = triple.g.g_upper(x);
    let a = triple.a.value(x);
    let mut v = box_jet(triple.g.as_ref(), x, du, hu) - 2.0 * i * pair(&gu, &a, du)
        - i * div_form(triple.g.as_ref(), triple.a.as_ref(), x) * u
        - pair(&gu, &a, &a) * u;
    if with_q {
        v += triple.q.value(x) * u;
    }
    v
}

/// Pulls back `(g, A, q)` by a diffeomorphism that fixes the boundary
/// pointwise (checked on the chart's boundary samples).
pub fn pullback_triple(triple: &CoefficientTriple, phi: Arc<dyn Diffeo>, chart: &Chart) -> Result<CoefficientTriple> {
    for p in chart.boundary_samples(8) {
        let m = phi.map(p.as_slice());
        let dev = (&m - &p).amax();
        if dev > ON_BOUNDARY {
            return Err(Error::Invalid(format!("diffeomorphism moves boundary point {:?} by {dev:.3e}", p.as_slice())));
        }
        let j = phi.jacobian(p.as_slice());
        if j.determinant().abs() < DET_FLOOR {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
    }
    let g: Metric = Arc::new(Pullback { base: triple.g.clone(), phi: phi.clone() });
    let a0 = triple.a.clone();
    let ph = phi.clone();
    let a: Covector = Arc::new(crate::fields::FnForm(Arc::new(move |x: &[f64]| {
        let y = ph.map(x);
        let j = ph.jacobian(x);
        let av = a0.value(y.as_slice());
        j.map(|v| Complex64::new(v, 0.0)).transpose() * av
    })));
    let q0 = triple.q.clone();
    let ph = phi;
    let q: CScalar = Arc::new(FnComplex(Arc::new(move |x: &[f64]| q0.value(ph.map(x).as_slice()))));
    Ok(CoefficientTriple { g, a, q })
}

/// Conformal potential `q_phi = a box_g phi - a^2 |d phi|_g^2` with
/// `a = (dim - 2)/2`, so that `e^{a phi} box_g e^{-a phi} = -q_phi`.
pub fn conformal_potential(g: &dyn MetricField, phi: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    let a = (g.dim() as f64 - 2.0) / 2.0;
    let dp = phi.gradient(x);
    let n2 = (dp.transpose() * g.g_upper(x) * &dp)[(0, 0)];
    Ok(a * box_g(g, phi, x)? - a * a * n2)
}

/// `(e^{-2 phi} g, A - d psi, e^{2 phi}(q - q_phi))`.
pub fn conformal_transform(triple: &CoefficientTriple, phi: Scalar, psi: Scalar) -> CoefficientTriple {
    let g: Metric = Arc::new(Conformal { base: triple.g.clone(), phi: phi.clone() });
    let a: Covector = Arc::new(FormSum(vec![
        triple.a.clone(),
        Arc::new(Exact { psi, scale: Complex64::new(-1.0, 0.0) }),
    ]));
    let base = triple.g.clone();
    let q0 = triple.q.clone();
    let q: CScalar = Arc::new(FnComplex(Arc::new(move |x: &[f64]| {
        let p = phi.value(x);
        if p == 0.0 && phi.gradient(x).amax() == 0.0 && phi.hessian(x).amax() == 0.0 {
            return q0.value(x);
        }
        let qp = conformal_potential(base.as_ref(), phi.as_ref(), x).unwrap_or(f64::NAN);
        (q0.value(x) - qp) * (2.0 * p).exp()
    })));
    CoefficientTriple { g, a, q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{constant_form, BallBump, Constant, ComplexPair, Components, FnScalar, Gaussian, Linear};
    use rand::{Rng, SeedableRng};

    fn mink(d: usize) -> Metric {
        Arc::new(Minkowski { dim: d })
    }

    #[test]
    fn classify_examples() {
        let m = mink(3);
        let pc = |xi: [f64; 3]| PointCovector { x: vec![0.0; 3], xi: xi.to_vec() };
        assert_eq!(classify(m.as_ref(), &pc([1.0, 0.0, 0.0]), 1e-12).unwrap(), CausalClass::Timelike);
        assert_eq!(classify(m.as_ref(), &pc([1.0, 1.0, 0.0]), 1e-12).unwrap(), CausalClass::Lightlike);
        // g = diag(-1, 1/c^2, 1), c = 2: g^{jk} xi_j xi_k = -1 + 4 = 3 by hand
        let g = ConstantMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.25, 1.0]))).unwrap();
        let q = dual_norm(&g, &[0.0; 3], &[1.0, 1.0, 0.0]);
        assert!((q - 3.0).abs() < 1e-14);
        assert_eq!(classify(&g, &pc([1.0, 1.0, 0.0]), 1e-12).unwrap(), CausalClass::Spacelike);
        assert!(classify(m.as_ref(), &pc([f64::NAN, 0.0, 0.0]), 1e-12).is_err());
    }

    #[test]
    fn raise_lower_examples() {
        let m = mink(2);
        let v = raise(m.as_ref(), &[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(v.as_slice(), &[-1.0, 0.0]);
        let g = ConstantMetric::new(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.25]))).unwrap();
        let v = raise(&g, &[0.0, 0.0], &[2.0, 2.0]);
        assert!((&v - DVector::from_vec(vec![-2.0, 8.0])).amax() < 1e-14);
        let back = lower(&g, &[0.0, 0.0], v.as_slice());
        assert!((back - DVector::from_vec(vec![2.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn christoffel_conformal_law() {
        // e^{2 f} eta with f quadratic: Gamma^i_jk = d_j f delta^i_k + d_k f delta^i_j - eta_jk eta^{il} d_l f
        let f = Arc::new(FnScalar(Arc::new(|x: &[f64]| 0.1 * x[0] * x[1] + 0.05 * x[2] * x[2] - 0.02 * x[1] * x[1])));
        let dfe = |x: &[f64]| [0.1 * x[1], 0.1 * x[0] - 0.04 * x[1], 0.1 * x[2]];
        let g = Conformal::minkowski(3, f);
        let x = [0.3, -0.2, 0.5];
        let gam = christoffel(&g, &x).unwrap();
        let df = dfe(&x);
        let eta = [-1.0, 1.0, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut e = 0.0;
                    if i == k {
                        e += df[j];
                    }
                    if i == j {
                        e += df[k];
                    }
                    if j == k {
                        e -= eta[j] * eta[i] * df[i];
                    }
                    assert!((gam[i][(j, k)] - e).abs() < 1e-8, "Gamma^{i}_{j}{k}");
                    assert!((gam[i][(j, k)] - gam[i][(k, j)]).abs() < 1e-15);
                }
            }
        }
        let z = christoffel(mink(3).as_ref(), &x).unwrap();
        assert!(z.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn box_examples() {
        let m = mink(3);
        let t2 = FnScalar(Arc::new(|x: &[f64]| x[0] * x[0]));
        assert!((box_g(m.as_ref(), &t2, &[0.3, 0.1, 0.2]).unwrap() + 2.0).abs() < 1e-6);
        let xy = FnScalar(Arc::new(|x: &[f64]| x[1] * x[2]));
        assert!(box_g(m.as_ref(), &xy, &[0.3, 0.1, 0.2]).unwrap().abs() < 1e-6);
        // -dt^2 + c(x)^{-2} dx^2 in 1+1: box u = -u_tt + c^2 u_xx + c c' u_x
        // (|g|^{1/2} = 1/c, g^{xx} = c^2); c = 1 + 0.5 x, u = t x^2 + x^3
        let c = Linear { coeffs: vec![0.0, 0.5], offset: 1.0 };
        let g = SpeedProfile { dim: 2, c: Arc::new(c) };
        let u = FnScalar(Arc::new(|x: &[f64]| x[0] * x[1] * x[1] + x[1].powi(3)));
        let (t, x) = (0.4, 0.3);
        let cv = 1.0 + 0.5 * x;
        let oracle = cv * cv * (2.0 * t + 6.0 * x) + cv * 0.5 * (2.0 * t * x + 3.0 * x * x);
        assert!((box_g(&g, &u, &[t, x]).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn degenerate_metric_rejected() {
        let g = FnMetric { dim: 2, label: "deg".into(), upper: Arc::new(|_x: &[f64]| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1e-20])) };
        assert!(matches!(check_metric(&g, &[0.0, 0.0]), Err(Error::DegenerateMetric(_))));
        let r = FnMetric { dim: 2, label: "riem".into(), upper: Arc::new(|_x: &[f64]| DMatrix::identity(2, 2)) };
        assert!(matches!(check_metric(&r, &[0.0, 0.0]), Err(Error::Signature(_))));
    }

    #[test]
    fn inverse_pairs_at_random_points() {
        let g = SpeedProfile { dim: 3, c: Arc::new(crate::fields::Sum(vec![Arc::new(Constant(1.0)), Arc::new(clipped_bump())])) };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = g.g_lower(&x) * g.g_upper(&x) - DMatrix::identity(3, 3);
            assert!(e.amax() < 1e-10);
            check_metric(&g, &x).unwrap();
        }
    }

    fn clipped_bump() -> BallBump {
        BallBump { clip: true, ..BallBump::new(0.1, 3, 1.0, 3) }
    }

    fn disk_chart() -> Chart {
        Chart::new(vec![(-1.0, 3.0), (-1.0, 1.0), (-1.0, 1.0)], Arc::new(Cylinder { radius: 1.0 })).unwrap()
    }

    #[test]
    fn pullback_identity_and_q() {
        let q: CScalar = Arc::new(ComplexPair {
            re: Arc::new(Gaussian { amp: 1.0, center: vec![0.0; 3], sigma: 0.5, axes: vec![0, 1, 2] }),
            im: Arc::new(Constant(0.2)),
        });
        let tr = CoefficientTriple::new(mink(3), constant_form(vec![Complex64::new(0.1, 0.0); 3]), q.clone());
        let same = pullback_triple(&tr, Arc::new(Identity), &disk_chart()).unwrap();
        let x = [0.1, 0.2, 0.3];
        assert!((same.g.g_upper(&x) - tr.g.g_upper(&x)).amax() < 1e-15);
        assert!((same.a.value(&x) - tr.a.value(&x)).iter().all(|c| c.norm() < 1e-15));
        let bump = BallBump { clip: true, ..BallBump::new(1.0, 5, 0.7, 3) };
        let phi = Arc::new(BumpShift { bump: Arc::new(bump), v: vec![0.05, 0.1, -0.05] });
        let pb = pullback_triple(&tr, phi.clone(), &disk_chart()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect();
            let y = phi.map(&x);
            assert_eq!(pb.q.value(&x), q.value(y.as_slice()));
        }
        // a diffeo that moves the boundary is rejected
        let bad = Arc::new(BumpShift { bump: Arc::new(Constant(1.0)), v: vec![0.0, 0.1, 0.0] });
        assert!(pullback_triple(&tr, bad, &disk_chart()).is_err());
    }

    #[test]
    fn conformal_identity_is_bitwise() {
        let q: CScalar = Arc::new(ComplexPair::constant(Complex64::new(0.3, -0.1)));
        let a: Covector = Arc::new(Components(vec![
            crate::fields::constant_scalar(Complex64::new(0.1, 0.0)),
            Arc::new(ComplexPair::real(Arc::new(Linear { coeffs: vec![0.0, 1.0, 0.0], offset: 0.0 }))),
            crate::fields::constant_scalar(Complex64::new(0.0, 0.2)),
        ]));
        let tr = CoefficientTriple::new(mink(3), a, q);
        let ct = conformal_transform(&tr, Arc::new(Constant(0.0)), Arc::new(Constant(0.0)));
        let x = [0.2, -0.3, 0.4];
        assert_eq!(ct.g.g_upper(&x), tr.g.g_upper(&x));
        assert_eq!(ct.a.value(&x), tr.a.value(&x));
        assert_eq!(ct.q.value(&x), tr.q.value(&x));
    }

    /// Checks `P_{g~,A,q~}(e^{a phi} u) = e^{(a+2) phi} P_{g,A,q} u` with
    /// finite-difference jets, which pins the sign and exponent of `q_phi`.
    #[test]
    fn conformal_covariance_of_p() {
        let phi: Scalar = Arc::new(Gaussian { amp: 0.3, center: vec![0.1, 0.0, 0.2], sigma: 0.6, axes: vec![0, 1, 2] });
        let base = CoefficientTriple::new(
            Arc::new(SpeedProfile { dim: 3, c: Arc::new(Linear { coeffs: vec![0.0, 0.2, -0.1], offset: 1.0 }) }),
            constant_form(vec![Complex64::new(0.2, 0.0), Complex64::new(0.0, 0.0), Complex64::new(-0.1, 0.0)]),
            crate::fields::constant_scalar(Complex64::new(0.4, 0.1)),
        );
        let ct = conformal_transform(&base, phi.clone(), Arc::new(Constant(0.0)));
        let a = 0.5;
        let u = |x: &[f64]| Complex64::new((x[0] + 2.0 * x[1]).sin(), x[2] * x[0]);
        let x = [0.2, 0.1, -0.3];
        let jet = |f: &dyn Fn(&[f64]) -> Complex64| {
            let h = 1e-3;
            let d = 3;
            let mut du = DVector::zeros(d);
            let mut hu = DMatrix::zeros(d, d);
            for i in 0..d {
                du[i] = crate::fields::fd_axis(&x, i, h, f);
                for j in 0..d {
                    hu[(i, j)] = crate::fields::fd_axis(&x, i, h, |y| crate::fields::fd_axis(y, j, h, f));
                }
            }
            (f(&x), du, hu)
        };
        let (u0, du, hu) = jet(&u);
        let lhs_f = |y: &[f64]| u(y) * (a * phi.value(y)).exp();
        let (v0, dv, hv) = jet(&lhs_f);
        let lhs = apply_p_jet(&ct, &x, v0, &dv, &hv, true);
        let rhs = apply_p_jet(&base, &x, u0, &du, &hu, true) * ((a + 2.0) * phi.value(&x)).exp();
        assert!((lhs - rhs).norm() < 1e-5, "{lhs} vs {rhs}");
    }
}
