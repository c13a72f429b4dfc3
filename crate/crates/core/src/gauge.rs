//! Gauge normalizations: common semigeodesic charts, det-jet matching by
//! conformal factors and removal of the normal component of `A`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::boundary_frame::{SemigeodesicChart, Shot};
use crate::error::{Error, Result};
use crate::fields::{CovectorField, Exact, FormSum, Scalar, ScalarField};
use crate::geometry::{CoefficientTriple, MetricField};

/// `det g_{jk}` and its first two derivatives along `axis` at `x`, from the
/// analytic inverse-metric derivatives.
pub fn det_jets(g: &dyn MetricField, x: &[f64], axis: usize) -> [f64; 3] {
    let gu = g.g_upper(x);
    let gi = gu.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(gu.nrows(), gu.ncols(), f64::NAN));
    let d1 = &g.d_g_upper(x)[axis];
    let d2 = &g.d2_g_upper(x)[axis][axis];
    let a = &gi * d1;
    // log det g = -log det g^{-1}
    let l1 = -a.trace();
    let l2 = (&a * &a).trace() - (&gi * d2).trace();
    let d = 1.0 / gu.determinant();
    [d, d * l1, d * (l2 + l1 * l1)]
}

/// Boundary-normal coordinates `(y, r)` near one boundary patch.
pub trait NormalCoordinates: Send + Sync {
    fn dim(&self) -> usize;
    /// Largest `r` the chart covers.
    fn collar(&self) -> f64;
    fn shoot(&self, y: &[f64], r: f64) -> Result<Shot>;
    fn from_ambient(&self, x: &[f64]) -> Result<(Vec<f64>, f64)>;
}

/// `y = (x^0, .., x^{n-1})`, `r = x^n - lo`.
#[derive(Clone, Debug)]
pub struct FlatCollar {
    pub dim: usize,
    pub lo: f64,
    pub width: f64,
}

impl NormalCoordinates for FlatCollar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn collar(&self) -> f64 {
        self.width
    }
    fn shoot(&self, y: &[f64], r: f64) -> Result<Shot> {
        let mut x = y.to_vec();
        x.push(self.lo + r);
        Ok(Shot { x: DVector::from_vec(x), jac: DMatrix::identity(self.dim, self.dim) })
    }
    fn from_ambient(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok((x[..self.dim - 1].to_vec(), x[self.dim - 1] - self.lo))
    }
}

impl NormalCoordinates for SemigeodesicChart {
    fn dim(&self) -> usize {
        self.frame.dim()
    }
    fn collar(&self) -> f64 {
        self.eps
    }
    fn shoot(&self, y: &[f64], r: f64) -> Result<Shot> {
        SemigeodesicChart::shoot(self, y, r)
    }
    fn from_ambient(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        SemigeodesicChart::from_ambient(self, x)
    }
}

/// Normal jets `d_r^j f(0)`, `j <= order`, from a one-sided polynomial
/// fit of degree `order + 3` on `r_k = k h`.
pub fn one_sided_jets<F>(f: F, h: f64, order: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<f64>,
{
    let k = order + 4;
    let vals: Vec<f64> = (0..k).map(|i| f(i as f64 * h)).collect::<Result<_>>()?;
    let v = DMatrix::from_fn(k, k, |i, j| (i as f64).powi(j as i32));
    let c = v.lu().solve(&DVector::from_vec(vals)).ok_or(Error::IllConditioned(f64::INFINITY))?;
    let mut fact = 1.0;
    Ok((0..=order)
        .map(|j| {
            if j > 0 {
                fact *= j as f64;
            }
            c[j] * fact / h.powi(j as i32)
        })
        .collect())
}

/// Sample spacing for normal fits inside a collar of width `w`.
fn fit_step(w: f64, order: usize) -> f64 {
    (0.4 * w / (order + 3) as f64).min(0.02)
}

/// Smooth collar cutoff: 1 for `r <= w / 2`, 0 for `r >= w`.
fn cutoff(r: f64, w: f64) -> (f64, f64) {
    let t = (r - 0.5 * w) / (0.5 * w);
    if t <= 0.0 {
        return (1.0, 0.0);
    }
    if t >= 1.0 {
        return (0.0, 0.0);
    }
    // 1 - smoothstep of order 2
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / (0.5 * w);
    (1.0 - s, -ds)
}

/// `psi = cut(r) sum_{j<=J} psi_j(y) r^{j+1} / (j+1)!` with `psi_j` the
/// normal jets of one real part of `A_r`.
pub struct CollarPotential {
    pub chart: Arc<dyn NormalCoordinates>,
    pub a: Arc<dyn CovectorField>,
    pub imag: bool,
    pub order: usize,
}

impl CollarPotential {
    /// `A_r(y, r)` (real or imaginary part).
    fn a_r(&self, y: &[f64], r: f64) -> Result<f64> {
        let s = self.chart.shoot(y, r)?;
        let a = self.a.value(s.x.as_slice());
        let col = s.jac.column(self.chart.dim() - 1);
        let v: Complex64 = a.iter().zip(col.iter()).map(|(a, c)| a * c).sum();
        Ok(if self.imag { v.im } else { v.re })
    }

    pub fn jets(&self, y: &[f64]) -> Result<Vec<f64>> {
        one_sided_jets(|r| self.a_r(y, r), fit_step(self.chart.collar(), self.order), self.order)
    }

    /// `(psi, d_r psi)` at chart point `(y, r)`.
    fn eval(&self, y: &[f64], r: f64) -> Result<(f64, f64)> {
        let w = self.chart.collar();
        let (c, dc) = cutoff(r, w);
        if c == 0.0 && dc == 0.0 {
            return Ok((0.0, 0.0));
        }
        let jets = self.jets(y)?;
        let (mut p, mut dp) = (0.0, 0.0);
        let mut fact = 1.0;
        for (j, pj) in jets.iter().enumerate() {
            fact *= (j + 1) as f64;
            p += pj * r.powi(j as i32 + 1) / fact;
            dp += pj * r.powi(j as i32) * (j + 1) as f64 / fact;
        }
        Ok((c * p, c * dp + dc * p))
    }

    /// Collar point of `x`; the polynomial is continued to `-w < r < 0`.
    fn chart_point(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let (y, r) = self.chart.from_ambient(x).ok()?;
        (r.abs() < self.chart.collar()).then_some((y, r))
    }
}

impl ScalarField for CollarPotential {
    fn value(&self, x: &[f64]) -> f64 {
        match self.chart_point(x) {
            Some((y, r)) => self.eval(&y, r).map(|v| v.0).unwrap_or(f64::NAN),
            None => 0.0,
        }
    }

    /// Analytic in `r`, central differences in `y`, mapped by `J^{-T}`.
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = x.len();
        let Some((y, r)) = self.chart_point(x) else {
            return DVector::zeros(d);
        };
        let mut gc = DVector::zeros(d);
        let Ok((_, dr)) = self.eval(&y, r) else {
            return DVector::from_element(d, f64::NAN);
        };
        gc[d - 1] = dr;
        let h = crate::tol::H_FD;
        for a in 0..d - 1 {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[a] += h;
            ym[a] -= h;
            match (self.eval(&yp, r), self.eval(&ym, r)) {
                (Ok(p), Ok(m)) => gc[a] = (p.0 - m.0) / (2.0 * h),
                _ => return DVector::from_element(d, f64::NAN),
            }
        }
        match self.chart.shoot(&y, r).ok().and_then(|s| s.jac.transpose().lu().solve(&gc)) {
            Some(g) => g,
            None => DVector::from_element(d, f64::NAN),
        }
    }
}

/// Result of `enforce_m3`.
pub struct M3Gauge {
    pub triple: CoefficientTriple,
    pub psi_re: Scalar,
    pub psi_im: Scalar,
    /// `max |d_r^j B_r(y, 0)|` over the check points, `j <= order`.
    pub residual: f64,
}

/// `B = A - d psi` with `d_r^j B_r(y, 0) = 0` for `j <= order` and
/// `psi = 0` on the boundary. Complex `A` is handled part by part.
pub fn enforce_m3(triple: &CoefficientTriple, chart: Arc<dyn NormalCoordinates>, order: usize, check: &[Vec<f64>]) -> Result<M3Gauge> {
    let w = chart.collar();
    if w < 1e-3 || fit_step(w, order) * (order + 3) as f64 > 0.5 * w {
        return Err(Error::Invalid(format!("collar width {w} is too thin for the cutoff")));
    }
    let pot = |imag| CollarPotential { chart: chart.clone(), a: triple.a.clone(), imag, order };
    let psi_re: Scalar = Arc::new(pot(false));
    let psi_im: Scalar = Arc::new(pot(true));
    let b: Arc<dyn CovectorField> = Arc::new(FormSum(vec![
        triple.a.clone(),
        Arc::new(Exact { psi: psi_re.clone(), scale: Complex64::new(-1.0, 0.0) }),
        Arc::new(Exact { psi: psi_im.clone(), scale: Complex64::new(0.0, -1.0) }),
    ]));
    let out = CoefficientTriple { a: b, ..triple.clone() };
    let mut residual: f64 = 0.0;
    for y in check {
        for imag in [false, true] {
            let jets = CollarPotential { chart: chart.clone(), a: out.a.clone(), imag, order }.jets(y)?;
            residual = residual.max(jets.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
    }
    if residual > 1e-8 {
        return Err(Error::FitRejected(format!("normal jets of B_r remain at {residual:.3e}")));
    }
    Ok(M3Gauge { triple: out, psi_re, psi_im, residual })
}

/// `D = det g` in chart coordinates and its normal jets up to `order`.
pub fn chart_det_jets(chart: &dyn NormalCoordinates, g: &dyn MetricField, y: &[f64], order: usize) -> Result<Vec<f64>> {
    one_sided_jets(
        |r| {
            let s = chart.shoot(y, r)?;
            Ok((s.jac.transpose() * g.g_lower(s.x.as_slice()) * &s.jac).determinant())
        },
        fit_step(chart.collar(), order),
        order,
    )
}

/// Normal jets `mu_2, mu_3` of `mu` with `mu = d_r mu = 0` on the boundary
/// such that `e^mu g`, in its own semigeodesic chart, has det jets
/// `target` up to `order`, given the det jets `d` of `g`; `n` is the
/// number of boundary dimensions.
pub fn match_det_jets(d: &[f64], target: &[f64], n: usize, order: usize) -> Result<Vec<f64>> {
    if !(2..=3).contains(&order) {
        return Err(Error::Unsupported(format!("det-jet matching is implemented for orders 2 and 3, not {order}")));
    }
    if n == 0 {
        return Err(Error::Unsupported("in one dimension every semigeodesic det is 1".into()));
    }
    if d.len() <= order || target.len() <= order {
        return Err(Error::Invalid("det jets shorter than the matching order".into()));
    }
    if (d[0] - target[0]).abs() > 1e-9 * d[0].abs() || (d[1] - target[1]).abs() > 1e-9 * d[0].abs().max(1.0) {
        return Err(Error::Invalid("conformal factors with vanishing first jet cannot change D or D'".into()));
    }
    let nf = n as f64;
    let mu2 = (target[2] - d[2]) / (nf * d[0]);
    let mut mu = vec![0.0, 0.0, mu2];
    if order == 3 {
        mu.push((target[3] - d[3] - (3.0 * nf - 0.5) * mu2 * d[1]) / (nf * d[0]));
    }
    Ok(mu)
}

/// `mu(y, r) = cut(r) (mu_2 r^2 / 2 + mu_3 r^3 / 6)` with jets from a closure.
pub struct ConformalJetField {
    pub chart: Arc<dyn NormalCoordinates>,
    pub mu: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl ScalarField for ConformalJetField {
    fn value(&self, x: &[f64]) -> f64 {
        let Ok((y, r)) = self.chart.from_ambient(x) else { return 0.0 };
        if r < 0.0 {
            return 0.0;
        }
        let m = (self.mu)(&y);
        let (c, _) = cutoff(r, self.chart.collar());
        c * (m.get(2).copied().unwrap_or(0.0) * r * r / 2.0 + m.get(3).copied().unwrap_or(0.0) * r.powi(3) / 6.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommonChartReport {
    pub max_defect: f64,
    pub per_point: Vec<f64>,
}

/// `max_j |(J^T g~ J)_{nj} - delta_{nj}|` over `(y, r)` samples in `chart`.
pub fn verify_common_chart(g_tilde: &dyn MetricField, chart: &dyn NormalCoordinates, samples: &[(Vec<f64>, f64)]) -> Result<CommonChartReport> {
    let d = chart.dim();
    let per_point = samples
        .iter()
        .map(|(y, r)| {
            let s = chart.shoot(y, *r)?;
            let g = s.jac.transpose() * g_tilde.g_lower(s.x.as_slice()) * &s.jac;
            Ok((0..d).map(|j| (g[(d - 1, j)] - if j == d - 1 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CommonChartReport { max_defect: per_point.iter().copied().fold(0.0, f64::max), per_point })
}

/// Normal jets on a boundary grid: inverse-metric upper triangle, `det g`
/// and `A` components, all in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetSpec {
    pub order: usize,
    pub points: Vec<Vec<f64>>,
    /// `[point][component][j]`.
    pub g: Vec<Vec<Vec<f64>>>,
    /// `[point][j]`.
    pub det: Vec<Vec<f64>>,
    /// `[point][component][j]` as `(re, im)`.
    pub a: Vec<Vec<Vec<(f64, f64)>>>,
}

impl JetSpec {
    pub fn build(chart: &dyn NormalCoordinates, triple: &CoefficientTriple, points: &[Vec<f64>], order: usize) -> Result<JetSpec> {
        if order < 2 {
            return Err(Error::Invalid("jet order must be at least 2".into()));
        }
        let d = chart.dim();
        let h = fit_step(chart.collar(), order);
        let mut g = Vec::new();
        let mut det = Vec::new();
        let mut a = Vec::new();
        for y in points {
            let mut gp = Vec::new();
            for i in 0..d {
                for j in i..d {
                    gp.push(one_sided_jets(
                        |r| {
                            let s = chart.shoot(y, r)?;
                            let gl = s.jac.transpose() * triple.g.g_lower(s.x.as_slice()) * &s.jac;
                            let gu = gl.try_inverse().ok_or(Error::DegenerateMetric(0.0))?;
                            Ok(gu[(i, j)])
                        },
                        h,
                        order,
                    )?);
                }
            }
            g.push(gp);
            det.push(chart_det_jets(chart, &*triple.g, y, order)?);
            let mut ap = Vec::new();
            for k in 0..d {
                let part = |imag: bool| {
                    one_sided_jets(
                        |r| {
                            let s = chart.shoot(y, r)?;
                            let v: Complex64 = triple.a.value(s.x.as_slice()).iter().zip(s.jac.column(k).iter()).map(|(a, c)| a * c).sum();
                            Ok(if imag { v.im } else { v.re })
                        },
                        h,
                        order,
                    )
                };
                let (re, im) = (part(false)?, part(true)?);
                ap.push(re.into_iter().zip(im).collect());
            }
            a.push(ap);
        }
        let spec = JetSpec { order, points: points.to_vec(), g, det, a };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::Invalid("jet order must be at least 2".into()));
        }
        let finite = self.g.iter().flatten().flatten().all(|v| v.is_finite())
            && self.det.iter().flatten().all(|v| v.is_finite())
            && self.a.iter().flatten().flatten().all(|(r, i)| r.is_finite() && i.is_finite());
        if !finite {
            return Err(Error::NonFinite("jet spec".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("jet spec serializes")
    }

    pub fn from_json(s: &str) -> Result<JetSpec> {
        let spec: JetSpec = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Largest difference between matching entries.
    pub fn max_difference(&self, other: &JetSpec) -> f64 {
        let mut m: f64 = 0.0;
        for (x, y) in self.g.iter().flatten().flatten().zip(other.g.iter().flatten().flatten()) {
            m = m.max((x - y).abs());
        }
        for (x, y) in self.det.iter().flatten().zip(other.det.iter().flatten()) {
            m = m.max((x - y).abs());
        }
        for (x, y) in self.a.iter().flatten().flatten().zip(other.a.iter().flatten().flatten()) {
            m = m.max((x.0 - y.0).abs()).max((x.1 - y.1).abs());
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_frame::{build_semigeodesic_chart, Frame};
    use crate::fields::{constant_form, AxisPolynomial, Components, ComplexPair, FnScalar, Linear, Product, Gaussian};
    use crate::geometry::{conformal_transform, Chart, Conformal, HalfSpace, Layered, Metric, Minkowski, Slab};
    use crate::lens::{lens_fan, trace_interior};
    use crate::null_flow::RayOptions;
    use crate::ray_transforms::light_ray_transform_oneform;

    fn collar() -> Arc<dyn NormalCoordinates> {
        Arc::new(FlatCollar { dim: 3, lo: 0.0, width: 0.4 })
    }

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn one_sided_jets_of_polynomial() {
        let j = one_sided_jets(|r| Ok(1.0 + 2.0 * r - 3.0 * r * r + 0.5 * r.powi(3)), 0.01, 3).unwrap();
        let want = [1.0, 2.0, -6.0, 3.0];
        for k in 0..4 {
            assert!((j[k] - want[k]).abs() < 1e-8 * (1.0 + want[k].abs()), "{k}: {}", j[k]);
        }
    }

    #[test]
    fn m3_trivial_and_quadratic() {
        let t0 = CoefficientTriple { a: constant_form(vec![c(0.3), c(-0.2), c(0.0)]), ..CoefficientTriple::bare(Arc::new(Minkowski { dim: 3 })) };
        let y = vec![vec![0.1, 0.2], vec![-0.3, 0.0]];
        let g0 = enforce_m3(&t0, collar(), 3, &y).unwrap();
        for x in [[0.1, 0.2, 0.05], [0.0, 0.0, 0.3]] {
            assert!(g0.psi_re.value(&x).abs() < 1e-12);
        }
        // A = x^n dx^n
        let xn = Arc::new(Linear { coeffs: vec![0.0, 0.0, 1.0], offset: 0.0 });
        let a = Components(vec![crate::fields::constant_scalar(c(0.0)), crate::fields::constant_scalar(c(0.0)), Arc::new(ComplexPair::real(xn))]);
        let t1 = CoefficientTriple { a: Arc::new(a), ..t0.clone() };
        let g1 = enforce_m3(&t1, collar(), 3, &y).unwrap();
        for r in [0.0, 0.05, 0.15] {
            let x = [0.1, -0.2, r];
            assert!((g1.psi_re.value(&x) - r * r / 2.0).abs() < 1e-10);
            let b = g1.triple.a.value(&x);
            assert!(b[2].norm() < 1e-9, "{}", b[2]);
            assert!((b[0] - 0.0).norm() < 1e-9);
        }
        assert!(g1.residual < 1e-8);
    }

    #[test]
    fn m3_divergence_at_the_boundary() {
        // A_n = 1 + x^n: psi = r + r^2 / 2, d_r^2 psi = 1 on both sides of r = 0
        let an = Arc::new(Linear { coeffs: vec![0.0, 0.0, 1.0], offset: 1.0 });
        let a = Components(vec![crate::fields::constant_scalar(c(0.0)), crate::fields::constant_scalar(c(0.0)), Arc::new(ComplexPair::real(an))]);
        let t = CoefficientTriple { a: Arc::new(a), ..CoefficientTriple::bare(Arc::new(Minkowski { dim: 3 })) };
        let m = enforce_m3(&t, collar(), 3, &[vec![0.0, 0.0]]).unwrap();
        let h = m.psi_re.hessian(&[0.1, -0.2, 0.0]);
        assert!((h[(2, 2)] - 1.0).abs() < 1e-6, "{h}");
        let jb = m.triple.a.jacobian(&[0.1, -0.2, 0.0]);
        assert!(jb.camax() < 1e-6, "{jb}");
    }

    #[test]
    fn m3_complex_idempotent_and_transforms() {
        let g: Metric = Arc::new(Minkowski { dim: 3 });
        let f = Frame::new(g.clone(), &Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)], Arc::new(Slab { dim: 3, lo: 0.0, hi: 1.0 })).unwrap());
        let bump = Arc::new(Gaussian { amp: 0.7, center: vec![0.0, 0.1, 0.2], sigma: 0.5, axes: vec![0, 1, 2] });
        let an = ComplexPair { re: bump.clone(), im: Arc::new(Product(bump, Arc::new(Linear { coeffs: vec![0.0, 1.0, 0.0], offset: 0.5 }))) };
        let a = Components(vec![crate::fields::constant_scalar(c(0.1)), crate::fields::constant_scalar(c(0.0)), Arc::new(an)]);
        let t = CoefficientTriple { a: Arc::new(a), ..CoefficientTriple::bare(g.clone()) };
        let y = vec![vec![0.0, 0.0], vec![0.3, -0.2]];
        let m = enforce_m3(&t, collar(), 3, &y).unwrap();
        let again = enforce_m3(&m.triple, collar(), 3, &y).unwrap();
        for yy in &y {
            for imag in [false, true] {
                let j = CollarPotential { chart: collar(), a: m.triple.a.clone(), imag, order: 3 }.jets(yy).unwrap();
                assert!(j.iter().all(|v| v.abs() < 1e-8));
            }
        }
        for x in [[0.0, 0.0, 0.1], [0.2, 0.1, 0.3]] {
            assert!(again.psi_re.value(&x).abs() < 1e-8 && again.psi_im.value(&x).abs() < 1e-8);
        }
        // boundary-to-boundary L1 is unchanged
        let o = RayOptions { variational: false, ..RayOptions::for_diameter(2.0) };
        let rays: Vec<_> = [[-1.0, 0.3], [-1.0, -0.2], [-1.2, 0.5]]
            .iter()
            .map(|xi| trace_interior(&f, &f.covector(0, &[0.0, 0.0], xi), &o).unwrap().ray)
            .collect();
        let before = light_ray_transform_oneform(&*g, &*t.a, &rays);
        let after = light_ray_transform_oneform(&*g, &*m.triple.a, &rays);
        for (x, y) in before.rows.iter().zip(&after.rows) {
            assert!((x.value - y.value).norm() < 1e-8, "{} vs {}", x.value, y.value);
        }
    }

    #[test]
    fn m3_thin_collar_rejected() {
        let t = CoefficientTriple::bare(Arc::new(Minkowski { dim: 3 }));
        let thin: Arc<dyn NormalCoordinates> = Arc::new(FlatCollar { dim: 3, lo: 0.0, width: 1e-4 });
        assert!(enforce_m3(&t, thin, 3, &[]).is_err());
    }

    #[test]
    fn det_matching_trivial_and_planted() {
        let d = [2.0, 0.3, -0.4, 0.1];
        assert_eq!(match_det_jets(&d, &d, 2, 3).unwrap(), vec![0.0; 4]);
        let r2 = 0.05;
        let t = [2.0, 0.3, -0.4 + r2, 0.1];
        let mu = match_det_jets(&d, &t, 2, 2).unwrap();
        assert!((mu[2] - r2 / (2.0 * d[0])).abs() < 1e-15);
        assert!(match_det_jets(&d, &d, 2, 4).is_err());
        assert!(match_det_jets(&d, &[2.1, 0.3, 0.0, 0.0], 2, 2).is_err());
    }

    fn layered(scale: f64) -> Layered {
        Layered::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, 1.2]),
            DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, -0.3 * scale]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.4 * scale]),
        )
    }

    /// det jets of `e^mu g` recomputed in its own numerically built semigeodesic chart
    #[test]
    fn det_matching_recomputation() {
        let g = layered(1.0);
        // reference with the same D, D' up to the trace-free change of G1
        let g_ref = Layered::new(g.g0.clone(), g.g1.clone(), DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]));
        let flat = FlatCollar { dim: 3, lo: 0.0, width: 0.4 };
        let d = chart_det_jets(&flat, &g, &[0.0, 0.0], 3).unwrap();
        let t = chart_det_jets(&flat, &g_ref, &[0.0, 0.0], 3).unwrap();
        let dj = det_jets(&g, &[0.0, 0.0, 0.0], 2);
        for k in 0..3 {
            assert!((d[k] - dj[k]).abs() < 1e-7, "{k}: {} vs {}", d[k], dj[k]);
        }
        let mu = match_det_jets(&d, &t, 2, 3).unwrap();
        // phi = -mu / 2 on the plateau of the cutoff, which holds every fit sample
        let phi: Scalar = Arc::new(AxisPolynomial { axis: 2, coeffs: vec![0.0, 0.0, -mu[2] / 4.0, -mu[3] / 12.0] });
        let hat = conformal_transform(&CoefficientTriple::bare(Arc::new(g.clone())), phi, Arc::new(crate::fields::Constant(0.0)));
        let chart_hat = HalfSpace { dim: 3 };
        let frame = Frame::new(hat.g.clone(), &Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)], Arc::new(chart_hat)).unwrap());
        let sg = build_semigeodesic_chart(frame, 0, 0.3, &[vec![0.0, 0.0]]).unwrap();
        let dh = chart_det_jets(&sg, &*hat.g, &[0.0, 0.0], 3).unwrap();
        assert!((dh[2] - t[2]).abs() < 1e-6, "{} vs {}", dh[2], t[2]);
        assert!((dh[3] - t[3]).abs() < 1e-4, "{} vs {}", dh[3], t[3]);
        // the unmatched metric misses the target
        assert!((d[2] - t[2]).abs() > 1e-2);
    }

    #[test]
    fn det_matching_is_grid_independent() {
        let g = layered(1.0);
        let g_ref = layered(1.5);
        let mut flat = FlatCollar { dim: 3, lo: 0.0, width: 0.4 };
        let a = match_det_jets(&chart_det_jets(&flat, &g, &[0.0, 0.0], 2).unwrap(), &chart_det_jets(&flat, &g_ref, &[0.0, 0.0], 2).unwrap(), 2, 2);
        flat.width = 0.2;
        let b = match_det_jets(&chart_det_jets(&flat, &g, &[0.5, -0.3], 2).unwrap(), &chart_det_jets(&flat, &g_ref, &[0.5, -0.3], 2).unwrap(), 2, 2);
        // D' differs between these two references, so both are rejected alike
        assert_eq!(a.is_err(), b.is_err());
        let g_ref2 = Layered::new(g.g0.clone(), g.g1.clone(), DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]));
        let m1 = match_det_jets(&chart_det_jets(&flat, &g, &[0.0, 0.0], 2).unwrap(), &chart_det_jets(&flat, &g_ref2, &[0.0, 0.0], 2).unwrap(), 2, 2).unwrap();
        flat.width = 0.4;
        let m2 = match_det_jets(&chart_det_jets(&flat, &g, &[0.7, 0.2], 2).unwrap(), &chart_det_jets(&flat, &g_ref2, &[0.7, 0.2], 2).unwrap(), 2, 2).unwrap();
        assert!((m1[2] - m2[2]).abs() < 1e-6);
    }

    #[test]
    fn common_chart_reports() {
        let g = layered(1.0);
        let flat = FlatCollar { dim: 3, lo: 0.0, width: 0.4 };
        let samples = vec![(vec![0.0, 0.0], 0.0), (vec![0.2, 0.1], 0.1)];
        assert_eq!(verify_common_chart(&g, &flat, &samples).unwrap().max_defect, 0.0);
        let mink = Minkowski { dim: 3 };
        let skew = ConstantMetric_skew();
        assert!(verify_common_chart(&*skew, &flat, &samples).unwrap().max_defect > 1e-2);
        // a semigeodesic chart built for the conformal metric is semigeodesic for it
        let phi: Scalar = Arc::new(AxisPolynomial { axis: 2, coeffs: vec![0.0, 0.0, 0.3] });
        let conf: Metric = Arc::new(Conformal { base: Arc::new(mink), phi });
        let frame = Frame::new(conf.clone(), &Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)], Arc::new(HalfSpace { dim: 3 })).unwrap());
        let sg = build_semigeodesic_chart(frame, 0, 0.3, &[vec![0.0, 0.0]]).unwrap();
        assert!(verify_common_chart(&*conf, &sg, &samples).unwrap().max_defect < 1e-8);
    }

    #[allow(non_snake_case)]
    fn ConstantMetric_skew() -> Metric {
        Arc::new(crate::geometry::ConstantMetric::new(DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.2, 0.0, 1.0, 0.0, 0.2, 0.0, 1.0])).unwrap())
    }

    #[test]
    fn jet_spec_round_trip() {
        let t = CoefficientTriple { a: constant_form(vec![c(0.1), c(0.2), c(0.0)]), ..CoefficientTriple::bare(Arc::new(layered(1.0))) };
        let flat = FlatCollar { dim: 3, lo: 0.0, width: 0.4 };
        let spec = JetSpec::build(&flat, &t, &[vec![0.0, 0.0], vec![0.1, 0.3]], 2).unwrap();
        let back = JetSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.max_difference(&back), 0.0);
        // g^{11} jets of the layered block: (1.2, -0.3, 0.4)
        let g11 = &spec.g[0][3];
        assert!((g11[0] - 1.2).abs() < 1e-10 && (g11[1] + 0.3).abs() < 1e-8 && (g11[2] - 0.4).abs() < 1e-6);
        assert!(JetSpec::build(&flat, &t, &[vec![0.0, 0.0]], 1).is_err());
    }

    #[test]
    fn gauges_leave_lens_tables_alone() {
        let g: Metric = Arc::new(Minkowski { dim: 3 });
        let chart = Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)], Arc::new(Slab { dim: 3, lo: 0.0, hi: 1.0 })).unwrap();
        let f = Frame::new(g.clone(), &chart);
        let fan: Vec<_> = [-0.4, 0.0, 0.3].iter().map(|w| f.covector(0, &[0.0, 0.0], &[-1.0, *w])).collect();
        let o = RayOptions { variational: false, ..RayOptions::for_diameter(2.0) };
        let a = lens_fan(&f, &fan, &o);
        let mu = vec![0.0, 0.0, 0.4, -0.2];
        let field = ConformalJetField { chart: collar(), mu: Arc::new(move |_| mu.clone()) };
        let phi: Scalar = Arc::new(FnScalar(Arc::new(move |x: &[f64]| -0.5 * field.value(x))));
        let hat = conformal_transform(&CoefficientTriple::bare(g), phi, Arc::new(crate::fields::Constant(0.0)));
        let b = lens_fan(&Frame::new(hat.g.clone(), &chart), &fan, &o);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            let (ex, ey) = (x.exit.as_ref().unwrap(), y.exit.as_ref().unwrap());
            for k in 0..2 {
                assert!((ex.xp[k] - ey.xp[k]).abs() < 1e-6);
            }
        }
    }
}
