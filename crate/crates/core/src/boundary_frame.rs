//! Boundary covectors: tangential projection, lightlike lift, time
//! orientation, semigeodesic charts and ray-parameter normalization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::metric::{Deriv, Deriv2};
use crate::geometry::{Boundary, Chart, Metric, MetricField, PointCovector};
use crate::null_flow::{integrate_ray, RayOptions, RaySolution};
use crate::tol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Future,
    Past,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Interior,
    Exterior,
}

/// Tangential covector `xi'` at the boundary point with coordinates `xp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCovector {
    pub patch: usize,
    pub xp: Vec<f64>,
    pub xip: Vec<f64>,
    pub orientation: Orientation,
}

impl BoundaryCovector {
    pub fn negated(&self) -> Self {
        BoundaryCovector {
            xip: self.xip.iter().map(|v| -v).collect(),
            orientation: match self.orientation {
                Orientation::Future => Orientation::Past,
                Orientation::Past => Orientation::Future,
            },
            ..self.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        BoundaryCovector { xip: self.xip.iter().map(|v| c * v).collect(), ..self.clone() }
    }
}

/// Metric, boundary and orientation field bundled for boundary work.
#[derive(Clone)]
pub struct Frame {
    pub g: Metric,
    pub boundary: Arc<dyn Boundary>,
    pub z: DVector<f64>,
}

/// Ambient lift of a boundary covector.
#[derive(Clone, Debug)]
pub struct Lift {
    pub x: Vec<f64>,
    /// Lightlike covector `xi0 + kappa d rho`.
    pub p: Vec<f64>,
    /// Extension of `xi'` with `<xi0, d rho>_g = 0`.
    pub xi0: Vec<f64>,
    pub kappa: f64,
    /// `sqrt(-g^{ab} xi'_a xi'_b)`.
    pub xi_n: f64,
}

impl Frame {
    pub fn new(g: Metric, chart: &Chart) -> Self {
        Frame { g, boundary: chart.boundary.clone(), z: chart.z_field(&[]) }
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    fn on_boundary(&self, x: &[f64]) -> Result<()> {
        let r = self.boundary.rho(x);
        if r.abs() > tol::ON_BOUNDARY {
            return Err(Error::NotOnBoundary(r));
        }
        Ok(())
    }

    /// `xi0` with `xi0(E_a) = xi'_a` and `<xi0, d rho>_g = 0`.
    pub fn extend(&self, x: &[f64], e: &DMatrix<f64>, xip: &[f64]) -> Result<DVector<f64>> {
        let d = self.dim();
        let gu = self.g.g_upper(x);
        let nv = &gu * self.boundary.d_rho(x);
        let mut m = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for a in 0..d - 1 {
            m.row_mut(a).copy_from(&e.column(a).transpose());
            rhs[a] = xip[a];
        }
        m.row_mut(d - 1).copy_from(&nv.transpose());
        m.lu().solve(&rhs).ok_or_else(|| Error::IllConditioned(f64::INFINITY))
    }

    /// `-g^{ab} xi'_a xi'_b` evaluated as `-|xi0|_g^2`.
    pub fn radicand(&self, b: &BoundaryCovector) -> Result<f64> {
        let x = self.boundary.embed(b.patch, &b.xp);
        let e = self.boundary.frame(b.patch, &b.xp);
        let xi0 = self.extend(x.as_slice(), &e, &b.xip)?;
        Ok(-crate::geometry::dual_norm(&*self.g, x.as_slice(), xi0.as_slice()))
    }

    pub fn xi_n(&self, b: &BoundaryCovector) -> Result<f64> {
        let r = self.radicand(b)?;
        if r <= tol::DET_FLOOR * norm2(&b.xip) {
            return Err(Error::NotTimelike(r));
        }
        Ok(r.sqrt())
    }

    /// Orientation of `xi'` against the tangential part of `Z`.
    pub fn orientation(&self, patch: usize, xp: &[f64], xip: &[f64]) -> Orientation {
        let e = self.boundary.frame(patch, xp);
        let zt = (e.transpose() * &e).lu().solve(&(e.transpose() * &self.z)).unwrap_or_else(|| DVector::zeros(xp.len()));
        let v: f64 = zt.iter().zip(xip).map(|(a, b)| a * b).sum();
        if v < 0.0 {
            Orientation::Future
        } else {
            Orientation::Past
        }
    }

    pub fn covector(&self, patch: usize, xp: &[f64], xip: &[f64]) -> BoundaryCovector {
        BoundaryCovector { patch, xp: xp.to_vec(), xip: xip.to_vec(), orientation: self.orientation(patch, xp, xip) }
    }

    /// Restriction of `xi` to the tangent space at a boundary point.
    pub fn tangential_project(&self, pc: &PointCovector) -> Result<BoundaryCovector> {
        self.on_boundary(&pc.x)?;
        let (patch, y) = self.boundary.locate(&pc.x);
        let e = self.boundary.frame(patch, y.as_slice());
        let xi = DVector::from_column_slice(&pc.xi);
        let xip: Vec<f64> = (0..e.ncols()).map(|a| e.column(a).dot(&xi)).collect();
        Ok(self.covector(patch, y.as_slice(), &xip))
    }

    /// Lightlike lift `xi0 + kappa d rho`. The interior lift has
    /// `d rho(g^{-1} p) > 0`. Without an explicit side, future-pointing
    /// covectors lift to the interior and past-pointing ones to the exterior.
    pub fn lightlike_lift(&self, b: &BoundaryCovector, side: Option<Side>) -> Result<Lift> {
        let x = self.boundary.embed(b.patch, &b.xp);
        let e = self.boundary.frame(b.patch, &b.xp);
        let xi0 = self.extend(x.as_slice(), &e, &b.xip)?;
        let c = crate::geometry::dual_norm(&*self.g, x.as_slice(), xi0.as_slice());
        if -c <= tol::DET_FLOOR * norm2(&b.xip) {
            return Err(Error::NotTimelike(-c));
        }
        let dr = self.boundary.d_rho(x.as_slice());
        let a = crate::geometry::dual_norm(&*self.g, x.as_slice(), dr.as_slice());
        let side = side.unwrap_or(match b.orientation {
            Orientation::Future => Side::Interior,
            Orientation::Past => Side::Exterior,
        });
        let k = (-c / a).sqrt();
        let kappa = if side == Side::Interior { k } else { -k };
        let p = &xi0 + &dr * kappa;
        Ok(Lift { x: x.as_slice().to_vec(), p: p.as_slice().to_vec(), xi0: xi0.as_slice().to_vec(), kappa, xi_n: (-c).sqrt() })
    }

    /// Inward unit normal covector `d rho / |d rho|_g`.
    pub fn unit_normal(&self, x: &[f64]) -> DVector<f64> {
        let dr = self.boundary.d_rho(x);
        let a = crate::geometry::dual_norm(&*self.g, x, dr.as_slice());
        dr / a.sqrt()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().max(1.0)
}

/// Rescales a ray so that `g(x'(0), Z) = -1` (future) or `+1` (past).
pub fn normalize_ray_parameter(z: &DVector<f64>, sol: &RaySolution) -> Result<RaySolution> {
    let p0 = DVector::from_column_slice(sol.p(0));
    let gz = p0.dot(z);
    if gz.abs() < tol::DET_FLOOR {
        return Err(Error::Invalid("Z is orthogonal to the ray at its start".into()));
    }
    Ok(sol.rescaled(1.0 / gz.abs()))
}

/// Coordinates `(y, r)` with `x = Psi(y, r)` the point at distance `r` along
/// the unit-speed normal geodesic from the boundary point `y` of one patch.
pub struct SemigeodesicChart {
    pub frame: Frame,
    pub patch: usize,
    pub eps: f64,
    opts: RayOptions,
}

/// `Psi(y, r)` and its Jacobian (columns `d/dy^a`, then `d/dr`).
pub struct Shot {
    pub x: DVector<f64>,
    pub jac: DMatrix<f64>,
}

pub fn build_semigeodesic_chart(frame: Frame, patch: usize, eps: f64, samples: &[Vec<f64>]) -> Result<SemigeodesicChart> {
    if eps <= 0.0 {
        return Err(Error::Invalid(format!("collar width {eps} must be positive")));
    }
    let opts = RayOptions { variational: true, shell_projection: false, step: 1e-2 * eps, max_step: eps / 8.0, ..Default::default() };
    let chart = SemigeodesicChart { frame, patch, eps, opts };
    for y in samples {
        let base = chart.shoot(y, 0.0)?.jac.determinant();
        for k in 1..=16 {
            let det = chart.shoot(y, eps * k as f64 / 16.0)?.jac.determinant();
            if det * base <= 0.0 {
                return Err(Error::Invalid(format!("normal geodesics cross within the collar (eps = {eps})")));
            }
        }
    }
    Ok(chart)
}

impl SemigeodesicChart {
    fn normal_at(&self, y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let x = self.frame.boundary.embed(self.patch, y);
        let nu = self.frame.unit_normal(x.as_slice());
        (x, nu)
    }

    pub fn shoot(&self, y: &[f64], r: f64) -> Result<Shot> {
        let d = self.frame.dim();
        let (x0, p0) = self.normal_at(y);
        let e = self.frame.boundary.frame(self.patch, y);
        let mut dp = DMatrix::zeros(d, d - 1);
        for a in 0..d - 1 {
            let col = crate::fields::fd_axis(y, a, 1e-5, |yy| self.normal_at(yy).1);
            dp.set_column(a, &col);
        }
        let opts = RayOptions { max_s: r, ..self.opts.clone() };
        let sol = integrate_ray(&*self.frame.g, x0.as_slice(), p0.as_slice(), &opts, None, None)?;
        let k = sol.len() - 1;
        if (sol.s(k) - r).abs() > 1e-12 * r.max(1.0) {
            return Err(Error::StepCollapse(sol.s(k)));
        }
        let phi = sol.variational_matrix(k).unwrap();
        let fxx = phi.view((0, 0), (d, d));
        let fxp = phi.view((0, d), (d, d));
        let mut jac = DMatrix::zeros(d, d);
        let ty = fxx * &e + fxp * &dp;
        jac.view_mut((0, 0), (d, d - 1)).copy_from(&ty);
        jac.set_column(d - 1, &DVector::from_column_slice(sol.xdot(k)));
        Ok(Shot { x: DVector::from_column_slice(sol.x(k)), jac })
    }

    pub fn to_ambient(&self, y: &[f64], r: f64) -> Result<DVector<f64>> {
        Ok(self.shoot(y, r)?.x)
    }

    /// Inverse of `Psi` by Newton iteration.
    pub fn from_ambient(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let d = self.frame.dim();
        let (_, y0) = self.frame.boundary.locate(x);
        let a = crate::geometry::dual_norm(&*self.frame.g, x, self.frame.boundary.d_rho(x).as_slice());
        let mut u: Vec<f64> = y0.iter().copied().collect();
        u.push(self.frame.boundary.rho(x) / a.sqrt());
        let xt = DVector::from_column_slice(x);
        for _ in 0..50 {
            let s = self.shoot(&u[..d - 1], u[d - 1])?;
            let f = &s.x - &xt;
            if f.amax() <= tol::CHART_NEWTON {
                return Ok((u[..d - 1].to_vec(), u[d - 1]));
            }
            let du = s.jac.lu().solve(&(-f)).ok_or(Error::IllConditioned(f64::INFINITY))?;
            for i in 0..d {
                u[i] += du[i];
            }
        }
        Err(Error::Invalid("semigeodesic inversion did not converge".into()))
    }

    /// Metric components in `(y, r)` coordinates.
    pub fn metric_lower(&self, y: &[f64], r: f64) -> Result<DMatrix<f64>> {
        let s = self.shoot(y, r)?;
        let g = self.frame.g.g_lower(s.x.as_slice());
        Ok(s.jac.transpose() * g * &s.jac)
    }

    /// `max |g_{nj} - delta_{nj}|` over the sample points.
    pub fn block_defect(&self, samples: &[(Vec<f64>, f64)]) -> Result<f64> {
        let d = self.frame.dim();
        let mut worst: f64 = 0.0;
        for (y, r) in samples {
            let g = self.metric_lower(y, *r)?;
            for j in 0..d {
                let want = if j == d - 1 { 1.0 } else { 0.0 };
                worst = worst.max((g[(d - 1, j)] - want).abs());
            }
        }
        Ok(worst)
    }

    /// Grid rows `y.., r, g_ij (upper triangle)` for chart dumps.
    pub fn dump_rows(&self, samples: &[(Vec<f64>, f64)]) -> Result<Vec<Vec<f64>>> {
        let d = self.frame.dim();
        samples
            .iter()
            .map(|(y, r)| {
                let g = self.metric_lower(y, *r)?;
                let mut row = y.clone();
                row.push(*r);
                for i in 0..d {
                    for j in i..d {
                        row.push(g[(i, j)]);
                    }
                }
                Ok(row)
            })
            .collect()
    }
}

/// The metric of a semigeodesic chart as a metric field on `(y, r)`.
pub struct SemigeodesicMetric(pub Arc<SemigeodesicChart>);

impl MetricField for SemigeodesicMetric {
    fn dim(&self) -> usize {
        self.0.frame.dim()
    }
    fn name(&self) -> String {
        format!("semigeodesic({})", self.0.frame.g.name())
    }
    fn g_upper(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        match self.g_lower(x).try_inverse() {
            Some(m) => m,
            None => DMatrix::from_element(d, d, f64::NAN),
        }
    }
    fn g_lower(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        self.0.metric_lower(&x[..d - 1], x[d - 1]).unwrap_or_else(|_| DMatrix::from_element(d, d, f64::NAN))
    }
    fn d_g_upper(&self, x: &[f64]) -> Deriv {
        crate::geometry::metric::fd_d_g_upper(self, x)
    }
    fn d2_g_upper(&self, x: &[f64]) -> Deriv2 {
        let d = self.dim();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let h = tol::H_FD2;
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[j] += h;
                        xm[j] -= h;
                        (&self.d_g_upper(&xp)[i] - &self.d_g_upper(&xm)[i]) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }
}
