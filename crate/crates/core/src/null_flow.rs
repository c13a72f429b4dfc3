//! Null bicharacteristics of `H = 1/2 g^{jk} p_j p_k`, their linearized
//! (variational) flow, and boundary exit detection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::geometry::metric::{Deriv, Deriv2};
use crate::geometry::{Boundary, CausalClass, MetricField, PointCovector};
use crate::ode::{self, Control, OdeOptions, OdeSystem, Trajectory};
use crate::tol;

#[derive(Clone, Debug)]
pub struct RayOptions {
    /// Initial step.
    pub step: f64,
    /// Largest step, keeps the dense output well sampled.
    pub max_step: f64,
    pub shell_tol: f64,
    pub step_tol: f64,
    pub max_s: f64,
    /// Carry the `2d x 2d` variational matrix.
    pub variational: bool,
    /// Keep `p` on the null shell (off for spacelike geodesics).
    pub shell_projection: bool,
}

impl Default for RayOptions {
    fn default() -> Self {
        RayOptions {
            step: 1e-2,
            max_step: 0.25,
            shell_tol: tol::SHELL_TOL,
            step_tol: tol::STEP_TOL,
            max_s: 100.0,
            variational: true,
            shell_projection: true,
        }
    }
}

impl RayOptions {
    /// Defaults scaled to a chart of the given diameter.
    pub fn for_diameter(diam: f64) -> Self {
        RayOptions { step: tol::STEP_FRACTION * diam, max_step: diam / 16.0, max_s: 50.0 * diam, ..Default::default() }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.step_tol, atol: self.step_tol, h0: self.step, hmax: self.max_step, ..Default::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayState {
    pub s: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayStatus {
    Exited,
    RanOut,
    TangencySuspected,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayExit {
    pub s: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub patch: usize,
    pub y: Vec<f64>,
    /// `|<d rho, x'>| / (|d rho| |x'|)` at the exit.
    pub transversality: f64,
}

/// Sampled ray. State layout per sample: `x`, `p`, then the variational
/// matrix (row-major, if carried), then any payload.
#[derive(Clone, Debug)]
pub struct RaySolution {
    pub dim: usize,
    pub traj: Trajectory,
    pub variational: bool,
    pub payload_dim: usize,
    pub exit: Option<RayExit>,
    pub status: RayStatus,
}

impl RaySolution {
    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    pub fn s(&self, k: usize) -> f64 {
        self.traj.t[k]
    }

    pub fn x(&self, k: usize) -> &[f64] {
        &self.traj.y[k][..self.dim]
    }

    pub fn p(&self, k: usize) -> &[f64] {
        &self.traj.y[k][self.dim..2 * self.dim]
    }

    pub fn xdot(&self, k: usize) -> &[f64] {
        &self.traj.f[k][..self.dim]
    }

    pub fn sample(&self, k: usize) -> RayState {
        RayState { s: self.s(k), x: self.x(k).to_vec(), p: self.p(k).to_vec() }
    }

    pub fn samples(&self) -> Vec<RayState> {
        (0..self.len()).map(|k| self.sample(k)).collect()
    }

    fn var_offset(&self) -> usize {
        2 * self.dim
    }

    fn payload_offset(&self) -> usize {
        2 * self.dim + if self.variational { 4 * self.dim * self.dim } else { 0 }
    }

    /// `d(x, p)(s) / d(x0, p0)` at sample `k`.
    pub fn variational_matrix(&self, k: usize) -> Option<DMatrix<f64>> {
        if !self.variational {
            return None;
        }
        let m = 2 * self.dim;
        let o = self.var_offset();
        Some(DMatrix::from_row_slice(m, m, &self.traj.y[k][o..o + m * m]))
    }

    pub fn payload(&self, k: usize) -> &[f64] {
        let o = self.payload_offset();
        &self.traj.y[k][o..o + self.payload_dim]
    }

    pub fn payload_at(&self, s: f64) -> Vec<f64> {
        let o = self.payload_offset();
        self.traj.dense_range(s, o, o + self.payload_dim)
    }

    pub fn x_at(&self, s: f64) -> Vec<f64> {
        self.traj.dense_range(s, 0, self.dim)
    }

    pub fn p_at(&self, s: f64) -> Vec<f64> {
        self.traj.dense_range(s, self.dim, 2 * self.dim)
    }

    pub fn xdot_at(&self, s: f64) -> Vec<f64> {
        self.traj.dense_derivative(s)[..self.dim].to_vec()
    }

    pub fn s_end(&self) -> f64 {
        *self.traj.t.last().unwrap()
    }

    /// The same path with momenta scaled by `c > 0` and parameter `s / c`.
    pub fn rescaled(&self, c: f64) -> RaySolution {
        let d = self.dim;
        let m = 2 * d;
        let scale_state = |y: &Vec<f64>, deriv: bool| {
            let mut out = y.clone();
            let k = if deriv { c } else { 1.0 };
            for v in out[..d].iter_mut() {
                *v *= k;
            }
            for v in out[d..2 * d].iter_mut() {
                *v *= c * k;
            }
            if self.variational {
                let o = 2 * d;
                for i in 0..m {
                    for j in 0..m {
                        let f = match (i < d, j < d) {
                            (true, true) | (false, false) => 1.0,
                            (true, false) => 1.0 / c,
                            (false, true) => c,
                        };
                        out[o + i * m + j] *= f * k;
                    }
                }
            }
            out
        };
        let traj = Trajectory {
            t: self.traj.t.iter().map(|s| s / c).collect(),
            y: self.traj.y.iter().map(|y| scale_state(y, false)).collect(),
            f: self.traj.f.iter().map(|f| scale_state(f, true)).collect(),
            cont: self.traj.cont.iter().map(|r| std::array::from_fn(|i| scale_state(&r[i], false))).collect(),
        };
        let exit = self.exit.as_ref().map(|e| RayExit {
            s: e.s / c,
            p: e.p.iter().map(|v| v * c).collect(),
            ..e.clone()
        });
        RaySolution { dim: d, traj, variational: self.variational, payload_dim: 0, exit, status: self.status }
    }

    /// Rows `s, x.., p.., H` for CSV export.
    pub fn rows(&self, field: &dyn MetricField) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|k| {
                let mut r = vec![self.s(k)];
                r.extend_from_slice(self.x(k));
                r.extend_from_slice(self.p(k));
                r.push(hamiltonian(field, self.x(k), self.p(k)));
                r
            })
            .collect()
    }
}

pub fn hamiltonian(field: &dyn MetricField, x: &[f64], p: &[f64]) -> f64 {
    0.5 * crate::geometry::dual_norm(field, x, p)
}

/// Derivatives of the Hamiltonian at `(x, p)`.
pub struct HamDerivs {
    pub gu: DMatrix<f64>,
    pub dgu: Deriv,
    pub d2gu: Option<Deriv2>,
    /// `x' = g^{-1} p`.
    pub v: DVector<f64>,
    /// `p'_k = -1/2 d_k g^{ij} p_i p_j`.
    pub pdot: DVector<f64>,
    /// `(H_px)_{ij} = d_j g^{ik} p_k`.
    pub h_px: DMatrix<f64>,
    /// `(H_xx)_{ij} = 1/2 d_i d_j g^{kl} p_k p_l`.
    pub h_xx: Option<DMatrix<f64>>,
}

pub fn ham_derivs(field: &dyn MetricField, x: &[f64], p: &[f64], second: bool) -> HamDerivs {
    let d = x.len();
    let pv = DVector::from_column_slice(p);
    let gu = field.g_upper(x);
    let dgu = field.d_g_upper(x);
    let v = &gu * &pv;
    let mut pdot = DVector::zeros(d);
    let mut h_px = DMatrix::zeros(d, d);
    for j in 0..d {
        let w = &dgu[j] * &pv;
        pdot[j] = -0.5 * pv.dot(&w);
        h_px.set_column(j, &w);
    }
    let (d2gu, h_xx) = if second {
        let d2 = field.d2_g_upper(x);
        let mut hxx = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                hxx[(i, j)] = 0.5 * (pv.transpose() * &d2[i][j] * &pv)[(0, 0)];
            }
        }
        (Some(d2), Some(hxx))
    } else {
        (None, None)
    };
    HamDerivs { gu, dgu, d2gu, v, pdot, h_px, h_xx }
}

/// Extra quantities integrated along a ray together with `(x, p)`.
pub trait RayPayload: Sync {
    fn dim(&self) -> usize;
    /// Whether `rhs` needs second metric derivatives.
    fn needs_second(&self) -> bool;
    fn rhs(&self, s: f64, x: &[f64], p: &[f64], hd: &HamDerivs, z: &[f64], dz: &mut [f64]);
}

struct RaySystem<'a> {
    field: &'a dyn MetricField,
    dim: usize,
    variational: bool,
    payload: Option<&'a dyn RayPayload>,
}

impl OdeSystem for RaySystem<'_> {
    fn dim(&self) -> usize {
        let d = self.dim;
        2 * d + if self.variational { 4 * d * d } else { 0 } + self.payload.map_or(0, |p| p.dim())
    }

    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.dim;
        let (x, p) = (&y[..d], &y[d..2 * d]);
        let second = self.variational || self.payload.is_some_and(|pl| pl.needs_second());
        let hd = ham_derivs(self.field, x, p, second);
        dy[..d].copy_from_slice(hd.v.as_slice());
        dy[d..2 * d].copy_from_slice(hd.pdot.as_slice());
        let mut o = 2 * d;
        if self.variational {
            let m = 2 * d;
            let hxx = hd.h_xx.as_ref().unwrap();
            let mut jac = DMatrix::zeros(m, m);
            jac.view_mut((0, 0), (d, d)).copy_from(&hd.h_px);
            jac.view_mut((0, d), (d, d)).copy_from(&hd.gu);
            jac.view_mut((d, 0), (d, d)).copy_from(&(-hxx));
            jac.view_mut((d, d), (d, d)).copy_from(&(-hd.h_px.transpose()));
            let phi = DMatrix::from_row_slice(m, m, &y[o..o + m * m]);
            let dphi = jac * phi;
            for i in 0..m {
                for j in 0..m {
                    dy[o + i * m + j] = dphi[(i, j)];
                }
            }
            o += m * m;
        }
        if let Some(pl) = self.payload {
            let n = pl.dim();
            pl.rhs(s, x, p, &hd, &y[o..o + n], &mut dy[o..o + n]);
        }
    }
}

/// Rescales the spatial part of `p` (all components except the time axis)
/// so that `g^{-1}(p, p) = 0`, choosing the root closest to 1. Falls back
/// to scaling the time component when the spatial quadratic degenerates.
pub fn project_to_shell(field: &dyn MetricField, x: &[f64], p: &mut [f64], time_axis: usize) {
    let gu = field.g_upper(x);
    let d = p.len();
    let mut pt = DVector::zeros(d);
    let mut ps = DVector::zeros(d);
    for i in 0..d {
        if i == time_axis {
            pt[i] = p[i];
        } else {
            ps[i] = p[i];
        }
    }
    // a s^2 + b s + c = 0 for p = pt + s ps
    let a = (ps.transpose() * &gu * &ps)[(0, 0)];
    let b = 2.0 * (pt.transpose() * &gu * &ps)[(0, 0)];
    let c = (pt.transpose() * &gu * &pt)[(0, 0)];
    let disc = b * b - 4.0 * a * c;
    if a.abs() > 1e-14 && disc >= 0.0 {
        let r = disc.sqrt();
        let s1 = (-b + r) / (2.0 * a);
        let s2 = (-b - r) / (2.0 * a);
        let s = if (s1 - 1.0).abs() <= (s2 - 1.0).abs() { s1 } else { s2 };
        if (s - 1.0).abs() < 0.1 {
            for i in 0..d {
                if i != time_axis {
                    p[i] *= s;
                }
            }
        }
    }
}

/// Integrates the Hamiltonian flow from `(x0, p0)` with optional boundary
/// exit detection and payload.
pub fn integrate_ray(
    field: &dyn MetricField,
    x0: &[f64],
    p0: &[f64],
    opts: &RayOptions,
    boundary: Option<&dyn Boundary>,
    payload: Option<(&dyn RayPayload, Vec<f64>)>,
) -> Result<RaySolution> {
    check_finite("x0", x0)?;
    check_finite("p0", p0)?;
    // null rays are traced with |p_t| = 1 and rescaled, which makes the
    // result exactly homogeneous in p0
    let c0 = p0[0].abs();
    if payload.is_none() && opts.shell_projection && c0 > 0.0 && c0 != 1.0 {
        let unit: Vec<f64> = p0.iter().map(|v| v / c0).collect();
        let o = RayOptions { max_s: opts.max_s * c0, ..opts.clone() };
        return Ok(integrate_ray(field, x0, &unit, &o, boundary, None)?.rescaled(c0));
    }
    let d = x0.len();
    let sys = RaySystem { field, dim: d, variational: opts.variational, payload: payload.as_ref().map(|p| p.0) };
    let mut y0 = Vec::with_capacity(sys.dim());
    y0.extend_from_slice(x0);
    y0.extend_from_slice(p0);
    if opts.shell_projection {
        project_to_shell(field, x0, &mut y0[d..2 * d], 0);
    }
    if opts.variational {
        let m = 2 * d;
        for i in 0..m {
            for j in 0..m {
                y0.push(if i == j { 1.0 } else { 0.0 });
            }
        }
    }
    let payload_dim = payload.as_ref().map_or(0, |p| p.0.dim());
    if let Some((_, z0)) = &payload {
        y0.extend_from_slice(z0);
    }
    let shell = opts.shell_tol;
    let mut crossed = false;
    let hook = |_t0: f64, ya: &[f64], _t1: f64, yb: &mut Vec<f64>| {
        let h = hamiltonian(field, &yb[..d], &yb[d..2 * d]);
        if opts.shell_projection && h.abs() > 1e-3 * shell {
            let (xs, ps) = yb.split_at_mut(d);
            project_to_shell(field, xs, &mut ps[..d], 0);
        }
        if let Some(b) = boundary {
            if b.rho(&ya[..d]) > 0.0 && b.rho(&yb[..d]) <= 0.0 {
                crossed = true;
                return Control::Stop;
            }
        }
        Control::Continue
    };
    let traj = match ode::integrate(&sys, 0.0, &y0, opts.max_s, &opts.ode(), hook) {
        Ok(t) => t,
        Err(Error::StepCollapse(_)) => {
            return Ok(RaySolution {
                dim: d,
                traj: Trajectory { t: vec![0.0], y: vec![y0.clone()], f: vec![y0.clone()], cont: Vec::new() },
                variational: opts.variational,
                payload_dim,
                exit: None,
                status: RayStatus::TangencySuspected,
            })
        }
        Err(e) => return Err(e),
    };
    let mut sol = RaySolution { dim: d, traj, variational: opts.variational, payload_dim, exit: None, status: RayStatus::RanOut };
    if crossed {
        let b = boundary.unwrap();
        refine_exit(&sys, &mut sol, b, opts)?;
    } else if let Some(b) = boundary {
        // a ray that starts on the boundary and never gets inside
        if b.rho(x0).abs() <= tol::ON_BOUNDARY && sol.len() > 1 && b.rho(sol.x(1)) <= 0.0 {
            let tr = transversality(b, x0, sol.xdot(0));
            if tr < tol::TRANS_TOL {
                sol.status = RayStatus::TangencySuspected;
            }
        }
    }
    Ok(sol)
}

fn transversality(b: &dyn Boundary, x: &[f64], xdot: &[f64]) -> f64 {
    let dr = b.d_rho(x);
    let v = DVector::from_column_slice(xdot);
    (dr.dot(&v)).abs() / (dr.norm() * v.norm())
}

/// Refines the last step's crossing to `|rho| <= EXIT_TOL` by Newton on
/// short re-integrations from the last interior sample, then truncates the
/// trajectory at the exit.
fn refine_exit(sys: &RaySystem, sol: &mut RaySolution, b: &dyn Boundary, opts: &RayOptions) -> Result<()> {
    let d = sol.dim;
    let n = sol.len();
    let k = n - 2;
    let (s0, s1) = (sol.s(k), sol.s(k + 1));
    // bisection on the Hermite interpolant for a starting guess
    let rho_at = |s: f64| b.rho(&sol.x_at(s));
    let (mut lo, mut hi) = (s0, s1);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rho_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    let y0 = sol.traj.y[k].clone();
    let oo = OdeOptions { h0: (s - s0).max(1e-6), ..opts.ode() };
    let advance = |s: f64| -> Result<Trajectory> {
        ode::integrate(sys, s0, &y0, s, &oo, |_, _, _, _| Control::Continue)
    };
    let mut piece = advance(s)?;
    for _ in 0..8 {
        let state = piece.y.last().unwrap();
        let rho = b.rho(&state[..d]);
        if rho.abs() <= tol::EXIT_TOL * 1e-2 {
            break;
        }
        let f = piece.f.last().unwrap();
        let slope = b.d_rho(&state[..d]).dot(&DVector::from_column_slice(&f[..d]));
        if slope == 0.0 {
            break;
        }
        s -= rho / slope;
        if s <= s0 {
            break;
        }
        piece = advance(s)?;
    }
    let state = piece.y.last().unwrap().clone();
    let f = piece.f.last().unwrap().clone();
    let rho = b.rho(&state[..d]);
    if rho.abs() > tol::EXIT_TOL {
        return Err(Error::NoExit(rho));
    }
    sol.traj.t.truncate(k + 1);
    sol.traj.y.truncate(k + 1);
    sol.traj.f.truncate(k + 1);
    sol.traj.cont.truncate(k);
    sol.traj.t.extend_from_slice(&piece.t[1..]);
    sol.traj.y.extend_from_slice(&piece.y[1..]);
    sol.traj.f.extend_from_slice(&piece.f[1..]);
    sol.traj.cont.extend_from_slice(&piece.cont);
    let tr = transversality(b, &state[..d], &f[..d]);
    let (patch, y) = b.locate(&state[..d]);
    sol.exit = Some(RayExit {
        s,
        x: state[..d].to_vec(),
        p: state[d..2 * d].to_vec(),
        patch,
        y: y.as_slice().to_vec(),
        transversality: tr,
    });
    sol.status = if tr < tol::TRANS_TOL { RayStatus::TangencySuspected } else { RayStatus::Exited };
    Ok(())
}

/// Integrates the null bicharacteristic through `(x0, xi0)`; `xi0` must be
/// lightlike within `shell_tol`.
pub fn integrate_bicharacteristic(field: &dyn MetricField, x0: &[f64], xi0: &[f64], opts: &RayOptions) -> Result<RaySolution> {
    require_lightlike(field, x0, xi0, opts.shell_tol)?;
    integrate_ray(field, x0, xi0, opts, None, None)
}

/// As [`integrate_bicharacteristic`], stopping at the first boundary exit.
pub fn integrate_to_exit(
    field: &dyn MetricField,
    boundary: &dyn Boundary,
    x0: &[f64],
    xi0: &[f64],
    opts: &RayOptions,
) -> Result<RaySolution> {
    require_lightlike(field, x0, xi0, opts.shell_tol)?;
    integrate_ray(field, x0, xi0, opts, Some(boundary), None)
}

pub fn require_lightlike(field: &dyn MetricField, x0: &[f64], xi0: &[f64], tol: f64) -> Result<()> {
    let pc = PointCovector { x: x0.to_vec(), xi: xi0.to_vec() };
    if crate::geometry::classify(field, &pc, tol)? != CausalClass::Lightlike {
        return Err(Error::NotLightlike(crate::geometry::dual_norm(field, x0, xi0)));
    }
    Ok(())
}

/// Exit record of a ray: the refined event when the integrator found one,
/// otherwise the first sign change of `rho` along the samples, refined on
/// the dense output.
pub fn detect_boundary_exit(sol: &RaySolution, boundary: &dyn Boundary) -> Result<RayExit> {
    let d = sol.dim;
    if let Some(e) = &sol.exit {
        if e.transversality < tol::TRANS_TOL {
            return Err(Error::TangentialExit(e.transversality));
        }
        return Ok(e.clone());
    }
    if sol.status == RayStatus::TangencySuspected {
        return Err(Error::TangentialExit(transversality(boundary, sol.x(0), sol.xdot(0))));
    }
    for k in 0..sol.len().saturating_sub(1) {
        let (r0, r1) = (boundary.rho(sol.x(k)), boundary.rho(sol.x(k + 1)));
        if k == 0 && r0.abs() <= tol::ON_BOUNDARY && r1 <= 0.0 {
            let tr = transversality(boundary, sol.x(0), sol.xdot(0));
            if tr < tol::TRANS_TOL {
                return Err(Error::TangentialExit(tr));
            }
        }
        if r0 > 0.0 && r1 <= 0.0 {
            let (mut lo, mut hi) = (sol.s(k), sol.s(k + 1));
            let mut s = 0.5 * (lo + hi);
            for _ in 0..200 {
                let x = sol.x_at(s);
                let rho = boundary.rho(&x);
                if rho.abs() <= tol::EXIT_TOL {
                    break;
                }
                if rho > 0.0 {
                    lo = s;
                } else {
                    hi = s;
                }
                let v = DVector::from_column_slice(&sol.xdot_at(s));
                let slope = boundary.d_rho(&x).dot(&v);
                let newton = s - rho / slope;
                s = if slope != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            }
            let x = sol.x_at(s);
            let v = sol.xdot_at(s);
            let tr = transversality(boundary, &x, &v);
            if tr < tol::TRANS_TOL {
                return Err(Error::TangentialExit(tr));
            }
            let (patch, y) = boundary.locate(&x);
            return Ok(RayExit { s, p: sol.p_at(s), x, patch, y: y.as_slice().to_vec(), transversality: tr });
        }
    }
    let _ = d;
    Err(Error::NoExit(sol.s_end()))
}

/// Symplectic defect `max |Phi^T J Phi - J|`.
pub fn symplectic_defect(phi: &DMatrix<f64>) -> f64 {
    let m = phi.nrows();
    let d = m / 2;
    let mut j = DMatrix::zeros(m, m);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    (phi.transpose() * &j * phi - j).amax()
}
