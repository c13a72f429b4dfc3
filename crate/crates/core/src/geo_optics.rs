//! Geometric optics along null bicharacteristics: phase Hessians (Riccati
//! and variational routes), `box phi`, the amplitudes `a0`, `a1`, reflected
//! data at the exit, and the local and semiglobal DN symbol data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_frame::{BoundaryCovector, Frame, Side};
use crate::error::{Error, Result};
use crate::geometry::{apply_p_jet, box_drift, CoefficientTriple, MetricField};
use crate::lens::trace_interior;
use crate::null_flow::{
    detect_boundary_exit, ham_derivs, integrate_ray, HamDerivs, RayOptions, RayPayload, RaySolution,
};
use crate::ode::{self, Control, OdeOptions, OdeSystem};
use crate::tol;

fn i() -> Complex64 {
    Complex64::i()
}

fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Adds `u (x) d rho + d rho (x) u` to `w_known` with `u` fixed by the
/// differentiated eikonal equation `2 W g^{-1} p = -(d g^{-1})[p, p]`.
fn complete_by_eikonal(g: &dyn MetricField, x: &[f64], p: &DVector<f64>, w_known: DMatrix<f64>, dr: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = x.len();
    let gu = g.g_upper(x);
    let dgu = g.d_g_upper(x);
    let v = &gu * p;
    let r = DVector::from_iterator(d, dgu.iter().map(|m| -(p.transpose() * m * p)[(0, 0)]));
    let m = &r * 0.5 - &w_known * &v;
    let a = dr.dot(&v);
    if a.abs() < tol::TRANS_TOL * v.norm() * dr.norm() {
        return Err(Error::TangentialExit(a));
    }
    let uv = m.dot(&v) / (2.0 * a);
    let u = (&m - dr * uv) / a;
    Ok(w_known + outer(&u, dr) + outer(dr, &u))
}

/// Hessian of the phase `phi` with boundary values `xi'_a y^a` and gradient
/// `p` (a lift of `xi'`) at the boundary point `x`.
pub fn initial_hessian(frame: &Frame, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
    let b = &*frame.boundary;
    let g = &*frame.g;
    let jets = b.coord_jets(x);
    let pv = DVector::from_column_slice(p);
    let dr = b.d_rho(x);
    let gu = g.g_upper(x);
    // xi'_a = p(E_a) with E the boundary frame
    let e = b.frame(jets.patch, jets.y.as_slice());
    let xip: Vec<f64> = (0..e.ncols()).map(|a| e.column(a).dot(&pv)).collect();
    let dphi0 = jets.grad.transpose() * DVector::from_column_slice(&xip);
    let mut hphi0 = DMatrix::zeros(x.len(), x.len());
    for (a, h) in jets.hess.iter().enumerate() {
        hphi0 += h * xip[a];
    }
    let aa = (dr.transpose() * &gu * &dr)[(0, 0)];
    let kappa = ((pv.transpose() * &gu * &dr)[(0, 0)] - (dphi0.transpose() * &gu * &dr)[(0, 0)]) / aa;
    let known = hphi0 + b.hess_rho(x) * kappa;
    complete_by_eikonal(g, x, &pv, known, &dr)
}

/// Reflected momentum and phase Hessian at a boundary point: same boundary
/// values, normal covector component flipped.
pub fn reflected_phase(frame: &Frame, x: &[f64], p: &[f64], w: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let g = &*frame.g;
    let gu = g.g_upper(x);
    let dr = frame.boundary.d_rho(x);
    let pv = DVector::from_column_slice(p);
    let aa = (dr.transpose() * &gu * &dr)[(0, 0)];
    let k = -2.0 * (pv.transpose() * &gu * &dr)[(0, 0)] / aa;
    let p_ref = &pv + &dr * k;
    let known = w + frame.boundary.hess_rho(x) * k;
    let w_ref = complete_by_eikonal(g, x, &p_ref, known, &dr)?;
    Ok((p_ref, w_ref))
}

/// `box_g phi = g^{jk} W_jk + b^k p_k`.
pub fn boxphi(g: &dyn MetricField, x: &[f64], p: &[f64], w: &DMatrix<f64>) -> f64 {
    let gu = g.g_upper(x);
    gu.component_mul(w).sum() + box_drift(g, x).dot(&DVector::from_column_slice(p))
}

fn riccati_rhs(hd: &HamDerivs, w: &DMatrix<f64>) -> DMatrix<f64> {
    let hxx = hd.h_xx.as_ref().unwrap();
    let hpx = &hd.h_px;
    -(hxx + hpx.transpose() * w + w * hpx + w * &hd.gu * w)
}

/// Phase Hessians along a ray from the Riccati equation.
pub struct HessianTrack {
    pub s: Vec<f64>,
    pub w: Vec<DMatrix<f64>>,
    /// Parameter where `|W|` exceeded the blow-up threshold.
    pub blowup: Option<f64>,
}

struct RiccatiSys<'a> {
    g: &'a dyn MetricField,
    ray: &'a RaySolution,
}

impl OdeSystem for RiccatiSys<'_> {
    fn dim(&self) -> usize {
        self.ray.dim * self.ray.dim
    }
    fn rhs(&self, s: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.ray.dim;
        let hd = ham_derivs(self.g, &self.ray.x_at(s), &self.ray.p_at(s), true);
        let w = DMatrix::from_row_slice(d, d, y);
        let r = riccati_rhs(&hd, &w);
        for a in 0..d {
            for b in 0..d {
                dy[a * d + b] = r[(a, b)];
            }
        }
    }
}

/// Integrates `W' = -(H_xx + H_xp W + W H_px + W H_pp W)` along the ray's
/// dense output, stopping at blow-up.
pub fn phase_hessian_evolution(g: &dyn MetricField, ray: &RaySolution, w0: &DMatrix<f64>) -> Result<HessianTrack> {
    let d = ray.dim;
    let y0: Vec<f64> = (0..d * d).map(|k| w0[(k / d, k % d)]).collect();
    let sys = RiccatiSys { g, ray };
    let mut blowup = None;
    let opts = OdeOptions { h0: 1e-3, hmax: 0.05, rtol: 1e-12, atol: 1e-12, ..Default::default() };
    let s_end = ray.s_end();
    let traj = ode::integrate(&sys, 0.0, &y0, s_end, &opts, |_, _, t, y| {
        if y.iter().any(|v| !v.is_finite() || v.abs() > tol::RICCATI_BLOWUP) {
            blowup = Some(t);
            Control::Stop
        } else {
            Control::Continue
        }
    });
    let traj = match traj {
        Ok(t) => t,
        Err(Error::StepCollapse(_)) => {
            return Ok(HessianTrack { s: vec![0.0], w: vec![w0.clone()], blowup: Some(0.0) });
        }
        Err(e) => return Err(e),
    };
    Ok(HessianTrack {
        s: traj.t.clone(),
        w: traj.y.iter().map(|y| DMatrix::from_row_slice(d, d, y)).collect(),
        blowup,
    })
}

/// `W(s) = (Phi_px + Phi_pp W0)(Phi_xx + Phi_xp W0)^{-1}` at sample `k`.
pub fn hessian_from_variational(ray: &RaySolution, k: usize, w0: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = ray.dim;
    let phi = ray.variational_matrix(k)?;
    let x = phi.view((0, 0), (d, d)) + phi.view((0, d), (d, d)) * w0;
    let p = phi.view((d, 0), (d, d)) + phi.view((d, d), (d, d)) * w0;
    let w = p * x.try_inverse()?;
    Some((&w + w.transpose()) * 0.5)
}

/// Ray-tube Jacobian `DF = [dx/dy^a, x']` of the family of rays with the
/// same `xi'` at neighbouring boundary points.
#[derive(Clone, Debug)]
pub struct Tube {
    pub s: Vec<f64>,
    pub det: Vec<f64>,
    /// `|det DF| sqrt|g|`.
    pub jac: Vec<f64>,
    /// Sign changes of `det DF` up to each sample.
    pub maslov: Vec<u32>,
}

pub fn ray_tube(frame: &Frame, ray: &RaySolution, w0: &DMatrix<f64>) -> Result<Tube> {
    let d = ray.dim;
    let (patch, y) = frame.boundary.locate(ray.x(0));
    let e = frame.boundary.frame(patch, y.as_slice());
    let mut tube = Tube { s: vec![], det: vec![], jac: vec![], maslov: vec![] };
    let mut m = 0;
    for k in 0..ray.len() {
        let phi = ray.variational_matrix(k).ok_or_else(|| Error::Invalid("ray lacks variational data".into()))?;
        let xy = (phi.view((0, 0), (d, d)) + phi.view((0, d), (d, d)) * w0) * &e;
        let mut df = DMatrix::zeros(d, d);
        df.view_mut((0, 0), (d, d - 1)).copy_from(&xy);
        df.set_column(d - 1, &DVector::from_column_slice(ray.xdot(k)));
        let det = df.determinant();
        if let Some(prev) = tube.det.last() {
            if prev * det < 0.0 {
                m += 1;
            }
        }
        let gl = frame.g.g_lower(ray.x(k));
        tube.s.push(ray.s(k));
        tube.det.push(det);
        tube.jac.push(det.abs() * gl.determinant().abs().sqrt());
        tube.maslov.push(m);
    }
    Ok(tube)
}

/// `a0 = |J(0)/J(s)|^{1/2} e^{-i pi m / 2} exp(i int <A, x'>)` at the ray
/// samples; the one-form integral is accumulated by quadrature.
pub fn transport_a0(triple: &CoefficientTriple, ray: &RaySolution, tube: &Tube) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(ray.len());
    let mut phase = Complex64::new(0.0, 0.0);
    for k in 0..ray.len() {
        if k > 0 {
            let q = crate::quad::integrate(
                |s| {
                    let x = ray.x_at(s);
                    let v = triple.g.g_upper(&x) * DVector::from_column_slice(&ray.p_at(s));
                    triple.a.value(&x).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
                },
                ray.s(k - 1),
                ray.s(k),
                tol::QUAD_TOL,
                64,
            );
            phase += q.value;
        }
        let mag = (tube.jac[0] / tube.jac[k]).sqrt();
        let maslov = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_2 * tube.maslov[k] as f64);
        out.push(mag * maslov * (i() * phase).exp());
    }
    Ok(out)
}

/// `beta = -box phi / 2 + i <A, x'>`, so that `a0' = beta a0`.
fn beta(triple: &CoefficientTriple, x: &[f64], p: &[f64], w: &DMatrix<f64>) -> Complex64 {
    let g = &*triple.g;
    let v = g.g_upper(x) * DVector::from_column_slice(p);
    let av: Complex64 = triple.a.value(x).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    -0.5 * boxphi(g, x, p, w) + i() * av
}

/// Running integrals `int <A, x'> ds` and `int q ds` carried with a ray.
struct ForcingPayload<'a>(&'a CoefficientTriple);

impl RayPayload for ForcingPayload<'_> {
    fn dim(&self) -> usize {
        4
    }
    fn needs_second(&self) -> bool {
        false
    }
    fn rhs(&self, _s: f64, x: &[f64], _p: &[f64], hd: &HamDerivs, _z: &[f64], dz: &mut [f64]) {
        let a: Complex64 = self.0.a.value(x).iter().zip(hd.v.iter()).map(|(a, b)| a * b).sum();
        let q = self.0.q.value(x);
        dz[0] = a.re;
        dz[1] = a.im;
        dz[2] = q.re;
        dz[3] = q.im;
    }
}

// ---------------------------------------------------------------------------
// ray bundles for transverse derivatives

/// Offsets of the bundle stencil in boundary coordinates (units of `h`):
/// centre, `+-1, +-2` per axis, and the four diagonals per pair of axes.
fn stencil(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    for a in 0..n {
        for s in [1.0, -1.0, 2.0, -2.0] {
            let mut v = vec![0.0; n];
            v[a] = s;
            out.push(v);
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut v = vec![0.0; n];
                v[a] = sa;
                v[b] = sb;
                out.push(v);
            }
        }
    }
    out
}

/// Index helpers into the stencil produced by [`stencil`].
struct Stencil {
    n: usize,
    h: f64,
}

impl Stencil {
    fn axis(&self, a: usize, s: i32) -> usize {
        1 + 4 * a + match s {
            1 => 0,
            -1 => 1,
            2 => 2,
            _ => 3,
        }
    }
    fn diag(&self, a: usize, b: usize, k: usize) -> usize {
        let mut idx = 1 + 4 * self.n;
        for aa in 0..self.n {
            for bb in aa + 1..self.n {
                if (aa, bb) == (a, b) {
                    return idx + k;
                }
                idx += 4;
            }
        }
        unreachable!()
    }
    fn d1<T>(&self, f: &[T], a: usize) -> T
    where
        T: Clone + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let (p1, m1, p2, m2) = (&f[self.axis(a, 1)], &f[self.axis(a, -1)], &f[self.axis(a, 2)], &f[self.axis(a, -2)]);
        ((p1.clone() - m1.clone()) * 8.0 - (p2.clone() - m2.clone())) * (1.0 / (12.0 * self.h))
    }
    fn d2<T>(&self, f: &[T], a: usize, b: usize) -> T
    where
        T: Clone + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        if a == b {
            let (p1, m1, p2, m2) = (&f[self.axis(a, 1)], &f[self.axis(a, -1)], &f[self.axis(a, 2)], &f[self.axis(a, -2)]);
            ((p1.clone() + m1.clone()) * 16.0 - (p2.clone() + m2.clone()) - f[0].clone() * 30.0) * (1.0 / (12.0 * self.h * self.h))
        } else {
            let (a, b) = (a.min(b), a.max(b));
            let (pp, pm, mp, mm) = (&f[self.diag(a, b, 0)], &f[self.diag(a, b, 1)], &f[self.diag(a, b, 2)], &f[self.diag(a, b, 3)]);
            ((pp.clone() - pm.clone()) - (mp.clone() - mm.clone())) * (1.0 / (4.0 * self.h * self.h))
        }
    }
}

/// Rays with the same `xi'` started at stencil offsets of one boundary
/// point, integrated on common steps with their phase Hessians and
/// `log a0`, plus the running integral of `(P_{g,A,0} a0) / a0` on the
/// centre ray.
struct Bundle<'a> {
    triple: &'a CoefficientTriple,
    d: usize,
    st: Stencil,
    rays: usize,
}

/// Jets of `a0 / a0(centre)` on the centre ray.
pub struct BundleJets {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub w: DMatrix<f64>,
    pub log_a0: Complex64,
    /// `d a0 / a0` in ambient coordinates.
    pub grad: DVector<Complex64>,
    pub hess: DMatrix<Complex64>,
    /// `(P_{g,A,0} a0) / a0`.
    pub p_ratio: Complex64,
}

impl Bundle<'_> {
    fn per(&self) -> usize {
        2 * self.d + self.d * self.d + 2
    }

    fn unpack<'b>(&self, y: &'b [f64], k: usize) -> (&'b [f64], &'b [f64], DMatrix<f64>, Complex64) {
        let d = self.d;
        let o = k * self.per();
        let w = DMatrix::from_row_slice(d, d, &y[o + 2 * d..o + 2 * d + d * d]);
        let l = Complex64::new(y[o + 2 * d + d * d], y[o + 2 * d + d * d + 1]);
        (&y[o..o + d], &y[o + d..o + 2 * d], w, l)
    }

    fn ray_rhs(&self, x: &[f64], p: &[f64], w: &DMatrix<f64>) -> (HamDerivs, DMatrix<f64>, Complex64) {
        let hd = ham_derivs(&*self.triple.g, x, p, true);
        let wd = riccati_rhs(&hd, w);
        let b = beta(self.triple, x, p, w);
        (hd, wd, b)
    }

    fn jets(&self, y: &[f64]) -> BundleJets {
        let d = self.d;
        let n = d - 1;
        let mut xs = Vec::with_capacity(self.rays);
        let mut vs = Vec::with_capacity(self.rays);
        let mut us = Vec::with_capacity(self.rays);
        let mut ubs = Vec::with_capacity(self.rays);
        let (_, _, _, l0) = self.unpack(y, 0);
        let mut centre = None;
        for k in 0..self.rays {
            let (x, p, w, l) = self.unpack(y, k);
            let (hd, wd, b) = self.ray_rhs(x, p, &w);
            let u = (l - l0).exp();
            xs.push(DVector::from_column_slice(x));
            vs.push(hd.v.clone());
            us.push(u);
            ubs.push(u * b);
            if k == 0 {
                centre = Some((hd, wd, b));
            }
        }
        let (hd, wd, b0) = centre.unwrap();
        let (x, p, w, _) = self.unpack(y, 0);
        // second parameter derivative of x and of beta along the centre ray
        let mut xdd = &hd.gu * &hd.pdot;
        for j in 0..d {
            xdd += &hd.dgu[j] * DVector::from_column_slice(p) * hd.v[j];
        }
        let hs = 1e-4;
        let shift = |sgn: f64| {
            let xx: Vec<f64> = (0..d).map(|j| x[j] + sgn * hs * hd.v[j]).collect();
            let pp: Vec<f64> = (0..d).map(|j| p[j] + sgn * hs * hd.pdot[j]).collect();
            let ww = &w + &wd * (sgn * hs);
            beta(self.triple, &xx, &pp, &ww)
        };
        let bdot = (shift(1.0) - shift(-1.0)) / (2.0 * hs);
        // derivatives in (y, s)
        let mut df = DMatrix::zeros(d, d);
        let mut du = DVector::<Complex64>::zeros(d);
        let mut d2u = DMatrix::<Complex64>::zeros(d, d);
        let mut d2f: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); d];
        for a in 0..n {
            df.set_column(a, &self.st.d1(&xs, a));
            du[a] = self.st.d1(&us, a);
            d2u[(a, n)] = self.st.d1(&ubs, a);
            d2u[(n, a)] = d2u[(a, n)];
            let dv = self.st.d1(&vs, a);
            for k in 0..d {
                d2f[k][(a, n)] = dv[k];
                d2f[k][(n, a)] = dv[k];
            }
            for b in 0..n {
                d2u[(a, b)] = self.st.d2(&us, a, b);
                let dd = self.st.d2(&xs, a, b);
                for k in 0..d {
                    d2f[k][(a, b)] = dd[k];
                }
            }
        }
        df.set_column(n, &hd.v);
        du[n] = b0;
        d2u[(n, n)] = b0 * b0 + bdot;
        for k in 0..d {
            d2f[k][(n, n)] = xdd[k];
        }
        let dfi = df.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(d, d, f64::NAN));
        let dfit = dfi.transpose().map(|v| Complex64::new(v, 0.0));
        let grad = &dfit * &du;
        let mut inner = d2u;
        for k in 0..d {
            inner -= d2f[k].map(|v| Complex64::new(v, 0.0)) * grad[k];
        }
        let hess = &dfit * inner * dfi.map(|v| Complex64::new(v, 0.0));
        let hess = (&hess + hess.transpose()) * Complex64::new(0.5, 0.0);
        let one = Complex64::new(1.0, 0.0);
        let p_ratio = apply_p_jet(self.triple, x, one, &grad, &hess, false);
        BundleJets { x: x.to_vec(), p: p.to_vec(), w, log_a0: l0, grad, hess, p_ratio }
    }
}

impl OdeSystem for Bundle<'_> {
    fn dim(&self) -> usize {
        self.rays * self.per() + 2
    }
    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.d;
        for k in 0..self.rays {
            let (x, p, w, _) = self.unpack(y, k);
            let (hd, wd, b) = self.ray_rhs(x, p, &w);
            let o = k * self.per();
            dy[o..o + d].copy_from_slice(hd.v.as_slice());
            dy[o + d..o + 2 * d].copy_from_slice(hd.pdot.as_slice());
            for a in 0..d {
                for c in 0..d {
                    dy[o + 2 * d + a * d + c] = wd[(a, c)];
                }
            }
            dy[o + 2 * d + d * d] = b.re;
            dy[o + 2 * d + d * d + 1] = b.im;
        }
        let j = self.jets(y);
        let n = dy.len();
        dy[n - 2] = j.p_ratio.re;
        dy[n - 1] = j.p_ratio.im;
    }
}

/// Result of integrating a bundle to `s_end`.
pub struct BundleRun {
    pub start: BundleJets,
    pub end: BundleJets,
    /// `int_0^{s_end} (P_{g,A,0} a0)/a0 ds`.
    pub p_integral: Complex64,
}

/// Integrates the bundle of `entry` (future-pointing) to `s_end`; with
/// `s_end = 0` only the starting jets are formed.
pub fn run_bundle(frame: &Frame, triple: &CoefficientTriple, entry: &BoundaryCovector, s_end: f64) -> Result<BundleRun> {
    let d = frame.dim();
    let n = d - 1;
    let h = tol::STENCIL_H;
    let offs = stencil(n);
    let b = Bundle { triple, d, st: Stencil { n, h }, rays: offs.len() };
    let mut y0 = Vec::with_capacity(b.dim());
    for o in &offs {
        let xp: Vec<f64> = entry.xp.iter().zip(o).map(|(a, s)| a + h * s).collect();
        let bc = BoundaryCovector { xp, ..entry.clone() };
        let lift = frame.lightlike_lift(&bc, Some(Side::Interior))?;
        let w0 = initial_hessian(frame, &lift.x, &lift.p)?;
        y0.extend_from_slice(&lift.x);
        y0.extend_from_slice(&lift.p);
        for a in 0..d {
            for c in 0..d {
                y0.push(w0[(a, c)]);
            }
        }
        y0.extend_from_slice(&[0.0, 0.0]);
    }
    y0.extend_from_slice(&[0.0, 0.0]);
    let start = b.jets(&y0);
    if s_end == 0.0 {
        let end = b.jets(&y0);
        return Ok(BundleRun { start, end, p_integral: Complex64::new(0.0, 0.0) });
    }
    let opts = OdeOptions { h0: 1e-3, hmax: 0.05, rtol: 1e-12, atol: 1e-12, ..Default::default() };
    let traj = ode::integrate(&b, 0.0, &y0, s_end, &opts, |_, _, _, y| {
        if y.iter().any(|v| !v.is_finite() || v.abs() > tol::RICCATI_BLOWUP) {
            Control::Stop
        } else {
            Control::Continue
        }
    })?;
    let last = traj.y.last().unwrap();
    if (traj.t.last().unwrap() - s_end).abs() > 1e-12 * s_end.abs().max(1.0) {
        return Err(Error::Invalid("phase Hessian blew up inside the bundle".into()));
    }
    let end = b.jets(last);
    let k = last.len();
    Ok(BundleRun { start, end, p_integral: Complex64::new(last[k - 2], last[k - 1]) })
}

// ---------------------------------------------------------------------------
// symbols

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalSymbol {
    pub xi_n: f64,
    /// `-i xi_n`.
    pub principal: Complex64,
    /// `(d_n - i A_n) a0` at the boundary.
    pub b0: Complex64,
    /// `(d_n - i A_n) a1` at the boundary.
    pub b1: Complex64,
}

/// Local DN symbol data at a future-pointing entry: the response to
/// `e^{i lambda y.xi'}` on the cutoff plateau is
/// `-e^{i lambda phi}(i lambda xi_n + b0 + b1 / lambda)`.
pub fn local_dn_symbol(frame: &Frame, triple: &CoefficientTriple, entry: &BoundaryCovector) -> Result<LocalSymbol> {
    let lift = frame.lightlike_lift(entry, Some(Side::Interior))?;
    let x = &lift.x;
    let w0 = initial_hessian(frame, x, &lift.p)?;
    let g = &*triple.g;
    let nvec = g.g_upper(x) * frame.unit_normal(x);
    let an: Complex64 = triple.a.value(x).iter().zip(nvec.iter()).map(|(a, b)| a * b).sum();
    let b0 = beta(triple, x, &lift.p, &w0) / lift.xi_n - i() * an;
    let run = run_bundle(frame, triple, entry, 0.0)?;
    let pa0 = run.start.p_ratio + triple.q.value(x);
    let b1 = i() / (2.0 * lift.xi_n) * pa0;
    Ok(LocalSymbol { xi_n: lift.xi_n, principal: -i() * lift.xi_n, b0, b1 })
}

/// One row of semiglobal symbol data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolRow {
    pub entry: BoundaryCovector,
    pub exit: BoundaryCovector,
    pub s_exit: f64,
    pub xi_n: f64,
    pub eta_n: f64,
    /// `-4 eta_n xi_n`.
    pub lambda0: f64,
    /// `|J(0)/J(s_exit)|^{1/2} exp(i L1 A)`, without the Maslov factor.
    pub exit_a0_factor: Complex64,
    pub maslov: u32,
    pub l1a: Complex64,
    pub l0q: Complex64,
    /// `(i/2) a0 L0 q`, the q-dependent part of `a1` at the exit.
    pub a1_q_part: Complex64,
    /// Full `a1` at the exit (rays without conjugate points only).
    pub exit_a1_factor: Option<Complex64>,
    /// Order-zero response coefficient (rays without conjugate points only).
    pub d0: Option<Complex64>,
    pub conjugate: bool,
}

impl SymbolRow {
    /// `a0` at the exit including the Maslov phase.
    pub fn a0(&self) -> Complex64 {
        self.exit_a0_factor * Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_2 * self.maslov as f64)
    }

    /// `e^{-i lambda phi}` times the semiglobal response at the exit point:
    /// `2 i lambda eta_n a0 + 2 i eta_n a1 + d0` with whatever parts exist.
    pub fn response(&self, lambda: f64) -> Complex64 {
        let a1 = self.exit_a1_factor.unwrap_or(self.a1_q_part);
        2.0 * i() * self.eta_n * (lambda * self.a0() + a1) + self.d0.unwrap_or_default()
    }
}

/// Semiglobal symbol data for a future-pointing entry.
pub fn semiglobal_symbol_data(frame: &Frame, triple: &CoefficientTriple, entry: &BoundaryCovector, opts: &RayOptions) -> Result<SymbolRow> {
    let traced = trace_interior(frame, entry, &RayOptions { variational: false, ..opts.clone() })?;
    let lift = &traced.lift;
    let payload = ForcingPayload(triple);
    let o = RayOptions { variational: true, ..opts.clone() };
    let ray = integrate_ray(&*frame.g, &lift.x, &lift.p, &o, Some(&*frame.boundary), Some((&payload, vec![0.0; 4])))?;
    let exit = detect_boundary_exit(&ray, &*frame.boundary)?;
    let z = ray.payload(ray.len() - 1);
    let l1a = Complex64::new(z[0], z[1]);
    let l0q = Complex64::new(z[2], z[3]);
    let w0 = initial_hessian(frame, &lift.x, &lift.p)?;
    let tube = ray_tube(frame, &ray, &w0)?;
    let k = ray.len() - 1;
    let mag = (tube.jac[0] / tube.jac[k]).sqrt();
    let maslov = tube.maslov[k];
    let conjugate = maslov > 0;
    let exit_a0_factor = mag * (i() * l1a).exp();
    let a0 = exit_a0_factor * Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_2 * maslov as f64);
    let a1_q_part = 0.5 * i() * a0 * l0q;
    let mut row = SymbolRow {
        entry: entry.clone(),
        exit: traced.exit_cov.clone(),
        s_exit: exit.s,
        xi_n: lift.xi_n,
        eta_n: traced.exit_xin,
        lambda0: -4.0 * traced.exit_xin * lift.xi_n,
        exit_a0_factor,
        maslov,
        l1a,
        l0q,
        a1_q_part,
        exit_a1_factor: None,
        d0: None,
        conjugate,
    };
    if !conjugate {
        let run = run_bundle(frame, triple, entry, exit.s)?;
        row.exit_a1_factor = Some(0.5 * i() * a0 * (run.p_integral + l0q));
        let j = &run.end;
        let g = &*triple.g;
        let bp = boxphi(g, &j.x, &j.p, &j.w);
        let (p_ref, w_ref) = reflected_phase(frame, &j.x, &j.p, &j.w)?;
        let bp_ref = boxphi(g, &j.x, p_ref.as_slice(), &w_ref);
        let gu = g.g_upper(&j.x);
        let dr = frame.boundary.d_rho(&j.x);
        let v = &gu * DVector::from_column_slice(&j.p);
        let nv = &gu * &dr;
        let tv = &v - &nv * (dr.dot(&v) / dr.dot(&nv));
        let av = triple.a.value(&j.x);
        let mut t = Complex64::new(0.0, 0.0);
        for c in 0..tv.len() {
            t += tv[c] * (j.grad[c] - i() * av[c]);
        }
        row.d0 = Some(-a0 * (4.0 * t + bp + bp_ref) / (2.0 * row.eta_n));
    }
    Ok(row)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolTable {
    pub rows: Vec<std::result::Result<SymbolRow, String>>,
}

/// Symbol rows in entry order.
pub fn symbol_table(frame: &Frame, triple: &CoefficientTriple, entries: &[BoundaryCovector], opts: &RayOptions) -> SymbolTable {
    SymbolTable {
        rows: entries
            .par_iter()
            .map(|b| semiglobal_symbol_data(frame, triple, b, opts).map_err(|e| e.to_string()))
            .collect(),
    }
}

/// Reflected leg at a transversal exit.
#[derive(Clone, Debug)]
pub struct Reflected {
    pub p: DVector<f64>,
    pub w: DMatrix<f64>,
    pub a0: Complex64,
    pub a1: Complex64,
}

pub fn reflect_initial_data(frame: &Frame, x: &[f64], p: &[f64], w: &DMatrix<f64>, a0: Complex64, a1: Complex64) -> Result<Reflected> {
    let (p_ref, w_ref) = reflected_phase(frame, x, p, w)?;
    Ok(Reflected { p: p_ref, w: w_ref, a0: -a0, a1: -a1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{constant_form, constant_scalar, BallBump, ComplexPair, Constant, Exact, FormSum, Linear, Product, Sum};
    use crate::geometry::{Chart, Cylinder, HalfSpace, Layered, Metric, Minkowski, Slab, SpeedProfile};
    use crate::lens::disk_fan;
    use crate::ray_transforms::{l0_ray, l1_ray};
    use std::sync::Arc;

    fn disk(g: Metric) -> Frame {
        let chart = Chart::new(vec![(-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0)], Arc::new(Cylinder { radius: 1.0 })).unwrap();
        Frame::new(g, &chart)
    }

    fn speed() -> Metric {
        let bump = BallBump { clip: true, ..BallBump::new(0.1, 4, 1.0, 3) };
        Arc::new(SpeedProfile { dim: 3, c: Arc::new(Sum(vec![Arc::new(Constant(1.0)), Arc::new(bump)])) })
    }

    fn layered() -> Layered {
        let g0 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, 1.2]);
        let g1 = DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, -0.3]);
        let g2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.4]);
        Layered::new(g0, g1, g2)
    }

    fn slab(g: Metric) -> Frame {
        let chart = Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 1.0)], Arc::new(Slab { dim: 3, lo: 0.0, hi: 1.0 })).unwrap();
        Frame::new(g, &chart)
    }

    fn opts() -> RayOptions {
        RayOptions::for_diameter(2.0)
    }

    #[test]
    fn flat_plane_wave() {
        let chart = Chart::new(vec![(-1.0, 1.0); 3], Arc::new(HalfSpace { dim: 3 })).unwrap();
        let f = Frame::new(Arc::new(Minkowski { dim: 3 }), &chart);
        let b = f.covector(0, &[0.0, 0.0], &[-1.0, 0.3]);
        let l = f.lightlike_lift(&b, None).unwrap();
        let w0 = initial_hessian(&f, &l.x, &l.p).unwrap();
        assert_eq!(w0.amax(), 0.0);
        assert_eq!(boxphi(&*f.g, &l.x, &l.p, &w0), 0.0);
        let triple = CoefficientTriple::bare(f.g.clone());
        let s = local_dn_symbol(&f, &triple, &b).unwrap();
        assert!((s.principal + i() * (1.0f64 - 0.09).sqrt()).norm() < 1e-15);
        assert!(s.b0.norm() < 1e-12 && s.b1.norm() < 1e-6);
        // q = c, A = dt
        let mut t2 = triple.clone();
        t2.q = constant_scalar(Complex64::new(0.3, 0.0));
        t2.a = constant_form(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]);
        let s2 = local_dn_symbol(&f, &t2, &b).unwrap();
        // <A, dphi> = g^{00} p_0 = 1
        assert!((s2.b0 - i() / s2.xi_n).norm() < 1e-12);
        // a0 = exp(i x_n / xi_n) on the plane fan, so box a0 = -a0 / xi_n^2,
        // <A, d a0> = 0 and -<A, A> = 1
        let p_a0 = s2.b1 * (2.0 * s2.xi_n) / i();
        let want = 0.3 + 1.0 - 1.0 / (s2.xi_n * s2.xi_n);
        assert!((p_a0 - want).norm() < 1e-6, "{p_a0} vs {want}");
    }

    /// Layered half-space: everything depends on `x^n` only, so `a0` and
    /// `P a0` at the boundary follow from one-dimensional formulas.
    fn layered_oracle(l: &Layered, xip: &[f64], a: &[f64], q: f64) -> (f64, Complex64, Complex64) {
        let xi = DVector::from_column_slice(xip);
        let av = DVector::from_column_slice(a);
        let [g0, g1, g2] = l.jets(0.0);
        let q2 = |m: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * m * v)[(0, 0)];
        let xn = (-q2(&g0, &xi, &xi)).sqrt();
        let xn1 = -q2(&g1, &xi, &xi) / (2.0 * xn);
        let xn2 = (-q2(&g2, &xi, &xi) - 2.0 * xn1 * xn1) / (2.0 * xn);
        let gi = g0.clone().try_inverse().unwrap();
        let m = -0.5 * (&gi * &g1).trace();
        let m1 = -0.5 * (-(&gi * &g1 * &gi * &g1).trace() + (&gi * &g2).trace());
        let c = q2(&g0, &av, &xi);
        let c1 = q2(&g1, &av, &xi);
        // l = (-box phi / 2 + i <A, dphi>) / xi_n, box phi = xi_n' + m xi_n
        let ell = Complex64::new(-0.5 * (xn1 / xn + m), c / xn);
        let ell1 = Complex64::new(-0.5 * (xn2 / xn - (xn1 / xn).powi(2) + m1), c1 / xn - c * xn1 / (xn * xn));
        let box_a0 = ell1 + ell * ell + m * ell;
        let pa0 = box_a0 - q2(&g0, &av, &av) + q;
        (xn, ell, pa0)
    }

    #[test]
    fn layered_local_symbol_matches_oracle() {
        let l = layered();
        let f = slab(Arc::new(l.clone()));
        let xip = [-1.0, 0.4];
        let a = [0.2, -0.1];
        let q = 0.3;
        let mut triple = CoefficientTriple::bare(Arc::new(l.clone()));
        triple.a = constant_form(vec![Complex64::new(a[0], 0.0), Complex64::new(a[1], 0.0), Complex64::new(0.0, 0.0)]);
        triple.q = constant_scalar(Complex64::new(q, 0.0));
        let b = f.covector(0, &[0.1, -0.2], &xip);
        let s = local_dn_symbol(&f, &triple, &b).unwrap();
        let (xn, ell, pa0) = layered_oracle(&l, &xip, &a, q);
        assert!((s.xi_n - xn).abs() < 1e-14);
        assert!((s.b0 - ell).norm() < 1e-9, "{} vs {}", s.b0, ell);
        let b1 = i() / (2.0 * xn) * pa0;
        assert!((s.b1 - b1).norm() < 1e-6, "{} vs {}", s.b1, b1);
    }

    #[test]
    fn speed_profile_b0_hand_oracle() {
        // 1+1: g = -dt^2 + c(x)^{-2} dx^2 on x >= 0 with c = 1 + 0.5 x
        let c = Arc::new(Linear { coeffs: vec![0.0, 0.5], offset: 1.0 });
        let g: Metric = Arc::new(SpeedProfile { dim: 2, c });
        let chart = Chart::new(vec![(-1.0, 1.0), (0.0, 1.0)], Arc::new(HalfSpace { dim: 2 })).unwrap();
        let f = Frame::new(g.clone(), &chart);
        let triple = CoefficientTriple::bare(g);
        let b = f.covector(0, &[0.0], &[-1.0]);
        let s = local_dn_symbol(&f, &triple, &b).unwrap();
        // p = (-1, 1/c), box phi = c^2 d_x(1/c) + c c' / c = -c' + c' = 0 at x = 0
        // b0 = -box phi / (2 xi_n) with xi_n = |p|_normal = c * (1/c) = 1
        assert!((s.xi_n - 1.0).abs() < 1e-14);
        assert!(s.b0.norm() < 1e-9, "{}", s.b0);
    }

    #[test]
    fn hessian_routes_agree_and_stay_symmetric() {
        let f = disk(speed());
        let b = f.covector(0, &[0.0, 0.3], &[-1.0, 0.5]);
        let l = f.lightlike_lift(&b, None).unwrap();
        let w0 = initial_hessian(&f, &l.x, &l.p).unwrap();
        let ray = integrate_ray(&*f.g, &l.x, &l.p, &opts(), Some(&*f.boundary), None).unwrap();
        let track = phase_hessian_evolution(&*f.g, &ray, &w0).unwrap();
        // focusing in the disk: the Riccati solution blows up before the exit
        assert!(track.blowup.is_some());
        let sb = track.blowup.unwrap();
        for (s, w) in track.s.iter().zip(&track.w) {
            assert!((w - w.transpose()).amax() < 1e-9 * w.amax().max(1.0));
            if *s < 0.8 * sb {
                let k = ray.traj.segment(*s);
                if (ray.s(k) - s).abs() < 1e-14 {
                    let wv = hessian_from_variational(&ray, k, &w0).unwrap();
                    assert!((wv - w).amax() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn hessian_matches_neighbouring_rays() {
        let f = disk(Arc::new(Minkowski { dim: 3 }));
        let b = f.covector(0, &[0.0, 0.3], &[-1.0, 0.5]);
        let h = 1e-3;
        let trace = |dth: f64| {
            let bb = f.covector(0, &[0.0, 0.3 + dth], &[-1.0, 0.5]);
            let l = f.lightlike_lift(&bb, None).unwrap();
            integrate_ray(&*f.g, &l.x, &l.p, &RayOptions { max_s: 0.6, ..opts() }, None, None).unwrap()
        };
        let rays: Vec<RaySolution> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|k| trace(k * h)).collect();
        let l = f.lightlike_lift(&b, None).unwrap();
        let w0 = initial_hessian(&f, &l.x, &l.p).unwrap();
        let track = phase_hessian_evolution(&*f.g, &rays[2], &w0).unwrap();
        let s = 0.4;
        let kk = track.s.partition_point(|t| *t < s);
        let s = track.s[kk];
        let d1 = |v: &dyn Fn(&RaySolution) -> Vec<f64>| -> DVector<f64> {
            let f: Vec<DVector<f64>> = rays.iter().map(|r| DVector::from_vec(v(r))).collect();
            ((&f[3] - &f[1]) * 8.0 - (&f[4] - &f[0])) / (12.0 * h)
        };
        // W [x_theta, x'] = [p_theta, p']
        let xt = d1(&|r| r.x_at(s));
        let pt = d1(&|r| r.p_at(s));
        let c = &rays[2];
        let xd = DVector::from_vec(c.xdot_at(s));
        let pd = ham_derivs(&*f.g, &c.x_at(s), &c.p_at(s), false).pdot;
        // t-translation: W annihilates nothing in t, use dx = e_t, dp = 0
        let mut dx = DMatrix::zeros(3, 3);
        let mut dp = DMatrix::zeros(3, 3);
        dx.set_column(0, &xt);
        dx.set_column(1, &xd);
        dx[(0, 2)] = 1.0;
        dp.set_column(0, &pt);
        dp.set_column(1, &pd);
        let w_fd = dp * dx.try_inverse().unwrap();
        let k = track.s.iter().position(|t| *t == s).unwrap();
        assert!((w_fd - &track.w[k]).amax() < 1e-5);
    }

    #[test]
    fn jacobian_identity() {
        let f = disk(speed());
        let b = f.covector(0, &[0.0, 0.3], &[-1.0, 0.5]);
        let l = f.lightlike_lift(&b, None).unwrap();
        let w0 = initial_hessian(&f, &l.x, &l.p).unwrap();
        let ray = integrate_ray(&*f.g, &l.x, &l.p, &RayOptions { max_s: 0.5, ..opts() }, None, None).unwrap();
        let tube = ray_tube(&f, &ray, &w0).unwrap();
        // fixed-step RK4 for (W, int box phi) on the dense ray
        let rhs = |s: f64, w: &DMatrix<f64>| {
            let (x, p) = (ray.x_at(s), ray.p_at(s));
            let hd = ham_derivs(&*f.g, &x, &p, true);
            (riccati_rhs(&hd, w), boxphi(&*f.g, &x, &p, w))
        };
        let n = 2000;
        let h = ray.s_end() / n as f64;
        let (mut w, mut acc) = (w0.clone(), 0.0);
        for k in 0..n {
            let s = k as f64 * h;
            let (k1, b1) = rhs(s, &w);
            let (k2, b2) = rhs(s + h / 2.0, &(&w + &k1 * (h / 2.0)));
            let (k3, b3) = rhs(s + h / 2.0, &(&w + &k2 * (h / 2.0)));
            let (k4, b4) = rhs(s + h, &(&w + &k3 * h));
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            acc += (b1 + 2.0 * b2 + 2.0 * b3 + b4) * h / 6.0;
        }
        let k = ray.len() - 1;
        let logj = (tube.jac[k] / tube.jac[0]).ln();
        assert!((acc - logj).abs() < 1e-5, "{acc} vs {logj}");
    }

    #[test]
    fn a0_transport_and_phases() {
        let f = disk(Arc::new(Minkowski { dim: 3 }));
        let mut triple = CoefficientTriple::bare(f.g.clone());
        triple.a = constant_form(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]);
        let b = f.covector(0, &[0.0, 0.0], &[-1.0, 0.0]);
        let row = semiglobal_symbol_data(&f, &triple, &b, &opts()).unwrap();
        // diameter: exit phase e^{i s_exit}, caustic at the centre
        assert!((row.l1a.re - 2.0).abs() < 1e-9);
        assert!((row.exit_a0_factor.arg() - 2.0).abs() < 1e-8);
        assert_eq!(row.maslov, 1);
        assert!(row.conjugate && row.d0.is_none());
        assert_eq!(row.lambda0, -4.0 * row.eta_n * row.xi_n);
        assert!((row.lambda0 + 4.0).abs() < 1e-9);
        // amplitude on a diameter: |J0 / J| = 1 by symmetry
        assert!((row.exit_a0_factor.norm() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn ratio_matches_quadrature() {
        let f = disk(speed());
        let bare = CoefficientTriple::bare(f.g.clone());
        let mut with_a = bare.clone();
        with_a.a = Arc::new(FormSum(vec![
            constant_form(vec![Complex64::new(0.2, 0.0), Complex64::new(-0.1, 0.05), Complex64::new(0.3, 0.0)]),
            Arc::new(Exact { psi: Arc::new(Linear { coeffs: vec![0.0, 0.4, 0.1], offset: 0.0 }), scale: Complex64::new(0.0, 1.0) }),
        ]));
        for b in disk_fan(&f, 1.0, 4) {
            let r0 = semiglobal_symbol_data(&f, &bare, &b, &opts()).unwrap();
            let r1 = semiglobal_symbol_data(&f, &with_a, &b, &opts()).unwrap();
            assert_eq!(r0.a1_q_part, Complex64::new(0.0, 0.0));
            assert!(r0.exit_a0_factor.im.abs() < 1e-15 && r0.exit_a0_factor.re > 0.0);
            let ray = trace_interior(&f, &b, &opts()).unwrap().ray;
            let l1 = l1_ray(&*f.g, &*with_a.a, &ray).unwrap().value;
            let ratio = r1.exit_a0_factor / r0.exit_a0_factor;
            assert!((ratio - (i() * l1).exp()).norm() < 1e-6);
        }
    }

    #[test]
    fn gauge_invariance_of_exit_factor() {
        let f = disk(speed());
        let bare = CoefficientTriple::bare(f.g.clone());
        let psi = Arc::new(Product(Arc::new(BallBump::new(1.0, 1, 1.0, 3)), Arc::new(Linear { coeffs: vec![0.5, 0.3, 0.0], offset: 1.0 })));
        let mut gauged = bare.clone();
        gauged.a = Arc::new(Exact { psi, scale: Complex64::new(-1.0, 0.0) });
        let b = f.covector(0, &[0.1, 1.0], &[-1.0, 0.3]);
        let r0 = semiglobal_symbol_data(&f, &bare, &b, &opts()).unwrap();
        let r1 = semiglobal_symbol_data(&f, &gauged, &b, &opts()).unwrap();
        assert!((r0.exit_a0_factor - r1.exit_a0_factor).norm() < 1e-8);
    }

    #[test]
    fn plane_fan_a1_and_slab_rows() {
        let g: Metric = Arc::new(Minkowski { dim: 3 });
        let f = slab(g.clone());
        let mut triple = CoefficientTriple::bare(g);
        let c = 0.3;
        triple.q = constant_scalar(Complex64::new(c, 0.0));
        let b = f.covector(0, &[0.0, 0.0], &[-1.0, 0.2]);
        let row = semiglobal_symbol_data(&f, &triple, &b, &opts()).unwrap();
        assert!(!row.conjugate);
        // plane fan: a0 = 1, a1 = (i/2) c s
        assert!((row.a0() - 1.0).norm() < 1e-9);
        let a1 = row.exit_a1_factor.unwrap();
        assert!((a1 - 0.5 * i() * c * row.s_exit).norm() < 1e-7, "{a1}");
        assert!(row.d0.unwrap().norm() < 1e-6);
        let bare = CoefficientTriple::bare(f.g.clone());
        let r0 = semiglobal_symbol_data(&f, &bare, &b, &opts()).unwrap();
        assert!(r0.exit_a1_factor.unwrap().norm() < 1e-6);
    }

    #[test]
    fn a1_self_convergence_on_layered_slab() {
        let l = layered();
        let f = slab(Arc::new(l.clone()));
        let mut triple = CoefficientTriple::bare(Arc::new(l));
        triple.q = Arc::new(ComplexPair::real(Arc::new(Linear { coeffs: vec![0.0, 0.1, 0.3], offset: 0.2 })));
        let b = f.covector(0, &[0.0, 0.0], &[-1.0, 0.3]);
        let coarse = semiglobal_symbol_data(&f, &triple, &b, &opts()).unwrap();
        let fine = semiglobal_symbol_data(&f, &triple, &b, &RayOptions { step_tol: 1e-12, max_step: 0.02, ..opts() }).unwrap();
        let (a, c) = (coarse.exit_a1_factor.unwrap(), fine.exit_a1_factor.unwrap());
        assert!((a - c).norm() < 1e-6 * c.norm().max(1.0), "{a} vs {c}");
        assert!((coarse.d0.unwrap() - fine.d0.unwrap()).norm() < 1e-6);
        // the q part is exactly (i/2) a0 L0 q
        let ray = trace_interior(&f, &b, &opts()).unwrap().ray;
        let l0 = l0_ray(&*triple.q, &ray).unwrap().value;
        assert!((coarse.a1_q_part - 0.5 * i() * coarse.a0() * l0).norm() < 1e-9);
    }

    #[test]
    fn transport_residual_by_stencil() {
        // bundle jets satisfy 2 <dphi, d a0> + (box phi - 2i<A, dphi>) a0 = 0
        let l = layered();
        let f = slab(Arc::new(l.clone()));
        let mut triple = CoefficientTriple::bare(Arc::new(l));
        triple.a = constant_form(vec![Complex64::new(0.1, 0.0), Complex64::new(0.2, 0.0), Complex64::new(0.0, 0.0)]);
        let b = f.covector(0, &[0.0, 0.0], &[-1.0, 0.3]);
        let run = run_bundle(&f, &triple, &b, 0.5).unwrap();
        let j = &run.end;
        let gu = triple.g.g_upper(&j.x);
        let v = &gu * DVector::from_column_slice(&j.p);
        let av = triple.a.value(&j.x);
        let mut t = Complex64::new(boxphi(&*triple.g, &j.x, &j.p, &j.w), 0.0);
        for c in 0..3 {
            t += 2.0 * v[c] * (j.grad[c] - i() * av[c]);
        }
        assert!(t.norm() < 1e-4);
    }

    #[test]
    fn reflection_is_specular() {
        let chart = Chart::new(vec![(-1.0, 1.0); 3], Arc::new(HalfSpace { dim: 3 })).unwrap();
        let f = Frame::new(Arc::new(Minkowski { dim: 3 }), &chart);
        let p = [-1.0, 0.6, -0.8];
        let r = reflect_initial_data(&f, &[0.0, 0.0, 0.0], &p, &DMatrix::zeros(3, 3), Complex64::new(0.7, 0.2), Complex64::new(0.0, 0.1)).unwrap();
        assert!((r.p[0] + 1.0).abs() < 1e-15 && (r.p[1] - 0.6).abs() < 1e-15 && (r.p[2] - 0.8).abs() < 1e-15);
        assert_eq!(r.a0 + Complex64::new(0.7, 0.2), Complex64::new(0.0, 0.0));
        assert_eq!(r.a0.norm(), 0.7f64.hypot(0.2));
        assert_eq!(r.a1, Complex64::new(0.0, -0.1));
    }
}
