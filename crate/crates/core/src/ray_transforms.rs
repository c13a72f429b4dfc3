//! Light ray transforms along traced rays: `L0 f = int f ds` and
//! `L1 A = int A_j x'^j ds`, by adaptive quadrature on the dense output.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ComplexScalarField, CovectorField};
use crate::geometry::MetricField;
use crate::null_flow::RaySolution;
use crate::quad::{integrate_pieces, QuadResult};
use crate::tol;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformRow {
    pub value: Complex64,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformTable {
    pub rule: String,
    pub tol: f64,
    pub rows: Vec<TransformRow>,
}

/// Sample parameters of `ray` clipped to `[0, s_end]`, used as breakpoints.
fn breaks(ray: &RaySolution, s_end: f64) -> Vec<f64> {
    let mut b: Vec<f64> = ray.traj.t.iter().copied().filter(|s| *s < s_end).collect();
    b.push(s_end);
    b
}

fn end_of(ray: &RaySolution) -> Result<f64> {
    ray.exit.as_ref().map(|e| e.s).ok_or(Error::NoExit(ray.s_end()))
}

/// `int_0^{s_exit} f(x(s)) ds`.
pub fn l0_ray(f: &dyn ComplexScalarField, ray: &RaySolution) -> Result<QuadResult> {
    let s1 = end_of(ray)?;
    integrate_pieces(|s| f.value(&ray.x_at(s)), &breaks(ray, s1), tol::QUAD_TOL)
}

/// `int_0^{s_exit} A_j(x(s)) x'^j(s) ds` with `x' = g^{-1} p`.
pub fn l1_ray(g: &dyn MetricField, a: &dyn CovectorField, ray: &RaySolution) -> Result<QuadResult> {
    let s1 = end_of(ray)?;
    integrate_pieces(
        |s| {
            let x = ray.x_at(s);
            let v = g.g_upper(&x) * DVector::from_column_slice(&ray.p_at(s));
            a.value(&x).iter().zip(v.iter()).map(|(ai, vi)| ai * vi).sum()
        },
        &breaks(ray, s1),
        tol::QUAD_TOL,
    )
}

fn row(r: Result<QuadResult>) -> TransformRow {
    match r {
        Ok(q) => TransformRow { value: q.value, error: q.error, evals: q.evals, converged: q.converged, detail: String::new() },
        Err(e) => TransformRow {
            value: Complex64::new(f64::NAN, f64::NAN),
            error: f64::NAN,
            evals: 0,
            converged: false,
            detail: e.to_string(),
        },
    }
}

pub fn light_ray_transform_scalar(f: &dyn ComplexScalarField, rays: &[RaySolution]) -> TransformTable {
    TransformTable {
        rule: "gauss-kronrod-7-15".into(),
        tol: tol::QUAD_TOL,
        rows: rays.par_iter().map(|r| row(l0_ray(f, r))).collect(),
    }
}

pub fn light_ray_transform_oneform(g: &dyn MetricField, a: &dyn CovectorField, rays: &[RaySolution]) -> TransformTable {
    TransformTable {
        rule: "gauss-kronrod-7-15".into(),
        tol: tol::QUAD_TOL,
        rows: rays.par_iter().map(|r| row(l1_ray(g, a, r))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_frame::{normalize_ray_parameter, Frame};
    use crate::fields::{
        constant_form, constant_scalar, BallBump, ComplexPair, Constant, Exact, FormSum, Gaussian, Linear, Product, Sum,
    };
    use crate::geometry::{Chart, Cylinder, Metric, Minkowski, SpeedProfile};
    use crate::lens::{disk_fan, minkowski_disk_exit, trace_interior};
    use crate::null_flow::RayOptions;
    use std::sync::Arc;

    fn frame(g: Metric) -> Frame {
        let chart = Chart::new(vec![(-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0)], Arc::new(Cylinder { radius: 1.0 })).unwrap();
        Frame::new(g, &chart)
    }

    fn rays(f: &Frame, n: usize) -> Vec<RaySolution> {
        let o = RayOptions { variational: false, ..RayOptions::for_diameter(2.0) };
        disk_fan(f, 1.0, n).iter().map(|b| trace_interior(f, b, &o).unwrap().ray).collect()
    }

    fn speed() -> Metric {
        let bump = BallBump { clip: true, ..BallBump::new(0.1, 4, 1.0, 3) };
        Arc::new(SpeedProfile { dim: 3, c: Arc::new(Sum(vec![Arc::new(Constant(1.0)), Arc::new(bump)])) })
    }

    /// vanishes on the unit cylinder
    fn psi() -> Arc<Product> {
        Arc::new(Product(
            Arc::new(BallBump::new(1.0, 1, 1.0, 3)),
            Arc::new(Linear { coeffs: vec![0.7, 0.2, -0.4], offset: 0.3 }),
        ))
    }

    #[test]
    fn constants_on_chords() {
        let f = frame(Arc::new(Minkowski { dim: 3 }));
        let fan = disk_fan(&f, 1.0, 8);
        let rs = rays(&f, 8);
        let c = Complex64::new(0.3, -0.2);
        let t0 = light_ray_transform_scalar(&*constant_scalar(c), &rs);
        let tz = light_ray_transform_scalar(&*constant_scalar(Complex64::new(0.0, 0.0)), &rs);
        let dt = constant_form(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)]);
        let t1 = light_ray_transform_oneform(&*f.g, &*dt, &rs);
        for (k, b) in fan.iter().enumerate() {
            let (_, _, s) = minkowski_disk_exit(1.0, &b.xp, &b.xip);
            assert!((t0.rows[k].value - c * s).norm() < 1e-10);
            assert_eq!(tz.rows[k].value, Complex64::new(0.0, 0.0));
            assert!((t1.rows[k].value.re - s).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_forms_vanish_and_gauge() {
        let f = frame(speed());
        let rs = rays(&f, 8);
        let da = Exact { psi: psi(), scale: Complex64::new(1.0, 0.0) };
        let t = light_ray_transform_oneform(&*f.g, &da, &rs);
        for r in &t.rows {
            assert!(r.value.norm() < 1e-9, "{}", r.value);
        }
        let a = constant_form(vec![Complex64::new(0.2, 0.1), Complex64::new(-0.3, 0.0), Complex64::new(0.5, 0.0)]);
        let gauged = FormSum(vec![a.clone(), Arc::new(Exact { psi: psi(), scale: Complex64::new(-1.0, 0.0) })]);
        let ta = light_ray_transform_oneform(&*f.g, &*a, &rs);
        let tb = light_ray_transform_oneform(&*f.g, &gauged, &rs);
        for (x, y) in ta.rows.iter().zip(&tb.rows) {
            assert!((x.value - y.value).norm() < 1e-9);
        }
    }

    #[test]
    fn linearity() {
        let f = frame(speed());
        let rs = rays(&f, 4);
        let f1: Arc<dyn crate::fields::ScalarField> = Arc::new(Gaussian { amp: 1.0, center: vec![0.0, 0.2, 0.1], sigma: 0.4, axes: vec![0, 1, 2] });
        let f2: Arc<dyn crate::fields::ScalarField> = Arc::new(Linear { coeffs: vec![0.1, 0.5, -0.2], offset: 1.0 });
        let (a, b) = (0.7, -1.3);
        let comb = ComplexPair::real(Arc::new(Sum(vec![
            Arc::new(crate::fields::Scaled(a, f1.clone())),
            Arc::new(crate::fields::Scaled(b, f2.clone())),
        ])));
        let t1 = light_ray_transform_scalar(&ComplexPair::real(f1), &rs);
        let t2 = light_ray_transform_scalar(&ComplexPair::real(f2), &rs);
        let tc = light_ray_transform_scalar(&comb, &rs);
        for k in 0..rs.len() {
            assert!((tc.rows[k].value - (t1.rows[k].value * a + t2.rows[k].value * b)).norm() < 1e-12);
        }
    }

    #[test]
    fn reparameterization() {
        let f = frame(speed());
        let o = RayOptions { variational: false, ..RayOptions::for_diameter(2.0) };
        let b = f.covector(0, &[0.0, 0.4], &[-2.0, 0.6]);
        let ray = trace_interior(&f, &b, &o).unwrap().ray;
        let norm = normalize_ray_parameter(&f.z, &ray).unwrap();
        let q = ComplexPair::real(Arc::new(Gaussian { amp: 1.0, center: vec![0.0, 0.0, 0.0], sigma: 0.5, axes: vec![1, 2] }));
        let (l0a, l0b) = (l0_ray(&q, &ray).unwrap().value, l0_ray(&q, &norm).unwrap().value);
        // p(Z) = -2 at the start, so the normalized parameter is 2 s
        assert!((l0b - l0a * 2.0).norm() < 1e-10);
        let a = Product(Arc::new(Linear { coeffs: vec![0.0, 1.0, 0.0], offset: 0.5 }), Arc::new(Constant(1.0)));
        let form = Exact { psi: Arc::new(a), scale: Complex64::new(0.0, 1.0) };
        let form2 = FormSum(vec![Arc::new(form), constant_form(vec![Complex64::new(0.3, 0.0); 3])]);
        let (l1a, l1b) = (l1_ray(&*f.g, &form2, &ray).unwrap().value, l1_ray(&*f.g, &form2, &norm).unwrap().value);
        assert!((l1a - l1b).norm() < 1e-9);
    }
}
