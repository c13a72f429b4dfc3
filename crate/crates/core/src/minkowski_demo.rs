//! Closed-form Minkowski utilities on `R_t x B(0, 1)`: light lines, the
//! reachable region left after removing the two characteristic cones, and
//! partial-data line sets.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{CScalar, Components, FnComplex, Scalar};
use crate::geometry::{CoefficientTriple, Metric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineParam {
    pub z: Vec<f64>,
    pub theta: Vec<f64>,
    pub s0: f64,
    pub s1: f64,
}

/// `(s, z + s theta)`.
pub fn lightlike_line(z: &[f64], theta: &[f64], s: f64) -> Result<(f64, Vec<f64>)> {
    let n: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!("direction has length {n}")));
    }
    Ok((s, z.iter().zip(theta).map(|(a, b)| a + s * b).collect()))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inside the cylinder `[0, T] x B(0, 1)` and outside both cones
/// `|x| < 1 - t` and `|x| < 1 - (T - t)`.
pub fn reachable_region_indicator(t_max: f64, t: f64, x: &[f64]) -> bool {
    if !(0.0..=t_max).contains(&t) {
        return false;
    }
    let r = norm(x);
    let excluded = r < 1.0 - t || r < 1.0 - (t_max - t);
    !excluded && r <= 1.0
}

/// Distance from `x` to the unit sphere along `theta` (`|x| <= 1`).
pub fn exit_distance(x: &[f64], theta: &[f64]) -> f64 {
    let b: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
    let c = x.iter().map(|v| v * v).sum::<f64>() - 1.0;
    -b + (b * b - c).max(0.0).sqrt()
}

/// Brute-force reachability with `k` directions in the plane: some line
/// through `(t, x)` reaches the lateral boundary backward before `t = 0`,
/// and some line reaches it forward before `t = T`.
pub fn reachable_by_search(t_max: f64, t: f64, x: &[f64], k: usize, offset: f64) -> bool {
    if norm(x) > 1.0 || !(0.0..=t_max).contains(&t) {
        return false;
    }
    let mut back = f64::INFINITY;
    let mut fwd = f64::INFINITY;
    for j in 0..k {
        let a = 2.0 * std::f64::consts::PI * (j as f64 + offset) / k as f64;
        let th = [a.cos(), a.sin()];
        back = back.min(exit_distance(x, &[-th[0], -th[1]]));
        fwd = fwd.min(exit_distance(x, &th));
    }
    back <= t && fwd <= t_max - t
}

/// Distance of `(t, x)` to the region's boundary surfaces, in `|x|`.
pub fn boundary_margin(t_max: f64, t: f64, x: &[f64]) -> f64 {
    let r = norm(x);
    (r - (1.0 - t)).abs().min((r - (1.0 - (t_max - t))).abs()).min((r - 1.0).abs())
}

/// Whether the closed cones meet, from samples along the axis `x = 0`.
pub fn cones_intersect(t_max: f64, samples: usize) -> bool {
    (0..=samples).any(|k| {
        let t = t_max * k as f64 / samples as f64;
        t <= 1.0 && t_max - t <= 1.0
    })
}

/// Excluded volume fraction of the cylinder over a disk:
/// `(2 / (3T)) (1 - (1 - min(T/2, 1))^3)`.
pub fn excluded_fraction(t_max: f64) -> f64 {
    let m = (0.5 * t_max).min(1.0);
    2.0 / (3.0 * t_max) * (1.0 - (1.0 - m).powi(3))
}

/// Monte Carlo estimate of the reachable volume fraction over a disk.
pub fn reachable_fraction_mc(t_max: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hit = 0usize;
    for _ in 0..samples {
        let t = rng.gen_range(0.0..t_max);
        let r = rng.gen_range(0.0f64..1.0).sqrt();
        let a = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        if reachable_region_indicator(t_max, t, &[r * a.cos(), r * a.sin()]) {
            hit += 1;
        }
    }
    hit as f64 / samples as f64
}

/// Rows `t, x0, x1, indicator` on a `nt x nx x nx` raster.
pub fn region_raster(t_max: f64, nt: usize, nx: usize) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(nt * nx * nx);
    for i in 0..nt {
        let t = t_max * i as f64 / (nt - 1).max(1) as f64;
        for j in 0..nx {
            for k in 0..nx {
                let x = [-1.0 + 2.0 * j as f64 / (nx - 1).max(1) as f64, -1.0 + 2.0 * k as f64 / (nx - 1).max(1) as f64];
                out.push([t, x[0], x[1], reachable_region_indicator(t_max, t, &x) as u8 as f64]);
            }
        }
    }
    out
}

/// Arc `{angle : |angle - center| <= half_width}` of the unit circle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Arc1 {
    pub center: f64,
    pub half_width: f64,
}

impl Arc1 {
    pub fn full() -> Self {
        Arc1 { center: 0.0, half_width: std::f64::consts::PI }
    }

    pub fn contains(&self, p: &[f64], slack: f64) -> bool {
        let a = p[1].atan2(p[0]);
        let d = (a - self.center + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        d.abs() <= self.half_width + slack
    }

    fn angle(&self, u: f64) -> f64 {
        self.center + self.half_width.min(std::f64::consts::PI) * (2.0 * u - 1.0)
    }
}

/// Lines with both endpoints in `[0, T] x arc`, enumerated over entry
/// angles, inward directions and entry times on a `(na, nb, nt)` grid.
pub fn partial_data_line_set(t_max: f64, arc: &Arc1, grid: (usize, usize, usize)) -> Result<Vec<LineParam>> {
    let (na, nb, nt) = grid;
    let mut out = Vec::new();
    for i in 0..na {
        let alpha = arc.angle((i as f64 + 0.5) / na as f64);
        let p = [alpha.cos(), alpha.sin()];
        for j in 0..nb {
            // inward directions: angle within (pi/2, 3pi/2) of the outward normal
            let beta = alpha + std::f64::consts::PI * (0.5 + (j as f64 + 0.5) / nb as f64);
            let th = [beta.cos(), beta.sin()];
            let chord = -2.0 * (p[0] * th[0] + p[1] * th[1]);
            for k in 0..nt {
                let t_in = t_max * k as f64 / (nt - 1).max(1) as f64;
                let t_out = t_in + chord;
                if t_out > t_max {
                    continue;
                }
                let z = [p[0] - t_in * th[0], p[1] - t_in * th[1]];
                let (_, q) = lightlike_line(&z, &th, t_out)?;
                if !arc.contains(&q, 1e-12) {
                    continue;
                }
                out.push(LineParam { z: z.to_vec(), theta: th.to_vec(), s0: t_in, s1: t_out });
            }
        }
    }
    Ok(out)
}

/// Largest violation of the endpoint conditions over a line set.
pub fn line_set_defect(lines: &[LineParam], t_max: f64, arc: &Arc1) -> f64 {
    let mut worst: f64 = 0.0;
    for l in lines {
        for s in [l.s0, l.s1] {
            let (t, x) = lightlike_line(&l.z, &l.theta, s).expect("unit direction");
            worst = worst.max((norm(&x) - 1.0).abs());
            worst = worst.max((-t).max(t - t_max).max(0.0));
            if !arc.contains(&x, 1e-10) {
                worst = worst.max(1.0);
            }
        }
    }
    worst
}

/// `A = (i a / 2, 0, ..)`, `q = -(i/2) d_t a + b`: the wave operator with
/// absorption `a d_t` and potential `b` written as a magnetic triple.
pub fn absorption_triple(g: Metric, a: Scalar, b: Scalar) -> CoefficientTriple {
    let dim = g.dim();
    let a2 = a.clone();
    let mut comps: Vec<CScalar> = vec![Arc::new(FnComplex(Arc::new(move |x: &[f64]| Complex64::new(0.0, 0.5 * a2.value(x)))))];
    for _ in 1..dim {
        comps.push(crate::fields::constant_scalar(Complex64::new(0.0, 0.0)));
    }
    let q: CScalar = Arc::new(FnComplex(Arc::new(move |x: &[f64]| {
        let dt: f64 = a.gradient(x)[0];
        Complex64::new(b.value(x), -0.5 * dt)
    })));
    CoefficientTriple { g, a: Arc::new(Components(comps)), q }
}

/// `(t, x) -> (s, z + s theta)` as a vector, for comparisons with traced rays.
pub fn line_point(l: &LineParam, s: f64) -> DVector<f64> {
    let (t, x) = lightlike_line(&l.z, &l.theta, s).expect("unit direction");
    let mut v = vec![t];
    v.extend(x);
    DVector::from_vec(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Constant, Gaussian, Linear};
    use crate::geometry::{dual_norm, Minkowski};
    use crate::null_flow::{integrate_ray, RayOptions};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    #[test]
    fn line_examples() {
        let (t, x) = lightlike_line(&[0.0, 0.0], &[1.0, 0.0], 2.0).unwrap();
        assert_eq!((t, x), (2.0, vec![2.0, 0.0]));
        assert!(lightlike_line(&[0.0, 0.0], &[1.0, 1.0], 2.0).is_err());
        // velocity (1, theta) is null
        let g = Minkowski { dim: 3 };
        let th = [0.6, 0.8];
        let v = [1.0, th[0], th[1]];
        let lower = crate::geometry::lower(&g, &[0.0; 3], &v);
        assert!(dual_norm(&g, &[0.0; 3], lower.as_slice()).abs() < 1e-15);
    }

    #[test]
    fn line_matches_integrator() {
        let g = Minkowski { dim: 3 };
        let th = [0.6, -0.8];
        let z = [0.1, 0.2];
        // p = g(v) with v = (1, theta)
        let p = [-1.0, th[0], th[1]];
        let o = RayOptions { variational: false, max_s: 2.0, ..RayOptions::for_diameter(2.0) };
        let sol = integrate_ray(&g, &[0.0, z[0], z[1]], &p, &o, None, None).unwrap();
        let l = LineParam { z: z.to_vec(), theta: th.to_vec(), s0: 0.0, s1: 2.0 };
        for s in [0.3, 1.1, 2.0] {
            let x = DVector::from_vec(sol.x_at(s));
            assert!((x - line_point(&l, s)).amax() < 1e-12);
        }
    }

    #[test]
    fn indicator_examples() {
        assert!(reachable_region_indicator(2.0, 1.0, &[0.0, 0.0]));
        assert!(!reachable_region_indicator(1.0, 0.2, &[0.0, 0.0]));
        assert!(!reachable_region_indicator(3.0, 1.0, &[1.1, 0.0]));
        assert!(cones_intersect(2.0, 1000) && cones_intersect(1.5, 1000));
        assert!(!cones_intersect(2.01, 1000) && !cones_intersect(3.0, 1000));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn indicator_monotone_in_t(t1 in 0.1f64..3.0, dt in 0.0f64..2.0, u in 0.0f64..1.0, r in 0.0f64..1.0, a in 0.0f64..6.3) {
            let t = u * t1;
            let x = [r * a.cos(), r * a.sin()];
            if reachable_region_indicator(t1, t, &x) {
                // reachable(T1) in reachable(T2): the point keeps its time
                prop_assert!(reachable_region_indicator(t1 + dt, t, &x));
            }
        }
    }

    #[test]
    fn brute_force_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t_max in [1.5, 2.0, 3.0] {
            let mut checked = 0;
            for _ in 0..200 {
                let t = rng.gen_range(0.0..t_max);
                let r = rng.gen_range(0.0f64..1.0).sqrt();
                let a: f64 = rng.gen_range(0.0..6.3);
                let x = [r * a.cos(), r * a.sin()];
                if boundary_margin(t_max, t, &x) < 1e-6 {
                    continue;
                }
                checked += 1;
                assert_eq!(reachable_region_indicator(t_max, t, &x), reachable_by_search(t_max, t, &x, 10_000, 0.37), "{t_max} {t} {x:?}");
            }
            assert!(checked > 190);
        }
    }

    #[test]
    fn volume_fraction() {
        for t_max in [1.0, 2.0, 3.0] {
            let mc = reachable_fraction_mc(t_max, 200_000, 5);
            assert!((mc - (1.0 - excluded_fraction(t_max))).abs() < 0.01, "{t_max}: {mc}");
        }
    }

    /// chord end by solving `|p + s theta|^2 = 1` for the positive root
    fn chord_oracle(p: &[f64], th: &[f64]) -> f64 {
        let b = 2.0 * (p[0] * th[0] + p[1] * th[1]);
        let c = p[0] * p[0] + p[1] * p[1] - 1.0;
        let disc = (b * b - 4.0 * c).sqrt();
        ((-b + disc) / 2.0).max((-b - disc) / 2.0)
    }

    #[test]
    fn line_sets() {
        let full = Arc1::full();
        let (na, nb, nt) = (12, 9, 5);
        let lines = partial_data_line_set(3.0, &full, (na, nb, nt)).unwrap();
        let mut expect = 0;
        for i in 0..na {
            let alpha = full.angle((i as f64 + 0.5) / na as f64);
            for j in 0..nb {
                let beta = alpha + std::f64::consts::PI * (0.5 + (j as f64 + 0.5) / nb as f64);
                let len = chord_oracle(&[alpha.cos(), alpha.sin()], &[beta.cos(), beta.sin()]);
                for k in 0..nt {
                    if 3.0 * k as f64 / (nt - 1) as f64 + len <= 3.0 {
                        expect += 1;
                    }
                }
            }
        }
        assert_eq!(lines.len(), expect);
        assert!(line_set_defect(&lines, 3.0, &full) < 1e-10);
        let tiny = Arc1 { center: 0.3, half_width: 1e-3 };
        assert!(partial_data_line_set(0.5, &tiny, (8, 8, 4)).unwrap().is_empty());
        let half = Arc1 { center: 0.0, half_width: 1.2 };
        let some = partial_data_line_set(2.0, &half, (16, 16, 6)).unwrap();
        assert!(!some.is_empty() && some.len() < 16 * 16 * 6);
        assert!(line_set_defect(&some, 2.0, &half) < 1e-10);
    }

    #[test]
    fn absorption_form() {
        let a: Scalar = Arc::new(Linear { coeffs: vec![0.4, 0.1, 0.0], offset: 0.2 });
        let b: Scalar = Arc::new(Gaussian { amp: 1.0, center: vec![0.0, 0.0, 0.0], sigma: 0.5, axes: vec![1, 2] });
        let t = absorption_triple(Arc::new(Minkowski { dim: 3 }), a.clone(), b.clone());
        let x = [0.3, 0.1, -0.2];
        let av = t.a.value(&x);
        assert!((av[0] - Complex64::new(0.0, 0.5 * a.value(&x))).norm() < 1e-15);
        assert_eq!(av[1], Complex64::new(0.0, 0.0));
        let q = t.q.value(&x);
        assert!((q - Complex64::new(b.value(&x), -0.2)).norm() < 1e-9);
        let t0 = absorption_triple(Arc::new(Minkowski { dim: 3 }), Arc::new(Constant(0.0)), Arc::new(Constant(0.0)));
        assert_eq!(t0.q.value(&x), Complex64::new(0.0, 0.0));
    }
}
