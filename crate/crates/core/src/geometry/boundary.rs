//! Boundary defining functions with explicit boundary coordinates.
//!
//! A boundary may consist of several coordinate patches (the two faces of a
//! slab). Boundary coordinates `y` are also available as ambient functions
//! near the boundary, with gradients and Hessians, so that boundary phases
//! `y . xi'` can be extended off the boundary.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

/// Ambient jets of the boundary coordinate functions at a point:
/// values, gradients (row `alpha` is `d y^alpha`) and Hessians.
pub struct CoordJets {
    pub patch: usize,
    pub y: DVector<f64>,
    pub grad: DMatrix<f64>,
    pub hess: Vec<DMatrix<f64>>,
}

pub trait Boundary: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> String;
    /// Positive inside, zero on the boundary.
    fn rho(&self, x: &[f64]) -> f64;
    fn d_rho(&self, x: &[f64]) -> DVector<f64>;
    fn hess_rho(&self, x: &[f64]) -> DMatrix<f64>;
    fn patches(&self) -> usize {
        1
    }
    /// Point of the boundary with coordinates `y` on `patch`.
    fn embed(&self, patch: usize, y: &[f64]) -> DVector<f64>;
    /// Columns are `d x / d y^alpha`.
    fn frame(&self, patch: usize, y: &[f64]) -> DMatrix<f64>;
    /// Coordinates of a point near the boundary, with derivatives.
    fn coord_jets(&self, x: &[f64]) -> CoordJets;
    /// Period of each boundary coordinate, if any.
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None; self.dim() - 1]
    }

    fn locate(&self, x: &[f64]) -> (usize, DVector<f64>) {
        let j = self.coord_jets(x);
        (j.patch, j.y)
    }

    /// `y1 - y2` with periodic coordinates wrapped to `(-P/2, P/2]`.
    fn coord_diff(&self, y1: &[f64], y2: &[f64]) -> DVector<f64> {
        let per = self.periods();
        DVector::from_iterator(
            y1.len(),
            y1.iter().zip(y2).zip(per).map(|((a, b), p)| match p {
                Some(p) => {
                    let mut d = (a - b) % p;
                    if d > 0.5 * p {
                        d -= p;
                    } else if d <= -0.5 * p {
                        d += p;
                    }
                    d
                }
                None => a - b,
            }),
        )
    }
}

/// `x^n >= 0` with `rho = x^n` (last axis).
#[derive(Clone, Debug)]
pub struct HalfSpace {
    pub dim: usize,
}

impl Boundary for HalfSpace {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "half-space".into()
    }
    fn rho(&self, x: &[f64]) -> f64 {
        x[self.dim - 1]
    }
    fn d_rho(&self, _x: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        v[self.dim - 1] = 1.0;
        v
    }
    fn hess_rho(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
    fn embed(&self, _patch: usize, y: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        v.rows_mut(0, self.dim - 1).copy_from_slice(y);
        v
    }
    fn frame(&self, _patch: usize, _y: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim - 1)
    }
    fn coord_jets(&self, x: &[f64]) -> CoordJets {
        let n = self.dim - 1;
        CoordJets {
            patch: 0,
            y: DVector::from_column_slice(&x[..n]),
            grad: DMatrix::identity(n, self.dim),
            hess: vec![DMatrix::zeros(self.dim, self.dim); n],
        }
    }
}

/// `lo <= x^n <= hi` with `rho = (x^n - lo)(hi - x^n)/(hi - lo)`.
/// Patch 0 is the lower face, patch 1 the upper face.
#[derive(Clone, Debug)]
pub struct Slab {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Boundary for Slab {
    fn dim(&self) -> usize {
        self.dim
    }
    fn name(&self) -> String {
        "slab".into()
    }
    fn rho(&self, x: &[f64]) -> f64 {
        let s = x[self.dim - 1];
        (s - self.lo) * (self.hi - s) / (self.hi - self.lo)
    }
    fn d_rho(&self, x: &[f64]) -> DVector<f64> {
        let s = x[self.dim - 1];
        let mut v = DVector::zeros(self.dim);
        v[self.dim - 1] = (self.hi + self.lo - 2.0 * s) / (self.hi - self.lo);
        v
    }
    fn hess_rho(&self, _x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        h[(self.dim - 1, self.dim - 1)] = -2.0 / (self.hi - self.lo);
        h
    }
    fn patches(&self) -> usize {
        2
    }
    fn embed(&self, patch: usize, y: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        v.rows_mut(0, self.dim - 1).copy_from_slice(y);
        v[self.dim - 1] = if patch == 0 { self.lo } else { self.hi };
        v
    }
    fn frame(&self, _patch: usize, _y: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim - 1)
    }
    fn coord_jets(&self, x: &[f64]) -> CoordJets {
        let n = self.dim - 1;
        let patch = usize::from(x[n] > 0.5 * (self.lo + self.hi));
        CoordJets {
            patch,
            y: DVector::from_column_slice(&x[..n]),
            grad: DMatrix::identity(n, self.dim),
            hess: vec![DMatrix::zeros(self.dim, self.dim); n],
        }
    }
}

/// Cylinder `R_t x {|x| <= R}` in 1+2 dimensions with
/// `rho = (R^2 - |x|^2)/(2R)` and boundary coordinates `(t, theta)`.
#[derive(Clone, Debug)]
pub struct Cylinder {
    pub radius: f64,
}

impl Boundary for Cylinder {
    fn dim(&self) -> usize {
        3
    }
    fn name(&self) -> String {
        "cylinder".into()
    }
    fn rho(&self, x: &[f64]) -> f64 {
        (self.radius * self.radius - x[1] * x[1] - x[2] * x[2]) / (2.0 * self.radius)
    }
    fn d_rho(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[0.0, -x[1] / self.radius, -x[2] / self.radius])
    }
    fn hess_rho(&self, _x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        h[(1, 1)] = -1.0 / self.radius;
        h[(2, 2)] = -1.0 / self.radius;
        h
    }
    fn embed(&self, _patch: usize, y: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[y[0], self.radius * y[1].cos(), self.radius * y[1].sin()])
    }
    fn frame(&self, _patch: usize, y: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -self.radius * y[1].sin(), 0.0, self.radius * y[1].cos()])
    }
    fn coord_jets(&self, x: &[f64]) -> CoordJets {
        let (a, b) = (x[1], x[2]);
        let r2 = a * a + b * b;
        let r4 = r2 * r2;
        let mut grad = DMatrix::zeros(2, 3);
        grad[(0, 0)] = 1.0;
        grad[(1, 1)] = -b / r2;
        grad[(1, 2)] = a / r2;
        let mut ht = DMatrix::zeros(3, 3);
        ht[(1, 1)] = 2.0 * a * b / r4;
        ht[(2, 2)] = -2.0 * a * b / r4;
        ht[(1, 2)] = (b * b - a * a) / r4;
        ht[(2, 1)] = ht[(1, 2)];
        CoordJets {
            patch: 0,
            y: DVector::from_column_slice(&[x[0], b.atan2(a)]),
            grad,
            hess: vec![DMatrix::zeros(3, 3), ht],
        }
    }
    fn periods(&self) -> Vec<Option<f64>> {
        vec![None, Some(2.0 * PI)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::fd_axis;

    fn check(b: &dyn Boundary, x: &[f64]) {
        let d = b.dim();
        let g = b.d_rho(x);
        let h = b.hess_rho(x);
        let j = b.coord_jets(x);
        for i in 0..d {
            assert!((fd_axis(x, i, 1e-5, |y| b.rho(y)) - g[i]).abs() < 1e-9);
            let gi = fd_axis(x, i, 1e-5, |y| b.d_rho(y));
            for k in 0..d {
                assert!((gi[k] - h[(i, k)]).abs() < 1e-8);
            }
            let yi = fd_axis(x, i, 1e-5, |z| b.coord_jets(z).y);
            for a in 0..d - 1 {
                assert!((yi[a] - j.grad[(a, i)]).abs() < 1e-8);
                let gai = fd_axis(x, i, 1e-5, |z| {
                    let jj = b.coord_jets(z);
                    DVector::from_iterator(d, (0..d).map(|k| jj.grad[(a, k)]))
                });
                for k in 0..d {
                    assert!((gai[k] - j.hess[a][(i, k)]).abs() < 1e-7);
                }
            }
        }
        // embed and frame agree with coordinates
        let p = b.embed(j.patch, j.y.as_slice());
        assert!(b.rho(p.as_slice()).abs() < 1e-12);
        let fr = b.frame(j.patch, j.y.as_slice());
        for a in 0..d - 1 {
            let col = fd_axis(j.y.as_slice(), a, 1e-5, |y| b.embed(j.patch, y));
            assert!((col - fr.column(a)).amax() < 1e-9);
        }
    }

    #[test]
    fn derivatives_match_differences() {
        check(&HalfSpace { dim: 3 }, &[0.1, 0.2, 0.3]);
        check(&Slab { dim: 3, lo: 0.0, hi: 1.0 }, &[0.1, 0.2, 0.7]);
        check(&Cylinder { radius: 1.0 }, &[0.1, 0.6, -0.5]);
    }

    #[test]
    fn unit_normal_on_boundary() {
        let c = Cylinder { radius: 1.0 };
        let p = c.embed(0, &[0.0, 0.7]);
        assert!((c.d_rho(p.as_slice()).norm() - 1.0).abs() < 1e-14);
        let s = Slab { dim: 2, lo: -1.0, hi: 2.0 };
        assert!((s.d_rho(&[0.0, -1.0])[1] - 1.0).abs() < 1e-14);
        assert!((s.d_rho(&[0.0, 2.0])[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_difference_wraps() {
        let c = Cylinder { radius: 1.0 };
        let d = c.coord_diff(&[0.0, PI - 0.1], &[0.0, -PI + 0.1]);
        assert!((d[1] + 0.2).abs() < 1e-12);
    }
}
