//! Oscillatory boundary data, synthesized local and semiglobal DN responses
//! at finite frequency, and symbol extraction by frequency sweeps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_frame::Frame;
use crate::error::{Error, Result};
use crate::fields::{CScalar, Covector, FnComplex, FnForm};
use crate::geo_optics::{local_dn_symbol, semiglobal_symbol_data, LocalSymbol, SymbolRow};
use crate::geometry::{Boundary, CoefficientTriple};
use crate::null_flow::RayOptions;
use crate::tol;

/// `C^k` step from 0 (at `t <= 0`) to 1 (at `t >= 1`).
fn smoothstep(t: f64, k: i32) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    // regularized incomplete beta with integer parameters k + 1
    let n = k.max(0) as u32;
    let mut s = 0.0;
    for j in 0..=n {
        s += binom(n + j, j) * binom(2 * n + 1, n - j) * (-t).powi(j as i32);
    }
    t.powi(n as i32 + 1) * s
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Cutoff `chi(x', xi')`: a spatial plateau around `center` times a conic
/// plateau around the direction of `xi0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub patch: usize,
    pub center: Vec<f64>,
    pub xi0: Vec<f64>,
    pub plateau: f64,
    pub support: f64,
    /// Angular half-width of the conic support in radians; the conic
    /// plateau is half of it.
    pub cone: f64,
    pub order: i32,
}

impl CutoffSpec {
    pub fn spatial(&self, b: &dyn Boundary, xp: &[f64]) -> f64 {
        let d = b.coord_diff(xp, &self.center).norm();
        1.0 - smoothstep((d - self.plateau) / (self.support - self.plateau), self.order)
    }

    pub fn conic(&self, xip: &[f64]) -> f64 {
        let a = DVector::from_column_slice(xip);
        let b = DVector::from_column_slice(&self.xi0);
        let c = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
        let ang = c.acos();
        1.0 - smoothstep((ang - 0.5 * self.cone) / (0.5 * self.cone), self.order)
    }

    pub fn value(&self, b: &dyn Boundary, xp: &[f64], xip: &[f64]) -> f64 {
        self.spatial(b, xp) * self.conic(xip)
    }
}

/// Product grid of boundary coordinates on one patch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub patch: usize,
    /// `(lo, hi, count)` per boundary axis, endpoints included.
    pub axes: Vec<(f64, f64, usize)>,
}

impl BoundaryGrid {
    pub fn centered(patch: usize, center: &[f64], half: f64, count: usize) -> Self {
        BoundaryGrid { patch, axes: center.iter().map(|c| (c - half, c + half, count)).collect() }
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(|(lo, hi, n)| if *n > 1 { (hi - lo) / (*n - 1) as f64 } else { 0.0 }).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.2).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.len());
        for idx in 0..self.len() {
            let mut rem = idx;
            let mut p = vec![0.0; self.axes.len()];
            for a in (0..self.axes.len()).rev() {
                let n = self.axes[a].2;
                p[a] = self.axes[a].0 + h[a] * (rem % n) as f64;
                rem /= n;
            }
            out.push(p);
        }
        out
    }
}

/// Frequencies of a probe and the grid it lives on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolProbe {
    pub lambdas: Vec<f64>,
    pub grid: BoundaryGrid,
}

impl SymbolProbe {
    pub fn check(&self) -> Result<()> {
        if self.lambdas.len() < 3 {
            return Err(Error::Invalid("a probe needs at least 3 frequencies".into()));
        }
        if self.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("probe frequencies must increase strictly".into()));
        }
        Ok(())
    }
}

/// `f = e^{i lambda y.xi0} chi(y, xi0)` on the grid.
pub fn oscillatory_boundary_data(b: &dyn Boundary, grid: &BoundaryGrid, cutoff: &CutoffSpec, lambda: f64) -> Result<Vec<Complex64>> {
    let h = grid.spacing();
    for (a, ha) in h.iter().enumerate() {
        let waves = lambda * cutoff.xi0[a].abs() * ha / (2.0 * std::f64::consts::PI);
        if waves * tol::POINTS_PER_WAVE > 1.0 {
            return Err(Error::Invalid(format!(
                "grid under-resolves lambda = {lambda} on axis {a}: {:.2} points per wave",
                1.0 / waves
            )));
        }
    }
    Ok(grid
        .points()
        .iter()
        .map(|y| {
            let ph: f64 = y.iter().zip(&cutoff.xi0).map(|(a, b)| a * b).sum();
            Complex64::from_polar(cutoff.value(b, y, &cutoff.xi0), lambda * ph)
        })
        .collect())
}

fn carrier_phase(y: &[f64], xi: &[f64]) -> f64 {
    y.iter().zip(xi).map(|(a, b)| a * b).sum()
}

/// Local symbols at the grid points inside the cutoff support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalSymbolGrid {
    pub points: Vec<Vec<f64>>,
    pub chi: Vec<f64>,
    pub symbols: Vec<Option<LocalSymbol>>,
    /// Indices skipped inside the support, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub fn local_symbol_grid(frame: &Frame, triple: &CoefficientTriple, grid: &BoundaryGrid, cutoff: &CutoffSpec) -> LocalSymbolGrid {
    let points = grid.points();
    let chi: Vec<f64> = points.iter().map(|y| cutoff.value(&*frame.boundary, y, &cutoff.xi0)).collect();
    let res: Vec<Option<Result<LocalSymbol>>> = points
        .par_iter()
        .zip(&chi)
        .map(|(y, c)| {
            (*c > 0.0).then(|| local_dn_symbol(frame, triple, &frame.covector(grid.patch, y, &cutoff.xi0)))
        })
        .collect();
    let mut skipped = Vec::new();
    let symbols = res
        .into_iter()
        .enumerate()
        .map(|(k, r)| match r {
            Some(Ok(s)) => Some(s),
            Some(Err(e)) => {
                skipped.push((k, e.to_string()));
                None
            }
            None => None,
        })
        .collect();
    LocalSymbolGrid { points, chi, symbols, skipped }
}

/// Responses on the probe grid, one sample vector per frequency.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResponseBundle {
    pub kind: String,
    pub cutoff: CutoffSpec,
    pub lambdas: Vec<f64>,
    /// Entry points of the grid.
    pub points: Vec<Vec<f64>>,
    /// Where each sample lives: the entry point (local) or the exit point.
    pub sample_points: Vec<Option<(usize, Vec<f64>)>>,
    /// Boundary phase `y.xi0` carried by each sample.
    pub phase: Vec<f64>,
    pub samples: Vec<Vec<Complex64>>,
    pub skipped: Vec<(usize, String)>,
}

impl ResponseBundle {
    /// `e^{-i lambda phase} R` at sample `k` for frequency index `j`.
    pub fn normalized(&self, j: usize, k: usize) -> Complex64 {
        self.samples[j][k] * Complex64::from_polar(1.0, -self.lambdas[j] * self.phase[k])
    }
}

/// Truncated local response `-e^{i lambda phi} chi (i lambda xi_n + b0 + b1/lambda)`.
pub fn local_response_value(s: &LocalSymbol, lambda: f64) -> Complex64 {
    -(Complex64::i() * lambda * s.xi_n + s.b0 + s.b1 / lambda)
}

pub fn synthesize_local_response(frame: &Frame, triple: &CoefficientTriple, probe: &SymbolProbe, cutoff: &CutoffSpec) -> Result<ResponseBundle> {
    probe.check()?;
    let sg = local_symbol_grid(frame, triple, &probe.grid, cutoff);
    let phase: Vec<f64> = sg.points.iter().map(|y| carrier_phase(y, &cutoff.xi0)).collect();
    let samples = probe
        .lambdas
        .par_iter()
        .map(|&l| {
            sg.symbols
                .iter()
                .zip(&sg.chi)
                .zip(&phase)
                .map(|((s, c), ph)| match s {
                    Some(s) => Complex64::from_polar(*c, l * ph) * local_response_value(s, l),
                    None if *c > 0.0 => Complex64::new(f64::NAN, f64::NAN),
                    None => Complex64::new(0.0, 0.0),
                })
                .collect()
        })
        .collect();
    Ok(ResponseBundle {
        kind: "local".into(),
        cutoff: cutoff.clone(),
        lambdas: probe.lambdas.clone(),
        sample_points: sg.points.iter().map(|y| Some((probe.grid.patch, y.clone()))).collect(),
        points: sg.points,
        phase,
        samples,
        skipped: sg.skipped,
    })
}

/// Semiglobal rows for the grid points inside the cutoff support.
pub struct SemiglobalGrid {
    pub points: Vec<Vec<f64>>,
    pub chi: Vec<f64>,
    pub rows: Vec<Option<SymbolRow>>,
    pub skipped: Vec<(usize, String)>,
}

pub fn semiglobal_grid(frame: &Frame, triple: &CoefficientTriple, grid: &BoundaryGrid, cutoff: &CutoffSpec, opts: &RayOptions) -> SemiglobalGrid {
    let points = grid.points();
    let chi: Vec<f64> = points.iter().map(|y| cutoff.value(&*frame.boundary, y, &cutoff.xi0)).collect();
    let res: Vec<Option<Result<SymbolRow>>> = points
        .par_iter()
        .zip(&chi)
        .map(|(y, c)| {
            (*c > 0.0).then(|| semiglobal_symbol_data(frame, triple, &frame.covector(grid.patch, y, &cutoff.xi0), opts))
        })
        .collect();
    let mut skipped = Vec::new();
    let rows = res
        .into_iter()
        .enumerate()
        .map(|(k, r)| match r {
            Some(Ok(row)) if row.conjugate => {
                skipped.push((k, "conjugate point along the ray".into()));
                None
            }
            Some(Ok(row)) => Some(row),
            Some(Err(e)) => {
                skipped.push((k, e.to_string()));
                None
            }
            None => None,
        })
        .collect();
    SemiglobalGrid { points, chi, rows, skipped }
}

/// Semiglobal response at the exit points: `e^{i lambda phi} chi (2 i lambda
/// eta_n a0 + 2 i eta_n a1 + d0)` in ray coordinates.
pub fn synthesize_semiglobal_response(
    frame: &Frame,
    triple: &CoefficientTriple,
    probe: &SymbolProbe,
    cutoff: &CutoffSpec,
    opts: &RayOptions,
) -> Result<ResponseBundle> {
    probe.check()?;
    let sg = semiglobal_grid(frame, triple, &probe.grid, cutoff, opts);
    Ok(bundle_from_rows(&sg, cutoff, &probe.lambdas))
}

fn bundle_from_rows(sg: &SemiglobalGrid, cutoff: &CutoffSpec, lambdas: &[f64]) -> ResponseBundle {
    let phase: Vec<f64> = sg.points.iter().map(|y| carrier_phase(y, &cutoff.xi0)).collect();
    let samples = lambdas
        .iter()
        .map(|&l| {
            sg.rows
                .iter()
                .zip(&sg.chi)
                .zip(&phase)
                .map(|((r, c), ph)| match r {
                    Some(r) => Complex64::from_polar(*c, l * ph) * r.response(l),
                    None => Complex64::new(0.0, 0.0),
                })
                .collect()
        })
        .collect();
    ResponseBundle {
        kind: "semiglobal".into(),
        cutoff: cutoff.clone(),
        lambdas: lambdas.to_vec(),
        points: sg.points.clone(),
        sample_points: sg.rows.iter().map(|r| r.as_ref().map(|r| (r.exit.patch, r.exit.xp.clone()))).collect(),
        phase,
        samples,
        skipped: sg.skipped.clone(),
    }
}

/// `(g, -conj A, conj q)`: the operator whose solutions are the complex
/// conjugates of solutions for `(g, A, q)`.
pub fn conjugate_triple(t: &CoefficientTriple) -> CoefficientTriple {
    let a = t.a.clone();
    let q = t.q.clone();
    let a2: Covector = Arc::new(FnForm(Arc::new(move |x: &[f64]| a.value(x).map(|c| -c.conj()))));
    let q2: CScalar = Arc::new(FnComplex(Arc::new(move |x: &[f64]| q.value(x).conj())));
    CoefficientTriple { g: t.g.clone(), a: a2, q: q2 }
}

/// Semiglobal response to the past-pointing probe `e^{-i lambda y.xi0} chi`:
/// the complex conjugate of the future-pointing response for the
/// conjugate triple.
pub fn synthesize_semiglobal_response_past(
    frame: &Frame,
    triple: &CoefficientTriple,
    probe: &SymbolProbe,
    cutoff: &CutoffSpec,
    opts: &RayOptions,
) -> Result<ResponseBundle> {
    let mut b = synthesize_semiglobal_response(frame, &conjugate_triple(triple), probe, cutoff, opts)?;
    for s in b.samples.iter_mut().flatten() {
        *s = s.conj();
    }
    for p in b.phase.iter_mut() {
        *p = -*p;
    }
    b.kind = "semiglobal-past".into();
    Ok(b)
}

/// Least-squares fit `v(lambda) = sum_k s_k lambda^{-k}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolFit {
    pub coeffs: Vec<Complex64>,
    pub residual: f64,
    /// Slope of `log |v - s0|` against `log lambda`.
    pub rate: f64,
}

impl SymbolFit {
    pub fn s0(&self) -> Complex64 {
        self.coeffs[0]
    }
}

fn lsq_complex(a: &DMatrix<f64>, b: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-14 {
        return Err(Error::IllConditioned(smax / smin));
    }
    let re = DVector::from_iterator(b.len(), b.iter().map(|c| c.re));
    let im = DVector::from_iterator(b.len(), b.iter().map(|c| c.im));
    let xr = svd.solve(&re, 0.0).map_err(|e| Error::Invalid(e.into()))?;
    let xi = svd.solve(&im, 0.0).map_err(|e| Error::Invalid(e.into()))?;
    let x: Vec<Complex64> = xr.iter().zip(xi.iter()).map(|(r, i)| Complex64::new(*r, *i)).collect();
    let mut res = 0.0;
    for (k, bk) in b.iter().enumerate() {
        let mut f = Complex64::new(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            f += xj * a[(k, j)];
        }
        res += (f - bk).norm_sqr();
    }
    Ok((x, (res / b.len() as f64).sqrt()))
}

/// Fits `terms` inverse powers of `lambda` to `values`. The fit is rejected
/// when `|v - s0|` grows with `lambda`.
pub fn extract_symbol(lambdas: &[f64], values: &[Complex64], terms: usize) -> Result<SymbolFit> {
    if lambdas.len() < 3 || lambdas.len() < terms {
        return Err(Error::FitRejected(format!("{} frequencies for {terms} terms", lambdas.len())));
    }
    let a = DMatrix::from_fn(lambdas.len(), terms, |i, j| lambdas[i].powi(-(j as i32)));
    let (coeffs, residual) = lsq_complex(&a, values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - coeffs[0]).norm()).collect();
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let rate = if dev.iter().all(|d| *d > 1e-13 * scale) {
        let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
        let ys: Vec<f64> = dev.iter().map(|d| d.ln()).collect();
        slope(&xs, &ys)
    } else {
        f64::NEG_INFINITY
    };
    if rate > 0.0 {
        return Err(Error::FitRejected(format!("correction grows with lambda (rate {rate:.3})")));
    }
    if residual > 1e-2 * scale {
        return Err(Error::FitRejected(format!("residual {residual:.3e} against data scale {scale:.3e}")));
    }
    Ok(SymbolFit { coeffs, residual, rate })
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `xi_n` estimates at every grid point of a local bundle from
/// `-e^{-i lambda phi} R / (i lambda chi)`.
pub fn extract_xin(bundle: &ResponseBundle, b: &dyn Boundary) -> Vec<Option<Result<SymbolFit>>> {
    (0..bundle.points.len())
        .map(|k| {
            let chi = bundle.cutoff.value(b, &bundle.points[k], &bundle.cutoff.xi0);
            if chi <= 0.0 || bundle.samples[0][k].is_nan() {
                return None;
            }
            let vals: Vec<Complex64> = (0..bundle.lambdas.len())
                .map(|j| -bundle.normalized(j, k) / (Complex64::i() * bundle.lambdas[j] * chi))
                .collect();
            Some(extract_symbol(&bundle.lambdas, &vals, 3))
        })
        .collect()
}

/// Gradient of the unwrapped phase of samples around sample `center`,
/// from a quadratic least-squares fit over the samples within `radius`.
pub fn phase_gradient_fit(b: &dyn Boundary, bundle: &ResponseBundle, j: usize, center: usize, radius: f64) -> Result<DVector<f64>> {
    let (patch, y0) = bundle.sample_points[center].clone().ok_or_else(|| Error::Invalid("centre sample is missing".into()))?;
    let r0 = bundle.samples[j][center];
    let n = y0.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (k, sp) in bundle.sample_points.iter().enumerate() {
        let Some((p, y)) = sp else { continue };
        if *p != patch || bundle.samples[j][k].norm() == 0.0 {
            continue;
        }
        let dy = b.coord_diff(y, &y0);
        if dy.norm() > radius {
            continue;
        }
        let mut row = vec![1.0];
        row.extend(dy.iter());
        for a in 0..n {
            for c in a..n {
                row.push(dy[a] * dy[c]);
            }
        }
        rows.push(row);
        rhs.push(Complex64::new((bundle.samples[j][k] / r0).arg(), 0.0));
    }
    let m = rows[0].len();
    if rows.len() < m {
        return Err(Error::FitRejected(format!("{} samples for {m} phase coefficients", rows.len())));
    }
    let a = DMatrix::from_fn(rows.len(), m, |i, c| rows[i][c]);
    let (x, _) = lsq_complex(&a, &rhs)?;
    Ok(DVector::from_iterator(n, (1..=n).map(|a| x[a].re)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{constant_form, constant_scalar};
    use crate::geometry::{Chart, Cylinder, HalfSpace, Layered, Metric, Minkowski, Slab, SpeedProfile};
    use crate::lens::lens_relation;
    use rustfft::FftPlanner;

    fn half_space(g: Metric) -> Frame {
        let chart = Chart::new(vec![(-2.0, 2.0), (-2.0, 2.0), (0.0, 2.0)], Arc::new(HalfSpace { dim: 3 })).unwrap();
        Frame::new(g, &chart)
    }

    fn slab(g: Metric) -> Frame {
        let chart = Chart::new(vec![(-3.0, 3.0), (-3.0, 3.0), (0.0, 1.0)], Arc::new(Slab { dim: 3, lo: 0.0, hi: 1.0 })).unwrap();
        Frame::new(g, &chart)
    }

    fn cutoff(xi0: Vec<f64>) -> CutoffSpec {
        CutoffSpec { patch: 0, center: vec![0.0, 0.0], xi0, plateau: 0.05, support: 0.12, cone: 0.3, order: 3 }
    }

    fn layered() -> Layered {
        Layered::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, 1.2]),
            DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, -0.3]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.02, 0.02, 0.4]),
        )
    }

    #[test]
    fn smoothstep_is_a_step() {
        for k in 0..5 {
            assert_eq!(smoothstep(-0.1, k), 0.0);
            assert_eq!(smoothstep(1.1, k), 1.0);
            assert!((smoothstep(0.5, k) - 0.5).abs() < 1e-14);
            let mut prev = 0.0;
            for i in 0..=100 {
                let v = smoothstep(i as f64 / 100.0, k);
                assert!(v >= prev - 1e-15 && (0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn cutoff_properties() {
        let f = half_space(Arc::new(Minkowski { dim: 3 }));
        let c = cutoff(vec![-1.0, 0.3]);
        let b = &*f.boundary;
        assert_eq!(c.value(b, &[0.01, 0.02], &[-1.0, 0.3]), 1.0);
        assert_eq!(c.value(b, &[0.2, 0.0], &[-1.0, 0.3]), 0.0);
        // degree-0 homogeneity in xi'
        for s in [0.5, 2.0, 7.0] {
            assert_eq!(c.conic(&[-1.0 * s, 0.35 * s]), c.conic(&[-1.0, 0.35]));
        }
        let v = c.value(b, &[0.08, 0.0], &[-1.0, 0.4]);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn boundary_data_examples() {
        let f = half_space(Arc::new(Minkowski { dim: 3 }));
        let c = cutoff(vec![-1.0, 0.3]);
        let grid = BoundaryGrid::centered(0, &[0.0, 0.0], 0.15, 31);
        let f0 = oscillatory_boundary_data(&*f.boundary, &grid, &c, 0.0).unwrap();
        for (v, y) in f0.iter().zip(grid.points()) {
            assert_eq!(v.im, 0.0);
            assert_eq!(v.re, c.value(&*f.boundary, &y, &c.xi0));
        }
        let f1 = oscillatory_boundary_data(&*f.boundary, &grid, &c, 30.0).unwrap();
        for (v, y) in f1.iter().zip(grid.points()) {
            assert!((v.norm() - c.value(&*f.boundary, &y, &c.xi0)).abs() < 1e-15);
        }
        assert!(oscillatory_boundary_data(&*f.boundary, &grid, &c, 1e4).is_err());
    }

    #[test]
    fn fft_peak_at_carrier() {
        // one boundary axis: 1+1 half plane
        let chart = Chart::new(vec![(-4.0, 4.0), (0.0, 1.0)], Arc::new(HalfSpace { dim: 2 })).unwrap();
        let f = Frame::new(Arc::new(Minkowski { dim: 2 }), &chart);
        let c = CutoffSpec { patch: 0, center: vec![0.0], xi0: vec![-1.0], plateau: 1.0, support: 2.0, cone: 0.3, order: 2 };
        let n = 256;
        let grid = BoundaryGrid { patch: 0, axes: vec![(-3.0, 3.0, n)] };
        let lambda = 20.0;
        let data = oscillatory_boundary_data(&*f.boundary, &grid, &c, lambda).unwrap();
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = data.iter().map(|z| rustfft::num_complex::Complex::new(z.re, z.im)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (0..n).max_by(|a, b| buf[*a].norm().total_cmp(&buf[*b].norm())).unwrap();
        // frequency of bin k in radians per unit length
        let h = grid.spacing()[0];
        let k = if peak > n / 2 { peak as f64 - n as f64 } else { peak as f64 };
        let omega = 2.0 * std::f64::consts::PI * k / (n as f64 * h);
        let bin = 2.0 * std::f64::consts::PI / (n as f64 * h);
        assert!((omega - lambda * c.xi0[0]).abs() <= bin);
    }

    fn probe(lambdas: Vec<f64>) -> SymbolProbe {
        SymbolProbe { lambdas, grid: BoundaryGrid::centered(0, &[0.0, 0.0], 0.02, 3) }
    }

    #[test]
    fn minkowski_local_response() {
        let f = half_space(Arc::new(Minkowski { dim: 3 }));
        let triple = CoefficientTriple::bare(f.g.clone());
        let c = cutoff(vec![-1.0, 0.0]);
        let b = synthesize_local_response(&f, &triple, &probe(vec![8.0, 16.0, 32.0]), &c).unwrap();
        for (j, l) in b.lambdas.iter().enumerate() {
            for (k, y) in b.points.iter().enumerate() {
                let want = -Complex64::from_polar(1.0, l * carrier_phase(y, &c.xi0)) * Complex64::i() * *l;
                assert!((b.samples[j][k] - want).norm() < 1e-9 * l);
            }
        }
        // identical triples give identical bytes
        let again = synthesize_local_response(&f, &triple.clone(), &probe(vec![8.0, 16.0, 32.0]), &c).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn xin_extraction_rate() {
        let g: Metric = Arc::new(SpeedProfile {
            dim: 3,
            c: Arc::new(crate::fields::Linear { coeffs: vec![0.0, 0.1, 0.3], offset: 1.0 }),
        });
        let f = half_space(g);
        let mut triple = CoefficientTriple::bare(f.g.clone());
        triple.a = constant_form(vec![Complex64::new(0.2, 0.0), Complex64::new(0.1, 0.0), Complex64::new(0.0, 0.0)]);
        let c = cutoff(vec![-1.0, 0.4]);
        let b = synthesize_local_response(&f, &triple, &probe(tol::LAMBDA_LADDER.to_vec()), &c).unwrap();
        for (k, fit) in extract_xin(&b, &*f.boundary).into_iter().enumerate() {
            let fit = fit.unwrap().unwrap();
            let truth = f.xi_n(&f.covector(0, &b.points[k], &c.xi0)).unwrap();
            assert!((fit.s0() - truth).norm() < 1e-9);
            assert!((fit.rate + 1.0).abs() < 0.2, "rate {}", fit.rate);
        }
    }

    #[test]
    fn extraction_of_exact_model() {
        let ls = [8.0, 16.0, 32.0, 64.0];
        let s0 = Complex64::new(0.7, -0.2);
        let s1 = Complex64::new(0.3, 0.5);
        let v: Vec<Complex64> = ls.iter().map(|l| s0 + s1 / l).collect();
        let fit = extract_symbol(&ls, &v, 2).unwrap();
        assert!((fit.s0() - s0).norm() < 1e-14);
        assert!((fit.rate + 1.0).abs() < 1e-10);
        let grow: Vec<Complex64> = ls.iter().map(|l| s0 + s1 * *l).collect();
        assert!(matches!(extract_symbol(&ls, &grow, 2), Err(Error::FitRejected(_))));
        assert!(extract_symbol(&ls[..2], &v[..2], 2).is_err());
    }

    #[test]
    fn local_bound_is_uniform_in_lambda() {
        let f = half_space(Arc::new(layered()));
        let triple = CoefficientTriple::bare(f.g.clone());
        let c = cutoff(vec![-1.0, 0.2]);
        let b = synthesize_local_response(&f, &triple, &probe(tol::LAMBDA_LADDER.to_vec()), &c).unwrap();
        let s0 = extract_xin(&b, &*f.boundary)[4].clone().unwrap().unwrap().s0().norm();
        let ratios: Vec<f64> = (0..b.lambdas.len())
            .map(|j| s0 / (b.samples[j].iter().map(|v| v.norm()).fold(0.0, f64::max) / b.lambdas[j]))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, c), r| (a.min(*r), c.max(*r)));
        assert!(hi / lo < 1.2 && hi <= 1.1);
    }

    #[test]
    fn semiglobal_profile_and_phase() {
        let f = slab(Arc::new(Minkowski { dim: 3 }));
        let triple = CoefficientTriple::bare(f.g.clone());
        let c = cutoff(vec![-1.0, 0.3]);
        let pr = SymbolProbe { lambdas: vec![8.0, 16.0, 32.0], grid: BoundaryGrid::centered(0, &[0.0, 0.0], 0.1, 9) };
        let opts = RayOptions::for_diameter(2.0);
        let sg = semiglobal_grid(&f, &triple, &pr.grid, &c, &opts);
        let b = bundle_from_rows(&sg, &c, &pr.lambdas);
        for (k, r) in sg.rows.iter().enumerate() {
            let Some(r) = r else { continue };
            for (j, l) in b.lambdas.iter().enumerate() {
                let prof = b.samples[j][k].norm() / (2.0 * l * r.eta_n * r.a0().norm());
                assert!((prof - sg.chi[k]).abs() < 1e-6);
            }
        }
        let center = b.points.iter().position(|y| y.iter().all(|v| v.abs() < 1e-12)).unwrap();
        let lens = lens_relation(&f, &f.covector(0, &[0.0, 0.0], &c.xi0), &opts).unwrap();
        let eta = lens.exit.unwrap().xip;
        let grad = phase_gradient_fit(&*f.boundary, &b, 0, center, 0.06).unwrap();
        for a in 0..2 {
            assert!((grad[a] - 8.0 * eta[a]).abs() < 1e-6);
        }
        let past = synthesize_semiglobal_response_past(&f, &triple, &pr, &c, &opts).unwrap();
        let gp = phase_gradient_fit(&*f.boundary, &past, 0, center, 0.06).unwrap();
        for a in 0..2 {
            assert!((gp[a] + 8.0 * eta[a]).abs() < 1e-6);
        }
        assert_eq!(past.sample_points, b.sample_points);
    }

    #[test]
    fn semiglobal_phase_on_layered_slab() {
        let f = slab(Arc::new(layered()));
        let mut triple = CoefficientTriple::bare(f.g.clone());
        triple.q = constant_scalar(Complex64::new(0.2, 0.1));
        let c = cutoff(vec![-1.0, 0.2]);
        let pr = SymbolProbe { lambdas: vec![8.0, 16.0, 32.0], grid: BoundaryGrid::centered(0, &[0.0, 0.0], 0.06, 7) };
        let opts = RayOptions::for_diameter(2.0);
        let b = synthesize_semiglobal_response(&f, &triple, &pr, &c, &opts).unwrap();
        assert!(b.skipped.is_empty());
        let center = b.points.iter().position(|y| y.iter().all(|v| v.abs() < 1e-12)).unwrap();
        let lens = lens_relation(&f, &f.covector(0, &[0.0, 0.0], &c.xi0), &opts).unwrap();
        let eta = lens.exit.unwrap().xip;
        let grad = phase_gradient_fit(&*f.boundary, &b, 0, center, 0.2).unwrap();
        for a in 0..2 {
            assert!((grad[a] / 8.0 - eta[a]).abs() < 1e-6, "{} vs {}", grad[a] / 8.0, eta[a]);
        }
    }

    #[test]
    fn disk_rows_are_excluded_at_caustics() {
        let chart = Chart::new(vec![(-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0)], Arc::new(Cylinder { radius: 1.0 })).unwrap();
        let f = Frame::new(Arc::new(Minkowski { dim: 3 }), &chart);
        let triple = CoefficientTriple::bare(f.g.clone());
        let c = cutoff(vec![-1.0, 0.0]);
        let pr = SymbolProbe { lambdas: vec![8.0, 16.0, 32.0], grid: BoundaryGrid::centered(0, &[0.0, 0.0], 0.02, 3) };
        let b = synthesize_semiglobal_response(&f, &triple, &pr, &c, &RayOptions::for_diameter(2.0)).unwrap();
        assert_eq!(b.skipped.len(), 9);
        assert!(b.sample_points.iter().all(|p| p.is_none()));
    }
}
