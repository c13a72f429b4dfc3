//! Inverse pipelines: boundary jets from local DN responses, the quadratic
//! plus linear functional solver, interior invariants `L1 A` and `L0 q`
//! from semiglobal symbols, and the lens relation from probe symbols.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_frame::Frame;
use crate::dn_synth::{extract_symbol, slope, synthesize_local_response, BoundaryGrid, CutoffSpec, SymbolProbe};
use crate::error::{Error, Result};
use crate::fields::{constant_form, constant_scalar};
use crate::gauge::det_jets;
use crate::geo_optics::{SymbolRow, SymbolTable};
use crate::geometry::{Chart, CoefficientTriple, HalfSpace, Layered};
use crate::tol;

/// Which blocks of `L(xi) = h^{jk} xi_j xi_k + A^j xi_j` are unknown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unknowns {
    Full,
    Quadratic,
    Linear,
}

impl Unknowns {
    pub fn count(self, dim: usize) -> usize {
        match self {
            Unknowns::Full => dim * (dim + 1) / 2 + dim,
            Unknowns::Quadratic => dim * (dim + 1) / 2,
            Unknowns::Linear => dim,
        }
    }

    fn row(self, xi: &[f64]) -> Vec<f64> {
        let mut r = Vec::new();
        if self != Unknowns::Linear {
            for j in 0..xi.len() {
                for k in j..xi.len() {
                    r.push(if j == k { xi[j] * xi[j] } else { 2.0 * xi[j] * xi[k] });
                }
            }
        }
        if self != Unknowns::Quadratic {
            r.extend_from_slice(xi);
        }
        r
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalFit {
    pub h: DMatrix<Complex64>,
    pub a: DVector<Complex64>,
    /// RMS residual of the least-squares system.
    pub residual: f64,
    pub cond: f64,
}

/// Least-squares solve of `h^{jk} xi_j xi_k + A^j xi_j = L(xi)` over the
/// samples. Rejects systems with condition number above `COND_MAX`.
pub fn linear_functional_solver(samples: &[(Vec<f64>, Complex64)], dim: usize, mode: Unknowns) -> Result<FunctionalFit> {
    let n = mode.count(dim);
    if samples.len() < n {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    if samples.iter().any(|(xi, v)| xi.len() != dim || !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Invalid("solver samples must be finite covectors of the stated dimension".into()));
    }
    let a = DMatrix::from_fn(samples.len(), n, |i, j| mode.row(&samples[i].0)[j]);
    // column scaling keeps the condition number meaningful across blocks
    let scale: Vec<f64> = (0..n).map(|j| a.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let mut a_s = a.clone();
    for (j, s) in scale.iter().enumerate() {
        a_s.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a_s.svd(true, true);
    let cond = svd.singular_values.max() / svd.singular_values.min();
    if !(cond <= tol::COND_MAX) {
        return Err(Error::IllConditioned(cond));
    }
    let re = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1.re));
    let im = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1.im));
    let xr = svd.solve(&re, 0.0).map_err(|e| Error::Invalid(e.into()))?;
    let xi = svd.solve(&im, 0.0).map_err(|e| Error::Invalid(e.into()))?;
    let x: Vec<Complex64> = (0..n).map(|j| Complex64::new(xr[j], xi[j]) / scale[j]).collect();
    let mut res = 0.0;
    for (i, (_, v)) in samples.iter().enumerate() {
        let f: Complex64 = (0..n).map(|j| x[j] * a[(i, j)]).sum();
        res += (f - v).norm_sqr();
    }
    let mut h = DMatrix::zeros(dim, dim);
    let mut k = 0;
    if mode != Unknowns::Linear {
        for j in 0..dim {
            for l in j..dim {
                h[(j, l)] = x[k];
                h[(l, j)] = x[k];
                k += 1;
            }
        }
    }
    let av = if mode != Unknowns::Quadratic { DVector::from_column_slice(&x[k..]) } else { DVector::zeros(dim) };
    Ok(FunctionalFit { h, a: av, residual: (res / samples.len() as f64).sqrt(), cond })
}

/// Even and odd parts of samples over a covector set closed under negation.
pub fn split_even_odd(covectors: &[Vec<f64>], values: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let partner: Vec<usize> = covectors
        .iter()
        .map(|c| {
            covectors
                .iter()
                .position(|d| c.iter().zip(d).all(|(a, b)| (a + b).abs() <= 1e-12 * (1.0 + a.abs())))
                .ok_or_else(|| Error::Invalid(format!("covector {c:?} has no negated partner")))
        })
        .collect::<Result<_>>()?;
    let even = (0..values.len()).map(|k| 0.5 * (values[k] + values[partner[k]])).collect();
    let odd = (0..values.len()).map(|k| 0.5 * (values[k] - values[partner[k]])).collect();
    Ok((even, odd))
}

/// Normalized local responses `e^{-i lambda phi} R` at one boundary point,
/// indexed `[covector][lambda]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalResponses {
    pub patch: usize,
    pub xp: Vec<f64>,
    pub covectors: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub values: Vec<Vec<Complex64>>,
    pub skipped: Vec<(usize, String)>,
}

/// Covectors `(-1, w)` and their negations on a `w` fan, for a 2+1 boundary.
pub fn symmetric_fan(ws: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = ws.iter().map(|w| vec![-1.0, *w]).collect();
    out.extend(ws.iter().map(|w| vec![1.0, -*w]));
    out
}

pub fn local_responses(
    frame: &Frame,
    triple: &CoefficientTriple,
    patch: usize,
    xp: &[f64],
    covectors: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<LocalResponses> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|a, b| lambdas[*a].total_cmp(&lambdas[*b]));
    let sorted: Vec<f64> = order.iter().map(|k| lambdas[*k]).collect();
    let probe = SymbolProbe { lambdas: sorted, grid: BoundaryGrid { patch, axes: xp.iter().map(|c| (*c, *c, 1)).collect() } };
    let res: Vec<Result<Vec<Complex64>>> = covectors
        .par_iter()
        .map(|xi| {
            let cutoff = CutoffSpec { patch, center: xp.to_vec(), xi0: xi.clone(), plateau: 0.05, support: 0.1, cone: 0.3, order: 3 };
            let b = synthesize_local_response(frame, triple, &probe, &cutoff)?;
            if let Some((_, why)) = b.skipped.first() {
                return Err(Error::Invalid(why.clone()));
            }
            let mut v = vec![Complex64::new(0.0, 0.0); lambdas.len()];
            for (j, k) in order.iter().enumerate() {
                v[*k] = b.normalized(j, 0);
            }
            Ok(v)
        })
        .collect();
    let mut values = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (k, r) in res.into_iter().enumerate() {
        match r {
            Ok(v) => {
                values.push(v);
                kept.push(covectors[k].clone());
            }
            Err(e) => skipped.push((k, e.to_string())),
        }
    }
    Ok(LocalResponses { patch, xp: xp.to_vec(), covectors: kept, lambdas: lambdas.to_vec(), values, skipped })
}

/// Symbol estimates `xi_n, b0, b1` per covector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolEstimates {
    pub covectors: Vec<Vec<f64>>,
    pub xi_n: Vec<f64>,
    pub b0: Vec<Complex64>,
    pub b1: Vec<Complex64>,
    pub residual: f64,
    /// Decay rate of the `xi_n` correction, per covector.
    pub rates: Vec<f64>,
}

/// Three-term fit of `-v / (i lambda) = xi_n + b0 / (i lambda) + b1 / (i lambda^2)`.
pub fn ladder_symbols(r: &LocalResponses) -> Result<SymbolEstimates> {
    let i = Complex64::i();
    let mut out = SymbolEstimates { covectors: r.covectors.clone(), xi_n: vec![], b0: vec![], b1: vec![], residual: 0.0, rates: vec![] };
    for v in &r.values {
        let w: Vec<Complex64> = v.iter().zip(&r.lambdas).map(|(v, l)| -v / (i * l)).collect();
        let fit = extract_symbol(&r.lambdas, &w, 3)?;
        out.xi_n.push(fit.coeffs[0].re);
        out.b0.push(i * fit.coeffs[1]);
        out.b1.push(i * fit.coeffs[2]);
        out.residual = out.residual.max(fit.residual);
        out.rates.push(fit.rate);
    }
    Ok(out)
}

/// `xi_n` per covector from the ladder.
pub fn recover_xin(r: &LocalResponses) -> Result<Vec<f64>> {
    Ok(ladder_symbols(r)?.xi_n)
}

/// Frequencies `(delta^{-1}, delta^{-1/2}, delta^{-1/4})`.
pub fn lambda_choices(delta: f64) -> [f64; 3] {
    [1.0 / delta, delta.powf(-0.5), delta.powf(-0.25)]
}

/// Symbols from one response per stage at the frequencies `lambda_choices(delta)`.
pub fn single_lambda_symbols(r: &LocalResponses) -> Result<SymbolEstimates> {
    if r.lambdas.len() != 3 {
        return Err(Error::Invalid("single-frequency estimates take exactly three frequencies".into()));
    }
    let i = Complex64::i();
    let [l1, l2, l3] = [r.lambdas[0], r.lambdas[1], r.lambdas[2]];
    let mut out = SymbolEstimates { covectors: r.covectors.clone(), xi_n: vec![], b0: vec![], b1: vec![], residual: 0.0, rates: vec![] };
    for v in &r.values {
        let xn = -v[0] / (i * l1);
        let b0 = -v[1] - i * l2 * xn;
        let b1 = l3 * (-v[2] - i * l3 * xn - b0);
        out.xi_n.push(xn.re);
        out.b0.push(b0);
        out.b1.push(b1);
    }
    Ok(out)
}

/// `D, D', D''` for `D = det g` along the boundary normal: the (M2) data.
pub type DetJets = [f64; 3];

/// Tangential inverse metric from `-xi_n^2 = g^{ab} xi_a xi_b`.
pub fn recover_boundary_metric(covectors: &[Vec<f64>], xi_n: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let s: Vec<(Vec<f64>, Complex64)> = covectors.iter().zip(xi_n).map(|(c, x)| (c.clone(), Complex64::new(-x * x, 0.0))).collect();
    let fit = linear_functional_solver(&s, covectors[0].len(), Unknowns::Quadratic)?;
    Ok((fit.h.map(|z| z.re), fit.residual))
}

fn quad(m: &DMatrix<f64>, xi: &[f64]) -> f64 {
    let v = DVector::from_column_slice(xi);
    (v.transpose() * m * &v)[(0, 0)]
}

fn m_and_m1(det: &DetJets) -> (f64, f64) {
    let [d, d1, d2] = *det;
    (d1 / (2.0 * d), d2 / (2.0 * d) - d1 * d1 / (2.0 * d * d))
}

/// Normal derivative of the tangential inverse metric from the even part of
/// `b0`: `4 xi_n^2 (Even b0 + m / 2) = d_n g^{ab} xi_a xi_b`, `m = D' / (2 D)`.
pub fn recover_normal_g(covectors: &[Vec<f64>], xi_n: &[f64], even_b0: &[Complex64], det: &DetJets) -> Result<(DMatrix<f64>, f64)> {
    let n = covectors[0].len();
    if n < 2 {
        return Err(Error::Unsupported(
            "with one boundary dimension the even order-zero symbol vanishes identically; the normal derivative of g is not determined".into(),
        ));
    }
    let (m, _) = m_and_m1(det);
    let s: Vec<(Vec<f64>, Complex64)> = covectors
        .iter()
        .zip(xi_n)
        .zip(even_b0)
        .map(|((c, x), e)| (c.clone(), 4.0 * x * x * (e + 0.5 * m)))
        .collect();
    let fit = linear_functional_solver(&s, n, Unknowns::Quadratic)?;
    Ok((fit.h.map(|z| z.re), fit.residual))
}

/// Tangential `A` from `Odd b0 = i g^{ab} A_a xi_b / xi_n`.
pub fn recover_a_tangential(covectors: &[Vec<f64>], xi_n: &[f64], odd_b0: &[Complex64], g0: &DMatrix<f64>) -> Result<(DVector<Complex64>, f64)> {
    let n = covectors[0].len();
    let s: Vec<(Vec<f64>, Complex64)> = covectors
        .iter()
        .zip(xi_n)
        .zip(odd_b0)
        .map(|((c, x), o)| (c.clone(), -Complex64::i() * x * o))
        .collect();
    let fit = linear_functional_solver(&s, n, Unknowns::Linear)?;
    let gl = g0.clone().try_inverse().ok_or(Error::DegenerateMetric(0.0))?.map(|v| Complex64::new(v, 0.0));
    Ok((gl * fit.a, fit.residual))
}

/// `q` and the second normal derivative of the tangential inverse metric
/// from the even part of `-2 i xi_n b1`.
pub fn recover_q_and_d2g(
    covectors: &[Vec<f64>],
    xi_n: &[f64],
    b1: &[Complex64],
    g0: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    a: &DVector<Complex64>,
    det: &DetJets,
) -> Result<(Complex64, DMatrix<f64>, f64)> {
    let n = covectors[0].len();
    let i = Complex64::i();
    let pa0: Vec<Complex64> = xi_n.iter().zip(b1).map(|(x, b)| -2.0 * i * x * b).collect();
    let (even, _) = split_even_odd(covectors, &pa0)?;
    let (m, m1) = m_and_m1(det);
    let g0c = g0.map(|v| Complex64::new(v, 0.0));
    let gaa = (a.transpose() * &g0c * a)[(0, 0)];
    let s: Vec<(Vec<f64>, Complex64)> = covectors
        .iter()
        .zip(xi_n)
        .zip(&even)
        .map(|((c, x), e)| {
            let xn1 = -quad(g1, c) / (2.0 * x);
            let r = xn1 / x;
            let ee = -0.5 * (r + m);
            let cv = DVector::from_iterator(n, c.iter().map(|v| Complex64::new(*v, 0.0)));
            let o = (a.transpose() * &g0c * cv)[(0, 0)] / x;
            let known = r * r - 0.5 * m1 + ee * ee - o * o + m * ee - gaa;
            (c.clone(), 4.0 * x * x * (e - known))
        })
        .collect();
    let fit = linear_functional_solver(&s, n, Unknowns::Quadratic)?;
    let gi = g0.clone().try_inverse().ok_or(Error::DegenerateMetric(0.0))?;
    let p = &gi * g1;
    let tau = -2.0 * m1 + (&p * &p).trace();
    let tr_s: Complex64 = (gi.map(|v| Complex64::new(v, 0.0)) * &fit.h).trace();
    let q = (tau - tr_s) / (4.0 * n as f64);
    let g2 = (&fit.h + g0c * (4.0 * q)).map(|z| z.re);
    Ok((q, g2, fit.residual))
}

/// Boundary jets in the order the pipeline recovers them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryJets {
    pub g0: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    pub a: DVector<Complex64>,
    pub q: Complex64,
    pub g2: DMatrix<f64>,
    /// Solver residuals of the four stages.
    pub residuals: [f64; 4],
}

/// `xi_n -> g|bdry -> {d_n g, A|bdry} -> {q, d_n^2 g}`.
pub fn boundary_pipeline(est: &SymbolEstimates, det: &DetJets) -> Result<BoundaryJets> {
    let (g0, r0) = recover_boundary_metric(&est.covectors, &est.xi_n)?;
    let (even, odd) = split_even_odd(&est.covectors, &est.b0)?;
    let (g1, r1) = recover_normal_g(&est.covectors, &est.xi_n, &even, det)?;
    let (a, r2) = recover_a_tangential(&est.covectors, &est.xi_n, &odd, &g0)?;
    let (q, g2, r3) = recover_q_and_d2g(&est.covectors, &est.xi_n, &est.b1, &g0, &g1, &a, det)?;
    Ok(BoundaryJets { g0, g1, a, q, g2, residuals: [r0, r1, r2, r3] })
}

/// Boundary-normalized triple with `x'`-independent jets: layered metric
/// on the half space `x^n >= 0`, constant tangential `A`, constant `q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayeredModel {
    pub g0: DMatrix<f64>,
    pub g1: DMatrix<f64>,
    pub g2: DMatrix<f64>,
    pub a: Vec<Complex64>,
    pub q: Complex64,
}

impl LayeredModel {
    pub fn dim(&self) -> usize {
        self.g0.nrows() + 1
    }

    pub fn metric(&self) -> Layered {
        Layered::new(self.g0.clone(), self.g1.clone(), self.g2.clone())
    }

    pub fn frame(&self) -> Frame {
        let d = self.dim();
        let mut bounds = vec![(-2.0, 2.0); d];
        bounds[d - 1] = (0.0, 2.0);
        let chart = Chart::new(bounds, Arc::new(HalfSpace { dim: d })).expect("valid half-space chart");
        Frame::new(Arc::new(self.metric()), &chart)
    }

    pub fn triple(&self) -> CoefficientTriple {
        let mut a = self.a.clone();
        a.push(Complex64::new(0.0, 0.0));
        CoefficientTriple::new(Arc::new(self.metric()), constant_form(a), constant_scalar(self.q))
    }

    pub fn det_jets(&self) -> DetJets {
        det_jets(&self.metric(), &vec![0.0; self.dim()], self.dim() - 1)
    }

    /// `self + eps * dir`, componentwise.
    pub fn perturbed(&self, dir: &LayeredModel, eps: f64) -> LayeredModel {
        LayeredModel {
            g0: &self.g0 + &dir.g0 * eps,
            g1: &self.g1 + &dir.g1 * eps,
            g2: &self.g2 + &dir.g2 * eps,
            a: self.a.iter().zip(&dir.a).map(|(a, b)| a + b * eps).collect(),
            q: self.q + dir.q * eps,
        }
    }

    pub fn responses(&self, covectors: &[Vec<f64>], lambdas: &[f64]) -> Result<LocalResponses> {
        let n = self.dim() - 1;
        local_responses(&self.frame(), &self.triple(), 0, &vec![0.0; n], covectors, lambdas)
    }
}

/// Per-stage errors of recovered jets against a model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageErrors {
    pub g0: f64,
    pub g1: f64,
    pub a: f64,
    pub q: f64,
    pub g2: f64,
}

impl StageErrors {
    pub fn against(j: &BoundaryJets, m: &LayeredModel) -> Self {
        StageErrors {
            g0: (&j.g0 - &m.g0).amax(),
            g1: (&j.g1 - &m.g1).amax(),
            a: j.a.iter().zip(&m.a).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max),
            q: (j.q - m.q).norm(),
            g2: (&j.g2 - &m.g2).amax(),
        }
    }

    pub fn between(x: &BoundaryJets, y: &BoundaryJets) -> Self {
        StageErrors {
            g0: (&x.g0 - &y.g0).amax(),
            g1: (&x.g1 - &y.g1).amax(),
            a: x.a.iter().zip(y.a.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max),
            q: (x.q - y.q).norm(),
            g2: (&x.g2 - &y.g2).amax(),
        }
    }

    pub fn as_vec(&self) -> [f64; 5] {
        [self.g0, self.g1, self.a, self.q, self.g2]
    }
}

/// `max |v - v~| / lambda` over covectors and frequencies.
pub fn response_distance(a: &LocalResponses, b: &LocalResponses) -> f64 {
    let mut d: f64 = 0.0;
    for (va, vb) in a.values.iter().zip(&b.values) {
        for ((x, y), l) in va.iter().zip(vb).zip(&a.lambdas) {
            d = d.max((x - y).norm() / l);
        }
    }
    d
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub delta: f64,
    pub lambdas: [f64; 3],
    pub errors: StageErrors,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsSweep {
    pub points: Vec<SweepPoint>,
    /// Fitted exponents of `g0, g1, A, q, g2` errors against `eps`.
    pub exponents: [f64; 5],
    pub predicted: [f64; 5],
}

/// Recovery of the perturbed model's jets from the base model's responses
/// at `lambda_choices(delta)`, where `delta` is measured on the ladder.
pub fn boundary_eps_sweep(base: &LayeredModel, dir: &LayeredModel, eps: &[f64], covectors: &[Vec<f64>]) -> Result<EpsSweep> {
    let ladder = tol::LAMBDA_LADDER.to_vec();
    let r0 = base.responses(covectors, &ladder)?;
    let det = base.det_jets();
    let mut points = Vec::new();
    for &e in eps {
        let other = base.perturbed(dir, e);
        let r1 = other.responses(covectors, &ladder)?;
        if r0.covectors != r1.covectors {
            return Err(Error::Invalid("perturbed model lost covectors".into()));
        }
        let delta = response_distance(&r0, &r1);
        let lambdas = lambda_choices(delta);
        let single = base.responses(&r0.covectors, &lambdas)?;
        let est = single_lambda_symbols(&single)?;
        let jets = boundary_pipeline(&est, &det)?;
        points.push(SweepPoint { eps: e, delta, lambdas, errors: StageErrors::against(&jets, &other) });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let mut exponents = [0.0; 5];
    for (k, ex) in exponents.iter_mut().enumerate() {
        let ys: Vec<f64> = points.iter().map(|p| p.errors.as_vec()[k].max(1e-300).ln()).collect();
        *ex = slope(&xs, &ys);
    }
    Ok(EpsSweep { points, exponents, predicted: [1.0, 0.5, 0.5, 0.25, 0.25] })
}

/// One `L1(A - A~)` value per ray.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L1aRow {
    pub value: Complex64,
    pub branch: i64,
    /// `|log |a0~ / a0||`.
    pub magnitude_defect: f64,
}

fn same_ray(a: &SymbolRow, b: &SymbolRow) -> bool {
    a.exit.patch == b.exit.patch
        && a.exit.xp.iter().zip(&b.exit.xp).all(|(x, y)| (x - y).abs() < 1e-8)
        && (a.s_exit - b.s_exit).abs() < 1e-8
        && a.maslov == b.maslov
}

fn paired<'a>(a: &'a SymbolTable, b: &'a SymbolTable) -> Result<Vec<(&'a SymbolRow, &'a SymbolRow)>> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::Invalid("symbol tables differ in length".into()));
    }
    a.rows
        .iter()
        .zip(&b.rows)
        .enumerate()
        .map(|(k, (x, y))| match (x, y) {
            (Ok(x), Ok(y)) if same_ray(x, y) => Ok((x, y)),
            (Ok(_), Ok(_)) => Err(Error::Invalid(format!("row {k}: rays differ, the metrics are not the same"))),
            (Err(e), _) | (_, Err(e)) => Err(Error::Invalid(format!("row {k}: {e}"))),
        })
        .collect()
}

/// `L1(A - A~)` per ray from the principal ratio `a0~ / a0 = exp(i L1(A~ - A))`.
/// The `2 pi` branch is 0 under `a_priori_close`, otherwise it follows the
/// fan continuously from 0 at the first row.
pub fn recover_l1a(a: &SymbolTable, b: &SymbolTable, a_priori_close: bool) -> Result<Vec<L1aRow>> {
    let pairs = paired(a, b)?;
    let mut out: Vec<L1aRow> = Vec::with_capacity(pairs.len());
    let mut prev: Option<f64> = None;
    for (x, y) in pairs {
        let r = y.exit_a0_factor / x.exit_a0_factor;
        let arg = r.arg();
        let branch = match (a_priori_close, prev) {
            (true, _) | (false, None) => 0,
            (false, Some(p)) => ((p - arg) / (2.0 * std::f64::consts::PI)).round() as i64,
        };
        let theta = arg + 2.0 * std::f64::consts::PI * branch as f64;
        prev = Some(theta);
        let lm = r.norm().ln();
        out.push(L1aRow { value: Complex64::new(-theta, lm), branch, magnitude_defect: lm.abs() });
    }
    Ok(out)
}

/// `L0(q~ - q)` per ray from `a1~ - a1 = (i / 2) a0 L0(q~ - q)`. Rows whose
/// principal ratio differs from 1 by more than `TRANS_TOL` are rejected
/// unless `a_priori_close` is set.
pub fn recover_l0q(a: &SymbolTable, b: &SymbolTable, a_priori_close: bool) -> Result<Vec<Complex64>> {
    pairs_l0q(&paired(a, b)?, a_priori_close)
}

fn pairs_l0q(pairs: &[(&SymbolRow, &SymbolRow)], a_priori_close: bool) -> Result<Vec<Complex64>> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, (x, y))| {
            let dev = (y.exit_a0_factor / x.exit_a0_factor - 1.0).norm();
            if dev > tol::TRANS_TOL && !a_priori_close {
                return Err(Error::Invalid(format!("row {k}: principal ratio deviates by {dev:.3e}; A differs")));
            }
            Ok(-2.0 * Complex64::i() * (y.a1_q_part - x.a1_q_part) / x.a0())
        })
        .collect()
}

/// Single-frequency estimate `(2 lambda / i)(R~ - R) / R` of `L0(q~ - q)`.
pub fn l0q_at_lambda(x: &SymbolRow, y: &SymbolRow, lambda: f64) -> Complex64 {
    let r = x.response(lambda);
    2.0 * lambda / Complex64::i() * (y.response(lambda) - r) / r
}

/// The `2n` probes `1, y^j, d/dy^j` besides the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Probe {
    One,
    Mult(usize),
    Diff(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeOperatorSet {
    pub probes: Vec<Probe>,
}

impl ProbeOperatorSet {
    pub fn new(n: usize) -> Self {
        let mut probes = vec![Probe::One];
        probes.extend((0..n).map(Probe::Mult));
        probes.extend((0..n).map(Probe::Diff));
        ProbeOperatorSet { probes }
    }

    /// Principal symbols of `Lambda* P Lambda` on a row: `lambda0 p0(y, eta')`.
    pub fn symbols(&self, row: &SymbolRow) -> Vec<Complex64> {
        let l0 = Complex64::new(row.lambda0, 0.0);
        self.probes
            .iter()
            .map(|p| match p {
                Probe::One => l0,
                Probe::Mult(j) => l0 * row.exit.xp[*j],
                Probe::Diff(j) => l0 * Complex64::i() * row.exit.xip[*j],
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LensEstimate {
    pub lambda0: f64,
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_n: f64,
    /// `|1 + h(r, r)|` for `r = eta' / eta_n` and the exit boundary metric `h`.
    pub null_defect: f64,
}

/// Lens data from probe symbols; `xi_n` at the entries comes from the
/// boundary metric.
pub fn recover_lens(frame: &Frame, table: &SymbolTable) -> Vec<Result<LensEstimate>> {
    table
        .rows
        .iter()
        .map(|row| {
            let row = row.as_ref().map_err(|e| Error::Invalid(e.clone()))?;
            let n = row.entry.xp.len();
            let set = ProbeOperatorSet::new(n);
            let s = set.symbols(row);
            let l0 = s[0];
            assert!(l0.norm() > 0.0, "lambda0 vanishes on a timelike row");
            let y: Vec<f64> = (0..n).map(|j| (s[1 + j] / l0).re).collect();
            let xin = frame.xi_n(&row.entry)?;
            let eta_n = -l0.re / (4.0 * xin);
            let r: Vec<f64> = (0..n).map(|j| (s[1 + n + j] / (Complex64::i() * l0)).re / eta_n).collect();
            let exit = frame.covector(row.exit.patch, &y, &r);
            let null_defect = (1.0 - frame.radicand(&exit)?).abs();
            Ok(LensEstimate { lambda0: l0.re, y, eta: r.iter().map(|v| v * eta_n).collect(), eta_n, null_defect })
        })
        .collect()
}

/// Staged report with ground-truth errors.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub kind: String,
    pub delta: Option<f64>,
    pub lambdas: Vec<f64>,
    pub stages: Vec<StageEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub recovered: Vec<f64>,
    pub truth: Vec<f64>,
    pub error: f64,
    pub residual: f64,
}

impl RecoveryReport {
    pub fn push(&mut self, stage: &str, recovered: Vec<f64>, truth: Vec<f64>, residual: f64) {
        let error = recovered.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.stages.push(StageEntry { stage: stage.into(), recovered, truth, error, residual });
    }

    pub fn max_error(&self) -> f64 {
        self.stages.iter().map(|s| s.error).fold(0.0, f64::max)
    }
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn flat_c(v: &[Complex64]) -> Vec<f64> {
    v.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Ladder recovery of a layered model with the report against its own jets.
pub fn boundary_report(model: &LayeredModel, covectors: &[Vec<f64>]) -> Result<(BoundaryJets, RecoveryReport)> {
    let r = model.responses(covectors, &tol::LAMBDA_LADDER)?;
    let est = ladder_symbols(&r)?;
    let jets = boundary_pipeline(&est, &model.det_jets())?;
    let mut rep = RecoveryReport { kind: "boundary".into(), delta: None, lambdas: r.lambdas.clone(), stages: vec![] };
    rep.push("g_boundary", flat(&jets.g0), flat(&model.g0), jets.residuals[0]);
    rep.push("dn_g", flat(&jets.g1), flat(&model.g1), jets.residuals[1]);
    rep.push("a_tangential", flat_c(jets.a.as_slice()), flat_c(&model.a), jets.residuals[2]);
    rep.push("q", flat_c(&[jets.q]), flat_c(&[model.q]), jets.residuals[3]);
    rep.push("dn2_g", flat(&jets.g2), flat(&model.g2), jets.residuals[3]);
    Ok((jets, rep))
}
