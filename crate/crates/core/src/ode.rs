//! Adaptive Dormand-Prince 5(4) integrator with a post-step hook and the
//! method's 4th-order continuous extension as dense output.

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Clone, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub hmax: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: crate::tol::STEP_TOL,
            atol: crate::tol::STEP_TOL,
            h0: 1e-2,
            hmax: f64::INFINITY,
            min_step: crate::tol::MIN_STEP,
            max_steps: 200_000,
        }
    }
}

/// What the post-step hook asks the integrator to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Accepted samples `(t, y, y')`. `cont[k]` holds the continuous extension
/// on `[t[k], t[k+1]]`; when absent, cubic Hermite interpolation is used.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub cont: Vec<[Vec<f64>; 5]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index `k` with `t[k] <= s <= t[k+1]` (clamped to the ends).
    pub fn segment(&self, s: f64) -> usize {
        let n = self.t.len();
        if n < 2 {
            return 0;
        }
        let forward = self.t[n - 1] >= self.t[0];
        let k = if forward {
            self.t.partition_point(|v| *v <= s)
        } else {
            self.t.partition_point(|v| *v >= s)
        };
        k.saturating_sub(1).min(n - 2)
    }

    fn has_cont(&self) -> bool {
        self.cont.len() + 1 == self.t.len()
    }

    /// Dense output of component range `[lo, hi)` at `s`.
    pub fn dense_range(&self, s: f64, lo: usize, hi: usize) -> Vec<f64> {
        let k = self.segment(s);
        if self.t.len() < 2 {
            return self.y[0][lo..hi].to_vec();
        }
        if self.has_cont() {
            let r = &self.cont[k];
            let th = (s - self.t[k]) / (self.t[k + 1] - self.t[k]);
            let th1 = 1.0 - th;
            return (lo..hi).map(|i| r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))).collect();
        }
        hermite(self.t[k], self.t[k + 1], &self.y[k][lo..hi], &self.y[k + 1][lo..hi], &self.f[k][lo..hi], &self.f[k + 1][lo..hi], s)
    }

    pub fn dense(&self, s: f64) -> Vec<f64> {
        let n = self.y[0].len();
        self.dense_range(s, 0, n)
    }

    /// Derivative of the dense output.
    pub fn dense_derivative(&self, s: f64) -> Vec<f64> {
        let k = self.segment(s);
        if self.t.len() < 2 {
            return self.f[0].clone();
        }
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let h = t1 - t0;
        let u = (s - t0) / h;
        if self.has_cont() {
            let r = &self.cont[k];
            let u1 = 1.0 - u;
            let (c2, c3, c4) = (1.0 - 2.0 * u, 2.0 * u - 3.0 * u * u, 2.0 * u * u1 * u1 - 2.0 * u * u * u1);
            return (0..r[0].len()).map(|i| (r[1][i] + c2 * r[2][i] + c3 * r[3][i] + c4 * r[4][i]) / h).collect();
        }
        let (y0, y1, f0, f1) = (&self.y[k], &self.y[k + 1], &self.f[k], &self.f[k + 1]);
        (0..y0.len())
            .map(|i| {
                let dh00 = (6.0 * u * u - 6.0 * u) / h;
                let dh10 = 3.0 * u * u - 4.0 * u + 1.0;
                let dh01 = (-6.0 * u * u + 6.0 * u) / h;
                let dh11 = 3.0 * u * u - 2.0 * u;
                dh00 * y0[i] + dh10 * f0[i] + dh01 * y1[i] + dh11 * f1[i]
            })
            .collect()
    }
}

pub fn hermite(t0: f64, t1: f64, y0: &[f64], y1: &[f64], f0: &[f64], f1: &[f64], s: f64) -> Vec<f64> {
    let h = t1 - t0;
    let u = (s - t0) / h;
    let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
    let h10 = u * (1.0 - u) * (1.0 - u);
    let h01 = u * u * (3.0 - 2.0 * u);
    let h11 = u * u * (u - 1.0);
    (0..y0.len()).map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]).collect()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates from `t0` towards `t_end` (either direction). After every
/// accepted step the hook may modify the state in place (projection) and may
/// stop the integration; the hook sees the step's start and end state.
pub fn integrate<S, H>(sys: &S, t0: f64, y0: &[f64], t_end: f64, opts: &OdeOptions, mut hook: H) -> Result<Trajectory>
where
    S: OdeSystem + ?Sized,
    H: FnMut(f64, &[f64], f64, &mut Vec<f64>) -> Control,
{
    let n = sys.dim();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f = vec![0.0; n];
    sys.rhs(t, &y, &mut f);
    let mut traj = Trajectory { t: vec![t], y: vec![y.clone()], f: vec![f.clone()], cont: Vec::new() };
    let mut h = opts.h0.abs().min(opts.hmax).min((t_end - t0).abs());
    if h == 0.0 {
        return Ok(traj);
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut steps = 0usize;
    while (t_end - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepCollapse(h));
        }
        if h < opts.min_step {
            return Err(Error::StepCollapse(h));
        }
        let mut last = false;
        if (t + dir * h - t_end) * dir >= 0.0 {
            h = (t_end - t).abs();
            last = true;
        }
        let hs = dir * h;
        k[0].copy_from_slice(&f);
        let stage = |coef: &[(usize, f64)], k: &Vec<Vec<f64>>, tmp: &mut Vec<f64>| {
            for i in 0..n {
                let mut s = y[i];
                for &(j, c) in coef {
                    s += hs * c * k[j][i];
                }
                tmp[i] = s;
            }
        };
        stage(&[(0, A21)], &k, &mut tmp);
        sys.rhs(t + C2 * hs, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &mut tmp);
        sys.rhs(t + C3 * hs, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &mut tmp);
        sys.rhs(t + C4 * hs, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &mut tmp);
        sys.rhs(t + C5 * hs, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &mut tmp);
        sys.rhs(t + hs, &tmp, &mut k[5]);
        stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &k, &mut y5);
        sys.rhs(t + hs, &y5, &mut k[6]);
        let mut err = 0.0;
        for i in 0..n {
            let e = hs * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            continue;
        }
        if err <= 1.0 {
            let t_new = if last { t_end } else { t + hs };
            let mut y_new = y5.clone();
            let ctl = hook(t, &y, t_new, &mut y_new);
            let projected = y_new != y5;
            let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = hs * k[0][i] - ydiff;
                r[0][i] = y[i];
                r[1][i] = ydiff;
                r[2][i] = bspl;
                r[3][i] = ydiff - hs * k[6][i] - bspl;
                r[4][i] = hs * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            }
            traj.cont.push(r);
            t = t_new;
            y = y_new;
            if projected {
                sys.rhs(t, &y, &mut f);
            } else {
                f.copy_from_slice(&k[6]);
            }
            traj.t.push(t);
            traj.y.push(y.clone());
            traj.f.push(f.clone());
            if ctl == Control::Stop {
                break;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.hmax);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Osc;
    impl OdeSystem for Osc {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn harmonic_oscillator() {
        let tr = integrate(&Osc, 0.0, &[0.0, 1.0], 10.0, &OdeOptions::default(), |_, _, _, _| Control::Continue).unwrap();
        let y = tr.y.last().unwrap();
        assert!((y[0] - 10f64.sin()).abs() < 1e-8);
        assert!((y[1] - 10f64.cos()).abs() < 1e-8);
        assert_eq!(*tr.t.last().unwrap(), 10.0);
        // dense output between samples
        let s = 0.5 * (tr.t[3] + tr.t[4]);
        assert!((tr.dense(s)[0] - s.sin()).abs() < 1e-7);
        assert!((tr.dense_derivative(s)[0] - s.cos()).abs() < 1e-6);
    }

    #[test]
    fn backward_and_stop() {
        let tr = integrate(&Osc, 0.0, &[0.0, 1.0], -3.0, &OdeOptions::default(), |_, _, t, _| {
            if t < -1.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        let t = *tr.t.last().unwrap();
        assert!(t < -1.0 && t > -3.0);
        assert!((tr.y.last().unwrap()[0] - t.sin()).abs() < 1e-8);
        let s = -0.77;
        assert!((tr.dense(s)[0] - s.sin()).abs() < 1e-7);
    }

    #[test]
    fn fifth_order_convergence() {
        let run = |tol: f64| {
            let o = OdeOptions { rtol: tol, atol: tol, ..Default::default() };
            let tr = integrate(&Osc, 0.0, &[0.0, 1.0], 5.0, &o, |_, _, _, _| Control::Continue).unwrap();
            ((tr.y.last().unwrap()[0] - 5f64.sin()).abs(), tr.len())
        };
        let (e1, _) = run(1e-6);
        let (e2, _) = run(1e-10);
        assert!(e2 < e1 && e2 < 1e-8);
    }
}
