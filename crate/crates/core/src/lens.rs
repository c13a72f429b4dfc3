//! Lens relation `(x, xi') -> (y, eta')` and lens tables over covector fans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary_frame::{BoundaryCovector, Frame, Lift, Orientation, Side};
use crate::error::{Error, Result};
use crate::geometry::PointCovector;
use crate::null_flow::{detect_boundary_exit, integrate_ray, RayExit, RayOptions, RaySolution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensStatus {
    Exited,
    /// Exit point coincides with the entry point.
    FixedPoint,
    TangentialExit,
    NoExit,
    NotTimelike,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LensRecord {
    pub entry: BoundaryCovector,
    pub exit: Option<BoundaryCovector>,
    pub s_exit: f64,
    pub entry_xin: f64,
    /// `eta_n` at the exit.
    pub exit_xin: f64,
    pub status: LensStatus,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LensTable {
    pub metric: String,
    pub boundary: String,
    pub rows: Vec<LensRecord>,
}

/// A traced entry: the lift, the ray and its exit data.
pub struct Traced {
    pub lift: Lift,
    pub ray: RaySolution,
    pub exit: RayExit,
    pub exit_cov: BoundaryCovector,
    pub exit_xin: f64,
}

/// Interior lift of `b`, integrated forward to the first exit.
pub fn trace_interior(frame: &Frame, b: &BoundaryCovector, opts: &RayOptions) -> Result<Traced> {
    let lift = frame.lightlike_lift(b, Some(Side::Interior))?;
    let ray = integrate_ray(&*frame.g, &lift.x, &lift.p, opts, Some(&*frame.boundary), None)?;
    let exit = detect_boundary_exit(&ray, &*frame.boundary)?;
    let exit_cov = frame.tangential_project(&PointCovector { x: exit.x.clone(), xi: exit.p.clone() })?;
    let exit_xin = frame.xi_n(&exit_cov)?;
    Ok(Traced { lift, ray, exit, exit_cov, exit_xin })
}

/// Lens relation. Past-pointing entries use the exterior lift traversed
/// backward in the ray parameter, which equals the negated image of the
/// future-pointing entry `-xi'`.
pub fn lens_relation(frame: &Frame, entry: &BoundaryCovector, opts: &RayOptions) -> Result<LensRecord> {
    let (fp, sign) = match entry.orientation {
        Orientation::Future => (entry.clone(), 1.0),
        Orientation::Past => (entry.negated(), -1.0),
    };
    let t = trace_interior(frame, &fp, opts)?;
    let exit = if sign > 0.0 { t.exit_cov } else { t.exit_cov.negated() };
    let same_point = exit.patch == entry.patch
        && frame.boundary.coord_diff(&exit.xp, &entry.xp).amax() < 1e-9;
    Ok(LensRecord {
        entry: entry.clone(),
        exit: Some(exit),
        s_exit: sign * t.exit.s,
        entry_xin: t.lift.xi_n,
        exit_xin: t.exit_xin,
        status: if same_point { LensStatus::FixedPoint } else { LensStatus::Exited },
        detail: String::new(),
    })
}

fn failed(entry: &BoundaryCovector, e: &Error) -> LensRecord {
    let status = match e {
        Error::TangentialExit(_) | Error::StepCollapse(_) => LensStatus::TangentialExit,
        Error::NoExit(_) => LensStatus::NoExit,
        Error::NotTimelike(_) => LensStatus::NotTimelike,
        _ => LensStatus::Failed,
    };
    LensRecord {
        entry: entry.clone(),
        exit: None,
        s_exit: f64::NAN,
        entry_xin: f64::NAN,
        exit_xin: f64::NAN,
        status,
        detail: e.to_string(),
    }
}

/// Lens table in entry order; rows that fail carry their status.
pub fn lens_fan(frame: &Frame, entries: &[BoundaryCovector], opts: &RayOptions) -> LensTable {
    let rows = entries
        .par_iter()
        .map(|b| lens_relation(frame, b, opts).unwrap_or_else(|e| failed(b, &e)))
        .collect();
    LensTable { metric: frame.g.name(), boundary: frame.boundary.name(), rows }
}

impl LensTable {
    pub fn all_exited(&self) -> bool {
        self.rows.iter().all(|r| r.status == LensStatus::Exited)
    }

    /// Rows `patch, x', xi', exit patch, y, eta', s_exit, xi_n, eta_n, status`.
    pub fn csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let n = self.rows.first().map_or(0, |r| r.entry.xp.len());
        let mut head = vec!["patch".to_string()];
        head.extend((0..n).map(|a| format!("x{a}")));
        head.extend((0..n).map(|a| format!("xi{a}")));
        head.push("exit_patch".into());
        head.extend((0..n).map(|a| format!("y{a}")));
        head.extend((0..n).map(|a| format!("eta{a}")));
        head.extend(["s_exit", "xi_n", "eta_n", "status"].map(String::from));
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.entry.patch.to_string()];
                row.extend(r.entry.xp.iter().map(|v| fmt(*v)));
                row.extend(r.entry.xip.iter().map(|v| fmt(*v)));
                match &r.exit {
                    Some(e) => {
                        row.push(e.patch.to_string());
                        row.extend(e.xp.iter().map(|v| fmt(*v)));
                        row.extend(e.xip.iter().map(|v| fmt(*v)));
                    }
                    None => {
                        row.push(String::new());
                        row.extend((0..2 * n).map(|_| "nan".to_string()));
                    }
                }
                row.extend([r.s_exit, r.entry_xin, r.exit_xin].map(fmt));
                row.push(serde_json::to_value(&r.status).unwrap().as_str().unwrap().to_string());
                row
            })
            .collect();
        (head, rows)
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Closed form for Minkowski `R_t x {|x| <= R}` with boundary coordinates
/// `(t, theta)`: exit `(t + 2 R kappa / |tau|, theta + sgn(w)(pi - 2 alpha))`,
/// `eta' = xi'`, `s_exit = 2 R kappa / tau^2`, where `eta = w / R`,
/// `kappa = sqrt(tau^2 - eta^2)`, `sin alpha = |eta| / |tau|`.
pub fn minkowski_disk_exit(radius: f64, xp: &[f64], xip: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let (tau, w) = (xip[0], xip[1]);
    let eta = w / radius;
    let kappa = (tau * tau - eta * eta).sqrt();
    let alpha = (eta.abs() / tau.abs()).asin();
    let sign = if tau < 0.0 { 1.0 } else { -1.0 };
    let s = sign * 2.0 * radius * kappa / (tau * tau);
    let t = xp[0] + 2.0 * radius * kappa / tau.abs();
    let th = xp[1] + eta.signum() * (std::f64::consts::PI - 2.0 * alpha) * if tau < 0.0 { 1.0 } else { -1.0 };
    (vec![t, th], xip.to_vec(), s)
}

/// Fan of `n` future-pointing entries `xi' = (-1, w)` at several boundary
/// points, with `|w / R| < 0.95`.
pub fn disk_fan(frame: &Frame, radius: f64, n: usize) -> Vec<BoundaryCovector> {
    let points = [[0.0, 0.0], [0.3, 1.1], [-0.2, 2.5], [0.5, 4.0]];
    let per = n.div_ceil(points.len());
    let mut out = Vec::with_capacity(n);
    'outer: for y in &points {
        for k in 0..per {
            if out.len() == n {
                break 'outer;
            }
            let w = radius * (-0.95 + 1.9 * (k as f64 + 0.5) / per as f64);
            out.push(frame.covector(0, y, &[-1.0, w]));
        }
    }
    out
}
