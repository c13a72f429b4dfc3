//! Scenario files: TOML with typed keys and table sections. Closures are
//! selected by registered name with numeric parameters.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary_frame::{BoundaryCovector, Frame};
use crate::dn_synth::{BoundaryGrid, CutoffSpec, SymbolProbe};
use crate::error::{Error, Result};
use crate::geometry::{Chart, CoefficientTriple};
use crate::lens::disk_fan;
use crate::null_flow::RayOptions;
use crate::recovery::LayeredModel;
use crate::registry::{Params, Registry};
use crate::tol;

/// A registered closure and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

impl Named {
    pub fn new(name: &str) -> Self {
        Named { name: name.into(), params: Params::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub family: String,
    pub dim: usize,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub kind: String,
    /// Chart box, one `[lo, hi]` per axis.
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FanKind {
    /// Entries `(-1, w)` at four boundary points of a disk.
    Disk,
    /// Entries `(-1, w)` at one boundary point, `w` evenly spaced.
    Line,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_fan")]
    pub fan: FanKind,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub point: Vec<f64>,
    #[serde(default = "default_w_range")]
    pub w_range: [f64; 2],
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Local probe: grid centre, half-width and points per axis.
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default)]
    pub xi0: Vec<f64>,
    #[serde(default = "default_grid_half")]
    pub grid_half: f64,
    #[serde(default = "default_grid_count")]
    pub grid_count: usize,
}

fn default_fan() -> FanKind {
    FanKind::Disk
}
fn default_count() -> usize {
    64
}
fn default_w_range() -> [f64; 2] {
    [-0.5, 0.5]
}
fn default_lambdas() -> Vec<f64> {
    tol::LAMBDA_LADDER.to_vec()
}
fn default_grid_half() -> f64 {
    0.1
}
fn default_grid_count() -> usize {
    9
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            fan: default_fan(),
            count: default_count(),
            point: Vec::new(),
            w_range: default_w_range(),
            lambdas: default_lambdas(),
            center: Vec::new(),
            xi0: Vec::new(),
            grid_half: default_grid_half(),
            grid_count: default_grid_count(),
        }
    }
}

/// Comparison partner for recovery experiments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtherSpec {
    pub metric: Option<MetricSpec>,
    pub a: Option<Named>,
    pub q: Option<Named>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub a_priori_close: bool,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Tangential covector fan `(-1, w)` and negations for boundary recovery.
    #[serde(default = "default_fan_w")]
    pub fan_w: Vec<f64>,
    /// Perturbation direction for the epsilon sweep, same keys as a layered
    /// model (`g0`, `g1`, `g2`, `a_re`, `a_im`, `q_re`, `q_im`).
    #[serde(default)]
    pub direction: Params,
    #[serde(default)]
    pub other: OtherSpec,
    #[serde(default = "default_region_t")]
    pub region_t: f64,
    #[serde(default = "default_region_raster")]
    pub region_raster: [usize; 2],
    #[serde(default = "default_arc")]
    pub arc: [f64; 2],
    #[serde(default = "default_line_grid")]
    pub line_grid: [usize; 3],
}

fn default_eps() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1]
}
fn default_fan_w() -> Vec<f64> {
    vec![-0.5, -0.3, -0.1, 0.1, 0.3, 0.5]
}
fn default_region_t() -> f64 {
    3.0
}
fn default_region_raster() -> [usize; 2] {
    [31, 41]
}
fn default_arc() -> [f64; 2] {
    [0.0, std::f64::consts::PI]
}
fn default_line_grid() -> [usize; 3] {
    [12, 9, 5]
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            a_priori_close: false,
            eps: default_eps(),
            fan_w: default_fan_w(),
            direction: Params::default(),
            other: OtherSpec::default(),
            region_t: default_region_t(),
            region_raster: default_region_raster(),
            arc: default_arc(),
            line_grid: default_line_grid(),
        }
    }
}

/// Tolerances with their defaults. Integration tolerances feed the ray
/// options; the rest are pass/fail thresholds of the checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub shell_tol: f64,
    pub step_tol: f64,
    pub step_fraction: f64,
    pub lens_oracle: f64,
    pub lens_symmetry: f64,
    pub conformal_exit: f64,
    pub xin: f64,
    pub xin_rate: [f64; 2],
    pub solver: f64,
    pub zero_delta: f64,
    pub exponent_band: f64,
    pub l1a: f64,
    pub l1a_gauge: f64,
    pub l0q: f64,
    pub l0q_rate: [f64; 2],
    pub lens_recovery: f64,
    pub lens_scaling: [f64; 2],
    pub gauge_table: f64,
    pub region_band: f64,
    pub fleet_seconds: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            shell_tol: tol::SHELL_TOL,
            step_tol: tol::STEP_TOL,
            step_fraction: tol::STEP_FRACTION,
            lens_oracle: 1e-8,
            lens_symmetry: 1e-9,
            conformal_exit: 1e-6,
            xin: 1e-5,
            xin_rate: [-1.2, -0.8],
            solver: 1e-8,
            zero_delta: 1e-6,
            exponent_band: 0.3,
            l1a: 1e-5,
            l1a_gauge: 1e-8,
            l0q: 1e-5,
            l0q_rate: [-1.3, -0.7],
            lens_recovery: 1e-6,
            lens_scaling: [0.8, 1.2],
            gauge_table: 1e-5,
            region_band: 1e-6,
            fleet_seconds: 60.0,
        }
    }
}

impl Tolerances {
    /// `KEY=VAL`; range tolerances take `KEY=LO,HI`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--tol-override '{kv}': expected KEY=VAL")))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let slot = table
            .get(k.trim())
            .ok_or_else(|| Error::Config(format!("--tol-override: unknown tolerance '{}'", k.trim())))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("--tol-override {k}: '{s}' is not a number")));
        let value = match slot {
            toml::Value::Array(_) => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("--tol-override {k}: expected LO,HI")));
                }
                toml::Value::Array(vec![toml::Value::Float(parse(parts[0])?), toml::Value::Float(parse(parts[1])?)])
            }
            _ => toml::Value::Float(parse(v)?),
        };
        table.insert(k.trim().to_string(), value);
        *self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn ray_options(&self, diameter: f64) -> RayOptions {
        RayOptions {
            step: self.step_fraction * diameter,
            shell_tol: self.shell_tol,
            step_tol: self.step_tol,
            ..RayOptions::for_diameter(diameter)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub dir: String,
}

fn default_out() -> String {
    "out".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub metric: MetricSpec,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub a: Option<Named>,
    #[serde(default)]
    pub q: Option<Named>,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Everything a command needs, built from a scenario.
pub struct Setup {
    pub frame: Frame,
    pub triple: CoefficientTriple,
    pub entries: Vec<BoundaryCovector>,
    pub opts: RayOptions,
}

fn ctx(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(m) if section.is_empty() => Error::Config(m),
        Error::Config(m) => Error::Config(format!("{section}.{m}")),
        other => Error::Config(format!("{section}: {other}")),
    }
}

impl Scenario {
    /// Parses and validates. Syntax and type errors carry the TOML line and
    /// column; semantic errors name the offending field.
    pub fn parse(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        s.validate(&Registry::builtin())?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self, reg: &Registry) -> Result<()> {
        let dim = self.metric.dim;
        if dim < 2 {
            return Err(Error::Config(format!("metric.dim: must be at least 2, found {dim}")));
        }
        if self.boundary.bounds.len() != dim {
            return Err(Error::Config(format!("boundary.bounds: expected {dim} intervals, found {}", self.boundary.bounds.len())));
        }
        if self.probe.lambdas.len() < 3 || self.probe.lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("probe.lambdas: need at least 3 strictly increasing frequencies".into()));
        }
        if self.probe.count == 0 {
            return Err(Error::Config("probe.count: must be positive".into()));
        }
        self.build(reg).map(|_| ())
    }

    /// Canonical TOML of the parsed scenario, overrides included.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn metric_from(&self, reg: &Registry, m: &MetricSpec) -> Result<crate::geometry::Metric> {
        reg.metric(&m.family, m.dim, &m.params).map_err(ctx("metric"))
    }

    fn triple_from(&self, reg: &Registry, m: &MetricSpec, a: &Option<Named>, q: &Option<Named>, section: &str) -> Result<CoefficientTriple> {
        let dim = m.dim;
        let g = self.metric_from(reg, m).map_err(ctx(section))?;
        let mut t = CoefficientTriple::bare(g);
        if let Some(a) = a {
            t.a = reg.form(&a.name, dim, &a.params).map_err(ctx(&format!("{section}a")))?;
        }
        if let Some(q) = q {
            t.q = reg.potential(&q.name, dim, &q.params).map_err(ctx(&format!("{section}q")))?;
        }
        Ok(t)
    }

    pub fn build(&self, reg: &Registry) -> Result<Setup> {
        let dim = self.metric.dim;
        let triple = self.triple_from(reg, &self.metric, &self.a, &self.q, "")?;
        let boundary = reg.boundary(&self.boundary.kind, dim, &self.boundary.params).map_err(ctx("boundary"))?;
        let bounds: Vec<(f64, f64)> = self.boundary.bounds.iter().map(|b| (b[0], b[1])).collect();
        let chart = Chart::new(bounds, boundary).map_err(ctx("boundary.bounds"))?;
        let frame = Frame::new(triple.g.clone(), &chart);
        let entries = self.entries(&frame)?;
        let opts = self.tolerances.ray_options(chart.diameter());
        if let Some(other) = &self.experiment.other.metric {
            if other.dim != dim {
                return Err(Error::Config(format!("experiment.other.metric.dim: expected {dim}, found {}", other.dim)));
            }
        }
        self.other_triple(reg)?;
        Ok(Setup { frame, triple, entries, opts })
    }

    /// The comparison triple: the base triple with any `experiment.other`
    /// entries swapped in.
    pub fn other_triple(&self, reg: &Registry) -> Result<CoefficientTriple> {
        let o = &self.experiment.other;
        let m = o.metric.as_ref().unwrap_or(&self.metric);
        let a = if o.a.is_some() { &o.a } else { &self.a };
        let q = if o.q.is_some() { &o.q } else { &self.q };
        self.triple_from(reg, m, a, q, "experiment.other.")
    }

    fn entries(&self, frame: &Frame) -> Result<Vec<BoundaryCovector>> {
        let p = &self.probe;
        let n = frame.dim() - 1;
        match p.fan {
            FanKind::Disk => {
                if frame.boundary.name() != "cylinder" {
                    return Err(Error::Config("probe.fan: 'disk' needs a cylinder boundary".into()));
                }
                let radius = self.boundary.params.num_or("radius", 1.0).map_err(ctx("boundary"))?;
                Ok(disk_fan(frame, radius, p.count))
            }
            FanKind::Line => {
                let point = if p.point.is_empty() { vec![0.0; n] } else { p.point.clone() };
                if point.len() != n {
                    return Err(Error::Config(format!("probe.point: expected {n} boundary coordinates")));
                }
                let [lo, hi] = p.w_range;
                Ok((0..p.count)
                    .map(|k| {
                        let w = if p.count == 1 { lo } else { lo + (hi - lo) * k as f64 / (p.count - 1) as f64 };
                        let mut xi = vec![0.0; n];
                        xi[0] = -1.0;
                        if n > 1 {
                            xi[1] = w;
                        }
                        frame.covector(0, &point, &xi)
                    })
                    .collect())
            }
        }
    }

    /// Local probe around `probe.center` in direction `probe.xi0`.
    pub fn local_probe(&self, frame: &Frame) -> Result<(SymbolProbe, CutoffSpec)> {
        let n = frame.dim() - 1;
        let p = &self.probe;
        let center = if p.center.is_empty() { vec![0.0; n] } else { p.center.clone() };
        let xi0 = if p.xi0.is_empty() {
            let mut v = vec![0.0; n];
            v[0] = -1.0;
            v
        } else {
            p.xi0.clone()
        };
        if center.len() != n || xi0.len() != n {
            return Err(Error::Config(format!("probe.center/xi0: expected {n} entries")));
        }
        let grid = BoundaryGrid::centered(0, &center, p.grid_half, p.grid_count);
        let cutoff = CutoffSpec { patch: 0, center, xi0, plateau: 0.5 * p.grid_half, support: 1.2 * p.grid_half, cone: 0.3, order: 3 };
        Ok((SymbolProbe { lambdas: p.lambdas.clone(), grid }, cutoff))
    }

    /// Layered model from a `layered` metric with constant `a` and `q`.
    pub fn layered_model(&self) -> Result<LayeredModel> {
        if self.metric.family != "layered" {
            return Err(Error::Config(format!("metric.family: boundary recovery needs 'layered', found '{}'", self.metric.family)));
        }
        let n = self.metric.dim - 1;
        let mut p = self.metric.params.clone();
        let a = match &self.a {
            None => vec![Complex64::new(0.0, 0.0); n + 1],
            Some(a) if a.name == "constant" => a.params.complex_list("a", n + 1).map_err(ctx("a"))?,
            Some(a) => return Err(Error::Config(format!("a.name: boundary recovery needs 'constant', found '{}'", a.name))),
        };
        if a[n].norm() != 0.0 {
            return Err(Error::Config("a.params.a_re: the normal component must vanish".into()));
        }
        let q = match &self.q {
            None => Complex64::new(0.0, 0.0),
            Some(q) if q.name == "constant" => Complex64::new(q.params.num_or("re", 0.0)?, q.params.num_or("im", 0.0)?),
            Some(q) => return Err(Error::Config(format!("q.name: boundary recovery needs 'constant', found '{}'", q.name))),
        };
        for k in ["a_re", "a_im"] {
            p.0.remove(k);
        }
        let g = |k: &str| -> Result<nalgebra::DMatrix<f64>> {
            if p.0.contains_key(k) {
                p.matrix(k, n).map_err(ctx("metric"))
            } else {
                Ok(nalgebra::DMatrix::zeros(n, n))
            }
        };
        Ok(LayeredModel { g0: g("g0")?, g1: g("g1")?, g2: g("g2")?, a: a[..n].to_vec(), q })
    }

    /// Perturbation direction for the epsilon sweep.
    pub fn direction(&self) -> Result<LayeredModel> {
        let n = self.metric.dim - 1;
        let p = &self.experiment.direction;
        let g = |k: &str| -> Result<nalgebra::DMatrix<f64>> {
            if p.0.contains_key(k) {
                p.matrix(k, n).map_err(ctx("experiment.direction"))
            } else {
                Ok(nalgebra::DMatrix::zeros(n, n))
            }
        };
        let a = if p.0.contains_key("a_re") { p.complex_list("a", n).map_err(ctx("experiment.direction"))? } else { vec![Complex64::new(0.0, 0.0); n] };
        let q = Complex64::new(p.num_or("q_re", 0.0)?, p.num_or("q_im", 0.0)?);
        Ok(LayeredModel { g0: g("g0")?, g1: g("g1")?, g2: g("g2")?, a, q })
    }

    /// Symmetric boundary-recovery fan `(-1, w)` and negations.
    pub fn recovery_fan(&self) -> Vec<Vec<f64>> {
        crate::recovery::symmetric_fan(&self.experiment.fan_w)
    }
}

/// Key/value summary used in artifact headers.
pub fn describe(s: &Scenario) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("scenario".into(), s.name.clone());
    m.insert("metric".into(), s.metric.family.clone());
    m.insert("boundary".into(), s.boundary.kind.clone());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISK: &str = r#"
name = "disk"

[metric]
family = "minkowski"
dim = 3

[boundary]
kind = "cylinder"
bounds = [[-2.0, 2.0], [-1.0, 1.0], [-1.0, 1.0]]
params = { radius = 1.0 }

[probe]
fan = "disk"
count = 8
"#;

    #[test]
    fn parses_and_builds() {
        let s = Scenario::parse(DISK).unwrap();
        let setup = s.build(&Registry::builtin()).unwrap();
        assert_eq!(setup.entries.len(), 8);
        assert_eq!(s.tolerances, Tolerances::default());
        assert_eq!(s.hash(), Scenario::parse(DISK).unwrap().hash());
        // canonical form parses back to the same scenario
        assert_eq!(Scenario::parse(&s.canonical()).unwrap(), s);
    }

    #[test]
    fn syntax_errors_carry_line() {
        let bad = DISK.replace("dim = 3", "dim = \"three\"");
        let e = Scenario::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("line 6"), "{e}");
        assert!(e.contains("dim"), "{e}");
        let bad = DISK.replace("count = 8", "count = 8\nbogus = 1");
        let e = Scenario::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line"), "{e}");
    }

    #[test]
    fn semantic_errors_name_field() {
        let bad = DISK.replace("family = \"minkowski\"", "family = \"speed-profile\"\nparams = { amp = [1.0] }");
        let e = Scenario::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("metric.params.amp"), "{e}");
        let bad = DISK.replace("[[-2.0, 2.0], ", "[");
        assert!(Scenario::parse(&bad).unwrap_err().to_string().contains("boundary.bounds"));
        let bad = format!("{DISK}\n[a]\nname = \"constant\"\nparams = {{ a_re = [1.0] }}\n");
        let e = Scenario::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("a.params.a_re"), "{e}");
    }

    #[test]
    fn tolerance_overrides() {
        let mut t = Tolerances::default();
        t.apply_override("lens_oracle=1e-6").unwrap();
        assert_eq!(t.lens_oracle, 1e-6);
        t.apply_override("xin_rate=-1.5,-0.5").unwrap();
        assert_eq!(t.xin_rate, [-1.5, -0.5]);
        assert!(t.apply_override("nope=1").is_err());
        assert!(t.apply_override("lens_oracle").is_err());
        assert!(t.apply_override("lens_oracle=abc").is_err());
    }

    #[test]
    fn layered_model_from_scenario() {
        let text = r#"
name = "layered"
[metric]
family = "layered"
dim = 3
params = { g0 = [-1.0, 0.1, 0.1, 1.2], g1 = [0.05, 0.0, 0.0, -0.3] }
[boundary]
kind = "half-space"
bounds = [[-2.0, 2.0], [-2.0, 2.0], [0.0, 2.0]]
[a]
name = "constant"
params = { a_re = [0.2, -0.1, 0.0] }
[q]
name = "constant"
params = { re = 0.3, im = 0.1 }
[probe]
fan = "line"
count = 3
"#;
        let s = Scenario::parse(text).unwrap();
        let m = s.layered_model().unwrap();
        assert_eq!(m.g0[(1, 1)], 1.2);
        assert_eq!(m.a, vec![Complex64::new(0.2, 0.0), Complex64::new(-0.1, 0.0)]);
        assert_eq!(m.q, Complex64::new(0.3, 0.1));
        assert_eq!(m.g2.amax(), 0.0);
    }
}
