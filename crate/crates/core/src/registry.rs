//! Named constructors for metrics, fields and boundaries, so scenarios select
//! closures by name with numeric parameters.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    constant_form, constant_scalar, BallBump, CScalar, ComplexPair, Constant, Covector, Exact, Gaussian, Linear, Scalar, Sum,
};
use crate::geometry::{Boundary, Conformal, Cylinder, HalfSpace, Layered, Metric, Minkowski, Slab, SpeedProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    List(Vec<f64>),
}

/// Numeric parameters of a named closure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn num(&self, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(ParamValue::Num(v)) => Ok(*v),
            Some(ParamValue::List(_)) => Err(Error::Config(format!("params.{key}: expected a number, found a list"))),
            None => Err(Error::Config(format!("params.{key}: missing"))),
        }
    }

    pub fn num_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.0.contains_key(key) {
            self.num(key)
        } else {
            Ok(default)
        }
    }

    pub fn count_or(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.num_or(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Config(format!("params.{key}: expected a non-negative integer, found {v}")));
        }
        Ok(v as usize)
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        match self.0.get(key) {
            Some(ParamValue::List(v)) => Ok(v.clone()),
            Some(ParamValue::Num(v)) => Ok(vec![*v]),
            None => Err(Error::Config(format!("params.{key}: missing"))),
        }
    }

    pub fn list_or(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        if self.0.contains_key(key) {
            self.list(key)
        } else {
            Ok(default)
        }
    }

    /// Square matrix from a row-major list.
    pub fn matrix(&self, key: &str, n: usize) -> Result<DMatrix<f64>> {
        let v = self.list(key)?;
        if v.len() != n * n {
            return Err(Error::Config(format!("params.{key}: expected {} entries, found {}", n * n, v.len())));
        }
        Ok(DMatrix::from_row_slice(n, n, &v))
    }

    /// Complex vector from `{key}_re` and optional `{key}_im`.
    pub fn complex_list(&self, key: &str, n: usize) -> Result<Vec<Complex64>> {
        let re = self.list(&format!("{key}_re"))?;
        let im = self.list_or(&format!("{key}_im"), vec![0.0; re.len()])?;
        if re.len() != n || im.len() != n {
            return Err(Error::Config(format!("params.{key}_re/_im: expected {n} entries")));
        }
        Ok(re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect())
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.0.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!("params.{k}: unknown parameter (expected one of {})", allowed.join(", "))));
            }
        }
        Ok(())
    }
}

pub type Ctor<T> = Box<dyn Fn(usize, &Params) -> Result<T> + Send + Sync>;

/// Constructors by name. The first argument is the spacetime dimension.
pub struct Registry {
    metrics: BTreeMap<String, Ctor<Metric>>,
    scalars: BTreeMap<String, Ctor<Scalar>>,
    potentials: BTreeMap<String, Ctor<CScalar>>,
    forms: BTreeMap<String, Ctor<Covector>>,
    boundaries: BTreeMap<String, Ctor<Arc<dyn Boundary>>>,
}

fn lookup<'a, T>(map: &'a BTreeMap<String, Ctor<T>>, kind: &str, name: &str) -> Result<&'a Ctor<T>> {
    map.get(name).ok_or_else(|| {
        let known: Vec<&str> = map.keys().map(String::as_str).collect();
        Error::Config(format!("unknown {kind} '{name}' (registered: {})", known.join(", ")))
    })
}

fn bump(dim: usize, p: &Params) -> Result<BallBump> {
    let mut b = BallBump::new(p.num_or("amp", 1.0)?, p.count_or("power", 4)? as i32, p.num_or("radius", 1.0)?, dim);
    b.clip = p.num_or("clip", 1.0)? != 0.0;
    if let Ok(c) = p.list("center") {
        if c.len() != dim {
            return Err(Error::Config(format!("params.center: expected {dim} entries")));
        }
        b.center = c;
    }
    Ok(b)
}

fn gaussian(dim: usize, p: &Params) -> Result<Gaussian> {
    let center = p.list_or("center", vec![0.0; dim])?;
    if center.len() != dim {
        return Err(Error::Config(format!("params.center: expected {dim} entries")));
    }
    Ok(Gaussian { amp: p.num_or("amp", 1.0)?, center, sigma: p.num_or("sigma", 0.3)?, axes: (1..dim).collect() })
}

impl Registry {
    pub fn empty() -> Self {
        Registry {
            metrics: BTreeMap::new(),
            scalars: BTreeMap::new(),
            potentials: BTreeMap::new(),
            forms: BTreeMap::new(),
            boundaries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Registry::empty();
        r.register_scalar("zero", |_, p| {
            p.check_keys(&[])?;
            Ok(Arc::new(Constant(0.0)) as Scalar)
        });
        r.register_scalar("constant", |_, p| {
            p.check_keys(&["value"])?;
            Ok(Arc::new(Constant(p.num("value")?)) as Scalar)
        });
        r.register_scalar("linear", |dim, p| {
            p.check_keys(&["coeffs", "offset"])?;
            let coeffs = p.list("coeffs")?;
            if coeffs.len() != dim {
                return Err(Error::Config(format!("params.coeffs: expected {dim} entries")));
            }
            Ok(Arc::new(Linear { coeffs, offset: p.num_or("offset", 0.0)? }) as Scalar)
        });
        r.register_scalar("ball-bump", |dim, p| {
            p.check_keys(&["amp", "power", "radius", "clip", "center"])?;
            Ok(Arc::new(bump(dim, p)?) as Scalar)
        });
        r.register_scalar("gaussian", |dim, p| {
            p.check_keys(&["amp", "sigma", "center"])?;
            Ok(Arc::new(gaussian(dim, p)?) as Scalar)
        });

        r.register_metric("minkowski", |dim, p| {
            p.check_keys(&[])?;
            Ok(Arc::new(Minkowski { dim }) as Metric)
        });
        // c = 1 + amp * (1 - |x|^2 / R^2)^power
        r.register_metric("speed-profile", |dim, p| {
            p.check_keys(&["amp", "power", "radius", "clip", "center"])?;
            let b = bump(dim, p)?;
            Ok(Arc::new(SpeedProfile { dim, c: Arc::new(Sum(vec![Arc::new(Constant(1.0)), Arc::new(b)])) }) as Metric)
        });
        // e^{2 phi} eta with phi a ball bump
        r.register_metric("conformal-minkowski", |dim, p| {
            p.check_keys(&["amp", "power", "radius", "clip", "center"])?;
            Ok(Arc::new(Conformal::minkowski(dim, Arc::new(bump(dim, p)?))) as Metric)
        });
        r.register_metric("layered", |dim, p| {
            p.check_keys(&["g0", "g1", "g2"])?;
            let n = dim - 1;
            let zero = DMatrix::zeros(n, n);
            let g1 = if p.0.contains_key("g1") { p.matrix("g1", n)? } else { zero.clone() };
            let g2 = if p.0.contains_key("g2") { p.matrix("g2", n)? } else { zero };
            Ok(Arc::new(Layered::new(p.matrix("g0", n)?, g1, g2)) as Metric)
        });

        r.register_potential("zero", |_, p| {
            p.check_keys(&[])?;
            Ok(constant_scalar(Complex64::new(0.0, 0.0)))
        });
        r.register_potential("constant", |_, p| {
            p.check_keys(&["re", "im"])?;
            Ok(constant_scalar(Complex64::new(p.num_or("re", 0.0)?, p.num_or("im", 0.0)?)))
        });
        r.register_potential("gaussian", |dim, p| {
            p.check_keys(&["amp", "sigma", "center"])?;
            Ok(Arc::new(ComplexPair::real(Arc::new(gaussian(dim, p)?))) as CScalar)
        });

        r.register_form("zero", |dim, p| {
            p.check_keys(&[])?;
            Ok(constant_form(vec![Complex64::new(0.0, 0.0); dim]))
        });
        r.register_form("constant", |dim, p| {
            p.check_keys(&["a_re", "a_im"])?;
            Ok(constant_form(p.complex_list("a", dim)?))
        });
        // d(bump)
        r.register_form("exact-bump", |dim, p| {
            p.check_keys(&["amp", "power", "radius", "clip", "center"])?;
            Ok(Arc::new(Exact { psi: Arc::new(bump(dim, p)?), scale: Complex64::new(1.0, 0.0) }) as Covector)
        });

        r.register_boundary("cylinder", |dim, p| {
            p.check_keys(&["radius"])?;
            if dim != 3 {
                return Err(Error::Config(format!("cylinder boundary needs dim = 3, found {dim}")));
            }
            Ok(Arc::new(Cylinder { radius: p.num_or("radius", 1.0)? }) as Arc<dyn Boundary>)
        });
        r.register_boundary("slab", |dim, p| {
            p.check_keys(&["lo", "hi"])?;
            let (lo, hi) = (p.num_or("lo", 0.0)?, p.num_or("hi", 1.0)?);
            if hi <= lo {
                return Err(Error::Config(format!("params.hi: must exceed lo ({hi} <= {lo})")));
            }
            Ok(Arc::new(Slab { dim, lo, hi }) as Arc<dyn Boundary>)
        });
        r.register_boundary("half-space", |dim, p| {
            p.check_keys(&[])?;
            Ok(Arc::new(HalfSpace { dim }) as Arc<dyn Boundary>)
        });
        r
    }

    pub fn register_metric(&mut self, name: &str, f: impl Fn(usize, &Params) -> Result<Metric> + Send + Sync + 'static) {
        self.metrics.insert(name.into(), Box::new(f));
    }
    pub fn register_scalar(&mut self, name: &str, f: impl Fn(usize, &Params) -> Result<Scalar> + Send + Sync + 'static) {
        self.scalars.insert(name.into(), Box::new(f));
    }
    pub fn register_potential(&mut self, name: &str, f: impl Fn(usize, &Params) -> Result<CScalar> + Send + Sync + 'static) {
        self.potentials.insert(name.into(), Box::new(f));
    }
    pub fn register_form(&mut self, name: &str, f: impl Fn(usize, &Params) -> Result<Covector> + Send + Sync + 'static) {
        self.forms.insert(name.into(), Box::new(f));
    }
    pub fn register_boundary(&mut self, name: &str, f: impl Fn(usize, &Params) -> Result<Arc<dyn Boundary>> + Send + Sync + 'static) {
        self.boundaries.insert(name.into(), Box::new(f));
    }

    pub fn metric(&self, name: &str, dim: usize, p: &Params) -> Result<Metric> {
        lookup(&self.metrics, "metric", name)?(dim, p)
    }
    pub fn scalar(&self, name: &str, dim: usize, p: &Params) -> Result<Scalar> {
        lookup(&self.scalars, "scalar field", name)?(dim, p)
    }
    pub fn potential(&self, name: &str, dim: usize, p: &Params) -> Result<CScalar> {
        lookup(&self.potentials, "potential", name)?(dim, p)
    }
    pub fn form(&self, name: &str, dim: usize, p: &Params) -> Result<Covector> {
        lookup(&self.forms, "one-form", name)?(dim, p)
    }
    pub fn boundary(&self, name: &str, dim: usize, p: &Params) -> Result<Arc<dyn Boundary>> {
        lookup(&self.boundaries, "boundary", name)?(dim, p)
    }

    pub fn metric_names(&self) -> Vec<&str> {
        self.metrics.keys().map(String::as_str).collect()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}
