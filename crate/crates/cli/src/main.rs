//! `lightray` command line. Every command reads one scenario file and writes
//! stamped artifacts into the output directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure (per-row
//! failures land in `diagnostics.csv`), 4 a check did not pass.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lightray::boundary_frame::{BoundaryCovector, Frame};
use lightray::dn_synth::{extract_xin, synthesize_local_response};
use lightray::gauge::{enforce_m3, FlatCollar};
use lightray::geo_optics::symbol_table;
use lightray::lens::{fmt, lens_fan, trace_interior, LensStatus};
use lightray::minkowski_demo::{cones_intersect, excluded_fraction, line_set_defect, partial_data_line_set, reachable_fraction_mc, region_raster, Arc1};
use lightray::null_flow::RayOptions;
use lightray::output::{ArtifactWriter, Stamp};
use lightray::ray_transforms::{light_ray_transform_oneform, light_ray_transform_scalar};
use lightray::recovery::{boundary_eps_sweep, boundary_report, recover_l0q, recover_l1a, recover_lens};
use lightray::registry::Registry;
use lightray::scenario::{Scenario, Setup, Tolerances};
use lightray::selftest;
use lightray::Error;

#[derive(Parser)]
#[command(name = "lightray", version, about = "Light rays, lens relations and boundary recovery on Lorentzian manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Output directory; defaults to the scenario's `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "N", default_value_t = 0)]
    threads: usize,
    /// Overrides the scenario seed.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
    /// Tolerance override `KEY=VAL` (`KEY=LO,HI` for ranges); repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    tol_override: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Lens relation over the scenario's entry fan.
    Lens(Common),
    /// Light-ray transforms of q and A along the fan.
    Transform(Common),
    /// Local DN response bundle and the extracted xi_n.
    Synth(Common),
    /// Boundary jets of a layered model from its ladder responses.
    RecoverBoundary(Common),
    /// L1 of A~ - A and L0 of q~ - q against `experiment.other`.
    RecoverInterior(Common),
    /// Lens relation from probe symbols.
    RecoverLens(Common),
    /// DN symbol tables before and after the normal gauge for A.
    GaugeCheck(Common),
    /// Reachable region and partial-data light lines in flat space.
    Region(Common),
    /// Epsilon sweep of the boundary pipeline with fitted exponents.
    Convergence(Common),
    /// Acceptance suite.
    Selftest(Common),
}

enum Failure {
    Config(String),
    Numerical(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            Error::Io(m) => Failure::Config(m),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Run {
    scenario: Scenario,
    setup: Setup,
    registry: Registry,
    out: ArtifactWriter,
    failures: Vec<Vec<String>>,
}

impl Run {
    fn open(c: &Common) -> Result<Run, Failure> {
        lightray::set_threads(c.threads)?;
        let path = c.scenario.as_ref().ok_or_else(|| Failure::Config("--scenario is required".into()))?;
        let mut scenario = Scenario::load(path)?;
        for kv in &c.tol_override {
            scenario.tolerances.apply_override(kv)?;
        }
        if let Some(seed) = c.seed {
            scenario.seed = seed;
        }
        let registry = Registry::builtin();
        let setup = scenario.build(&registry)?;
        let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(&scenario.output.dir));
        let out = ArtifactWriter::new(&dir, Stamp::new(&scenario.hash()))?;
        Ok(Run { scenario, setup, registry, out, failures: Vec::new() })
    }

    fn fail_row(&mut self, row: usize, status: &str, detail: impl ToString) {
        self.failures.push(vec![row.to_string(), status.into(), detail.to_string()]);
    }

    /// Writes the schema and, with row failures, `diagnostics.csv`.
    fn finish(mut self) -> Outcome {
        let failed = self.failures.len();
        if failed > 0 {
            let head = ["row", "status", "detail"].map(String::from).to_vec();
            self.out.csv("diagnostics.csv", &head, &self.failures)?;
        }
        let dir = self.out.dir().to_path_buf();
        let files = self.out.finish()?;
        println!("wrote {} files to {}: {}", files.len(), dir.display(), files.join(", "));
        if failed > 0 {
            return Err(Failure::Numerical(format!("{failed} rows failed, see diagnostics.csv")));
        }
        Ok(())
    }

    fn opts(&self) -> RayOptions {
        self.setup.opts.clone()
    }
}

fn status_name(s: &LensStatus) -> &'static str {
    match s {
        LensStatus::Exited => "exited",
        LensStatus::FixedPoint => "fixed_point",
        LensStatus::TangentialExit => "tangential_exit",
        LensStatus::NoExit => "no_exit",
        LensStatus::NotTimelike => "not_timelike",
        LensStatus::Failed => "failed",
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn indexed(stem: &str, n: usize) -> Vec<String> {
    (0..n).map(|a| format!("{stem}{a}")).collect()
}

fn lens(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let table = lens_fan(&run.setup.frame, &run.setup.entries, &RayOptions { variational: false, ..run.opts() });
    let (head, rows) = table.csv();
    run.out.csv("lens.csv", &head, &rows)?;
    let exited = table.rows.iter().filter(|r| r.status == LensStatus::Exited).count();
    for (k, r) in table.rows.iter().enumerate() {
        if r.status != LensStatus::Exited {
            run.fail_row(k, status_name(&r.status), &r.detail);
        }
    }
    println!("lens: {exited}/{} rows exited", table.rows.len());
    run.finish()
}

fn transform(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let o = RayOptions { variational: false, ..run.opts() };
    let (mut rays, mut index) = (Vec::new(), Vec::new());
    for (k, b) in run.setup.entries.clone().iter().enumerate() {
        match trace_interior(&run.setup.frame, b, &o) {
            Ok(t) => {
                rays.push(t.ray);
                index.push(k);
            }
            Err(e) => run.fail_row(k, "trace_failed", e),
        }
    }
    let t = &run.setup.triple;
    let l0 = light_ray_transform_scalar(&*t.q, &rays);
    let l1 = light_ray_transform_oneform(&*t.g, &*t.a, &rays);
    let mut rows = Vec::new();
    for (j, k) in index.iter().enumerate() {
        let (a, b) = (&l0.rows[j], &l1.rows[j]);
        if !a.converged || !b.converged {
            run.fail_row(*k, "quadrature", format!("{} {}", a.detail, b.detail).trim());
        }
        rows.push(vec![k.to_string(), fmt(a.value.re), fmt(a.value.im), fmt(b.value.re), fmt(b.value.im), fmt(a.error.max(b.error))]);
    }
    run.out.csv("transform.csv", &strings(&["row", "l0_re", "l0_im", "l1_re", "l1_im", "error"]), &rows)?;
    println!("transform: {} rays, rule {}", rows.len(), l0.rule);
    run.finish()
}

fn synth(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let (probe, cutoff) = run.scenario.local_probe(&run.setup.frame)?;
    let bundle = synthesize_local_response(&run.setup.frame, &run.setup.triple, &probe, &cutoff)?;
    run.out.json("response_bundle.json", "response-bundle", &bundle)?;
    let n = run.setup.frame.dim() - 1;
    let mut head = vec!["row".to_string()];
    head.extend(indexed("x", n));
    head.extend(strings(&["xi_n", "rate", "residual"]));
    let mut rows = Vec::new();
    for (k, fit) in extract_xin(&bundle, &*run.setup.frame.boundary).into_iter().enumerate() {
        match fit {
            None => {}
            Some(Ok(f)) => {
                let mut row = vec![k.to_string()];
                row.extend(bundle.points[k].iter().map(|v| fmt(*v)));
                row.extend([f.s0().re, f.rate, f.residual].map(fmt));
                rows.push(row);
            }
            Some(Err(e)) => run.fail_row(k, "fit_rejected", e),
        }
    }
    run.out.csv("xi_n.csv", &head, &rows)?;
    println!("synth: {} frequencies, xi_n fitted at {} grid points", bundle.lambdas.len(), rows.len());
    run.finish()
}

fn recover_boundary(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let model = run.scenario.layered_model()?;
    let (jets, report) = boundary_report(&model, &run.scenario.recovery_fan())?;
    run.out.json("boundary_jets.json", "boundary-jets", &jets)?;
    run.out.json("boundary_report.json", "recovery-report", &report)?;
    let err = report.max_error();
    let limit = run.scenario.tolerances.zero_delta;
    println!("recover-boundary: {} stages, max error {err:.3e} (limit {limit:e})", report.stages.len());
    run.finish()?;
    if err > limit {
        return Err(Failure::Check(format!("boundary recovery error {err:.3e} exceeds {limit:e}")));
    }
    Ok(())
}

fn other_frame(run: &Run) -> Result<(Frame, lightray::geometry::CoefficientTriple), Failure> {
    let other = run.scenario.other_triple(&run.registry)?;
    Ok((Frame { g: other.g.clone(), ..run.setup.frame.clone() }, other))
}

fn recover_interior(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let (f1, t1) = other_frame(&run)?;
    let o = run.opts();
    let ta = symbol_table(&run.setup.frame, &run.setup.triple, &run.setup.entries, &o);
    let tb = symbol_table(&f1, &t1, &run.setup.entries, &o);
    let mut bad = false;
    for (k, (a, b)) in ta.rows.iter().zip(&tb.rows).enumerate() {
        if let Some(e) = a.as_ref().err().or(b.as_ref().err()) {
            run.fail_row(k, "symbol_failed", e);
            bad = true;
        }
    }
    if bad {
        return run.finish();
    }
    let close = run.scenario.experiment.a_priori_close;
    let l1 = recover_l1a(&ta, &tb, close)?;
    let l0 = recover_l0q(&ta, &tb, close)?;
    let rows: Vec<Vec<String>> = l1
        .iter()
        .enumerate()
        .map(|(k, r)| vec![k.to_string(), fmt(r.value.re), fmt(r.value.im), r.branch.to_string(), fmt(r.magnitude_defect)])
        .collect();
    run.out.csv("l1a.csv", &strings(&["row", "value_re", "value_im", "branch", "magnitude_defect"]), &rows)?;
    let rows: Vec<Vec<String>> = l0.iter().enumerate().map(|(k, v)| vec![k.to_string(), fmt(v.re), fmt(v.im)]).collect();
    run.out.csv("l0q.csv", &strings(&["row", "value_re", "value_im"]), &rows)?;
    println!("recover-interior: {} rays", l1.len());
    run.finish()
}

fn recover_lens_cmd(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let table = symbol_table(&run.setup.frame, &run.setup.triple, &run.setup.entries, &run.opts());
    let n = run.setup.frame.dim() - 1;
    let mut head = strings(&["row", "lambda0"]);
    head.extend(indexed("y", n));
    head.extend(indexed("eta", n));
    head.extend(strings(&["eta_n", "null_defect"]));
    let mut rows = Vec::new();
    for (k, est) in recover_lens(&run.setup.frame, &table).into_iter().enumerate() {
        match est {
            Ok(e) => {
                let mut row = vec![k.to_string(), fmt(e.lambda0)];
                row.extend(e.y.iter().chain(&e.eta).map(|v| fmt(*v)));
                row.extend([e.eta_n, e.null_defect].map(fmt));
                rows.push(row);
            }
            Err(e) => run.fail_row(k, "lens_failed", e),
        }
    }
    run.out.csv("lens_recovered.csv", &head, &rows)?;
    println!("recover-lens: {} rows recovered", rows.len());
    run.finish()
}

fn gauge_check(c: &Common) -> Outcome {
    let run = Run::open(c)?;
    let dim = run.scenario.metric.dim;
    let lo = match run.scenario.boundary.kind.as_str() {
        "slab" => run.scenario.boundary.params.num_or("lo", 0.0)?,
        "half-space" => 0.0,
        other => return Err(Failure::Config(format!("boundary.kind: gauge-check needs 'slab' or 'half-space', found '{other}'"))),
    };
    let hi = run.scenario.boundary.params.num_or("hi", lo + 1.0)?;
    let collar = Arc::new(FlatCollar { dim, lo, width: (0.5 * (hi - lo)).min(0.4) });
    let check: Vec<Vec<f64>> = run.setup.entries.iter().map(|b: &BoundaryCovector| b.xp.clone()).collect();
    let m = enforce_m3(&run.setup.triple, collar, 3, &check)?;
    let o = run.opts();
    let a = selftest::dn_symbol_table(&run.setup.frame, &run.setup.triple, &run.setup.entries, &o)?;
    let b = selftest::dn_symbol_table(&run.setup.frame, &m.triple, &run.setup.entries, &o)?;
    let gap = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let limit = run.scenario.tolerances.gauge_table;
    let mut run = run;
    let summary = BTreeMap::from([("gap", gap), ("limit", limit), ("normal_jet_residual", m.residual), ("entries", run.setup.entries.len() as f64)]);
    run.out.json("gauge_check.json", "gauge-check", &summary)?;
    println!("gauge-check: table gap {gap:.3e} (limit {limit:e})");
    run.finish()?;
    if !(gap <= limit) {
        return Err(Failure::Check(format!("DN symbol tables differ by {gap:.3e}")));
    }
    Ok(())
}

fn region(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let e = run.scenario.experiment.clone();
    let t_max = e.region_t;
    let raster = region_raster(t_max, e.region_raster[0], e.region_raster[1]);
    let rows: Vec<Vec<String>> = raster.iter().map(|p| vec![fmt(p[0]), fmt(p[1]), fmt(p[2]), (p[3] as u8).to_string()]).collect();
    run.out.csv("region.csv", &strings(&["t", "x0", "x1", "reachable"]), &rows)?;
    let arc = Arc1 { center: e.arc[0], half_width: e.arc[1] };
    let lines = partial_data_line_set(t_max, &arc, (e.line_grid[0], e.line_grid[1], e.line_grid[2]))?;
    let rows: Vec<Vec<String>> = lines.iter().map(|l| vec![fmt(l.z[0]), fmt(l.z[1]), fmt(l.theta[0]), fmt(l.theta[1]), fmt(l.s0), fmt(l.s1)]).collect();
    run.out.csv("lines.csv", &strings(&["z0", "z1", "theta0", "theta1", "s0", "s1"]), &rows)?;
    let summary = BTreeMap::from([
        ("t_max", t_max),
        ("excluded_fraction", excluded_fraction(t_max)),
        ("reachable_fraction_mc", reachable_fraction_mc(t_max, 100_000, run.scenario.seed)),
        ("cones_intersect", cones_intersect(t_max, 4000) as u8 as f64),
        ("lines", lines.len() as f64),
        ("line_endpoint_defect", line_set_defect(&lines, t_max, &arc)),
    ]);
    run.out.json("region.json", "region", &summary)?;
    println!("region: T = {t_max}, {} raster points, {} lines", raster.len(), lines.len());
    run.finish()
}

fn convergence(c: &Common) -> Outcome {
    let mut run = Run::open(c)?;
    let model = run.scenario.layered_model()?;
    let dir = run.scenario.direction()?;
    let sweep = boundary_eps_sweep(&model, &dir, &run.scenario.experiment.eps, &run.scenario.recovery_fan())?;
    run.out.json("convergence.json", "eps-sweep", &sweep)?;
    let band = run.scenario.tolerances.exponent_band;
    let mut off = Vec::new();
    for (k, name) in ["g_boundary", "normal_derivative", "a_boundary", "q"].iter().enumerate() {
        let (e, p) = (sweep.exponents[k], sweep.predicted[k]);
        println!("convergence: {name:<18} exponent {e:.3} (predicted {p})");
        if !((e - p).abs() <= band * p) {
            off.push(*name);
        }
    }
    run.finish()?;
    if !off.is_empty() {
        return Err(Failure::Check(format!("exponents outside the band: {}", off.join(", "))));
    }
    Ok(())
}

fn selftest_cmd(c: &Common) -> Outcome {
    lightray::set_threads(c.threads)?;
    let (mut tol, mut seed, mut dir) = (Tolerances::default(), 0, PathBuf::from("out"));
    if let Some(path) = &c.scenario {
        let s = Scenario::load(path)?;
        (tol, seed, dir) = (s.tolerances.clone(), s.seed, PathBuf::from(&s.output.dir));
    }
    for kv in &c.tol_override {
        tol.apply_override(kv)?;
    }
    let seed = c.seed.unwrap_or(seed);
    let dir = c.out.clone().unwrap_or(dir);
    let suite = selftest::run(&tol, seed);
    let mut w = ArtifactWriter::new(&dir, Stamp::new(&selftest::suite_hash(&tol, seed)))?;
    selftest::write_suite(&suite, &mut w)?;
    let files = w.finish()?;
    for r in &suite.results {
        println!("{}", r.line());
    }
    println!("wrote {} files to {}", files.len(), dir.display());
    if !suite.passed() {
        let failed: Vec<String> = suite.results.iter().filter(|r| !r.pass).map(|r| r.id.to_string()).collect();
        return Err(Failure::Check(format!("criteria failed: {}", failed.join(", "))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Lens(c) => lens(c),
        Command::Transform(c) => transform(c),
        Command::Synth(c) => synth(c),
        Command::RecoverBoundary(c) => recover_boundary(c),
        Command::RecoverInterior(c) => recover_interior(c),
        Command::RecoverLens(c) => recover_lens_cmd(c),
        Command::GaugeCheck(c) => gauge_check(c),
        Command::Region(c) => region(c),
        Command::Convergence(c) => convergence(c),
        Command::Selftest(c) => selftest_cmd(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(4)
        }
    }
}
