//! Default tolerances and numerical parameters.

/// Step for finite-difference metric derivatives (chart units).
pub const H_FD: f64 = 1e-4;
/// Outer step when second derivatives are formed from first-derivative closures.
pub const H_FD2: f64 = 1e-3;
/// Hard floor on |det g|.
pub const DET_FLOOR: f64 = 1e-14;
/// Allowed |H| on the null shell after every accepted step.
pub const SHELL_TOL: f64 = 1e-9;
/// Per-step error tolerance of the adaptive integrator.
pub const STEP_TOL: f64 = 1e-10;
/// Initial step as a fraction of the chart diameter.
pub const STEP_FRACTION: f64 = 1e-2;
/// Smallest step before the integrator reports a collapse.
pub const MIN_STEP: f64 = 1e-13;
/// Required |rho| at a refined exit event.
pub const EXIT_TOL: f64 = 1e-10;
/// Transversality margin |<d rho, x'>| / |x'|.
pub const TRANS_TOL: f64 = 1e-6;
/// Gauss-Kronrod quadrature tolerance.
pub const QUAD_TOL: f64 = 1e-10;
/// Boundary membership for inputs of boundary operations.
pub const ON_BOUNDARY: f64 = 1e-10;
/// Newton tolerance in semigeodesic chart inversion.
pub const CHART_NEWTON: f64 = 1e-12;
/// Fan-parameter spacing of the ray stencils used for transverse derivatives.
pub const STENCIL_H: f64 = 3e-3;
/// Largest condition number accepted by the linear functional solver.
pub const COND_MAX: f64 = 1e8;
/// Branch jump threshold for phase unwrapping along a fan.
pub const BRANCH_JUMP: f64 = std::f64::consts::PI;
/// Default lambda ladder for symbol extraction.
pub const LAMBDA_LADDER: [f64; 5] = [8.0, 16.0, 32.0, 64.0, 128.0];
/// Default boundary grid size per axis.
pub const GRID_POINTS: usize = 256;
/// Minimum samples per oscillation of boundary data.
pub const POINTS_PER_WAVE: f64 = 10.0;
/// Riccati blow-up threshold on the phase Hessian norm.
pub const RICCATI_BLOWUP: f64 = 1e6;
