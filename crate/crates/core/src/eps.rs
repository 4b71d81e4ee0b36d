//! Heat flow across a thin anisotropic layer at positive thickness.
//!
//! The field diffuses in the plane with unit conductivity outside the band
//! |x2| < eps and the diagonal pair (a_tan, a_norm) inside it. Everything is
//! assembled from the symmetric energy
//! E(u) = 1/2 int [ a_tan (d1 u)^2 + a_norm (d2 u)^2 ],
//! so the discrete generator is self-adjoint in the lumped mass inner
//! product, kills constants exactly, conserves mass, and contracts the L2
//! norm for theta >= 1/2.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{Side, SplitField, SplitGrid};
use crate::linalg::{pcg_solve, Csr, SolveError};

/// Errors from layer-problem setup and time stepping.
#[derive(Debug, Error)]
pub enum EpsError {
    #[error("{0}")]
    Domain(String),
    #[error("layer half-thickness {eps} is not an integer multiple of dy = {dy}; refusing to smear the interface")]
    Alignment { eps: f64, dy: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Layer scaling: half-thickness `eps`, tangential conductivity `a_tan` and
/// normal conductivity `a_norm` inside the band (unit conductivity outside).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScaleParams {
    pub eps: f64,
    pub a_tan: f64,
    pub a_norm: f64,
}

impl ScaleParams {
    pub fn new(eps: f64, a_tan: f64, a_norm: f64) -> Result<Self, EpsError> {
        for (name, v) in [("eps", eps), ("a_tan", a_tan), ("a_norm", a_norm)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(EpsError::Domain(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(ScaleParams { eps, a_tan, a_norm })
    }

    /// Tangent total conductivity eps * a_tan.
    pub fn c(&self) -> f64 {
        self.eps * self.a_tan
    }
    /// Normal total resistance eps / a_norm.
    pub fn r(&self) -> f64 {
        self.eps / self.a_norm
    }
    /// Mixing scale sqrt(C/R).
    pub fn m(&self) -> f64 {
        (self.c() / self.r()).sqrt()
    }
    /// Splitting length sqrt(C*R).
    pub fn l(&self) -> f64 {
        (self.c() * self.r()).sqrt()
    }
}

/// Edge direction in the merged-node graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Axis {
    X1,
    X2,
}

/// Visits every edge of the merged grid (rows t = 0..=2 ny over x2 in
/// [-Ly, Ly], interface at t = ny) with its energy coefficient c, so that
/// E(u) = sum_edges c (u_a - u_b)^2. Tangential coefficients are averaged
/// arithmetically over the node strip (exact for the piecewise profile);
/// normal coefficients harmonically over the edge segment (series
/// resistance). The callback receives (a, b, c, edge midpoint, axis) with
/// b on the + side of a.
fn for_each_edge(
    grid: &SplitGrid,
    s: &ScaleParams,
    mut f: impl FnMut(usize, usize, f64, (f64, f64), Axis),
) {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let ly = grid.ly;
    let ncol = nx + 1;
    let x2_of = |t: usize| (t as f64 - ny as f64) * dy;
    let node = |t: usize, j: usize| t * ncol + j;
    let in_layer = |a: f64, b: f64| (b.min(s.eps) - a.max(-s.eps)).max(0.0);

    for t in 0..=2 * ny {
        let x2 = x2_of(t);
        let lo = (x2 - 0.5 * dy).max(-ly);
        let hi = (x2 + 0.5 * dy).min(ly);
        let seg = in_layer(lo, hi);
        let a_strip = s.a_tan * seg + ((hi - lo) - seg);
        let c = a_strip / (2.0 * dx);
        for j in 0..nx {
            f(node(t, j), node(t, j + 1), c, (grid.x1(j) + 0.5 * dx, x2), Axis::X1);
        }
    }
    for t in 0..2 * ny {
        let a0 = x2_of(t);
        let seg = in_layer(a0, a0 + dy);
        let res = seg / s.a_norm + (dy - seg);
        for j in 0..ncol {
            let c = grid.wx(j) / (2.0 * res);
            f(node(t, j), node(t + 1, j), c, (grid.x1(j), a0 + 0.5 * dy), Axis::X2);
        }
    }
}

/// Trapezoid mass weights of the merged grid (2 ny + 1 rows).
pub(crate) fn merged_mass(grid: &SplitGrid) -> Vec<f64> {
    let nrow = 2 * grid.ny + 1;
    let ncol = grid.nx + 1;
    let mut mass = vec![0.0; nrow * ncol];
    for t in 0..nrow {
        let wy = if t == 0 || t == nrow - 1 { 0.5 * grid.dy() } else { grid.dy() };
        for j in 0..ncol {
            mass[t * ncol + j] = wy * grid.wx(j);
        }
    }
    mass
}

/// Merged-node vector of a (continuous) split field; the two interface rows
/// are averaged into the single merged interface row.
pub fn to_merged(f: &SplitField) -> Vec<f64> {
    let ny = f.grid.ny;
    let ncol = f.grid.nx + 1;
    let mut v = vec![0.0; (2 * ny + 1) * ncol];
    for t in 0..=2 * ny {
        for j in 0..ncol {
            v[t * ncol + j] = match t.cmp(&ny) {
                std::cmp::Ordering::Greater => f.at(Side::Plus, t - ny, j),
                std::cmp::Ordering::Less => f.at(Side::Minus, ny - t, j),
                std::cmp::Ordering::Equal => {
                    0.5 * (f.at(Side::Plus, 0, j) + f.at(Side::Minus, 0, j))
                }
            };
        }
    }
    v
}

/// Split-field view of a merged-node vector (interface row duplicated).
pub fn from_merged(grid: SplitGrid, v: &[f64]) -> SplitField {
    let ny = grid.ny;
    let ncol = grid.nx + 1;
    assert_eq!(v.len(), (2 * ny + 1) * ncol, "merged vector length mismatch");
    let mut f = SplitField::zeros(grid);
    for i in 0..=ny {
        for j in 0..ncol {
            f.sheet_mut(Side::Plus)[i * ncol + j] = v[(ny + i) * ncol + j];
            f.sheet_mut(Side::Minus)[i * ncol + j] = v[(ny - i) * ncol + j];
        }
    }
    f
}

/// Discrete layer operator: symmetric positive-semidefinite stiffness of the
/// energy form plus the lumped mass diagonal. The generator acting on merged
/// fields is -W^{-1} A (self-adjoint in the W inner product, zero row sums).
pub struct EpsOperator {
    pub grid: SplitGrid,
    pub scales: ScaleParams,
    pub stiff: Csr,
    pub mass: Vec<f64>,
}

impl EpsOperator {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Time-derivative field -W^{-1} A u of a merged vector.
    pub fn apply_generator(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; u.len()];
        self.stiff.apply_add(u, &mut y, -1.0);
        for (yi, w) in y.iter_mut().zip(&self.mass) {
            *yi /= w;
        }
        y
    }
}

/// Assembles the layer operator. The layer interface |x2| = eps must sit on
/// a grid line and stay below half the domain half-height.
pub fn assemble_eps_operator(grid: &SplitGrid, s: &ScaleParams) -> Result<EpsOperator, EpsError> {
    let dy = grid.dy();
    let k = s.eps / dy;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(EpsError::Alignment { eps: s.eps, dy });
    }
    if s.eps >= 0.5 * grid.ly {
        return Err(EpsError::Domain(format!(
            "layer half-thickness {} must stay below half the domain half-height {}",
            s.eps,
            0.5 * grid.ly
        )));
    }
    let n = (2 * grid.ny + 1) * (grid.nx + 1);
    let mut pairs = Vec::with_capacity(2 * n);
    for_each_edge(grid, s, |a, b, c, _, _| pairs.push((a, b, c)));
    let stiff = Csr::from_pairs(n, &pairs, &[]);
    Ok(EpsOperator { grid: *grid, scales: *s, stiff, mass: merged_mass(grid) })
}

fn check_step_params(op: &EpsOperator, dt: f64, theta: f64) -> Result<(), EpsError> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(EpsError::Domain(format!("dt must be positive and finite, got {dt}")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(EpsError::Domain(format!("theta must lie in [0, 1], got {theta}")));
    }
    if theta < 0.5 {
        let amax = op.scales.a_tan.max(op.scales.a_norm).max(1.0);
        let bound = op.grid.dy() * op.grid.dy() / (2.0 * amax);
        if dt > bound {
            return Err(EpsError::Domain(format!(
                "explicit stepping (theta = {theta}) requires dt <= {bound:.3e}, got {dt:.3e}"
            )));
        }
    }
    Ok(())
}

/// One theta-scheme step of the merged vector:
/// (W + theta dt A) u1 = (W - (1 - theta) dt A) u0.
fn advance(op: &EpsOperator, u: &mut Vec<f64>, dt: f64, theta: f64) -> Result<(), SolveError> {
    let mut rhs: Vec<f64> = u.iter().zip(&op.mass).map(|(&ui, &w)| w * ui).collect();
    op.stiff.apply_add(u, &mut rhs, -(1.0 - theta) * dt);
    if theta == 0.0 {
        for (ui, (r, w)) in u.iter_mut().zip(rhs.iter().zip(&op.mass)) {
            *ui = r / w;
        }
        return Ok(());
    }
    pcg_solve(&op.mass, 1.0, &op.stiff, theta * dt, &rhs, u, None, 1e-13, 10_000)?;
    Ok(())
}

/// One theta-scheme step on a split field (default scheme is theta = 1/2).
pub fn step(
    state: &SplitField,
    op: &EpsOperator,
    dt: f64,
    theta: f64,
) -> Result<SplitField, EpsError> {
    check_step_params(op, dt, theta)?;
    let mut u = to_merged(state);
    advance(op, &mut u, dt, theta)?;
    Ok(from_merged(op.grid, &u))
}

/// Recorded evolution: snapshot times and fields, always including the
/// initial state and the final one.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SplitField>,
}

/// Trapezoidal (theta = 1/2) evolution to `t_end`, keeping every
/// `every`-th step (plus first and last) in the trajectory.
pub fn solve_eps_recorded(
    u0: &SplitField,
    t_end: f64,
    dt: f64,
    s: &ScaleParams,
    every: usize,
) -> Result<Trajectory, EpsError> {
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(EpsError::Domain(format!("t_end must be nonnegative, got {t_end}")));
    }
    if u0.upper.iter().chain(&u0.lower).any(|v| !v.is_finite()) {
        return Err(EpsError::Domain("initial state has non-finite entries".into()));
    }
    let mut traj = Trajectory { times: vec![0.0], states: vec![u0.clone()] };
    if t_end == 0.0 {
        return Ok(traj);
    }
    let op = assemble_eps_operator(&u0.grid, s)?;
    check_step_params(&op, dt, 0.5)?;
    let every = every.max(1);
    let nstep = ((t_end / dt) - 1e-12).ceil().max(1.0) as usize;
    let mut u = to_merged(u0);
    let mut t = 0.0;
    for k in 1..=nstep {
        let this_dt = if k == nstep { t_end - t } else { dt };
        if this_dt <= 0.0 {
            break;
        }
        advance(&op, &mut u, this_dt, 0.5)?;
        t += this_dt;
        if k % every == 0 || k == nstep {
            traj.times.push(t);
            traj.states.push(from_merged(op.grid, &u));
        }
    }
    Ok(traj)
}

/// Field at `t_end` (trapezoidal scheme throughout).
pub fn solve_eps(
    u0: &SplitField,
    t_end: f64,
    dt: f64,
    s: &ScaleParams,
) -> Result<SplitField, EpsError> {
    let mut traj = solve_eps_recorded(u0, t_end, dt, s, usize::MAX)?;
    Ok(traj.states.pop().expect("trajectory is never empty"))
}

/// Weak-form defect
/// | (u(0) - u(T), g)_W  -  int_0^T E(u(s), g) ds |
/// with trapezoidal time quadrature over the recorded snapshots. The test
/// gradient is supplied analytically and evaluated at edge midpoints, which
/// keeps the check independent of the discrete identity the scheme itself
/// satisfies; the defect measures genuine consistency, O(dt^2 + dx^2).
pub fn weak_residual(
    traj: &Trajectory,
    g: &SplitField,
    grad_g: impl Fn(f64, f64) -> (f64, f64),
    s: &ScaleParams,
) -> Result<f64, EpsError> {
    if traj.states.len() < 2 || traj.times.len() != traj.states.len() {
        return Err(EpsError::Domain(
            "trajectory must hold at least the initial and final snapshots".into(),
        ));
    }
    let grid = traj.states[0].grid;
    if g.grid != grid {
        return Err(EpsError::Domain("test function lives on a different grid".into()));
    }
    let mass = merged_mass(&grid);
    let gm = to_merged(g);
    let first = to_merged(&traj.states[0]);
    let last = to_merged(traj.states.last().unwrap());
    let lhs: f64 = mass
        .iter()
        .zip(first.iter().zip(&last))
        .zip(&gm)
        .map(|((&w, (&a, &b)), &gv)| w * (a - b) * gv)
        .sum();

    // E(u, g) with the analytic gradient: sum_edges c (u_b - u_a) dg,
    // dg = (directional derivative at the midpoint) * edge length
    let (dx, dy) = (grid.dx(), grid.dy());
    let energies: Vec<f64> = traj
        .states
        .iter()
        .map(|state| {
            let u = to_merged(state);
            let mut e = 0.0;
            for_each_edge(&grid, s, |a, b, c, mid, axis| {
                let (gx, gy) = grad_g(mid.0, mid.1);
                let dg = match axis {
                    Axis::X1 => gx * dx,
                    Axis::X2 => gy * dy,
                };
                e += c * (u[b] - u[a]) * dg;
            });
            e
        })
        .collect();
    let mut rhs = 0.0;
    for w in traj.times.windows(2).zip(energies.windows(2)) {
        let (ts, es) = w;
        rhs += 0.5 * (ts[1] - ts[0]) * (es[0] + es[1]);
    }
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_diff, make_grid};

    fn gaussian_field(grid: SplitGrid, c1: f64, c2: f64, sigma: f64) -> SplitField {
        SplitField::from_fn(grid, |x1, x2| {
            (-((x1 - c1).powi(2) + (x2 - c2).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn scale_params_identities_and_validation() {
        let s = ScaleParams::new(0.01, 3.0, 0.2).unwrap();
        assert!((s.c() - 0.03).abs() < 1e-15);
        assert!((s.r() - 0.05).abs() < 1e-15);
        assert!((s.l() - s.m() * s.r()).abs() < 1e-15 * s.l());
        assert!((s.c() - s.m() * s.l()).abs() < 1e-15 * s.c());
        assert!(ScaleParams::new(0.0, 1.0, 1.0).is_err());
        assert!(ScaleParams::new(0.1, -1.0, 1.0).is_err());
        assert!(ScaleParams::new(0.1, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn unit_coefficients_give_plain_half_laplacian() {
        let grid = make_grid(2.0, 1.0, 16, 8).unwrap();
        let s = ScaleParams::new(0.25, 1.0, 1.0).unwrap();
        let op = assemble_eps_operator(&grid, &s).unwrap();
        let f = gaussian_field(grid, 0.3, -0.2, 0.6);
        let u = to_merged(&f);
        let gu = op.apply_generator(&u);
        let (dx, dy) = (grid.dx(), grid.dy());
        let ncol = grid.nx + 1;
        for t in 1..2 * grid.ny {
            for j in 1..grid.nx {
                let i = t * ncol + j;
                let lap = (u[i + 1] + u[i - 1] - 2.0 * u[i]) / (2.0 * dx * dx)
                    + (u[i + ncol] + u[i - ncol] - 2.0 * u[i]) / (2.0 * dy * dy);
                assert!(
                    (gu[i] - lap).abs() < 1e-12 * lap.abs().max(1.0),
                    "node ({t},{j}): {} vs {lap}",
                    gu[i]
                );
            }
        }
    }

    #[test]
    fn operator_is_symmetric_with_zero_row_sums() {
        let grid = make_grid(1.0, 1.0, 8, 4).unwrap();
        let s = ScaleParams::new(0.25, 5.0, 0.04).unwrap();
        let op = assemble_eps_operator(&grid, &s).unwrap();
        assert_eq!(op.stiff.symmetry_defect(), 0.0);
        assert!(op.stiff.row_sum_defect() < 1e-14);
        // W-self-adjointness of the generator on deterministic probes
        let f1 = gaussian_field(grid, 0.2, 0.1, 0.4);
        let f2 = gaussian_field(grid, -0.4, -0.3, 0.7);
        let (u, v) = (to_merged(&f1), to_merged(&f2));
        let (gu, gv) = (op.apply_generator(&u), op.apply_generator(&v));
        let pair_a: f64 = gu.iter().zip(&v).zip(&op.mass).map(|((&a, &b), &w)| w * a * b).sum();
        let pair_b: f64 = u.iter().zip(&gv).zip(&op.mass).map(|((&a, &b), &w)| w * a * b).sum();
        assert!((pair_a - pair_b).abs() < 1e-12 * pair_a.abs().max(1.0));
    }

    #[test]
    fn alignment_and_thickness_are_enforced() {
        let grid = make_grid(1.0, 1.0, 8, 8).unwrap(); // dy = 0.125
        let ok = ScaleParams::new(0.25, 1.0, 1.0).unwrap();
        assert!(assemble_eps_operator(&grid, &ok).is_ok());
        let misaligned = ScaleParams::new(0.3, 1.0, 1.0).unwrap();
        assert!(matches!(
            assemble_eps_operator(&grid, &misaligned),
            Err(EpsError::Alignment { .. })
        ));
        let thick = ScaleParams::new(0.5, 1.0, 1.0).unwrap();
        assert!(matches!(assemble_eps_operator(&grid, &thick), Err(EpsError::Domain(_))));
    }

    #[test]
    fn constant_state_is_a_fixed_point_and_mass_is_conserved() {
        let grid = make_grid(2.0, 1.0, 16, 8).unwrap();
        let s = ScaleParams::new(0.125, 2.0, 0.5).unwrap();
        let op = assemble_eps_operator(&grid, &s).unwrap();
        let c = SplitField::from_fn(grid, |_, _| 4.5);
        let stepped = step(&c, &op, 0.05, 0.5).unwrap();
        assert!(l2_diff(&c, &stepped) < 1e-12);

        let mut f = gaussian_field(grid, 0.0, 0.3, 0.5);
        let mass0 = f.mass();
        let mut norm_prev = f.norm_w();
        for _ in 0..10 {
            f = step(&f, &op, 0.02, 0.5).unwrap();
            let norm = f.norm_w();
            assert!(norm <= norm_prev * (1.0 + 1e-12), "L2 norm must not grow");
            norm_prev = norm;
        }
        assert!((f.mass() - mass0).abs() < 1e-10 * mass0.abs());
    }

    #[test]
    fn implicit_euler_respects_the_maximum_principle() {
        let grid = make_grid(2.0, 1.0, 16, 8).unwrap();
        let s = ScaleParams::new(0.25, 10.0, 0.1).unwrap();
        let op = assemble_eps_operator(&grid, &s).unwrap();
        let mut f = gaussian_field(grid, 0.5, 0.4, 0.3);
        let (lo, hi) = (0.0, 1.0);
        for _ in 0..5 {
            f = step(&f, &op, 0.1, 1.0).unwrap();
            for v in f.upper.iter().chain(&f.lower) {
                assert!(*v >= lo - 1e-11 && *v <= hi + 1e-11);
            }
        }
    }

    #[test]
    fn explicit_step_requires_the_stability_bound() {
        let grid = make_grid(1.0, 1.0, 8, 8).unwrap();
        let s = ScaleParams::new(0.25, 4.0, 1.0).unwrap();
        let op = assemble_eps_operator(&grid, &s).unwrap();
        let f = gaussian_field(grid, 0.0, 0.0, 0.5);
        // dy^2 / (2 max a) = 0.125^2 / 8
        assert!(step(&f, &op, 0.01, 0.0).is_err());
        assert!(step(&f, &op, 0.00195, 0.0).is_ok());
        assert!(step(&f, &op, 0.01, 0.3).is_err());
        assert!(step(&f, &op, 0.01, 0.5).is_ok());
    }

    #[test]
    fn reflecting_initial_data_reflects_the_solution() {
        let grid = make_grid(2.0, 1.0, 16, 8).unwrap();
        let s = ScaleParams::new(0.25, 3.0, 0.2).unwrap();
        let bump = |x1: f64, x2: f64| {
            (-((x1 - 0.4).powi(2) + (x2 - 0.5).powi(2)) / 0.18).exp()
        };
        let u0 = SplitField::from_fn(grid, bump);
        let u0r = SplitField::from_fn(grid, |x1, x2| bump(x1, -x2));
        let sol = solve_eps(&u0, 0.2, 0.02, &s).unwrap();
        let solr = solve_eps(&u0r, 0.2, 0.02, &s).unwrap();
        for i in 0..=grid.ny {
            for j in 0..=grid.nx {
                let d = (sol.at(Side::Plus, i, j) - solr.at(Side::Minus, i, j)).abs();
                assert!(d < 1e-11, "reflection defect {d} at ({i},{j})");
            }
        }
    }

    #[test]
    fn matches_heat_kernel_for_unit_conductivity() {
        // du/dt = (1/2) lap u spreads a Gaussian of variance sigma^2 to
        // variance sigma^2 + t
        let grid = make_grid(8.0, 8.0, 128, 128).unwrap();
        let s = ScaleParams::new(0.25, 1.0, 1.0).unwrap();
        let (c1, c2, sig, t) = (0.3, 0.7, 1.0, 0.5);
        let u0 = gaussian_field(grid, c1, c2, sig);
        let sol = solve_eps(&u0, t, 0.01, &s).unwrap();
        let v = sig * sig + t;
        let exact = SplitField::from_fn(grid, |x1, x2| {
            sig * sig / v * (-((x1 - c1).powi(2) + (x2 - c2).powi(2)) / (2.0 * v)).exp()
        });
        let rel = l2_diff(&sol, &exact) / exact.norm_w();
        assert!(rel < 2e-3, "heat-kernel relative error {rel}");
    }

    #[test]
    fn zero_time_and_zero_data_edge_cases() {
        let grid = make_grid(1.0, 1.0, 8, 4).unwrap();
        let s = ScaleParams::new(0.25, 2.0, 2.0).unwrap();
        let f = gaussian_field(grid, 0.0, 0.0, 0.4);
        let same = solve_eps(&f, 0.0, 0.01, &s).unwrap();
        assert_eq!(l2_diff(&f, &same), 0.0);

        let zero = SplitField::zeros(grid);
        let traj = solve_eps_recorded(&zero, 0.1, 0.02, &s, 1).unwrap();
        let g = gaussian_field(grid, 0.1, 0.2, 0.5);
        let r = weak_residual(&traj, &g, |_, _| (0.0, 0.0), &s).unwrap();
        assert_eq!(r, 0.0);

        let traj2 = solve_eps_recorded(&f, 0.1, 0.02, &s, 1).unwrap();
        let r2 = weak_residual(&traj2, &zero, |_, _| (0.0, 0.0), &s).unwrap();
        assert_eq!(r2, 0.0);
    }

    #[test]
    fn weak_residual_shrinks_under_refinement() {
        // polynomial bump test function, C^2, supported in r < rho
        let (c1, c2, rho) = (0.2, -0.1, 1.6);
        let gf = move |x1: f64, x2: f64| {
            let q = ((x1 - c1).powi(2) + (x2 - c2).powi(2)) / (rho * rho);
            if q < 1.0 {
                (1.0 - q).powi(3)
            } else {
                0.0
            }
        };
        let grad = move |x1: f64, x2: f64| {
            let q = ((x1 - c1).powi(2) + (x2 - c2).powi(2)) / (rho * rho);
            if q < 1.0 {
                let d = -6.0 * (1.0 - q).powi(2) / (rho * rho);
                (d * (x1 - c1), d * (x2 - c2))
            } else {
                (0.0, 0.0)
            }
        };
        let s = ScaleParams::new(0.25, 2.0, 0.5).unwrap();
        let run = |n: usize, dt: f64| {
            let grid = make_grid(4.0, 4.0, n, n).unwrap();
            let u0 = gaussian_field(grid, 0.0, 0.0, 0.7);
            let traj = solve_eps_recorded(&u0, 0.25, dt, &s, 1).unwrap();
            let g = SplitField::from_fn(grid, gf);
            weak_residual(&traj, &g, grad, &s).unwrap()
        };
        let coarse = run(32, 0.025);
        let fine = run(64, 0.0125);
        assert!(
            coarse > 3.0 * fine,
            "expected >= 3x residual reduction, got {coarse} -> {fine}"
        );
        assert!(fine < 1e-3, "fine-grid residual too large: {fine}");
    }
}
