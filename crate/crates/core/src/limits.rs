//! The seven limiting interface evolutions on the split grid.
//!
//! Each sheet carries the half-plane diffusion (half the Laplacian); the
//! interface row realizes one of seven couplings: full transmission (I),
//! Robin exchange across the gap (II), reflection (III), transmission with
//! tangential trace diffusion (IV), absorption (V), and the two nonlocal
//! couplings driven by the interface kernels (VI and its infinite-range
//! shape VII).
//!
//! Everything is assembled as a symmetric quadratic form: a pair list
//! (a, b, c) contributing c (u_a - u_b)^2 to the energy, plus a lumped
//! trapezoid mass diagonal W. The generator is -W^{-1} A, exactly
//! self-adjoint in the W inner product with zero row sums, so mass
//! conservation, L2 contraction and the maximum principle hold at the
//! discrete level for the conservative phases; phase V pins the interface
//! rows to zero instead and loses mass monotonically.

use crate::eps::{from_merged, merged_mass, to_merged};
use crate::grid::{Side, SplitField, SplitGrid};
use crate::kernels::{
    levy_apply, opposite_convolve, opposite_mode_masses, opposite_total_mass, same_mode_masses,
    KernelError, TraceFn,
};
use crate::linalg::{pcg_solve, Csr, SolveError};
use crate::phase::Phase;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid parameter: {0}")]
    Domain(String),
    #[error("nonlocal interface coupling requires nx to be a power of two, got {0}")]
    FftSize(usize),
    #[error("linear solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("kernel error: {0}")]
    Kernel(#[from] KernelError),
}

/// How the unknowns are laid out. Phases whose solutions have a continuous
/// trace (I, IV) merge the two interface rows into one; the others keep the
/// two sheets as independent blocks so the trace may jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// (2 ny + 1) x (nx + 1) nodes, row t at x2 = (t - ny) dy
    Merged,
    /// two (ny + 1) x (nx + 1) sheets, upper block first, row 0 on the line
    Split,
}

fn layout_of(phase: &Phase) -> Layout {
    match phase {
        Phase::I | Phase::IV { .. } => Layout::Merged,
        _ => Layout::Split,
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), LimitError> {
    if !(v > 0.0) {
        return Err(LimitError::Domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_phase(grid: &SplitGrid, phase: &Phase) -> Result<(), LimitError> {
    match *phase {
        Phase::I | Phase::III | Phase::V => Ok(()),
        Phase::II { kappa } => check_positive("kappa", kappa),
        Phase::IV { lambda } => check_positive("lambda", lambda),
        Phase::VI { mu, ell } => {
            check_positive("mu", mu)?;
            check_positive("ell", ell)?;
            if ell.is_infinite() {
                return Err(LimitError::Domain(
                    "the infinite-range interface coupling is its own phase (VII)".into(),
                ));
            }
            if !grid.nx.is_power_of_two() {
                return Err(LimitError::FftSize(grid.nx));
            }
            Ok(())
        }
        Phase::VII { mu } => {
            check_positive("mu", mu)?;
            if !grid.nx.is_power_of_two() {
                return Err(LimitError::FftSize(grid.nx));
            }
            Ok(())
        }
    }
}

/// Assembled limiting evolution: symmetric positive-semidefinite stiffness
/// of the interface energy plus the lumped mass diagonal; the generator is
/// -W^{-1} A. Phase V additionally carries the active-node mask that pins
/// the interface rows.
pub struct LimitOperator {
    pub grid: SplitGrid,
    pub phase: Phase,
    pub stiff: Csr,
    pub mass: Vec<f64>,
    layout: Layout,
    /// false on rows held at zero (phase V interface rows)
    active: Option<Vec<bool>>,
}

impl LimitOperator {
    pub fn n(&self) -> usize {
        self.mass.len()
    }

    /// Internal vector of a split field (merged layouts average the two
    /// interface rows, projecting onto the continuous-trace domain).
    fn flatten(&self, f: &SplitField) -> Vec<f64> {
        match self.layout {
            Layout::Merged => to_merged(f),
            Layout::Split => {
                let mut v = f.upper.clone();
                v.extend_from_slice(&f.lower);
                v
            }
        }
    }

    fn unflatten(&self, v: &[f64]) -> SplitField {
        match self.layout {
            Layout::Merged => from_merged(self.grid, v),
            Layout::Split => {
                let m = v.len() / 2;
                SplitField { grid: self.grid, upper: v[..m].to_vec(), lower: v[m..].to_vec() }
            }
        }
    }

    /// Time-derivative field -W^{-1} A u (zero on pinned rows).
    pub fn apply_generator(&self, f: &SplitField) -> SplitField {
        let u = self.flatten(f);
        let mut y = vec![0.0; u.len()];
        self.stiff.apply_add(&u, &mut y, -1.0);
        for (yi, w) in y.iter_mut().zip(&self.mass) {
            *yi /= w;
        }
        if let Some(active) = &self.active {
            for (yi, &keep) in y.iter_mut().zip(active) {
                if !keep {
                    *yi = 0.0;
                }
            }
        }
        self.unflatten(&y)
    }

    /// One theta-scheme step (W + theta dt A) u1 = (W - (1-theta) dt A) u0.
    /// Explicit stepping is not offered: the nonlocal rows put no useful
    /// bound on dt, so theta must lie in [1/2, 1].
    pub fn step(&self, state: &SplitField, dt: f64, theta: f64) -> Result<SplitField, LimitError> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(LimitError::Domain(format!("dt must be positive and finite, got {dt}")));
        }
        if !(0.5..=1.0).contains(&theta) {
            return Err(LimitError::Domain(format!("theta must lie in [1/2, 1], got {theta}")));
        }
        let mut u = self.flatten(state);
        self.project(&mut u);
        self.advance(&mut u, dt, theta)?;
        Ok(self.unflatten(&u))
    }

    fn advance(&self, u: &mut Vec<f64>, dt: f64, theta: f64) -> Result<(), SolveError> {
        let mut rhs: Vec<f64> = u.iter().zip(&self.mass).map(|(&ui, &w)| w * ui).collect();
        self.stiff.apply_add(u, &mut rhs, -(1.0 - theta) * dt);
        pcg_solve(
            &self.mass,
            1.0,
            &self.stiff,
            theta * dt,
            &rhs,
            u,
            self.active.as_deref(),
            1e-13,
            20_000,
        )?;
        Ok(())
    }

    /// Zeroes pinned rows in place; true when anything nonzero was dropped.
    fn project(&self, u: &mut [f64]) -> bool {
        let Some(active) = &self.active else { return false };
        let mut changed = false;
        for (ui, &keep) in u.iter_mut().zip(active) {
            if !keep && *ui != 0.0 {
                *ui = 0.0;
                changed = true;
            }
        }
        changed
    }
}

/// Assembles the limiting operator for a phase on the split grid.
pub fn assemble_limit_operator(
    grid: &SplitGrid,
    phase: &Phase,
) -> Result<LimitOperator, LimitError> {
    check_phase(grid, phase)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = (grid.dx(), grid.dy());
    let ncol = nx + 1;
    let wx: Vec<f64> = (0..ncol).map(|j| grid.wx(j)).collect();
    let layout = layout_of(phase);
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

    let (n, mass) = match layout {
        Layout::Merged => {
            let nrow = 2 * ny + 1;
            let node = |t: usize, j: usize| t * ncol + j;
            for t in 0..nrow {
                let wy = if t == 0 || t == nrow - 1 { 0.5 * dy } else { dy };
                let cx = wy / (2.0 * dx);
                for j in 0..nx {
                    pairs.push((node(t, j), node(t, j + 1), cx));
                }
            }
            for t in 0..nrow - 1 {
                for (j, &w) in wx.iter().enumerate() {
                    pairs.push((node(t, j), node(t + 1, j), w / (2.0 * dy)));
                }
            }
            if let Phase::IV { lambda } = *phase {
                // tangential trace energy lambda * int |(trace u)'|^2
                for j in 0..nx {
                    pairs.push((node(ny, j), node(ny, j + 1), lambda / dx));
                }
            }
            (nrow * ncol, merged_mass(grid))
        }
        Layout::Split => {
            let m = (ny + 1) * ncol;
            for off in [0, m] {
                for i in 0..=ny {
                    let cx = grid.wy(i) / (2.0 * dx);
                    for j in 0..nx {
                        pairs.push((off + i * ncol + j, off + i * ncol + j + 1, cx));
                    }
                }
                for i in 0..ny {
                    for (j, &w) in wx.iter().enumerate() {
                        pairs.push((off + i * ncol + j, off + (i + 1) * ncol + j, w / (2.0 * dy)));
                    }
                }
            }
            match *phase {
                Phase::II { kappa } => {
                    // gap-exchange energy (kappa/4) * int (trace+ - trace-)^2
                    for (j, &w) in wx.iter().enumerate() {
                        pairs.push((j, m + j, 0.25 * kappa * w));
                    }
                }
                Phase::VI { mu, ell } => {
                    push_nonlocal_pairs(&mut pairs, nx, dx, &wx, mu, ell, m);
                }
                Phase::VII { mu } => {
                    push_nonlocal_pairs(&mut pairs, nx, dx, &wx, mu, f64::INFINITY, m);
                }
                _ => {}
            }
            let mut mass = vec![0.0; 2 * m];
            for off in [0, m] {
                for i in 0..=ny {
                    for (j, &w) in wx.iter().enumerate() {
                        mass[off + i * ncol + j] = grid.wy(i) * w;
                    }
                }
            }
            (2 * m, mass)
        }
    };

    let stiff = Csr::from_pairs(n, &pairs, &[]);
    let active = if matches!(phase, Phase::V) {
        let mut a = vec![true; n];
        let m = (ny + 1) * ncol;
        for j in 0..ncol {
            a[j] = false;
            a[m + j] = false;
        }
        Some(a)
    } else {
        None
    };
    Ok(LimitOperator { grid: *grid, phase: phase.clone(), stiff, mass, layout, active })
}

/// Pair list of the nonlocal interface energy
///   (mu/8pi) iint (g+(x)-g+(y))^2 k_same + (same for g-)
/// + (mu/4pi) iint (g+(x)-g-(y))^2 k_opp
/// on the trace rows, with traces extended by their end values beyond the
/// window. Same-mode cell masses are moment-matched (second moment over the
/// cell divided by the squared node distance), which removes the
/// near-diagonal overweighting of difference-squared forms; the sub-cell
/// part of the diagonal enters as an extra nearest-neighbor coefficient via
/// the kernel's small-cell second moment. At ell = infinity the opposite
/// masses vanish and the same-mode masses take their 2/d^2 limit, so the
/// infinite-range phase is the entrywise limit of the finite-range one.
fn push_nonlocal_pairs(
    pairs: &mut Vec<(usize, usize, f64)>,
    nx: usize,
    dx: f64,
    wx: &[f64],
    mu: f64,
    ell: f64,
    lower_off: usize,
) {
    let coef = mu / (8.0 * PI);
    let sm = same_mode_masses(nx, dx, ell);
    for off in [0, lower_off] {
        for a in 0..=nx {
            for b in a + 1..=nx {
                let mut c = coef * (wx[a] + wx[b]) * sm.matched[b - a - 1];
                if b == a + 1 {
                    c += coef * sm.diag / dx;
                }
                pairs.push((off + a, off + b, c));
            }
            // kernel mass beyond the window couples to the clamped end value
            if a >= 1 {
                pairs.push((off + a, off, 2.0 * coef * wx[a] * sm.tail[a]));
            }
            if a < nx {
                pairs.push((off + a, off + nx, 2.0 * coef * wx[a] * sm.tail[nx - a]));
            }
        }
    }
    if ell.is_infinite() {
        return;
    }
    let om = opposite_mode_masses(nx, dx, ell);
    for a in 0..=nx {
        for b in 0..=nx {
            let r = a.abs_diff(b);
            let mcell = if r == 0 { om.diag } else { om.cell[r - 1] };
            pairs.push((a, lower_off + b, coef * (wx[a] + wx[b]) * mcell));
        }
        // out-of-window tails, both orientations so the sheets stay symmetric
        pairs.push((a, lower_off, 2.0 * coef * wx[a] * om.tail[a]));
        pairs.push((a, lower_off + nx, 2.0 * coef * wx[a] * om.tail[nx - a]));
        pairs.push((0, lower_off + a, 2.0 * coef * wx[a] * om.tail[a]));
        pairs.push((nx, lower_off + a, 2.0 * coef * wx[a] * om.tail[nx - a]));
    }
}

/// Trapezoidal (theta = 1/2) evolution of u0 to t_end. Phase V initial data
/// is projected onto the operator domain (interface rows zeroed) with a
/// warning when that changes anything.
pub fn solve_limit(
    u0: &SplitField,
    t_end: f64,
    dt: f64,
    phase: &Phase,
    grid: &SplitGrid,
) -> Result<SplitField, LimitError> {
    if u0.grid != *grid {
        return Err(LimitError::Domain("initial state lives on a different grid".into()));
    }
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(LimitError::Domain(format!("t_end must be nonnegative, got {t_end}")));
    }
    if u0.upper.iter().chain(&u0.lower).any(|v| !v.is_finite()) {
        return Err(LimitError::Domain("initial state has non-finite entries".into()));
    }
    let op = assemble_limit_operator(grid, phase)?;
    let mut u = op.flatten(u0);
    if op.project(&mut u) {
        eprintln!("warning: interface rows of the initial state were zeroed to match the absorbing phase");
    }
    if t_end > 0.0 {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(LimitError::Domain(format!("dt must be positive and finite, got {dt}")));
        }
        let nstep = ((t_end / dt) - 1e-12).ceil().max(1.0) as usize;
        let mut t = 0.0;
        for k in 1..=nstep {
            let this_dt = if k == nstep { t_end - t } else { dt };
            if this_dt <= 0.0 {
                break;
            }
            op.advance(&mut u, this_dt, 0.5)?;
            t += this_dt;
        }
    }
    Ok(op.unflatten(&u))
}

/// Laplace transform of the evolution: solves (alpha - G) U = u0, i.e.
/// (alpha W + A) U = W u0. Satisfies alpha ||U|| <= ||u0|| in the weighted
/// L2 norm.
pub fn resolvent(
    u0: &SplitField,
    alpha: f64,
    phase: &Phase,
    grid: &SplitGrid,
) -> Result<SplitField, LimitError> {
    if u0.grid != *grid {
        return Err(LimitError::Domain("initial state lives on a different grid".into()));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(LimitError::Domain(format!("alpha must be positive and finite, got {alpha}")));
    }
    if u0.upper.iter().chain(&u0.lower).any(|v| !v.is_finite()) {
        return Err(LimitError::Domain("input state has non-finite entries".into()));
    }
    let op = assemble_limit_operator(grid, phase)?;
    let mut v = op.flatten(u0);
    if op.project(&mut v) {
        eprintln!("warning: interface rows of the input were zeroed to match the absorbing phase");
    }
    let rhs: Vec<f64> = v.iter().zip(&op.mass).map(|(&ui, &w)| w * ui).collect();
    let mut x: Vec<f64> = v.iter().map(|&ui| ui / alpha).collect();
    pcg_solve(&op.mass, alpha, &op.stiff, 1.0, &rhs, &mut x, op.active.as_deref(), 1e-13, 50_000)?;
    Ok(op.unflatten(&x))
}

/// Per-condition interface defect norms for a field, as discrete L2 norms
/// along the line. Serializes as JSON keyed by condition name.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BcReport {
    pub phase: String,
    pub conditions: BTreeMap<String, f64>,
}

/// Discrete L2 norm of an interface defect over the central half of the
/// window, |x1| <= Lx/2. The outer quarters are dominated by the truncation
/// of the nonlocal couplings at the window edge (their defect grows with
/// refinement instead of shrinking) and would mask interior convergence.
fn trace_norm(grid: &SplitGrid, vals: &[f64]) -> f64 {
    let (jlo, jhi) = (grid.nx / 4, grid.nx - grid.nx / 4);
    let dx = grid.dx();
    (jlo..=jhi)
        .map(|j| {
            let w = if j == jlo || j == jhi { 0.5 * dx } else { dx };
            w * vals[j] * vals[j]
        })
        .sum::<f64>()
        .sqrt()
}

fn sub(a: &TraceFn, b: &TraceFn) -> Vec<f64> {
    a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect()
}

/// Measures how well a field satisfies the defining interface identities of
/// its phase: one discrete L2 defect per identity. Useful on resolvent
/// outputs, where the identities hold up to discretization error.
pub fn bc_residual(
    u: &SplitField,
    phase: &Phase,
    grid: &SplitGrid,
) -> Result<BcReport, LimitError> {
    if u.grid != *grid {
        return Err(LimitError::Domain("field lives on a different grid".into()));
    }
    check_phase(grid, phase)?;
    let gp = u.trace(Side::Plus);
    let gm = u.trace(Side::Minus);
    let ndp = u.normal_derivative(Side::Plus);
    let ndm = u.normal_derivative(Side::Minus);
    let dx = grid.dx();
    let mut conditions = BTreeMap::new();
    match *phase {
        Phase::I => {
            conditions.insert("trace_jump".into(), trace_norm(grid, &sub(&gp, &gm)));
            conditions.insert("flux_jump".into(), trace_norm(grid, &sub(&ndp, &ndm)));
        }
        Phase::II { kappa } => {
            let drive: Vec<f64> =
                gp.values.iter().zip(&gm.values).map(|(p, q)| 0.5 * kappa * (p - q)).collect();
            let dp: Vec<f64> = ndp.values.iter().zip(&drive).map(|(n, d)| n - d).collect();
            let dm: Vec<f64> = ndm.values.iter().zip(&drive).map(|(n, d)| n - d).collect();
            conditions.insert("flux_plus".into(), trace_norm(grid, &dp));
            conditions.insert("flux_minus".into(), trace_norm(grid, &dm));
        }
        Phase::III => {
            conditions.insert("flux_plus".into(), trace_norm(grid, &ndp.values));
            conditions.insert("flux_minus".into(), trace_norm(grid, &ndm.values));
        }
        Phase::IV { lambda } => {
            conditions.insert("trace_jump".into(), trace_norm(grid, &sub(&gp, &gm)));
            // flux jump balances the tangential diffusion of the shared trace;
            // endpoint columns are excluded (no centered second difference)
            let tr: Vec<f64> =
                gp.values.iter().zip(&gm.values).map(|(p, q)| 0.5 * (p + q)).collect();
            let mut defect = vec![0.0; tr.len()];
            for j in 1..tr.len() - 1 {
                let d2 = (tr[j + 1] - 2.0 * tr[j] + tr[j - 1]) / (dx * dx);
                defect[j] = ndp.values[j] - ndm.values[j] + 2.0 * lambda * d2;
            }
            conditions.insert("flux_jump".into(), trace_norm(grid, &defect));
        }
        Phase::V => {
            conditions.insert("trace_plus".into(), trace_norm(grid, &gp.values));
            conditions.insert("trace_minus".into(), trace_norm(grid, &gm.values));
        }
        Phase::VI { mu, ell } => {
            let mtot = opposite_total_mass(ell);
            let conv_m = opposite_convolve(&gm, ell)?;
            let conv_p = opposite_convolve(&gp, ell)?;
            let lev_p = levy_apply(&gp, ell)?;
            let lev_m = levy_apply(&gm, ell)?;
            let mut dp = vec![0.0; gp.values.len()];
            let mut dm = vec![0.0; gm.values.len()];
            for j in 0..dp.len() {
                let exch_p = mu / (2.0 * PI) * (mtot * gp.values[j] - conv_m.values[j]);
                let exch_m = mu / (2.0 * PI) * (mtot * gm.values[j] - conv_p.values[j]);
                dp[j] = ndp.values[j] - exch_p + mu / (4.0 * PI) * lev_p.values[j];
                dm[j] = ndm.values[j] + exch_m - mu / (4.0 * PI) * lev_m.values[j];
            }
            conditions.insert("flux_plus".into(), trace_norm(grid, &dp));
            conditions.insert("flux_minus".into(), trace_norm(grid, &dm));
        }
        Phase::VII { mu } => {
            // the one-stable operator carries half the mass of the
            // infinite-range same-mode kernel, hence mu/2pi rather than mu/4pi
            let lev_p = levy_apply(&gp, f64::INFINITY)?;
            let lev_m = levy_apply(&gm, f64::INFINITY)?;
            let dp: Vec<f64> = ndp
                .values
                .iter()
                .zip(&lev_p.values)
                .map(|(n, l)| n + mu / (2.0 * PI) * l)
                .collect();
            let dm: Vec<f64> = ndm
                .values
                .iter()
                .zip(&lev_m.values)
                .map(|(n, l)| n - mu / (2.0 * PI) * l)
                .collect();
            conditions.insert("flux_plus".into(), trace_norm(grid, &dp));
            conditions.insert("flux_minus".into(), trace_norm(grid, &dm));
        }
    }
    Ok(BcReport { phase: phase.name().into(), conditions })
}
