//! Interface kernels and nonlocal trace machinery.
//!
//! Everything here lives on one-dimensional trace grids. Two kernel families
//! appear, distinguished by their normalization:
//!
//! * the operator family `k±_l(d) = 1 / [(2l/pi)^2 (cosh(pi d / 2l) ± 1)]`
//!   used by [`cosh_kernel`], [`levy_apply`] and the interface coupling
//!   helpers; its even-mode total mass is pi/l and its large-l same-mode
//!   limit is 1/d^2 (one-stable normalization);
//! * the form family `phi_l(d) = 1/[2l (cosh(d/l)+1)]` (unit mass for every
//!   l) and `psi_l(d) = 1/[l^2 (cosh(d/l)-1)]` (large-l limit 2/d^2) used by
//!   [`trace_form`] and [`trace_form_fourier`].
//!
//! All quadratures use exact cell masses (closed-form antiderivatives of the
//! kernels over grid cells), analytic treatment of the diagonal cell via
//! second-moment integrals, and closed-form tail masses under constant
//! extension of the trace beyond its window.

use crate::linalg::adaptive_simpson;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("kernel singularity: same-mode kernel evaluated at zero separation")]
    Singularity,
    #[error("trace grids do not match: {0}")]
    GridMismatch(String),
    #[error("trace grid too small: {len} points, need at least {need}")]
    GridTooSmall { len: usize, need: usize },
    #[error("non-finite trace values")]
    NonFinite,
}

/// Sampled function on a uniform symmetric grid x_j = x0 + j dx, x0 = -L.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFn {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl TraceFn {
    pub fn new(x0: f64, dx: f64, values: Vec<f64>) -> Result<Self, KernelError> {
        if !(dx > 0.0 && dx.is_finite() && x0.is_finite()) {
            return Err(KernelError::Domain(format!("bad trace grid: x0={x0}, dx={dx}")));
        }
        if values.len() < 4 {
            return Err(KernelError::GridTooSmall { len: values.len(), need: 4 });
        }
        let n = values.len() - 1;
        let center = x0 + 0.5 * n as f64 * dx;
        if center.abs() > 1e-9 * (1.0 + x0.abs()) {
            return Err(KernelError::Domain(format!(
                "trace grid must be symmetric about 0 (midpoint {center:e})"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        Ok(TraceFn { x0, dx, values })
    }

    /// Samples f on a symmetric grid of n+1 points over [-l, l].
    pub fn sample(l: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, KernelError> {
        let dx = 2.0 * l / n as f64;
        let values = (0..=n).map(|j| f(-l + j as f64 * dx)).collect();
        Self::new(-l, dx, values)
    }

    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn same_grid(&self, other: &TraceFn) -> bool {
        self.values.len() == other.values.len()
            && (self.x0 - other.x0).abs() <= 1e-12 * (1.0 + self.x0.abs())
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
    }

    /// Trapezoid integral of the sampled values.
    pub fn integral(&self) -> f64 {
        let n = self.n();
        let inner: f64 = self.values[1..n].iter().sum();
        self.dx * (inner + 0.5 * (self.values[0] + self.values[n]))
    }
}

/// Which pairing a kernel couples: traces on the same sheet or on opposite
/// sheets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Same,
    Opposite,
}

/// Operator-family kernel selector; `ell` may be infinite.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub ell: f64,
    pub mode: Mode,
}

impl KernelSpec {
    pub fn new(ell: f64, mode: Mode) -> Result<Self, KernelError> {
        if ell.is_nan() || ell <= 0.0 {
            return Err(KernelError::Domain(format!("kernel scale must be positive, got {ell}")));
        }
        Ok(KernelSpec { ell, mode })
    }
}

/// Half-plane Poisson-type interface kernel
/// P(x1, x2) = sin(x2) / (2 pi (cosh(x1) - cos(x2))), defined for x2 in
/// (0, pi). Its x1-integral is 1 - x2/pi.
pub fn poisson_kernel(x1: f64, x2: f64) -> Result<f64, KernelError> {
    if !(x2 > 0.0 && x2 < PI) {
        return Err(KernelError::Domain(format!("x2 must lie in (0, pi), got {x2}")));
    }
    if !x1.is_finite() {
        return Err(KernelError::Domain(format!("x1 must be finite, got {x1}")));
    }
    Ok(x2.sin() / (2.0 * PI * (x1.cosh() - x2.cos())))
}

/// Operator-family interface kernel. Same mode diverges like 2/d^2 at zero
/// separation and decreases to the pointwise large-l envelope; opposite mode
/// is bounded with total mass pi/l and vanishes pointwise as l -> oo.
pub fn cosh_kernel(d: f64, spec: &KernelSpec) -> Result<f64, KernelError> {
    let ell = spec.ell;
    if !d.is_finite() {
        return Err(KernelError::Domain(format!("separation must be finite, got {d}")));
    }
    if ell.is_infinite() {
        return match spec.mode {
            Mode::Same => {
                if d == 0.0 {
                    Err(KernelError::Singularity)
                } else {
                    Ok(2.0 / (d * d))
                }
            }
            Mode::Opposite => Ok(0.0),
        };
    }
    let pref = PI * PI / (8.0 * ell * ell);
    let arg = PI * d / (4.0 * ell);
    match spec.mode {
        Mode::Same => {
            if d == 0.0 {
                Err(KernelError::Singularity)
            } else {
                let s = arg.sinh();
                Ok(pref / (s * s))
            }
        }
        Mode::Opposite => {
            let c = arg.cosh();
            Ok(pref / (c * c))
        }
    }
}

// ---------------------------------------------------------------------------
// stable antiderivative differences
// ---------------------------------------------------------------------------

/// tanh(b) - tanh(a) for 0 <= a <= b, without cancellation.
fn tanh_diff(a: f64, b: f64) -> f64 {
    let ea = (-2.0 * a).exp();
    let eb = (-2.0 * b).exp();
    2.0 * (ea - eb) / ((1.0 + ea) * (1.0 + eb))
}

/// coth(a) - coth(b) for 0 < a <= b, without cancellation.
fn coth_diff(a: f64, b: f64) -> f64 {
    let ea = (-2.0 * a).exp_m1(); // -(1 - e^{-2a})
    let eb = (-2.0 * b).exp_m1();
    2.0 * ((-2.0 * a).exp() - (-2.0 * b).exp()) / (ea * eb)
}

/// coth(a) - 1, stable for large and small a.
fn coth_m1(a: f64) -> f64 {
    2.0 / (2.0 * a).exp_m1()
}

/// 1 - tanh(a), stable for large a.
fn one_m_tanh(a: f64) -> f64 {
    2.0 / ((2.0 * a).exp() + 1.0)
}

fn csch2_integrand(z: f64) -> f64 {
    if z < 1e-8 {
        1.0
    } else {
        let q = z / z.sinh();
        q * q
    }
}

/// int_0^s z^2 csch^2(z) dz; saturates at pi^2/6.
fn csch2_moment(s: f64) -> f64 {
    const FULL: f64 = PI * PI / 6.0;
    if s >= 40.0 {
        return FULL;
    }
    adaptive_simpson(&csch2_integrand, 0.0, s, 1e-13)
}

/// Integrals of z^2 csch^2 z over consecutive segments [b_i, b_{i+1}]
/// (composite Simpson; the integrand is smooth and dead beyond z = 40).
fn csch2_segments(bounds: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1));
    for win in bounds.windows(2) {
        let a = win[0];
        if a >= 40.0 {
            out.push(0.0);
            continue;
        }
        let b = win[1].min(40.0);
        const M: usize = 8;
        let h = (b - a) / M as f64;
        let mut s = csch2_integrand(a) + csch2_integrand(b);
        for k in 1..M {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * csch2_integrand(a + k as f64 * h);
        }
        out.push(s * h / 3.0);
    }
    out
}

// ---------------------------------------------------------------------------
// operator-family cell masses (used by levy_apply and the interface coupling)
// ---------------------------------------------------------------------------

/// Exact masses of the operator-family kernels over uniform grid cells
/// [(r-1/2) dx, (r+1/2) dx], the tail mass beyond (m+1/2) dx, and the
/// second moment over the diagonal cell.
pub struct CellMasses {
    /// mass over cell r, r = 1..=nmax
    pub cell: Vec<f64>,
    /// moment-matched pair masses S_r / (r dx)^2 with S_r the exact second
    /// moment over cell r; for difference-squared quadratic forms these
    /// remove the near-diagonal bias of the plain masses (for the opposite
    /// mode, whose integrand does not vanish on the diagonal, they equal
    /// the plain masses)
    pub matched: Vec<f64>,
    /// tail mass beyond (m+1/2) dx, m = 0..=nmax
    pub tail: Vec<f64>,
    /// int_{-dx/2}^{dx/2} y^2 k(y) dy (same mode); mass of the center cell
    /// (opposite mode)
    pub diag: f64,
}

/// Same-mode masses: kernel (pi^2/8 l^2) csch^2(pi d / 4l), whose pointwise
/// large-l limit is 2/d^2; the masses converge entrywise to that limit.
pub fn same_mode_masses(nmax: usize, dx: f64, ell: f64) -> CellMasses {
    // antiderivative: -(pi/2l) coth(pi d / 4l); large-l limit -2/d
    let mut cell = Vec::with_capacity(nmax);
    let mut matched = Vec::with_capacity(nmax);
    let mut tail = Vec::with_capacity(nmax + 1);
    let diag;
    if ell.is_infinite() {
        for r in 1..=nmax {
            let a = (r as f64 - 0.5) * dx;
            let b = (r as f64 + 0.5) * dx;
            cell.push(2.0 * (1.0 / a - 1.0 / b));
            // second moment over the cell is exactly 2 dx for the 2/d^2 kernel
            matched.push(2.0 / (r as f64 * r as f64 * dx));
        }
        for m in 0..=nmax {
            tail.push(2.0 / ((m as f64 + 0.5) * dx));
        }
        diag = 4.0 * (0.5 * dx); // int_{-Y}^{Y} y^2 (2/y^2) dy = 4Y
    } else {
        let h = PI * dx / (4.0 * ell);
        let pref = PI / (2.0 * ell);
        for r in 1..=nmax {
            cell.push(pref * coth_diff((r as f64 - 0.5) * h, (r as f64 + 0.5) * h));
        }
        // one-sided second moments: int_a^b d^2 k-(d) dd
        //   = (8 l / pi) int_{pi a/4l}^{pi b/4l} z^2 csch^2 z dz
        let bounds: Vec<f64> = (0..=nmax).map(|r| (r as f64 + 0.5) * h).collect();
        for (r, seg) in csch2_segments(&bounds).into_iter().enumerate() {
            let rr = (r + 1) as f64 * dx;
            matched.push((8.0 * ell / PI) * seg / (rr * rr));
        }
        for m in 0..=nmax {
            tail.push(pref * coth_m1((m as f64 + 0.5) * h));
        }
        // int_{-Y}^{Y} y^2 k-(y) dy = (16 l / pi) int_0^{pi Y/4l} z^2 csch^2 z dz
        diag = (16.0 * ell / PI) * csch2_moment(0.5 * h);
    }
    CellMasses { cell, matched, tail, diag }
}

/// Opposite-mode masses: kernel (pi^2/8 l^2) sech^2(pi d / 4l), total mass
/// pi/l; everything tends to zero as l -> oo.
pub fn opposite_mode_masses(nmax: usize, dx: f64, ell: f64) -> CellMasses {
    let mut cell = Vec::with_capacity(nmax);
    let mut tail = Vec::with_capacity(nmax + 1);
    let diag;
    if ell.is_infinite() {
        cell.resize(nmax, 0.0);
        tail.resize(nmax + 1, 0.0);
        diag = 0.0;
    } else {
        let h = PI * dx / (4.0 * ell);
        let pref = PI / (2.0 * ell);
        for r in 1..=nmax {
            cell.push(pref * tanh_diff((r as f64 - 0.5) * h, (r as f64 + 0.5) * h));
        }
        for m in 0..=nmax {
            tail.push(pref * one_m_tanh((m as f64 + 0.5) * h));
        }
        diag = 2.0 * pref * (0.5 * h).tanh();
    }
    let matched = cell.clone();
    CellMasses { cell, matched, tail, diag }
}

/// Total mass pi/l of the opposite-mode operator kernel (0 at l = oo).
pub fn opposite_total_mass(ell: f64) -> f64 {
    if ell.is_infinite() {
        0.0
    } else {
        PI / ell
    }
}

/// Convolution of the opposite-mode operator kernel with a trace, with
/// constant extension beyond the window.
pub fn opposite_convolve(g: &TraceFn, ell: f64) -> Result<TraceFn, KernelError> {
    if g.values.len() < 8 {
        return Err(KernelError::GridTooSmall { len: g.values.len(), need: 8 });
    }
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    if ell.is_nan() || ell <= 0.0 {
        return Err(KernelError::Domain(format!("kernel scale must be positive, got {ell}")));
    }
    let n = g.n();
    let m = opposite_mode_masses(n, g.dx, ell);
    let mut values = Vec::with_capacity(n + 1);
    for j in 0..=n {
        // explicit cells cover shifts up to n with clamped values; the rest
        // of the kernel mass sits beyond (n + 1/2) dx on either side where
        // the extension is constant
        let mut s = m.diag * g.values[j];
        for r in 1..=n {
            let right = if j + r <= n { g.values[j + r] } else { g.values[n] };
            let left = if j >= r { g.values[j - r] } else { g.values[0] };
            s += m.cell[r - 1] * (right + left);
        }
        s += (g.values[0] + g.values[n]) * m.tail[n];
        values.push(s);
    }
    TraceFn::new(g.x0, g.dx, values)
}

// ---------------------------------------------------------------------------
// nonlocal operator
// ---------------------------------------------------------------------------

/// Applies the same-mode nonlocal operator
/// `(L w)(x) = int [w(x+y) - 2 w(x) + w(x-y)] k(y) dy` on the trace grid,
/// extending w by its end values. At `ell = oo` the kernel is 1/y^2 and the
/// operator has Fourier symbol -2 pi |xi| (one-stable normalization).
///
/// The integrand at y = 0 is finite (curvature times the kernel's second
/// moment density) and is handled analytically; beyond the window both
/// shifts are constant and the remaining integral is a closed-form tail.
pub fn levy_apply(w: &TraceFn, ell: f64) -> Result<TraceFn, KernelError> {
    if w.values.len() < 8 {
        return Err(KernelError::GridTooSmall { len: w.values.len(), need: 8 });
    }
    if w.values.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    if ell.is_nan() || ell <= 0.0 {
        return Err(KernelError::Domain(format!("kernel scale must be positive, got {ell}")));
    }
    let n = w.n();
    let dx = w.dx;
    let v = &w.values;

    // kernel at y = r dx and curvature factor c0 = lim y^2 k(y)
    let (kv, c0): (Vec<f64>, f64) = if ell.is_infinite() {
        ((1..=n).map(|r| 1.0 / (r as f64 * dx).powi(2)).collect(), 1.0)
    } else {
        let pref = PI * PI / (8.0 * ell * ell);
        (
            (1..=n)
                .map(|r| {
                    let s = (PI * r as f64 * dx / (4.0 * ell)).sinh();
                    pref / (s * s)
                })
                .collect(),
            2.0,
        )
    };
    let tail = |y: f64| -> f64 {
        if ell.is_infinite() {
            1.0 / y
        } else {
            // int_Y^oo k-(y) dy = (pi/2l)(coth(pi Y/4l) - 1)
            PI / ell / (PI * y / (2.0 * ell)).exp_m1()
        }
    };

    let at = |j: isize| -> f64 {
        let j = j.clamp(0, n as isize) as usize;
        v[j]
    };

    let mut out = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let r_max = j.max(n - j); // beyond this both shifts are clamped
        let d2 = (at(j as isize + 1) - 2.0 * v[j] + at(j as isize - 1)) / (dx * dx);
        let mut s = 0.5 * c0 * d2; // y = 0 node (half trapezoid weight)
        for r in 1..r_max {
            s += kv[r - 1] * (at(j as isize + r as isize) - 2.0 * v[j] + at(j as isize - r as isize));
        }
        let d_end = at(j as isize + r_max as isize) - 2.0 * v[j] + at(j as isize - r_max as isize);
        s += 0.5 * kv[r_max - 1] * d_end;
        // both one-sided pieces (explicit trapezoid and analytic tail) double
        let d_inf = v[n] + v[0] - 2.0 * v[j];
        out.push(2.0 * (dx * s + d_inf * tail(r_max as f64 * dx)));
    }
    TraceFn::new(w.x0, dx, out)
}

// ---------------------------------------------------------------------------
// interface energy forms (form-family kernels)
// ---------------------------------------------------------------------------

/// The two interface energies: `jump` penalizes differences between the two
/// traces (unit-mass kernel), `lateral` penalizes increments of each trace
/// along the interface (kernel with large-l limit 2/d^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormPair {
    pub jump: f64,
    pub lateral: f64,
}

/// Spectral evaluation result; `nondecaying` warns that the trace does not
/// vanish at the window edge, where the periodic spectral route and the
/// constant-extension direct route genuinely differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralForms {
    pub forms: FormPair,
    pub nondecaying: bool,
}

fn check_ell_range(ell: f64) -> Result<(), KernelError> {
    if ell.is_nan() || ell < 0.0 {
        return Err(KernelError::Domain(format!("kernel scale must be in [0, oo], got {ell}")));
    }
    Ok(())
}

/// Evaluates both interface forms for a pair of traces on a common grid.
///
/// Conventions at the extreme scales: at l = 0 the jump form becomes the
/// plain trapezoid integral of (f+ - f-)^2 and the lateral form vanishes; at
/// l = oo the lateral kernel is 2/d^2 and the jump form is defined to be 0
/// (its pointwise limit 2||f||^2 is not attained through grid windows, so
/// the convention keeps the scale explicit).
pub fn trace_form(fp: &TraceFn, fm: &TraceFn, ell: f64) -> Result<FormPair, KernelError> {
    check_ell_range(ell)?;
    if !fp.same_grid(fm) {
        return Err(KernelError::GridMismatch(format!(
            "plus trace ({} pts, x0={}, dx={}) vs minus trace ({} pts, x0={}, dx={})",
            fp.values.len(),
            fp.x0,
            fp.dx,
            fm.values.len(),
            fm.x0,
            fm.dx
        )));
    }
    let n = fp.n();
    let dx = fp.dx;
    let a = &fp.values;
    let b = &fm.values;

    if ell == 0.0 {
        let mut jump = 0.0;
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 * dx } else { dx };
            jump += w * (a[j] - b[j]).powi(2);
        }
        return Ok(FormPair { jump, lateral: 0.0 });
    }

    // lateral (same-sheet) masses, form normalization: psi_l -> 2/d^2.
    // Pair masses are moment-matched (exact cell second moment / (r dx)^2):
    // plain cell masses overweight near-diagonal cells of the difference-
    // squared sum by r^2/(r^2 - 1/4), a resolution-independent O(dx) bias.
    let h = dx / (2.0 * ell); // finite l only
    let (psi, psi_tail, m2): (Vec<f64>, Vec<f64>, f64) = if ell.is_infinite() {
        (
            (1..=n).map(|r| 2.0 / (r as f64 * r as f64 * dx)).collect(),
            (0..=n).map(|m| 2.0 / ((m as f64 + 0.5) * dx)).collect(),
            4.0 * (0.5 * dx),
        )
    } else {
        let bounds: Vec<f64> = (0..=n).map(|r| (r as f64 + 0.5) * h).collect();
        let segs = csch2_segments(&bounds);
        (
            (1..=n).map(|r| 4.0 * ell * segs[r - 1] / (r as f64 * dx).powi(2)).collect(),
            (0..=n).map(|m| coth_m1((m as f64 + 0.5) * h) / ell).collect(),
            8.0 * ell * csch2_moment(0.5 * h),
        )
    };

    let mut lateral = 0.0;
    for f in [a, b] {
        for j in 0..=n {
            let mut inner = 0.0;
            for jp in 0..=n {
                if jp != j {
                    let r = j.abs_diff(jp);
                    inner += psi[r - 1] * (f[j] - f[jp]).powi(2);
                }
            }
            let jl = if j == 0 { 0 } else { j - 1 };
            let jr = if j == n { n } else { j + 1 };
            let deriv = (f[jr] - f[jl]) / ((jr - jl) as f64 * dx);
            inner += deriv * deriv * m2;
            inner += 2.0 * (psi_tail[j] * (f[j] - f[0]).powi(2) + psi_tail[n - j] * (f[j] - f[n]).powi(2));
            lateral += dx * inner;
        }
    }

    if ell.is_infinite() {
        return Ok(FormPair { jump: 0.0, lateral });
    }

    // jump (cross-sheet) masses, unit total
    let phi0 = (0.5 * h).tanh();
    let phi: Vec<f64> =
        (1..=n).map(|r| 0.5 * tanh_diff((r as f64 - 0.5) * h, (r as f64 + 0.5) * h)).collect();
    let phi_tail: Vec<f64> = (0..=n).map(|m| 0.5 * one_m_tanh((m as f64 + 0.5) * h)).collect();

    let mut jump = 0.0;
    for j in 0..=n {
        let mut inner = phi0 * (a[j] - b[j]).powi(2);
        for jp in 0..=n {
            if jp != j {
                inner += phi[j.abs_diff(jp) - 1] * (a[j] - b[jp]).powi(2);
            }
        }
        inner += phi_tail[j] * (a[j] - b[0]).powi(2) + phi_tail[n - j] * (a[j] - b[n]).powi(2);
        jump += dx * inner;
    }
    for jp in 0..=n {
        jump += dx
            * (phi_tail[jp] * (a[0] - b[jp]).powi(2) + phi_tail[n - jp] * (a[n] - b[jp]).powi(2));
    }

    Ok(FormPair { jump, lateral })
}

/// Spectral weight of the jump form: 2 - 2 pi l |xi| / sinh(pi l |xi|).
fn jump_weight(xi: f64, ell: f64) -> f64 {
    if ell.is_infinite() {
        return if xi == 0.0 { 0.0 } else { 2.0 };
    }
    let s = PI * ell * xi.abs();
    if s < 1e-4 {
        // 2 - 2 s / sinh s = s^2/3 - 7 s^4 / 180 + ...
        s * s / 3.0 - 7.0 * s.powi(4) / 180.0
    } else if s > 700.0 {
        2.0
    } else {
        2.0 - 2.0 * s / s.sinh()
    }
}

/// Spectral weight of the lateral form: 8 pi |xi| coth(pi l |xi|) - 8/l.
fn lateral_weight(xi: f64, ell: f64) -> f64 {
    if ell.is_infinite() {
        return 8.0 * PI * xi.abs();
    }
    let s = PI * ell * xi.abs();
    if s < 1e-3 {
        // (8/l)(s^2/3 - s^4/45 + ...)
        8.0 / ell * (s * s / 3.0 - s.powi(4) / 45.0)
    } else {
        8.0 * PI * xi.abs() * coth_m1(s) + 8.0 * PI * xi.abs() - 8.0 / ell
    }
}

/// Spectral route to both interface forms for a single trace (equal traces
/// on the two sheets). Uses the discrete Fourier transform, so the trace is
/// implicitly extended periodically; traces that do not decay inside the
/// window set the `nondecaying` flag.
pub fn trace_form_fourier(f: &TraceFn, ell: f64) -> Result<SpectralForms, KernelError> {
    check_ell_range(ell)?;
    if f.values.len() < 8 {
        return Err(KernelError::GridTooSmall { len: f.values.len(), need: 8 });
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    let nn = f.values.len();
    let dx = f.dx;
    let peak = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let edge = f.values[0].abs().max(f.values[nn - 1].abs());
    let nondecaying = edge > 1e-6 * peak && peak > 0.0;

    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nn);
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> =
        f.values.iter().map(|&v| rustfft::num_complex::Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);

    let dxi = 2.0 * PI / (nn as f64 * dx);
    let spec_norm = dx * dx / (2.0 * PI); // |fhat|^2 = (dx/sqrt(2pi))^2 |DFT|^2
    let mut jump = 0.0;
    let mut lateral = 0.0;
    for (k, c) in buf.iter().enumerate() {
        let kk = if k <= nn / 2 { k as f64 } else { k as f64 - nn as f64 };
        let xi = kk * dxi;
        let p = spec_norm * c.norm_sqr();
        jump += p * jump_weight(xi, ell) * dxi;
        lateral += p * lateral_weight(xi, ell) * dxi;
    }
    if ell == 0.0 {
        jump = 0.0;
        lateral = 0.0;
    }
    Ok(SpectralForms { forms: FormPair { jump, lateral }, nondecaying })
}

/// Second moment of the normalized even kernels 1/(cosh y ± 1):
/// opposite mode 2 pi^2 / 3, same mode 4 pi^2 / 3.
pub fn kernel_moment(mode: Mode) -> f64 {
    let f: Box<dyn Fn(f64) -> f64> = match mode {
        Mode::Opposite => Box::new(|y: f64| {
            let c = (0.5 * y).cosh();
            y * y / (2.0 * c * c)
        }),
        Mode::Same => Box::new(|y: f64| {
            if y < 1e-8 {
                2.0
            } else {
                let s = (0.5 * y).sinh();
                y * y / (2.0 * s * s)
            }
        }),
    };
    2.0 * adaptive_simpson(&f, 0.0, 80.0, 1e-13)
}
