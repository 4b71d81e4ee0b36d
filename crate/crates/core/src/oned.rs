//! One-dimensional reference solutions used as independent oracles.
//!
//! Closed forms for Brownian functionals (elastic killing, absorption,
//! reflection, expected local time) and a Crank-Nicolson solver for the
//! two-half-line membrane system, against which the path samplers and the
//! two-dimensional interface solvers are cross-checked.

use libm::{erf, erfc};

use crate::linalg::thomas_solve;

const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

fn phi(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Scaled complementary error function e^{z^2} erfc(z), stable for large z.
fn erfcx(z: f64) -> f64 {
    if z > 25.0 {
        // asymptotic series, relative error < 1e-16 here
        let iz2 = 1.0 / (2.0 * z * z);
        (1.0 - iz2 * (1.0 - 3.0 * iz2)) / (z * std::f64::consts::PI.sqrt())
    } else {
        (z * z).exp() * erfc(z)
    }
}

/// Survival of elastic killing at the origin: the solution of
/// u_t = u_xx / 2 on x > 0 with u_x(0) = kappa u(0) and u(0, .) = 1,
/// i.e. E^x[exp(-kappa L_t)] with L the local time at 0 of reflected BM.
pub fn elastic_survival(x: f64, t: f64, kappa: f64) -> f64 {
    assert!(x >= 0.0 && t > 0.0 && kappa >= 0.0);
    let a = x / (2.0 * t).sqrt();
    let b = kappa * (0.5 * t).sqrt();
    erf(a) + erfcx(a + b) * (-a * a).exp()
}

/// Probability that a membrane walk started on the plus side at |x0| = x
/// sits on the minus side at time t, for flip rate kappa per unit local
/// time: (1 - E^x[e^{-kappa L_t}]) / 2.
pub fn membrane_opposite_prob(x: f64, t: f64, kappa: f64) -> f64 {
    0.5 * (1.0 - elastic_survival(x, t, kappa))
}

/// Expected local time at 0 accumulated by time t by a standard BM from x0
/// (occupation-density normalization, E L_t = E|B_t + x0| - |x0|).
pub fn bm_local_time_mean(x0: f64, t: f64) -> f64 {
    let a = x0.abs() / t.sqrt();
    t.sqrt() * (2.0 * phi(a) + a * (2.0 * norm_cdf(a) - 1.0)) - x0.abs()
}

/// Survival probability of BM from y0 > 0 absorbed at 0: 2 Phi(y0/sqrt t) - 1.
pub fn absorbing_survival(y0: f64, t: f64) -> f64 {
    assert!(y0 >= 0.0 && t > 0.0);
    2.0 * norm_cdf(y0 / t.sqrt()) - 1.0
}

// E[ exp(-(Y-c)^2 / (2 s^2)) ] restricted to Y > 0 under the free kernel
// from mean m: (s/sqrt(s^2+t)) e^{-(c-m)^2/(2(s^2+t))} Phi(mu/sqrt v),
// mu, v the posterior mean/variance of the Gaussian product.
fn half_line_gaussian_product(m: f64, t: f64, c: f64, s: f64) -> f64 {
    let s2 = s * s;
    let v = s2 * t / (s2 + t);
    let mu = (c * t + m * s2) / (s2 + t);
    (s2 / (s2 + t)).sqrt() * (-(c - m) * (c - m) / (2.0 * (s2 + t))).exp()
        * norm_cdf(mu / v.sqrt())
}

/// E[exp(-(x0 + B_t - c)^2 / (2 s^2))]: free 1-D heat acting on a unit
/// Gaussian bump.
pub fn heat_gaussian_moment(x0: f64, t: f64, c: f64, s: f64) -> f64 {
    let s2 = s * s;
    (s2 / (s2 + t)).sqrt() * (-(x0 - c) * (x0 - c) / (2.0 * (s2 + t))).exp()
}

/// E[exp(-(Y_t - c)^2/(2 s^2)) ; alive] for BM from y0 > 0 killed at 0
/// (image-charge kernel).
pub fn killed_gaussian_moment(y0: f64, t: f64, c: f64, s: f64) -> f64 {
    half_line_gaussian_product(y0, t, c, s) - half_line_gaussian_product(-y0, t, c, s)
}

/// E[exp(-(|Y_t| - c)^2/(2 s^2))] for reflected BM from y0 >= 0.
pub fn reflected_gaussian_moment(y0: f64, t: f64, c: f64, s: f64) -> f64 {
    half_line_gaussian_product(y0, t, c, s) + half_line_gaussian_product(-y0, t, c, s)
}

/// Crank-Nicolson solution of the two-half-line membrane system on [0, L]:
/// u_t = u_xx / 2 on each component, glued by the interface flux
/// u+'(0) = (kappa/2)(u+(0) - u-(0)) = -u-'(0), reflecting at x = L.
pub struct MembraneSolution {
    pub dx: f64,
    /// values on the plus component, node i at x = i dx
    pub plus: Vec<f64>,
    /// values on the minus component
    pub minus: Vec<f64>,
}

impl MembraneSolution {
    /// Linear interpolation on the given component.
    pub fn eval(&self, x: f64, on_plus: bool) -> f64 {
        let vals = if on_plus { &self.plus } else { &self.minus };
        let n = vals.len() - 1;
        let pos = (x / self.dx).clamp(0.0, n as f64);
        let j = (pos.floor() as usize).min(n - 1);
        let w = pos - j as f64;
        vals[j] * (1.0 - w) + vals[j + 1] * w
    }
}

/// Evolves initial data f(x, on_plus) to time t. Global unknowns are
/// ordered [minus reversed, plus], which makes the coupled system purely
/// tridiagonal; each step solves the symmetric Crank-Nicolson pair with the
/// Thomas algorithm. Mass sum_i w_i (u+_i + u-_i) is conserved exactly.
pub fn membrane_pde(
    f: impl Fn(f64, bool) -> f64,
    kappa: f64,
    t: f64,
    length: f64,
    n: usize,
    dt: f64,
) -> MembraneSolution {
    assert!(kappa >= 0.0 && t >= 0.0 && length > 0.0 && n >= 4 && dt > 0.0);
    let dx = length / n as f64;
    let nn = 2 * (n + 1);
    // global index: minus node i -> n - i, plus node i -> n + 1 + i
    let mut u = vec![0.0; nn];
    for i in 0..=n {
        let x = i as f64 * dx;
        u[n - i] = f(x, false);
        u[n + 1 + i] = f(x, true);
    }
    // stiffness K as tridiagonal (edge coefficient 1/(2dx), coupling kappa/4)
    let mut off = vec![0.0; nn - 1];
    let mut diag_k = vec![0.0; nn];
    let edge = 1.0 / (2.0 * dx);
    for g in 0..nn - 1 {
        let c = if g == n { kappa / 4.0 } else { edge };
        off[g] = -c;
        diag_k[g] += c;
        diag_k[g + 1] += c;
    }
    // lumped mass: dx interior, dx/2 at the four half-line endpoints
    let mass: Vec<f64> = (0..nn)
        .map(|g| if g == 0 || g == n || g == n + 1 || g == nn - 1 { 0.5 * dx } else { dx })
        .collect();

    let nstep = ((t / dt) - 1e-12).ceil().max(0.0) as usize;
    let mut tcur = 0.0;
    for k in 0..nstep {
        let h = if k + 1 == nstep { t - tcur } else { dt };
        if h <= 0.0 {
            break;
        }
        // (M + h/2 K) u1 = (M - h/2 K) u0; lower[g]/upper[g] multiply
        // u[g-1]/u[g+1] in row g
        let mut lo_a = vec![0.0; nn];
        let mut up_a = vec![0.0; nn];
        for g in 0..nn - 1 {
            up_a[g] = 0.5 * h * off[g];
            lo_a[g + 1] = 0.5 * h * off[g];
        }
        let di_a: Vec<f64> = mass.iter().zip(&diag_k).map(|(&m, &d)| m + 0.5 * h * d).collect();
        let mut rhs = vec![0.0; nn];
        for g in 0..nn {
            let mut r = (mass[g] - 0.5 * h * diag_k[g]) * u[g];
            if g > 0 {
                r -= 0.5 * h * off[g - 1] * u[g - 1];
            }
            if g + 1 < nn {
                r -= 0.5 * h * off[g] * u[g + 1];
            }
            rhs[g] = r;
        }
        u = thomas_solve(&lo_a, &di_a, &up_a, &rhs);
        tcur += h;
    }

    let mut minus = vec![0.0; n + 1];
    let mut plus = vec![0.0; n + 1];
    for i in 0..=n {
        minus[i] = u[n - i];
        plus[i] = u[n + 1 + i];
    }
    MembraneSolution { dx, plus, minus }
}
