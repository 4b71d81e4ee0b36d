//! Path samplers that cross-validate the PDE solvers: the exact lattice walk
//! of the layered generator, reflected and absorbed planar motion, the
//! sign-flipping interface walk, and the interface-clocked diffusion, plus an
//! empirical-semigroup estimator with partitioned RNG streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::eps::{assemble_eps_operator, EpsError, ScaleParams};
use crate::grid::{Side, SplitField, SplitGrid};

/// Normalization of the occupation-band local-time estimator relative to the
/// occupation-density local time the limit solvers are built on. Pinned by
/// matching the clocked-diffusion sampler against the enhanced-interface
/// solver at (lambda, t) = (1, 1) and frozen; see
/// `clocked_diffusion_matches_the_enhanced_interface_solver`.
const LOCAL_TIME_CAL: f64 = 1.0;

/// State of one simulated path. `local_time` is the accumulated occupation
/// estimate of the interface band and never decreases; `alive = false` is
/// absorbing (the position freezes where the path died).
#[derive(Clone, Copy, Debug)]
pub struct PathState {
    pub x1: f64,
    pub x2: f64,
    pub component: Side,
    pub local_time: f64,
    pub alive: bool,
}

/// Interface behavior of the basic planar samplers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasicKind {
    Reflecting,
    Absorbing,
}

/// Half-width of the occupation band used by the step-`dt` local-time
/// estimators: occupation time of |x| < delta divided by 2 delta, with
/// delta tied to the step scale so bias and variance shrink together. The
/// occupation integral is accumulated with trapezoid weights in time so the
/// initial dwell of a path started inside the band is counted.
fn band_width(dt: f64) -> f64 {
    dt.sqrt() / 4.0
}

fn in_band(y: f64, delta: f64) -> f64 {
    if y.abs() < delta {
        1.0
    } else {
        0.0
    }
}

/// Probability that an odd number of flips falls in a local-time increment
/// `dl` when flips arrive at rate kappa/2: (1 - e^{-kappa dl}) / 2. Composes
/// exactly: p(a+b) = p(a) + p(b) - 2 p(a) p(b).
fn flip_probability(kappa: f64, dl: f64) -> f64 {
    -0.5 * (-(kappa * dl)).exp_m1()
}

fn check_time_step(t: f64, dt: f64) {
    assert!(t.is_finite() && t >= 0.0, "time must be nonnegative, got {t}");
    assert!(dt.is_finite() && dt > 0.0, "step must be positive, got {dt}");
}

/// Continuous-time random walk whose generator is exactly the assembled
/// lattice operator of the layered problem: from node i, jumps to neighbor j
/// at rate c_ij / W_i, so expectations over paths reproduce the matrix
/// semigroup with no additional discretization error.
pub struct EpsWalk {
    grid: SplitGrid,
    eps: f64,
    /// total exit rate per node
    rate: Vec<f64>,
    nbr_ptr: Vec<usize>,
    nbr: Vec<usize>,
    /// cumulative jump weights within each node's neighbor slice
    cum: Vec<f64>,
    /// fraction of each row's mass cell inside the layer band
    layer_frac: Vec<f64>,
}

impl EpsWalk {
    pub fn new(grid: &SplitGrid, s: &ScaleParams) -> Result<Self, EpsError> {
        let op = assemble_eps_operator(grid, s)?;
        let n = op.n();
        let mut rate = vec![0.0; n];
        let mut nbr_ptr = Vec::with_capacity(n + 1);
        let mut nbr = Vec::new();
        let mut cum = Vec::new();
        nbr_ptr.push(0);
        for r in 0..n {
            let mut total = 0.0;
            for k in op.stiff.row_ptr[r]..op.stiff.row_ptr[r + 1] {
                let (c, v) = (op.stiff.col[k], op.stiff.val[k]);
                if c == r {
                    continue;
                }
                debug_assert!(v <= 0.0, "stiffness off-diagonals are nonpositive");
                if v < 0.0 {
                    total -= v;
                    nbr.push(c);
                    cum.push(total);
                }
            }
            nbr_ptr.push(nbr.len());
            rate[r] = total / op.mass[r];
        }
        let ny = grid.ny;
        let (dy, ly) = (grid.dy(), grid.ly);
        let layer_frac = (0..=2 * ny)
            .map(|t| {
                let x2 = (t as f64 - ny as f64) * dy;
                let lo = (x2 - 0.5 * dy).max(-ly);
                let hi = (x2 + 0.5 * dy).min(ly);
                ((hi.min(s.eps) - lo.max(-s.eps)).max(0.0)) / (hi - lo)
            })
            .collect();
        Ok(EpsWalk { grid: *grid, eps: s.eps, rate, nbr_ptr, nbr, cum, layer_frac })
    }

    /// Merged-grid node of a lattice point; panics when the point does not
    /// sit on a node.
    fn node_of(&self, x0: (f64, f64)) -> usize {
        let g = &self.grid;
        let fj = (x0.0 + g.lx) / g.dx();
        let ft = x0.1 / g.dy() + g.ny as f64;
        let (j, t) = (fj.round(), ft.round());
        assert!(
            (fj - j).abs() < 1e-9 && (ft - t).abs() < 1e-9,
            "start point {x0:?} is not a grid node"
        );
        let (j, t) = (j as usize, t as usize);
        assert!(j <= g.nx && t <= 2 * g.ny, "start point {x0:?} is outside the window");
        t * (g.nx + 1) + j
    }

    /// Runs one path to time `t` and returns its endpoint. Outer edges
    /// reflect (the generator has zero flux there); the layer band occupation
    /// divided by its width 2 eps supplies the local-time proxy.
    pub fn simulate(&self, x0: (f64, f64), t: f64, rng: &mut impl Rng) -> PathState {
        check_time_step(t, 1.0);
        let ncol = self.grid.nx + 1;
        let mut node = self.node_of(x0);
        let mut remaining = t;
        let mut occupation = 0.0;
        loop {
            let q = self.rate[node];
            let hold = if q > 0.0 { rng.sample::<f64, _>(Exp1) / q } else { f64::INFINITY };
            let stay = hold.min(remaining);
            occupation += stay * self.layer_frac[node / ncol];
            if hold >= remaining {
                break;
            }
            remaining -= hold;
            let (lo, hi) = (self.nbr_ptr[node], self.nbr_ptr[node + 1]);
            let u = rng.random::<f64>() * self.cum[hi - 1];
            let mut next = self.nbr[hi - 1];
            for k in lo..hi {
                if u < self.cum[k] {
                    next = self.nbr[k];
                    break;
                }
            }
            node = next;
        }
        let (tr, j) = (node / ncol, node % ncol);
        let x2 = (tr as f64 - self.grid.ny as f64) * self.grid.dy();
        PathState {
            x1: self.grid.x1(j),
            x2,
            component: if x2 < 0.0 { Side::Minus } else { Side::Plus },
            local_time: occupation / (2.0 * self.eps),
            alive: true,
        }
    }
}

/// One path of the lattice walk for the layered operator, built and run in
/// place. Batch callers should construct [`EpsWalk`] once instead.
pub fn simulate_eps(
    x0: (f64, f64),
    t: f64,
    s: &ScaleParams,
    grid: &SplitGrid,
    rng: &mut impl Rng,
) -> Result<PathState, EpsError> {
    Ok(EpsWalk::new(grid, s)?.simulate(x0, t, rng))
}

/// Planar Brownian path with step `dt`, either reflected on its starting
/// component or absorbed at the first grid-time sign change of x2. The
/// absorbing variant freezes the path on the interface where it died;
/// starting on the interface dies immediately.
pub fn simulate_basic(
    x0: (f64, f64),
    t: f64,
    kind: BasicKind,
    dt: f64,
    rng: &mut impl Rng,
) -> PathState {
    check_time_step(t, dt);
    let side = if x0.1 < 0.0 { Side::Minus } else { Side::Plus };
    let delta = band_width(dt);
    let mut x1 = x0.0;
    let mut y = x0.1.abs();
    let mut local = 0.0;
    let mut alive = !(kind == BasicKind::Absorbing && y == 0.0);
    let mut remaining = t;
    let mut w_prev = in_band(y, delta);
    while remaining > 0.0 && alive {
        let h = remaining.min(dt);
        let sqh = h.sqrt();
        x1 += sqh * rng.sample::<f64, _>(StandardNormal);
        let ynew = y + sqh * rng.sample::<f64, _>(StandardNormal);
        match kind {
            BasicKind::Reflecting => {
                y = ynew.abs();
                let w = in_band(y, delta);
                local += 0.5 * (w_prev + w) * h / (2.0 * delta);
                w_prev = w;
            }
            BasicKind::Absorbing => {
                if ynew <= 0.0 {
                    alive = false;
                    y = 0.0;
                } else {
                    y = ynew;
                }
            }
        }
        remaining -= h;
    }
    PathState { x1, x2: side.sign() * y, component: side, local_time: local, alive }
}

/// Reflected walk on the glued half-lines that may change component while
/// near the junction: per step the position folds at 0, and whenever it lies
/// inside the occupation band the accumulated local-time increment flips the
/// component with the exact odd-flip probability for rate kappa/2.
/// Returns the distance from the junction and the final component.
pub fn simulate_snob(
    x0: f64,
    t: f64,
    kappa: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> (f64, Side) {
    check_time_step(t, dt);
    assert!(kappa > 0.0 && kappa.is_finite(), "flip rate must be positive, got {kappa}");
    let mut side = if x0 < 0.0 { Side::Minus } else { Side::Plus };
    let mut y = x0.abs();
    let delta = band_width(dt);
    let mut remaining = t;
    let mut w_prev = in_band(y, delta);
    while remaining > 0.0 {
        let h = remaining.min(dt);
        y = (y + h.sqrt() * rng.sample::<f64, _>(StandardNormal)).abs();
        let w = in_band(y, delta);
        let dl = 0.5 * (w_prev + w) * h / (2.0 * delta);
        w_prev = w;
        if dl > 0.0 && rng.random::<f64>() < flip_probability(kappa, dl) {
            side = side.opposite();
        }
        remaining -= h;
    }
    (y, side)
}

/// Planar diffusion whose tangential clock runs faster by 2 lambda per unit
/// of interface local time: x2 is a free Brownian path, the band-occupation
/// estimate of its local time feeds the x1 increments, which are centered
/// Gaussians of variance dt + 2 lambda dL.
pub fn simulate_type4(
    x0: (f64, f64),
    t: f64,
    lambda: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> PathState {
    check_time_step(t, dt);
    assert!(lambda >= 0.0 && lambda.is_finite(), "drive must be nonnegative, got {lambda}");
    let delta = band_width(dt);
    let (mut x1, mut x2) = x0;
    let mut local = 0.0;
    let mut remaining = t;
    let mut w_prev = in_band(x2, delta);
    while remaining > 0.0 {
        let h = remaining.min(dt);
        x2 += h.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let w = in_band(x2, delta);
        let dl = LOCAL_TIME_CAL * 0.5 * (w_prev + w) * h / (2.0 * delta);
        w_prev = w;
        local += dl;
        x1 += (h + 2.0 * lambda * dl).sqrt() * rng.sample::<f64, _>(StandardNormal);
        remaining -= h;
    }
    PathState {
        x1,
        x2,
        component: if x2 < 0.0 { Side::Minus } else { Side::Plus },
        local_time: local,
        alive: true,
    }
}

/// Child RNG stream for one path index: every path gets its own ChaCha
/// stream of the master seed, so serial and parallel runs of any schedule
/// produce identical path ensembles.
pub fn path_rng(seed: u64, path: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Semigroup estimate at one start point, the row format of MC reports.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct McRecord {
    pub x0: (f64, f64),
    pub mean: f64,
    pub se: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Per-start-point sample mean and standard error of f(X_t), where dead
/// paths contribute 0 and live ones evaluate `f` on their component sheet.
/// The sampler receives (start, horizon, path stream); path i always uses
/// stream i of the master seed, so outputs are bit-identical for a fixed
/// seed no matter how the paths are scheduled across threads.
pub fn empirical_semigroup(
    f: &SplitField,
    x0_list: &[(f64, f64)],
    t: f64,
    n_paths: usize,
    seed: u64,
    sampler: impl Fn((f64, f64), f64, &mut ChaCha12Rng) -> PathState + Sync,
) -> (Vec<f64>, Vec<f64>) {
    assert!(n_paths >= 100, "need at least 100 paths, got {n_paths}");
    let mut means = Vec::with_capacity(x0_list.len());
    let mut ses = Vec::with_capacity(x0_list.len());
    for &x0 in x0_list {
        let vals: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(seed, i as u64);
                let st = sampler(x0, t, &mut rng);
                if st.alive {
                    f.interp(st.component, st.x1, st.x2.abs())
                } else {
                    0.0
                }
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n_paths as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_paths - 1) as f64;
        means.push(mean);
        ses.push((var / n_paths as f64).sqrt());
    }
    (means, ses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::limits::solve_limit;
    use crate::oned::{
        absorbing_survival, bm_local_time_mean, membrane_opposite_prob, membrane_pde,
    };
    use crate::phase::Phase;
    use proptest::prelude::*;

    /// Mean, and standard errors of the mean and of the variance, of a
    /// sample (the variance SE uses the empirical fourth moment).
    fn moments(vals: &[f64]) -> (f64, f64, f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        (mean, (var / n).sqrt(), var, ((m4 - m2 * m2) / n).sqrt())
    }

    #[test]
    fn zero_time_returns_the_start_state() {
        let mut rng = path_rng(7, 0);
        let grid = make_grid(2.0, 1.0, 16, 8).unwrap();
        let s = ScaleParams::new(0.25, 2.0, 0.5).unwrap();
        let st = simulate_eps((0.5, -0.25), 0.0, &s, &grid, &mut rng).unwrap();
        assert_eq!((st.x1, st.x2), (0.5, -0.25));
        assert_eq!(st.component, Side::Minus);
        assert!(st.alive && st.local_time == 0.0);

        let st = simulate_basic((0.2, 0.7), 0.0, BasicKind::Absorbing, 1e-3, &mut rng);
        assert_eq!((st.x1, st.x2), (0.2, 0.7));
        assert!(st.alive);

        let (y, side) = simulate_snob(-0.4, 0.0, 3.0, 1e-3, &mut rng);
        assert_eq!((y, side), (0.4, Side::Minus));

        let st = simulate_type4((0.1, -0.2), 0.0, 2.0, 1e-3, &mut rng);
        assert_eq!((st.x1, st.x2), (0.1, -0.2));
    }

    #[test]
    fn lattice_walk_displacement_variance_is_exact() {
        // Unit coefficients: the walk's x1 marginal jumps +-dx at total rate
        // 1/dx^2, so Var x1(t) = t exactly on the infinite lattice; the
        // window is wide enough that reflections are negligible.
        let grid = make_grid(8.0, 8.0, 32, 32).unwrap();
        let s = ScaleParams::new(0.25, 1.0, 1.0).unwrap();
        let walk = EpsWalk::new(&grid, &s).unwrap();
        let n = 100_000;
        let disp: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(0xB10C_5EED, i as u64);
                walk.simulate((0.0, 0.0), 1.0, &mut rng).x1
            })
            .collect();
        let (mean, se_mean, var, se_var) = moments(&disp);
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} vs SE {se_mean}");
        assert!((var - 1.0).abs() < 3.0 * se_var, "variance {var} vs SE {se_var}");
    }

    #[test]
    fn lattice_walk_mean_matches_the_layer_solver() {
        // The walk is exact in law for the lattice generator, so the only
        // gaps are MC noise and the solver's O(dt^2) time stepping.
        let grid = make_grid(4.0, 2.0, 32, 20).unwrap();
        let s = ScaleParams::new(0.2, 0.2, 0.2).unwrap();
        let u0 = SplitField::from_fn(grid, |x1, x2| {
            (-((x1 - 0.5).powi(2) + (x2 - 0.5).powi(2)) / (2.0 * 0.36)).exp()
        });
        let sol = crate::eps::solve_eps(&u0, 0.5, 0.005, &s).unwrap();
        let pde = sol.at(Side::Plus, 5, 16);

        let walk = EpsWalk::new(&grid, &s).unwrap();
        let (means, ses) = empirical_semigroup(
            &u0,
            &[(0.0, 0.5)],
            0.5,
            20_000,
            0xA5A5,
            |x0, t, rng| walk.simulate(x0, t, rng),
        );
        let gap = (means[0] - pde).abs();
        assert!(gap < 3.0 * ses[0] + 5e-3, "MC {} vs PDE {pde}, SE {}", means[0], ses[0]);
    }

    #[test]
    fn flip_rate_limits_freeze_or_mix_the_component() {
        // kappa -> 0: no flips ever. kappa -> infinity: every interface
        // visit resamples the component, so it ends uniform.
        let frozen: usize = (0..10_000usize)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(11, i as u64);
                (simulate_snob(1.0, 1.0, 1e-9, 1e-3, &mut rng).1 == Side::Minus) as usize
            })
            .sum();
        assert_eq!(frozen, 0, "vanishing flip rate must never flip");

        let n = 100_000;
        let flipped: usize = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(12, i as u64);
                (simulate_snob(0.0, 1.0, 1e9, 1e-3, &mut rng).1 == Side::Minus) as usize
            })
            .sum();
        let frac = flipped as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "huge flip rate should mix, got {frac}");
    }

    #[test]
    fn opposite_component_mass_matches_the_coupled_half_line_solver() {
        // E[on opposite component] from x0 = 1 at t = 1, kappa = 1, against
        // the glued half-line solver started from the opposite indicator.
        let kappa = 1.0;
        let msol = membrane_pde(|_, on_plus| if on_plus { 0.0 } else { 1.0 }, kappa, 1.0, 8.0, 1600, 5e-4);
        let pde = msol.eval(1.0, true);
        assert!(
            (pde - membrane_opposite_prob(1.0, 1.0, kappa)).abs() < 5e-4,
            "half-line solver drifted from the closed form: {pde}"
        );

        let n = 20_000;
        let opposite: usize = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(0xC0FFEE, i as u64);
                (simulate_snob(1.0, 1.0, kappa, 2.5e-4, &mut rng).1 == Side::Minus) as usize
            })
            .sum();
        let frac = opposite as f64 / n as f64;
        let se = (frac * (1.0 - frac) / n as f64).sqrt();
        assert!((frac - pde).abs() < 3.0 * se + 5e-3, "MC {frac} vs PDE {pde}, SE {se}");
    }

    #[test]
    fn reflecting_paths_keep_sign_and_component() {
        for i in 0..1000u64 {
            let mut rng = path_rng(21, i);
            let st = simulate_basic((0.0, 1.0), 0.5, BasicKind::Reflecting, 1e-3, &mut rng);
            assert!(st.x2 >= 0.0 && st.component == Side::Plus && st.alive);
            let mut rng = path_rng(22, i);
            let st = simulate_basic((0.0, -0.3), 0.5, BasicKind::Reflecting, 1e-3, &mut rng);
            assert!(st.x2 <= 0.0 && st.component == Side::Minus && st.alive);
        }
    }

    #[test]
    fn absorbing_survival_matches_the_reflection_formula() {
        // Grid-time sign detection misses sub-step excursions, an upward
        // bias of order sqrt(dt) that the flat tolerance absorbs.
        let n = 20_000;
        let alive: usize = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(31, i as u64);
                simulate_basic((0.0, 1.0), 1.0, BasicKind::Absorbing, 1e-4, &mut rng).alive
                    as usize
            })
            .sum();
        let frac = alive as f64 / n as f64;
        let exact = absorbing_survival(1.0, 1.0);
        let se = (frac * (1.0 - frac) / n as f64).sqrt();
        assert!((frac - exact).abs() < 3.0 * se + 5e-3, "MC {frac} vs exact {exact}, SE {se}");
    }

    #[test]
    fn absorbing_moment_matches_the_absorbing_limit_solver() {
        let grid = make_grid(4.0, 4.0, 64, 64).unwrap();
        let u0 = SplitField::from_fn(grid, |x1, x2| {
            (-((x1 - 0.3).powi(2) + (x2 - 0.8).powi(2)) / (2.0 * 0.25)).exp()
        });
        let sol = solve_limit(&u0, 0.5, 0.005, &Phase::V, &grid).unwrap();
        let pde = sol.at(Side::Plus, 16, 32);

        let (means, ses) = empirical_semigroup(
            &u0,
            &[(0.0, 1.0)],
            0.5,
            20_000,
            0xD1CE,
            |x0, t, rng| simulate_basic(x0, t, BasicKind::Absorbing, 1e-4, rng),
        );
        let gap = (means[0] - pde).abs();
        assert!(gap < 3.0 * ses[0] + 5e-3, "MC {} vs PDE {pde}, SE {}", means[0], ses[0]);
    }

    #[test]
    fn clocked_diffusion_variance_grows_with_the_drive() {
        let spread = |lambda: f64, seed: u64| {
            let vals: Vec<f64> = (0..20_000usize)
                .into_par_iter()
                .map(|i| {
                    let mut rng = path_rng(seed, i as u64);
                    simulate_type4((0.0, 0.0), 1.0, lambda, 1e-3, &mut rng).x1
                })
                .collect();
            let (_, _, var, se_var) = moments(&vals);
            (var, se_var)
        };
        let (v0, se0) = spread(0.0, 41);
        assert!((v0 - 1.0).abs() < 3.0 * se0, "free variance {v0} vs SE {se0}");
        let (v1, se1) = spread(1.0, 42);
        assert!(v1 > 1.0 + 3.0 * se1, "clock must widen the spread, got {v1}");
        let (v3, se3) = spread(3.0, 43);
        assert!(v3 > v1 + 3.0 * (se1 + se3), "spread must grow with the drive: {v1} -> {v3}");
    }

    #[test]
    fn occupation_local_time_matches_the_analytic_mean() {
        let n = 10_000;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_rng(51, i as u64);
                simulate_type4((0.0, 0.0), 1.0, 1.0, 2e-4, &mut rng).local_time
            })
            .sum();
        let mean = total / n as f64;
        let exact = bm_local_time_mean(0.0, 1.0);
        assert!(
            (mean - exact).abs() < 0.05 * exact,
            "local-time mean {mean} vs analytic {exact}"
        );
    }

    #[test]
    fn clocked_diffusion_matches_the_enhanced_interface_solver() {
        // Pins the local-time normalization: a 10% error in the estimator
        // constant moves the mean by about twice the tolerance.
        let grid = make_grid(8.0, 4.0, 128, 64).unwrap();
        let u0 = SplitField::from_fn(grid, |x1, _| (-x1 * x1 / (2.0 * 0.5625)).exp());
        let sol = solve_limit(&u0, 1.0, 0.005, &Phase::IV { lambda: 1.0 }, &grid).unwrap();
        let pde = sol.at(Side::Plus, 0, 64);

        let (means, ses) = empirical_semigroup(
            &u0,
            &[(0.0, 0.0)],
            1.0,
            20_000,
            0xBEEF,
            |x0, t, rng| simulate_type4(x0, t, 1.0, 2.5e-4, rng),
        );
        let gap = (means[0] - pde).abs();
        assert!(gap < 3.0 * ses[0] + 5e-3, "MC {} vs PDE {pde}, SE {}", means[0], ses[0]);
    }

    #[test]
    fn sign_flip_walk_with_free_tangent_motion_matches_the_exchange_solver() {
        // Product law: independent tangential BM plus the flip walk in the
        // normal direction reproduces the exchange-coupled limit field.
        let kappa = 1.3;
        let grid = make_grid(4.0, 4.0, 64, 64).unwrap();
        let u0 = SplitField::from_fn(grid, |x1, x2| {
            (-(x1 - 0.3).powi(2) / (2.0 * 0.49)).exp() * (0.8 + 0.4 * (1.5 * x2).tanh())
        });
        let sol = solve_limit(&u0, 0.4, 0.005, &Phase::II { kappa }, &grid).unwrap();
        let pde = sol.at(Side::Plus, 8, 36);

        let (means, ses) = empirical_semigroup(
            &u0,
            &[(0.5, 0.5)],
            0.4,
            20_000,
            0xFADE,
            |x0, t, rng| {
                let (y, side) = simulate_snob(x0.1, t, kappa, 2.5e-4, rng);
                let x1 = x0.0 + t.sqrt() * rng.sample::<f64, _>(StandardNormal);
                PathState { x1, x2: side.sign() * y, component: side, local_time: 0.0, alive: true }
            },
        );
        let gap = (means[0] - pde).abs();
        assert!(gap < 3.0 * ses[0] + 5e-3, "MC {} vs PDE {pde}, SE {}", means[0], ses[0]);
    }

    #[test]
    fn semigroup_estimator_reports_exact_constants_and_clt_scaling() {
        let grid = make_grid(2.0, 2.0, 16, 16).unwrap();
        let ones = SplitField::from_fn(grid, |_, _| 1.0);
        let reflecting = |x0: (f64, f64), t: f64, rng: &mut ChaCha12Rng| {
            simulate_basic(x0, t, BasicKind::Reflecting, 1e-2, rng)
        };
        let (means, ses) =
            empirical_semigroup(&ones, &[(0.0, 0.5), (1.0, -0.25)], 0.3, 500, 3, reflecting);
        assert_eq!(means, vec![1.0, 1.0]);
        assert_eq!(ses, vec![0.0, 0.0]);

        // absorbing with f = 1 estimates the survival probability
        let absorbing = |x0: (f64, f64), t: f64, rng: &mut ChaCha12Rng| {
            simulate_basic(x0, t, BasicKind::Absorbing, 1e-3, rng)
        };
        let (means, _) = empirical_semigroup(&ones, &[(0.0, 0.8)], 0.5, 4000, 4, absorbing);
        let exact = absorbing_survival(0.8, 0.5);
        assert!((means[0] - exact).abs() < 0.03, "survival {} vs {exact}", means[0]);

        // quadrupling the paths halves the standard error
        let f = SplitField::from_fn(grid, |x1, x2| (-(x1 * x1 + x2 * x2) / 0.5).exp());
        let (_, se1) = empirical_semigroup(&f, &[(0.0, 0.5)], 0.3, 2000, 5, reflecting);
        let (_, se4) = empirical_semigroup(&f, &[(0.0, 0.5)], 0.3, 8000, 5, reflecting);
        let ratio = se4[0] / se1[0];
        assert!((ratio - 0.5).abs() < 0.1, "CLT scaling ratio {ratio}");
    }

    #[test]
    fn fixed_seed_gives_bit_identical_results_across_thread_pools() {
        let grid = make_grid(2.0, 2.0, 16, 16).unwrap();
        let f = SplitField::from_fn(grid, |x1, x2| (-(x1 * x1 + x2 * x2) / 0.5).exp());
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                empirical_semigroup(&f, &[(0.0, 0.5), (0.5, -0.5)], 0.2, 600, 77, |x0, t, rng| {
                    simulate_basic(x0, t, BasicKind::Reflecting, 1e-3, rng)
                })
            })
        };
        let (m1, s1) = run(1);
        let (m4, s4) = run(4);
        assert_eq!(m1, m4);
        assert_eq!(s1, s4);

        let record = McRecord { x0: (0.0, 0.5), mean: m1[0], se: s1[0], n_paths: 600, seed: 77 };
        let json = serde_json::to_string(&record).unwrap();
        assert!(json.contains("\"n_paths\":600") && json.contains("\"seed\":77"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn flip_probability_composes_exactly(
            kappa in 1e-3..1e3f64,
            a in 0.0..2.0f64,
            b in 0.0..2.0f64,
        ) {
            let whole = flip_probability(kappa, a + b);
            let (pa, pb) = (flip_probability(kappa, a), flip_probability(kappa, b));
            prop_assert!((whole - (pa + pb - 2.0 * pa * pb)).abs() < 1e-12);
        }

        #[test]
        fn endpoint_invariants_hold_for_random_parameters(
            seed in any::<u64>(),
            x in -1.5..1.5f64,
            t in 0.01..0.3f64,
        ) {
            let side = if x < 0.0 { Side::Minus } else { Side::Plus };
            let mut rng = path_rng(seed, 0);
            let st = simulate_basic((0.3, x), t, BasicKind::Reflecting, 1e-3, &mut rng);
            prop_assert_eq!(st.component, side);
            prop_assert!(st.alive && st.local_time >= 0.0 && side.sign() * st.x2 >= 0.0);

            let mut rng = path_rng(seed, 1);
            let st = simulate_basic((0.3, x), t, BasicKind::Absorbing, 1e-3, &mut rng);
            prop_assert!(st.local_time == 0.0);
            if st.alive {
                prop_assert!(side.sign() * st.x2 > 0.0);
            } else {
                prop_assert!(st.x2 == 0.0);
            }

            let mut rng = path_rng(seed, 2);
            let st = simulate_basic((0.3, 0.0), t, BasicKind::Absorbing, 1e-3, &mut rng);
            prop_assert!(!st.alive, "starting on the interface dies immediately");
        }
    }
}
