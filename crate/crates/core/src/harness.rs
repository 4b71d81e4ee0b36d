//! Experiment drivers behind the `barrierlab` binary: collapse-error tables
//! against the classified limit, resolvent continuity sweeps, interface
//! condition refinement checks, Monte Carlo cross-checks, and the artifact
//! writers they share.
//!
//! Runs are configured by [`ExperimentConfig`], normally assembled from a
//! file and flag overrides through [`PartialConfig`]. Everything written by
//! [`write_outputs`] except the `run.log` sidecar is byte-identical for
//! identical config and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::eps::{solve_eps, EpsError, ScaleParams};
use crate::grid::{l2_diff, make_grid, GridError, Side, SplitField, SplitGrid};
use crate::limits::{bc_residual, resolvent, solve_limit, LimitError};
use crate::mc::{
    empirical_semigroup, path_rng, simulate_basic, simulate_snob, simulate_type4, BasicKind,
    EpsWalk, PathState,
};
use crate::oned::absorbing_survival;
use crate::phase::{classify, classify_monomial, Ext, LimitScales, Phase, PhaseError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eps(#[from] EpsError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialize: {0}")]
    Json(#[from] serde_json::Error),
}

/// Nonnegative scale value that may be infinite. Serialized as the string
/// "inf" when infinite because JSON has no infinity literal; deserialization
/// accepts either form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtVal(pub f64);

impl Serialize for ExtVal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtVal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtVal(v)),
            Raw::Text(s) => parse_ext(&s).map(ExtVal).map_err(D::Error::custom),
        }
    }
}

fn parse_ext(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        other => other.parse::<f64>().map_err(|e| format!("bad number {other:?}: {e}")),
    }
}

/// Fully resolved run configuration, echoed verbatim into `report.json`.
/// Build one with [`ExperimentConfig::defaults_for`] or through
/// [`PartialConfig::resolve`].
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: String,
    /// Tangential conductivity exponent of the layer family.
    pub alpha: f64,
    /// Normal conductivity exponent of the layer family.
    pub beta: f64,
    pub c_tan: f64,
    pub c_norm: f64,
    /// Explicit scale limits [C, R, M, L] for classification; when present
    /// they take precedence over the monomial exponents.
    pub limits: Option<Vec<ExtVal>>,
    /// Layer widths, strictly decreasing.
    pub eps: Vec<f64>,
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    /// Initial data family: "gaussian" (free center) or
    /// "gaussian-symmetric" (center projected onto the interface).
    pub u0_family: String,
    pub u0_center: (f64, f64),
    pub u0_sigma: f64,
    pub t: f64,
    pub dt: f64,
    /// Time-stepping blend; only the symmetric value 0.5 is supported.
    pub theta: f64,
    /// Resolvent shift used by the continuity and interface checks.
    pub res_alpha: f64,
    /// Swept regime family for continuity runs: II, IV, or VI.
    pub family: String,
    pub sweep: Vec<f64>,
    pub sweep_target: ExtVal,
    pub kappa: f64,
    pub lambda: f64,
    pub mu: f64,
    pub ell: f64,
    /// Regimes exercised by the interface verification.
    pub phases: Vec<String>,
    /// Sampler/solver pairs exercised by the Monte Carlo cross-check.
    pub checks: Vec<String>,
    pub n_paths: usize,
    pub seed: u64,
    /// Euler step for the samplers that take one.
    pub mc_dt: f64,
    pub out: Option<String>,
}

impl ExperimentConfig {
    /// Baseline configuration for one run kind. The window, initial data,
    /// and schedules differ per kind; shared knobs agree everywhere.
    pub fn defaults_for(kind: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig {
            kind: kind.to_string(),
            alpha: 1.0,
            beta: 1.0,
            c_tan: 1.0,
            c_norm: 1.0,
            limits: None,
            eps: vec![0.4, 0.2, 0.1, 0.05],
            lx: 8.0,
            ly: 8.0,
            nx: 128,
            ny: 128,
            u0_family: "gaussian".into(),
            u0_center: (0.0, 1.0),
            u0_sigma: 0.5,
            t: 0.5,
            dt: 0.01,
            theta: 0.5,
            res_alpha: 1.0,
            family: "II".into(),
            sweep: (0..=11).map(|l| 1.0 + 0.5f64.powi(l)).collect(),
            sweep_target: ExtVal(1.0),
            kappa: 1.0,
            lambda: 1.0,
            mu: 1.0,
            ell: 1.0,
            phases: ["I", "II", "III", "IV", "V", "VI", "VII"].map(String::from).to_vec(),
            checks: ["eps", "reflecting", "absorbing", "snob", "type4"]
                .map(String::from)
                .to_vec(),
            n_paths: 20_000,
            seed: 42,
            mc_dt: 1e-4,
            out: None,
        };
        match kind {
            "mosco" | "mc" | "classify" => {}
            "continuity" => {
                cfg.lx = 4.0;
                cfg.ly = 4.0;
                cfg.nx = 64;
                cfg.ny = 64;
            }
            "bc" => {
                cfg.lx = 4.0;
                cfg.ly = 2.0;
                cfg.nx = 64;
                cfg.ny = 16;
                cfg.u0_center = (0.0, 0.6);
                cfg.u0_sigma = 0.4;
            }
            other => {
                return Err(HarnessError::Config(format!("unknown run kind {other:?}")))
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite, got {v}"));
            }
        }
        for (name, v) in [
            ("c_tan", self.c_tan),
            ("c_norm", self.c_norm),
            ("u0_sigma", self.u0_sigma),
            ("t", self.t),
            ("dt", self.dt),
            ("res_alpha", self.res_alpha),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("ell", self.ell),
            ("mc_dt", self.mc_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.theta != 0.5 {
            return fail(format!(
                "theta = {} is not supported; only the symmetric half-step 0.5 is",
                self.theta
            ));
        }
        if !(self.u0_center.0.is_finite() && self.u0_center.1.is_finite()) {
            return fail(format!("u0_center must be finite, got {:?}", self.u0_center));
        }
        match self.u0_family.as_str() {
            "gaussian" | "gaussian-symmetric" => {}
            other => {
                return fail(format!(
                    "unknown initial family {other:?} (expected gaussian or gaussian-symmetric)"
                ))
            }
        }
        if let Some(l) = &self.limits {
            if l.len() != 4 {
                return fail("limits must have exactly four entries [C, R, M, L]".into());
            }
            for e in l {
                if e.0.is_nan() || e.0 < 0.0 {
                    return fail(format!("limit entries must lie in [0, inf], got {}", e.0));
                }
            }
        }
        match self.kind.as_str() {
            "mosco" => {
                if self.eps.is_empty() {
                    return fail("the eps schedule is empty".into());
                }
                for &e in &self.eps {
                    if !(e > 0.0 && e.is_finite()) {
                        return fail(format!("eps entries must be positive and finite, got {e}"));
                    }
                    if e >= 0.5 * self.ly {
                        return fail(format!(
                            "eps = {e} does not fit in a window of half-height {}",
                            self.ly
                        ));
                    }
                }
                if !self.eps.windows(2).all(|w| w[1] < w[0]) {
                    return fail(format!("the eps schedule must decrease strictly: {:?}", self.eps));
                }
            }
            "continuity" => {
                if !["II", "IV", "VI"].contains(&self.family.as_str()) {
                    return fail(format!("unknown sweep family {:?}", self.family));
                }
                if self.sweep.is_empty() {
                    return fail("the sweep schedule is empty".into());
                }
                for &v in &self.sweep {
                    if !(v > 0.0 && v.is_finite()) {
                        return fail(format!("sweep entries must be positive and finite, got {v}"));
                    }
                }
                if !strictly_monotone(&self.sweep) {
                    return fail(format!("the sweep must be strictly monotone: {:?}", self.sweep));
                }
                let tv = self.sweep_target.0;
                if tv.is_nan() || tv < 0.0 {
                    return fail(format!("sweep_target must lie in [0, inf], got {tv}"));
                }
                if self.family == "VI" && tv == 0.0 {
                    return fail(
                        "the vanishing-range limit of the finite-range family is not a supported target"
                            .into(),
                    );
                }
            }
            "bc" => {
                if self.phases.is_empty() {
                    return fail("no phases selected".into());
                }
                for p in &self.phases {
                    phase_by_name(p, self)?;
                }
            }
            "mc" => {
                if self.checks.is_empty() {
                    return fail("no cross-checks selected".into());
                }
                for c in &self.checks {
                    if !["eps", "reflecting", "absorbing", "snob", "type4"]
                        .contains(&c.as_str())
                    {
                        return fail(format!("unknown cross-check {c:?}"));
                    }
                }
                if self.n_paths < 100 {
                    return fail(format!("n_paths must be at least 100, got {}", self.n_paths));
                }
            }
            "classify" => {}
            other => return fail(format!("unknown run kind {other:?}")),
        }
        Ok(())
    }
}

fn strictly_monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0]) || v.windows(2).all(|w| w[1] > w[0])
}

/// Config as read from a file or flags: every field optional, merged over
/// the per-kind defaults by [`PartialConfig::resolve`]. Unknown JSON keys
/// are rejected so typos surface as config errors.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialConfig {
    pub kind: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub c_tan: Option<f64>,
    pub c_norm: Option<f64>,
    pub limits: Option<Vec<ExtVal>>,
    pub eps: Option<Vec<f64>>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub u0_family: Option<String>,
    pub u0_center: Option<(f64, f64)>,
    pub u0_sigma: Option<f64>,
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub theta: Option<f64>,
    pub res_alpha: Option<f64>,
    pub family: Option<String>,
    pub sweep: Option<Vec<f64>>,
    pub sweep_target: Option<ExtVal>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub ell: Option<f64>,
    pub phases: Option<Vec<String>>,
    pub checks: Option<Vec<String>>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    pub mc_dt: Option<f64>,
    pub out: Option<String>,
}

impl PartialConfig {
    /// Applies one textual override; shared by key=value files and CLI
    /// flags. The "grid" key expands to lx, ly, nx, ny at once.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        fn num(v: &str) -> Result<f64, String> {
            v.trim().parse::<f64>().map_err(|e| e.to_string())
        }
        fn list(v: &str) -> Result<Vec<f64>, String> {
            v.split(',').map(num).collect()
        }
        fn count(v: &str) -> Result<usize, String> {
            v.trim().parse::<usize>().map_err(|e| e.to_string())
        }
        fn words(v: &str) -> Vec<String> {
            v.split(',').map(|p| p.trim().to_string()).collect()
        }
        let bad = |e: String| HarnessError::Config(format!("{key} = {value:?}: {e}"));
        match key {
            "kind" => self.kind = Some(value.trim().into()),
            "alpha" => self.alpha = Some(num(value).map_err(bad)?),
            "beta" => self.beta = Some(num(value).map_err(bad)?),
            "c_tan" => self.c_tan = Some(num(value).map_err(bad)?),
            "c_norm" => self.c_norm = Some(num(value).map_err(bad)?),
            "limits" => {
                let vals: Vec<ExtVal> = value
                    .split(',')
                    .map(|p| parse_ext(p).map(ExtVal))
                    .collect::<Result<_, _>>()
                    .map_err(bad)?;
                if vals.len() != 4 {
                    return Err(bad("expected C,R,M,L".into()));
                }
                self.limits = Some(vals);
            }
            "eps" => self.eps = Some(list(value).map_err(bad)?),
            "lx" => self.lx = Some(num(value).map_err(bad)?),
            "ly" => self.ly = Some(num(value).map_err(bad)?),
            "nx" => self.nx = Some(count(value).map_err(bad)?),
            "ny" => self.ny = Some(count(value).map_err(bad)?),
            "grid" => {
                let p = list(value).map_err(bad)?;
                if p.len() != 4 || p[2].fract() != 0.0 || p[3].fract() != 0.0 {
                    return Err(bad("expected Lx,Ly,nx,ny with integer counts".into()));
                }
                self.lx = Some(p[0]);
                self.ly = Some(p[1]);
                self.nx = Some(p[2] as usize);
                self.ny = Some(p[3] as usize);
            }
            "u0_family" => self.u0_family = Some(value.trim().into()),
            "u0_center" => {
                let p = list(value).map_err(bad)?;
                if p.len() != 2 {
                    return Err(bad("expected x1,x2".into()));
                }
                self.u0_center = Some((p[0], p[1]));
            }
            "u0_sigma" => self.u0_sigma = Some(num(value).map_err(bad)?),
            "t" => self.t = Some(num(value).map_err(bad)?),
            "dt" => self.dt = Some(num(value).map_err(bad)?),
            "theta" => self.theta = Some(num(value).map_err(bad)?),
            "res_alpha" => self.res_alpha = Some(num(value).map_err(bad)?),
            "family" => self.family = Some(value.trim().into()),
            "sweep" => self.sweep = Some(list(value).map_err(bad)?),
            "sweep_target" => self.sweep_target = Some(ExtVal(parse_ext(value).map_err(bad)?)),
            "kappa" => self.kappa = Some(num(value).map_err(bad)?),
            "lambda" => self.lambda = Some(num(value).map_err(bad)?),
            "mu" => self.mu = Some(num(value).map_err(bad)?),
            "ell" => self.ell = Some(num(value).map_err(bad)?),
            "phases" => self.phases = Some(words(value)),
            "checks" => self.checks = Some(words(value)),
            "n_paths" => self.n_paths = Some(count(value).map_err(bad)?),
            "seed" => self.seed = Some(value.trim().parse::<u64>().map_err(|e| bad(e.to_string()))?),
            "mc_dt" => self.mc_dt = Some(num(value).map_err(bad)?),
            "out" => self.out = Some(value.trim().into()),
            other => {
                return Err(HarnessError::Config(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Fills the per-kind defaults with every field this partial carries,
    /// then validates. A `kind` stated in the file must match the requested
    /// run kind.
    pub fn resolve(&self, kind: &str) -> Result<ExperimentConfig, HarnessError> {
        if let Some(k) = &self.kind {
            if k != kind {
                return Err(HarnessError::Config(format!(
                    "config kind {k:?} does not match the {kind} subcommand"
                )));
            }
        }
        let mut cfg = ExperimentConfig::defaults_for(kind)?;
        macro_rules! merge {
            ($($f:ident),* $(,)?) => {
                $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )*
            };
        }
        merge!(
            alpha, beta, c_tan, c_norm, eps, lx, ly, nx, ny, u0_family, u0_center, u0_sigma,
            t, dt, theta, res_alpha, family, sweep, sweep_target, kappa, lambda, mu, ell,
            phases, checks, n_paths, seed, mc_dt,
        );
        if self.limits.is_some() {
            cfg.limits = self.limits.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a config file: JSON when it opens with '{', otherwise key=value
/// lines with '#' comments.
pub fn parse_config_text(text: &str) -> Result<PartialConfig, HarnessError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("json config: {e}")));
    }
    let mut p = PartialConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected key=value, got {line:?}", idx + 1))
        })?;
        p.set(k.trim(), v.trim())?;
    }
    Ok(p)
}

/// One parameter/error pair of a run table; `se` only for sampled errors.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ErrorRow {
    pub parameter: f64,
    pub error: f64,
    pub se: Option<f64>,
}

/// Residual of one interface condition at two resolutions.
#[derive(Clone, Debug, Serialize)]
pub struct BcRow {
    pub phase: String,
    pub condition: String,
    pub coarse: f64,
    pub fine: f64,
    /// coarse/fine; absent when both residuals sit at the structural floor.
    pub ratio: Option<f64>,
}

/// One sampler-vs-solver comparison.
#[derive(Clone, Debug, Serialize)]
pub struct McCheck {
    pub name: String,
    pub x0: (f64, f64),
    pub mc_mean: f64,
    pub se: f64,
    pub reference: f64,
    pub gap: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Complete outcome of one run; serialized as `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub kind: String,
    /// Classified or target regime, when the run kind has a single one.
    pub phase: Option<String>,
    pub phase_detail: Option<Phase>,
    pub pass: bool,
    pub rows: Vec<ErrorRow>,
    pub bc: Vec<BcRow>,
    pub mc: Vec<McCheck>,
    pub config: ExperimentConfig,
}

fn initial_field(cfg: &ExperimentConfig, grid: SplitGrid) -> SplitField {
    let (cx, cy) = match cfg.u0_family.as_str() {
        "gaussian-symmetric" => (cfg.u0_center.0, 0.0),
        _ => cfg.u0_center,
    };
    let s2 = 2.0 * cfg.u0_sigma * cfg.u0_sigma;
    SplitField::from_fn(grid, move |x1, x2| {
        (-((x1 - cx).powi(2) + (x2 - cy).powi(2)) / s2).exp()
    })
}

/// Smallest row count that aligns the layer with the grid: dy = eps/m for
/// the first m >= 4 that makes ly/dy integral.
fn layer_rows(ly: f64, eps: f64) -> Result<usize, HarnessError> {
    for m in 4..=4096usize {
        let ny = ly * m as f64 / eps;
        if (ny - ny.round()).abs() <= 1e-6 * ny.max(1.0) && ny.round() >= 4.0 {
            return Ok(ny.round() as usize);
        }
    }
    Err(HarnessError::Config(format!(
        "no layer-aligned row count for eps = {eps} in a window of half-height {ly}"
    )))
}

fn decreasing_or_floor(rows: &[ErrorRow]) -> bool {
    rows.iter().all(|r| r.error.is_finite() && r.error >= 0.0)
        && rows.windows(2).all(|w| {
            w[1].error < w[0].error || (w[0].error <= 1e-12 && w[1].error <= 1e-12)
        })
}

/// Sweep verdict: every step either decreases or moves by at most 5% (floor
/// wiggle), and the tail has either dropped to 1e-3 of the start or stalled
/// within 5% of the previous point (the discretization floor).
fn converging_to_floor(rows: &[ErrorRow]) -> bool {
    if rows.is_empty() || rows.iter().any(|r| !r.error.is_finite() || r.error < 0.0) {
        return false;
    }
    let steps_ok = rows.windows(2).all(|w| {
        let (a, b) = (w[0].error, w[1].error);
        b < a || (b - a).abs() <= 0.05 * a.max(1e-300)
    });
    let first = rows[0].error;
    let last = rows[rows.len() - 1].error;
    let saturated = rows.len() >= 2 && {
        let prev = rows[rows.len() - 2].error;
        (last - prev).abs() <= 0.05 * prev.max(1e-300)
    };
    steps_ok && (last <= 1e-3 * first || saturated)
}

/// Layer-collapse error table: solves the layered problem along the eps
/// schedule, restricts each solution to the reference grid, and measures the
/// L2 gap to the classified limit flow. With identity-layer coefficients
/// (alpha = beta = 0, c_tan = c_norm = 1) the reference grid is reused so
/// the gap isolates the two assembly routes of the same operator.
pub fn run_mosco_experiment(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let phase = classify_monomial(cfg.alpha, cfg.beta, cfg.c_tan, cfg.c_norm);
    let ref_grid = make_grid(cfg.lx, cfg.ly, cfg.nx, cfg.ny)?;
    let u0_ref = initial_field(cfg, ref_grid);
    let limit = solve_limit(&u0_ref, cfg.t, cfg.dt, &phase, &ref_grid)?;
    let identity_layer =
        cfg.alpha == 0.0 && cfg.beta == 0.0 && cfg.c_tan == 1.0 && cfg.c_norm == 1.0;
    let rows = cfg
        .eps
        .par_iter()
        .map(|&eps| {
            let grid = if identity_layer {
                ref_grid
            } else {
                make_grid(cfg.lx, cfg.ly, cfg.nx, layer_rows(cfg.ly, eps)?)?
            };
            let s = ScaleParams::new(
                eps,
                cfg.c_tan * eps.powf(cfg.alpha),
                cfg.c_norm * eps.powf(cfg.beta),
            )?;
            let u0 = initial_field(cfg, grid);
            let sol = solve_eps(&u0, cfg.t, cfg.dt, &s)?;
            let restricted = SplitField::from_fn(ref_grid, |x1, x2| {
                let side = if x2.is_sign_negative() { Side::Minus } else { Side::Plus };
                sol.interp(side, x1, x2.abs())
            });
            Ok(ErrorRow { parameter: eps, error: l2_diff(&restricted, &limit), se: None })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let pass = decreasing_or_floor(&rows);
    Ok(RunReport {
        kind: "mosco".into(),
        phase: Some(phase.to_string()),
        phase_detail: Some(phase),
        pass,
        rows,
        bc: Vec::new(),
        mc: Vec::new(),
        config: cfg.clone(),
    })
}

fn swept_phase(cfg: &ExperimentConfig, v: f64) -> Result<Phase, HarnessError> {
    Ok(match cfg.family.as_str() {
        "II" => Phase::II { kappa: v },
        "IV" => Phase::IV { lambda: v },
        "VI" => Phase::VI { mu: cfg.mu, ell: v },
        other => return Err(HarnessError::Config(format!("unknown sweep family {other:?}"))),
    })
}

fn target_phase(cfg: &ExperimentConfig) -> Result<Phase, HarnessError> {
    let tv = cfg.sweep_target.0;
    let finite = tv > 0.0 && tv.is_finite();
    Ok(match (cfg.family.as_str(), finite) {
        ("II", true) => Phase::II { kappa: tv },
        // the exchange rate insulates at 0 and becomes transparent at inf
        ("II", false) if tv == 0.0 => Phase::III,
        ("II", false) => Phase::I,
        ("IV", true) => Phase::IV { lambda: tv },
        // zero lateral enhancement leaves a transparent interface; infinite
        // enhancement flattens the trace
        ("IV", false) if tv == 0.0 => Phase::I,
        ("IV", false) => Phase::V,
        ("VI", true) => Phase::VI { mu: cfg.mu, ell: tv },
        ("VI", false) if tv == 0.0 => {
            return Err(HarnessError::Config(
                "the vanishing-range limit of the finite-range family is not a supported target"
                    .into(),
            ))
        }
        ("VI", false) => Phase::VII { mu: cfg.mu },
        _ => return Err(HarnessError::Config(format!("unknown sweep family {:?}", cfg.family))),
    })
}

/// Resolvent continuity along one regime family: the gap between the swept
/// resolvent and the target's resolvent on a fixed grid, which must fall to
/// the discretization floor as the parameter approaches the target.
pub fn run_continuity_sweep(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let target = target_phase(cfg)?;
    let grid = make_grid(cfg.lx, cfg.ly, cfg.nx, cfg.ny)?;
    let u0 = initial_field(cfg, grid);
    let reference = resolvent(&u0, cfg.res_alpha, &target, &grid)?;
    let rows = cfg
        .sweep
        .par_iter()
        .map(|&v| {
            let sol = resolvent(&u0, cfg.res_alpha, &swept_phase(cfg, v)?, &grid)?;
            Ok(ErrorRow { parameter: v, error: l2_diff(&sol, &reference), se: None })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let pass = converging_to_floor(&rows);
    Ok(RunReport {
        kind: "continuity".into(),
        phase: Some(target.to_string()),
        phase_detail: Some(target),
        pass,
        rows,
        bc: Vec::new(),
        mc: Vec::new(),
        config: cfg.clone(),
    })
}

fn phase_by_name(name: &str, cfg: &ExperimentConfig) -> Result<Phase, HarnessError> {
    Ok(match name {
        "I" => Phase::I,
        "II" => Phase::II { kappa: cfg.kappa },
        "III" => Phase::III,
        "IV" => Phase::IV { lambda: cfg.lambda },
        "V" => Phase::V,
        "VI" => Phase::VI { mu: cfg.mu, ell: cfg.ell },
        "VII" => Phase::VII { mu: cfg.mu },
        other => return Err(HarnessError::Config(format!("unknown phase name {other:?}"))),
    })
}

/// Residuals at or below this are treated as built into the scheme rather
/// than converging discretization defects.
const RESIDUAL_FLOOR: f64 = 1e-10;

fn ratio_threshold(phase: &str) -> f64 {
    // the decoupled sheets use one-sided second-order stencils, so the
    // insulating regime must sharpen faster than the coupled ones
    if phase == "III" {
        3.0
    } else {
        1.8
    }
}

fn residual_table(
    cfg: &ExperimentConfig,
    phase: &Phase,
    grid: SplitGrid,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let u0 = initial_field(cfg, grid);
    let r = resolvent(&u0, cfg.res_alpha, phase, &grid)?;
    Ok(bc_residual(&r, phase, &grid)?.conditions)
}

/// Interface-condition verification: residuals of each regime's conditions
/// on the resolvent at two resolutions (the second halves both spacings).
/// Conditions the scheme enforces identically must stay at the floor; the
/// rest must shrink by at least the per-regime ratio.
pub fn run_bc_verification(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let coarse = make_grid(cfg.lx, cfg.ly, cfg.nx, cfg.ny)?;
    let fine = make_grid(cfg.lx, cfg.ly, 2 * cfg.nx, 2 * cfg.ny)?;
    let mut bc = Vec::new();
    let mut pass = true;
    for name in &cfg.phases {
        let phase = phase_by_name(name, cfg)?;
        let rc = residual_table(cfg, &phase, coarse)?;
        let rf = residual_table(cfg, &phase, fine)?;
        for (cond, &c) in &rc {
            let f = *rf.get(cond).ok_or_else(|| {
                HarnessError::Config(format!("condition {cond} missing on the fine grid"))
            })?;
            let structural = c <= RESIDUAL_FLOOR && f <= RESIDUAL_FLOOR;
            let (ratio, ok) = if structural {
                (None, true)
            } else if name == "V" {
                // pinned interface rows must vanish identically
                (Some(c / f.max(1e-300)), false)
            } else if f > 0.0 {
                let r = c / f;
                (Some(r), r >= ratio_threshold(name))
            } else {
                (None, true)
            };
            pass &= ok;
            bc.push(BcRow {
                phase: name.clone(),
                condition: cond.clone(),
                coarse: c,
                fine: f,
                ratio,
            });
        }
    }
    Ok(RunReport {
        kind: "bc".into(),
        phase: None,
        phase_detail: None,
        pass,
        rows: Vec::new(),
        bc,
        mc: Vec::new(),
        config: cfg.clone(),
    })
}

/// Flat slack added to the 3-sigma band of the field checks; absorbs the
/// solver's O(dt^2) stepping error and the samplers' O(sqrt(dt)) band bias.
const MC_SLACK: f64 = 5e-3;

fn field_check(
    name: &str,
    x0: (f64, f64),
    mc_mean: f64,
    se: f64,
    reference: f64,
    slack: f64,
) -> McCheck {
    let gap = (mc_mean - reference).abs();
    let tol = 3.0 * se + slack;
    McCheck { name: name.into(), x0, mc_mean, se, reference, gap, tol, pass: gap <= tol }
}

fn check_eps_walk(cfg: &ExperimentConfig) -> Result<McCheck, HarnessError> {
    // the lattice walk is exact in law for the layered generator
    let grid = make_grid(4.0, 2.0, 32, 20)?;
    let s = ScaleParams::new(0.2, 0.2, 0.2)?;
    let u0 = SplitField::from_fn(grid, |x1, x2| {
        (-((x1 - 0.5).powi(2) + (x2 - 0.5).powi(2)) / (2.0 * 0.36)).exp()
    });
    let reference = solve_eps(&u0, 0.5, 0.005, &s)?.at(Side::Plus, 5, 16);
    let walk = EpsWalk::new(&grid, &s)?;
    let (m, e) = empirical_semigroup(
        &u0,
        &[(0.0, 0.5)],
        0.5,
        cfg.n_paths,
        cfg.seed.wrapping_add(1),
        |x0, t, rng| walk.simulate(x0, t, rng),
    );
    Ok(field_check("eps-walk", (0.0, 0.5), m[0], e[0], reference, MC_SLACK))
}

fn check_reflecting(cfg: &ExperimentConfig) -> Result<McCheck, HarnessError> {
    // reflected increments are exact in law, and the insulating regime
    // keeps the sheets independent, so the upper solution is the reflected
    // half-plane flow
    let grid = make_grid(4.0, 4.0, 64, 64)?;
    let u0 = SplitField::from_fn(grid, |x1, x2| {
        (-((x1 - 0.3).powi(2) + (x2 - 0.8).powi(2)) / (2.0 * 0.25)).exp()
    });
    let reference = solve_limit(&u0, 0.5, 0.005, &Phase::III, &grid)?.at(Side::Plus, 16, 32);
    let (m, e) = empirical_semigroup(
        &u0,
        &[(0.0, 1.0)],
        0.5,
        cfg.n_paths,
        cfg.seed.wrapping_add(2),
        |x0, t, rng| simulate_basic(x0, t, BasicKind::Reflecting, 1e-3, rng),
    );
    Ok(field_check("reflecting-insulating", (0.0, 1.0), m[0], e[0], reference, MC_SLACK))
}

fn check_absorbing_moment(cfg: &ExperimentConfig) -> Result<McCheck, HarnessError> {
    let grid = make_grid(4.0, 4.0, 64, 64)?;
    let u0 = SplitField::from_fn(grid, |x1, x2| {
        (-((x1 - 0.3).powi(2) + (x2 - 0.8).powi(2)) / (2.0 * 0.25)).exp()
    });
    let reference = solve_limit(&u0, 0.5, 0.005, &Phase::V, &grid)?.at(Side::Plus, 16, 32);
    let (m, e) = empirical_semigroup(
        &u0,
        &[(0.0, 1.0)],
        0.5,
        cfg.n_paths,
        cfg.seed.wrapping_add(3),
        |x0, t, rng| simulate_basic(x0, t, BasicKind::Absorbing, cfg.mc_dt, rng),
    );
    Ok(field_check("absorbing-flattening", (0.0, 1.0), m[0], e[0], reference, MC_SLACK))
}

fn check_absorbing_survival(cfg: &ExperimentConfig) -> McCheck {
    // strict 3-sigma check against the closed-form survival probability, so
    // the step must keep the sub-step crossing bias (about 0.28 sqrt(dt))
    // well inside the band
    let dt = 2.5e-5;
    let seed = cfg.seed.wrapping_add(4);
    let alive: usize = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            simulate_basic((0.0, 1.0), 1.0, BasicKind::Absorbing, dt, &mut rng).alive as usize
        })
        .sum();
    let p = alive as f64 / cfg.n_paths as f64;
    let se = (p * (1.0 - p) / cfg.n_paths as f64).sqrt();
    let reference = absorbing_survival(1.0, 1.0);
    let gap = (p - reference).abs();
    McCheck {
        name: "absorbing-survival".into(),
        x0: (0.0, 1.0),
        mc_mean: p,
        se,
        reference,
        gap,
        tol: 3.0 * se,
        pass: gap <= 3.0 * se,
    }
}

fn check_snob(cfg: &ExperimentConfig) -> Result<McCheck, HarnessError> {
    // product law: independent tangential motion times the component-flip
    // walk reproduces the exchange-coupled field
    let kappa = cfg.kappa;
    let grid = make_grid(4.0, 4.0, 64, 64)?;
    let u0 = SplitField::from_fn(grid, |x1, x2| {
        (-(x1 - 0.3).powi(2) / (2.0 * 0.49)).exp() * (0.8 + 0.4 * (1.5 * x2).tanh())
    });
    let reference = solve_limit(&u0, 0.4, 0.005, &Phase::II { kappa }, &grid)?.at(Side::Plus, 8, 36);
    let (m, e) = empirical_semigroup(
        &u0,
        &[(0.5, 0.5)],
        0.4,
        cfg.n_paths,
        cfg.seed.wrapping_add(5),
        |x0, t, rng| {
            let (y, side) = simulate_snob(x0.1, t, kappa, 2.5e-4, rng);
            let x1 = x0.0 + t.sqrt() * rng.sample::<f64, _>(StandardNormal);
            PathState { x1, x2: side.sign() * y, component: side, local_time: 0.0, alive: true }
        },
    );
    Ok(field_check("snob-membrane", (0.5, 0.5), m[0], e[0], reference, MC_SLACK))
}

fn check_type4(cfg: &ExperimentConfig) -> Result<McCheck, HarnessError> {
    let lambda = cfg.lambda;
    let grid = make_grid(8.0, 4.0, 128, 64)?;
    let u0 = SplitField::from_fn(grid, |x1, _| (-x1 * x1 / (2.0 * 0.5625)).exp());
    let reference =
        solve_limit(&u0, 1.0, 0.005, &Phase::IV { lambda }, &grid)?.at(Side::Plus, 0, 64);
    let (m, e) = empirical_semigroup(
        &u0,
        &[(0.0, 0.0)],
        1.0,
        cfg.n_paths,
        cfg.seed.wrapping_add(6),
        |x0, t, rng| simulate_type4(x0, t, lambda, 2.5e-4, rng),
    );
    Ok(field_check("type4-enhanced", (0.0, 0.0), m[0], e[0], reference, MC_SLACK))
}

/// Monte Carlo cross-check battery: each selected sampler runs against its
/// matching solver (or closed form) on a pinned protocol; a check passes
/// when the gap sits inside three standard errors plus the documented slack.
pub fn run_mc_crosscheck(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let mut mc = Vec::new();
    for check in &cfg.checks {
        match check.as_str() {
            "eps" => mc.push(check_eps_walk(cfg)?),
            "reflecting" => mc.push(check_reflecting(cfg)?),
            "absorbing" => {
                mc.push(check_absorbing_moment(cfg)?);
                mc.push(check_absorbing_survival(cfg));
            }
            "snob" => mc.push(check_snob(cfg)?),
            "type4" => mc.push(check_type4(cfg)?),
            other => {
                return Err(HarnessError::Config(format!("unknown cross-check {other:?}")))
            }
        }
    }
    let pass = mc.iter().all(|c| c.pass);
    Ok(RunReport {
        kind: "mc".into(),
        phase: None,
        phase_detail: None,
        pass,
        rows: Vec::new(),
        bc: Vec::new(),
        mc,
        config: cfg.clone(),
    })
}

/// Regime classification from explicit scale limits when given, otherwise
/// from the monomial exponents.
pub fn classify_report(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let phase = match &cfg.limits {
        Some(l) => {
            let ext = |v: ExtVal| Ext::from_value(v.0);
            classify(&LimitScales::new(ext(l[0])?, ext(l[1])?, ext(l[2])?, ext(l[3])?)?)?
        }
        None => classify_monomial(cfg.alpha, cfg.beta, cfg.c_tan, cfg.c_norm),
    };
    Ok(RunReport {
        kind: "classify".into(),
        phase: Some(phase.to_string()),
        phase_detail: Some(phase),
        pass: true,
        rows: Vec::new(),
        bc: Vec::new(),
        mc: Vec::new(),
        config: cfg.clone(),
    })
}

fn results_csv(report: &RunReport) -> String {
    let mut s = String::from("parameter,error,se\n");
    for r in &report.rows {
        s.push_str(&format!("{},{},\n", r.parameter, r.error));
    }
    for b in &report.bc {
        s.push_str(&format!("{}/{}/coarse,{},\n", b.phase, b.condition, b.coarse));
        s.push_str(&format!("{}/{}/fine,{},\n", b.phase, b.condition, b.fine));
    }
    for c in &report.mc {
        s.push_str(&format!("{},{},{}\n", c.name, c.gap, c.se));
    }
    s
}

fn plot_script(report: &RunReport) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset terminal pngcairo size 960,640\nset output 'results.png'\nset key off\nset grid\n",
    );
    match report.kind.as_str() {
        "mosco" => s.push_str(
            "set logscale xy\nset xlabel 'layer width'\nset ylabel 'L2 gap to the limit'\nplot 'results.csv' every ::1 using 1:2 with linespoints pt 7\n",
        ),
        "continuity" => s.push_str(
            "set logscale xy\nset xlabel 'swept parameter'\nset ylabel 'resolvent gap to the target'\nplot 'results.csv' every ::1 using 1:2 with linespoints pt 7\n",
        ),
        "bc" => s.push_str(
            "set logscale y\nset ylabel 'interface residual'\nset xtics rotate by -35\nplot 'results.csv' every ::1 using 2:xtic(1) with points pt 7\n",
        ),
        "mc" => s.push_str(
            "set ylabel 'gap to the reference'\nset xtics rotate by -35\nplot 'results.csv' every ::1 using 2:3:xtic(1) with yerrorbars pt 7\n",
        ),
        _ => s.push_str("# nothing to plot for this run kind\n"),
    }
    s
}

/// Writes results.csv, report.json, and plot.gp (all byte-stable for a
/// fixed config and seed) plus the run.log sidecar, the only file allowed
/// to carry wall-clock information.
pub fn write_outputs(dir: &Path, report: &RunReport, elapsed_s: f64) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), results_csv(report))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    fs::write(dir.join("plot.gp"), plot_script(report))?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let log = format!(
        "kind = {}\npass = {}\nelapsed_s = {elapsed_s:.3}\nunix_time_s = {stamp}\n",
        report.kind, report.pass
    );
    fs::write(dir.join("run.log"), log)?;
    Ok(())
}
