//! Classification of the limiting interface regime.
//!
//! As the layer thins, three scales decide what survives at the interface:
//! the tangent total conductivity C, the normal total resistance R, and the
//! mixing scale M = sqrt(C/R); the splitting length L = sqrt(C*R) sets the
//! range of the lateral coupling. Their limits select one of seven effective
//! boundary behaviors, from a transparent interface (I) to a perfect
//! insulator (III), a perfectly conducting sandwiched wire (V), and the
//! mixed nonlocal regimes (VI, VII).

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::eps::ScaleParams;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("inconsistent scale limits: {0}")]
    Inconsistent(String),
    #[error("scale limits must lie in [0, +inf], got {0}")]
    Domain(f64),
}

/// A limit value in the extended half-line [0, +inf]. `Fin` holds a strictly
/// positive finite value; zero and infinity are their own variants so branch
/// logic never touches floating-point infinities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Ext {
    Zero,
    Fin(f64),
    Inf,
}

impl Ext {
    pub fn from_value(v: f64) -> Result<Ext, PhaseError> {
        if v.is_nan() || v < 0.0 {
            return Err(PhaseError::Domain(v));
        }
        Ok(if v == 0.0 {
            Ext::Zero
        } else if v.is_infinite() {
            Ext::Inf
        } else {
            Ext::Fin(v)
        })
    }

    fn approx_eq(self, other: Ext) -> bool {
        match (self, other) {
            (Ext::Fin(a), Ext::Fin(b)) => (a - b).abs() <= 1e-9 * a.abs().max(b.abs()),
            (a, b) => a == b,
        }
    }

    /// Extended product; `None` when indeterminate (0 * inf).
    fn mul(self, other: Ext) -> Option<Ext> {
        match (self, other) {
            (Ext::Zero, Ext::Inf) | (Ext::Inf, Ext::Zero) => None,
            (Ext::Zero, _) | (_, Ext::Zero) => Some(Ext::Zero),
            (Ext::Inf, _) | (_, Ext::Inf) => Some(Ext::Inf),
            (Ext::Fin(a), Ext::Fin(b)) => Some(Ext::Fin(a * b)),
        }
    }

    /// Extended quotient; `None` when indeterminate (0/0, inf/inf).
    fn div(self, other: Ext) -> Option<Ext> {
        match (self, other) {
            (Ext::Zero, Ext::Zero) | (Ext::Inf, Ext::Inf) => None,
            (Ext::Zero, _) | (_, Ext::Inf) => Some(Ext::Zero),
            (Ext::Inf, _) | (_, Ext::Zero) => Some(Ext::Inf),
            (Ext::Fin(a), Ext::Fin(b)) => Some(Ext::Fin(a / b)),
        }
    }
}

impl fmt::Display for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::Zero => write!(f, "0"),
            Ext::Fin(v) => write!(f, "{v}"),
            Ext::Inf => write!(f, "inf"),
        }
    }
}

/// Jointly attained limits of the four scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimitScales {
    pub c: Ext,
    pub r: Ext,
    pub m: Ext,
    pub l: Ext,
}

impl LimitScales {
    /// Validated constructor; see [`LimitScales::validate`].
    pub fn new(c: Ext, r: Ext, m: Ext, l: Ext) -> Result<Self, PhaseError> {
        let s = LimitScales { c, r, m, l };
        s.validate()?;
        Ok(s)
    }

    /// Checks that some family of layer scalings attains all four limits
    /// jointly. Writing the underlying scales as C = M*L and R = L/M (exact
    /// identities at every thickness), a quadruple is attainable iff C and R
    /// match those extended products whenever the products are determinate;
    /// an indeterminate slot (0 * inf or 0/0, inf/inf) is a free limit, and
    /// at most one slot can be indeterminate at a time.
    pub fn validate(&self) -> Result<(), PhaseError> {
        if let Some(c) = self.m.mul(self.l) {
            if !c.approx_eq(self.c) {
                return Err(PhaseError::Inconsistent(format!(
                    "C = {} but M*L = {} (M = {}, L = {})",
                    self.c, c, self.m, self.l
                )));
            }
        }
        if let Some(r) = self.l.div(self.m) {
            if !r.approx_eq(self.r) {
                return Err(PhaseError::Inconsistent(format!(
                    "R = {} but L/M = {} (M = {}, L = {})",
                    self.r, r, self.m, self.l
                )));
            }
        }
        Ok(())
    }
}

/// The seven limiting regimes with their surviving parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "phase")]
pub enum Phase {
    /// Transparent interface: the layer vanishes without a trace.
    I,
    /// Semipermeable membrane: flux proportional to the jump, rate kappa.
    II { kappa: f64 },
    /// Perfect insulator: the two half-planes decouple.
    III,
    /// Conducting sheet: lateral diffusion enhancement of strength lambda
    /// on a continuous trace.
    IV { lambda: f64 },
    /// Perfectly conducting sheet: the trace is flattened to a constant.
    V,
    /// Membrane with lateral mixing at finite range ell and strength mu.
    VI { mu: f64, ell: f64 },
    /// Membrane with scale-free lateral mixing of strength mu.
    VII { mu: f64 },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::I => "I",
            Phase::II { .. } => "II",
            Phase::III => "III",
            Phase::IV { .. } => "IV",
            Phase::V => "V",
            Phase::VI { .. } => "VI",
            Phase::VII { .. } => "VII",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::II { kappa } => write!(f, "II(kappa={kappa})"),
            Phase::IV { lambda } => write!(f, "IV(lambda={lambda})"),
            Phase::VI { mu, ell } => write!(f, "VI(mu={mu}, ell={ell})"),
            Phase::VII { mu } => write!(f, "VII(mu={mu})"),
            other => write!(f, "{}", other.name()),
        }
    }
}

/// Maps jointly attained scale limits to the surviving regime.
///
/// Branches: M = 0 splits on R (0 -> I, finite -> II with kappa = 1/R,
/// inf -> III); M = inf splits on C (0 -> I, finite -> IV with lambda = C,
/// inf -> V); finite positive M splits on R (0 -> I, finite -> VI with
/// mu = M and ell = L = M*R, inf -> VII with mu = M).
pub fn classify(limits: &LimitScales) -> Result<Phase, PhaseError> {
    limits.validate()?;
    Ok(match limits.m {
        Ext::Zero => match limits.r {
            Ext::Zero => Phase::I,
            Ext::Fin(r) => Phase::II { kappa: 1.0 / r },
            Ext::Inf => Phase::III,
        },
        Ext::Inf => match limits.c {
            Ext::Zero => Phase::I,
            Ext::Fin(c) => Phase::IV { lambda: c },
            Ext::Inf => Phase::V,
        },
        Ext::Fin(m) => match limits.r {
            Ext::Zero => Phase::I,
            Ext::Fin(_) => {
                let Ext::Fin(l) = limits.l else {
                    unreachable!("validation pins L = M*R when M and R are finite")
                };
                Phase::VI { mu: m, ell: l }
            }
            Ext::Inf => Phase::VII { mu: m },
        },
    })
}

/// Layer scaling of the monomial family a_tan = c_tan eps^alpha,
/// a_norm = c_norm eps^beta at a concrete thickness.
pub fn scales_from_monomials(
    eps: f64,
    alpha: f64,
    beta: f64,
    c_tan: f64,
    c_norm: f64,
) -> ScaleParams {
    assert!(
        eps > 0.0 && c_tan > 0.0 && c_norm > 0.0,
        "monomial scalings need positive eps and coefficients"
    );
    ScaleParams::new(eps, c_tan * eps.powf(alpha), c_norm * eps.powf(beta))
        .expect("positive inputs produce positive conductivities")
}

fn power_limit(exponent: f64, coeff: f64) -> Ext {
    if exponent > 0.0 {
        Ext::Zero
    } else if exponent < 0.0 {
        Ext::Inf
    } else {
        Ext::Fin(coeff)
    }
}

/// Scale limits of the monomial family as the thickness goes to zero:
/// C ~ c_tan eps^(1+alpha), R ~ eps^(1-beta)/c_norm,
/// M ~ sqrt(c_tan c_norm) eps^((alpha+beta)/2),
/// L ~ sqrt(c_tan/c_norm) eps^((2+alpha-beta)/2).
pub fn monomial_limits(alpha: f64, beta: f64, c_tan: f64, c_norm: f64) -> LimitScales {
    assert!(c_tan > 0.0 && c_norm > 0.0, "coefficients must be positive");
    LimitScales {
        c: power_limit(1.0 + alpha, c_tan),
        r: power_limit(1.0 - beta, 1.0 / c_norm),
        m: power_limit(0.5 * (alpha + beta), (c_tan * c_norm).sqrt()),
        l: power_limit(0.5 * (2.0 + alpha - beta), (c_tan / c_norm).sqrt()),
    }
}

/// Direct regime table for the monomial family:
/// alpha+beta > 0 splits on beta (<1 -> I, =1 -> II with kappa = c_norm,
/// >1 -> III); alpha+beta < 0 splits on alpha (>-1 -> I, =-1 -> IV with
/// lambda = c_tan, <-1 -> V); alpha+beta = 0 splits on alpha (>-1 -> I,
/// =-1 -> VI with mu = sqrt(c_tan c_norm) and ell = sqrt(c_tan/c_norm),
/// <-1 -> VII with mu = sqrt(c_tan c_norm)).
pub fn classify_monomial(alpha: f64, beta: f64, c_tan: f64, c_norm: f64) -> Phase {
    assert!(c_tan > 0.0 && c_norm > 0.0, "coefficients must be positive");
    let s = alpha + beta;
    if s > 0.0 {
        if beta < 1.0 {
            Phase::I
        } else if beta == 1.0 {
            Phase::II { kappa: c_norm }
        } else {
            Phase::III
        }
    } else if s < 0.0 {
        if alpha > -1.0 {
            Phase::I
        } else if alpha == -1.0 {
            Phase::IV { lambda: c_tan }
        } else {
            Phase::V
        }
    } else if alpha > -1.0 {
        Phase::I
    } else if alpha == -1.0 {
        Phase::VI { mu: (c_tan * c_norm).sqrt(), ell: (c_tan / c_norm).sqrt() }
    } else {
        Phase::VII { mu: (c_tan * c_norm).sqrt() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phases_match(a: &Phase, b: &Phase) -> bool {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300);
        match (a, b) {
            (Phase::I, Phase::I) | (Phase::III, Phase::III) | (Phase::V, Phase::V) => true,
            (Phase::II { kappa: x }, Phase::II { kappa: y }) => close(*x, *y),
            (Phase::IV { lambda: x }, Phase::IV { lambda: y }) => close(*x, *y),
            (Phase::VI { mu: m1, ell: l1 }, Phase::VI { mu: m2, ell: l2 }) => {
                close(*m1, *m2) && close(*l1, *l2)
            }
            (Phase::VII { mu: m1 }, Phase::VII { mu: m2 }) => close(*m1, *m2),
            _ => false,
        }
    }

    #[test]
    fn classify_branch_table() {
        let fin = Ext::Fin;
        // transparent from every branch
        for limits in [
            LimitScales { c: Ext::Zero, r: Ext::Zero, m: fin(7.0), l: Ext::Zero },
            LimitScales { c: Ext::Zero, r: Ext::Zero, m: Ext::Zero, l: Ext::Zero },
            LimitScales { c: Ext::Zero, r: Ext::Zero, m: Ext::Inf, l: Ext::Zero },
        ] {
            assert_eq!(classify(&limits).unwrap(), Phase::I);
        }
        let ii = LimitScales { c: Ext::Zero, r: fin(2.0), m: Ext::Zero, l: Ext::Zero };
        assert!(phases_match(&classify(&ii).unwrap(), &Phase::II { kappa: 0.5 }));
        let iii = LimitScales { c: Ext::Zero, r: Ext::Inf, m: Ext::Zero, l: fin(1.0) };
        assert_eq!(classify(&iii).unwrap(), Phase::III);
        let iv = LimitScales { c: fin(5.0), r: Ext::Zero, m: Ext::Inf, l: Ext::Zero };
        assert!(phases_match(&classify(&iv).unwrap(), &Phase::IV { lambda: 5.0 }));
        let v = LimitScales { c: Ext::Inf, r: Ext::Zero, m: Ext::Inf, l: Ext::Inf };
        assert_eq!(classify(&v).unwrap(), Phase::V);
        let vi = LimitScales { c: fin(12.0), r: fin(3.0), m: fin(2.0), l: fin(6.0) };
        assert!(phases_match(&classify(&vi).unwrap(), &Phase::VI { mu: 2.0, ell: 6.0 }));
        let vii = LimitScales { c: Ext::Inf, r: Ext::Inf, m: fin(3.0), l: Ext::Inf };
        assert!(phases_match(&classify(&vii).unwrap(), &Phase::VII { mu: 3.0 }));
    }

    #[test]
    fn inconsistent_limits_are_rejected
    () {
        // M = 0 with C = inf cannot happen for any L
        for l in [Ext::Zero, Ext::Fin(1.0), Ext::Inf] {
            let bad = LimitScales { c: Ext::Inf, r: Ext::Fin(1.0), m: Ext::Zero, l };
            assert!(classify(&bad).is_err(), "L = {l}");
        }
        // all finite but violating C = M^2 R
        let bad = LimitScales { c: Ext::Fin(5.0), r: Ext::Fin(1.0), m: Ext::Fin(2.0), l: Ext::Fin(2.0) };
        assert!(bad.validate().is_err());
        assert!(LimitScales::new(Ext::Fin(4.0), Ext::Fin(1.0), Ext::Fin(2.0), Ext::Fin(2.0)).is_ok());
        // domain checks on raw values
        assert!(Ext::from_value(-1.0).is_err());
        assert!(Ext::from_value(f64::NAN).is_err());
        assert_eq!(Ext::from_value(0.0).unwrap(), Ext::Zero);
        assert_eq!(Ext::from_value(f64::INFINITY).unwrap(), Ext::Inf);
    }

    #[test]
    fn monomial_scales_match_published_fixtures() {
        // (alpha=1, beta=0): (C, R, M) = (eps^2, eps, sqrt(eps))
        let s = scales_from_monomials(0.25, 1.0, 0.0, 1.0, 1.0);
        assert!((s.c() - 0.0625).abs() < 1e-15);
        assert!((s.r() - 0.25).abs() < 1e-15);
        assert!((s.m() - 0.5).abs() < 1e-14);
        assert!((s.l() - 0.125).abs() < 1e-15);
        // (alpha=1, beta=1, c_norm=2): R = 1/2 at every thickness
        for eps in [0.5, 0.01] {
            let s = scales_from_monomials(eps, 1.0, 1.0, 1.0, 2.0);
            assert!((s.r() - 0.5).abs() < 1e-14);
        }
        // (alpha=-1, beta=1): all four scales pinned to 1
        for eps in [0.3, 0.004] {
            let s = scales_from_monomials(eps, -1.0, 1.0, 1.0, 1.0);
            for v in [s.c(), s.r(), s.m(), s.l()] {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
        // the worked intro pair: C = eps^2, R = 1, M = eps and its mirror
        let s = scales_from_monomials(0.3, 1.0, 1.0, 1.0, 1.0);
        assert!((s.c() - 0.09).abs() < 1e-15);
        assert!((s.r() - 1.0).abs() < 1e-15);
        assert!((s.m() - 0.3).abs() < 1e-14);
        let s = scales_from_monomials(0.3, -1.0, -1.0, 1.0, 1.0);
        assert!((s.c() - 1.0).abs() < 1e-15);
        assert!((s.r() - 0.09).abs() < 1e-15);
        assert!((s.m() - 1.0 / 0.3).abs() < 1e-14);
    }

    #[test]
    fn monomial_table_spec_cases() {
        assert!(phases_match(
            &classify_monomial(1.0, 1.0, 3.0, 5.0),
            &Phase::II { kappa: 5.0 }
        ));
        assert!(phases_match(
            &classify_monomial(-1.0, 1.0, 2.0, 0.5),
            &Phase::VI { mu: 1.0, ell: 2.0 }
        ));
        assert!(phases_match(
            &classify_monomial(-2.0, 2.0, 2.0, 4.5),
            &Phase::VII { mu: 3.0 }
        ));
    }

    #[test]
    fn diagonal_family_has_exactly_five_regimes() {
        let (ct, cn) = (2.0, 3.0);
        let phase_at = |a: f64| classify_monomial(a, a, ct, cn);
        assert_eq!(phase_at(2.0), Phase::III);
        assert_eq!(phase_at(1.5), Phase::III);
        assert!(phases_match(&phase_at(1.0), &Phase::II { kappa: cn }));
        for a in [0.7, 0.2, 0.0, -0.4, -0.99] {
            assert_eq!(phase_at(a), Phase::I, "alpha = {a}");
        }
        assert!(phases_match(&phase_at(-1.0), &Phase::IV { lambda: ct }));
        assert_eq!(phase_at(-1.5), Phase::V);
        assert_eq!(phase_at(-3.0), Phase::V);
    }

    proptest! {
        #[test]
        fn monomial_table_agrees_with_limit_classification(
            ai in 0usize..7,
            bi in 0usize..7,
            ct in 1e-2f64..1e2,
            cn in 1e-2f64..1e2,
        ) {
            let grid = [-2.0, -1.5, -1.0, -0.5, 0.0, 1.0, 2.0];
            let (alpha, beta) = (grid[ai], grid[bi]);
            let direct = classify_monomial(alpha, beta, ct, cn);
            let limits = monomial_limits(alpha, beta, ct, cn);
            let via_limits = classify(&limits).unwrap();
            prop_assert!(
                phases_match(&direct, &via_limits),
                "({alpha}, {beta}): {direct} vs {via_limits}"
            );
        }

        #[test]
        fn classify_parameters_satisfy_scale_identities(
            m in 1e-3f64..1e3,
            r in 1e-3f64..1e3,
        ) {
            // finite positive M and R force VI with mu = M, ell = M*R
            let l = m * r;
            let c = m * l;
            let limits = LimitScales::new(Ext::Fin(c), Ext::Fin(r), Ext::Fin(m), Ext::Fin(l)).unwrap();
            let Phase::VI { mu, ell } = classify(&limits).unwrap() else {
                return Err(TestCaseError::fail("expected VI"));
            };
            prop_assert!((mu - m).abs() <= 1e-12 * m);
            prop_assert!((ell - m * r).abs() <= 1e-12 * ell.abs());
            // membrane branch: kappa = 1/R
            let ii = LimitScales::new(Ext::Zero, Ext::Fin(r), Ext::Zero, Ext::Zero).unwrap();
            let Phase::II { kappa } = classify(&ii).unwrap() else {
                return Err(TestCaseError::fail("expected II"));
            };
            prop_assert!((kappa * r - 1.0).abs() <= 1e-12);
            // conducting-sheet branch: lambda = C
            let iv = LimitScales::new(Ext::Fin(c), Ext::Zero, Ext::Inf, Ext::Zero).unwrap();
            let Phase::IV { lambda } = classify(&iv).unwrap() else {
                return Err(TestCaseError::fail("expected IV"));
            };
            prop_assert!((lambda - c).abs() <= 1e-12 * c);
        }
    }

    #[test]
    fn serializes_with_phase_tag() {
        let j = serde_json::to_string(&Phase::II { kappa: 0.5 }).unwrap();
        assert_eq!(j, r#"{"phase":"II","kappa":0.5}"#);
        let j = serde_json::to_string(&Phase::I).unwrap();
        assert_eq!(j, r#"{"phase":"I"}"#);
        assert_eq!(Phase::VI { mu: 1.0, ell: 2.0 }.to_string(), "VI(mu=1, ell=2)");
    }
}
