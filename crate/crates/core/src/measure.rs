//! Finite measures Λ on `[0,1]`, represented as atoms plus density pieces.
//!
//! Integration sums atoms exactly and runs adaptive quadrature on every
//! density piece. Densities with an integrable power singularity at an
//! endpoint (`x^p` with `-1 < p < 0` near 0, or `(1-x)^q` with `-1 < q < 0`
//! near 1) are integrated after the change of variables `u = x^{p+1}`
//! (resp. `v = (1-x)^{q+1}`), which turns the singular factor into a constant.
//!
//! Integrands receive both `x` and `1 - x`; after the substitution near 1 the
//! second argument is computed directly from `v`, so factors like
//! `(1-x)^{b-k}` keep full relative precision.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::quadrature::{self, Estimate, QuadratureConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Atom {
    pub at: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", deny_unknown_fields))]
pub enum DensityShape {
    /// Constant density 1 (Lebesgue measure).
    Uniform,
    /// The Beta(2-α, α) probability density `x^{1-α}(1-x)^{α-1} / (Γ(2-α)Γ(α))`, α ∈ (0,2).
    Beta { alpha: f64 },
    /// `x^p (1-x)^q`.
    Power { p: f64, q: f64 },
    /// `Σ_j coeffs[j] x^j`.
    Polynomial { coeffs: Vec<f64> },
}

impl DensityShape {
    /// Endpoint exponents `(p, q)` and normalisation for power-type shapes.
    fn power_form(&self) -> Option<(f64, f64, f64)> {
        match *self {
            DensityShape::Uniform => Some((0.0, 0.0, 1.0)),
            DensityShape::Beta { alpha } => {
                let norm = 1.0 / (math::gamma(2.0 - alpha) * math::gamma(alpha));
                Some((1.0 - alpha, alpha - 1.0, norm))
            }
            DensityShape::Power { p, q } => Some((p, q, 1.0)),
            DensityShape::Polynomial { .. } => None,
        }
    }

    /// Density value at `x`, given `y = 1 - x`.
    fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            DensityShape::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            _ => {
                let (p, q, norm) = self.power_form().unwrap_or((0.0, 0.0, 1.0));
                norm * pow_or_one(x, p) * pow_or_one(y, q)
            }
        }
    }
}

#[inline]
fn pow_or_one(base: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        math::pow(base, e)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    #[cfg_attr(feature = "serde", serde(default = "one"))]
    pub weight: f64,
    pub shape: DensityShape,
}

#[cfg(feature = "serde")]
fn one() -> f64 {
    1.0
}

impl DensityPiece {
    pub fn new(lo: f64, hi: f64, weight: f64, shape: DensityShape) -> Self {
        Self { lo, hi, weight, shape }
    }

    fn density(&self, x: f64, y: f64) -> f64 {
        self.weight * self.shape.value(x, y)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidMeasure(format!("density piece [{}, {}]: {msg}", self.lo, self.hi)));
        if !(self.lo >= 0.0 && self.hi <= 1.0 && self.lo < self.hi) {
            return bad("interval must satisfy 0 <= lo < hi <= 1");
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return bad("weight must be positive and finite");
        }
        match &self.shape {
            DensityShape::Uniform => {}
            DensityShape::Beta { alpha } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return bad("beta alpha must lie in (0, 2)");
                }
            }
            DensityShape::Power { p, q } => {
                if !p.is_finite() || !q.is_finite() {
                    return bad("power exponents must be finite");
                }
                if self.lo == 0.0 && *p <= -1.0 {
                    return bad("x^p with p <= -1 is not integrable at 0");
                }
                if self.hi == 1.0 && *q <= -1.0 {
                    return bad("(1-x)^q with q <= -1 is not integrable at 1");
                }
            }
            DensityShape::Polynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return bad("polynomial needs finite coefficients");
                }
                // nonnegativity on a fine grid including both ends
                const GRID: usize = 512;
                for i in 0..=GRID {
                    let x = self.lo + (self.hi - self.lo) * i as f64 / GRID as f64;
                    if self.shape.value(x, 1.0 - x) < -1e-12 {
                        return bad("polynomial density is negative inside its interval");
                    }
                }
            }
        }
        Ok(())
    }

    /// ∫_a^b g(x, 1-x) density(x) dx for `[a, b] ⊆ [lo, hi]`.
    fn integrate<G: Fn(f64, f64) -> f64>(&self, g: &G, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Estimate> {
        if !(a < b) {
            return Ok(Estimate::ZERO);
        }
        let Some((p, q, norm)) = self.shape.power_form() else {
            return quadrature::integrate(|x| g(x, 1.0 - x) * self.density(x, 1.0 - x), a, b, cfg);
        };
        let w = self.weight * norm;
        let sing_lo = p < 0.0;
        let sing_hi = q < 0.0;
        let lower = |lo: f64, hi: f64| -> Result<Estimate> {
            // u = x^{p+1}: x^p dx = du / (p+1)
            let e = p + 1.0;
            let inv = 1.0 / e;
            let est = quadrature::integrate(
                |u| {
                    let x = math::pow(u, inv);
                    let y = 1.0 - x;
                    g(x, y) * pow_or_one(y, q)
                },
                math::pow(lo, e),
                math::pow(hi, e),
                cfg,
            )?;
            Ok(Estimate {
                value: est.value * w * inv,
                error: est.error * w * inv,
            })
        };
        let upper = |lo: f64, hi: f64| -> Result<Estimate> {
            // v = (1-x)^{q+1}: (1-x)^q dx = -dv / (q+1)
            let e = q + 1.0;
            let inv = 1.0 / e;
            let est = quadrature::integrate(
                |v| {
                    let y = math::pow(v, inv);
                    let x = 1.0 - y;
                    g(x, y) * pow_or_one(x, p)
                },
                math::pow(1.0 - hi, e),
                math::pow(1.0 - lo, e),
                cfg,
            )?;
            Ok(Estimate {
                value: est.value * w * inv,
                error: est.error * w * inv,
            })
        };
        let plain = |lo: f64, hi: f64| -> Result<Estimate> {
            let est = quadrature::integrate(|x| g(x, 1.0 - x) * pow_or_one(x, p) * pow_or_one(1.0 - x, q), lo, hi, cfg)?;
            Ok(Estimate {
                value: est.value * w,
                error: est.error * w,
            })
        };
        // substitutions only on their own half, where x (resp. 1-x) stays accurate
        let mut acc = Estimate::ZERO;
        let (l0, l1) = (a, b.min(0.5));
        if l0 < l1 {
            acc += if sing_lo { lower(l0, l1)? } else { plain(l0, l1)? };
        }
        let (u0, u1) = (a.max(0.5), b);
        if u0 < u1 {
            acc += if sing_hi { upper(u0, u1)? } else { plain(u0, u1)? };
        }
        Ok(acc)
    }
}

/// A finite measure Λ on `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMeasure {
    atoms: Vec<Atom>,
    pieces: Vec<DensityPiece>,
    total_mass: f64,
}

/// Accuracy used for `mass` and the internal bookkeeping integrals.
const MASS_CFG: QuadratureConfig = QuadratureConfig {
    abs_tol: f64::MIN_POSITIVE,
    rel_tol: 1e-13,
    max_subdivisions: 100_000,
    rule: crate::quadrature::QuadratureRule::Gk21,
};

impl LambdaMeasure {
    /// Validates and builds a measure; rejects zero total mass.
    pub fn new(mut atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self> {
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.at) {
                return Err(Error::InvalidMeasure(format!("atom location {} outside [0,1]", a.at)));
            }
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::InvalidMeasure(format!("atom at {} has non-positive mass {}", a.at, a.mass)));
            }
        }
        atoms.sort_by(|x, y| x.at.total_cmp(&y.at));
        if atoms.windows(2).any(|w| w[0].at == w[1].at) {
            return Err(Error::InvalidMeasure("atom locations must be distinct".into()));
        }
        for p in &pieces {
            p.validate()?;
        }
        let m = Self::assemble(atoms, pieces);
        if !(m.total_mass > 0.0) {
            return Err(Error::ZeroMeasure);
        }
        if !m.total_mass.is_finite() {
            return Err(Error::InvalidMeasure("total mass is not finite".into()));
        }
        Ok(m)
    }

    fn assemble(atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Self {
        let mut m = Self {
            atoms,
            pieces,
            total_mass: 0.0,
        };
        m.total_mass = m.mass(0.0, 1.0);
        m
    }

    /// `mass · δ_0`, the Kingman coalescent with pair rate `mass`.
    pub fn kingman(mass: f64) -> Result<Self> {
        Self::atom(0.0, mass)
    }

    pub fn atom(at: f64, mass: f64) -> Result<Self> {
        Self::new(alloc::vec![Atom { at, mass }], Vec::new())
    }

    /// Lebesgue measure on `[0,1]` (the Bolthausen–Sznitman coalescent).
    pub fn lebesgue() -> Self {
        Self::assemble(Vec::new(), alloc::vec![DensityPiece::new(0.0, 1.0, 1.0, DensityShape::Uniform)])
    }

    /// The Beta(2-α, α) probability measure.
    pub fn beta(alpha: f64) -> Result<Self> {
        Self::new(Vec::new(), alloc::vec![DensityPiece::new(0.0, 1.0, 1.0, DensityShape::Beta { alpha })])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    /// Λ([0,1]).
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_zero(&self) -> bool {
        self.total_mass == 0.0
    }

    /// Λ({0}).
    pub fn atom_at_zero(&self) -> f64 {
        self.atoms.iter().find(|a| a.at == 0.0).map_or(0.0, |a| a.mass)
    }

    /// Λ({1}).
    pub fn atom_at_one(&self) -> f64 {
        self.atoms.iter().find(|a| a.at == 1.0).map_or(0.0, |a| a.mass)
    }

    pub fn has_atom_at_zero(&self) -> bool {
        self.atom_at_zero() > 0.0
    }

    pub fn has_atom_at_one(&self) -> bool {
        self.atom_at_one() > 0.0
    }

    /// True when every piece of mass is an atom (all integrals are finite sums).
    pub fn is_purely_atomic(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Λ([lo, hi]) with atoms on the boundary counted as inside.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(1.0);
        if lo > hi {
            return 0.0;
        }
        let mut total = 0.0;
        for a in &self.atoms {
            if a.at >= lo && a.at <= hi {
                total += a.mass;
            }
        }
        for p in &self.pieces {
            let a = lo.max(p.lo);
            let b = hi.min(p.hi);
            if a < b {
                let est = p
                    .integrate(&|_, _| 1.0, a, b, &MASS_CFG)
                    .unwrap_or_else(|e| match e {
                        Error::ToleranceNotMet { value, .. } => Estimate { value, error: 0.0 },
                        _ => Estimate::ZERO,
                    });
                total += est.value;
            }
        }
        total
    }

    /// ∫ f dΛ for an integrand given as a function of `x`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, cfg: &QuadratureConfig) -> Result<Estimate> {
        self.integrate_with_complement(|x, _| f(x), cfg)
    }

    /// ∫ g(x, 1-x) dΛ(x); `1-x` is supplied at full relative precision.
    pub fn integrate_with_complement<G: Fn(f64, f64) -> f64>(&self, g: G, cfg: &QuadratureConfig) -> Result<Estimate> {
        self.integrate_range(g, 0.0, 1.0, cfg)
    }

    /// ∫_{[lo,hi]} g(x, 1-x) dΛ(x), atoms on the boundary included.
    pub fn integrate_range<G: Fn(f64, f64) -> f64>(&self, g: G, lo: f64, hi: f64, cfg: &QuadratureConfig) -> Result<Estimate> {
        cfg.validate()?;
        let mut acc = Estimate::ZERO;
        for a in &self.atoms {
            if a.at >= lo && a.at <= hi {
                acc.value += a.mass * g(a.at, 1.0 - a.at);
            }
        }
        for p in &self.pieces {
            let a = lo.max(p.lo);
            let b = hi.min(p.hi);
            if a < b {
                acc += p.integrate(&g, a, b, cfg)?;
            }
        }
        Ok(acc)
    }

    /// The restriction Λ^a of Λ to `[0, a]`. May return the zero measure
    /// (check [`is_zero`](Self::is_zero)); rate kernels reject it.
    pub fn restrict(&self, a: f64) -> Self {
        let atoms = self.atoms.iter().copied().filter(|x| x.at <= a).collect();
        let pieces = self
            .pieces
            .iter()
            .filter(|p| p.lo < a)
            .map(|p| DensityPiece {
                hi: p.hi.min(a),
                ..p.clone()
            })
            .collect();
        Self::assemble(atoms, pieces)
    }

    /// The absolutely continuous part (atoms dropped).
    pub(crate) fn density_part(&self) -> Self {
        Self::assemble(Vec::new(), self.pieces.clone())
    }
}

#[cfg(feature = "serde")]
mod serde_impl {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        #[serde(default)]
        atoms: Vec<Atom>,
        #[serde(default)]
        densities: Vec<DensityPiece>,
    }

    impl Serialize for LambdaMeasure {
        fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
            Raw {
                atoms: self.atoms.clone(),
                densities: self.pieces.clone(),
            }
            .serialize(s)
        }
    }

    impl<'de> Deserialize<'de> for LambdaMeasure {
        fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
            let raw = Raw::deserialize(d)?;
            LambdaMeasure::new(raw.atoms, raw.densities).map_err(serde::de::Error::custom)
        }
    }
}
