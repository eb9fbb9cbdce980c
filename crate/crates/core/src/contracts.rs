//! Per-claim reinsurance contracts `φ` with `0 ≤ φ(z) ≤ z`.
//!
//! Every supported shape is piecewise linear, so the H-statistics the
//! criterion needs reduce to partial moments of the mark law on each piece.

use crate::error::{Error, Result};
use crate::marks::{ImpactSpec, MarkLaw};

#[derive(Debug, Clone, PartialEq)]
pub enum Contract {
    Zero,
    Full,
    /// Excess-of-loss: `(z − a)₊`.
    Deductible { a: f64 },
    /// Quota share: `k z`.
    Proportional { k: f64 },
    /// `min{z, b/(b−a) (z−a)₊}` with `0 < a < b`.
    ThreePiece { a: f64, b: f64 },
    /// Linear interpolation through `(z, φ(z))` knots starting at `(0, 0)`;
    /// beyond the last knot `φ(z) − z` is held constant.
    Tabulated { knots: Vec<(f64, f64)> },
}

/// `φ(z) = intercept + slope·z` on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractStats {
    /// H[φ − I]
    pub h_gap: f64,
    /// H[(φ − I)²]
    pub h_gap_sq: f64,
    /// H[f·(φ − I)]
    pub h_f_gap: f64,
    /// H[φ]
    pub h_cover: f64,
    /// c·H[φ]
    pub cost_rate: f64,
}

fn finite_nonneg(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
    }
}

impl Contract {
    pub fn deductible(a: f64) -> Result<Self> {
        finite_nonneg("a", a)?;
        Ok(Contract::Deductible { a })
    }

    pub fn proportional(k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::param("k", format!("must lie in [0, 1], got {k}")));
        }
        Ok(Contract::Proportional { k })
    }

    pub fn three_piece(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::param("a", format!("must be finite and > 0, got {a}")));
        }
        if !(b.is_finite() && b > a) {
            return Err(Error::param("b", format!("must be finite and > a = {a}, got {b}")));
        }
        Ok(Contract::ThreePiece { a, b })
    }

    /// Knots must have strictly increasing, non-negative abscissae and
    /// satisfy `0 ≤ φ ≤ z`. A `(0, 0)` knot is prepended when missing; since
    /// the constraints are linear, valid knots give a valid interpolant.
    pub fn tabulated(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidContract("tabulated contract needs at least one knot".into()));
        }
        if knots[0].0 > 0.0 {
            knots.insert(0, (0.0, 0.0));
        }
        for (i, &(z, v)) in knots.iter().enumerate() {
            if !(z.is_finite() && v.is_finite()) {
                return Err(Error::InvalidContract(format!("knot {i} is not finite: ({z}, {v})")));
            }
            if z < 0.0 {
                return Err(Error::InvalidContract(format!("knot {i} has negative abscissa {z}")));
            }
            if v < 0.0 || v > z {
                return Err(Error::InvalidContract(format!(
                    "knot {i}: phi({z}) = {v} violates 0 <= phi(z) <= z"
                )));
            }
        }
        if let Some(i) = knots.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidContract(format!(
                "knot abscissae must be strictly increasing (knots {i} and {})",
                i + 1
            )));
        }
        Ok(Contract::Tabulated { knots })
    }

    /// Slope of the middle piece of a three-piece contract.
    pub fn slope(&self) -> Option<f64> {
        match *self {
            Contract::ThreePiece { a, b } => Some(b / (b - a)),
            _ => None,
        }
    }

    pub fn evaluate(&self, z: f64) -> f64 {
        debug_assert!(z >= 0.0);
        match self {
            Contract::Zero => 0.0,
            Contract::Full => z,
            Contract::Deductible { a } => (z - a).max(0.0),
            Contract::Proportional { k } => k * z,
            Contract::ThreePiece { a, b } => z.min(b / (b - a) * (z - a).max(0.0)),
            Contract::Tabulated { knots } => {
                let i = knots.partition_point(|k| k.0 <= z);
                if i == knots.len() {
                    let (zn, vn) = knots[knots.len() - 1];
                    let gap = (vn - zn).clamp(-z, 0.0);
                    return z + gap;
                }
                // i ≥ 1 because knots[0].0 = 0 ≤ z.
                let (z0, v0) = knots[i - 1];
                let (z1, v1) = knots[i];
                v0 + (v1 - v0) * (z - z0) / (z1 - z0)
            }
        }
    }

    /// Linear pieces covering `[0, ∞)`.
    pub fn pieces(&self) -> Vec<Piece> {
        let inf = f64::INFINITY;
        let piece = |lo, hi, intercept, slope| Piece { lo, hi, intercept, slope };
        match self {
            Contract::Zero => vec![piece(0.0, inf, 0.0, 0.0)],
            Contract::Full => vec![piece(0.0, inf, 0.0, 1.0)],
            Contract::Deductible { a } => vec![piece(0.0, *a, 0.0, 0.0), piece(*a, inf, -a, 1.0)],
            Contract::Proportional { k } => vec![piece(0.0, inf, 0.0, *k)],
            Contract::ThreePiece { a, b } => {
                let s = b / (b - a);
                vec![piece(0.0, *a, 0.0, 0.0), piece(*a, *b, -s * a, s), piece(*b, inf, 0.0, 1.0)]
            }
            Contract::Tabulated { knots } => {
                let mut out: Vec<Piece> = knots
                    .windows(2)
                    .map(|w| {
                        let (z0, v0) = w[0];
                        let (z1, v1) = w[1];
                        let slope = (v1 - v0) / (z1 - z0);
                        piece(z0, z1, v0 - slope * z0, slope)
                    })
                    .collect();
                let (zn, vn) = knots[knots.len() - 1];
                out.push(piece(zn, inf, vn - zn, 1.0));
                out
            }
        }
    }

    /// Points where `φ` may fail to be differentiable.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.pieces().iter().map(|p| p.lo).filter(|&z| z > 0.0).collect();
        pts.dedup();
        pts
    }

    /// Exact H-statistics. Discrete laws are summed atom by atom; continuous
    /// laws integrate each linear piece against partial moments.
    pub fn stats(&self, law: &MarkLaw, impact: &ImpactSpec, cost: f64) -> ContractStats {
        let (mut h_gap, mut h_gap_sq, mut h_f_gap, mut h_cover) = (0.0, 0.0, 0.0, 0.0);
        if let Some(atoms) = law.atoms() {
            for atom in atoms {
                let phi = self.evaluate(atom.size);
                let gap = phi - atom.size;
                h_gap += atom.weight * gap;
                h_gap_sq += atom.weight * gap * gap;
                h_f_gap += atom.weight * impact.eval(atom.size) * gap;
                h_cover += atom.weight * phi;
            }
        } else {
            for p in self.pieces() {
                let m0 = law.partial_moment(0, p.lo, p.hi);
                let m1 = law.partial_moment(1, p.lo, p.hi);
                let m2 = law.partial_moment(2, p.lo, p.hi);
                // φ − z = c0 + c1 z on this piece.
                let c0 = p.intercept;
                let c1 = p.slope - 1.0;
                h_gap += c0 * m0 + c1 * m1;
                h_gap_sq += c0 * c0 * m0 + 2.0 * c0 * c1 * m1 + c1 * c1 * m2;
                h_f_gap += match *impact {
                    ImpactSpec::Constant(f_bar) => f_bar * (c0 * m0 + c1 * m1),
                    ImpactSpec::Linear(lambda) => lambda * (c0 * m1 + c1 * m2),
                };
                h_cover += c0 * m0 + p.slope * m1;
            }
        }
        ContractStats {
            h_gap,
            h_gap_sq,
            h_f_gap,
            h_cover,
            cost_rate: cost * h_cover,
        }
    }

    /// The same statistics through generic quadrature of `H[·]`.
    pub fn stats_by_quadrature(&self, law: &MarkLaw, impact: &ImpactSpec, cost: f64) -> Result<ContractStats> {
        let breaks = self.breakpoints();
        let h = |g: &dyn Fn(f64) -> f64| law.h_integral_with_breaks(g, &breaks);
        let h_gap = h(&|z| self.evaluate(z) - z)?;
        let h_gap_sq = h(&|z| (self.evaluate(z) - z).powi(2))?;
        let h_f_gap = h(&|z| impact.eval(z) * (self.evaluate(z) - z))?;
        let h_cover = h(&|z| self.evaluate(z))?;
        Ok(ContractStats {
            h_gap,
            h_gap_sq,
            h_f_gap,
            h_cover,
            cost_rate: cost * h_cover,
        })
    }
}
