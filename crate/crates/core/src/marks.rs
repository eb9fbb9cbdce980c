//! The mark (claim size) measure Θ(dz) and the integrals `H[g] = ∫ g dΘ`
//! that every criterion formula is built from.
//!
//! Θ is a finite measure on ℝ⁺ whose total mass need not be one: the
//! compensator of the loss process is `Θ(dz) λ_{t-} dt`, so events arrive at
//! rate `λ · total_mass` and sizes are drawn from `Θ / total_mass`.

use libm::erfc;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub size: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(size: f64, weight: f64) -> Self {
        Self { size, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MarkFamily {
    Exponential { mean: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Atoms sorted by size, sizes distinct.
    Discrete { atoms: Vec<Atom> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkLaw {
    family: MarkFamily,
    total_mass: f64,
}

/// Self-excitation function `f` applied to each mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImpactSpec {
    Constant(f64),
    Linear(f64),
}

impl ImpactSpec {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            ImpactSpec::Constant(v) | ImpactSpec::Linear(v) => v,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::param("impact", format!("must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ImpactSpec::Constant(f_bar) => f_bar,
            ImpactSpec::Linear(lambda) => lambda * z,
        }
    }

    /// `H[f]`.
    pub fn mean_impact(&self, law: &MarkLaw) -> f64 {
        match *self {
            ImpactSpec::Constant(f_bar) => f_bar * law.total_mass(),
            ImpactSpec::Linear(lambda) => lambda * law.theta_bar(),
        }
    }

    /// `H[f²]`.
    pub fn second_impact_moment(&self, law: &MarkLaw) -> f64 {
        match *self {
            ImpactSpec::Constant(f_bar) => f_bar * f_bar * law.total_mass(),
            ImpactSpec::Linear(lambda) => lambda * lambda * law.moment(2),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            ImpactSpec::Constant(v) | ImpactSpec::Linear(v) => v == 0.0,
        }
    }
}

/// `β − H[f]`; the process is ergodic when this is strictly positive.
pub fn ergodicity_margin(law: &MarkLaw, impact: &ImpactSpec, beta: f64) -> f64 {
    beta - impact.mean_impact(law)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

impl MarkLaw {
    pub fn new(family: MarkFamily, total_mass: f64) -> Result<Self> {
        if !(total_mass.is_finite() && total_mass > 0.0) {
            return Err(Error::param("total_mass", format!("must be finite and > 0, got {total_mass}")));
        }
        let family = match family {
            MarkFamily::Exponential { mean } => {
                if !(mean.is_finite() && mean > 0.0) {
                    return Err(Error::param("mean", format!("must be finite and > 0, got {mean}")));
                }
                MarkFamily::Exponential { mean }
            }
            MarkFamily::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::param("mu", format!("must be finite, got {mu}")));
                }
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::param("sigma", format!("must be finite and > 0, got {sigma}")));
                }
                if !(2.0 * mu + 2.0 * sigma * sigma).exp().is_finite() {
                    return Err(Error::param("sigma", "second moment overflows"));
                }
                MarkFamily::LogNormal { mu, sigma }
            }
            MarkFamily::Discrete { mut atoms } => {
                if atoms.is_empty() {
                    return Err(Error::param("atoms", "at least one atom required"));
                }
                for a in &atoms {
                    if !(a.size.is_finite() && a.size >= 0.0) {
                        return Err(Error::param("atoms", format!("atom size must be finite and >= 0, got {}", a.size)));
                    }
                    if !(a.weight.is_finite() && a.weight > 0.0) {
                        return Err(Error::param("atoms", format!("atom weight must be finite and > 0, got {}", a.weight)));
                    }
                }
                atoms.sort_by(|a, b| a.size.total_cmp(&b.size));
                if atoms.windows(2).any(|w| w[0].size == w[1].size) {
                    return Err(Error::param("atoms", "atom sizes must be distinct"));
                }
                let sum: f64 = atoms.iter().map(|a| a.weight).sum();
                if (sum - total_mass).abs() > 1e-12 * total_mass {
                    return Err(Error::param(
                        "atoms",
                        format!("weights sum to {sum}, expected total_mass {total_mass}"),
                    ));
                }
                MarkFamily::Discrete { atoms }
            }
        };
        Ok(Self { family, total_mass })
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        Self::new(MarkFamily::Exponential { mean }, 1.0)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(MarkFamily::LogNormal { mu, sigma }, 1.0)
    }

    /// Discrete law whose total mass is the sum of the weights.
    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        let mass = atoms.iter().map(|a| a.weight).sum();
        Self::new(MarkFamily::Discrete { atoms }, mass)
    }

    pub fn family(&self) -> &MarkFamily {
        &self.family
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match &self.family {
            MarkFamily::Discrete { atoms } => Some(atoms),
            _ => None,
        }
    }

    pub fn has_bounded_support(&self) -> bool {
        matches!(self.family, MarkFamily::Discrete { .. })
    }

    /// `θ̄ = ∫ z Θ(dz)`.
    pub fn theta_bar(&self) -> f64 {
        self.moment(1)
    }

    /// `∫ z^k Θ(dz)` for k ∈ {0, 1, 2}.
    pub fn moment(&self, k: u32) -> f64 {
        assert!(k <= 2, "only moments up to order two are finite in general");
        match &self.family {
            MarkFamily::Exponential { mean } => {
                let factorial = [1.0, 1.0, 2.0][k as usize];
                self.total_mass * factorial * mean.powi(k as i32)
            }
            MarkFamily::LogNormal { mu, sigma } => {
                let k = k as f64;
                self.total_mass * (k * mu + 0.5 * k * k * sigma * sigma).exp()
            }
            MarkFamily::Discrete { atoms } => atoms.iter().map(|a| a.weight * a.size.powi(k as i32)).sum(),
        }
    }

    /// `∫_{[lo, hi)} z^k Θ(dz)` for k ∈ {0, 1, 2}; `hi` may be infinite.
    pub fn partial_moment(&self, k: u32, lo: f64, hi: f64) -> f64 {
        assert!(k <= 2);
        let lo = lo.max(0.0);
        if hi <= lo {
            return 0.0;
        }
        match &self.family {
            MarkFamily::Exponential { mean } => {
                // Upper incomplete moment of the normalized law:
                // ∫_x^∞ z^k e^{-z/μ}/μ dz = e^{-x/μ} Σ_j k!/j! μ^{k-j} x^j.
                let upper = |x: f64| -> f64 {
                    if x.is_infinite() {
                        return 0.0;
                    }
                    let e = (-x / mean).exp();
                    match k {
                        0 => e,
                        1 => e * (x + mean),
                        _ => e * (x * x + 2.0 * mean * x + 2.0 * mean * mean),
                    }
                };
                // Lower incomplete moment, accurate for small x.
                let lower = |x: f64| -> f64 {
                    let y = x / mean;
                    let em1 = (-y).exp_m1(); // e^{-y} - 1
                    let scale = mean.powi(k as i32);
                    match k {
                        0 => -em1,
                        1 => scale * (-em1 - y * (-y).exp()),
                        _ => scale * (-2.0 * em1 - (-y).exp() * (y * y + 2.0 * y)),
                    }
                };
                let body = if hi.is_finite() && hi <= *mean {
                    lower(hi) - lower(lo)
                } else {
                    upper(lo) - upper(hi)
                };
                self.total_mass * body
            }
            MarkFamily::LogNormal { mu, sigma } => {
                let kf = k as f64;
                let full = (kf * mu + 0.5 * kf * kf * sigma * sigma).exp();
                let arg = |x: f64| -> f64 {
                    if x <= 0.0 {
                        f64::NEG_INFINITY
                    } else if x.is_infinite() {
                        f64::INFINITY
                    } else {
                        (x.ln() - mu - kf * sigma * sigma) / sigma
                    }
                };
                let (a, b) = (arg(lo), arg(hi));
                let body = if b <= 0.0 {
                    normal_cdf(b) - normal_cdf(a)
                } else {
                    normal_sf(a) - normal_sf(b)
                };
                self.total_mass * full * body
            }
            MarkFamily::Discrete { atoms } => atoms
                .iter()
                .filter(|a| a.size >= lo && a.size < hi)
                .map(|a| a.weight * a.size.powi(k as i32))
                .sum(),
        }
    }

    /// Quantile of the normalized law `Θ / total_mass`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match &self.family {
            MarkFamily::Exponential { mean } => -mean * (-p).ln_1p(),
            MarkFamily::LogNormal { mu, sigma } => (mu + sigma * std_normal().inverse_cdf(p)).exp(),
            MarkFamily::Discrete { atoms } => {
                let target = p * self.total_mass;
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.weight;
                    if acc >= target * (1.0 - 1e-15) {
                        return a.size;
                    }
                }
                atoms.last().map(|a| a.size).unwrap_or(0.0)
            }
        }
    }

    /// Density of Θ (including the total mass) for continuous families.
    fn density(&self, z: f64) -> f64 {
        match &self.family {
            MarkFamily::Exponential { mean } => self.total_mass / mean * (-z / mean).exp(),
            MarkFamily::LogNormal { mu, sigma } => {
                if z <= 0.0 {
                    0.0
                } else {
                    let u = (z.ln() - mu) / sigma;
                    self.total_mass * (-0.5 * u * u).exp() / (z * sigma * (2.0 * std::f64::consts::PI).sqrt())
                }
            }
            MarkFamily::Discrete { .. } => unreachable!("discrete laws integrate by summation"),
        }
    }

    /// Truncation point beyond which `∫ (1+z²) dΘ` is negligible.
    fn truncation_point(&self) -> f64 {
        let budget = 1e-14 * (self.total_mass + self.moment(2));
        let mut z = self.quantile(0.999).max(1e-300);
        for _ in 0..200 {
            let tail = self.partial_moment(0, z, f64::INFINITY) + self.partial_moment(2, z, f64::INFINITY);
            if tail <= budget {
                return z;
            }
            z *= 1.5;
        }
        z
    }

    /// `H[g] = ∫ g(z) Θ(dz)`.
    pub fn h_integral<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        self.h_integral_with_breaks(g, &[])
    }

    /// `H[g]` where `g` may have kinks at `breaks`; continuous families split
    /// the quadrature domain there. Discrete laws use the exact weighted sum.
    pub fn h_integral_with_breaks<G: Fn(f64) -> f64>(&self, g: G, breaks: &[f64]) -> Result<f64> {
        if let MarkFamily::Discrete { atoms } = &self.family {
            let mut sum = 0.0;
            for a in atoms {
                let v = g(a.size);
                if !v.is_finite() {
                    return Err(Error::Integrability(format!("g({}) = {v}", a.size)));
                }
                sum += a.weight * v;
            }
            return Ok(sum);
        }

        let z_max = self.truncation_point();
        // Growth probe: |g| must stay within C(1 + z²) in the tail.
        let ratio = |z: f64| g(z).abs() / (1.0 + z * z);
        let near = ratio(z_max);
        let mut far: f64 = 0.0;
        for j in 1..=6 {
            let z = z_max * f64::from(1u32 << j);
            let r = ratio(z);
            if !r.is_finite() {
                return Err(Error::Integrability(format!("g({z:.4e}) is not finite")));
            }
            far = far.max(r);
        }
        if !near.is_finite() || far > 16.0 * near.max(f64::MIN_POSITIVE) && far > 1e-300 {
            return Err(Error::Integrability(format!(
                "|g(z)|/(1+z²) grows from {near:.3e} at z = {z_max:.3e} to {far:.3e} further out"
            )));
        }

        // Quantile cuts, then geometric ones out to the truncation point so
        // no single segment is too wide for the 15-point rule to see the tail.
        let mut cuts: Vec<f64> = vec![0.0, z_max];
        for p in [1e-8, 1e-6, 1e-4, 1e-3, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999, 0.9999] {
            cuts.push(self.quantile(p));
        }
        let mut z = self.quantile(0.9999) * 1.5;
        while z < z_max {
            cuts.push(z);
            z *= 1.5;
        }
        cuts.retain(|c| c.is_finite() && *c >= 0.0 && *c <= z_max);
        cuts.extend(breaks.iter().copied().filter(|b| b.is_finite() && *b > 0.0 && *b < z_max));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let probe_scale = cuts
            .iter()
            .map(|&z| ratio(z))
            .chain(std::iter::once(far))
            .fold(0.0_f64, f64::max);
        let scale = probe_scale * (self.total_mass + self.moment(2));
        let tol = Tolerance::new((1e-10 * scale).max(f64::MIN_POSITIVE), 1e-12);
        let r = quadrature::integrate_with_breaks(|z| g(z) * self.density(z), &cuts, tol)?;
        Ok(r.value)
    }

    /// Replaces a continuous law by `n` atoms: one per cell `[ih, (i+1)h)`,
    /// `h = upper / n`, with the last cell open to +∞. Each atom sits at the
    /// conditional mean of its cell, so mass and mean are preserved.
    pub fn discretize(&self, n: usize, upper: f64) -> Result<MarkLaw> {
        if n == 0 || !(upper.is_finite() && upper > 0.0) {
            return Err(Error::param("discretization", format!("need n > 0 and finite upper > 0, got n = {n}, upper = {upper}")));
        }
        if self.has_bounded_support() {
            return Ok(self.clone());
        }
        let h = upper / n as f64;
        let mut atoms = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i as f64 * h;
            let hi = if i + 1 == n { f64::INFINITY } else { (i + 1) as f64 * h };
            let w = self.partial_moment(0, lo, hi);
            if w <= 0.0 {
                continue;
            }
            let first = self.partial_moment(1, lo, hi);
            let size = (first / w).clamp(lo, if hi.is_finite() { hi } else { f64::MAX });
            atoms.push(Atom::new(size, w));
        }
        MarkLaw::discrete(atoms)
    }

    pub fn sampler(&self) -> MarkSampler {
        let kind = match &self.family {
            MarkFamily::Exponential { mean } => SamplerKind::Exp(Exp::new(1.0 / mean).expect("validated mean")),
            MarkFamily::LogNormal { mu, sigma } => {
                SamplerKind::LogNormal(LogNormal::new(*mu, *sigma).expect("validated lognormal"))
            }
            MarkFamily::Discrete { atoms } => SamplerKind::Discrete {
                sizes: atoms.iter().map(|a| a.size).collect(),
                index: WeightedIndex::new(atoms.iter().map(|a| a.weight)).expect("validated weights"),
            },
        };
        MarkSampler { kind }
    }
}

/// Draws marks from the normalized law `Θ / total_mass`.
#[derive(Debug, Clone)]
pub struct MarkSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
    Discrete { sizes: Vec<f64>, index: WeightedIndex<f64> },
}

impl MarkSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Exp(d) => d.sample(rng),
            SamplerKind::LogNormal(d) => d.sample(rng),
            SamplerKind::Discrete { sizes, index } => sizes[index.sample(rng)],
        }
    }
}
