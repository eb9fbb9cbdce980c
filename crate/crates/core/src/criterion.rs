//! Terminal wealth and the mean-variance criterion of the insurer.
//!
//! ```text
//! R_T(φ) = R₀ + (ρ−c)θ̄T + X_T[φ−I] − cT·H[φ−I]
//! U(φ)   = E[R_T(φ)] − γ V[R_T(φ)]
//!        = R₀ + (ρ−c)θ̄T + H[φ−I](M(T) − cT)
//!          − γ H[(φ−I)²] M(T) − γ H[φ−I]² A(T) − γ H[φ−I] H[f(φ−I)] B(T)
//! ```
//! where `X_T[h] = Σ_{T_i ≤ T} h(Z_i)`.

use crate::contracts::{Contract, ContractStats};
use crate::error::{Error, Result};
use crate::hawkes::{self, HawkesParams};
use crate::marks::{ImpactSpec, MarkLaw};
use crate::moments::MomentBundle;
use crate::sampling::SampleSummary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EconomicParams {
    /// Initial capital R₀.
    pub r0: f64,
    /// Premium loading ρ: premiums accrue at rate ρθ̄ per year.
    pub rho: f64,
    /// Reinsurance price c per unit of H[φ] per year.
    pub cost: f64,
    /// Risk aversion γ > 0.
    pub gamma: f64,
    /// Horizon T in years.
    pub horizon: f64,
}

impl EconomicParams {
    pub fn new(r0: f64, rho: f64, cost: f64, gamma: f64, horizon: f64) -> Result<Self> {
        for (name, v) in [("r0", r0), ("rho", rho), ("c", cost)] {
            if !v.is_finite() {
                return Err(Error::param(name, format!("must be finite, got {v}")));
            }
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("gamma", format!("must be finite and > 0, got {gamma}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        Ok(Self {
            r0,
            rho,
            cost,
            gamma,
            horizon,
        })
    }

    /// `cT − M(T) > 0`: reinsurance is priced above the expected number of
    /// claims, the regime where the three-piece contract is optimal.
    pub fn cost_exceeds_expected_count(&self, moments: &MomentBundle) -> bool {
        self.cost * self.horizon - moments.m_t() > 0.0
    }

    /// Deterministic part `R₀ + (ρ−c)θ̄T`.
    pub fn base_wealth(&self, theta_bar: f64) -> f64 {
        self.r0 + (self.rho - self.cost) * theta_bar * self.horizon
    }

    fn check_horizon(&self, moments: &MomentBundle) -> Result<()> {
        let t = moments.horizon();
        if (self.horizon - t).abs() > 1e-12 * t {
            return Err(Error::HorizonMismatch {
                economic: self.horizon,
                moments: t,
            });
        }
        Ok(())
    }
}

/// The five summands of the closed-form criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// R₀ + (ρ−c)θ̄T
    pub base: f64,
    /// H[φ−I](M(T) − cT)
    pub retained_mean: f64,
    /// −γ H[(φ−I)²] M(T)
    pub claim_variance: f64,
    /// −γ H[φ−I]² A(T)
    pub cluster_variance: f64,
    /// −γ H[φ−I] H[f(φ−I)] B(T)
    pub feedback_variance: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.base + self.retained_mean + self.claim_variance + self.cluster_variance + self.feedback_variance
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionReport {
    pub mean: f64,
    pub variance: f64,
    pub utility: f64,
    pub decomposition: Decomposition,
}

/// Closed-form criterion from precomputed contract statistics.
pub fn report_from_stats(stats: &ContractStats, econ: &EconomicParams, moments: &MomentBundle, theta_bar: f64) -> CriterionReport {
    let m = moments.m_t();
    let g = econ.gamma;
    let h = stats.h_gap;
    let decomposition = Decomposition {
        base: econ.base_wealth(theta_bar),
        retained_mean: h * (m - econ.cost * econ.horizon),
        claim_variance: -g * stats.h_gap_sq * m,
        cluster_variance: -g * h * h * moments.a_t(),
        feedback_variance: -g * h * stats.h_f_gap * moments.b_t(),
    };
    let mean = decomposition.base + decomposition.retained_mean;
    let variance = stats.h_gap_sq * m + h * h * moments.a_t() + h * stats.h_f_gap * moments.b_t();
    CriterionReport {
        mean,
        variance,
        utility: decomposition.total(),
        decomposition,
    }
}

pub fn utility_closed_form(
    contract: &Contract,
    econ: &EconomicParams,
    moments: &MomentBundle,
    law: &MarkLaw,
    impact: &ImpactSpec,
) -> Result<CriterionReport> {
    econ.check_horizon(moments)?;
    let stats = contract.stats(law, impact, econ.cost);
    Ok(report_from_stats(&stats, econ, moments, law.theta_bar()))
}

/// Criterion of a compound Poisson loss process with intensity λ₀:
/// `[base, H[φ−I](λ₀−c)T, −γH[(φ−I)²]λ₀T]`.
pub fn poisson_terms(stats: &ContractStats, econ: &EconomicParams, lambda0: f64, theta_bar: f64) -> [f64; 3] {
    let t = econ.horizon;
    [
        econ.base_wealth(theta_bar),
        stats.h_gap * (lambda0 - econ.cost) * t,
        -econ.gamma * stats.h_gap_sq * lambda0 * t,
    ]
}

/// Criterion under constant impact `f ≡ f̄`, where the feedback term folds
/// into the cluster term: `[base, H[φ−I](M−cT), −γH²[φ−I](A + f̄B), −γH[(φ−I)²]M]`.
pub fn constant_impact_terms(
    stats: &ContractStats,
    econ: &EconomicParams,
    moments: &MomentBundle,
    f_bar: f64,
    theta_bar: f64,
) -> [f64; 4] {
    let m = moments.m_t();
    let h = stats.h_gap;
    [
        econ.base_wealth(theta_bar),
        h * (m - econ.cost * econ.horizon),
        -econ.gamma * h * h * (moments.a_t() + f_bar * moments.b_t()),
        -econ.gamma * stats.h_gap_sq * m,
    ]
}

/// Density `G(φ)` of the first variation of U with respect to Θ:
/// `G(φ)(z) = level + impact_coef·f(z) + gap_coef·(φ(z) − z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// (M − cT) − 2γH[φ−I]A − γH[f(φ−I)]B
    pub level: f64,
    /// −γH[φ−I]B
    pub impact_coef: f64,
    /// −2γM
    pub gap_coef: f64,
    contract: Contract,
    impact: ImpactSpec,
}

impl Gradient {
    pub fn from_stats(stats: &ContractStats, contract: &Contract, econ: &EconomicParams, moments: &MomentBundle, impact: &ImpactSpec) -> Self {
        let g = econ.gamma;
        let m = moments.m_t();
        Self {
            level: (m - econ.cost * econ.horizon) - 2.0 * g * stats.h_gap * moments.a_t() - g * stats.h_f_gap * moments.b_t(),
            impact_coef: -g * stats.h_gap * moments.b_t(),
            gap_coef: -2.0 * g * m,
            contract: contract.clone(),
            impact: *impact,
        }
    }

    pub fn at(&self, z: f64) -> f64 {
        self.level + self.impact_coef * self.impact.eval(z) + self.gap_coef * (self.contract.evaluate(z) - z)
    }

    /// `∫ G(φ) g dΘ`, the directional derivative of U along `g`.
    pub fn directional<G: Fn(f64) -> f64>(&self, law: &MarkLaw, g: G) -> Result<f64> {
        let breaks = self.contract.breakpoints();
        law.h_integral_with_breaks(|z| self.at(z) * g(z), &breaks)
    }
}

pub fn gradient(
    contract: &Contract,
    econ: &EconomicParams,
    moments: &MomentBundle,
    law: &MarkLaw,
    impact: &ImpactSpec,
) -> Result<Gradient> {
    econ.check_horizon(moments)?;
    let stats = contract.stats(law, impact, econ.cost);
    Ok(Gradient::from_stats(&stats, contract, econ, moments, impact))
}

/// Monte Carlo estimate of the criterion with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McReport {
    pub n_paths: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub utility: f64,
    pub utility_se: f64,
    /// Sample moments of X_T[φ−I].
    pub retained: SampleSummary,
}

/// Simulates `R_T(φ)` on `n_paths` paths of the loss process.
pub fn mc_estimate(contract: &Contract, econ: &EconomicParams, params: &HawkesParams, n_paths: usize, seed: u64) -> Result<McReport> {
    let retained = hawkes::simulate_batch(params, econ.horizon, seed, n_paths, |path| {
        path.events.iter().map(|e| contract.evaluate(e.mark) - e.mark).sum::<f64>()
    })?;
    mc_report_from_retained(contract, econ, params, &retained)
}

/// Builds the report from per-path values of `X_T[φ−I]` (in path order).
pub fn mc_report_from_retained(contract: &Contract, econ: &EconomicParams, params: &HawkesParams, retained: &[f64]) -> Result<McReport> {
    if retained.len() < 2 {
        return Err(Error::param("n_paths", format!("need at least 2 paths, got {}", retained.len())));
    }
    let law = params.marks();
    let stats = contract.stats(law, &params.impact(), econ.cost);
    let shift = econ.base_wealth(law.theta_bar()) - econ.cost * econ.horizon * stats.h_gap;
    let wealth: Vec<f64> = retained.iter().map(|x| shift + x).collect();
    let w = SampleSummary::from_values(&wealth);
    let x = SampleSummary::from_values(retained);
    let n = wealth.len() as f64;

    // Influence function of mean − γ·variance.
    let influence: Vec<f64> = wealth.iter().map(|r| r - econ.gamma * (r - w.mean).powi(2)).collect();
    let inf_mean = influence.iter().sum::<f64>() / n;
    let inf_var = influence.iter().map(|v| (v - inf_mean).powi(2)).sum::<f64>() / (n - 1.0);

    Ok(McReport {
        n_paths: wealth.len(),
        mean: w.mean,
        mean_se: w.mean_se,
        variance: w.variance,
        variance_se: w.variance_se,
        utility: w.mean - econ.gamma * w.variance,
        utility_se: (inf_var / n).sqrt(),
        retained: x,
    })
}

/// Lemma-style second moment `E[X_T[h]²] = H[h]²(A + M²) + H[h]H[fh]B + H[h²]M`
/// for `h = φ − I`.
pub fn retained_second_moment(stats: &ContractStats, moments: &MomentBundle) -> f64 {
    let m = moments.m_t();
    stats.h_gap.powi(2) * (moments.a_t() + m * m) + stats.h_gap * stats.h_f_gap * moments.b_t() + stats.h_gap_sq * m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marks::Atom;

    fn setup() -> (HawkesParams, EconomicParams, MomentBundle) {
        let law = MarkLaw::exponential(1.0).unwrap();
        let params = HawkesParams::new(1.2, 1.0, 2.0, ImpactSpec::Linear(0.5), law).unwrap();
        let econ = EconomicParams::new(10.0, 1.3, 2.5, 0.2, 2.0).unwrap();
        let moments = MomentBundle::new(&params, 2.0).unwrap();
        (params, econ, moments)
    }

    #[test]
    fn full_cover_leaves_only_the_base() {
        let (p, econ, mb) = setup();
        let r = utility_closed_form(&Contract::Full, &econ, &mb, p.marks(), &p.impact()).unwrap();
        assert_eq!(r.utility, 10.0 + (1.3 - 2.5) * 1.0 * 2.0);
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn utility_is_mean_minus_gamma_variance() {
        let (p, econ, mb) = setup();
        for c in [Contract::Zero, Contract::deductible(1.0).unwrap(), Contract::three_piece(0.5, 2.0).unwrap()] {
            let r = utility_closed_form(&c, &econ, &mb, p.marks(), &p.impact()).unwrap();
            let alt = r.mean - econ.gamma * r.variance;
            assert!((r.utility - alt).abs() <= 1e-12 * r.utility.abs());
            assert!(r.variance >= 0.0);
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let (p, econ, _) = setup();
        let other = MomentBundle::new(&p, 3.0).unwrap();
        let r = utility_closed_form(&Contract::Zero, &econ, &other, p.marks(), &p.impact());
        assert!(matches!(r, Err(Error::HorizonMismatch { .. })));
    }

    #[test]
    fn gradient_of_full_cover_is_constant() {
        let (p, econ, mb) = setup();
        let g = gradient(&Contract::Full, &econ, &mb, p.marks(), &p.impact()).unwrap();
        let expected = mb.m_t() - econ.cost * econ.horizon;
        assert!(expected < 0.0);
        for z in [0.0, 0.7, 5.0] {
            assert_eq!(g.at(z), expected);
        }
    }

    #[test]
    fn gradient_of_zero_cover_is_affine_increasing() {
        let (p, econ, mb) = setup();
        let law = p.marks();
        let lambda = 0.5;
        let g = gradient(&Contract::Zero, &econ, &mb, law, &p.impact()).unwrap();
        let (m, a, b, gamma) = (mb.m_t(), mb.a_t(), mb.b_t(), econ.gamma);
        let theta = law.theta_bar();
        let intercept = (m - econ.cost * econ.horizon) + 2.0 * gamma * theta * a + gamma * lambda * law.moment(2) * b;
        let slope = gamma * theta * lambda * b + 2.0 * gamma * m;
        for z in [0.0, 1.0, 3.0, 50.0] {
            let v = g.at(z);
            assert!((v - (intercept + slope * z)).abs() < 1e-12 * v.abs().max(1.0));
        }
        assert!(g.at(100.0) > 0.0);
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let law = MarkLaw::discrete(vec![Atom::new(0.5, 0.3), Atom::new(1.5, 0.4), Atom::new(4.0, 0.3)]).unwrap();
        let impact = ImpactSpec::Linear(0.4);
        let params = HawkesParams::new(1.0, 1.0, 1.5, impact, law.clone()).unwrap();
        let econ = EconomicParams::new(5.0, 1.1, 2.0, 0.3, 3.0).unwrap();
        let mb = MomentBundle::new(&params, 3.0).unwrap();
        let phi = Contract::tabulated(vec![(0.5, 0.2), (1.5, 0.9), (4.0, 3.0)]).unwrap();
        let bump = Contract::tabulated(vec![(0.5, 0.1), (1.5, -0.2), (4.0, 0.3)]);
        assert!(bump.is_err()); // direction need not be a contract
        let dir = [(0.5, 0.1), (1.5, -0.2), (4.0, 0.3)];
        let eps = 1e-6;
        let moved = Contract::tabulated(dir.iter().map(|&(z, g)| (z, phi.evaluate(z) + eps * g)).collect()).unwrap();
        let u0 = utility_closed_form(&phi, &econ, &mb, &law, &impact).unwrap().utility;
        let u1 = utility_closed_form(&moved, &econ, &mb, &law, &impact).unwrap().utility;
        let g = gradient(&phi, &econ, &mb, &law, &impact).unwrap();
        let analytic = g
            .directional(&law, |z| dir.iter().find(|d| d.0 == z).map(|d| d.1).unwrap_or(0.0))
            .unwrap();
        let fd = (u1 - u0) / eps;
        assert!((fd - analytic).abs() <= 1e-4 * analytic.abs(), "{fd} vs {analytic}");
    }

    #[test]
    fn full_cover_monte_carlo_is_deterministic_wealth() {
        let (p, econ, _) = setup();
        let r = mc_estimate(&Contract::Full, &econ, &p, 200, 3).unwrap();
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.mean, econ.base_wealth(1.0));
    }

    #[test]
    fn monte_carlo_needs_two_paths() {
        let (p, econ, _) = setup();
        assert!(mc_estimate(&Contract::Zero, &econ, &p, 1, 3).is_err());
    }
}
