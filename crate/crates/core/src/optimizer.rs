//! Maximization of the criterion over contracts `0 ≤ φ(z) ≤ z`.
//!
//! Under linear impact `f(z) = Λz`, `Λ > 0`, `cT > M(T)` and marks with
//! unbounded support, the optimum is `φ*(z) = min{z, s(z − a)₊}` with
//! `s = b/(b − a) > 1`, where `(a, b)` solve
//! ```text
//! E1:  Λ ∫₀ᵇ (z − φ*(z)) Θ(dz) = (2M/B) · a/(b − a)
//! E2:  s·a = C* = (cT − M + 2γA·H[φ*−I] + γB·H[ΛI(φ*−I)]) / (2γM)
//! ```
//! E1 pins the slope of the middle piece, E2 its intercept. For fixed `a`,
//! the E1 residual is strictly increasing in `b`, so `b(a)` is found by
//! bracketed Newton; E2 is then solved in `a` by bisection.
//!
//! [`qp_oracle`] maximizes the same criterion over all contracts on a
//! discrete mark law without assuming any shape.

use crate::contracts::{Contract, ContractStats};
use crate::criterion::{report_from_stats, CriterionReport, EconomicParams, Gradient};
use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;
use crate::marks::{ImpactSpec, MarkLaw};
use crate::moments::MomentBundle;
use crate::roots::{bisect, safeguarded_newton};

/// Sign pattern of `G(φ*)` sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub grid_points: usize,
    pub grid_max: f64,
    /// Largest G on the grid points below `a` (should be negative).
    pub max_below_a: f64,
    /// Largest |G| on the grid points inside `(a, b)`.
    pub max_abs_between: f64,
    /// Smallest G on the grid points above `b` (should be positive).
    pub min_above_b: f64,
    /// Tolerance applied to `max_abs_between`.
    pub tolerance: f64,
}

impl RegionReport {
    pub fn pattern_holds(&self) -> bool {
        self.max_below_a < 0.0 && self.max_abs_between <= self.tolerance && self.min_above_b > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalContractResult {
    pub contract: Contract,
    pub a: f64,
    pub b: f64,
    /// `b / (b − a)`.
    pub slope: f64,
    /// `1 − Λ B/(2M) H[φ*−I]`, the slope implied by the first-order condition.
    pub slope_from_gradient: f64,
    /// Intercept `C*` of the middle piece, `φ*(z) = s z − C*`.
    pub c_star: f64,
    pub stats: ContractStats,
    pub report: CriterionReport,
    pub regions: RegionReport,
    /// (E1, E2) residuals at the returned root.
    pub residuals: (f64, f64),
    /// `max(1, 2M/B)`, the scale the residuals are judged against.
    pub residual_scale: f64,
}

/// Residuals of the two optimality equations for given `(a, b)`.
struct ThreePieceSystem<'a> {
    econ: &'a EconomicParams,
    moments: &'a MomentBundle,
    law: &'a MarkLaw,
    impact: ImpactSpec,
    lambda: f64,
}

impl ThreePieceSystem<'_> {
    fn stats(&self, a: f64, b: f64) -> ContractStats {
        Contract::ThreePiece { a, b }.stats(self.law, &self.impact, self.econ.cost)
    }

    fn ratio(&self) -> f64 {
        2.0 * self.moments.m_t() / self.moments.b_t()
    }

    /// E1 residual and its derivative in `b`.
    fn e1(&self, a: f64, b: f64) -> (f64, f64) {
        let stats = self.stats(a, b);
        let width = b - a;
        let residual = self.lambda * (-stats.h_gap) - self.ratio() * a / width;
        // ∂φ/∂b = −a(z − a)/(b − a)² on [a, b].
        let excess = self.law.partial_moment(1, a, b) - a * self.law.partial_moment(0, a, b);
        let d_gap = self.lambda * a * excess / (width * width);
        let d_ratio = self.ratio() * a / (width * width);
        (residual, d_gap + d_ratio)
    }

    fn c_star(&self, stats: &ContractStats) -> f64 {
        let (m, t, g) = (self.moments.m_t(), self.econ.horizon, self.econ.gamma);
        (self.econ.cost * t - m + 2.0 * g * self.moments.a_t() * stats.h_gap + g * self.moments.b_t() * stats.h_f_gap)
            / (2.0 * g * m)
    }

    fn e2(&self, a: f64, b: f64) -> f64 {
        let stats = self.stats(a, b);
        b / (b - a) * a - self.c_star(&stats)
    }

    /// Solves E1 for `b` given `a`.
    fn solve_b(&self, a: f64) -> Result<f64> {
        let lo = a * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        let mut width = a.max(1e-12);
        let mut hi = a + width;
        let mut expansions = 0;
        while self.e1(a, hi).0 <= 0.0 {
            width *= 4.0;
            hi = a + width;
            expansions += 1;
            if expansions > 400 || !hi.is_finite() {
                return Err(Error::NoBracket(format!(
                    "E1 residual stays non-positive for b up to {hi:.3e} at a = {a:.6e}"
                )));
            }
        }
        if self.e1(a, lo).0 >= 0.0 {
            return Err(Error::NoBracket(format!("E1 residual is non-negative at b = a+ for a = {a:.6e}")));
        }
        let root = safeguarded_newton(|b| Ok(self.e1(a, b)), lo, hi, 1e-16, 500)?;
        Ok(root.x)
    }
}

fn check_hypotheses(econ: &EconomicParams, moments: &MomentBundle, law: &MarkLaw, impact: &ImpactSpec) -> Result<f64> {
    let lambda = match *impact {
        ImpactSpec::Linear(l) if l > 0.0 => l,
        _ => {
            return Err(Error::Hypothesis(format!(
                "the three-piece solver needs linear impact with Lambda > 0, got {impact:?}"
            )))
        }
    };
    if law.has_bounded_support() {
        return Err(Error::Hypothesis(
            "the three-piece solver needs marks with unbounded support; use the QP oracle for discrete laws".into(),
        ));
    }
    let margin = econ.cost * econ.horizon - moments.m_t();
    if margin <= 0.0 {
        return Err(Error::Hypothesis(format!(
            "cT - M(T) = {} * {} - {} = {margin} must be > 0",
            econ.cost,
            econ.horizon,
            moments.m_t()
        )));
    }
    if (econ.horizon - moments.horizon()).abs() > 1e-12 * moments.horizon() {
        return Err(Error::HorizonMismatch {
            economic: econ.horizon,
            moments: moments.horizon(),
        });
    }
    Ok(lambda)
}

/// Analytic optimum under linear impact.
pub fn solve_three_piece(
    econ: &EconomicParams,
    moments: &MomentBundle,
    law: &MarkLaw,
    impact: &ImpactSpec,
) -> Result<OptimalContractResult> {
    let lambda = check_hypotheses(econ, moments, law, impact)?;
    let system = ThreePieceSystem {
        econ,
        moments,
        law,
        impact: *impact,
        lambda,
    };

    // Above the deductible that is optimal without clustering the E2 residual
    // is positive whenever A ≥ 0, so that point always closes the bracket.
    let m = moments.m_t();
    let poisson_deductible = (econ.cost * econ.horizon - m) / (2.0 * econ.gamma * m);
    let e2_at = |a: f64| -> Result<f64> {
        let b = system.solve_b(a)?;
        Ok(system.e2(a, b))
    };
    let mut a_hi = law.quantile(0.999);
    let mut f_hi = e2_at(a_hi)?;
    for p in [2.0 * poisson_deductible, law.quantile(1.0 - 1e-6), law.quantile(1.0 - 1e-9)] {
        if f_hi > 0.0 {
            break;
        }
        a_hi = a_hi.max(p);
        f_hi = e2_at(a_hi)?;
    }
    let a_lo = a_hi * 1e-9;
    let f_lo = e2_at(a_lo)?;
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::NoBracket(format!(
            "E2 residual does not change sign on a in [{a_lo:.3e}, {a_hi:.3e}]: values {f_lo:.6e}, {f_hi:.6e}"
        )));
    }
    let root = bisect(e2_at, a_lo, a_hi, 200)?;
    let a = root.x;
    let b = system.solve_b(a)?;
    let contract = Contract::three_piece(a, b)?;
    let stats = contract.stats(law, impact, econ.cost);
    let slope = b / (b - a);
    let slope_from_gradient = 1.0 - lambda * moments.b_t() / (2.0 * m) * stats.h_gap;
    let c_star = system.c_star(&stats);
    let residuals = (system.e1(a, b).0, system.e2(a, b));
    let report = report_from_stats(&stats, econ, moments, law.theta_bar());
    let gradient = Gradient::from_stats(&stats, &contract, econ, moments, impact);
    let regions = region_report(&gradient, a, b, law.quantile(0.999).max(2.0 * b), 1000, econ, moments);

    Ok(OptimalContractResult {
        contract,
        a,
        b,
        slope,
        slope_from_gradient,
        c_star,
        stats,
        report,
        regions,
        residuals,
        residual_scale: system.ratio().max(1.0),
    })
}

fn region_report(
    gradient: &Gradient,
    a: f64,
    b: f64,
    grid_max: f64,
    n: usize,
    econ: &EconomicParams,
    moments: &MomentBundle,
) -> RegionReport {
    let scale = (moments.m_t() - econ.cost * econ.horizon).abs()
        + gradient.gap_coef.abs() * grid_max
        + gradient.impact_coef.abs() * gradient.at(grid_max).abs().max(grid_max);
    let mut report = RegionReport {
        grid_points: n,
        grid_max,
        max_below_a: f64::NEG_INFINITY,
        max_abs_between: 0.0,
        min_above_b: f64::INFINITY,
        tolerance: 1e-7 * scale,
    };
    for i in 1..=n {
        let z = grid_max * i as f64 / n as f64;
        let g = gradient.at(z);
        if z < a {
            report.max_below_a = report.max_below_a.max(g);
        } else if z > b {
            report.min_above_b = report.min_above_b.min(g);
        } else if z > a && z < b {
            report.max_abs_between = report.max_abs_between.max(g.abs());
        }
    }
    report
}

/// Where an atom's contract value sits relative to its box `[0, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    NoCover,
    Interior,
    FullCover,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub start: &'static str,
    pub utility: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOracleResult {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub utility: f64,
    pub activity: Vec<Activity>,
    /// Largest violation of the discretized first-order condition, in units
    /// of G.
    pub kkt_residual: f64,
    /// Smallest eigenvalue of the negated Hessian in the Θ-weighted metric;
    /// non-negative means the discretized criterion is concave.
    pub concavity_margin: f64,
    pub concave: bool,
    pub starts: Vec<StartOutcome>,
    /// Whether the final active-set solve produced an exact stationary point.
    pub polished: bool,
}

impl QpOracleResult {
    pub fn contract(&self) -> Result<Contract> {
        Contract::tabulated(self.grid.iter().copied().zip(self.phi.iter().copied()).collect())
    }

    pub fn indices(&self, kind: Activity) -> Vec<usize> {
        self.activity.iter().enumerate().filter(|(_, a)| **a == kind).map(|(i, _)| i).collect()
    }
}

/// The criterion as a quadratic in the atom values `x_i = φ(z_i)`.
struct DiscreteProblem<'a> {
    z: Vec<f64>,
    w: Vec<f64>,
    f: Vec<f64>,
    econ: &'a EconomicParams,
    moments: &'a MomentBundle,
    theta_bar: f64,
}

struct Aggregates {
    h: f64,
    hf: f64,
    h2: f64,
}

impl DiscreteProblem<'_> {
    fn aggregates(&self, x: &[f64]) -> Aggregates {
        let mut agg = Aggregates { h: 0.0, hf: 0.0, h2: 0.0 };
        for (i, xi) in x.iter().enumerate() {
            let u = xi - self.z[i];
            agg.h += self.w[i] * u;
            agg.hf += self.w[i] * self.f[i] * u;
            agg.h2 += self.w[i] * u * u;
        }
        agg
    }

    fn utility(&self, x: &[f64]) -> f64 {
        let agg = self.aggregates(x);
        let stats = ContractStats {
            h_gap: agg.h,
            h_gap_sq: agg.h2,
            h_f_gap: agg.hf,
            h_cover: 0.0,
            cost_rate: 0.0,
        };
        report_from_stats(&stats, self.econ, self.moments, self.theta_bar).utility
    }

    /// `G(φ)(z_i)`; the Euclidean gradient is `w_i G_i`.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let agg = self.aggregates(x);
        let (m, g) = (self.moments.m_t(), self.econ.gamma);
        let level = (m - self.econ.cost * self.econ.horizon) - 2.0 * g * agg.h * self.moments.a_t()
            - g * agg.hf * self.moments.b_t();
        let impact_coef = -g * agg.h * self.moments.b_t();
        (0..x.len())
            .map(|i| level + impact_coef * self.f[i] - 2.0 * g * m * (x[i] - self.z[i]))
            .collect()
    }

    fn project(&self, x: &mut [f64]) {
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi = xi.clamp(0.0, *zi);
        }
    }

    fn kkt_residual(&self, x: &[f64], grad: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let g = grad[i];
            let r = if self.z[i] == 0.0 {
                0.0
            } else if x[i] <= 0.0 {
                g.max(0.0)
            } else if x[i] >= self.z[i] {
                (-g).max(0.0)
            } else {
                g.abs()
            };
            worst = worst.max(r);
        }
        worst
    }

    fn activity(&self, x: &[f64]) -> Vec<Activity> {
        x.iter()
            .zip(&self.z)
            .map(|(&xi, &zi)| {
                if xi <= 0.0 {
                    Activity::NoCover
                } else if xi >= zi {
                    Activity::FullCover
                } else {
                    Activity::Interior
                }
            })
            .collect()
    }

    /// λ_min of the negated Hessian in the metric diag(w).
    fn concavity_margin(&self) -> f64 {
        let (m, g) = (self.moments.m_t(), self.econ.gamma);
        let (a, b) = (self.moments.a_t(), self.moments.b_t());
        let s0: f64 = self.w.iter().sum();
        let s1: f64 = self.w.iter().zip(&self.f).map(|(w, f)| w * f).sum();
        let s2: f64 = self.w.iter().zip(&self.f).map(|(w, f)| w * f * f).sum();
        // Non-zero spectrum of the rank-two part = spectrum of C·Gram.
        let c = [[2.0 * g * a, g * b], [g * b, 0.0]];
        let gram = [[s0, s1], [s1, s2]];
        let p = [
            [c[0][0] * gram[0][0] + c[0][1] * gram[1][0], c[0][0] * gram[0][1] + c[0][1] * gram[1][1]],
            [c[1][0] * gram[0][0] + c[1][1] * gram[1][0], c[1][0] * gram[0][1] + c[1][1] * gram[1][1]],
        ];
        let tr = p[0][0] + p[1][1];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let low = tr / 2.0 - disc;
        2.0 * g * m + low.min(0.0)
    }

    /// Projected gradient ascent in the Θ-weighted metric with Armijo
    /// backtracking.
    fn ascend(&self, mut x: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
        self.project(&mut x);
        let base_step = 1.0 / (2.0 * self.econ.gamma * self.moments.m_t());
        let mut step = base_step;
        let mut u = self.utility(&x);
        for it in 0..max_iter {
            let grad = self.gradient(&x);
            if self.kkt_residual(&x, &grad) <= tol {
                return (x, it);
            }
            loop {
                let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
                self.project(&mut cand);
                let ascent: f64 = (0..x.len()).map(|i| self.w[i] * grad[i] * (cand[i] - x[i])).sum();
                let u_cand = self.utility(&cand);
                if u_cand >= u + 1e-4 * ascent || step < 1e-14 * base_step {
                    x = cand;
                    u = u_cand;
                    break;
                }
                step *= 0.5;
            }
            step = (step * 2.0).min(base_step * 4.0);
        }
        (x, max_iter)
    }

    /// With the active set of `x` fixed, solves `G = 0` on the free atoms
    /// exactly. Returns `None` if the result leaves the box.
    fn polish(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (m, g) = (self.moments.m_t(), self.econ.gamma);
        let (a, b) = (self.moments.a_t(), self.moments.b_t());
        let k0 = m - self.econ.cost * self.econ.horizon;
        let act = self.activity(x);
        let (mut s, mut sf, mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, kind) in act.iter().enumerate() {
            match kind {
                Activity::NoCover => {
                    s -= self.w[i] * self.z[i];
                    sf -= self.w[i] * self.f[i] * self.z[i];
                }
                Activity::FullCover => {}
                Activity::Interior => {
                    w0 += self.w[i];
                    w1 += self.w[i] * self.f[i];
                    w2 += self.w[i] * self.f[i] * self.f[i];
                }
            }
        }
        // Free atoms: u_i = (k0 − 2γA h − γB hf − γB h f_i) / (2γM).
        // h  = s  + [w0 (k0 − 2γA h − γB hf) − γB h w1] / (2γM)
        // hf = sf + [w1 (k0 − 2γA h − γB hf) − γB h w2] / (2γM)
        let d = 2.0 * g * m;
        let m11 = d + w0 * 2.0 * g * a + g * b * w1;
        let m12 = w0 * g * b;
        let m21 = w1 * 2.0 * g * a + g * b * w2;
        let m22 = d + w1 * g * b;
        let r1 = d * s + w0 * k0;
        let r2 = d * sf + w1 * k0;
        let det = m11 * m22 - m12 * m21;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let h = (r1 * m22 - m12 * r2) / det;
        let hf = (m11 * r2 - m21 * r1) / det;
        let mut out = x.to_vec();
        for i in 0..x.len() {
            if act[i] == Activity::Interior {
                let u = (k0 - 2.0 * g * a * h - g * b * hf - g * b * h * self.f[i]) / d;
                let v = self.z[i] + u;
                if v < 0.0 || v > self.z[i] {
                    return None;
                }
                out[i] = v;
            }
        }
        Some(out)
    }
}

/// Brute-force maximization over contracts on a discrete mark law,
/// certified by the discretized first-order condition.
pub fn qp_oracle(econ: &EconomicParams, moments: &MomentBundle, law: &MarkLaw, impact: &ImpactSpec) -> Result<QpOracleResult> {
    let atoms = law
        .atoms()
        .ok_or_else(|| Error::param("law", "the QP oracle needs a discrete mark law (discretize continuous laws first)"))?;
    if atoms.len() > 10_000 {
        return Err(Error::param("law", format!("at most 10^4 atoms supported, got {}", atoms.len())));
    }
    if (econ.horizon - moments.horizon()).abs() > 1e-12 * moments.horizon() {
        return Err(Error::HorizonMismatch {
            economic: econ.horizon,
            moments: moments.horizon(),
        });
    }
    let problem = DiscreteProblem {
        z: atoms.iter().map(|a| a.size).collect(),
        w: atoms.iter().map(|a| a.weight).collect(),
        f: atoms.iter().map(|a| impact.eval(a.size)).collect(),
        econ,
        moments,
        theta_bar: law.theta_bar(),
    };
    let m = moments.m_t();
    let z_max = problem.z.iter().copied().fold(0.0, f64::max);
    let g_scale = (m - econ.cost * econ.horizon).abs() + 2.0 * econ.gamma * m * z_max;
    let tol = 1e-11 * g_scale;

    let deductible = ((econ.cost * econ.horizon - m) / (2.0 * econ.gamma * m)).max(0.0);
    let starts: [(&'static str, Vec<f64>); 3] = [
        ("zero", vec![0.0; problem.z.len()]),
        ("full", problem.z.clone()),
        ("deductible", problem.z.iter().map(|z| (z - deductible).max(0.0)).collect()),
    ];

    let mut outcomes = Vec::new();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for (name, x0) in starts {
        let (mut x, iterations) = problem.ascend(x0, tol, 200_000);
        let mut polished = false;
        if let Some(p) = problem.polish(&x) {
            let grad = problem.gradient(&p);
            if problem.kkt_residual(&p, &grad) <= problem.kkt_residual(&x, &problem.gradient(&x)).max(tol) {
                x = p;
                polished = true;
            }
        }
        let u = problem.utility(&x);
        outcomes.push(StartOutcome {
            start: name,
            utility: u,
            iterations,
        });
        if best.as_ref().is_none_or(|(_, bu, _)| u > *bu) {
            best = Some((x, u, polished));
        }
    }
    let (phi, utility, polished) = best.expect("three starts");
    let grad = problem.gradient(&phi);
    let concavity_margin = problem.concavity_margin();
    Ok(QpOracleResult {
        kkt_residual: problem.kkt_residual(&phi, &grad),
        activity: problem.activity(&phi),
        grid: problem.z.clone(),
        weights: problem.w.clone(),
        phi,
        utility,
        concavity_margin,
        concave: concavity_margin >= 0.0,
        starts: outcomes,
        polished,
    })
}

/// Which intensity the contract starts from in the Poisson-limit sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStart {
    /// λ₀ = λ̄: signed outside a cluster.
    LongRunLevel,
    /// λ₀ = βλ̄/κ: the intensity starts at its stationary mean.
    Stationary,
}

/// How the sweep keeps the expected reinsurance cost `c·H[φ*]` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverInvariance {
    /// Keep γ as given and only report the cost drift against the first row.
    ReportOnly,
    /// Re-solve γ on every row so that `H[φ*]` equals its value on the first
    /// row. γ does not enter M, A or B, so the count calibration is unchanged.
    RiskAversion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub lambda_bar: f64,
    pub lambda0: f64,
    pub m_t: f64,
    pub outcome: std::result::Result<SweepSolution, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSolution {
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub slope: f64,
    pub h_cover: f64,
    pub cost: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub lambda_p: f64,
    pub rows: Vec<SweepRow>,
    pub slope_non_increasing: bool,
    pub a_non_increasing: bool,
    pub b_non_decreasing: bool,
    /// Slope − 1 at the last grid point.
    pub terminal_excess_slope: f64,
    /// Largest |M(T)/(λ_P T) − 1| over the rows.
    pub count_invariance_error: f64,
    /// Whether every row's expected cost lies within ±2% of the first row's.
    pub cost_within_band: bool,
}

/// `λ̄` for which `M(T) = λ_P T` at linear impact `Λ`.
pub fn calibrate_lambda_bar(
    beta: f64,
    lambda: f64,
    marks: &MarkLaw,
    horizon: f64,
    lambda_p: f64,
    start: SweepStart,
) -> Result<f64> {
    let kappa = beta - lambda * marks.theta_bar();
    if kappa <= 0.0 {
        return Err(Error::NotErgodic { margin: kappa });
    }
    // M(T) is linear in λ̄ for either start convention.
    let per_unit = match start {
        SweepStart::Stationary => beta / kappa * horizon,
        SweepStart::LongRunLevel => {
            beta / kappa * horizon + (1.0 - beta / kappa) * (-(kappa * horizon)).exp_m1() / -kappa
        }
    };
    Ok(lambda_p * horizon / per_unit)
}

/// γ at which the optimal contract has expected cover `target`.
/// `H[φ*]` increases with γ, so bisection on ln γ suffices.
fn calibrate_gamma(
    econ: &EconomicParams,
    moments: &MomentBundle,
    marks: &MarkLaw,
    impact: &ImpactSpec,
    target: f64,
) -> Result<(f64, OptimalContractResult)> {
    let solve = |ln_gamma: f64| -> Result<OptimalContractResult> {
        let e = EconomicParams {
            gamma: ln_gamma.exp(),
            ..*econ
        };
        solve_three_piece(&e, moments, marks, impact)
    };
    let excess = |ln_gamma: f64| -> Result<f64> { Ok(solve(ln_gamma)?.stats.h_cover - target) };
    let centre = econ.gamma.ln();
    let (mut lo, mut hi) = (centre, centre);
    let mut step = 0.5;
    while excess(lo)? > 0.0 {
        lo -= step;
        step *= 2.0;
        if lo < centre - 200.0 {
            return Err(Error::NoBracket(format!("no gamma below {} reaches cover {target}", econ.gamma)));
        }
    }
    step = 0.5;
    while excess(hi)? < 0.0 {
        hi += step;
        step *= 2.0;
        if hi > centre + 200.0 {
            return Err(Error::NoBracket(format!("no gamma above {} reaches cover {target}", econ.gamma)));
        }
    }
    let root = if lo == hi { lo } else { bisect(excess, lo, hi, 200)?.x };
    Ok((root.exp(), solve(root)?))
}

/// Re-solves the optimal contract along a decreasing grid of Λ, holding
/// `M(T) = λ_P T` fixed by recalibrating λ̄. `λ_P` is taken from `base`.
pub fn poisson_limit_sweep(
    base: &HawkesParams,
    econ: &EconomicParams,
    lambda_grid: &[f64],
    start: SweepStart,
    cover: CoverInvariance,
) -> Result<SweepReport> {
    use rayon::prelude::*;

    let base_moments = MomentBundle::new(base, econ.horizon)?;
    let lambda_p = base_moments.m_t() / econ.horizon;
    let marks = base.marks();

    let row_at = |lambda: f64, target: Option<f64>| -> SweepRow {
        let mut row = SweepRow {
            lambda,
            lambda_bar: f64::NAN,
            lambda0: f64::NAN,
            m_t: f64::NAN,
            outcome: Err(String::new()),
        };
        let solved = (|| -> Result<SweepSolution> {
            let lambda_bar = calibrate_lambda_bar(base.beta(), lambda, marks, econ.horizon, lambda_p, start)?;
            let kappa = base.beta() - lambda * marks.theta_bar();
            let lambda0 = match start {
                SweepStart::LongRunLevel => lambda_bar,
                SweepStart::Stationary => base.beta() * lambda_bar / kappa,
            };
            row.lambda_bar = lambda_bar;
            row.lambda0 = lambda0;
            let impact = ImpactSpec::Linear(lambda);
            let params = HawkesParams::new(lambda0, lambda_bar, base.beta(), impact, marks.clone())?;
            let moments = MomentBundle::new(&params, econ.horizon)?;
            row.m_t = moments.m_t();
            let (gamma, opt) = match target {
                Some(t) => calibrate_gamma(econ, &moments, marks, &impact, t)?,
                None => (econ.gamma, solve_three_piece(econ, &moments, marks, &impact)?),
            };
            Ok(SweepSolution {
                gamma,
                a: opt.a,
                b: opt.b,
                slope: opt.slope,
                h_cover: opt.stats.h_cover,
                cost: opt.stats.cost_rate,
                utility: opt.report.utility,
            })
        })();
        row.outcome = solved.map_err(|e| e.to_string());
        row
    };

    let Some((&first, rest)) = lambda_grid.split_first() else {
        return Err(Error::param("lambda_grid", "must not be empty"));
    };
    let first_row = row_at(first, None);
    let target = match (&first_row.outcome, cover) {
        (Ok(s), CoverInvariance::RiskAversion) => Some(s.h_cover),
        _ => None,
    };
    let mut rows = vec![first_row];
    rows.extend(rest.par_iter().map(|&l| row_at(l, target)).collect::<Vec<_>>());

    let solutions: Vec<&SweepSolution> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let all_ok = solutions.len() == rows.len();
    let pairwise = |f: &dyn Fn(&SweepSolution, &SweepSolution) -> bool| all_ok && solutions.windows(2).all(|w| f(w[0], w[1]));
    let count_invariance_error = rows
        .iter()
        .map(|r| (r.m_t / (lambda_p * econ.horizon) - 1.0).abs())
        .fold(0.0, |acc: f64, e| if e.is_nan() { f64::INFINITY } else { acc.max(e) });
    let cost_within_band = all_ok
        && solutions
            .first()
            .is_some_and(|first| solutions.iter().all(|s| (s.cost / first.cost - 1.0).abs() <= 0.02));

    Ok(SweepReport {
        lambda_p,
        slope_non_increasing: pairwise(&|p, n| n.slope <= p.slope),
        a_non_increasing: pairwise(&|p, n| n.a <= p.a),
        b_non_decreasing: pairwise(&|p, n| n.b >= p.b),
        terminal_excess_slope: solutions.last().map(|s| s.slope - 1.0).unwrap_or(f64::NAN),
        count_invariance_error,
        cost_within_band,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> (EconomicParams, MomentBundle, MarkLaw, ImpactSpec) {
        let law = MarkLaw::exponential(1.0).unwrap();
        let impact = ImpactSpec::Linear(0.5);
        let params = HawkesParams::new(1.0, 1.0, 2.0, impact, law.clone()).unwrap();
        let econ = EconomicParams::new(10.0, 1.5, 2.5, 0.25, 2.0).unwrap();
        let mb = MomentBundle::new(&params, 2.0).unwrap();
        (econ, mb, law, impact)
    }

    #[test]
    fn three_piece_solution_satisfies_both_equations() {
        let (econ, mb, law, impact) = instance();
        let r = solve_three_piece(&econ, &mb, &law, &impact).unwrap();
        assert!(r.residuals.0.abs() <= 1e-9 * r.residual_scale, "{:?}", r.residuals);
        assert!(r.residuals.1.abs() <= 1e-9 * r.residual_scale, "{:?}", r.residuals);
        assert!(r.slope > 1.0);
        assert!((r.slope - r.slope_from_gradient).abs() <= 1e-8 * r.slope);
        assert!((r.slope * r.a - r.c_star).abs() <= 1e-9 * r.residual_scale);
        assert!(0.0 < r.a && r.a < r.b);
        assert!(r.regions.pattern_holds(), "{:?}", r.regions);
        assert!(r.stats.h_cover > 0.0 && r.stats.h_cover < law.theta_bar());
    }

    #[test]
    fn hypothesis_violations() {
        let (econ, mb, law, impact) = instance();
        let cheap = EconomicParams { cost: 0.5, ..econ };
        assert!(matches!(solve_three_piece(&cheap, &mb, &law, &impact), Err(Error::Hypothesis(_))));
        assert!(matches!(
            solve_three_piece(&econ, &mb, &law, &ImpactSpec::Linear(0.0)),
            Err(Error::Hypothesis(_))
        ));
        assert!(matches!(
            solve_three_piece(&econ, &mb, &law, &ImpactSpec::Constant(0.3)),
            Err(Error::Hypothesis(_))
        ));
        let atoms = law.discretize(20, 5.0).unwrap();
        assert!(matches!(solve_three_piece(&econ, &mb, &atoms, &impact), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn optimum_dominates_standard_contracts() {
        let (econ, mb, law, impact) = instance();
        let r = solve_three_piece(&econ, &mb, &law, &impact).unwrap();
        let u = |c: &Contract| crate::criterion::utility_closed_form(c, &econ, &mb, &law, &impact).unwrap().utility;
        let best = r.report.utility;
        let mut rivals = vec![Contract::Zero, Contract::Full];
        for i in 0..=40 {
            rivals.push(Contract::deductible(0.1 * i as f64).unwrap());
            rivals.push(Contract::proportional(i as f64 / 40.0).unwrap());
        }
        for c in &rivals {
            assert!(best >= u(c) - 1e-9, "{c:?}");
        }
    }

    #[test]
    fn oracle_on_two_atoms_matches_exhaustive_grid() {
        let law = MarkLaw::discrete(vec![crate::marks::Atom::new(1.0, 0.5), crate::marks::Atom::new(5.0, 0.5)]).unwrap();
        let impact = ImpactSpec::Linear(0.3);
        let params = HawkesParams::new(1.0, 1.0, 2.0, impact, law.clone()).unwrap();
        let econ = EconomicParams::new(0.0, 1.2, 2.0, 0.1, 2.0).unwrap();
        let mb = MomentBundle::new(&params, 2.0).unwrap();
        let r = qp_oracle(&econ, &mb, &law, &impact).unwrap();

        let u = |x0: f64, x1: f64| {
            let c = Contract::tabulated(vec![(1.0, x0), (5.0, x1)]).unwrap();
            crate::criterion::utility_closed_form(&c, &econ, &mb, &law, &impact).unwrap().utility
        };
        let step = 1e-3;
        let (mut best, mut arg) = (f64::NEG_INFINITY, (0.0, 0.0));
        for i in 0..=1000 {
            for j in 0..=5000 {
                let (x0, x1) = (i as f64 * step, j as f64 * step);
                let v = u(x0, x1);
                if v > best {
                    best = v;
                    arg = (x0, x1);
                }
            }
        }
        assert!((r.phi[0] - arg.0).abs() <= 2e-3 && (r.phi[1] - arg.1).abs() <= 2e-3, "{:?} vs {arg:?}", r.phi);
        assert!(r.utility >= best - 1e-12);
    }

    #[test]
    fn oracle_starts_agree_on_concave_instance() {
        let (econ, _, law, impact) = instance();
        let atoms = law.discretize(100, law.quantile(0.9999)).unwrap();
        let params = HawkesParams::new(1.0, 1.0, 2.0, impact, atoms.clone()).unwrap();
        let mb = MomentBundle::new(&params, 2.0).unwrap();
        let r = qp_oracle(&econ, &mb, &atoms, &impact).unwrap();
        assert!(r.concave);
        let u: Vec<f64> = r.starts.iter().map(|s| s.utility).collect();
        for v in &u {
            assert!((v - u[0]).abs() <= 1e-8, "{u:?}");
        }
        assert!(r.kkt_residual <= 1e-9, "{}", r.kkt_residual);
    }

    #[test]
    fn calibration_hits_target_count() {
        let law = MarkLaw::exponential(1.0).unwrap();
        for start in [SweepStart::LongRunLevel, SweepStart::Stationary] {
            let lbar = calibrate_lambda_bar(2.0, 0.7, &law, 3.0, 1.5, start).unwrap();
            let l0 = match start {
                SweepStart::LongRunLevel => lbar,
                SweepStart::Stationary => 2.0 * lbar / 1.3,
            };
            let p = HawkesParams::new(l0, lbar, 2.0, ImpactSpec::Linear(0.7), law.clone()).unwrap();
            let m = MomentBundle::new(&p, 3.0).unwrap().m_t();
            assert!((m / 4.5 - 1.0).abs() < 1e-12);
        }
    }
}
