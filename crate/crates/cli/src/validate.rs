//! `validate`: Monte Carlo against the closed form, the analytic optimum
//! against the QP oracle, and the gradient against finite differences.

use clusterre::criterion::{
    constant_impact_terms, gradient, mc_report_from_retained, poisson_terms, retained_second_moment, utility_closed_form,
};
use clusterre::hawkes::{path_rng, simulate_batch};
use clusterre::moments::quadrature_route;
use clusterre::optimizer::{qp_oracle, solve_three_piece};
use clusterre::{Contract, EconomicParams, HawkesParams, ImpactSpec, MarkLaw, MomentBundle};
use rand::Rng;

use crate::config::ScenarioConfig;
use crate::contract_spec;
use crate::output::{num, CsvFile};
use crate::CliError;

const FULL_PATHS: usize = 100_000;
const FAST_PATHS: usize = 10_000;
const FAST_ORACLE_ATOMS: usize = 100;

#[derive(Debug, Clone)]
pub struct Gate {
    pub name: String,
    /// `None` when the gate does not apply to the scenario.
    pub passed: Option<bool>,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Gate {
    fn check(name: impl Into<String>, statistic: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: Some(statistic <= threshold),
            statistic,
            threshold,
            detail: detail.into(),
        }
    }

    fn flag(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: Some(ok),
            statistic: if ok { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail: detail.into(),
        }
    }

    fn skip(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: None,
            statistic: f64::NAN,
            threshold: f64::NAN,
            detail: reason.into(),
        }
    }

    fn status(&self) -> &'static str {
        match self.passed {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "skip",
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Contracts exercised by the Monte Carlo gates, placed by mark quantiles.
fn test_contracts(law: &MarkLaw, configured: Option<&str>) -> Result<Vec<Contract>, CliError> {
    let q = |p: f64| match law.atoms() {
        Some(atoms) => {
            let target = p * law.total_mass();
            let mut acc = 0.0;
            atoms
                .iter()
                .find(|a| {
                    acc += a.weight;
                    acc >= target
                })
                .map_or(atoms[atoms.len() - 1].size, |a| a.size)
        }
        None => law.quantile(p),
    };
    let (q25, q50, q75) = (q(0.25), q(0.5), q(0.75));
    let mut contracts = vec![Contract::deductible(q50)?, Contract::proportional(0.5)?];
    if q75 > q25 && q25 > 0.0 {
        contracts.push(Contract::three_piece(q25, q75)?);
    }
    if let Some(spec) = configured {
        let c = contract_spec::parse(spec).map_err(CliError::Usage)?;
        if !contracts.contains(&c) {
            contracts.push(c);
        }
    }
    Ok(contracts)
}

pub fn run_gates(cfg: &ScenarioConfig, seed: u64, fast: bool) -> Result<Vec<Gate>, CliError> {
    let params = &cfg.params;
    let econ = &cfg.econ;
    let law = params.marks();
    let impact = params.impact();
    let horizon = econ.horizon;
    let mb = MomentBundle::new(params, horizon)?;
    let mut gates = Vec::new();

    // Closed-form moments against nested quadrature of their definitions.
    let m_q = quadrature_route::cumulative_mean(params, horizon)?;
    let b_q = quadrature_route::coefficient_b(params, horizon)?;
    let a_q = quadrature_route::coefficient_a(params, horizon)?;
    gates.push(Gate::check("moments_route_M", rel(mb.m_t(), m_q), 1e-8, format!("closed {} quadrature {m_q}", mb.m_t())));
    gates.push(Gate::check("moments_route_B", rel(mb.b_t(), b_q), 1e-8, format!("closed {} quadrature {b_q}", mb.b_t())));
    gates.push(Gate::check(
        "moments_route_A",
        (mb.a_t() - a_q).abs() / (a_q.abs() + mb.m_t().powi(2)),
        1e-8,
        format!("closed {} quadrature {a_q}", mb.a_t()),
    ));

    let contracts = test_contracts(law, cfg.run.contract.as_deref())?;

    // Specializations of the general criterion.
    let poisson = HawkesParams::poisson(params.lambda0(), law.clone())?;
    let mb_poisson = MomentBundle::new(&poisson, horizon)?;
    for c in &contracts {
        let name = contract_spec::describe(c);
        let stats = c.stats(law, &poisson.impact(), econ.cost);
        let d = utility_closed_form(c, econ, &mb_poisson, law, &poisson.impact())?.decomposition;
        let terms = poisson_terms(&stats, econ, poisson.lambda0(), law.theta_bar());
        let general = [d.base, d.retained_mean, d.claim_variance];
        let worst = general.iter().zip(&terms).map(|(x, y)| rel(*x, *y)).fold(d.cluster_variance.abs() + d.feedback_variance.abs(), f64::max);
        gates.push(Gate::check(format!("poisson_specialization[{name}]"), worst, 1e-12, ""));
        if let ImpactSpec::Constant(f_bar) = impact {
            let stats = c.stats(law, &impact, econ.cost);
            let d = utility_closed_form(c, econ, &mb, law, &impact)?.decomposition;
            let terms = constant_impact_terms(&stats, econ, &mb, f_bar, law.theta_bar());
            let general = [d.base, d.retained_mean, d.cluster_variance + d.feedback_variance, d.claim_variance];
            let worst = general.iter().zip(&terms).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max);
            gates.push(Gate::check(format!("constant_impact_specialization[{name}]"), worst, 1e-12, ""));
        }
    }

    // Monte Carlo on one set of paths shared by all contracts.
    let n_paths = match (cfg.run.n_paths, fast) {
        (Some(n), false) => n,
        (Some(n), true) => (n / 10).max(1_000),
        (None, false) => FULL_PATHS,
        (None, true) => FAST_PATHS,
    };
    let marks_per_path: Vec<Vec<f64>> =
        simulate_batch(params, horizon, seed, n_paths, |p| p.events.iter().map(|e| e.mark).collect())?;
    for c in &contracts {
        let name = contract_spec::describe(c);
        let retained: Vec<f64> = marks_per_path
            .iter()
            .map(|marks| marks.iter().map(|&z| c.evaluate(z) - z).sum())
            .collect();
        let mc = mc_report_from_retained(c, econ, params, &retained)?;
        let stats = c.stats(law, &impact, econ.cost);
        let x = mc.retained;
        let mean = stats.h_gap * mb.m_t();
        let second = retained_second_moment(&stats, &mb);
        let report = utility_closed_form(c, econ, &mb, law, &impact)?;
        let z = |est: f64, exact: f64, se: f64| if se > 0.0 { (est - exact).abs() / se } else if est == exact { 0.0 } else { f64::INFINITY };
        gates.push(Gate::check(
            format!("mc_mean[{name}]"),
            z(x.mean, mean, x.mean_se),
            3.0,
            format!("mc {} closed {mean} se {}", x.mean, x.mean_se),
        ));
        gates.push(Gate::check(
            format!("mc_second_moment[{name}]"),
            z(x.raw_second, second, x.raw_second_se),
            3.0,
            format!("mc {} closed {second} se {}", x.raw_second, x.raw_second_se),
        ));
        gates.push(Gate::check(
            format!("mc_utility[{name}]"),
            z(mc.utility, report.utility, mc.utility_se),
            3.0,
            format!("mc {} closed {} se {}", mc.utility, report.utility, mc.utility_se),
        ));
    }

    gates.push(gradient_gate(cfg, seed)?);
    gates.extend(optimality_gates(params, econ, &mb, fast)?);
    gates.push(poisson_recovery_gate(params, econ)?);
    Ok(gates)
}

/// Central differences of U along random bumps on a discrete law.
fn gradient_gate(cfg: &ScenarioConfig, seed: u64) -> Result<Gate, CliError> {
    let params = &cfg.params;
    let econ = &cfg.econ;
    let law = match params.marks().atoms() {
        Some(_) => params.marks().clone(),
        None => params.marks().discretize(24, params.marks().quantile(0.999))?,
    };
    let impact = params.impact();
    let dparams = HawkesParams::new(params.lambda0(), params.lambda_bar(), params.beta(), impact, law.clone())?;
    let mb = MomentBundle::new(&dparams, econ.horizon)?;
    let atoms = law.atoms().expect("discrete").to_vec();
    // A stream no path of the Monte Carlo batch uses.
    let mut rng = path_rng(seed, u64::MAX);
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let phi: Vec<f64> = atoms.iter().map(|a| a.size * rng.random_range(0.1..0.9)).collect();
        let bump: Vec<f64> = atoms.iter().map(|a| a.size * rng.random_range(-0.05..0.05)).collect();
        let contract = |s: f64| {
            Contract::tabulated(atoms.iter().zip(phi.iter().zip(&bump)).map(|(a, (&p, &g))| (a.size, p + s * g)).collect())
        };
        let u = |s: f64| -> Result<f64, CliError> { Ok(utility_closed_form(&contract(s)?, econ, &mb, &law, &impact)?.utility) };
        let fd = (u(eps)? - u(-eps)?) / (2.0 * eps);
        let grad = gradient(&contract(0.0)?, econ, &mb, &law, &impact)?;
        let analytic = grad.directional(&law, |z| {
            atoms.iter().position(|a| a.size == z).map_or(0.0, |i| bump[i])
        })?;
        worst = worst.max(rel(fd, analytic));
    }
    Ok(Gate::check("gradient_finite_difference", worst, 1e-4, "50 random (phi, g) pairs, eps = 1e-6"))
}

fn optimality_gates(params: &HawkesParams, econ: &EconomicParams, mb: &MomentBundle, fast: bool) -> Result<Vec<Gate>, CliError> {
    let law = params.marks();
    let impact = params.impact();
    let applicable = match impact {
        ImpactSpec::Linear(l) if l > 0.0 => {
            if law.has_bounded_support() {
                Err("marks have bounded support")
            } else if econ.cost * econ.horizon <= mb.m_t() {
                Err("cT <= M(T)")
            } else {
                Ok(())
            }
        }
        _ => Err("impact is not linear with Lambda > 0"),
    };
    if let Err(reason) = applicable {
        return Ok(vec![Gate::skip("three_piece_optimum", reason)]);
    }

    let opt = solve_three_piece(econ, mb, law, &impact)?;
    let mut gates = vec![
        Gate::check(
            "three_piece_residuals",
            opt.residuals.0.abs().max(opt.residuals.1.abs()) / opt.residual_scale,
            1e-9,
            format!("a {} b {}", opt.a, opt.b),
        ),
        Gate::flag("three_piece_slope_above_one", opt.slope > 1.0, format!("slope {}", opt.slope)),
        Gate::flag(
            "three_piece_sign_pattern",
            opt.regions.pattern_holds(),
            format!(
                "max G below a {:e}, max |G| between {:e}, min G above b {:e}",
                opt.regions.max_below_a, opt.regions.max_abs_between, opt.regions.min_above_b
            ),
        ),
    ];

    let n_atoms = if fast { FAST_ORACLE_ATOMS } else { 400 };
    let upper = law.quantile(0.9999).max(1.5 * opt.b);
    let spacing = upper / n_atoms as f64;
    let atoms = law.discretize(n_atoms, upper)?;
    let dparams = HawkesParams::new(params.lambda0(), params.lambda_bar(), params.beta(), impact, atoms.clone())?;
    let dmb = MomentBundle::new(&dparams, econ.horizon)?;
    let qp = qp_oracle(econ, &dmb, &atoms, &impact)?;
    let sup = qp
        .grid
        .iter()
        .zip(&qp.phi)
        .map(|(&z, &p)| (p - opt.contract.evaluate(z)).abs())
        .fold(0.0, f64::max);
    gates.push(Gate::check(
        "qp_oracle_shape",
        sup / spacing,
        2.0,
        format!("sup |phi_qp - phi*| in grid spacings; {n_atoms} atoms, concave {}", qp.concave),
    ));
    gates.push(Gate::check(
        "qp_oracle_utility",
        rel(qp.utility, opt.report.utility),
        1e-3,
        format!("qp {} analytic {}", qp.utility, opt.report.utility),
    ));
    Ok(gates)
}

/// With a constant intensity the optimum is a deductible, atom by atom.
fn poisson_recovery_gate(params: &HawkesParams, econ: &EconomicParams) -> Result<Gate, CliError> {
    let law = params.marks();
    let atoms = match law.atoms() {
        Some(_) => law.clone(),
        None => law.discretize(200, law.quantile(0.9999))?,
    };
    let poisson = HawkesParams::poisson(params.lambda0(), atoms.clone())?;
    let mb = MomentBundle::new(&poisson, econ.horizon)?;
    let qp = qp_oracle(econ, &mb, &atoms, &poisson.impact())?;
    let lambda0 = params.lambda0();
    let d = (econ.cost - lambda0) / (2.0 * econ.gamma * lambda0);
    let worst = qp
        .grid
        .iter()
        .zip(&qp.phi)
        .map(|(&z, &p)| (p - (z - d).clamp(0.0, z)).abs())
        .fold(0.0, f64::max);
    let scale = qp.grid.last().copied().unwrap_or(1.0);
    Ok(Gate::check("poisson_recovery", worst / scale, 1e-9, format!("deductible {d}")))
}

pub fn validate(cfg: &ScenarioConfig, seed: Option<u64>, fast: bool) -> Result<bool, CliError> {
    let seed = match seed {
        Some(s) => s,
        None => cfg.require_seed("validate")?,
    };
    let gates = run_gates(cfg, seed, fast)?;
    let mut csv = CsvFile::create(&cfg.run.output_dir, "validate.csv", &cfg.hash, &["gate", "status", "statistic", "threshold", "detail"])?;
    println!("{:<44}{:>6}{:>16}{:>12}", "gate", "status", "statistic", "threshold");
    for g in &gates {
        csv.row(&[
            g.name.clone(),
            g.status().to_string(),
            num(g.statistic),
            num(g.threshold),
            format!("\"{}\"", g.detail.replace('"', "'")),
        ])?;
        println!("{:<44}{:>6}{:>16.4e}{:>12.1e}", g.name, g.status(), g.statistic, g.threshold);
    }
    csv.finish()?;
    let failed = gates.iter().filter(|g| g.passed == Some(false)).count();
    let skipped = gates.iter().filter(|g| g.passed.is_none()).count();
    println!("{} gates: {} passed, {failed} failed, {skipped} skipped", gates.len(), gates.len() - failed - skipped);
    Ok(failed == 0)
}
