//! The analytic three-piece optimum against the shape-free oracle.

use clusterre::optimizer::{poisson_limit_sweep, qp_oracle, solve_three_piece, Activity, CoverInvariance, SweepStart};
use clusterre::*;

struct Instance {
    law: MarkLaw,
    lambda0: f64,
    lambda_bar: f64,
    beta: f64,
    impact: f64,
    econ: EconomicParams,
}

fn instances() -> Vec<Instance> {
    vec![
        Instance {
            law: MarkLaw::exponential(1.0).unwrap(),
            lambda0: 1.0,
            lambda_bar: 1.0,
            beta: 2.0,
            impact: 0.5,
            econ: EconomicParams::new(10.0, 1.5, 2.5, 0.25, 2.0).unwrap(),
        },
        Instance {
            law: MarkLaw::lognormal(-0.2, 0.6).unwrap(),
            lambda0: 2.0,
            lambda_bar: 1.5,
            beta: 3.0,
            impact: 1.2,
            econ: EconomicParams::new(0.0, 1.2, 4.0, 0.5, 1.0).unwrap(),
        },
    ]
}

#[test]
fn oracle_recovers_three_piece_shape() {
    for inst in instances() {
        let impact = ImpactSpec::Linear(inst.impact);
        let params = HawkesParams::new(inst.lambda0, inst.lambda_bar, inst.beta, impact, inst.law.clone()).unwrap();
        let mb = MomentBundle::new(&params, inst.econ.horizon).unwrap();
        let opt = solve_three_piece(&inst.econ, &mb, &inst.law, &impact).unwrap();

        let upper = inst.law.quantile(0.9999).max(1.5 * opt.b);
        let atoms = inst.law.discretize(400, upper).unwrap();
        let h = upper / 400.0;
        let dparams = HawkesParams::new(inst.lambda0, inst.lambda_bar, inst.beta, impact, atoms.clone()).unwrap();
        let dmb = MomentBundle::new(&dparams, inst.econ.horizon).unwrap();
        let qp = qp_oracle(&inst.econ, &dmb, &atoms, &impact).unwrap();
        assert!(qp.concave && qp.polished, "{:?}", qp.starts);

        let sup = qp
            .grid
            .iter()
            .zip(&qp.phi)
            .map(|(&z, &p)| (p - opt.contract.evaluate(z)).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 2.0 * h, "sup {sup} vs spacing {h}");
        let rel = (qp.utility - opt.report.utility).abs() / opt.report.utility.abs();
        assert!(rel <= 1e-3, "{} vs {}", qp.utility, opt.report.utility);
        assert!(!qp.indices(Activity::NoCover).is_empty() && !qp.indices(Activity::Interior).is_empty());
    }
}

#[test]
fn poisson_oracle_is_a_deductible() {
    let law = MarkLaw::exponential(1.0).unwrap().discretize(300, 10.0).unwrap();
    let params = HawkesParams::poisson(1.5, law.clone()).unwrap();
    let econ = EconomicParams::new(0.0, 1.3, 2.4, 0.3, 2.0).unwrap();
    let mb = MomentBundle::new(&params, 2.0).unwrap();
    let qp = qp_oracle(&econ, &mb, &law, &params.impact()).unwrap();
    // Without clustering the criterion separates over atoms:
    // maximize H[(φ−I)](λ₀−c)T − γH[(φ−I)²]λ₀T pointwise.
    let d = (econ.cost - 1.5) / (2.0 * econ.gamma * 1.5);
    for (&z, &p) in qp.grid.iter().zip(&qp.phi) {
        assert!((p - (z - d).max(0.0)).abs() <= 1e-9, "z {z}: {p}");
    }
}

#[test]
fn sweep_towards_poisson_limit() {
    let law = MarkLaw::exponential(1.0).unwrap();
    let base = HawkesParams::new(1.0, 1.0, 2.0, ImpactSpec::Linear(1.0), law).unwrap();
    let econ = EconomicParams::new(10.0, 1.5, 2.5, 0.25, 2.0).unwrap();
    let grid: Vec<f64> = (0..10).map(|i| 1e-4f64.powf(i as f64 / 9.0)).collect();
    let r = poisson_limit_sweep(&base, &econ, &grid, SweepStart::LongRunLevel, CoverInvariance::RiskAversion).unwrap();
    assert!(r.slope_non_increasing && r.a_non_increasing && r.b_non_decreasing, "{r:?}");
    assert!(r.terminal_excess_slope <= 1e-3);
    assert!(r.count_invariance_error <= 1e-8);
    assert!(r.cost_within_band);
}
