//! Simulation against the closed-form moments.

use clusterre::criterion::{mc_estimate, retained_second_moment};
use clusterre::hawkes::{simulate_batch, EventPath};
use clusterre::sampling::{ks_test, SampleSummary};
use clusterre::*;

fn clustered() -> HawkesParams {
    HawkesParams::new(1.5, 1.0, 2.0, ImpactSpec::Linear(0.8), MarkLaw::exponential(1.0).unwrap()).unwrap()
}

#[test]
fn poisson_mode_counts_and_gaps() {
    let params = HawkesParams::poisson(3.0, MarkLaw::exponential(1.0).unwrap()).unwrap();
    let mb = MomentBundle::new(&params, 2.0).unwrap();
    assert!((mb.m_t() - 6.0).abs() < 1e-12);
    assert_eq!(mb.a_t(), 0.0);

    let counts: Vec<f64> = simulate_batch(&params, 2.0, 11, 20_000, |p| p.events.len() as f64).unwrap();
    let s = SampleSummary::from_values(&counts);
    assert!(s.mean_within(6.0, 3.0), "{s:?}");

    let gaps: Vec<f64> = simulate_batch(&params, 2.0, 12, 4_000, |p: &EventPath| {
        let mut last = 0.0;
        p.events
            .iter()
            .map(|e| {
                let g = e.time - last;
                last = e.time;
                g
            })
            .collect::<Vec<_>>()
    })
    .unwrap()
    .into_iter()
    .flat_map(|v| v.into_iter().take(1))
    .collect();
    let ks = ks_test(&gaps, |x| 1.0 - (-3.0 * x).exp());
    assert!(ks.p_value > 1e-3, "{ks:?}");
}

#[test]
fn terminal_intensity_mean_and_second_moment() {
    let params = clustered();
    let mb = MomentBundle::new(&params, 2.0).unwrap();
    let lam: Vec<f64> = simulate_batch(&params, 2.0, 5, 40_000, |p| p.terminal_intensity).unwrap();
    let s = SampleSummary::from_values(&lam);
    assert!(s.mean_within(mb.mean_intensity(2.0), 3.0), "{s:?} vs {}", mb.mean_intensity(2.0));
    assert!(
        (s.raw_second - mb.second_moment(2.0)).abs() <= 3.0 * s.raw_second_se,
        "{s:?} vs {}",
        mb.second_moment(2.0)
    );
}

#[test]
fn retained_loss_moments_match_closed_form() {
    let params = clustered();
    let mb = MomentBundle::new(&params, 2.0).unwrap();
    let econ = EconomicParams::new(5.0, 1.4, 2.0, 0.3, 2.0).unwrap();
    for (i, contract) in [Contract::deductible(0.7).unwrap(), Contract::proportional(0.4).unwrap(), Contract::three_piece(0.5, 2.5).unwrap()]
        .into_iter()
        .enumerate()
    {
        let mc = mc_estimate(&contract, &econ, &params, 30_000, 100 + i as u64).unwrap();
        let stats = contract.stats(params.marks(), &params.impact(), econ.cost);
        let x = mc.retained;
        assert!(x.mean_within(stats.h_gap * mb.m_t(), 3.0), "{contract:?}: {x:?}");
        let second = retained_second_moment(&stats, &mb);
        assert!((x.raw_second - second).abs() <= 3.0 * x.raw_second_se, "{contract:?}: {x:?} vs {second}");
    }
}

#[test]
fn batches_are_reproducible_and_ordered() {
    let params = clustered();
    let a: Vec<usize> = simulate_batch(&params, 3.0, 77, 64, |p| p.events.len()).unwrap();
    let b: Vec<usize> = simulate_batch(&params, 3.0, 77, 64, |p| p.events.len()).unwrap();
    assert_eq!(a, b);
    let first = hawkes::simulate_path(&params, 3.0, 77).unwrap();
    assert_eq!(first.events.len(), a[0]);
}

#[test]
fn utility_matches_closed_form_across_parameter_sets() {
    let lognormal = MarkLaw::lognormal(-0.3, 0.6).unwrap();
    let discrete = MarkLaw::discrete(vec![Atom::new(0.2, 0.5), Atom::new(1.0, 0.7), Atom::new(4.0, 0.1)]).unwrap();
    let heavy = MarkLaw::new(MarkFamily::Exponential { mean: 0.5 }, 2.0).unwrap();
    let sets = [
        (HawkesParams::poisson(2.5, MarkLaw::exponential(1.0).unwrap()).unwrap(), Contract::deductible(0.6).unwrap()),
        (clustered(), Contract::three_piece(0.4, 2.0).unwrap()),
        (HawkesParams::new(1.5, 0.5, 3.0, ImpactSpec::Constant(1.2), lognormal).unwrap(), Contract::proportional(0.3).unwrap()),
        (HawkesParams::new(1.0, 1.0, 2.5, ImpactSpec::Linear(0.6), discrete).unwrap(), Contract::three_piece(0.3, 1.5).unwrap()),
        (HawkesParams::new(2.0, 0.8, 1.8, ImpactSpec::Linear(0.4), heavy).unwrap(), Contract::deductible(0.25).unwrap()),
    ];
    let econ = EconomicParams::new(4.0, 1.3, 1.8, 0.2, 1.5).unwrap();
    for (i, (params, contract)) in sets.iter().enumerate() {
        let mb = MomentBundle::new(params, econ.horizon).unwrap();
        let closed = criterion::utility_closed_form(contract, &econ, &mb, params.marks(), &params.impact()).unwrap();
        let mc = mc_estimate(contract, &econ, params, 100_000, 900 + i as u64).unwrap();
        let z = (mc.utility - closed.utility).abs() / mc.utility_se;
        assert!(z <= 3.0, "set {i}: mc {} closed {} se {} ({z:.2} SE)", mc.utility, closed.utility, mc.utility_se);
    }
}
