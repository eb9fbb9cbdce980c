//! Subcommands other than `validate`.

use std::io::Write;

use clusterre::criterion::{mc_estimate, utility_closed_form, Gradient};
use clusterre::hawkes::{simulate_batch, write_events_csv, EventPath, EVENT_CSV_HEADER};
use clusterre::optimizer::{poisson_limit_sweep, solve_three_piece};
use clusterre::sampling::SampleSummary;
use clusterre::{Contract, MarkLaw, MomentBundle};

use crate::config::ScenarioConfig;
use crate::contract_spec;
use crate::output::{num, CsvFile};
use crate::CliError;

pub fn check_lambda_grid(grid: &[f64]) -> Result<(), String> {
    if grid.is_empty() {
        return Err("must contain at least one value".into());
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(format!("values must be finite and > 0, got {v}"));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err("values must be strictly decreasing".into());
    }
    Ok(())
}

pub fn parse_lambda_grid(text: &str) -> Result<Vec<f64>, String> {
    let grid = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", s.trim())))
        .collect::<Result<Vec<_>, _>>()?;
    check_lambda_grid(&grid)?;
    Ok(grid)
}

/// Upper end of the z-grid used for contract dumps.
pub fn plot_range(law: &MarkLaw) -> f64 {
    match law.atoms() {
        Some(atoms) => atoms.last().map_or(1.0, |a| a.size.max(f64::MIN_POSITIVE)),
        None => 1.5 * law.quantile(0.999),
    }
}

pub fn simulate(cfg: &ScenarioConfig, paths: Option<usize>, seed: Option<u64>, dump_events: bool) -> Result<(), CliError> {
    let n = match paths {
        Some(n) => n,
        None => cfg.require(&cfg.run.n_paths, "n_paths", "simulate")?,
    };
    if n == 0 {
        return Err(CliError::Usage("--paths must be >= 1".into()));
    }
    let seed = match seed {
        Some(s) => s,
        None => cfg.require_seed("simulate")?,
    };
    let horizon = cfg.econ.horizon;
    let rows = simulate_batch(&cfg.params, horizon, seed, n, |p: &EventPath| {
        let total: f64 = p.events.iter().map(|e| e.mark).sum();
        let kept = dump_events.then(|| p.clone());
        (p.events.len(), total, p.terminal_intensity, kept)
    })?;

    let dir = &cfg.run.output_dir;
    let mut csv = CsvFile::create(dir, "simulate.csv", &cfg.hash, &["path_id", "n_events", "total_loss", "terminal_intensity"])?;
    for (i, (count, total, lam, _)) in rows.iter().enumerate() {
        csv.row(&[i.to_string(), count.to_string(), num(*total), num(*lam)])?;
    }
    csv.finish()?;
    if dump_events {
        let header: Vec<&str> = EVENT_CSV_HEADER.split(',').collect();
        let mut ev = CsvFile::create(dir, "events.csv", &cfg.hash, &header)?;
        for (i, (_, _, _, path)) in rows.iter().enumerate() {
            write_events_csv(ev.raw(), i as u64, path.as_ref().expect("kept when dumping"))?;
        }
        ev.finish()?;
    }

    let mb = MomentBundle::new(&cfg.params, horizon)?;
    let mass = cfg.params.marks().total_mass();
    println!("simulated {n} paths on [0, {horizon}] with seed {seed}");
    if n >= 2 {
        let counts: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
        let losses: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let c = SampleSummary::from_values(&counts);
        let l = SampleSummary::from_values(&losses);
        println!("{:<24}{:>18}{:>18}{:>14}", "quantity", "closed_form", "monte_carlo", "std_error");
        println!("{:<24}{:>18.10}{:>18.10}{:>14.3e}", "E[N_T]", mass * mb.m_t(), c.mean, c.mean_se);
        println!(
            "{:<24}{:>18.10}{:>18.10}{:>14.3e}",
            "E[L_T]",
            cfg.params.marks().theta_bar() * mb.m_t(),
            l.mean,
            l.mean_se
        );
    }
    Ok(())
}

pub fn moments(cfg: &ScenarioConfig, grid: Option<usize>) -> Result<(), CliError> {
    let n = match grid {
        Some(n) => n,
        None => cfg.require(&cfg.run.moment_grid, "moment_grid", "moments")?,
    };
    if n == 0 {
        return Err(CliError::Usage("--grid must be >= 1".into()));
    }
    let horizon = cfg.econ.horizon;
    let mb = MomentBundle::new(&cfg.params, horizon)?;
    let mut csv = CsvFile::create(&cfg.run.output_dir, "moments.csv", &cfg.hash, &["t", "m", "m2", "cumulative_m"])?;
    for i in 0..=n {
        let t = horizon * i as f64 / n as f64;
        csv.row(&[num(t), num(mb.mean_intensity(t)), num(mb.second_moment(t)), num(mb.cumulative_mean(t))])?;
    }
    csv.finish()?;
    let mut summary = CsvFile::create(&cfg.run.output_dir, "moments_summary.csv", &cfg.hash, &["M_T", "A_T", "B_T", "kappa"])?;
    summary.row(&[num(mb.m_t()), num(mb.a_t()), num(mb.b_t()), num(mb.kappa())])?;
    summary.finish()?;
    println!(
        "M_T = {:.12e}  A_T = {:.12e}  B_T = {:.12e}  kappa = {:.12e}",
        mb.m_t(),
        mb.a_t(),
        mb.b_t(),
        mb.kappa()
    );
    Ok(())
}

pub fn evaluate(cfg: &ScenarioConfig, contract: Option<&str>, paths: Option<usize>, seed: Option<u64>) -> Result<(), CliError> {
    let spec = match contract {
        Some(s) => s.to_string(),
        None => cfg.require(&cfg.run.contract, "contract", "evaluate")?,
    };
    let contract = contract_spec::parse(&spec).map_err(CliError::Usage)?;
    let law = cfg.params.marks();
    let impact = cfg.params.impact();
    let mb = MomentBundle::new(&cfg.params, cfg.econ.horizon)?;
    let report = utility_closed_form(&contract, &cfg.econ, &mb, law, &impact)?;

    let paths = paths.or(cfg.run.n_paths);
    let mc = match paths {
        Some(n) => {
            let seed = match seed {
                Some(s) => s,
                None => cfg.require_seed("evaluate")?,
            };
            Some(mc_estimate(&contract, &cfg.econ, &cfg.params, n, seed)?)
        }
        None => None,
    };

    let d = report.decomposition;
    type Row<'a> = (&'a str, f64, Option<(f64, f64)>);
    let mut rows: Vec<Row> = vec![
        ("base", d.base, None),
        ("retained_mean", d.retained_mean, None),
        ("claim_variance", d.claim_variance, None),
        ("cluster_variance", d.cluster_variance, None),
        ("feedback_variance", d.feedback_variance, None),
    ];
    rows.push(("mean", report.mean, mc.map(|m| (m.mean, m.mean_se))));
    rows.push(("variance", report.variance, mc.map(|m| (m.variance, m.variance_se))));
    rows.push(("utility", report.utility, mc.map(|m| (m.utility, m.utility_se))));

    let mut csv = CsvFile::create(&cfg.run.output_dir, "evaluate.csv", &cfg.hash, &["term", "closed_form", "mc_estimate", "se"])?;
    println!("contract: {}", contract_spec::describe(&contract));
    println!("{:<20}{:>22}{:>22}{:>14}", "term", "closed_form", "mc_estimate", "se");
    for (term, cf, mc) in &rows {
        let cf = cf + 0.0;
        let (m, s) = mc.map_or((String::new(), String::new()), |(m, s)| (num(m), num(s)));
        csv.row(&[term.to_string(), num(cf), m, s])?;
        match mc {
            Some((m, s)) => println!("{term:<20}{cf:>22.12e}{m:>22.12e}{s:>14.3e}"),
            None => println!("{term:<20}{cf:>22.12e}"),
        }
    }
    csv.finish()?;
    dump_contract(cfg, &contract, "contract.csv", None)?;
    Ok(())
}

fn dump_contract(cfg: &ScenarioConfig, contract: &Contract, name: &str, gradient: Option<&Gradient>) -> Result<(), CliError> {
    let law = cfg.params.marks();
    let z_max = plot_range(law);
    let header: &[&str] = if gradient.is_some() { &["z", "phi", "gradient"] } else { &["z", "phi"] };
    let mut csv = CsvFile::create(&cfg.run.output_dir, name, &cfg.hash, header)?;
    let n = 400;
    for i in 0..=n {
        let z = z_max * i as f64 / n as f64;
        let mut row = vec![num(z), num(contract.evaluate(z))];
        if let Some(g) = gradient {
            row.push(num(g.at(z)));
        }
        csv.row(&row)?;
    }
    csv.finish()?;
    Ok(())
}

pub fn optimize(cfg: &ScenarioConfig) -> Result<(), CliError> {
    let law = cfg.params.marks();
    let impact = cfg.params.impact();
    let mb = MomentBundle::new(&cfg.params, cfg.econ.horizon)?;
    let opt = solve_three_piece(&cfg.econ, &mb, law, &impact)?;
    let gradient = Gradient::from_stats(&opt.stats, &opt.contract, &cfg.econ, &mb, &impact);

    let rows: Vec<(&str, String)> = vec![
        ("a", num(opt.a)),
        ("b", num(opt.b)),
        ("slope", num(opt.slope)),
        ("slope_from_gradient", num(opt.slope_from_gradient)),
        ("c_star", num(opt.c_star)),
        ("utility", num(opt.report.utility)),
        ("mean", num(opt.report.mean)),
        ("variance", num(opt.report.variance)),
        ("expected_cover", num(opt.stats.h_cover)),
        ("residual_e1", num(opt.residuals.0)),
        ("residual_e2", num(opt.residuals.1)),
        ("residual_scale", num(opt.residual_scale)),
        ("max_gradient_below_a", num(opt.regions.max_below_a)),
        ("max_abs_gradient_between", num(opt.regions.max_abs_between)),
        ("min_gradient_above_b", num(opt.regions.min_above_b)),
        ("sign_pattern_holds", opt.regions.pattern_holds().to_string()),
    ];
    let mut csv = CsvFile::create(&cfg.run.output_dir, "optimize.csv", &cfg.hash, &["quantity", "value"])?;
    for (k, v) in &rows {
        csv.row(&[k.to_string(), v.clone()])?;
        println!("{k:<28}{v:>26}");
    }
    csv.finish()?;
    dump_contract(cfg, &opt.contract, "optimal_contract.csv", Some(&gradient))?;
    Ok(())
}

pub fn sweep(cfg: &ScenarioConfig, grid: Option<Vec<f64>>) -> Result<(), CliError> {
    let grid = match grid {
        Some(g) => g,
        None => cfg.require(&cfg.run.lambda_grid, "lambda_grid", "sweep")?,
    };
    let report = poisson_limit_sweep(&cfg.params, &cfg.econ, &grid, cfg.run.sweep_start, cfg.run.sweep_cover)?;
    let mut csv = CsvFile::create(
        &cfg.run.output_dir,
        "sweep.csv",
        &cfg.hash,
        &["lambda", "lambda_bar", "lambda0", "M_T", "gamma", "a", "b", "slope", "expected_cover", "cost", "utility", "status"],
    )?;
    println!(
        "{:>12}{:>14}{:>14}{:>14}{:>14}{:>16}{:>14}",
        "lambda", "lambda_bar", "gamma", "a", "b", "slope", "cost"
    );
    for row in &report.rows {
        let mut fields = vec![num(row.lambda), num(row.lambda_bar), num(row.lambda0), num(row.m_t)];
        match &row.outcome {
            Ok(s) => {
                fields.extend([s.gamma, s.a, s.b, s.slope, s.h_cover, s.cost, s.utility].map(num));
                fields.push("ok".into());
                println!(
                    "{:>12.4e}{:>14.6}{:>14.6}{:>14.6}{:>14.4e}{:>16.10}{:>14.6}",
                    row.lambda, row.lambda_bar, s.gamma, s.a, s.b, s.slope, s.cost
                );
            }
            Err(e) => {
                fields.extend(std::iter::repeat_n(String::new(), 7));
                fields.push(format!("\"{}\"", e.replace('"', "'")));
                println!("{:>12.4e}  failed: {e}", row.lambda);
            }
        }
        csv.row(&fields)?;
    }
    csv.finish()?;

    let mut summary = CsvFile::create(&cfg.run.output_dir, "sweep_summary.csv", &cfg.hash, &["check", "value"])?;
    let checks = [
        ("lambda_p", num(report.lambda_p)),
        ("slope_non_increasing", report.slope_non_increasing.to_string()),
        ("a_non_increasing", report.a_non_increasing.to_string()),
        ("b_non_decreasing", report.b_non_decreasing.to_string()),
        ("terminal_excess_slope", num(report.terminal_excess_slope)),
        ("count_invariance_error", num(report.count_invariance_error)),
        ("cost_within_band", report.cost_within_band.to_string()),
    ];
    for (k, v) in &checks {
        summary.row(&[k.to_string(), v.clone()])?;
        println!("{k:<26}{v}");
    }
    summary.finish()?;
    Ok(())
}

pub fn flush_stdout() {
    let _ = std::io::stdout().flush();
}
