//! Marked Hawkes loss process and its exact simulation.
//!
//! Intensity dynamics:
//! ```text
//! λ_t = λ₀ + β ∫₀ᵗ (λ̄ − λ_{s-}) ds + Σ_{T_i < t} f(Z_i)
//! ```
//! Events arrive with compensator `Θ(dz) λ_{t-} dt`. Between events λ decays
//! exponentially toward λ̄ and never increases, so the intensity just after
//! the last event (or rejected candidate) dominates the intensity until the
//! next one. The simulator thins a Poisson stream at that rate.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::marks::{ergodicity_margin, ImpactSpec, MarkLaw, MarkSampler};

pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct HawkesParams {
    lambda0: f64,
    lambda_bar: f64,
    beta: f64,
    impact: ImpactSpec,
    marks: MarkLaw,
}

impl HawkesParams {
    /// Requires `λ₀ ≥ λ̄ > 0` and `β − H[f] > 0`. The one exception is the
    /// Poisson encoding `β = 0`, `f ≡ 0`, `λ₀ = λ̄`, which is accepted as a
    /// constant-intensity process.
    pub fn new(lambda0: f64, lambda_bar: f64, beta: f64, impact: ImpactSpec, marks: MarkLaw) -> Result<Self> {
        if !(lambda_bar.is_finite() && lambda_bar > 0.0) {
            return Err(Error::param("lambda_bar", format!("must be finite and > 0, got {lambda_bar}")));
        }
        if !(lambda0.is_finite() && lambda0 >= lambda_bar) {
            return Err(Error::param(
                "lambda0",
                format!("must be finite and >= lambda_bar = {lambda_bar}, got {lambda0}"),
            ));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::param("beta", format!("must be finite and >= 0, got {beta}")));
        }
        impact.validate()?;
        let params = Self {
            lambda0,
            lambda_bar,
            beta,
            impact,
            marks,
        };
        if beta == 0.0 {
            if !impact.is_zero() || lambda0 != lambda_bar {
                return Err(Error::param(
                    "beta",
                    "beta = 0 is only valid for the Poisson encoding (zero impact, lambda0 = lambda_bar)",
                ));
            }
            return Ok(params);
        }
        let margin = params.ergodicity_margin();
        if margin <= 0.0 {
            return Err(Error::NotErgodic { margin });
        }
        Ok(params)
    }

    /// Homogeneous compound Poisson process with event rate `λ₀ · total_mass`.
    pub fn poisson(lambda0: f64, marks: MarkLaw) -> Result<Self> {
        Self::new(lambda0, lambda0, 0.0, ImpactSpec::Constant(0.0), marks)
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn impact(&self) -> ImpactSpec {
        self.impact
    }

    pub fn marks(&self) -> &MarkLaw {
        &self.marks
    }

    /// True for the zero-decay constant-intensity encoding.
    pub fn is_poisson(&self) -> bool {
        self.beta == 0.0
    }

    pub fn ergodicity_margin(&self) -> f64 {
        ergodicity_margin(&self.marks, &self.impact, self.beta)
    }

    /// Effective decay rate `κ = β − H[f]` (zero in the Poisson encoding).
    pub fn kappa(&self) -> f64 {
        if self.is_poisson() {
            0.0
        } else {
            self.ergodicity_margin()
        }
    }

    /// Intensity after decaying from `lambda` for `dt` without events.
    pub fn decay(&self, lambda: f64, dt: f64) -> f64 {
        if self.beta == 0.0 {
            lambda
        } else {
            self.lambda_bar + (lambda - self.lambda_bar) * (-self.beta * dt).exp()
        }
    }

    pub fn with_impact(&self, impact: ImpactSpec) -> Result<Self> {
        Self::new(self.lambda0, self.lambda_bar, self.beta, impact, self.marks.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub mark: f64,
    /// λ_{T_i+}, the intensity right after the jump.
    pub intensity_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventPath {
    pub horizon: f64,
    pub events: Vec<Event>,
    pub terminal_intensity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SimulationOptions {
    pub max_events: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// RNG for path `path_id` of a batch seeded with `seed`. Every path owns a
/// distinct ChaCha stream, so results do not depend on the thread schedule.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Runs the thinning algorithm on `[0, horizon]`, calling `on_event` for
/// every accepted event. Returns the event count and `λ_T`.
pub fn simulate_events<R, F>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
    sampler: &MarkSampler,
    options: SimulationOptions,
    mut on_event: F,
) -> Result<(usize, f64)>
where
    R: Rng + ?Sized,
    F: FnMut(Event),
{
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param("horizon", format!("must be finite and > 0, got {horizon}")));
    }
    let mass = params.marks.total_mass();
    let mut t = 0.0;
    let mut lambda = params.lambda0;
    let mut count = 0usize;
    loop {
        let bound = lambda * mass;
        let wait: f64 = rng.sample::<f64, _>(Exp1) / bound;
        let candidate = t + wait;
        if candidate > horizon {
            return Ok((count, params.decay(lambda, horizon - t)));
        }
        let decayed = params.decay(lambda, wait);
        let accept = params.is_poisson() || rng.random::<f64>() * lambda <= decayed;
        t = candidate;
        if accept {
            let mark = sampler.sample(rng);
            lambda = decayed + params.impact.eval(mark);
            count += 1;
            if count > options.max_events {
                return Err(Error::ClusterExplosion {
                    cap: options.max_events,
                    time: t,
                });
            }
            on_event(Event {
                time: t,
                mark,
                intensity_after: lambda,
            });
        } else {
            lambda = decayed;
        }
    }
}

/// One exact path; identical `(params, horizon, seed)` give identical paths.
/// Uses the same stream as path 0 of a batch with this seed.
pub fn simulate_path(params: &HawkesParams, horizon: f64, seed: u64) -> Result<EventPath> {
    simulate_path_with(params, horizon, &mut path_rng(seed, 0), &params.marks.sampler(), SimulationOptions::default())
}

pub fn simulate_path_with<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
    sampler: &MarkSampler,
    options: SimulationOptions,
) -> Result<EventPath> {
    let mut events = Vec::new();
    let (_, terminal_intensity) = simulate_events(params, horizon, rng, sampler, options, |e| events.push(e))?;
    Ok(EventPath {
        horizon,
        events,
        terminal_intensity,
    })
}

/// Simulates `n_paths` paths in parallel and maps each through `summarize`.
/// Output order is path-index order regardless of scheduling.
pub fn simulate_batch<T, F>(params: &HawkesParams, horizon: f64, seed: u64, n_paths: usize, summarize: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&EventPath) -> T + Sync,
{
    let sampler = params.marks.sampler();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let path = simulate_path_with(params, horizon, &mut rng, &sampler, SimulationOptions::default())?;
            Ok(summarize(&path))
        })
        .collect()
}

/// Left limit `λ_{t-}` reconstructed from the recorded events.
pub fn intensity_at(path: &EventPath, params: &HawkesParams, t: f64) -> Result<f64> {
    if !(0.0..=path.horizon).contains(&t) {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: path.horizon,
        });
    }
    let before = path.events.partition_point(|e| e.time < t);
    Ok(match before {
        0 => params.decay(params.lambda0, t),
        n => {
            let last = path.events[n - 1];
            params.decay(last.intensity_after, t - last.time)
        }
    })
}

/// Recomputes `λ_T` from λ₀ and the event list alone.
pub fn replay_terminal_intensity(path: &EventPath, params: &HawkesParams) -> f64 {
    let mut lambda = params.lambda0;
    let mut prev = 0.0;
    for e in &path.events {
        lambda = params.decay(lambda, e.time - prev) + params.impact.eval(e.mark);
        prev = e.time;
    }
    params.decay(lambda, path.horizon - prev)
}

pub const EVENT_CSV_HEADER: &str = "path_id,event_index,time,mark,intensity_after";

/// Appends one path's events as CSV rows (no header).
pub fn write_events_csv<W: Write>(out: &mut W, path_id: u64, path: &EventPath) -> io::Result<()> {
    for (i, e) in path.events.iter().enumerate() {
        writeln!(out, "{path_id},{i},{},{},{}", e.time, e.mark, e.intensity_after)?;
    }
    Ok(())
}
