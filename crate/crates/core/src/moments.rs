//! First and second moments of the intensity and the variance coefficients
//! `A(T)`, `B(T)`.
//!
//! With `κ = β − H[f]` and `q = 2βλ̄ + H[f²]`, taking expectations in the
//! intensity dynamics gives the linear system
//! ```text
//! m'(t)   = βλ̄ − κ m(t),                  m(0)   = λ₀
//! m₂'(t)  = −2κ m₂(t) + q m(t),            m₂(0)  = λ₀²
//! ```
//! and
//! ```text
//! A(T) = 2 ∫₀ᵀ ∫₀ᵗ e^{−κ(t−s)} [βλ̄ M(s) + m₂(s)] ds dt − M(T)²
//! B(T) = 2 ∫₀ᵀ ∫₀ᵗ e^{−κ(t−s)} m(s) ds dt
//! ```
//! Every function involved is a finite sum of `c tᵏ e^{−jκt}` terms, so the
//! primary route solves each convolution exactly in that basis. The
//! [`quadrature_route`] module evaluates the same integrals numerically.

use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coef: f64,
    power: u32,
    /// The term decays like `e^{−decay·κ·t}`.
    decay: u32,
}

/// Exponential polynomial `Σ c tᵏ e^{−jκt}` with a fixed base rate κ ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPoly {
    kappa: f64,
    terms: Vec<Term>,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

impl ExpPoly {
    fn zero(kappa: f64) -> Self {
        Self { kappa, terms: Vec::new() }
    }

    fn term(kappa: f64, coef: f64, power: u32, decay: u32) -> Self {
        let mut p = Self::zero(kappa);
        p.push(coef, power, decay);
        p
    }

    fn push(&mut self, coef: f64, power: u32, decay: u32) {
        if coef == 0.0 {
            return;
        }
        // With κ = 0 every decay index describes the same function.
        let decay = if self.kappa == 0.0 { 0 } else { decay };
        match self.terms.iter_mut().find(|t| t.power == power && t.decay == decay) {
            Some(t) => t.coef += coef,
            None => self.terms.push(Term { coef, power, decay }),
        }
    }

    fn add(mut self, other: &ExpPoly) -> Self {
        for t in &other.terms {
            self.push(t.coef, t.power, t.decay);
        }
        self
    }

    fn scale(mut self, factor: f64) -> Self {
        for t in &mut self.terms {
            t.coef *= factor;
        }
        self
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let e = if term.decay == 0 {
                    1.0
                } else {
                    (-(term.decay as f64) * self.kappa * t).exp()
                };
                term.coef * t.powi(term.power as i32) * e
            })
            .sum()
    }

    /// Adds `c ∫₀ᵗ sᵏ e^{−ρs} ds`, multiplied by `e^{−shift·κ·t}`, where
    /// `ρ = (decay − shift)κ` may be negative.
    fn push_weighted_antiderivative(&mut self, coef: f64, power: u32, decay: u32, shift: u32) {
        let rho = (decay as f64 - shift as f64) * self.kappa;
        if rho == 0.0 {
            self.push(coef / f64::from(power + 1), power + 1, decay);
            return;
        }
        // ∫₀ᵗ sᵏ e^{−ρs} ds = k!/ρ^{k+1} [1 − e^{−ρt} Σ_{i≤k} (ρt)^i / i!]
        let k_fact = factorial(power);
        self.push(coef * k_fact / rho.powi(power as i32 + 1), 0, shift);
        for i in 0..=power {
            let c = coef * k_fact / (rho.powi((power + 1 - i) as i32) * factorial(i));
            self.push(-c, i, decay);
        }
    }

    /// `t ↦ ∫₀ᵗ p(s) ds`.
    pub fn integral(&self) -> ExpPoly {
        let mut out = Self::zero(self.kappa);
        for t in &self.terms {
            out.push_weighted_antiderivative(t.coef, t.power, t.decay, 0);
        }
        out
    }

    /// `t ↦ ∫₀ᵗ e^{−r κ (t−s)} p(s) ds`, the solution of `y' = −rκy + p`,
    /// `y(0) = 0`.
    pub fn convolve(&self, r: u32) -> ExpPoly {
        let mut out = Self::zero(self.kappa);
        for t in &self.terms {
            out.push_weighted_antiderivative(t.coef, t.power, t.decay, r);
        }
        out
    }
}

/// Deterministic moment functions for one parameter set and horizon.
#[derive(Debug, Clone)]
pub struct MomentBundle {
    params: HawkesParams,
    horizon: f64,
    kappa: f64,
    mean: ExpPoly,
    cumulative_mean: ExpPoly,
    second: ExpPoly,
    cumulative_second: ExpPoly,
    cumulative_mean_t: f64,
    cumulative_second_t: f64,
    a_t: f64,
    b_t: f64,
}

impl MomentBundle {
    pub fn new(params: &HawkesParams, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        let kappa = params.kappa();
        let beta_lbar = params.beta() * params.lambda_bar();
        let q = 2.0 * beta_lbar + params.impact().second_impact_moment(params.marks());
        let lambda0 = params.lambda0();

        let one = ExpPoly::term(kappa, 1.0, 0, 0);
        let mean = ExpPoly::term(kappa, lambda0, 0, 1).add(&one.convolve(1).scale(beta_lbar));
        let second = ExpPoly::term(kappa, lambda0 * lambda0, 0, 2).add(&mean.convolve(2).scale(q));
        let cumulative_mean = mean.integral();
        let cumulative_second = second.integral();

        let a_kernel = cumulative_mean.clone().scale(beta_lbar).add(&second);
        let a_double = a_kernel.convolve(1).integral();
        let b_double = mean.convolve(1).integral();

        let m_t = cumulative_mean.eval(horizon);
        // With a deterministic intensity A vanishes identically; the general
        // expression would only leave cancellation noise.
        let a_t = if params.is_poisson() {
            0.0
        } else {
            2.0 * a_double.eval(horizon) - m_t * m_t
        };
        let b_t = 2.0 * b_double.eval(horizon);

        Ok(Self {
            params: params.clone(),
            horizon,
            kappa,
            cumulative_mean_t: m_t,
            cumulative_second_t: cumulative_second.eval(horizon),
            mean,
            cumulative_mean,
            second,
            cumulative_second,
            a_t,
            b_t,
        })
    }

    pub fn params(&self) -> &HawkesParams {
        &self.params
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// m(t) = E[λ_t].
    pub fn mean_intensity(&self, t: f64) -> f64 {
        self.mean.eval(t)
    }

    /// m₂(t) = E[λ_t²].
    pub fn second_moment(&self, t: f64) -> f64 {
        self.second.eval(t)
    }

    /// M(t) = ∫₀ᵗ m.
    pub fn cumulative_mean(&self, t: f64) -> f64 {
        self.cumulative_mean.eval(t)
    }

    /// M₂(t) = ∫₀ᵗ m₂.
    pub fn cumulative_second(&self, t: f64) -> f64 {
        self.cumulative_second.eval(t)
    }

    pub fn m_t(&self) -> f64 {
        self.cumulative_mean_t
    }

    pub fn m2_t(&self) -> f64 {
        self.cumulative_second_t
    }

    pub fn a_t(&self) -> f64 {
        self.a_t
    }

    pub fn b_t(&self) -> f64 {
        self.b_t
    }

    /// Long-run mean intensity `βλ̄/κ` (λ₀ for the Poisson encoding).
    pub fn stationary_mean(&self) -> f64 {
        if self.kappa == 0.0 {
            self.params.lambda0()
        } else {
            self.params.beta() * self.params.lambda_bar() / self.kappa
        }
    }

    /// Limit of m₂(t): `λ∞² + λ∞ H[f²] / (2κ)`.
    pub fn stationary_second_moment(&self) -> f64 {
        let l = self.stationary_mean();
        if self.kappa == 0.0 {
            return l * l;
        }
        l * l + l * self.params.impact().second_impact_moment(self.params.marks()) / (2.0 * self.kappa)
    }
}

pub fn mean_intensity(params: &HawkesParams, t: f64) -> Result<f64> {
    Ok(MomentBundle::new(params, t.max(f64::MIN_POSITIVE))?.mean_intensity(t))
}

pub fn second_moment_intensity(params: &HawkesParams, t: f64) -> Result<f64> {
    Ok(MomentBundle::new(params, t.max(f64::MIN_POSITIVE))?.second_moment(t))
}

pub fn coefficient_a(params: &HawkesParams, horizon: f64) -> Result<f64> {
    Ok(MomentBundle::new(params, horizon)?.a_t())
}

pub fn coefficient_b(params: &HawkesParams, horizon: f64) -> Result<f64> {
    Ok(MomentBundle::new(params, horizon)?.b_t())
}

/// Direct numerical evaluation of the defining integrals, independent of the
/// exponential-polynomial algebra.
pub mod quadrature_route {
    use super::*;
    use crate::quadrature::{integrate, Tolerance};

    fn tol() -> Tolerance {
        Tolerance::new(1e-14, 1e-13)
    }

    fn integral<F: FnMut(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
        Ok(integrate(f, lo, hi, tol())?.value)
    }

    /// Variation of constants: `λ₀ e^{−κt} + βλ̄ ∫₀ᵗ e^{−κ(t−s)} ds`.
    pub fn mean_intensity(params: &HawkesParams, t: f64) -> Result<f64> {
        let kappa = params.kappa();
        let conv = integral(|s| (-kappa * (t - s)).exp(), 0.0, t)?;
        Ok(params.lambda0() * (-kappa * t).exp() + params.beta() * params.lambda_bar() * conv)
    }

    /// `λ₀² e^{−2κt} + q ∫₀ᵗ e^{−2κ(t−s)} m(s) ds`.
    pub fn second_moment(params: &HawkesParams, t: f64) -> Result<f64> {
        let kappa = params.kappa();
        let q = 2.0 * params.beta() * params.lambda_bar() + params.impact().second_impact_moment(params.marks());
        let mut err = None;
        let conv = integral(
            |s| match mean_intensity(params, s) {
                Ok(m) => (-2.0 * kappa * (t - s)).exp() * m,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            },
            0.0,
            t,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(params.lambda0().powi(2) * (-2.0 * kappa * t).exp() + q * conv?)
    }

    fn lift<F: Fn(f64) -> Result<f64>>(f: F) -> impl Fn(f64) -> f64 {
        move |x| f(x).unwrap_or(f64::NAN)
    }

    pub fn cumulative_mean(params: &HawkesParams, t: f64) -> Result<f64> {
        let v = integral(lift(|s| mean_intensity(params, s)), 0.0, t)?;
        finite(v)
    }

    fn finite(v: f64) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::QuadratureNonConvergence { lo: 0.0, hi: 0.0, error: f64::NAN, evaluations: 0 })
        }
    }

    /// `2 ∫₀ᵀ ∫₀ᵗ e^{−κ(t−s)} g(s) ds dt` by nested adaptive quadrature.
    fn double_convolution<G: Fn(f64) -> f64>(kappa: f64, g: G, horizon: f64) -> Result<f64> {
        let inner = |t: f64| {
            integral(|s| (-kappa * (t - s)).exp() * g(s), 0.0, t).unwrap_or(f64::NAN)
        };
        finite(2.0 * integral(inner, 0.0, horizon)?)
    }

    pub fn coefficient_b(params: &HawkesParams, horizon: f64) -> Result<f64> {
        double_convolution(params.kappa(), lift(|s| mean_intensity(params, s)), horizon)
    }

    pub fn coefficient_a(params: &HawkesParams, horizon: f64) -> Result<f64> {
        let beta_lbar = params.beta() * params.lambda_bar();
        let g = |s: f64| -> Result<f64> { Ok(beta_lbar * cumulative_mean(params, s)? + second_moment(params, s)?) };
        let double = double_convolution(params.kappa(), lift(g), horizon)?;
        let m_t = cumulative_mean(params, horizon)?;
        Ok(double - m_t * m_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marks::{ImpactSpec, MarkLaw};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn exp1() -> MarkLaw {
        MarkLaw::exponential(1.0).unwrap()
    }

    #[test]
    fn stationary_poisson_mean() {
        let p = HawkesParams::new(2.0, 2.0, 1.3, ImpactSpec::Constant(0.0), exp1()).unwrap();
        let mb = MomentBundle::new(&p, 4.0).unwrap();
        for t in [0.0, 0.5, 3.0, 4.0] {
            assert!(rel(mb.mean_intensity(t), 2.0) < 1e-14);
            assert!(rel(mb.second_moment(t), 4.0) < 1e-14);
        }
    }

    #[test]
    fn pure_decay_mean() {
        let p = HawkesParams::new(3.0, 1.0, 1.0, ImpactSpec::Constant(0.0), exp1()).unwrap();
        assert!(rel(mean_intensity(&p, 2f64.ln()).unwrap(), 2.0) < 1e-14);
    }

    #[test]
    fn linear_impact_long_run_level() {
        // κ = 2 − 0.5 = 1.5, λ∞ = 2·1/1.5.
        let p = HawkesParams::new(1.0, 1.0, 2.0, ImpactSpec::Linear(0.5), exp1()).unwrap();
        let mb = MomentBundle::new(&p, 5.0).unwrap();
        assert_eq!(mb.kappa(), 1.5);
        assert!(rel(mb.stationary_mean(), 4.0 / 3.0) < 1e-15);
        assert_eq!(mb.mean_intensity(0.0), 1.0);
        assert!(rel(mb.mean_intensity(40.0), 4.0 / 3.0) < 1e-14);
        // Stationary start keeps m constant.
        let s = HawkesParams::new(4.0 / 3.0, 1.0, 2.0, ImpactSpec::Linear(0.5), exp1()).unwrap();
        let ms = MomentBundle::new(&s, 5.0).unwrap();
        for t in [0.0, 1.0, 5.0] {
            assert!(rel(ms.mean_intensity(t), 4.0 / 3.0) < 1e-14);
        }
    }

    #[test]
    fn initial_conditions_and_variance_sign() {
        let p = HawkesParams::new(2.5, 1.0, 1.7, ImpactSpec::Linear(0.8), MarkLaw::lognormal(0.0, 0.5).unwrap()).unwrap();
        let mb = MomentBundle::new(&p, 6.0).unwrap();
        assert!(rel(mb.mean_intensity(0.0), 2.5) < 1e-14);
        assert!(rel(mb.second_moment(0.0), 6.25) < 1e-13);
        for k in 0..=60 {
            let t = 0.1 * k as f64;
            assert!(mb.second_moment(t) >= mb.mean_intensity(t).powi(2));
        }
        assert!(mb.b_t() >= 0.0);
        assert!(mb.a_t() + mb.m_t().powi(2) >= 0.0);
    }

    #[test]
    fn second_moment_tends_to_stationary_value() {
        let p = HawkesParams::new(1.0, 1.0, 2.0, ImpactSpec::Linear(0.5), exp1()).unwrap();
        let mb = MomentBundle::new(&p, 1.0).unwrap();
        let l = 4.0 / 3.0;
        let expected = l * l + l * 0.5 / 3.0;
        assert!(rel(mb.stationary_second_moment(), expected) < 1e-15);
        assert!(rel(mb.second_moment(60.0), expected) < 1e-13);
    }

    #[test]
    fn poisson_encoding() {
        let p = HawkesParams::poisson(2.0, exp1()).unwrap();
        let mb = MomentBundle::new(&p, 3.0).unwrap();
        assert_eq!(mb.m_t(), 6.0);
        assert!(mb.a_t().abs() < 1e-10);
        assert!(rel(mb.b_t(), 2.0 * 9.0) < 1e-15);
    }

    #[test]
    fn stationary_start_b_closed_form() {
        let p = HawkesParams::new(4.0 / 3.0, 1.0, 2.0, ImpactSpec::Linear(0.5), exp1()).unwrap();
        let t = 5.0;
        let mb = MomentBundle::new(&p, t).unwrap();
        let k = 1.5;
        let lp = 4.0 / 3.0;
        let expected = 2.0 * lp * (t / k - (1.0 - (-k * t).exp()) / (k * k));
        assert!(rel(mb.b_t(), expected) < 1e-13);
        assert!(rel(mb.m_t(), lp * t) < 1e-14);
    }

    #[test]
    fn routes_agree_on_one_instance() {
        let p = HawkesParams::new(1.8, 0.9, 1.4, ImpactSpec::Linear(0.6), MarkLaw::lognormal(-0.2, 0.6).unwrap()).unwrap();
        let t = 3.0;
        let mb = MomentBundle::new(&p, t).unwrap();
        assert!(rel(mb.mean_intensity(1.1), quadrature_route::mean_intensity(&p, 1.1).unwrap()) < 1e-11);
        assert!(rel(mb.second_moment(1.1), quadrature_route::second_moment(&p, 1.1).unwrap()) < 1e-11);
        assert!(rel(mb.m_t(), quadrature_route::cumulative_mean(&p, t).unwrap()) < 1e-11);
        assert!(rel(mb.b_t(), quadrature_route::coefficient_b(&p, t).unwrap()) < 1e-10);
        assert!(rel(mb.a_t(), quadrature_route::coefficient_a(&p, t).unwrap()) < 1e-8);
    }

    #[test]
    fn exp_poly_convolution_solves_ode() {
        // y' = -κ y + t e^{-κt}  ⇒  y = t² e^{-κt} / 2.
        let k = 0.7;
        let p = ExpPoly::term(k, 1.0, 1, 1).convolve(1);
        for t in [0.3, 1.0, 4.0] {
            assert!(rel(p.eval(t), 0.5 * t * t * (-k * t).exp()) < 1e-14);
        }
        // y' = -2κ y + 1 ⇒ y = (1 - e^{-2κt}) / (2κ).
        let q = ExpPoly::term(k, 1.0, 0, 0).convolve(2);
        assert!(rel(q.eval(1.5), (1.0 - (-2.0 * k * 1.5).exp()) / (2.0 * k)) < 1e-14);
    }
}
