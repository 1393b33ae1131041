//! The regulator's problem: pick the allocation whose equilibrium price
//! minimizes firm costs plus convex penalties on the terminal emission drift
//! and on excess inflation.
//!
//! Every allocation with the same M̄₀ and no price volatility induces a
//! constant price x, and the problem reduces to minimizing the scalar social
//! cost
//!
//! s(x) = x²·NT(φ̄/2 + 1/(4λT)) + ℓ(μ̄_b + H̄ − φ̄x − θ) + φ(ιx − ν),
//!
//! with the emission deviation in tCO₂/y and the inflation deviation in %/y.
//! Constant terms that do not depend on x are dropped.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{allocation_for_price, AllocationProgram};
use crate::error::{require_positive, Error, Result};
use crate::inflation::{net_zero_price, CpiBasket};
use crate::model::{derive_aggregates, fraction_to_percent, EconomyParams};

/// A convex penalty supplied by the caller.
pub trait Penalty: Send + Sync {
    fn value(&self, z: f64) -> f64;
    fn right_derivative(&self, z: f64) -> f64;
    fn left_derivative(&self, z: f64) -> f64 {
        self.right_derivative(z - 1e-12 * z.abs().max(1.0))
    }
}

#[derive(Clone)]
pub struct ExternalPenalty(pub Arc<dyn Penalty>);

impl fmt::Debug for ExternalPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExternalPenalty")
    }
}

impl PartialEq for ExternalPenalty {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PenaltyFunction {
    /// y·z².
    Quadratic { weight: f64 },
    /// Continuous, zero at z = 0, slope `slopes[j]` between
    /// `breakpoints[j − 1]` and `breakpoints[j]`.
    PiecewiseLinear { breakpoints: Vec<f64>, slopes: Vec<f64> },
    #[serde(skip)]
    External(ExternalPenalty),
}

impl PenaltyFunction {
    pub fn quadratic(weight: f64) -> Self {
        Self::Quadratic { weight }
    }

    /// y·|z|.
    pub fn absolute(weight: f64) -> Self {
        Self::PiecewiseLinear {
            breakpoints: vec![0.0],
            slopes: vec![-weight, weight],
        }
    }

    pub fn external(penalty: impl Penalty + 'static) -> Self {
        Self::External(ExternalPenalty(Arc::new(penalty)))
    }

    pub fn quadratic_weight(&self) -> Option<f64> {
        match self {
            Self::Quadratic { weight } => Some(*weight),
            _ => None,
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            Self::Quadratic { weight } => weight * z * z,
            Self::PiecewiseLinear { breakpoints, slopes } => piecewise_integral(breakpoints, slopes, z),
            Self::External(p) => p.0.value(z),
        }
    }

    pub fn right_derivative(&self, z: f64) -> f64 {
        match self {
            Self::Quadratic { weight } => 2.0 * weight * z,
            Self::PiecewiseLinear { breakpoints, slopes } => slopes[breakpoints.partition_point(|&b| b <= z)],
            Self::External(p) => p.0.right_derivative(z),
        }
    }

    pub fn left_derivative(&self, z: f64) -> f64 {
        match self {
            Self::Quadratic { weight } => 2.0 * weight * z,
            Self::PiecewiseLinear { breakpoints, slopes } => slopes[breakpoints.partition_point(|&b| b < z)],
            Self::External(p) => p.0.left_derivative(z),
        }
    }

    /// Checks the structural invariants and, on `probe`, that the
    /// right-derivative never decreases.
    pub fn validate(&self, name: &str, probe: &[f64]) -> Result<()> {
        match self {
            Self::Quadratic { weight } => {
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(Error::invalid(name, format!("quadratic weight must be finite and >= 0, got {weight}")));
                }
            }
            Self::PiecewiseLinear { breakpoints, slopes } => {
                if slopes.len() != breakpoints.len() + 1 {
                    return Err(Error::invalid(name, "need exactly one more slope than breakpoints"));
                }
                if breakpoints.iter().chain(slopes).any(|v| !v.is_finite()) {
                    return Err(Error::invalid(name, "breakpoints and slopes must be finite"));
                }
                if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid(name, "breakpoints must increase"));
                }
                if let Some(j) = slopes.windows(2).position(|w| w[1] < w[0]) {
                    return Err(Error::NonConvex {
                        name: name.to_string(),
                        at: breakpoints[j],
                    });
                }
            }
            Self::External(_) => {
                let mut previous = f64::NEG_INFINITY;
                for &z in probe {
                    let d = self.right_derivative(z);
                    if !d.is_finite() {
                        return Err(Error::invalid(name, format!("right-derivative is not finite at {z}")));
                    }
                    if d < previous - 1e-12 * previous.abs().max(d.abs()) {
                        return Err(Error::NonConvex {
                            name: name.to_string(),
                            at: z,
                        });
                    }
                    previous = d;
                }
            }
        }
        Ok(())
    }
}

fn piecewise_integral(breakpoints: &[f64], slopes: &[f64], z: f64) -> f64 {
    // F(z) = ∫₀ᶻ slope(u) du
    let antiderivative = |x: f64| {
        let mut total = 0.0;
        let mut left = f64::NEG_INFINITY;
        for (j, &slope) in slopes.iter().enumerate() {
            let right = breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
            // overlap of [left, right] with [min(0, x), max(0, x)], signed
            let (lo, hi) = (left.max(x.min(0.0)), right.min(x.max(0.0)));
            if hi > lo {
                total += slope * (hi - lo);
            }
            left = right;
        }
        if x >= 0.0 {
            total
        } else {
            -total
        }
    };
    antiderivative(z)
}

/// Inputs of the regulator's problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSpec {
    /// ℓ, on the emission-drift deviation in tCO₂/y.
    pub emission_penalty: PenaltyFunction,
    /// φ, on the inflation deviation in %/y.
    pub inflation_penalty: PenaltyFunction,
    /// Target emission rate θ, tCO₂/y per firm.
    pub theta: f64,
    /// Acceptable inflation ν, fraction per year.
    pub nu: f64,
    pub n_firms: usize,
    pub horizon: f64,
    pub lambda: f64,
    pub mu_bar_b: f64,
    pub h_bar: f64,
    pub phi_bar: f64,
    /// Annual inflation per €/tCO₂, fraction per year.
    pub pass_through: f64,
    /// Basket value at laissez-faire prices, if known.
    pub pi_b: Option<f64>,
    /// Basket change per €/tCO₂, if known.
    pub omega_bar: Option<f64>,
}

impl RegulatorSpec {
    pub fn from_economy(
        economy: &EconomyParams,
        basket: &CpiBasket,
        emission_penalty: PenaltyFunction,
        inflation_penalty: PenaltyFunction,
        theta: f64,
        nu: f64,
    ) -> Result<Self> {
        let aggregates = derive_aggregates(economy)?;
        let spec = Self {
            emission_penalty,
            inflation_penalty,
            theta,
            nu,
            n_firms: economy.n_firms(),
            horizon: economy.horizon,
            lambda: economy.lambda,
            mu_bar_b: aggregates.mu_bar_b,
            h_bar: aggregates.h_bar,
            phi_bar: aggregates.phi_bar,
            pass_through: basket.pass_through(economy.horizon)?,
            pi_b: basket.pi_b.is_finite().then_some(basket.pi_b),
            omega_bar: basket.omega_bar.is_finite().then_some(basket.omega_bar),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_firms == 0 {
            return Err(Error::invalid("n_firms", "at least one firm is required"));
        }
        require_positive("horizon", self.horizon)?;
        require_positive("lambda", self.lambda)?;
        require_positive("phi_bar", self.phi_bar)?;
        for (name, v) in [
            ("theta", self.theta),
            ("nu", self.nu),
            ("mu_bar_b", self.mu_bar_b),
            ("h_bar", self.h_bar),
            ("pass_through", self.pass_through),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        let hi = 4.0 * self.reference_scale();
        let probe: Vec<f64> = (0..=200).map(|j| -hi + 2.0 * hi * j as f64 / 200.0).collect();
        let emission_probe: Vec<f64> = probe.iter().rev().map(|&x| self.emission_deviation(x)).collect();
        let inflation_probe: Vec<f64> = {
            let mut v: Vec<f64> = probe.iter().map(|&x| self.inflation_deviation(x)).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        self.emission_penalty.validate("emission_penalty", &emission_probe)?;
        self.inflation_penalty.validate("inflation_penalty", &inflation_probe)
    }

    /// Price scale used to seed brackets and probes.
    fn reference_scale(&self) -> f64 {
        let net_zero = (self.mu_bar_b + self.h_bar) / self.phi_bar;
        if net_zero.is_finite() && net_zero > 0.0 {
            net_zero
        } else {
            1.0
        }
    }

    /// μ̄_b + H̄ − φ̄x − θ, tCO₂/y.
    pub fn emission_deviation(&self, x: f64) -> f64 {
        self.mu_bar_b + self.h_bar - self.phi_bar * x - self.theta
    }

    /// ιx − ν in %/y.
    pub fn inflation_deviation(&self, x: f64) -> f64 {
        fraction_to_percent(self.pass_through * x - self.nu)
    }

    /// NT(φ̄/2 + 1/(4λT)): curvature of the aggregate firm cost in x.
    pub fn firm_cost_curvature(&self) -> f64 {
        self.n_firms as f64 * self.horizon * (0.5 * self.phi_bar + 1.0 / (4.0 * self.lambda * self.horizon))
    }

    pub fn net_zero_price(&self) -> Result<f64> {
        net_zero_price(self.mu_bar_b, self.h_bar, self.phi_bar)
    }

    /// Copy with both penalties replaced by quadratics.
    pub fn with_quadratic_weights(&self, y_mu: f64, y_pi: f64) -> Self {
        Self {
            emission_penalty: PenaltyFunction::quadratic(y_mu),
            inflation_penalty: PenaltyFunction::quadratic(y_pi),
            ..self.clone()
        }
    }

    /// s'₊(x).
    pub fn social_cost_right_derivative(&self, x: f64) -> f64 {
        let z_mu = self.emission_deviation(x);
        let z_pi = self.inflation_deviation(x);
        // z_mu decreases in x, so its right derivative uses ℓ's left derivative
        let emission = -self.phi_bar * self.emission_penalty.left_derivative(z_mu);
        let iota = fraction_to_percent(self.pass_through);
        let inflation = if iota >= 0.0 {
            iota * self.inflation_penalty.right_derivative(z_pi)
        } else {
            iota * self.inflation_penalty.left_derivative(z_pi)
        };
        2.0 * self.firm_cost_curvature() * x + emission + inflation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialCost {
    pub total: f64,
    pub firm_cost: f64,
    /// ℓ at the emission deviation.
    pub s_mu: f64,
    /// φ at the inflation deviation.
    pub s_pi: f64,
}

pub fn social_cost(spec: &RegulatorSpec, x: f64) -> SocialCost {
    let firm_cost = spec.firm_cost_curvature() * x * x;
    let s_mu = spec.emission_penalty.value(spec.emission_deviation(x));
    let s_pi = spec.inflation_penalty.value(spec.inflation_deviation(x));
    SocialCost {
        total: firm_cost + s_mu + s_pi,
        firm_cost,
        s_mu,
        s_pi,
    }
}

/// Minimizer of s when both penalties are quadratic.
pub fn closed_form_price(spec: &RegulatorSpec) -> Option<f64> {
    let y_mu = spec.emission_penalty.quadratic_weight()?;
    let y_pi = spec.inflation_penalty.quadratic_weight()?;
    let iota = fraction_to_percent(spec.pass_through);
    let nu = fraction_to_percent(spec.nu);
    let drift = spec.mu_bar_b + spec.h_bar - spec.theta;
    let numerator = spec.phi_bar * drift * y_mu + y_pi * iota * nu;
    let denominator = spec.firm_cost_curvature() + spec.phi_bar * spec.phi_bar * y_mu + iota * iota * y_pi;
    Some(numerator / denominator)
}

pub const MAX_DOUBLINGS: u32 = 60;

/// inf{x : s'₊(x) ≥ 0} by bisection on an expanding bracket.
pub fn bisect_price(spec: &RegulatorSpec) -> Result<f64> {
    let d = |x: f64| spec.social_cost_right_derivative(x);
    let mut lo = 0.0;
    let mut hi = 2.0 * spec.reference_scale();
    let mut doublings = 0;
    while d(hi) < 0.0 {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Bracket { lo, hi, doublings });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
    }
    let mut width = hi - lo;
    let mut down = 0;
    while d(lo) >= 0.0 {
        if down == MAX_DOUBLINGS {
            return Err(Error::Bracket { lo, hi, doublings: down });
        }
        hi = lo;
        lo -= width;
        width *= 2.0;
        down += 1;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    /// μ̄*_T = μ̄_b + H̄ − φ̄P*, tCO₂/y per firm.
    pub mu_star_t: f64,
    /// π̂_T = π_b + ω̄P*, when the basket is known.
    pub pi_hat_t: Option<f64>,
    /// î*_T = ιP*, fraction per year.
    pub i_star_t: f64,
}

pub fn equilibrium_outcomes(spec: &RegulatorSpec, p_star: f64) -> Outcomes {
    Outcomes {
        mu_star_t: spec.mu_bar_b + spec.h_bar - spec.phi_bar * p_star,
        pi_hat_t: spec.pi_b.zip(spec.omega_bar).map(|(pi, omega)| pi + omega * p_star),
        i_star_t: spec.pass_through * p_star,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatorSolution {
    pub p_star: f64,
    /// M̄*₀, tCO₂ per firm.
    pub m_bar_star_0: f64,
    pub outcomes: Outcomes,
    pub cost: SocialCost,
    pub method: Method,
}

pub fn minimize_social_cost(spec: &RegulatorSpec) -> Result<RegulatorSolution> {
    spec.validate()?;
    let (p_star, method) = match closed_form_price(spec) {
        Some(p) => (p, Method::ClosedForm),
        None => (bisect_price(spec)?, Method::Bisection),
    };
    Ok(RegulatorSolution {
        p_star,
        m_bar_star_0: optimal_allocation_level(spec, p_star),
        outcomes: equilibrium_outcomes(spec, p_star),
        cost: social_cost(spec, p_star),
        method,
    })
}

/// M̄*₀ = (μ̄_b + H̄)T − P*(1/(2λ) + φ̄T).
pub fn optimal_allocation_level(spec: &RegulatorSpec, p_star: f64) -> f64 {
    (spec.mu_bar_b + spec.h_bar) * spec.horizon - p_star * (1.0 / (2.0 * spec.lambda) + spec.phi_bar * spec.horizon)
}

/// Aⁱ* = M̄*₀ + σᵢWⁱ: the same up-front endowment for all firms and each
/// firm's emission shock absorbed as it occurs. The price stays at P*.
pub fn optimal_allocation(economy: &EconomyParams, p_star: f64) -> Result<AllocationProgram> {
    let aggregates = derive_aggregates(economy)?;
    let m_bar = allocation_for_price(&aggregates, p_star, economy.horizon, economy.lambda);
    Ok(AllocationProgram::neutralizing(economy, m_bar))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRecord {
    pub y_mu: f64,
    pub y_pi: f64,
    pub p_star: f64,
    pub s_mu: f64,
    pub s_pi: f64,
    /// s_π/(s_μ + s_π); `None` when both vanish.
    pub ratio: Option<f64>,
}

/// Share of the inflation penalty in the total penalty at the optimum, over
/// a grid of quadratic weights. Rows are ordered y_μ-major.
pub fn sweep_ratio_surface(spec: &RegulatorSpec, y_mu_grid: &[f64], y_pi_grid: &[f64]) -> Result<Vec<RatioRecord>> {
    for (name, grid) in [("y_mu_grid", y_mu_grid), ("y_pi_grid", y_pi_grid)] {
        if grid.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
            return Err(Error::invalid(name, "weights must be finite and >= 0"));
        }
    }
    let cells: Vec<(f64, f64)> = y_mu_grid
        .iter()
        .flat_map(|&m| y_pi_grid.iter().map(move |&p| (m, p)))
        .collect();
    cells
        .par_iter()
        .map(|&(y_mu, y_pi)| {
            let cell = spec.with_quadratic_weights(y_mu, y_pi);
            let p_star = closed_form_price(&cell).expect("quadratic penalties");
            let cost = social_cost(&cell, p_star);
            let total = cost.s_mu + cost.s_pi;
            Ok(RatioRecord {
                y_mu,
                y_pi,
                p_star,
                s_mu: cost.s_mu,
                s_pi: cost.s_pi,
                ratio: (total > 0.0).then(|| cost.s_pi / total),
            })
        })
        .collect()
}

/// A modification of the reference quadratic weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveVariation {
    ScaleEmissionWeight(f64),
    ScaleInflationWeight(f64),
}

impl CurveVariation {
    pub fn apply(&self, spec: &RegulatorSpec) -> Result<RegulatorSpec> {
        let (y_mu, y_pi) = spec
            .emission_penalty
            .quadratic_weight()
            .zip(spec.inflation_penalty.quadratic_weight())
            .ok_or_else(|| Error::invalid("variation", "weight scaling needs quadratic penalties"))?;
        Ok(match *self {
            Self::ScaleEmissionWeight(c) => spec.with_quadratic_weights(c * y_mu, y_pi),
            Self::ScaleInflationWeight(c) => spec.with_quadratic_weights(y_mu, c * y_pi),
        })
    }

    /// Short label such as `ymu/10` or `ypi*1e5`.
    pub fn label(&self) -> String {
        let (name, c) = match *self {
            Self::ScaleEmissionWeight(c) => ("ymu", c),
            Self::ScaleInflationWeight(c) => ("ypi", c),
        };
        if c < 1.0 && c > 0.0 {
            format!("{name}/{}", format_factor(1.0 / c))
        } else {
            format!("{name}*{}", format_factor(c))
        }
    }

    /// Parses `ymu/10`, `ypi*1e5`, `ymu*0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::invalid("variation", format!("expected ymu/<c>, ymu*<c>, ypi/<c> or ypi*<c>, got `{text}`"));
        let (name, rest) = text.split_at(text.find(['/', '*']).ok_or_else(bad)?);
        let (op, number) = rest.split_at(1);
        let c: f64 = number.trim().parse().map_err(|_| bad())?;
        if !(c.is_finite() && c > 0.0) {
            return Err(bad());
        }
        let factor = if op == "/" { 1.0 / c } else { c };
        match name.trim() {
            "ymu" => Ok(Self::ScaleEmissionWeight(factor)),
            "ypi" => Ok(Self::ScaleInflationWeight(factor)),
            _ => Err(bad()),
        }
    }
}

fn format_factor(c: f64) -> String {
    let rounded = c.round();
    if (c - rounded).abs() < 1e-9 * c.abs().max(1.0) {
        if rounded.abs() >= 1e4 {
            format!("{rounded:e}")
        } else {
            format!("{rounded}")
        }
    } else {
        format!("{c}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurves {
    pub x: Vec<f64>,
    pub reference: Vec<f64>,
    /// (label, s values on `x`).
    pub variants: Vec<(String, Vec<f64>)>,
}

impl CostCurves {
    pub fn argmin(values: &[f64], x: &[f64]) -> f64 {
        let (j, _) = values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (j, &v)| if v < best.1 { (j, v) } else { best });
        x[j]
    }
}

/// s(x) on `x_grid` for the reference spec and each variation.
pub fn sweep_cost_curves(spec: &RegulatorSpec, x_grid: &[f64], variations: &[CurveVariation]) -> Result<CostCurves> {
    if x_grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("x_grid", "must be finite"));
    }
    let curve = |s: &RegulatorSpec| x_grid.iter().map(|&x| social_cost(s, x).total).collect::<Vec<_>>();
    let variants = variations
        .iter()
        .map(|v| Ok((v.label(), curve(&v.apply(spec)?))))
        .collect::<Result<Vec<_>>>()?;
    Ok(CostCurves {
        x: x_grid.to_vec(),
        reference: curve(spec),
        variants,
    })
}
