//! Firm and economy parameters, the aggregates every closed form is written
//! in, and the closed-form calibration recipes.
//!
//! Units are fixed across the crate: tonnes of CO₂, euros and years.
//! Inflation is a fraction per year internally; the `%/y` convention only
//! appears at I/O boundaries and in quadratic penalty weights (see
//! [`crate::regulator`]).

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// Percentage points per unit fraction.
pub const PERCENT: f64 = 100.0;

pub fn percent_to_fraction(percent: f64) -> f64 {
    percent / PERCENT
}

pub fn fraction_to_percent(fraction: f64) -> f64 {
    fraction * PERCENT
}

/// Constants of a single regulated firm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmParams {
    /// Base price of the good, €/unit.
    pub a: f64,
    /// Inverse-demand slope, €/unit².
    pub b: f64,
    /// Linear production cost, €/unit.
    pub kappa: f64,
    /// Quadratic production cost curvature, €/unit².
    pub delta: f64,
    /// Emission intensity, tCO₂/unit.
    pub gamma: f64,
    /// Emission volatility, tCO₂/√year.
    pub sigma: f64,
    /// Marginal abatement cost intercept, €/tCO₂.
    pub h: f64,
    /// Abatement slope, tCO₂²/(€·year).
    pub eta: f64,
    /// Loading on the common noise factor, in [-1, 1].
    pub s_loading: f64,
}

impl FirmParams {
    /// Checks the domain invariants; `index` is reported in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b),
            ("kappa", self.kappa),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("h", self.h),
            ("eta", self.eta),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid_firm(
                    name,
                    index,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        if self.kappa >= self.a {
            return Err(Error::invalid_firm(
                "kappa",
                index,
                format!("must be below the base price a = {}, got {}", self.a, self.kappa),
            ));
        }
        // Zero volatility is accepted so that noiseless scenarios can be run.
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid_firm(
                "sigma",
                index,
                format!("must be finite and >= 0, got {}", self.sigma),
            ));
        }
        if !(self.s_loading.is_finite() && self.s_loading.abs() <= 1.0) {
            return Err(Error::invalid_firm(
                "s_loading",
                index,
                format!("must lie in [-1, 1], got {}", self.s_loading),
            ));
        }
        Ok(())
    }

    /// Laissez-faire production q̃ = (a − κ)/(2b).
    pub fn laissez_faire_quantity(&self) -> f64 {
        (self.a - self.kappa) / (2.0 * self.b)
    }

    /// Production response to the permit price, γ/(δ + 2b).
    pub fn production_slope(&self) -> f64 {
        self.gamma / (self.delta + 2.0 * self.b)
    }

    /// ψ = γ²/(δ + 2b): emission reduction per €/tCO₂ through the production channel.
    pub fn psi(&self) -> f64 {
        self.gamma * self.production_slope()
    }

    /// Business-as-usual emission rate μ = γ q̃.
    pub fn bau_emission_rate(&self) -> f64 {
        self.gamma * self.laissez_faire_quantity()
    }

    /// Inverse demand S(q) = a − b q.
    pub fn inverse_demand(&self, q: f64) -> f64 {
        self.a - self.b * q
    }

    /// Production cost c(q) = κ(q − q̃) + δ/2 (q − q̃)².
    pub fn production_cost(&self, q: f64) -> f64 {
        let u = q - self.laissez_faire_quantity();
        self.kappa * u + 0.5 * self.delta * u * u
    }

    /// Abatement cost g(α) = h α + α²/(2η).
    pub fn abatement_cost(&self, alpha: f64) -> f64 {
        self.h * alpha + alpha * alpha / (2.0 * self.eta)
    }

    /// Common and idiosyncratic weights of W^i on (W̃⁰, W̃ⁱ).
    pub fn noise_weights(&self) -> (f64, f64) {
        let s = self.s_loading;
        (s, (1.0 - s * s).max(0.0).sqrt())
    }
}

/// The regulated economy over one compliance period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyParams {
    pub firms: Vec<FirmParams>,
    /// Compliance horizon T, years.
    pub horizon: f64,
    /// Terminal penalty weight λ, €/tCO₂².
    pub lambda: f64,
}

impl EconomyParams {
    pub fn new(firms: Vec<FirmParams>, horizon: f64, lambda: f64) -> Result<Self> {
        let economy = Self {
            firms,
            horizon,
            lambda,
        };
        economy.validate()?;
        Ok(economy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.firms.is_empty() {
            return Err(Error::invalid("firms", "at least one firm is required"));
        }
        require_positive("horizon", self.horizon)?;
        require_positive("lambda", self.lambda)?;
        for (i, firm) in self.firms.iter().enumerate() {
            firm.validate(i)?;
        }
        Ok(())
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }
}

/// Per-firm and economy-average quantities derived from the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// μᵢ = γᵢ q̃ᵢ, tCO₂/year.
    pub mu: Vec<f64>,
    /// ψᵢ = γᵢ²/(δᵢ + 2bᵢ).
    pub psi: Vec<f64>,
    /// μ̄_b, tCO₂/year per firm.
    pub mu_bar_b: f64,
    pub psi_bar: f64,
    pub eta_bar: f64,
    /// H̄ = mean hᵢηᵢ, tCO₂/year.
    pub h_bar: f64,
    /// φ̄ = η̄ + ψ̄, tCO₂/(€·year).
    pub phi_bar: f64,
    /// ρᵢⱼ = sᵢ sⱼ off the diagonal, 1 on it.
    pub rho: Vec<Vec<f64>>,
}

impl Aggregates {
    pub fn n_firms(&self) -> usize {
        self.mu.len()
    }

    /// μ̄_b + H̄: expected emission rate per firm at a zero permit price.
    pub fn zero_price_emission_rate(&self) -> f64 {
        self.mu_bar_b + self.h_bar
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// Computes every per-firm and averaged quantity of the economy.
pub fn derive_aggregates(economy: &EconomyParams) -> Result<Aggregates> {
    economy.validate()?;
    let firms = &economy.firms;
    let mu: Vec<f64> = firms.iter().map(FirmParams::bau_emission_rate).collect();
    let psi: Vec<f64> = firms.iter().map(FirmParams::psi).collect();
    let mu_bar_b = mean(mu.iter().copied());
    let psi_bar = mean(psi.iter().copied());
    let eta_bar = mean(firms.iter().map(|f| f.eta));
    let h_bar = mean(firms.iter().map(|f| f.h * f.eta));
    let rho = firms
        .iter()
        .enumerate()
        .map(|(i, fi)| {
            firms
                .iter()
                .enumerate()
                .map(|(j, fj)| if i == j { 1.0 } else { fi.s_loading * fj.s_loading })
                .collect()
        })
        .collect();
    Ok(Aggregates {
        mu,
        psi,
        mu_bar_b,
        psi_bar,
        eta_bar,
        h_bar,
        phi_bar: eta_bar + psi_bar,
        rho,
    })
}

/// Inputs of the closed-form calibration recipes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationInputs {
    /// Carbon tax level of the reference study, €/tCO₂.
    pub tax_level: f64,
    /// Cumulative emission reduction caused by that tax, as a fraction.
    pub cumulative_reduction: f64,
    /// Covered baseline emissions, tCO₂/year.
    pub baseline_emissions: f64,
    /// Largest tolerated miss of the emission goal, tCO₂.
    pub max_emission_discrepancy: f64,
    /// GDP, €.
    pub gdp: f64,
    /// GDP fraction lost per 1 %/y of excess inflation.
    pub inflation_gdp_elasticity: f64,
    /// Excess inflation per unit permit price, %/y per €/tCO₂.
    pub inflation_per_price: f64,
    /// Horizon, years.
    pub horizon: f64,
}

/// Output of [`CalibrationInputs::calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub phi_bar: f64,
    pub lambda: f64,
    /// €/(%/y)².
    pub y_pi: f64,
    /// Pass-through as a fraction/y per €/tCO₂.
    pub omega_eff: f64,
    pub horizon: f64,
}

impl CalibrationInputs {
    pub fn validate(&self) -> Result<()> {
        require_positive("tax_level", self.tax_level)?;
        require_positive("cumulative_reduction", self.cumulative_reduction)?;
        require_positive("baseline_emissions", self.baseline_emissions)?;
        require_positive("max_emission_discrepancy", self.max_emission_discrepancy)?;
        require_positive("gdp", self.gdp)?;
        require_positive("inflation_gdp_elasticity", self.inflation_gdp_elasticity)?;
        require_positive("inflation_per_price", self.inflation_per_price)?;
        require_positive("horizon", self.horizon)
    }

    pub fn calibrate(&self) -> Result<Calibration> {
        self.validate()?;
        Ok(Calibration {
            phi_bar: calibrate_phi(self.tax_level, self.cumulative_reduction, self.baseline_emissions)?,
            lambda: calibrate_lambda(self.max_emission_discrepancy)?,
            y_pi: calibrate_y_pi(self.gdp, self.inflation_gdp_elasticity)?,
            omega_eff: percent_to_fraction(self.inflation_per_price),
            horizon: self.horizon,
        })
    }
}

/// Price responsiveness of emissions from a tax study: a tax that cuts a
/// fraction of baseline emissions gives φ̄ = reduction × baseline ÷ tax.
pub fn calibrate_phi(tax_level: f64, cumulative_reduction: f64, baseline_emissions: f64) -> Result<f64> {
    require_positive("tax_level", tax_level)?;
    require_positive("cumulative_reduction", cumulative_reduction)?;
    require_positive("baseline_emissions", baseline_emissions)?;
    Ok(cumulative_reduction * baseline_emissions / tax_level)
}

/// Discrepancy at which the reference penalty weight is anchored, tCO₂.
pub const LAMBDA_ANCHOR_DISCREPANCY: f64 = 1.0e7;
/// Penalty weight at the anchor discrepancy, €/tCO₂².
pub const LAMBDA_AT_ANCHOR: f64 = 1.25e-6;

/// Terminal penalty weight, inversely proportional to the tolerated
/// discrepancy and anchored at 0.01 Gt ↦ 1.25e-6 €/t².
pub fn calibrate_lambda(max_emission_discrepancy: f64) -> Result<f64> {
    require_positive("max_emission_discrepancy", max_emission_discrepancy)?;
    Ok(LAMBDA_AT_ANCHOR * LAMBDA_ANCHOR_DISCREPANCY / max_emission_discrepancy)
}

/// Inflation penalty weight from the GDP cost of excess inflation: the
/// marginal cost 2 y_π (i − ν) at 1 %/y equals `elasticity × gdp`.
pub fn calibrate_y_pi(gdp: f64, inflation_gdp_elasticity: f64) -> Result<f64> {
    require_positive("gdp", gdp)?;
    require_positive("inflation_gdp_elasticity", inflation_gdp_elasticity)?;
    Ok(0.5 * inflation_gdp_elasticity * gdp)
}
