//! Scenario documents: economy, allocation, regulator, basket, calibration
//! and simulation settings in one JSON file, plus named presets.
//!
//! Inflation quantities are written in %/y in files (`nu`, `omega_eff`) and
//! converted to fractions on load. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equilibrium::{allocation_for_price, AllocationProgram, LoadingPiece};
use crate::error::{Error, Result};
use crate::inflation::{basket_from_firms, net_zero_price, CpiBasket};
use crate::model::{derive_aggregates, percent_to_fraction, Aggregates, CalibrationInputs, EconomyParams, FirmParams};
use crate::regulator::{minimize_social_cost, optimal_allocation, PenaltyFunction, RegulatorSpec};
use crate::simulation::SimulationSettings;

pub const EU_NETZERO_2050: &str = "eu-netzero-2050";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomySection {
    pub horizon: f64,
    pub lambda: f64,
}

/// Volatility of the allocation martingales for level-based allocations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationVolatility {
    /// Each firm's emission shock is absorbed as it occurs.
    #[default]
    Neutralizing,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AllocationSpec {
    /// M̄₀ chosen so that P₀ equals the net-zero price.
    NetZero {
        #[serde(default)]
        volatility: AllocationVolatility,
    },
    /// The regulator's optimal allocation.
    Optimal,
    /// M̄₀ = fraction × (μ̄_b + H̄)T.
    FractionOfBau {
        fraction: f64,
        #[serde(default)]
        volatility: AllocationVolatility,
    },
    /// Same M̄₀ for every firm, tCO₂.
    Uniform {
        m_bar_0: f64,
        #[serde(default)]
        volatility: AllocationVolatility,
    },
    /// Explicit per-firm M₀ and loadings.
    Program {
        m0: Vec<f64>,
        #[serde(default)]
        loadings: Vec<LoadingPiece>,
    },
}

impl Default for AllocationSpec {
    fn default() -> Self {
        Self::NetZero {
            volatility: AllocationVolatility::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegulatorSection {
    pub emission_penalty: PenaltyFunction,
    pub inflation_penalty: PenaltyFunction,
    /// Target emission rate, tCO₂/y per firm.
    #[serde(default)]
    pub theta: f64,
    /// Acceptable inflation, %/y.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasketSection {
    /// Defaults to equal weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Overrides the basket value computed from the firms, €.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_b: Option<f64>,
    /// Calibrated pass-through, %/y per €/tCO₂.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_eff: Option<f64>,
}

/// A scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Named preset supplying every section not given explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Number of identical firms the preset totals are split over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_firms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub economy: Option<EconomySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firms: Option<Vec<FirmParams>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regulator: Option<RegulatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basket: Option<BasketSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Economy-wide totals of the reference net-zero scenario.
pub mod reference {
    pub const HORIZON: f64 = 25.0;
    /// tCO₂/y.
    pub const BAU_EMISSIONS: f64 = 1.5e9;
    /// tCO₂/y.
    pub const ABATEMENT_OFFSET: f64 = 1.5e8;
    /// tCO₂/(€·y).
    pub const PRICE_RESPONSE: f64 = 1.875e6;
    /// %/y per €/tCO₂.
    pub const PASS_THROUGH_PERCENT: f64 = 0.0075;
    /// €/(%/y)².
    pub const INFLATION_WEIGHT: f64 = 7.5e11;
    /// € per (tCO₂/y)².
    pub const EMISSION_WEIGHT: f64 = 1e-3;
    /// €/tCO₂².
    pub const LAMBDA: f64 = 1.25e-6;
    /// %/y.
    pub const ACCEPTABLE_INFLATION_PERCENT: f64 = 2.0;
    /// Emission volatility as a fraction of the BAU rate.
    pub const VOLATILITY_SHARE: f64 = 0.05;
    pub const COMMON_LOADING: f64 = 0.5;
}

/// A firm with BAU rate `mu`, abatement and production responses each
/// `response/2`, abatement offset `offset = hη`, and unit emission intensity.
pub fn firm_with_targets(mu: f64, response: f64, offset: f64, sigma: f64, s_loading: f64) -> FirmParams {
    let psi = 0.5 * response;
    let eta = 0.5 * response;
    // γ = 1 and b = δ make ψ = 1/(3b)
    let b = 1.0 / (3.0 * psi);
    FirmParams {
        a: 4.0 * b * mu,
        b,
        kappa: 2.0 * b * mu,
        delta: b,
        gamma: 1.0,
        sigma,
        h: offset / eta,
        eta,
        s_loading,
    }
}

fn eu_netzero(n_firms: usize) -> Result<ScenarioFile> {
    use reference::*;
    if n_firms == 0 {
        return Err(Error::invalid("n_firms", "must be at least 1"));
    }
    let n = n_firms as f64;
    let mu = BAU_EMISSIONS / n;
    let firm = firm_with_targets(
        mu,
        PRICE_RESPONSE / n,
        ABATEMENT_OFFSET / n,
        VOLATILITY_SHARE * mu,
        COMMON_LOADING,
    );
    Ok(ScenarioFile {
        name: Some(EU_NETZERO_2050.into()),
        preset: None,
        n_firms: None,
        economy: Some(EconomySection {
            horizon: HORIZON,
            lambda: LAMBDA,
        }),
        firms: Some(vec![firm; n_firms]),
        allocation: Some(AllocationSpec::default()),
        regulator: Some(RegulatorSection {
            // the penalty acts on the economy-wide drift N·(per-firm drift)
            emission_penalty: PenaltyFunction::quadratic(EMISSION_WEIGHT * n * n),
            inflation_penalty: PenaltyFunction::quadratic(INFLATION_WEIGHT),
            theta: 0.0,
            nu: ACCEPTABLE_INFLATION_PERCENT,
        }),
        basket: Some(BasketSection {
            weights: None,
            pi_b: None,
            omega_eff: Some(PASS_THROUGH_PERCENT),
        }),
        calibration: Some(CalibrationInputs {
            tax_level: 40.0,
            cumulative_reduction: 0.05,
            baseline_emissions: BAU_EMISSIONS,
            max_emission_discrepancy: 1e7,
            gdp: 1.5e13,
            inflation_gdp_elasticity: 1e-3,
            inflation_per_price: PASS_THROUGH_PERCENT,
            horizon: HORIZON,
        }),
        simulation: Some(SimulationSettings::default()),
        output_dir: None,
    })
}

fn small_firm(a: f64, kappa: f64, eta: f64, h: f64, sigma: f64, s: f64) -> FirmParams {
    FirmParams {
        a,
        b: 0.5,
        kappa,
        delta: 1.0,
        gamma: 1.0,
        sigma,
        h,
        eta,
        s_loading: s,
    }
}

fn small_scenario(name: &str, firms: Vec<FirmParams>, horizon: f64, lambda: f64) -> ScenarioFile {
    ScenarioFile {
        name: Some(name.into()),
        economy: Some(EconomySection { horizon, lambda }),
        firms: Some(firms),
        allocation: Some(AllocationSpec::FractionOfBau {
            fraction: 0.5,
            volatility: AllocationVolatility::None,
        }),
        regulator: Some(RegulatorSection {
            emission_penalty: PenaltyFunction::quadratic(5.0),
            inflation_penalty: PenaltyFunction::quadratic(1.0),
            theta: 0.5,
            nu: 1.0,
        }),
        basket: Some(BasketSection::default()),
        simulation: Some(SimulationSettings::default()),
        ..ScenarioFile::default()
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 5] = [
    EU_NETZERO_2050,
    "two-firm-symmetric",
    "heterogeneous-three",
    "common-shock",
    "short-horizon",
];

/// A named scenario. `n_firms` only affects `eu-netzero-2050`.
pub fn preset(name: &str, n_firms: Option<usize>) -> Result<ScenarioFile> {
    match name {
        EU_NETZERO_2050 => eu_netzero(n_firms.unwrap_or(1)),
        "two-firm-symmetric" => {
            let f = small_firm(10.0, 2.0, 2.0, 1.0, 0.6, 0.4);
            Ok(small_scenario(name, vec![f, f], 3.0, 0.4))
        }
        "heterogeneous-three" => Ok(small_scenario(
            name,
            vec![
                small_firm(10.0, 2.0, 2.0, 1.0, 0.5, 0.3),
                small_firm(14.0, 3.0, 1.0, 2.5, 0.9, -0.4),
                small_firm(8.0, 1.0, 3.5, 0.5, 0.3, 0.8),
            ],
            4.0,
            0.25,
        )),
        "common-shock" => {
            let f = small_firm(12.0, 2.0, 1.5, 1.0, 0.8, 0.95);
            let g = small_firm(9.0, 1.5, 2.5, 0.5, 0.4, 0.9);
            Ok(small_scenario(name, vec![f, g], 2.0, 1.0))
        }
        "short-horizon" => {
            let mut s = eu_netzero(2)?;
            s.name = Some(name.into());
            s.economy = Some(EconomySection {
                horizon: 5.0,
                lambda: reference::LAMBDA,
            });
            s.allocation = Some(AllocationSpec::FractionOfBau {
                fraction: 0.5,
                volatility: AllocationVolatility::None,
            });
            Ok(s)
        }
        other => Err(Error::Scenario(format!(
            "unknown preset `{other}`; known presets: {}",
            PRESETS.join(", ")
        ))),
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fills every missing section from the preset, if one is named.
    pub fn expand(self) -> Result<Self> {
        let Some(name) = self.preset.clone() else {
            if self.n_firms.is_some() {
                return Err(Error::invalid("n_firms", "only meaningful together with `preset`"));
            }
            return Ok(self);
        };
        let base = preset(&name, self.n_firms)?;
        Ok(Self {
            name: self.name.or(base.name),
            preset: None,
            n_firms: None,
            economy: self.economy.or(base.economy),
            firms: self.firms.or(base.firms),
            allocation: self.allocation.or(base.allocation),
            regulator: self.regulator.or(base.regulator),
            basket: self.basket.or(base.basket),
            calibration: self.calibration.or(base.calibration),
            simulation: self.simulation.or(base.simulation),
            output_dir: self.output_dir.or(base.output_dir),
        })
    }
}

/// A validated scenario ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub economy: EconomyParams,
    pub aggregates: Aggregates,
    pub allocation: AllocationSpec,
    pub regulator: Option<RegulatorSection>,
    pub basket: CpiBasket,
    pub calibration: Option<CalibrationInputs>,
    pub simulation: SimulationSettings,
    pub output_dir: Option<String>,
    /// sha256 of the expanded document, hex.
    pub hash: String,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::from_json(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str, n_firms: Option<usize>) -> Result<Self> {
        Self::from_file(preset(name, n_firms)?)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let file = file.expand()?;
        let hash = hex::encode(Sha256::digest(serde_json::to_vec(&file)?));
        let economy_section = file
            .economy
            .ok_or_else(|| Error::invalid("economy", "section is required (or name a preset)"))?;
        let firms = file
            .firms
            .ok_or_else(|| Error::invalid("firms", "section is required (or name a preset)"))?;
        let economy = EconomyParams::new(firms, economy_section.horizon, economy_section.lambda)?;
        let aggregates = derive_aggregates(&economy)?;
        let n = economy.n_firms();

        let basket_section = file.basket.unwrap_or_default();
        let weights = basket_section.weights.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let mut basket = basket_from_firms(&economy.firms, &weights)?;
        if let Some(pi_b) = basket_section.pi_b {
            crate::error::require_positive("basket.pi_b", pi_b)?;
            basket.pi_b = pi_b;
        }
        if let Some(omega) = basket_section.omega_eff {
            if !omega.is_finite() {
                return Err(Error::invalid("basket.omega_eff", "must be finite"));
            }
            basket.omega_eff = Some(percent_to_fraction(omega));
        }

        if let Some(reg) = &file.regulator {
            for (key, v) in [("regulator.theta", reg.theta), ("regulator.nu", reg.nu)] {
                if !v.is_finite() {
                    return Err(Error::invalid(key, "must be finite"));
                }
            }
        }
        if let Some(c) = &file.calibration {
            c.validate()?;
        }
        let simulation = file.simulation.unwrap_or_default();
        simulation.validate()?;

        let scenario = Self {
            name: file.name.unwrap_or_else(|| "scenario".into()),
            economy,
            aggregates,
            allocation: file.allocation.unwrap_or_default(),
            regulator: file.regulator,
            basket,
            calibration: file.calibration,
            simulation,
            output_dir: file.output_dir,
            hash,
        };
        scenario.regulator_spec().transpose()?;
        scenario.allocation_program()?;
        Ok(scenario)
    }

    /// The regulator problem, if the scenario has a regulator section.
    pub fn regulator_spec(&self) -> Option<Result<RegulatorSpec>> {
        self.regulator.as_ref().map(|reg| {
            RegulatorSpec::from_economy(
                &self.economy,
                &self.basket,
                reg.emission_penalty.clone(),
                reg.inflation_penalty.clone(),
                reg.theta,
                percent_to_fraction(reg.nu),
            )
        })
    }

    pub fn require_regulator(&self) -> Result<RegulatorSpec> {
        self.regulator_spec()
            .unwrap_or_else(|| Err(Error::invalid("regulator", "section is required for this command")))
    }

    pub fn net_zero_price(&self) -> Result<f64> {
        net_zero_price(self.aggregates.mu_bar_b, self.aggregates.h_bar, self.aggregates.phi_bar)
    }

    /// The allocation program the scenario asks for.
    pub fn allocation_program(&self) -> Result<AllocationProgram> {
        let e = &self.economy;
        let n = e.n_firms();
        let level = |m_bar: f64, volatility: AllocationVolatility| match volatility {
            AllocationVolatility::Neutralizing => AllocationProgram::neutralizing(e, m_bar),
            AllocationVolatility::None => AllocationProgram::uniform(n, m_bar),
        };
        let program = match &self.allocation {
            AllocationSpec::NetZero { volatility } => {
                let p = self.net_zero_price()?;
                level(allocation_for_price(&self.aggregates, p, e.horizon, e.lambda), *volatility)
            }
            AllocationSpec::Optimal => {
                let spec = self.require_regulator()?;
                optimal_allocation(e, minimize_social_cost(&spec)?.p_star)?
            }
            AllocationSpec::FractionOfBau { fraction, volatility } => {
                if !fraction.is_finite() {
                    return Err(Error::invalid("allocation.fraction", "must be finite"));
                }
                level(fraction * self.aggregates.zero_price_emission_rate() * e.horizon, *volatility)
            }
            AllocationSpec::Uniform { m_bar_0, volatility } => {
                if !m_bar_0.is_finite() {
                    return Err(Error::invalid("allocation.m_bar_0", "must be finite"));
                }
                level(*m_bar_0, *volatility)
            }
            AllocationSpec::Program { m0, loadings } => AllocationProgram {
                m0: m0.clone(),
                loadings: loadings.clone(),
            },
        };
        program.validate(n, e.horizon)?;
        Ok(program)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::initial_price;

    #[test]
    fn reference_preset_prices_at_net_zero() {
        for n in [1, 3, 10] {
            let s = Scenario::preset(EU_NETZERO_2050, Some(n)).unwrap();
            let agg = &s.aggregates;
            let n = n as f64;
            assert!((agg.mu_bar_b * n - 1.5e9).abs() < 1e-3);
            assert!((agg.h_bar * n - 1.5e8).abs() < 1e-3);
            assert!((agg.phi_bar * n - 1.875e6).abs() < 1e-6);
            let alloc = s.allocation_program().unwrap();
            let p0 = initial_price(agg, alloc.m_bar_0(), s.economy.horizon, s.economy.lambda);
            assert!((p0 - 880.0).abs() <= 1e-9 * 880.0, "{p0}");
        }
    }

    #[test]
    fn firm_targets_are_met() {
        let f = firm_with_targets(3.0, 4.0, 1.5, 0.1, 0.0);
        assert!((f.bau_emission_rate() - 3.0).abs() < 1e-12);
        assert!((f.psi() + f.eta - 4.0).abs() < 1e-12);
        assert!((f.h * f.eta - 1.5).abs() < 1e-12);
        f.validate(0).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = Scenario::from_json(r#"{"preset": "eu-netzero-2050", "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = Scenario::from_json(r#"{"preset": "eu-netzero-2050", "economy": {"horizon": 1, "lamda": 1}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn invalid_firm_values_name_the_field() {
        let text = r#"{
            "economy": {"horizon": 1, "lambda": 1},
            "firms": [{"a": 10, "b": 0.5, "kappa": 2, "delta": 0, "gamma": 1, "sigma": 0.1, "h": 1, "eta": 1, "s_loading": 0}]
        }"#;
        let err = Scenario::from_json(text).unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let a = Scenario::from_json(r#"{"preset":"eu-netzero-2050"}"#).unwrap();
        let b = Scenario::from_json("{ \"preset\" :\n \"eu-netzero-2050\" }").unwrap();
        let c = Scenario::from_json(r#"{"preset":"eu-netzero-2050","n_firms":2}"#).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn every_preset_loads() {
        for name in PRESETS {
            let s = Scenario::preset(name, None).unwrap();
            s.allocation_program().unwrap();
            s.require_regulator().unwrap();
        }
        assert!(Scenario::preset("nope", None).is_err());
    }

    #[test]
    fn overrides_replace_preset_sections() {
        let s = Scenario::from_json(
            r#"{"preset":"eu-netzero-2050","allocation":{"kind":"fraction-of-bau","fraction":0.5,"volatility":"none"},
                "simulation":{"steps":100,"paths":10}}"#,
        )
        .unwrap();
        assert_eq!(s.simulation.steps, 100);
        assert_eq!(s.simulation.seed, crate::simulation::DEFAULT_SEED);
        let alloc = s.allocation_program().unwrap();
        assert!(alloc.loadings.is_empty());
        assert!((alloc.m_bar_0() - 0.5 * 1.65e9 * 25.0).abs() < 1.0);
    }
}
