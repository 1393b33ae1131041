//! Consumer price basket of the regulated goods and the inflation caused by
//! the permit price.
//!
//! Each good's price moves by bᵢγᵢ/(δᵢ + 2bᵢ) per €/tCO₂ of permit price,
//! so the basket moves by ω̄ = Σwᵢbᵢγᵢ/(δᵢ + 2bᵢ). Two routes turn a price
//! level into an annual inflation rate: the structural ω̄P₀/(Tπ_b), or a
//! calibrated pass-through that replaces it whenever it is supplied.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::model::FirmParams;

/// Largest accepted |Σwᵢ − 1|.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpiBasket {
    pub weights: Vec<f64>,
    /// Basket value at laissez-faire prices, €.
    pub pi_b: f64,
    /// Basket change per €/tCO₂ of permit price.
    pub omega_bar: f64,
    /// Calibrated annual inflation per €/tCO₂, as a fraction per year.
    pub omega_eff: Option<f64>,
}

impl CpiBasket {
    pub fn with_pass_through(mut self, omega_eff: f64) -> Self {
        self.omega_eff = Some(omega_eff);
        self
    }

    /// A basket known only through its calibrated pass-through.
    pub fn calibrated(omega_eff: f64) -> Self {
        Self {
            weights: Vec::new(),
            pi_b: f64::NAN,
            omega_bar: f64::NAN,
            omega_eff: Some(omega_eff),
        }
    }

    /// Annual inflation per €/tCO₂ of initial price, as a fraction per year.
    pub fn pass_through(&self, horizon: f64) -> Result<f64> {
        if let Some(omega) = self.omega_eff {
            if !omega.is_finite() {
                return Err(Error::invalid("omega_eff", "must be finite"));
            }
            return Ok(omega);
        }
        require_positive("horizon", horizon)?;
        if !(self.pi_b.is_finite() && self.pi_b > 0.0 && self.omega_bar.is_finite()) {
            return Err(Error::invalid(
                "basket",
                "needs either omega_eff or a positive pi_b with a finite omega_bar",
            ));
        }
        Ok(self.omega_bar / (horizon * self.pi_b))
    }
}

fn check_weights(weights: &[f64], n_firms: usize) -> Result<()> {
    if weights.len() != n_firms {
        return Err(Error::invalid(
            "weights",
            format!("expected {n_firms} weights, got {}", weights.len()),
        ));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0 && *w < 1.0 || *w == 1.0 && n_firms == 1)) {
        return Err(Error::invalid_firm("weights", i, "each weight must lie in (0, 1)"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::invalid("weights", format!("must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Builds the basket from the firms' goods: π_b = Σwᵢ(aᵢ − bᵢq̃ᵢ) and
/// ω̄ = Σwᵢbᵢγᵢ/(δᵢ + 2bᵢ).
pub fn basket_from_firms(firms: &[FirmParams], weights: &[f64]) -> Result<CpiBasket> {
    for (i, firm) in firms.iter().enumerate() {
        firm.validate(i)?;
    }
    check_weights(weights, firms.len())?;
    let pi_b = firms
        .iter()
        .zip(weights)
        .map(|(f, w)| w * f.inverse_demand(f.laissez_faire_quantity()))
        .sum();
    let omega_bar = firms
        .iter()
        .zip(weights)
        .map(|(f, w)| w * f.b * f.production_slope())
        .sum();
    Ok(CpiBasket {
        weights: weights.to_vec(),
        pi_b,
        omega_bar,
        omega_eff: None,
    })
}

/// Basket change ω̄P_T caused by the terminal permit price.
pub fn policy_cpi_adjustment(basket: &CpiBasket, terminal_price: f64) -> f64 {
    basket.omega_bar * terminal_price
}

/// Expected average inflation rate over the period, fraction per year.
pub fn average_inflation_rate(basket: &CpiBasket, p0: f64, horizon: f64) -> Result<f64> {
    Ok(basket.pass_through(horizon)? * p0)
}

/// Price that brings the average emission drift to zero, (μ̄_b + H̄)/φ̄.
pub fn net_zero_price(mu_bar_b: f64, h_bar: f64, phi_bar: f64) -> Result<f64> {
    require_positive("phi_bar", phi_bar)?;
    Ok((mu_bar_b + h_bar) / phi_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::percent_to_fraction;

    fn firm() -> FirmParams {
        FirmParams {
            a: 10.0,
            b: 1.0,
            kappa: 2.0,
            delta: 1.0,
            gamma: 1.0,
            sigma: 0.1,
            h: 1.0,
            eta: 1.0,
            s_loading: 0.0,
        }
    }

    #[test]
    fn laissez_faire_basket_value() {
        let basket = basket_from_firms(&[firm()], &[1.0]).unwrap();
        assert_eq!(basket.pi_b, 6.0);
        // b γ/(δ + 2b) = 1/3
        assert!((basket.omega_bar - 1.0 / 3.0).abs() < 1e-15);
        let two = basket_from_firms(&[firm(), firm()], &[0.3, 0.7]).unwrap();
        assert!((two.pi_b - 6.0).abs() < 1e-12);
    }

    #[test]
    fn bad_weights_are_rejected() {
        assert!(basket_from_firms(&[firm(), firm()], &[0.5, 0.6]).is_err());
        assert!(basket_from_firms(&[firm(), firm()], &[1.0]).is_err());
        assert!(basket_from_firms(&[firm(), firm()], &[1.5, -0.5]).is_err());
        let bad = FirmParams { delta: 0.0, ..firm() };
        assert!(basket_from_firms(&[bad], &[1.0]).is_err());
    }

    #[test]
    fn cpi_adjustment_examples() {
        let basket = CpiBasket {
            weights: vec![1.0],
            pi_b: 6.0,
            omega_bar: 0.01,
            omega_eff: None,
        };
        assert_eq!(policy_cpi_adjustment(&basket, 0.0), 0.0);
        assert!((policy_cpi_adjustment(&basket, 100.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn net_zero_inflation() {
        let basket = CpiBasket::calibrated(percent_to_fraction(0.0075));
        let rate = average_inflation_rate(&basket, 880.0, 25.0).unwrap();
        assert!((rate - 0.066).abs() < 1e-12);
        assert_eq!(average_inflation_rate(&basket, 0.0, 25.0).unwrap(), 0.0);
    }

    #[test]
    fn structural_and_calibrated_routes_agree() {
        let (t, pi_b) = (25.0, 6.0);
        let structural = CpiBasket {
            weights: vec![1.0],
            pi_b,
            omega_bar: percent_to_fraction(0.0075) * t * pi_b,
            omega_eff: None,
        };
        let calibrated = CpiBasket::calibrated(percent_to_fraction(0.0075));
        let a = average_inflation_rate(&structural, 880.0, t).unwrap();
        let b = average_inflation_rate(&calibrated, 880.0, t).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn missing_pass_through_is_an_error() {
        let basket = CpiBasket {
            weights: vec![],
            pi_b: f64::NAN,
            omega_bar: f64::NAN,
            omega_eff: None,
        };
        assert!(average_inflation_rate(&basket, 1.0, 1.0).is_err());
    }

    #[test]
    fn net_zero_price_examples() {
        assert_eq!(net_zero_price(1.5e9, 1.5e8, 1.875e6).unwrap(), 880.0);
        assert_eq!(net_zero_price(1.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(net_zero_price(1.0, 0.0, 0.0).is_err());
    }
}
