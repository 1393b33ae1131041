//! Equilibrium permit price for a given allocation program, its
//! sensitivities, and the expected-emissions closed form.
//!
//! The price solves dP = f(t)(dW̄ − dM̄) with
//! f(t) = 2λ/(1 + 2λφ̄(T − t)) and P₀ = f(0)[(H̄ + μ̄_b)T − M̄₀],
//! where W̄ = (1/N)Σσᵢ Wⁱ and M̄ is the average allocation martingale.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::firm::FirmControls;
use crate::model::{derive_aggregates, Aggregates, EconomyParams};

/// Price volatility multiplier f(t) = 2λ/(1 + 2λφ̄(T − t)).
pub fn price_volatility_f(lambda: f64, phi_bar: f64, horizon: f64, t: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::invalid("t", format!("must lie in [0, {horizon}], got {t}")));
    }
    Ok(f_unchecked(lambda, phi_bar, horizon - t))
}

#[inline]
pub(crate) fn f_unchecked(lambda: f64, phi_bar: f64, remaining: f64) -> f64 {
    2.0 * lambda / (1.0 + 2.0 * lambda * phi_bar * remaining)
}

/// P₀ = f(0)[(H̄ + μ̄_b)T − M̄₀].
pub fn initial_price(aggregates: &Aggregates, m_bar_0: f64, horizon: f64, lambda: f64) -> f64 {
    f_unchecked(lambda, aggregates.phi_bar, horizon) * (aggregates.zero_price_emission_rate() * horizon - m_bar_0)
}

/// Expected average allocation M̄₀ that makes the initial price equal `price`.
pub fn allocation_for_price(aggregates: &Aggregates, price: f64, horizon: f64, lambda: f64) -> f64 {
    aggregates.zero_price_emission_rate() * horizon - price * (1.0 / (2.0 * lambda) + aggregates.phi_bar * horizon)
}

/// 2λφ̄T/(1 + 2λφ̄T): weight of the allocation in expected emissions.
pub fn allocation_sensitivity(lambda: f64, phi_bar: f64, horizon: f64) -> Result<f64> {
    require_positive("lambda", lambda)?;
    require_positive("phi_bar", phi_bar)?;
    require_positive("horizon", horizon)?;
    let c = 2.0 * lambda * phi_bar * horizon;
    Ok(c / (1.0 + c))
}

/// 2λ/(1 + 2λφ̄T): fall of P₀ per tonne added to M̄₀.
pub fn price_sensitivity(lambda: f64, phi_bar: f64, horizon: f64) -> Result<f64> {
    require_positive("lambda", lambda)?;
    require_positive("phi_bar", phi_bar)?;
    require_positive("horizon", horizon)?;
    Ok(f_unchecked(lambda, phi_bar, horizon))
}

/// Expected terminal emission rate per firm, E[E_T]/(NT) = μ̄_b + H̄ − φ̄P₀.
pub fn expected_terminal_emissions(aggregates: &Aggregates, m_bar_0: f64, horizon: f64, lambda: f64) -> f64 {
    let p0 = initial_price(aggregates, m_bar_0, horizon, lambda);
    aggregates.zero_price_emission_rate() - aggregates.phi_bar * p0
}

/// Piecewise-constant loadings of the allocation martingales on the
/// Brownian motions (W̃⁰, W̃¹, …, W̃ᴺ), active from `start` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingPiece {
    pub start: f64,
    /// N rows (firms) by N + 1 columns (common factor first).
    pub matrix: Vec<Vec<f64>>,
}

/// Expected cumulative allocation of each firm plus the volatility of the
/// allocation martingales Mⁱ_t = E_t[Aⁱ_T].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationProgram {
    /// Mⁱ₀ per firm, tCO₂.
    pub m0: Vec<f64>,
    /// Sorted by start; the first piece starts at 0. Empty means deterministic.
    #[serde(default)]
    pub loadings: Vec<LoadingPiece>,
}

impl AllocationProgram {
    /// Deterministic allocation: Mⁱ ≡ Mⁱ₀.
    pub fn deterministic(m0: Vec<f64>) -> Self {
        Self {
            m0,
            loadings: Vec::new(),
        }
    }

    /// Same expected allocation M̄₀ for everyone, no volatility.
    pub fn uniform(n_firms: usize, m_bar_0: f64) -> Self {
        Self::deterministic(vec![m_bar_0; n_firms])
    }

    /// Aⁱ_t = M̄₀ + σᵢWⁱ_t: the same up-front endowment for every firm, with
    /// each firm's emission shock neutralised as it occurs. Then dM̄ = dW̄.
    pub fn neutralizing(economy: &EconomyParams, m_bar_0: f64) -> Self {
        let n = economy.n_firms();
        let matrix = economy
            .firms
            .iter()
            .enumerate()
            .map(|(i, firm)| {
                let (common, own) = firm.noise_weights();
                let mut row = vec![0.0; n + 1];
                row[0] = firm.sigma * common;
                row[i + 1] = firm.sigma * own;
                row
            })
            .collect();
        Self {
            m0: vec![m_bar_0; n],
            loadings: vec![LoadingPiece { start: 0.0, matrix }],
        }
    }

    /// Adds `extra` loadings on top of the existing ones.
    pub fn with_extra_loadings(mut self, extra: &[LoadingPiece]) -> Self {
        let n = self.m0.len();
        let mut starts: Vec<f64> = self.loadings.iter().chain(extra).map(|p| p.start).collect();
        starts.push(0.0);
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let pieces = starts
            .iter()
            .map(|&start| {
                let mut matrix = vec![vec![0.0; n + 1]; n];
                for source in [&self.loadings[..], extra] {
                    if let Some(piece) = active_piece(source, start) {
                        for (row, add) in matrix.iter_mut().zip(&piece.matrix) {
                            for (x, a) in row.iter_mut().zip(add) {
                                *x += a;
                            }
                        }
                    }
                }
                LoadingPiece { start, matrix }
            })
            .collect();
        self.loadings = pieces;
        self
    }

    pub fn n_firms(&self) -> usize {
        self.m0.len()
    }

    /// M̄₀, the expected average cumulative allocation.
    pub fn m_bar_0(&self) -> f64 {
        self.m0.iter().sum::<f64>() / self.m0.len() as f64
    }

    pub fn validate(&self, n_firms: usize, horizon: f64) -> Result<()> {
        if self.m0.len() != n_firms {
            return Err(Error::invalid(
                "allocation.m0",
                format!("expected {n_firms} entries, got {}", self.m0.len()),
            ));
        }
        if let Some(i) = self.m0.iter().position(|m| !m.is_finite()) {
            return Err(Error::invalid_firm("allocation.m0", i, "must be finite"));
        }
        let mut previous = f64::NEG_INFINITY;
        for (j, piece) in self.loadings.iter().enumerate() {
            if j == 0 && piece.start != 0.0 {
                return Err(Error::invalid("allocation.loadings", "the first piece must start at 0"));
            }
            if !(piece.start > previous && piece.start < horizon) {
                return Err(Error::invalid(
                    "allocation.loadings",
                    format!("piece {j} starts at {}; starts must increase within [0, T)", piece.start),
                ));
            }
            previous = piece.start;
            if piece.matrix.len() != n_firms || piece.matrix.iter().any(|r| r.len() != n_firms + 1) {
                return Err(Error::invalid(
                    "allocation.loadings",
                    format!("piece {j} must be {n_firms} x {}", n_firms + 1),
                ));
            }
            if piece.matrix.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::invalid("allocation.loadings", format!("piece {j} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Loadings active on the interval starting at `t`, if any.
    pub fn loadings_at(&self, t: f64) -> Option<&[Vec<f64>]> {
        active_piece(&self.loadings, t).map(|p| p.matrix.as_slice())
    }
}

fn active_piece(pieces: &[LoadingPiece], t: f64) -> Option<&LoadingPiece> {
    // tolerate grid nodes that land a rounding error below a breakpoint
    let eps = 1e-12 * t.abs().max(1.0);
    pieces.iter().rev().find(|p| p.start <= t + eps)
}

/// Closed-form equilibrium for an allocation program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub p0: f64,
    pub m_bar_0: f64,
    pub lambda: f64,
    pub phi_bar: f64,
    pub horizon: f64,
    pub allocation_sensitivity: f64,
    pub price_sensitivity: f64,
    /// E[E_T]/(NT), tCO₂/year per firm.
    pub expected_emission_rate: f64,
    pub controls: Vec<FirmControls>,
}

impl EquilibriumSolution {
    pub fn f(&self, t: f64) -> Result<f64> {
        price_volatility_f(self.lambda, self.phi_bar, self.horizon, t)
    }

    /// (t, f(t)) at `count` evenly spaced times including both ends.
    pub fn f_samples(&self, count: usize) -> Vec<(f64, f64)> {
        let count = count.max(2);
        (0..count)
            .map(|j| {
                let t = self.horizon * j as f64 / (count - 1) as f64;
                (t, f_unchecked(self.lambda, self.phi_bar, self.horizon - t))
            })
            .collect()
    }
}

pub fn solve_equilibrium(economy: &EconomyParams, allocation: &AllocationProgram) -> Result<EquilibriumSolution> {
    let aggregates = derive_aggregates(economy)?;
    allocation.validate(economy.n_firms(), economy.horizon)?;
    let (horizon, lambda) = (economy.horizon, economy.lambda);
    let m_bar_0 = allocation.m_bar_0();
    let p0 = initial_price(&aggregates, m_bar_0, horizon, lambda);
    let controls = economy
        .firms
        .iter()
        .zip(&allocation.m0)
        .map(|(firm, &m0)| FirmControls::new(firm, p0, m0, horizon, lambda))
        .collect();
    Ok(EquilibriumSolution {
        p0,
        m_bar_0,
        lambda,
        phi_bar: aggregates.phi_bar,
        horizon,
        allocation_sensitivity: allocation_sensitivity(lambda, aggregates.phi_bar, horizon)?,
        price_sensitivity: price_sensitivity(lambda, aggregates.phi_bar, horizon)?,
        expected_emission_rate: aggregates.zero_price_emission_rate() - aggregates.phi_bar * p0,
        controls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FirmParams;

    fn economy() -> EconomyParams {
        let firm = FirmParams {
            a: 10.0,
            b: 0.5,
            kappa: 2.0,
            delta: 1.0,
            gamma: 1.0,
            sigma: 0.3,
            h: 1.0,
            eta: 2.0,
            s_loading: 0.5,
        };
        let other = FirmParams {
            sigma: 0.5,
            s_loading: -0.3,
            eta: 1.0,
            ..firm
        };
        EconomyParams::new(vec![firm, other], 4.0, 0.2).unwrap()
    }

    #[test]
    fn f_at_horizon_is_two_lambda() {
        assert_eq!(price_volatility_f(0.3, 5.0, 2.0, 2.0).unwrap(), 0.6);
        assert!(price_volatility_f(0.3, 5.0, 2.0, 2.5).is_err());
        assert!(price_volatility_f(0.3, 5.0, 2.0, -0.1).is_err());
    }

    #[test]
    fn f_large_lambda_limit() {
        let (phi, t_rem) = (2.0, 0.5);
        let f = price_volatility_f(1e12, phi, 1.0, 1.0 - t_rem).unwrap();
        assert!((f - 1.0 / (phi * t_rem)).abs() < 1e-9);
    }

    #[test]
    fn price_is_zero_when_cap_equals_adjusted_bau() {
        let e = economy();
        let agg = derive_aggregates(&e).unwrap();
        let m = agg.zero_price_emission_rate() * e.horizon;
        assert_eq!(initial_price(&agg, m, e.horizon, e.lambda), 0.0);
        assert_eq!(expected_terminal_emissions(&agg, m, e.horizon, e.lambda), agg.zero_price_emission_rate());
    }

    #[test]
    fn allocation_for_price_round_trips() {
        let e = economy();
        let agg = derive_aggregates(&e).unwrap();
        for p in [0.0, 1.5, 37.0, -4.0] {
            let m = allocation_for_price(&agg, p, e.horizon, e.lambda);
            let back = initial_price(&agg, m, e.horizon, e.lambda);
            assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn sensitivity_limits_and_monotonicity() {
        assert!(allocation_sensitivity(1.0, 1.0, 1e-12).unwrap() < 1e-11);
        let base = allocation_sensitivity(1.25e-6, 1.875e6, 10.0).unwrap();
        assert!(allocation_sensitivity(2.5e-6, 1.875e6, 10.0).unwrap() > base);
        assert!(allocation_sensitivity(1.25e-6, 1.875e6, 11.0).unwrap() > base);
        let limit = price_sensitivity(1e15, 2.0, 3.0).unwrap();
        assert!((limit - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn neutralizing_allocation_matches_the_average_shock() {
        let e = economy();
        let alloc = AllocationProgram::neutralizing(&e, 3.0);
        alloc.validate(2, e.horizon).unwrap();
        let m = alloc.loadings_at(1.0).unwrap();
        // row i reproduces σᵢ(sᵢ, √(1 − sᵢ²)) on (W̃⁰, W̃ⁱ)
        assert!((m[0][0] - 0.3 * 0.5).abs() < 1e-15);
        assert!((m[1][2] - 0.5 * (1.0 - 0.09f64).sqrt()).abs() < 1e-15);
        assert_eq!(m[0][2], 0.0);
    }

    #[test]
    fn extra_loadings_are_added_piecewise() {
        let e = economy();
        let extra = vec![
            LoadingPiece {
                start: 0.0,
                matrix: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            },
            LoadingPiece {
                start: 2.0,
                matrix: vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 2.0]],
            },
        ];
        let alloc = AllocationProgram::neutralizing(&e, 0.0).with_extra_loadings(&extra);
        alloc.validate(2, e.horizon).unwrap();
        assert!((alloc.loadings_at(1.0).unwrap()[0][0] - (0.15 + 1.0)).abs() < 1e-15);
        assert!((alloc.loadings_at(2.5).unwrap()[0][0] - 0.15).abs() < 1e-15);
        assert!((alloc.loadings_at(2.5).unwrap()[1][2] - (0.5 * 0.91f64.sqrt() + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn malformed_allocations_are_rejected() {
        let e = economy();
        assert!(AllocationProgram::uniform(3, 0.0).validate(2, e.horizon).is_err());
        let late = AllocationProgram {
            m0: vec![0.0; 2],
            loadings: vec![LoadingPiece {
                start: 1.0,
                matrix: vec![vec![0.0; 3]; 2],
            }],
        };
        assert!(late.validate(2, e.horizon).is_err());
    }

    #[test]
    fn solution_controls_start_from_b0_over_t() {
        let e = economy();
        let alloc = AllocationProgram::uniform(2, 5.0);
        let sol = solve_equilibrium(&e, &alloc).unwrap();
        // market clears at t = 0
        let total: f64 = sol.controls.iter().map(|c| c.beta0).sum();
        assert!(total.abs() < 1e-12, "{total}");
        let samples = sol.f_samples(5);
        assert_eq!(samples.len(), 5);
        assert_eq!(samples[4].1, 2.0 * e.lambda);
    }
}
