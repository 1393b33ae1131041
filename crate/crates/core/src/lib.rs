//! Cap-and-trade market equilibrium: optimal firm compliance strategies, the
//! equilibrium permit price, carbon-price driven inflation and the
//! regulator's optimal allocation, with Monte Carlo and brute-force checks.

pub mod equilibrium;
pub mod error;
pub mod firm;
pub mod grid;
pub mod inflation;
pub mod model;
pub mod oracle;
pub mod regulator;
pub mod rng;
pub mod scenario;
pub mod simulation;
pub mod stats;

pub use equilibrium::{
    allocation_for_price, allocation_sensitivity, expected_terminal_emissions, initial_price, price_sensitivity,
    price_volatility_f, solve_equilibrium, AllocationProgram, EquilibriumSolution, LoadingPiece,
};
pub use error::{Error, Result};
pub use firm::{
    check_trade_integrability, cumulative_trade_path, evaluate_firm_objective, initial_trade_rate,
    laissez_faire_quantity, optimal_abatement, optimal_production, path_cost, ControlPath, FirmControls, FirmPath,
    IntegrabilityDiagnostic, IntegrabilityVerdict, PathCost, PathInputs, SignWarning, TradePath,
};
pub use grid::TimeGrid;
pub use inflation::{average_inflation_rate, basket_from_firms, net_zero_price, policy_cpi_adjustment, CpiBasket};
pub use model::{
    calibrate_lambda, calibrate_phi, calibrate_y_pi, derive_aggregates, Aggregates, Calibration, CalibrationInputs,
    EconomyParams, FirmParams,
};
pub use oracle::{
    clearing_and_martingale_check, foc_check, grid_minimize_s, jensen_dominance_check, VerificationReport,
};
pub use regulator::{
    equilibrium_outcomes, minimize_social_cost, optimal_allocation, social_cost, sweep_cost_curves,
    sweep_ratio_surface, CurveVariation, PenaltyFunction, RegulatorSolution, RegulatorSpec,
};
pub use scenario::{Scenario, ScenarioFile};
pub use simulation::{simulate, PathEnsemble, SimulatedPath, SimulationSettings};
pub use stats::{Estimate, RunningStats};
