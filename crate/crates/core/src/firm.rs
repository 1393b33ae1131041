//! A single firm facing a given permit price: the laissez-faire benchmark,
//! the optimal production/abatement/trading rules, and a pathwise evaluator
//! of the firm's expected cost used by the verification oracles.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::grid::TimeGrid;
use crate::model::FirmParams;
use crate::stats::{Estimate, RunningStats};

/// Laissez-faire (monopoly) production (a − κ)/(2b).
pub fn laissez_faire_quantity(a: f64, b: f64, kappa: f64) -> Result<f64> {
    require_positive("a", a)?;
    require_positive("b", b)?;
    require_positive("kappa", kappa)?;
    if kappa >= a {
        return Err(Error::invalid(
            "kappa",
            format!("must be below a = {a} for a positive laissez-faire quantity, got {kappa}"),
        ));
    }
    Ok((a - kappa) / (2.0 * b))
}

/// Optimal production q̂ = q̃ − γP/(δ + 2b). May be negative for large prices.
pub fn optimal_production(firm: &FirmParams, price: f64) -> f64 {
    firm.laissez_faire_quantity() - firm.production_slope() * price
}

/// Optimal abatement α̂ = η(P − h). Negative below the abatement threshold h.
pub fn optimal_abatement(firm: &FirmParams, price: f64) -> f64 {
    firm.eta * (price - firm.h)
}

/// Trade rate at time zero:
/// β̂₀ = γq̃ − α̂₀ − (1/(2λT) + ψ) P₀ − M₀/T.
pub fn initial_trade_rate(firm: &FirmParams, p0: f64, m0: f64, horizon: f64, lambda: f64) -> f64 {
    firm.bau_emission_rate()
        - optimal_abatement(firm, p0)
        - (1.0 / (2.0 * lambda * horizon) + firm.psi()) * p0
        - m0 / horizon
}

/// Sign violations of the unconstrained optimal rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignWarning {
    NegativeProduction,
    NegativeAbatement,
}

/// Affine coefficients of the optimal controls in the permit price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmControls {
    /// q̂(P) = production.0 + production.1 · P
    pub production: (f64, f64),
    /// α̂(P) = abatement.0 + abatement.1 · P
    pub abatement: (f64, f64),
    /// β̂₀ at the given initial price and allocation.
    pub beta0: f64,
    /// η + ψ, the price loading of the trade-rate increment besides 1/(2λ(T − t)).
    pub trade_price_loading: f64,
    pub lambda: f64,
    pub horizon: f64,
}

impl FirmControls {
    pub fn new(firm: &FirmParams, p0: f64, m0: f64, horizon: f64, lambda: f64) -> Self {
        Self {
            production: (firm.laissez_faire_quantity(), -firm.production_slope()),
            abatement: (-firm.eta * firm.h, firm.eta),
            beta0: initial_trade_rate(firm, p0, m0, horizon, lambda),
            trade_price_loading: firm.eta + firm.psi(),
            lambda,
            horizon,
        }
    }

    pub fn production_at(&self, price: f64) -> f64 {
        self.production.0 + self.production.1 * price
    }

    pub fn abatement_at(&self, price: f64) -> f64 {
        self.abatement.0 + self.abatement.1 * price
    }

    /// Coefficient of dP in dβ̂ at time t < T: −(1/(2λ(T − t)) + η + ψ).
    pub fn trade_price_coefficient(&self, t: f64) -> f64 {
        -(1.0 / (2.0 * self.lambda * (self.horizon - t)) + self.trade_price_loading)
    }

    /// Loading of dβ̂ on σdW − dM at time t < T.
    pub fn trade_noise_coefficient(&self, t: f64) -> f64 {
        1.0 / (self.horizon - t)
    }

    pub fn warnings_at(&self, price: f64) -> Vec<SignWarning> {
        let mut out = Vec::new();
        if self.production_at(price) < 0.0 {
            out.push(SignWarning::NegativeProduction);
        }
        if self.abatement_at(price) < 0.0 {
            out.push(SignWarning::NegativeAbatement);
        }
        out
    }
}

/// Exogenous inputs of one firm along one sample path.
#[derive(Debug, Clone, Copy)]
pub struct PathInputs<'a> {
    /// Permit price at the nodes.
    pub price: &'a [f64],
    /// Increments of the firm's Brownian motion W^i over each interval.
    pub noise: &'a [f64],
    /// Allocation martingale M^i at the nodes.
    pub allocation: &'a [f64],
}

impl PathInputs<'_> {
    fn check(&self, grid: &TimeGrid) -> Result<()> {
        grid.check_nodes("price path", self.price.len())?;
        grid.check_steps("noise path", self.noise.len())?;
        grid.check_nodes("allocation path", self.allocation.len())
    }
}

/// Piecewise-constant control rates, one value per interval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlPath {
    pub production: Vec<f64>,
    pub abatement: Vec<f64>,
    pub trade_rate: Vec<f64>,
}

impl ControlPath {
    pub fn zeros(steps: usize) -> Self {
        Self {
            production: vec![0.0; steps],
            abatement: vec![0.0; steps],
            trade_rate: vec![0.0; steps],
        }
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        grid.check_steps("production", self.production.len())?;
        grid.check_steps("abatement", self.abatement.len())?;
        grid.check_steps("trade rate", self.trade_rate.len())
    }
}

/// Cumulative trade B̂ and the canonical trade rate along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradePath {
    /// B̂ at the nodes; the last entry is B̂_T.
    pub cumulative: Vec<f64>,
    /// β̂ on each interval.
    pub rate: Vec<f64>,
    /// ∫β̂ dt over [0, T] on the grid; equals B̂ at the last interior node.
    pub integrated: f64,
    /// B̂_T − ∫β̂ dt: the last increment, which no finite rate can deliver.
    pub final_increment: f64,
    pub integrability: Option<IntegrabilityDiagnostic>,
}

/// Builds B̂ from its SDE and the canonical rate β̂_t = B̂₀/T + ∫ dB̂_s/(T − s).
///
/// On the grid the increment is
/// ΔB̂_k = −(1/(2λ) + (η + ψ)(T − t_{k+1})) ΔP_k + σΔW_k − ΔM_k,
/// which keeps E_k[X_T] = −P_k/(2λ) exact in discrete time. The kernel
/// weight 1/(T − t_{k+1}) makes Σβ̂Δt telescope to B̂ at the last interior
/// node; the final increment is reported separately.
pub fn cumulative_trade_path(
    firm: &FirmParams,
    grid: &TimeGrid,
    lambda: f64,
    inputs: PathInputs<'_>,
    b_volatility: Option<&[f64]>,
) -> Result<TradePath> {
    inputs.check(grid)?;
    let n = grid.steps;
    let horizon = grid.horizon;
    let dt = grid.dt();
    let loading = firm.eta + firm.psi();
    let p0 = inputs.price[0];

    let b0 = -(1.0 / (2.0 * lambda) + loading * horizon) * p0
        + horizon * (firm.h * firm.eta + firm.bau_emission_rate())
        - inputs.allocation[0];

    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(b0);
    let mut rate = Vec::with_capacity(n);
    let mut beta = b0 / horizon;
    let mut integrated = 0.0;
    for k in 0..n {
        rate.push(beta);
        integrated += beta * dt;
        let remaining_next = grid.remaining(k + 1);
        let d_price = inputs.price[k + 1] - inputs.price[k];
        let d_alloc = inputs.allocation[k + 1] - inputs.allocation[k];
        let d_b = -(1.0 / (2.0 * lambda) + loading * remaining_next) * d_price + firm.sigma * inputs.noise[k]
            - d_alloc;
        cumulative.push(cumulative[k] + d_b);
        if k + 1 < n {
            beta += d_b / remaining_next;
        }
    }
    let final_increment = cumulative[n] - cumulative[n - 1];
    let integrability = b_volatility.map(|v| check_trade_integrability(v, grid)).transpose()?;
    Ok(TradePath {
        cumulative,
        rate,
        integrated,
        final_increment,
        integrability,
    })
}

/// Outcome of the tail test on E∫(σ^B)²/(T − t) dt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrabilityVerdict {
    /// Tail contributions shrink geometrically.
    Finite,
    /// Tail contributions stay flat: logarithmic growth as the grid refines.
    Borderline,
    /// Tail contributions grow.
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityDiagnostic {
    /// Discrete integral up to the last interior node.
    pub truncated_integral: f64,
    /// Geometric growth factor of the contributions of successive dyadic
    /// shells [T − 2ε, T − ε] as ε halves.
    pub tail_ratio: f64,
    pub shells: usize,
    pub verdict: IntegrabilityVerdict,
}

impl IntegrabilityDiagnostic {
    pub fn integrable(&self) -> bool {
        self.verdict == IntegrabilityVerdict::Finite
    }
}

const FINITE_RATIO: f64 = 0.8;
const BORDERLINE_RATIO: f64 = 1.25;
const TAIL_SHELLS: usize = 4;

/// Approximates ∫(σ^B)²/(T − t) dt for a piecewise-constant volatility and
/// classifies its behaviour at T from the last dyadic shells.
///
/// Each interval contributes σ_k² ln((T − t_k)/(T − t_{k+1})); the last
/// interval, where the kernel is not integrable, is left out.
pub fn check_trade_integrability(volatility: &[f64], grid: &TimeGrid) -> Result<IntegrabilityDiagnostic> {
    grid.check_steps("trade volatility", volatility.len())?;
    let n = grid.steps;
    let contribution = |k: usize| {
        let v = volatility[k];
        v * v * (grid.remaining(k) / grid.remaining(k + 1)).ln()
    };
    let truncated_integral: f64 = (0..n - 1).map(contribution).sum();

    // Shell j holds the intervals with T − t_k in (T/2^{j+1}, T/2^j].
    // Only shells with at least two intervals are used.
    let mut shells = Vec::new();
    let mut width = n;
    let mut upper = n; // remaining steps at the top of the shell
    while width / 2 >= 2 {
        let lower = upper / 2;
        let s: f64 = (n - upper..n - lower).map(contribution).sum();
        shells.push(s);
        upper = lower;
        width = lower;
    }
    let tail: Vec<f64> = shells.iter().rev().take(TAIL_SHELLS).rev().copied().collect();
    let tail_ratio = if tail.iter().all(|&s| s == 0.0) {
        0.0
    } else if tail.contains(&0.0) {
        // mixed zero and nonzero shells: compare first and last directly
        let first = tail.first().copied().unwrap_or(0.0);
        let last = tail.last().copied().unwrap_or(0.0);
        if last == 0.0 {
            0.0
        } else if first == 0.0 {
            f64::INFINITY
        } else {
            (last / first).powf(1.0 / (tail.len() - 1) as f64)
        }
    } else {
        log_slope_ratio(&tail)
    };
    let verdict = if tail_ratio < FINITE_RATIO {
        IntegrabilityVerdict::Finite
    } else if tail_ratio <= BORDERLINE_RATIO {
        IntegrabilityVerdict::Borderline
    } else {
        IntegrabilityVerdict::Divergent
    };
    Ok(IntegrabilityDiagnostic {
        truncated_integral,
        tail_ratio,
        shells: shells.len(),
        verdict,
    })
}

/// exp of the least-squares slope of ln(values) against their index.
fn log_slope_ratio(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.len() as f64;
    let xbar = (m - 1.0) / 2.0;
    let ybar = values.iter().map(|v| v.ln()).sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (j, v) in values.iter().enumerate() {
        let dx = j as f64 - xbar;
        num += dx * (v.ln() - ybar);
        den += dx * dx;
    }
    (num / den).exp()
}

/// All state and control paths of one firm along one sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmPath {
    pub grid: TimeGrid,
    pub price: Vec<f64>,
    pub noise: Vec<f64>,
    pub allocation: Vec<f64>,
    pub controls: ControlPath,
    pub trade: TradePath,
    /// Cumulative emissions E at the nodes.
    pub emissions: Vec<f64>,
    /// Permit bank X at the nodes, X₀ = A₀.
    pub bank: Vec<f64>,
}

impl FirmPath {
    /// Optimal controls of `firm` against the given price, noise and allocation paths.
    pub fn optimal(
        firm: &FirmParams,
        grid: &TimeGrid,
        lambda: f64,
        inputs: PathInputs<'_>,
        b_volatility: Option<&[f64]>,
    ) -> Result<Self> {
        let trade = cumulative_trade_path(firm, grid, lambda, inputs, b_volatility)?;
        let n = grid.steps;
        let controls = ControlPath {
            production: inputs.price[..n].iter().map(|&p| optimal_production(firm, p)).collect(),
            abatement: inputs.price[..n].iter().map(|&p| optimal_abatement(firm, p)).collect(),
            trade_rate: trade.rate.clone(),
        };
        let (emissions, bank) = state_paths(firm, grid, inputs, &controls);
        Ok(Self {
            grid: *grid,
            price: inputs.price.to_vec(),
            noise: inputs.noise.to_vec(),
            allocation: inputs.allocation.to_vec(),
            controls,
            trade,
            emissions,
            bank,
        })
    }

    pub fn inputs(&self) -> PathInputs<'_> {
        PathInputs {
            price: &self.price,
            noise: &self.noise,
            allocation: &self.allocation,
        }
    }

    pub fn terminal_bank(&self) -> f64 {
        self.bank[self.grid.steps]
    }
}

/// Emissions and bank recursions:
/// E_{k+1} = E_k + (γq_k − α_k)Δt + σΔW_k,
/// X_{k+1} = X_k − ΔE_k + β_kΔt + ΔA_k, X₀ = A₀,
/// with the allocation delivered as its martingale (A = M).
fn state_paths(firm: &FirmParams, grid: &TimeGrid, inputs: PathInputs<'_>, controls: &ControlPath) -> (Vec<f64>, Vec<f64>) {
    let n = grid.steps;
    let dt = grid.dt();
    let mut emissions = Vec::with_capacity(n + 1);
    let mut bank = Vec::with_capacity(n + 1);
    emissions.push(0.0);
    bank.push(inputs.allocation[0]);
    for k in 0..n {
        let d_e = (firm.gamma * controls.production[k] - controls.abatement[k]) * dt + firm.sigma * inputs.noise[k];
        let d_a = inputs.allocation[k + 1] - inputs.allocation[k];
        emissions.push(emissions[k] + d_e);
        bank.push(bank[k] - d_e + controls.trade_rate[k] * dt + d_a);
    }
    (emissions, bank)
}

/// Cost of one path split into its running and terminal parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCost {
    /// ∫(−S(q)q + c(q) + g(α) + βP) dt, left-endpoint rule.
    pub running: f64,
    /// λ X_T².
    pub terminal: f64,
    pub terminal_bank: f64,
}

impl PathCost {
    pub fn total(&self) -> f64 {
        self.running + self.terminal
    }
}

/// Realized cost of `controls` along one path.
pub fn path_cost(
    firm: &FirmParams,
    grid: &TimeGrid,
    lambda: f64,
    inputs: PathInputs<'_>,
    controls: &ControlPath,
) -> Result<PathCost> {
    inputs.check(grid)?;
    controls.check(grid)?;
    let dt = grid.dt();
    let mut running = 0.0;
    for k in 0..grid.steps {
        let q = controls.production[k];
        let alpha = controls.abatement[k];
        let rate = -firm.inverse_demand(q) * q
            + firm.production_cost(q)
            + firm.abatement_cost(alpha)
            + controls.trade_rate[k] * inputs.price[k];
        running += rate * dt;
    }
    let (_, bank) = state_paths(firm, grid, inputs, controls);
    let x_t = bank[grid.steps];
    Ok(PathCost {
        running,
        terminal: lambda * x_t * x_t,
        terminal_bank: x_t,
    })
}

/// Monte Carlo estimate of the firm objective J over a set of paths.
pub fn evaluate_firm_objective<'a, I>(firm: &FirmParams, grid: &TimeGrid, lambda: f64, samples: I) -> Result<Estimate>
where
    I: IntoIterator<Item = (PathInputs<'a>, &'a ControlPath)>,
{
    let mut stats = RunningStats::default();
    for (inputs, controls) in samples {
        stats.push(path_cost(firm, grid, lambda, inputs, controls)?.total());
    }
    if stats.count() == 0 {
        return Err(Error::invalid("samples", "at least one path is required"));
    }
    Ok(stats.estimate())
}
