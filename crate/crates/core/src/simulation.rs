//! Monte Carlo simulation of the equilibrium economy.
//!
//! One path draws the factor increments (ΔW̃⁰, …, ΔW̃ᴺ) per step, builds each
//! firm's shock ΔWⁱ = sᵢΔW̃⁰ + √(1 − sᵢ²)ΔW̃ⁱ and allocation increment, moves
//! the price by f(t_{k+1})(ΔW̄ − ΔM̄) and runs every firm's optimal rules
//! against it. Ensembles run in fixed blocks of paths on the rayon pool and
//! are reduced in block order, so the output depends only on the inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{f_unchecked, initial_price, AllocationProgram};
use crate::error::{Error, Result};
use crate::firm::{
    check_trade_integrability, optimal_abatement, optimal_production, FirmPath, IntegrabilityDiagnostic, PathInputs,
    SignWarning,
};
use crate::grid::TimeGrid;
use crate::model::{derive_aggregates, EconomyParams};
use crate::rng::NormalStream;
use crate::stats::{Estimate, RunningStats};

pub const DEFAULT_STEPS: usize = 2_000;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 20_500;
const BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Pairs path 2j with path 2j + 1 driven by the negated normals.
    pub antithetic: bool,
    /// Number of leading paths stored in full.
    pub keep_paths: usize,
    /// Multiplier on f(t) in the price recursion. Anything but 1 breaks
    /// the equilibrium on purpose; used to check that the checks notice.
    #[serde(skip)]
    pub price_volatility_scale: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
            antithetic: false,
            keep_paths: 0,
            price_volatility_scale: 1.0,
        }
    }
}

impl SimulationSettings {
    pub fn new(steps: usize, paths: usize, seed: u64) -> Self {
        Self {
            steps,
            paths,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::invalid("paths", "need at least one path"));
        }
        if self.steps < 2 {
            return Err(Error::invalid("steps", format!("need at least 2 steps, got {}", self.steps)));
        }
        if !self.price_volatility_scale.is_finite() {
            return Err(Error::invalid("price_volatility_scale", "must be finite"));
        }
        Ok(())
    }

    /// (stream, sign) feeding path `index`.
    fn stream_of(&self, index: usize) -> (u64, f64) {
        if self.antithetic {
            ((index / 2) as u64, if index % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (index as u64, 1.0)
        }
    }
}

/// Brownian factor increments of one path, `steps × (N + 1)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorIncrements {
    pub channels: usize,
    pub values: Vec<f64>,
}

impl FactorIncrements {
    pub fn draw(seed: u64, stream: u64, sign: f64, grid: &TimeGrid, channels: usize) -> Self {
        let mut rng = NormalStream::new(seed, stream);
        let mut values = vec![0.0; grid.steps * channels];
        rng.fill(&mut values);
        let scale = sign * grid.dt().sqrt();
        for v in &mut values {
            *v *= scale;
        }
        Self { channels, values }
    }

    pub fn zeros(grid: &TimeGrid, channels: usize) -> Self {
        Self {
            channels,
            values: vec![0.0; grid.steps * channels],
        }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }
}

/// Price and every firm's paths along one sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub index: usize,
    pub price: Vec<f64>,
    pub firms: Vec<FirmPath>,
}

impl SimulatedPath {
    /// Σᵢβᵢ on interval k.
    pub fn net_trade(&self, k: usize) -> f64 {
        self.firms.iter().map(|f| f.controls.trade_rate[k]).sum()
    }

    /// Σᵢ|βᵢ| on interval k.
    pub fn gross_trade(&self, k: usize) -> f64 {
        self.firms.iter().map(|f| f.controls.trade_rate[k].abs()).sum()
    }

    pub fn quadratic_variation(&self) -> f64 {
        self.price.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
    }

    /// Average cumulative emissions per firm at node k.
    pub fn mean_emissions(&self, k: usize) -> f64 {
        self.firms.iter().map(|f| f.emissions[k]).sum::<f64>() / self.firms.len() as f64
    }
}

/// Runs the equilibrium on given factor increments.
pub fn simulate_path(
    economy: &EconomyParams,
    allocation: &AllocationProgram,
    grid: &TimeGrid,
    factors: &FactorIncrements,
    price_volatility_scale: f64,
    index: usize,
) -> Result<SimulatedPath> {
    let n_firms = economy.n_firms();
    if factors.channels != n_firms + 1 || factors.values.len() != grid.steps * factors.channels {
        return Err(Error::GridMismatch(format!(
            "factor increments hold {} values on {} channels, expected {} steps x {}",
            factors.values.len(),
            factors.channels,
            grid.steps,
            n_firms + 1
        )));
    }
    let aggregates = derive_aggregates(economy)?;
    let lambda = economy.lambda;
    let p0 = initial_price(&aggregates, allocation.m_bar_0(), grid.horizon, lambda);
    let steps = grid.steps;
    let weights: Vec<(f64, f64)> = economy.firms.iter().map(|f| f.noise_weights()).collect();

    let mut price = Vec::with_capacity(steps + 1);
    price.push(p0);
    let mut noise = vec![Vec::with_capacity(steps); n_firms];
    let mut alloc: Vec<Vec<f64>> = allocation
        .m0
        .iter()
        .map(|&m| {
            let mut v = Vec::with_capacity(steps + 1);
            v.push(m);
            v
        })
        .collect();

    for k in 0..steps {
        let z = factors.step(k);
        let loadings = allocation.loadings_at(grid.node(k));
        let (mut w_bar, mut m_bar) = (0.0, 0.0);
        for i in 0..n_firms {
            let (common, own) = weights[i];
            let dw = common * z[0] + own * z[i + 1];
            noise[i].push(dw);
            w_bar += economy.firms[i].sigma * dw;
            let dm = loadings.map_or(0.0, |l| l[i].iter().zip(z).map(|(a, b)| a * b).sum());
            let next = alloc[i][k] + dm;
            alloc[i].push(next);
            m_bar += dm;
        }
        let f = price_volatility_scale * f_unchecked(lambda, aggregates.phi_bar, grid.remaining(k + 1));
        price.push(price[k] + f * (w_bar - m_bar) / n_firms as f64);
    }

    let firms = economy
        .firms
        .iter()
        .enumerate()
        .map(|(i, firm)| {
            let inputs = PathInputs {
                price: &price,
                noise: &noise[i],
                allocation: &alloc[i],
            };
            FirmPath::optimal(firm, grid, lambda, inputs, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedPath { index, price, firms })
}

/// Draws path `index` of an ensemble and runs it.
pub fn sample_path(
    economy: &EconomyParams,
    allocation: &AllocationProgram,
    settings: &SimulationSettings,
    horizon_grid: &TimeGrid,
    index: usize,
) -> Result<SimulatedPath> {
    let (stream, sign) = settings.stream_of(index);
    let factors = FactorIncrements::draw(settings.seed, stream, sign, horizon_grid, economy.n_firms() + 1);
    simulate_path(economy, allocation, horizon_grid, &factors, settings.price_volatility_scale, index)
}

/// Deterministic volatility of B̂ⁱ on each interval, per firm:
/// the norm over factors of −(1/(2λ) + (ηᵢ + ψᵢ)(T − t_{k+1})) f(t_{k+1})(w̄ − m̄) + σᵢwⁱ − lⁱ.
pub fn trade_volatility(economy: &EconomyParams, allocation: &AllocationProgram, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let aggregates = derive_aggregates(economy)?;
    let n = economy.n_firms();
    let lambda = economy.lambda;
    let exposure: Vec<Vec<f64>> = economy
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
    let mut out = vec![Vec::with_capacity(grid.steps); n];
    for k in 0..grid.steps {
        let loadings = allocation.loadings_at(grid.node(k));
        let net: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..=n)
                    .map(|c| exposure[i][c] - loadings.map_or(0.0, |l| l[i][c]))
                    .collect()
            })
            .collect();
        let remaining = grid.remaining(k + 1);
        let f = f_unchecked(lambda, aggregates.phi_bar, remaining);
        let average: Vec<f64> = (0..=n).map(|c| net.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
        for (i, firm) in economy.firms.iter().enumerate() {
            let price_coeff = 1.0 / (2.0 * lambda) + (firm.eta + firm.psi()) * remaining;
            let norm2: f64 = (0..=n).map(|c| (net[i][c] - price_coeff * f * average[c]).powi(2)).sum();
            out[i].push(norm2.sqrt());
        }
    }
    Ok(out)
}

/// Ensemble statistics at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub t: f64,
    pub price: Estimate,
    /// Average cumulative emissions per firm.
    pub emissions: Estimate,
    /// max over paths of |Σᵢβᵢ| on the interval starting here; 0 at T.
    pub clearing_residual: f64,
    /// max over paths of Σᵢ|βᵢ| on the interval starting here; 0 at T.
    pub gross_trade: f64,
}

/// Per-path scalars kept for every path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathTerminal {
    pub price: f64,
    /// E_T/(NT).
    pub emission_rate: f64,
    pub quadratic_variation: f64,
    /// max over intervals of |Σᵢβᵢ|.
    pub clearing_residual: f64,
    /// max over intervals of Σᵢ|βᵢ|.
    pub gross_trade: f64,
    /// max over firms of |B̂_T − ∫β̂dt|.
    pub truncation: f64,
    /// max over firms of |X_T − (A_T − E_T + ∫βdt)| relative to the largest term.
    pub bank_identity_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningCount {
    pub firm: usize,
    pub kind: SignWarning,
    /// Number of (path, interval) pairs where the warning fired.
    pub occurrences: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub seed: u64,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub n_firms: usize,
    pub antithetic: bool,
    pub p0: f64,
    pub nodes: Vec<NodeSummary>,
    pub terminals: Vec<PathTerminal>,
    pub paths: Vec<SimulatedPath>,
    pub integrability: Vec<IntegrabilityDiagnostic>,
    pub warnings: Vec<WarningCount>,
}

#[derive(Clone)]
struct Block {
    price: Vec<RunningStats>,
    emissions: Vec<RunningStats>,
    residual: Vec<f64>,
    gross: Vec<f64>,
    terminals: Vec<PathTerminal>,
    paths: Vec<SimulatedPath>,
    warnings: Vec<[u64; 2]>,
}

impl Block {
    fn new(steps: usize, n_firms: usize) -> Self {
        Self {
            price: vec![RunningStats::default(); steps + 1],
            emissions: vec![RunningStats::default(); steps + 1],
            residual: vec![0.0; steps + 1],
            gross: vec![0.0; steps + 1],
            terminals: Vec::new(),
            paths: Vec::new(),
            warnings: vec![[0, 0]; n_firms],
        }
    }

    fn absorb(&mut self, economy: &EconomyParams, path: &SimulatedPath) {
        let steps = path.price.len() - 1;
        let horizon = path.firms[0].grid.horizon;
        let mut max_res: f64 = 0.0;
        let mut max_gross: f64 = 0.0;
        for k in 0..=steps {
            self.price[k].push(path.price[k]);
            self.emissions[k].push(path.mean_emissions(k));
            if k < steps {
                let res = path.net_trade(k).abs();
                let gross = path.gross_trade(k);
                self.residual[k] = self.residual[k].max(res);
                self.gross[k] = self.gross[k].max(gross);
                max_res = max_res.max(res);
                max_gross = max_gross.max(gross);
            }
        }
        for (i, (firm_path, firm)) in path.firms.iter().zip(&economy.firms).enumerate() {
            for &p in &firm_path.price[..steps] {
                if optimal_production(firm, p) < 0.0 {
                    self.warnings[i][0] += 1;
                }
                if optimal_abatement(firm, p) < 0.0 {
                    self.warnings[i][1] += 1;
                }
            }
        }
        let truncation = path
            .firms
            .iter()
            .map(|f| f.trade.final_increment.abs())
            .fold(0.0, f64::max);
        let bank_identity_error = path.firms.iter().map(bank_identity_error).fold(0.0, f64::max);
        self.terminals.push(PathTerminal {
            price: path.price[steps],
            emission_rate: path.mean_emissions(steps) / horizon,
            quadratic_variation: path.quadratic_variation(),
            clearing_residual: max_res,
            gross_trade: max_gross,
            truncation,
            bank_identity_error,
        });
    }

    fn merge(&mut self, other: Block) {
        for (a, b) in self.price.iter_mut().zip(&other.price) {
            a.merge(b);
        }
        for (a, b) in self.emissions.iter_mut().zip(&other.emissions) {
            a.merge(b);
        }
        for (a, b) in self.residual.iter_mut().zip(&other.residual) {
            *a = a.max(*b);
        }
        for (a, b) in self.gross.iter_mut().zip(&other.gross) {
            *a = a.max(*b);
        }
        for (a, b) in self.warnings.iter_mut().zip(&other.warnings) {
            a[0] += b[0];
            a[1] += b[1];
        }
        self.terminals.extend(other.terminals);
        self.paths.extend(other.paths);
    }
}

/// |X_T − (A_T − E_T + ∫β dt)| relative to the largest of those terms.
pub fn bank_identity_error(path: &FirmPath) -> f64 {
    let n = path.grid.steps;
    let dt = path.grid.dt();
    let traded: f64 = path.controls.trade_rate.iter().map(|b| b * dt).sum();
    let a_t = path.allocation[n];
    let e_t = path.emissions[n];
    let x_t = path.bank[n];
    let scale = [a_t, e_t, traded, x_t].iter().fold(1.0f64, |m, v| m.max(v.abs()));
    (x_t - (a_t - e_t + traded)).abs() / scale
}

/// Simulates `settings.paths` equilibrium paths.
pub fn simulate(economy: &EconomyParams, allocation: &AllocationProgram, settings: &SimulationSettings) -> Result<PathEnsemble> {
    settings.validate()?;
    let aggregates = derive_aggregates(economy)?;
    let grid = TimeGrid::new(economy.horizon, settings.steps)?;
    allocation.validate(economy.n_firms(), economy.horizon)?;
    let n_firms = economy.n_firms();
    let p0 = initial_price(&aggregates, allocation.m_bar_0(), economy.horizon, economy.lambda);

    let n_blocks = settings.paths.div_ceil(BLOCK);
    let blocks: Vec<Result<Block>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut block = Block::new(grid.steps, n_firms);
            for index in b * BLOCK..((b + 1) * BLOCK).min(settings.paths) {
                let path = sample_path(economy, allocation, settings, &grid, index)?;
                block.absorb(economy, &path);
                if index < settings.keep_paths {
                    block.paths.push(path);
                }
            }
            Ok(block)
        })
        .collect();
    let mut total = Block::new(grid.steps, n_firms);
    for block in blocks {
        total.merge(block?);
    }

    let integrability = trade_volatility(economy, allocation, &grid)?
        .iter()
        .map(|v| check_trade_integrability(v, &grid))
        .collect::<Result<Vec<_>>>()?;
    let nodes = (0..=grid.steps)
        .map(|k| NodeSummary {
            t: grid.node(k),
            price: total.price[k].estimate(),
            emissions: total.emissions[k].estimate(),
            clearing_residual: total.residual[k],
            gross_trade: total.gross[k],
        })
        .collect();
    let mut warnings = Vec::new();
    for (firm, counts) in total.warnings.iter().enumerate() {
        for (kind, &occurrences) in [SignWarning::NegativeProduction, SignWarning::NegativeAbatement]
            .into_iter()
            .zip(counts)
        {
            if occurrences > 0 {
                warnings.push(WarningCount {
                    firm,
                    kind,
                    occurrences,
                });
            }
        }
    }
    Ok(PathEnsemble {
        seed: settings.seed,
        grid,
        n_paths: settings.paths,
        n_firms,
        antithetic: settings.antithetic,
        p0,
        nodes,
        terminals: total.terminals,
        paths: total.paths,
        integrability,
        warnings,
    })
}

impl PathEnsemble {
    pub fn max_clearing_residual(&self) -> f64 {
        self.terminals.iter().map(|t| t.clearing_residual).fold(0.0, f64::max)
    }

    pub fn max_gross_trade(&self) -> f64 {
        self.terminals.iter().map(|t| t.gross_trade).fold(0.0, f64::max)
    }

    /// max |Σβ| over max Σ|β|; zero when nobody trades.
    pub fn relative_clearing_residual(&self) -> f64 {
        let gross = self.max_gross_trade();
        if gross == 0.0 {
            0.0
        } else {
            self.max_clearing_residual() / gross
        }
    }

    pub fn max_quadratic_variation(&self) -> f64 {
        self.terminals.iter().map(|t| t.quadratic_variation).fold(0.0, f64::max)
    }

    pub fn max_truncation(&self) -> f64 {
        self.terminals.iter().map(|t| t.truncation).fold(0.0, f64::max)
    }

    pub fn max_bank_identity_error(&self) -> f64 {
        self.terminals.iter().map(|t| t.bank_identity_error).fold(0.0, f64::max)
    }

    /// Ensemble estimate of E_T/(NT).
    pub fn emission_rate(&self) -> Estimate {
        self.terminals.iter().map(|t| t.emission_rate).collect::<RunningStats>().estimate()
    }

    pub fn terminal_price(&self) -> Estimate {
        self.nodes[self.grid.steps].price
    }

    /// (t, z-score of mean P_t against P₀) at `count` checkpoints.
    pub fn martingale_z_scores(&self, count: usize) -> Vec<(f64, f64)> {
        self.grid
            .checkpoints(count)
            .into_iter()
            .map(|k| (self.nodes[k].t, self.nodes[k].price.z_score(self.p0)))
            .collect()
    }

    /// Writes `t, mean_P, se_P, mean_E, se_E, clearing_residual`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,mean_P,se_P,mean_E,se_E,clearing_residual")?;
        for node in &self.nodes {
            writeln!(
                out,
                "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
                node.t,
                node.price.mean,
                zero_if_nan(node.price.std_error),
                node.emissions.mean,
                zero_if_nan(node.emissions.std_error),
                node.clearing_residual
            )?;
        }
        Ok(())
    }
}

fn zero_if_nan(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}
