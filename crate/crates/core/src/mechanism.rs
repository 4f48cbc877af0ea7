//! Round orchestration: local updates, coalition sampling, reputation-
//! weighted aggregation and evaluation, characteristic table, VCG surplus,
//! core-selecting solve, payments, and reputation/account accumulation.
//!
//! Two evaluation backends drive the same mechanism: [`Backend::Trained`]
//! runs real local SGD and model evaluation; [`Backend::Analytic`] replaces
//! training with the closed-form accuracy oracle so mechanism properties can
//! be exercised exactly and cheaply.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core_select::{
    core_accuracy, full_constraints, payments_from_surplus, sample_coalitions, sample_size,
    solve_core_selecting, SolverConfig, SurplusVector,
};
use crate::datasets::{apply_strategy, InputStrategy, LabeledDataset};
use crate::error::{Error, Result};
use crate::game::{
    characteristic_value, valuation, vcg_payment, vcg_surplus, AccuracyModel, AnalyticOracle,
    CharacteristicTable, Coalition, ValuationParams,
};
use crate::learning::{evaluate_accuracy, init_params, local_update, ModelArch, ModelParams, TrainConfig};
use crate::rng::{derive_seed, SeedDomain};

/// Which constraint set the round's surplus program uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// All `2^n - 1` coalitions are aggregated, evaluated, and constrained.
    Exact,
    /// Theorem-5 sampling: `m` coalitions plus `N` and every `N \ {i}`.
    Sampled,
    /// Pay the VCG-like payment directly; evaluates only `N` and `N \ {i}`.
    VcgOnly,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Exact => write!(f, "exact"),
            Mode::Sampled => write!(f, "sampled"),
            Mode::VcgOnly => write!(f, "vcg_only"),
        }
    }
}

/// Full mechanism configuration for a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub n: usize,
    pub rounds: usize,
    pub delta: f64,
    pub big_delta: f64,
    pub sample_constant: f64,
    pub b0: f64,
    pub k: Vec<f64>,
    pub phi0: f64,
    pub train: TrainConfig,
    pub arch: ModelArch,
    pub mode: Mode,
    pub eval_repeats: usize,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > crate::game::MAX_PARTICIPANTS {
            return Err(Error::parameter(format!("n = {} outside 1..=30", self.n)));
        }
        if self.rounds == 0 {
            return Err(Error::parameter("rounds must be >= 1"));
        }
        if self.mode == Mode::Exact && self.n > 20 {
            return Err(Error::parameter(
                "exact mode enumerates all coalitions and requires n <= 20",
            ));
        }
        if self.mode == Mode::Sampled {
            // surfaces bad delta/Delta/C immediately
            sample_size(self.n, self.delta, self.big_delta, self.sample_constant)?;
        }
        if self.k.len() != self.n {
            return Err(Error::parameter(format!(
                "k has {} entries for {} participants",
                self.k.len(),
                self.n
            )));
        }
        if self.k.iter().any(|&ki| !(ki > 0.0)) {
            return Err(Error::parameter("every preference k_i must be positive"));
        }
        if !(self.b0 >= 0.0) || !self.b0.is_finite() {
            return Err(Error::parameter("budget b0 must be non-negative"));
        }
        if !(self.phi0 > 0.0) || !self.phi0.is_finite() {
            return Err(Error::parameter("phi0 must be positive"));
        }
        if self.eval_repeats == 0 {
            return Err(Error::parameter("eval_repeats must be >= 1"));
        }
        self.train.validate()
    }
}

/// Reputation state: cumulative observable surplus floored at `phi0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReputationState {
    pub r: Vec<f64>,
    pub cumulative_surplus: Vec<f64>,
}

impl ReputationState {
    pub fn new(n: usize, phi0: f64) -> Self {
        Self {
            r: vec![phi0; n],
            cumulative_surplus: vec![0.0; n],
        }
    }
}

/// Fold a round's surpluses into the reputation state:
/// `R_i = max(phi0, sum of surpluses so far)`.
pub fn update_reputation(
    state: &ReputationState,
    round_surplus: &[f64],
    phi0: f64,
) -> Result<ReputationState> {
    if round_surplus.len() != state.r.len() {
        return Err(Error::parameter("surplus vector length mismatch"));
    }
    let cumulative_surplus: Vec<f64> = state
        .cumulative_surplus
        .iter()
        .zip(round_surplus)
        .map(|(c, s)| c + s)
        .collect();
    let r = cumulative_surplus.iter().map(|&c| c.max(phi0)).collect();
    Ok(ReputationState {
        r,
        cumulative_surplus,
    })
}

/// Convex combination of parameter vectors with weights normalized over the
/// member set.
pub fn aggregate(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::parameter("cannot aggregate an empty member set"));
    }
    if models.len() != weights.len() {
        return Err(Error::parameter("one weight per model required"));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::parameter("aggregation weights must be positive"));
    }
    let arch = models[0].arch;
    if models.iter().any(|m| m.arch != arch) {
        return Err(Error::parameter("all models must share one architecture"));
    }
    let total: f64 = weights.iter().sum();
    let mut theta = vec![0.0; models[0].theta.len()];
    for (model, &w) in models.iter().zip(weights) {
        let scale = w / total;
        for (acc, t) in theta.iter_mut().zip(&model.theta) {
            *acc += scale * t;
        }
    }
    ModelParams::new(arch, theta)
}

/// Deviation degree a strategy maps to under the analytic oracle.
///
/// The weights order strategies by how damaging they are at equal nominal
/// fraction: label flipping poisons hardest, removal loses signal, noise
/// blurs it, quitting leaves only a stale model behind.
pub fn deviation_degree(strategy: &InputStrategy) -> f64 {
    match strategy {
        InputStrategy::Truthful => 0.0,
        InputStrategy::Noise { degree } => 0.4 * degree,
        InputStrategy::Removal { fraction } => 0.7 * fraction,
        InputStrategy::LabelFlip { fraction } => 1.0 * fraction,
        InputStrategy::Quit => 1.0,
    }
}

/// Evaluation backend for coalition accuracies.
#[derive(Debug, Clone)]
pub enum Backend {
    Trained(TrainedBackend),
    Analytic(AnalyticOracle),
}

/// Real-training backend: strategy-transformed shards alongside the
/// originals (used for the participant-side truthful baseline) and the
/// server's held-out test set.
#[derive(Debug, Clone)]
pub struct TrainedBackend {
    pub observed: Vec<LabeledDataset>,
    pub truthful: Vec<LabeledDataset>,
    pub test: LabeledDataset,
}

impl Backend {
    /// Build the trained backend by applying each participant's strategy to
    /// its shard (sub-seeded per participant).
    pub fn trained(
        shards: Vec<LabeledDataset>,
        test: LabeledDataset,
        strategies: &[InputStrategy],
        seed: u64,
    ) -> Result<Self> {
        if shards.len() != strategies.len() {
            return Err(Error::parameter("one strategy per participant required"));
        }
        let observed: Vec<LabeledDataset> = shards
            .iter()
            .zip(strategies)
            .enumerate()
            .map(|(i, (shard, strategy))| {
                apply_strategy(shard, strategy, derive_seed(seed, SeedDomain::Strategy, i as u64))
            })
            .collect::<Result<_>>()?;
        Ok(Backend::Trained(TrainedBackend {
            observed,
            truthful: shards,
            test,
        }))
    }

    /// Build the analytic backend from the strategies' deviation degrees.
    pub fn analytic(model: AccuracyModel, strategies: &[InputStrategy]) -> Result<Self> {
        let degrees: Vec<f64> = strategies.iter().map(deviation_degree).collect();
        Ok(Backend::Analytic(crate::game::analytic_oracle(
            degrees, model,
        )?))
    }
}

/// Per-phase wall-clock durations in milliseconds. Excluded from round
/// equality: two identical runs agree on every number except timings.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct WallTimes {
    pub train_ms: f64,
    pub aggregate_eval_ms: f64,
    pub qp_ms: f64,
}

/// Everything the mechanism records about one round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub coalition_count: usize,
    /// Coalition accuracy keyed by bitmask.
    pub accuracies: BTreeMap<u32, f64>,
    /// Characteristic value keyed by bitmask.
    pub w: BTreeMap<u32, f64>,
    pub vcg_surplus: Vec<f64>,
    pub surplus: Vec<f64>,
    pub pi0: f64,
    pub eps: f64,
    pub payments: Vec<f64>,
    pub observed_valuations: Vec<f64>,
    /// Participant-side utility for the round: truthful-baseline valuation
    /// plus payment.
    pub actual_utilities: Vec<f64>,
    pub accumulated_payments: Vec<f64>,
    pub reputations: Vec<f64>,
    pub core_accuracy: Option<f64>,
    pub wall_times: WallTimes,
}

impl PartialEq for RoundReport {
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.coalition_count == other.coalition_count
            && self.accuracies == other.accuracies
            && self.w == other.w
            && self.vcg_surplus == other.vcg_surplus
            && self.surplus == other.surplus
            && self.pi0 == other.pi0
            && self.eps == other.eps
            && self.payments == other.payments
            && self.observed_valuations == other.observed_valuations
            && self.actual_utilities == other.actual_utilities
            && self.accumulated_payments == other.accumulated_payments
            && self.reputations == other.reputations
            && self.core_accuracy == other.core_accuracy
    }
}

/// Mutable simulation state threaded across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismState {
    /// 0-based index of the next round to run.
    pub round: usize,
    /// Current global model (trained backend only).
    pub global: Option<ModelParams>,
    pub reputation: ReputationState,
    pub accumulated_payments: Vec<f64>,
    pub accumulated_utilities: Vec<f64>,
}

/// Fresh state: reputations at the floor, accounts at zero, global model
/// initialized from the config seed.
pub fn initial_state(cfg: &MechanismConfig, backend: &Backend) -> Result<MechanismState> {
    cfg.validate()?;
    let global = match backend {
        Backend::Trained(tb) => {
            if tb.observed.len() != cfg.n {
                return Err(Error::parameter(format!(
                    "backend has {} participants, config says {}",
                    tb.observed.len(),
                    cfg.n
                )));
            }
            Some(init_params(
                cfg.arch,
                derive_seed(cfg.seed, SeedDomain::Init, 0),
            )?)
        }
        Backend::Analytic(oracle) => {
            if oracle.n() != cfg.n {
                return Err(Error::parameter(format!(
                    "oracle has {} participants, config says {}",
                    oracle.n(),
                    cfg.n
                )));
            }
            None
        }
    };
    Ok(MechanismState {
        round: 0,
        global,
        reputation: ReputationState::new(cfg.n, cfg.phi0),
        accumulated_payments: vec![0.0; cfg.n],
        accumulated_utilities: vec![0.0; cfg.n],
    })
}

struct RoundEvaluation {
    table: CharacteristicTable,
    solo_observed: Vec<f64>,
    solo_truthful: Vec<f64>,
    new_global: Option<ModelParams>,
    train_ms: f64,
    eval_ms: f64,
}

fn mix_index(round: usize, rep: usize, i: usize) -> u64 {
    ((round as u64) << 40) | ((rep as u64) << 24) | i as u64
}

/// Train local models (trained backend), evaluate every listed coalition,
/// and build the round's characteristic table.
fn evaluate_round(
    cfg: &MechanismConfig,
    backend: &Backend,
    state: &MechanismState,
    coalitions: &[Coalition],
) -> Result<RoundEvaluation> {
    let n = cfg.n;
    let round = state.round;
    match backend {
        Backend::Analytic(oracle) => {
            let start = Instant::now();
            let solo_observed: Vec<f64> = (0..n).map(|i| oracle.solo_accuracy(i)).collect();
            let solo_truthful: Vec<f64> = (0..n).map(|i| oracle.truthful_solo_accuracy(i)).collect();
            let vp = ValuationParams::new(cfg.k.clone(), cfg.b0, solo_observed.clone())?;
            let accs: Vec<f64> = coalitions.par_iter().map(|s| oracle.accuracy(*s)).collect();
            let mut table = CharacteristicTable::new(n);
            for (s, acc) in coalitions.iter().zip(&accs) {
                table.insert(*s, *acc, characteristic_value(*s, *acc, &vp)?);
            }
            Ok(RoundEvaluation {
                table,
                solo_observed,
                solo_truthful,
                new_global: None,
                train_ms: 0.0,
                eval_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        }
        Backend::Trained(tb) => {
            let reps = cfg.eval_repeats;
            let global = state
                .global
                .as_ref()
                .ok_or_else(|| Error::parameter("trained backend needs a global model"))?;

            let train_start = Instant::now();
            let mut observed_models: Vec<Vec<ModelParams>> = Vec::with_capacity(reps);
            let mut truthful_models: Vec<Vec<ModelParams>> = Vec::with_capacity(reps);
            for rep in 0..reps {
                let obs: Result<Vec<ModelParams>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let seed = derive_seed(cfg.seed, SeedDomain::Training, mix_index(round, rep, i));
                        local_update(global, &tb.observed[i], &cfg.train, seed)
                    })
                    .collect();
                observed_models.push(obs?);
                let truth: Result<Vec<ModelParams>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let seed = derive_seed(cfg.seed, SeedDomain::Training, mix_index(round, rep, i));
                        local_update(global, &tb.truthful[i], &cfg.train, seed)
                    })
                    .collect();
                truthful_models.push(truth?);
            }
            let train_ms = train_start.elapsed().as_secs_f64() * 1e3;

            let eval_start = Instant::now();
            let mean_over_reps = |models: &[Vec<ModelParams>], i: usize| -> Result<f64> {
                let mut total = 0.0;
                for rep_models in models {
                    total += evaluate_accuracy(&rep_models[i], &tb.test)?;
                }
                Ok(total / reps as f64)
            };
            let solo_observed: Vec<f64> = (0..n)
                .map(|i| mean_over_reps(&observed_models, i))
                .collect::<Result<_>>()?;
            let solo_truthful: Vec<f64> = (0..n)
                .map(|i| mean_over_reps(&truthful_models, i))
                .collect::<Result<_>>()?;

            let weights = &state.reputation.r;
            let accs: Vec<f64> = coalitions
                .par_iter()
                .map(|s| {
                    let member_weights: Vec<f64> = s.members().map(|i| weights[i]).collect();
                    let mut total = 0.0;
                    for rep_models in &observed_models {
                        let members: Vec<&ModelParams> =
                            s.members().map(|i| &rep_models[i]).collect();
                        let model = aggregate(&members, &member_weights)?;
                        total += evaluate_accuracy(&model, &tb.test)?;
                    }
                    Ok(total / reps as f64)
                })
                .collect::<Result<_>>()?;
            let eval_ms = eval_start.elapsed().as_secs_f64() * 1e3;

            let vp = ValuationParams::new(cfg.k.clone(), cfg.b0, solo_observed.clone())?;
            let mut table = CharacteristicTable::new(n);
            for (s, acc) in coalitions.iter().zip(&accs) {
                table.insert(*s, *acc, characteristic_value(*s, *acc, &vp)?);
            }

            let grand = Coalition::full(n);
            let members: Vec<&ModelParams> = grand.members().map(|i| &observed_models[0][i]).collect();
            let member_weights: Vec<f64> = grand.members().map(|i| weights[i]).collect();
            let new_global = aggregate(&members, &member_weights)?;

            Ok(RoundEvaluation {
                table,
                solo_observed,
                solo_truthful,
                new_global: Some(new_global),
                train_ms,
                eval_ms,
            })
        }
    }
}

/// The coalitions a round must aggregate and evaluate, deduplicated and in
/// ascending bitmask order.
fn round_coalitions(cfg: &MechanismConfig, round: usize) -> Result<Vec<Coalition>> {
    let n = cfg.n;
    let grand = Coalition::full(n);
    let mut set: std::collections::BTreeSet<Coalition> = std::collections::BTreeSet::new();
    match cfg.mode {
        Mode::Exact => {
            set.extend(Coalition::all_nonempty(n));
        }
        Mode::Sampled => {
            let m = sample_size(n, cfg.delta, cfg.big_delta, cfg.sample_constant)?;
            let seed = derive_seed(cfg.seed, SeedDomain::Sampling, round as u64);
            set.extend(sample_coalitions(n, m, seed)?);
        }
        Mode::VcgOnly => {}
    }
    set.insert(grand);
    for i in 0..n {
        let drop = grand.without(i);
        if !drop.is_empty() {
            set.insert(drop);
        }
    }
    Ok(set.into_iter().collect())
}

/// Execute one mechanism round, returning the advanced state and the report.
pub fn run_round(
    state: MechanismState,
    cfg: &MechanismConfig,
    backend: &Backend,
) -> Result<(MechanismState, RoundReport)> {
    let round = state.round;
    run_round_inner(state, cfg, backend).map_err(|e| e.in_round(round + 1))
}

fn run_round_inner(
    mut state: MechanismState,
    cfg: &MechanismConfig,
    backend: &Backend,
) -> Result<(MechanismState, RoundReport)> {
    let n = cfg.n;
    let grand = Coalition::full(n);
    let coalitions = round_coalitions(cfg, state.round)?;
    let evaluation = evaluate_round(cfg, backend, &state, &coalitions)?;
    let table = &evaluation.table;

    let w_n = table.grand_worth()?;
    let vcg = vcg_surplus(table)?;
    let acc_n = table
        .accuracy(grand)
        .ok_or_else(|| Error::MissingCoalition(grand.to_string()))?;
    let observed_valuations: Vec<f64> = (0..n)
        .map(|i| valuation(acc_n, evaluation.solo_observed[i], cfg.k[i]))
        .collect::<Result<_>>()?;

    let qp_start = Instant::now();
    let (surplus_vec, pi0, eps, payments) = match cfg.mode {
        Mode::Exact | Mode::Sampled => {
            let constraints = full_constraints(table)?;
            let surplus = solve_core_selecting(&constraints, &vcg, w_n, &cfg.solver)?;
            let pay = payments_from_surplus(&surplus, &observed_valuations)?;
            // budget identity: sum p = b0 - pi0, and the QP kept pi0 >= 0
            let expected = cfg.b0 - surplus.pi0;
            if (pay.budget_spent - expected).abs() > 1e-6 || pay.budget_spent > cfg.b0 + 1e-6 {
                return Err(Error::Solver {
                    status: "optimal".into(),
                    diagnostics: format!(
                        "budget identity violated: sum p = {}, b0 - pi0 = {expected}",
                        pay.budget_spent
                    ),
                });
            }
            (surplus.pi.clone(), surplus.pi0, surplus.eps, pay.p)
        }
        Mode::VcgOnly => {
            let mut payments = Vec::with_capacity(n);
            for i in 0..n {
                let drop = grand.without(i);
                let drop_vals: Vec<f64> = if drop.is_empty() {
                    vec![0.0; n]
                } else {
                    let acc_drop = table
                        .accuracy(drop)
                        .ok_or_else(|| Error::MissingCoalition(drop.to_string()))?;
                    (0..n)
                        .map(|j| valuation(acc_drop, evaluation.solo_observed[j], cfg.k[j]))
                        .collect::<Result<_>>()?
                };
                payments.push(vcg_payment(i, &observed_valuations, &drop_vals));
            }
            let surplus: Vec<f64> = observed_valuations
                .iter()
                .zip(&payments)
                .map(|(v, p)| v + p)
                .collect();
            let pi0 = cfg.b0 - payments.iter().sum::<f64>();
            (surplus, pi0, 0.0, payments)
        }
    };
    let qp_ms = qp_start.elapsed().as_secs_f64() * 1e3;

    let core_acc = if table.is_complete() && cfg.mode != Mode::VcgOnly {
        let sv = SurplusVector::new(surplus_vec.clone(), pi0, eps, w_n)?;
        Some(core_accuracy(&sv, table)?)
    } else {
        None
    };

    let reputation = update_reputation(&state.reputation, &surplus_vec, cfg.phi0)?;
    let accumulated_payments: Vec<f64> = state
        .accumulated_payments
        .iter()
        .zip(&payments)
        .map(|(acc, p)| acc + p)
        .collect();
    let actual_utilities: Vec<f64> = (0..n)
        .map(|i| {
            Ok(valuation(acc_n, evaluation.solo_truthful[i], cfg.k[i])? + payments[i])
        })
        .collect::<Result<_>>()?;
    let accumulated_utilities: Vec<f64> = state
        .accumulated_utilities
        .iter()
        .zip(&actual_utilities)
        .map(|(acc, u)| acc + u)
        .collect();

    let report = RoundReport {
        round: state.round + 1,
        coalition_count: coalitions.len(),
        accuracies: coalitions
            .iter()
            .map(|s| (s.bits(), table.accuracy(*s).unwrap_or(f64::NAN)))
            .collect(),
        w: coalitions
            .iter()
            .map(|s| Ok((s.bits(), table.worth(*s)?)))
            .collect::<Result<_>>()?,
        vcg_surplus: vcg,
        surplus: surplus_vec,
        pi0,
        eps,
        payments,
        observed_valuations,
        actual_utilities,
        accumulated_payments: accumulated_payments.clone(),
        reputations: reputation.r.clone(),
        core_accuracy: core_acc,
        wall_times: WallTimes {
            train_ms: evaluation.train_ms,
            aggregate_eval_ms: evaluation.eval_ms,
            qp_ms,
        },
    };

    state.round += 1;
    if let Some(global) = evaluation.new_global {
        state.global = Some(global);
    }
    state.reputation = reputation;
    state.accumulated_payments = accumulated_payments;
    state.accumulated_utilities = accumulated_utilities;
    Ok((state, report))
}

/// Result of a full simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub reports: Vec<RoundReport>,
    pub accumulated_payments: Vec<f64>,
    pub accumulated_utilities: Vec<f64>,
}

/// Run `rounds` sequential mechanism rounds, threading the global model,
/// reputations, and accumulated accounts.
pub fn run_simulation(cfg: &MechanismConfig, backend: &Backend) -> Result<SimulationOutput> {
    let mut state = initial_state(cfg, backend)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (next, report) = run_round(state, cfg, backend)?;
        state = next;
        reports.push(report);
    }
    Ok(SimulationOutput {
        reports,
        accumulated_payments: state.accumulated_payments,
        accumulated_utilities: state.accumulated_utilities,
    })
}

/// One `(m, seed)` cell of the exact-vs-sampled comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub m: usize,
    pub seed: u64,
    pub sigma2_exact: f64,
    pub sigma2_sampled: f64,
    /// `sigma2_exact - sigma2_sampled` (sampling relaxes the program, so
    /// this gap is non-negative up to solver tolerance).
    pub sigma2_error: f64,
    pub core_accuracy: f64,
    pub sampled_time_ms: f64,
}

/// For each seed build one full characteristic table, solve the exact
/// program, then re-solve over sampled constraint sets for every `m` in the
/// grid. Sampling seeds are fixed per run seed so the samples are nested
/// across the grid.
pub fn run_exact_vs_sampled(
    cfg: &MechanismConfig,
    backend: &Backend,
    m_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>> {
    if cfg.n > 12 {
        return Err(Error::capability(
            "exact-vs-sampled comparison enumerates all coalitions; n <= 12 required",
        ));
    }
    let n = cfg.n;
    let grand = Coalition::full(n);
    let total = (1usize << n) - 1;
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.mode = Mode::Exact;
        run_cfg.seed = seed;
        let state = initial_state(&run_cfg, backend)?;
        let coalitions = round_coalitions(&run_cfg, 0)?;
        let evaluation = evaluate_round(&run_cfg, backend, &state, &coalitions)?;
        let table = evaluation.table;
        let vcg = vcg_surplus(&table)?;
        let w_n = table.grand_worth()?;

        let exact =
            solve_core_selecting(&full_constraints(&table)?, &vcg, w_n, &cfg.solver)?;
        let sigma2_exact = exact.sigma_squared(&vcg);

        let sampling_seed = derive_seed(seed, SeedDomain::Sampling, 0);
        for &m in m_grid {
            let m = m.min(total).max(1);
            let start = Instant::now();
            let mut set: std::collections::BTreeSet<Coalition> =
                sample_coalitions(n, m, sampling_seed)?.into_iter().collect();
            set.insert(grand);
            for i in 0..n {
                let drop = grand.without(i);
                if !drop.is_empty() {
                    set.insert(drop);
                }
            }
            let constraints: Vec<(Coalition, f64)> = set
                .iter()
                .map(|s| Ok((*s, table.worth(*s)?)))
                .collect::<Result<_>>()?;
            let sampled = solve_core_selecting(&constraints, &vcg, w_n, &cfg.solver)?;
            let sampled_time_ms = start.elapsed().as_secs_f64() * 1e3;
            let sigma2_sampled = sampled.sigma_squared(&vcg);
            rows.push(ComparisonRow {
                m,
                seed,
                sigma2_exact,
                sigma2_sampled,
                sigma2_error: sigma2_exact - sigma2_sampled,
                core_accuracy: core_accuracy(&sampled, &table)?,
                sampled_time_ms,
            });
        }
    }
    Ok(rows)
}

/// Stream round reports to CSV, one row per participant per round.
///
/// Fixed header `round,participant,v,pi,p,P,R,eps,core_accuracy`; the last
/// column is empty when the round had no full table.
pub fn write_rounds_csv<W: Write>(reports: &[RoundReport], mut out: W) -> Result<()> {
    writeln!(out, "round,participant,v,pi,p,P,R,eps,core_accuracy")?;
    for report in reports {
        for i in 0..report.surplus.len() {
            let core = report
                .core_accuracy
                .map_or(String::new(), |c| c.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                report.round,
                i,
                report.observed_valuations[i],
                report.surplus[i],
                report.payments[i],
                report.accumulated_payments[i],
                report.reputations[i],
                report.eps,
                core
            )?;
        }
    }
    Ok(())
}
