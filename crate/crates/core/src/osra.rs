//! Online slice reconfiguration: projected gradient steps that move resources
//! from lower-priority slices to a newly admitted slice whose QoE response is
//! unknown and must be probed.
//!
//! Each step:
//! 1. takes the penalty gradient of every lower-priority slice from its model
//!    (the analytic oracle by default),
//! 2. estimates the new slice's penalty gradient by central differences on
//!    the stochastic oracle, recording every probe in [`ProbeMemory`],
//! 3. updates the rows according to the [`TransferRule`] and projects the
//!    matrix back onto the capacity constraints.
//!
//! The loop stops at the first step whose transfer norm is `<= epsilon`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{AllocationMatrix, AllocationVector, QoeSample, Scenario, SliceId};
use crate::error::{Error, Result};
use crate::oracle::{AnalyticOracle, QoeOracle, SimOracle};
use crate::penalty::{penalty, penalty_gradient, Exponent, PenaltyModel, ProbeRecord, DEFAULT_DELAY_CAP_MS};
use crate::projection::{project_constraint_set, ConstraintSet};
use crate::seed;
use crate::sim::{SimConfig, Statistic};

/// Below this norm the new slice's gradient is treated as zero.
pub const ZERO_GRADIENT: f64 = 1e-12;

const PROBE_TAG: u64 = 0x5052_4F42; // "PROB"
const EVAL_TAG: u64 = 0x4556_414C; // "EVAL"

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferRule {
    /// `s_j += (sum_i eta_i g_i) / |g_j|`, taken literally.
    #[default]
    Algorithm1,
    /// `s_j += sum_i eta_i g_i`: exactly what the lower slices give up.
    Conservative,
    /// Each lower slice hands over coordinate `d` at rate
    /// `eta_i * max(0, g_i[d] - g_j[d]) / |g_j|`, capped by what it holds.
    Exchange,
}

impl fmt::Display for TransferRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferRule::Algorithm1 => "algorithm1",
            TransferRule::Conservative => "conservative",
            TransferRule::Exchange => "exchange",
        })
    }
}

impl FromStr for TransferRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "algorithm1" => Ok(TransferRule::Algorithm1),
            "conservative" => Ok(TransferRule::Conservative),
            "exchange" => Ok(TransferRule::Exchange),
            _ => Err(format!(
                "unknown transfer rule {s:?} (expected algorithm1, conservative or exchange)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepDecay {
    #[default]
    Constant,
    /// `eta / sqrt(k)`.
    InvSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceStep {
    pub slice: SliceId,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OsraConfig {
    pub transfer_rule: TransferRule,
    pub statistic: Statistic,
    pub exponent: Exponent,
    /// Step size for every lower-priority slice without an override.
    pub eta: f64,
    pub eta_decay: StepDecay,
    pub delta: f64,
    pub probes: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub delay_cap_ms: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eta_per_slice: Vec<SliceStep>,
}

impl Default for OsraConfig {
    fn default() -> Self {
        OsraConfig {
            transfer_rule: TransferRule::default(),
            statistic: Statistic::Max,
            exponent: Exponent::Quadratic,
            eta: 0.05,
            eta_decay: StepDecay::Constant,
            delta: 0.02,
            probes: 10,
            epsilon: 1e-3,
            max_iters: 30,
            delay_cap_ms: DEFAULT_DELAY_CAP_MS,
            eta_per_slice: Vec::new(),
        }
    }
}

impl OsraConfig {
    /// Step size of slice `id` at iteration `k` (1-based).
    pub fn eta_for(&self, id: SliceId, k: usize) -> f64 {
        let base = self
            .eta_per_slice
            .iter()
            .find(|s| s.slice == id)
            .map_or(self.eta, |s| s.eta);
        match self.eta_decay {
            StepDecay::Constant => base,
            StepDecay::InvSqrt => base / (k.max(1) as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.delta > 0.0) {
            bad.push(format!("delta must be > 0, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0) {
            bad.push(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.max_iters < 1 {
            bad.push("max_iters must be >= 1".to_string());
        }
        if self.probes < 1 {
            bad.push("probes must be >= 1".to_string());
        }
        if !(self.delay_cap_ms > 0.0) {
            bad.push("delay_cap_ms must be > 0".to_string());
        }
        for s in std::iter::once(self.eta).chain(self.eta_per_slice.iter().map(|s| s.eta)) {
            if !(s >= 0.0 && s.is_finite()) {
                bad.push(format!("step sizes must be finite and >= 0, got {s}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(
                bad.into_iter()
                    .map(|m| crate::domain::InvariantViolation {
                        field: "osra".into(),
                        message: m,
                    })
                    .collect(),
            ))
        }
    }

    pub fn penalty_model(&self, spec: &crate::domain::SliceSpec) -> PenaltyModel {
        PenaltyModel {
            delay_cap_ms: self.delay_cap_ms,
            ..PenaltyModel::for_slice(spec, self.exponent)
        }
    }
}

/// Penalty gradient of a slice whose QoE map is modelled (not probed).
pub trait SliceGradient: Sync {
    fn gradient(&self, slice: SliceId, alloc: &AllocationMatrix) -> Result<Vec<f64>>;
}

impl<F> SliceGradient for F
where
    F: Fn(SliceId, &AllocationMatrix) -> Result<Vec<f64>> + Sync,
{
    fn gradient(&self, slice: SliceId, alloc: &AllocationMatrix) -> Result<Vec<f64>> {
        self(slice, alloc)
    }
}

/// Analytic M/M/1 gradients for a set of slices.
pub struct AnalyticGradients {
    pub oracle: AnalyticOracle,
    pub models: BTreeMap<SliceId, PenaltyModel>,
}

impl SliceGradient for AnalyticGradients {
    fn gradient(&self, slice: SliceId, alloc: &AllocationMatrix) -> Result<Vec<f64>> {
        let model = self.models.get(&slice).ok_or(Error::UnknownSlice(slice))?;
        self.oracle.penalty_gradient(model, slice, alloc)
    }
}

/// Append-only record of every probe of the new slice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeMemory {
    records: Vec<ProbeRecord>,
}

impl ProbeMemory {
    pub fn extend(&mut self, records: impl IntoIterator<Item = ProbeRecord>) {
        self.records.extend(records);
    }

    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Re-evaluates every recorded point with its seed and reports whether
    /// all samples come back identical. `template` supplies the other rows.
    pub fn replay(
        &self,
        oracle: &dyn QoeOracle,
        slice: SliceId,
        template: &AllocationMatrix,
    ) -> Result<bool> {
        for r in &self.records {
            let m = template.with_row(slice, r.point.clone());
            let mut s = oracle.evaluate(slice, &m, r.seed)?;
            s.raw_delays = None;
            if s != r.sample {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Everything the iteration needs besides the allocation itself.
pub struct OsraProblem<'a> {
    pub new_slice: SliceId,
    /// Lower-priority slices in priority order; only these give resources.
    pub lower: Vec<SliceId>,
    pub constraints: ConstraintSet,
    pub existing: &'a dyn SliceGradient,
    pub new_model: PenaltyModel,
    pub probe_oracle: &'a dyn QoeOracle,
    /// Measures every slice's QoE at each iterate for the trace.
    pub measure: &'a dyn QoeOracle,
    /// Penalty models used to score the measured samples.
    pub models: BTreeMap<SliceId, PenaltyModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceTrace {
    pub slice: SliceId,
    pub sample: QoeSample,
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
    pub penalty: f64,
    /// Empty for slices that neither give nor receive.
    pub gradient: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub k: usize,
    /// Allocation at the start of the iteration.
    pub alloc: AllocationMatrix,
    pub slices: Vec<SliceTrace>,
    /// What the new slice is pushed by before projection.
    pub transfer: Vec<f64>,
    pub stop_metric: f64,
    pub new_gradient_norm: f64,
    /// Sum over all slices of the pre-projection change, per coordinate.
    pub net_change: Vec<f64>,
    /// The algorithm1 rule fell back to the conservative update.
    pub fallback: bool,
}

impl IterationTrace {
    pub fn slice(&self, id: SliceId) -> Option<&SliceTrace> {
        self.slices.iter().find(|s| s.slice == id)
    }
}

#[derive(Clone, Debug)]
pub struct OsraState {
    /// Index of the next iteration, starting at 1.
    pub k: usize,
    pub alloc: AllocationMatrix,
    pub memory: ProbeMemory,
}

impl OsraState {
    pub fn new(alloc: AllocationMatrix) -> Self {
        OsraState {
            k: 1,
            alloc,
            memory: ProbeMemory::default(),
        }
    }
}

pub fn probe_seeds(run_seed: u64, k: usize, probes: usize) -> Vec<u64> {
    (0..probes as u64)
        .map(|r| seed::derive(&[run_seed, PROBE_TAG, k as u64, r]))
        .collect()
}

/// Seed used to measure QoE at every iterate of one run. Constant across
/// iterations so successive iterates see the same traffic.
pub fn eval_seed(run_seed: u64) -> u64 {
    seed::derive(&[run_seed, EVAL_TAG])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn measure_slice(
    problem: &OsraProblem<'_>,
    id: SliceId,
    alloc: &AllocationMatrix,
    seed: u64,
) -> Result<(QoeSample, f64, f64, f64)> {
    let mut sample = problem.measure.evaluate(id, alloc, seed)?;
    let (mean, max) = match sample.raw_delays.take() {
        Some(d) if !d.is_empty() => (
            Statistic::Mean.of(&d),
            Statistic::Max.of(&d),
        ),
        Some(_) => (f64::INFINITY, f64::INFINITY),
        None => (sample.delay_ms, sample.delay_ms),
    };
    let pen = problem
        .models
        .get(&id)
        .map_or(0.0, |m| penalty(m, &sample));
    Ok((sample, mean, max, pen))
}

/// Measures every slice at `alloc` (the per-iteration QoE record).
pub fn measure_all(
    problem: &OsraProblem<'_>,
    alloc: &AllocationMatrix,
    seed: u64,
) -> Result<Vec<SliceTrace>> {
    alloc
        .ids()
        .map(|id| {
            let (sample, mean, max, pen) = measure_slice(problem, id, alloc, seed)?;
            Ok(SliceTrace {
                slice: id,
                sample,
                mean_delay_ms: mean,
                max_delay_ms: max,
                penalty: pen,
                gradient: Vec::new(),
            })
        })
        .collect()
}

/// One reconfiguration step from `state`.
pub fn osra_step(
    state: OsraState,
    problem: &OsraProblem<'_>,
    config: &OsraConfig,
    run_seed: u64,
) -> Result<(OsraState, IterationTrace)> {
    let OsraState { k, alloc, mut memory } = state;
    let j = problem.new_slice;
    let dim = problem.constraints.dim();
    let n_edges = problem.constraints.n_edges;

    let mut lower_grads = Vec::with_capacity(problem.lower.len());
    for &i in &problem.lower {
        let g = problem.existing.gradient(i, &alloc)?;
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
        lower_grads.push((i, config.eta_for(i, k), g));
    }

    let est = penalty_gradient(
        &problem.new_model,
        problem.probe_oracle,
        j,
        &alloc,
        config.delta,
        &probe_seeds(run_seed, k, config.probes),
    )?;
    memory.extend(est.probes);
    let gj = est.gradient;
    let gj_norm = norm(&gj);

    let mut rows: BTreeMap<SliceId, Vec<f64>> = alloc.iter().map(|(id, v)| (id, v.coords())).collect();
    let mut transfer = vec![0.0; dim];
    let mut fallback = false;
    let stop_metric;

    match config.transfer_rule {
        TransferRule::Algorithm1 | TransferRule::Conservative => {
            for (i, eta, g) in &lower_grads {
                let row = rows.get_mut(i).ok_or(Error::UnknownSlice(*i))?;
                for d in 0..dim {
                    row[d] -= eta * g[d];
                    transfer[d] += eta * g[d];
                }
            }
            stop_metric = norm(&transfer);
            let scale = match config.transfer_rule {
                TransferRule::Algorithm1 if gj_norm >= ZERO_GRADIENT => 1.0 / gj_norm,
                TransferRule::Algorithm1 => {
                    fallback = true;
                    1.0
                }
                _ => 1.0,
            };
            for t in transfer.iter_mut() {
                *t *= scale;
            }
        }
        TransferRule::Exchange => {
            if gj_norm >= ZERO_GRADIENT {
                for (i, eta, g) in &lower_grads {
                    let row = rows.get_mut(i).ok_or(Error::UnknownSlice(*i))?;
                    for d in 0..dim {
                        let give = (eta * (g[d] - gj[d]).max(0.0) / gj_norm).min(row[d].max(0.0));
                        row[d] -= give;
                        transfer[d] += give;
                    }
                }
            }
            stop_metric = norm(&transfer);
        }
    }
    {
        let row = rows.get_mut(&j).ok_or(Error::UnknownSlice(j))?;
        for d in 0..dim {
            row[d] += transfer[d];
        }
    }

    let net_change: Vec<f64> = (0..dim)
        .map(|d| {
            rows.iter()
                .map(|(id, r)| r[d] - alloc.get(*id).map_or(0.0, |v| v.coord(d)))
                .sum()
        })
        .collect();

    let pre: AllocationMatrix = rows
        .into_iter()
        .map(|(id, r)| (id, AllocationVector::from_coords(n_edges, &r)))
        .collect();
    let next = project_constraint_set(&pre, &problem.constraints)?;

    let mut slices = measure_all(problem, &alloc, eval_seed(run_seed))?;
    for st in slices.iter_mut() {
        if st.slice == j {
            st.gradient = gj.clone();
        } else if let Some((_, _, g)) = lower_grads.iter().find(|(i, _, _)| *i == st.slice) {
            st.gradient = g.clone();
        }
    }

    let trace = IterationTrace {
        k,
        alloc,
        slices,
        transfer,
        stop_metric,
        new_gradient_norm: gj_norm,
        net_change,
        fallback,
    };
    Ok((
        OsraState {
            k: k + 1,
            alloc: next,
            memory,
        },
        trace,
    ))
}

#[derive(Clone, Debug)]
pub struct OsraOutcome {
    pub run_seed: u64,
    pub final_alloc: AllocationMatrix,
    pub traces: Vec<IterationTrace>,
    /// QoE measured at `final_alloc` with the same seed as the traces.
    pub final_qoe: Vec<SliceTrace>,
    pub converged: bool,
    /// The cap was hit before the stopping criterion; the trace is complete.
    pub max_iters_exceeded: bool,
    pub memory: ProbeMemory,
}

impl OsraOutcome {
    pub fn iterations(&self) -> usize {
        self.traces.len()
    }

    /// Measured QoE series of one slice: each iterate, then the final point.
    pub fn qoe_series(&self, id: SliceId) -> Vec<&SliceTrace> {
        self.traces
            .iter()
            .filter_map(|t| t.slice(id))
            .chain(self.final_qoe.iter().filter(|s| s.slice == id))
            .collect()
    }
}

/// Iterates [`osra_step`] until the stop metric drops to `epsilon` or
/// `max_iters` steps have run.
pub fn run_osra_with(
    problem: &OsraProblem<'_>,
    initial: AllocationMatrix,
    config: &OsraConfig,
    run_seed: u64,
) -> Result<OsraOutcome> {
    config.validate()?;
    let mut state = OsraState::new(initial);
    let mut traces = Vec::new();
    let mut converged = false;
    while traces.len() < config.max_iters {
        let (next, trace) = osra_step(state, problem, config, run_seed)?;
        state = next;
        let stop = trace.stop_metric <= config.epsilon;
        traces.push(trace);
        if stop {
            converged = true;
            break;
        }
    }
    let final_qoe = measure_all(problem, &state.alloc, eval_seed(run_seed))?;
    Ok(OsraOutcome {
        run_seed,
        final_alloc: state.alloc,
        traces,
        final_qoe,
        converged,
        max_iters_exceeded: !converged,
        memory: state.memory,
    })
}

/// Oracles and models for a scenario: analytic gradients for the existing
/// slices, simulation probes for the new one, simulation for measurement.
pub struct ScenarioOracles {
    pub analytic: AnalyticGradients,
    pub sim: SimOracle,
    pub models: BTreeMap<SliceId, PenaltyModel>,
}

impl ScenarioOracles {
    pub fn new(scenario: &Scenario, sim: &SimConfig, config: &OsraConfig) -> Self {
        let models: BTreeMap<_, _> = scenario
            .slices()
            .iter()
            .map(|s| (s.id, config.penalty_model(s)))
            .collect();
        ScenarioOracles {
            analytic: AnalyticGradients {
                oracle: AnalyticOracle::new(scenario.clone()),
                models: models.clone(),
            },
            sim: SimOracle {
                scenario: scenario.clone(),
                config: sim.clone(),
                statistic: config.statistic,
            },
            models,
        }
    }

    pub fn problem(&self, scenario: &Scenario, new_slice: SliceId) -> Result<OsraProblem<'_>> {
        let topo = scenario.topology();
        let new_model = *self.models.get(&new_slice).ok_or(Error::UnknownSlice(new_slice))?;
        Ok(OsraProblem {
            new_slice,
            lower: scenario.lower_priority_than(new_slice)?,
            constraints: ConstraintSet::new(topo.edges.len(), topo.cores.len()),
            existing: &self.analytic,
            new_model,
            probe_oracle: &self.sim,
            measure: &self.sim,
            models: self.models.clone(),
        })
    }
}

/// Runs the reconfiguration on a scenario with the default oracles.
pub fn run_osra(
    scenario: &Scenario,
    initial: AllocationMatrix,
    new_slice: SliceId,
    sim: &SimConfig,
    config: &OsraConfig,
    run_seed: u64,
) -> Result<OsraOutcome> {
    crate::domain::validate_alloc(scenario, &initial)?;
    let oracles = ScenarioOracles::new(scenario, sim, config);
    let problem = oracles.problem(scenario, new_slice)?;
    run_osra_with(&problem, initial, config, run_seed)
}
