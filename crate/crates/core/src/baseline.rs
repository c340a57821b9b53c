//! Static M/M/1 sizing baseline and the delay-violation report used to
//! compare allocations.
//!
//! The baseline sizes each slice in isolation: the delay bound is split
//! between the network (shared evenly over the edges) and the server, and
//! each stage gets the smallest service rate whose M/M/1 sojourn time meets
//! its share, `mu = lambda + 1/W`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AllocationMatrix, AllocationVector, Scenario, SliceId, SliceSpec, Topology};
use crate::error::{Error, Result};
use crate::sim::{run_sim, SimConfig};

/// Headroom applied to the arrival rate of slices without a delay bound.
pub const UNBOUNDED_HEADROOM: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Mm1Sizing {
    pub slice: SliceId,
    pub alloc: AllocationVector,
    /// Some share had to be clamped to 1, so the bound is not met.
    pub clamped: bool,
}

/// Smallest allocation meeting the slice's delay bound under the M/M/1
/// model, with fraction `budget_split` of the bound given to the network.
///
/// Returns [`Error::InfeasibleDemand`] carrying the clamped sizing when
/// some share would exceed 1.
pub fn mm1_demand(slice: &SliceSpec, topology: &Topology, budget_split: f64) -> Result<Mm1Sizing> {
    if !(budget_split > 0.0 && budget_split < 1.0) {
        return Err(Error::Invalid(vec![crate::domain::InvariantViolation {
            field: "baseline.budget_split".into(),
            message: format!("must lie in (0, 1), got {budget_split}"),
        }]));
    }
    let lambda = slice.traffic.mean_rate;
    let n_edges = topology.edges.len().max(1) as f64;
    let (mu_link, mu_srv) = match slice.requirement.tau_ms.ms() {
        Some(tau) => (
            lambda + 1e3 / (tau * budget_split / n_edges),
            lambda + 1e3 / (tau * (1.0 - budget_split)),
        ),
        None => (UNBOUNDED_HEADROOM * lambda, UNBOUNDED_HEADROOM * lambda),
    };
    let bits = 8.0 * slice.traffic.mean_size_bytes();
    let total_mips: f64 = topology.cores.iter().map(|c| c.mips).sum();
    let flows: Vec<f64> = topology
        .edges
        .iter()
        .map(|e| mu_link * bits / (e.capacity_mbps * 1e6))
        .collect();
    let phi = mu_srv * slice.demand_mi / total_mips;
    let cpu = vec![phi; topology.cores.len()];

    let clamped = flows.iter().chain(&cpu).any(|&x| x > 1.0);
    let sizing = Mm1Sizing {
        slice: slice.id,
        alloc: AllocationVector {
            flows: flows.into_iter().map(|x| x.min(1.0)).collect(),
            cpu: cpu.into_iter().map(|x| x.min(1.0)).collect(),
        },
        clamped,
    };
    if clamped {
        Err(Error::InfeasibleDemand {
            slice: slice.id,
            clamped: sizing,
        })
    } else {
        Ok(sizing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePlan {
    pub alloc: AllocationMatrix,
    /// Per slice: its own sizing was clamped, or a column it uses had to be
    /// scaled down to fit.
    pub infeasible: BTreeMap<SliceId, bool>,
}

/// Sizes every slice and scales down any over-full column proportionally.
pub fn baseline_allocation(scenario: &Scenario, budget_split: f64) -> Result<BaselinePlan> {
    let topo = scenario.topology();
    let mut alloc = AllocationMatrix::new();
    let mut infeasible = BTreeMap::new();
    for s in scenario.slices() {
        let sizing = match mm1_demand(s, topo, budget_split) {
            Ok(z) => z,
            Err(Error::InfeasibleDemand { clamped, .. }) => clamped,
            Err(e) => return Err(e),
        };
        infeasible.insert(s.id, sizing.clamped);
        alloc.insert(s.id, sizing.alloc);
    }
    for d in 0..topo.dim() {
        let sum = alloc.column_sum(d);
        if sum <= 1.0 {
            continue;
        }
        let ids: Vec<_> = alloc.ids().collect();
        for id in ids {
            let mut row = alloc.row(id)?.clone();
            let x = row.coord(d);
            if x > 0.0 {
                infeasible.insert(id, true);
            }
            row.set_coord(d, x / sum);
            alloc.insert(id, row);
        }
    }
    Ok(BaselinePlan { alloc, infeasible })
}

/// Delay histogram with fixed-width bins and one overflow bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_ms: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_ms: f64, n_bins: usize) -> Self {
        Histogram {
            bin_ms,
            counts: vec![0; n_bins + 1],
        }
    }

    pub fn add(&mut self, delay_ms: f64) {
        let last = self.counts.len() - 1;
        let i = (delay_ms / self.bin_ms).floor();
        let i = if i.is_finite() && i >= 0.0 { (i as usize).min(last) } else { last };
        self.counts[i] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Lower edge of bin `i`; the last bin is open above.
    pub fn lower_edge(&self, i: usize) -> f64 {
        i as f64 * self.bin_ms
    }
}

pub const HISTOGRAM_BIN_MS: f64 = 0.5;
pub const HISTOGRAM_BINS: usize = 40;

/// Per-slice delay-violation statistics of one or more simulation runs.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceViolation {
    pub slice: SliceId,
    pub offered: u64,
    pub succeeded: u64,
    /// Successful requests whose delay exceeded the bound.
    pub violations: u64,
    /// `violations / succeeded`; 0 with `empty` set when nothing succeeded.
    pub violation_fraction: f64,
    pub empty: bool,
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
    pub throughput: f64,
    pub histogram: Histogram,
    delay_sum_ms: f64,
}

impl SliceViolation {
    fn empty(slice: SliceId) -> Self {
        SliceViolation {
            slice,
            offered: 0,
            succeeded: 0,
            violations: 0,
            violation_fraction: 0.0,
            empty: true,
            mean_delay_ms: f64::NAN,
            max_delay_ms: f64::NAN,
            throughput: 1.0,
            histogram: Histogram::new(HISTOGRAM_BIN_MS, HISTOGRAM_BINS),
            delay_sum_ms: 0.0,
        }
    }

    fn finish(mut self) -> Self {
        self.empty = self.succeeded == 0;
        self.violation_fraction = if self.empty {
            0.0
        } else {
            self.violations as f64 / self.succeeded as f64
        };
        if !self.empty {
            self.mean_delay_ms = self.delay_sum_ms / self.succeeded as f64;
        }
        self.throughput = if self.offered == 0 {
            1.0
        } else {
            self.succeeded as f64 / self.offered as f64
        };
        self
    }

    /// Pools several runs of the same slice (request-weighted).
    pub fn pool<'a>(slice: SliceId, parts: impl IntoIterator<Item = &'a SliceViolation>) -> Self {
        let mut acc = SliceViolation::empty(slice);
        for p in parts {
            acc.offered += p.offered;
            acc.succeeded += p.succeeded;
            acc.violations += p.violations;
            acc.delay_sum_ms += p.delay_sum_ms;
            if !p.empty {
                acc.max_delay_ms = if acc.max_delay_ms.is_nan() {
                    p.max_delay_ms
                } else {
                    acc.max_delay_ms.max(p.max_delay_ms)
                };
            }
            acc.histogram.merge(&p.histogram);
        }
        acc.finish()
    }
}

/// Simulates the allocation once and scores every slice.
pub fn evaluate_allocation(
    scenario: &Scenario,
    alloc: &AllocationMatrix,
    sim: &SimConfig,
    seed: u64,
) -> Result<Vec<SliceViolation>> {
    let runs = run_sim(scenario, alloc, &sim.with_seed(seed))?;
    runs.iter()
        .map(|run| {
            let tau = scenario.slice(run.slice)?.requirement.tau_ms.ms();
            let mut v = SliceViolation::empty(run.slice);
            v.offered = run.offered;
            v.succeeded = run.succeeded;
            for &d in &run.delays_ms {
                v.delay_sum_ms += d;
                v.max_delay_ms = if v.max_delay_ms.is_nan() { d } else { v.max_delay_ms.max(d) };
                v.histogram.add(d);
                if tau.is_some_and(|t| d > t) {
                    v.violations += 1;
                }
            }
            Ok(v.finish())
        })
        .collect()
}

/// Scores per seed plus the pooled result across seeds.
#[derive(Clone, Debug)]
pub struct ViolationReport {
    pub per_seed: Vec<(u64, Vec<SliceViolation>)>,
    pub pooled: Vec<SliceViolation>,
}

impl ViolationReport {
    pub fn pooled(&self, id: SliceId) -> Option<&SliceViolation> {
        self.pooled.iter().find(|v| v.slice == id)
    }
}

/// Evaluates one allocation per seed (in parallel) and pools the results.
pub fn violation_report<F>(
    scenario: &Scenario,
    sim: &SimConfig,
    seeds: &[u64],
    alloc_for: F,
) -> Result<ViolationReport>
where
    F: Fn(u64) -> AllocationMatrix + Sync,
{
    let per_seed: Vec<(u64, Vec<SliceViolation>)> = seeds
        .par_iter()
        .map(|&s| Ok((s, evaluate_allocation(scenario, &alloc_for(s), sim, s)?)))
        .collect::<Result<_>>()?;
    let pooled = scenario
        .slices()
        .iter()
        .map(|spec| {
            SliceViolation::pool(
                spec.id,
                per_seed
                    .iter()
                    .flat_map(|(_, vs)| vs.iter().filter(|v| v.slice == spec.id)),
            )
        })
        .collect();
    Ok(ViolationReport { per_seed, pooled })
}
