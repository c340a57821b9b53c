//! QoE oracles: map a slice and an allocation to a `(delay, throughput)`
//! sample. The analytic oracle treats each stage as an M/M/1 queue; the
//! simulation oracle runs the discrete-event simulator.

use crate::domain::{AllocationMatrix, AllocationVector, QoeSample, Scenario, SliceId, SliceSpec, Topology};
use crate::error::{Error, Result};
use crate::penalty::PenaltyModel;
use crate::sim::{run_sim_slices, summarize, SimConfig, Statistic};

/// Pure given the seed: the same inputs always yield the same sample.
pub trait QoeOracle: Sync {
    fn evaluate(&self, slice: SliceId, alloc: &AllocationMatrix, seed: u64) -> Result<QoeSample>;
}

/// Per-stage M/M/1 parameters of one slice at one allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mm1Stages {
    /// Arrival rate in requests per second.
    pub lambda: f64,
    /// Service rate of each edge queue, packets per second.
    pub link_mu: Vec<f64>,
    /// Service rate of the server queue, requests per second.
    pub server_mu: f64,
    /// d(mu_e)/d(f_e) per edge.
    link_slope: Vec<f64>,
    /// d(mu_srv)/d(phi_c) per core.
    core_slope: Vec<f64>,
}

impl Mm1Stages {
    pub fn new(slice: &SliceSpec, alloc: &AllocationVector, topology: &Topology) -> Result<Self> {
        let expected = topology.dim();
        if alloc.flows.len() != topology.edges.len() || alloc.cpu.len() != topology.cores.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: alloc.dim(),
            });
        }
        let bits = 8.0 * slice.traffic.mean_size_bytes();
        let link_slope: Vec<f64> = topology
            .edges
            .iter()
            .map(|e| e.capacity_mbps * 1e6 / bits)
            .collect();
        let core_slope: Vec<f64> = topology
            .cores
            .iter()
            .map(|c| c.mips / slice.demand_mi)
            .collect();
        Ok(Mm1Stages {
            lambda: slice.traffic.mean_rate,
            link_mu: alloc.flows.iter().zip(&link_slope).map(|(f, k)| f * k).collect(),
            server_mu: alloc.cpu.iter().zip(&core_slope).map(|(p, k)| p * k).sum(),
            link_slope,
            core_slope,
        })
    }

    pub fn is_stable(&self) -> bool {
        self.link_mu.iter().chain([&self.server_mu]).all(|&mu| mu > self.lambda)
    }

    /// Sum of mean sojourn times in ms, or infinity when any stage is unstable.
    pub fn mean_delay_ms(&self) -> f64 {
        if !self.is_stable() {
            return f64::INFINITY;
        }
        self.link_mu
            .iter()
            .chain([&self.server_mu])
            .map(|mu| 1e3 / (mu - self.lambda))
            .sum()
    }

    /// 1 when stable, else the bottleneck's capped service fraction `mu / lambda`.
    pub fn throughput(&self) -> f64 {
        if self.is_stable() {
            1.0
        } else {
            (self.bottleneck().1 / self.lambda).min(1.0)
        }
    }

    /// `(stage index, mu)` of the slowest stage; the server is index `n_edges`.
    fn bottleneck(&self) -> (usize, f64) {
        self.link_mu
            .iter()
            .chain([&self.server_mu])
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, mu)| if mu < acc.1 { (i, mu) } else { acc })
    }

    /// Gradient of the mean delay (ms) with respect to the allocation
    /// coordinates; only meaningful when stable.
    fn delay_gradient(&self) -> Vec<f64> {
        let lam = self.lambda;
        let links = self
            .link_mu
            .iter()
            .zip(&self.link_slope)
            .map(|(mu, k)| -1e3 * k / (mu - lam).powi(2));
        let srv = 1e3 / (self.server_mu - lam).powi(2);
        let cores = self.core_slope.iter().map(|k| -srv * k);
        links.chain(cores).collect()
    }

    /// Gradient of the throughput estimate; non-zero only when unstable
    /// and below 1.
    fn throughput_gradient(&self) -> Vec<f64> {
        let n_edges = self.link_mu.len();
        let mut g = vec![0.0; n_edges + self.core_slope.len()];
        if self.is_stable() || self.throughput() >= 1.0 {
            return g;
        }
        let (stage, _) = self.bottleneck();
        if stage < n_edges {
            g[stage] = self.link_slope[stage] / self.lambda;
        } else {
            for (c, k) in self.core_slope.iter().enumerate() {
                g[n_edges + c] = k / self.lambda;
            }
        }
        g
    }
}

/// Two-stage M/M/1 evaluation. An unstable stage yields the unbounded delay
/// marker and throughput `min(1, mu/lambda)` of the bottleneck.
pub fn analytic_mm1_evaluate(
    slice: &SliceSpec,
    alloc: &AllocationVector,
    topology: &Topology,
) -> Result<QoeSample> {
    let st = Mm1Stages::new(slice, alloc, topology)?;
    Ok(QoeSample {
        delay_ms: st.mean_delay_ms(),
        throughput: st.throughput(),
        n_requests: 0,
        raw_delays: None,
        seed: 0,
    })
}

/// Closed-form gradient of a penalty composed with the analytic oracle.
pub fn analytic_penalty_gradient(
    model: &PenaltyModel,
    slice: &SliceSpec,
    alloc: &AllocationVector,
    topology: &Topology,
) -> Result<Vec<f64>> {
    let st = Mm1Stages::new(slice, alloc, topology)?;
    let mut g = vec![0.0; alloc.dim()];
    let delay = st.mean_delay_ms();
    if delay < model.delay_cap_ms {
        let w = model.alpha_tau * model.hinge_slope(model.delay_excess(delay));
        if w > 0.0 {
            for (gi, dd) in g.iter_mut().zip(st.delay_gradient()) {
                *gi += w * dd;
            }
        }
    }
    let w = model.alpha_rho * model.hinge_slope(model.throughput_deficit(st.throughput()));
    if w > 0.0 {
        for (gi, dt) in g.iter_mut().zip(st.throughput_gradient()) {
            *gi -= w * dt;
        }
    }
    Ok(g)
}

/// Analytic M/M/1 oracle; ignores the seed and the other slices' rows.
#[derive(Clone, Debug)]
pub struct AnalyticOracle {
    scenario: Scenario,
}

impl AnalyticOracle {
    pub fn new(scenario: Scenario) -> Self {
        AnalyticOracle { scenario }
    }

    pub fn penalty_gradient(
        &self,
        model: &PenaltyModel,
        slice: SliceId,
        alloc: &AllocationMatrix,
    ) -> Result<Vec<f64>> {
        analytic_penalty_gradient(
            model,
            self.scenario.slice(slice)?,
            alloc.row(slice)?,
            self.scenario.topology(),
        )
    }
}

impl QoeOracle for AnalyticOracle {
    fn evaluate(&self, slice: SliceId, alloc: &AllocationMatrix, seed: u64) -> Result<QoeSample> {
        let mut s = analytic_mm1_evaluate(
            self.scenario.slice(slice)?,
            alloc.row(slice)?,
            self.scenario.topology(),
        )?;
        s.seed = seed;
        Ok(s)
    }
}

/// Runs the simulator for one slice and reduces it to a sample.
pub fn sim_evaluate(
    scenario: &Scenario,
    slice: SliceId,
    alloc: &AllocationMatrix,
    config: &SimConfig,
    statistic: Statistic,
    seed: u64,
) -> Result<QoeSample> {
    let runs = run_sim_slices(scenario, alloc, &config.with_seed(seed), &[slice])?;
    Ok(summarize(&runs[0], statistic, seed))
}

#[derive(Clone, Debug)]
pub struct SimOracle {
    pub scenario: Scenario,
    pub config: SimConfig,
    pub statistic: Statistic,
}

impl QoeOracle for SimOracle {
    fn evaluate(&self, slice: SliceId, alloc: &AllocationMatrix, seed: u64) -> Result<QoeSample> {
        sim_evaluate(&self.scenario, slice, alloc, &self.config, self.statistic, seed)
    }
}
