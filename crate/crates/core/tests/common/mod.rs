//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use slicelab::{AllocationMatrix, QoeSample, Result, SliceId};
use slicelab::oracle::QoeOracle;

/// Euclidean projection onto `{x >= 0, sum(x) <= 1}` by enumerating every
/// active set: each subset of coordinates pinned at zero, with the sum
/// constraint either free or tight. The best feasible candidate wins.
pub fn brute_force_capped_simplex(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for zero_mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|i| zero_mask & (1 << i) == 0).collect();
        for tight in [false, true] {
            let mut x = vec![0.0; n];
            let shift = if tight {
                if free.is_empty() {
                    continue;
                }
                (free.iter().map(|&i| y[i]).sum::<f64>() - 1.0) / free.len() as f64
            } else {
                0.0
            };
            for &i in &free {
                x[i] = y[i] - shift;
            }
            let feasible = x.iter().all(|&v| v >= -1e-12) && x.iter().sum::<f64>() <= 1.0 + 1e-12;
            if !feasible {
                continue;
            }
            let obj: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("the origin is always feasible").1
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Deterministic oracle whose delay is an arbitrary function of the slice's
/// allocation coordinates, optionally plus seeded noise.
pub struct FnOracle<F: Fn(&[f64]) -> f64 + Sync> {
    pub delay: F,
    pub noise_std: f64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> QoeOracle for FnOracle<F> {
    fn evaluate(&self, slice: SliceId, alloc: &AllocationMatrix, seed: u64) -> Result<QoeSample> {
        use rand_distr::{Distribution, Normal};
        let x = alloc.row(slice)?.coords();
        let mut d = (self.delay)(&x);
        if self.noise_std > 0.0 {
            let mut key = vec![seed];
            key.extend(x.iter().map(|v| v.to_bits()));
            let mut rng = slicelab::seed::rng(&key);
            d += Normal::new(0.0, self.noise_std).unwrap().sample(&mut rng);
        }
        Ok(QoeSample {
            delay_ms: d,
            throughput: 1.0,
            n_requests: 1,
            raw_delays: None,
            seed,
        })
    }
}

/// One Poisson slice on a single link with exponential-like packet sizes
/// (mean 1000 bytes) and a server fast enough to be negligible. Returns
/// the scenario, its allocation and the link's service rate in packets/s.
pub fn mm1_link(utilisation: f64) -> (slicelab::Scenario, AllocationMatrix, f64) {
    use slicelab::{Core, DelayBound, Edge, QoeRequirement, SizeDist, SliceSpec, Topology, TrafficModel};
    let mu = 100.0 * 1e6 / (8.0 * 1000.0);
    let mut traffic = TrafficModel::poisson(utilisation * mu, 20, 65535);
    traffic.size_dist = SizeDist::ShiftedExponential;
    traffic.size_mean = Some(1000.0);
    let slice = SliceSpec {
        id: SliceId(1),
        priority_rank: 0,
        alpha_tau: 1.0,
        alpha_rho: 1.0,
        demand_mi: 1e-3,
        requirement: QoeRequirement { tau_ms: DelayBound::Bounded(10.0), rho: 0.9 },
        traffic,
    };
    let topo = Topology {
        buffer_pkts: 100_000,
        edges: vec![Edge { id: 0, capacity_mbps: 100.0 }],
        cores: vec![Core { id: 0, mips: 1e9 }],
    };
    let mut alloc = AllocationMatrix::new();
    alloc.insert(SliceId(1), slicelab::AllocationVector::from_coords(1, &[1.0, 1.0]));
    let sc = slicelab::validate_scenario(&[slice], &topo, &alloc).expect("valid M/M/1 scenario");
    (sc, alloc, mu)
}

/// Pooled mean end-to-end delay over seeds `0..n`.
pub fn pooled_mean_delay(
    sc: &slicelab::Scenario,
    alloc: &AllocationMatrix,
    cfg: &slicelab::SimConfig,
    slice: SliceId,
    n: u64,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for seed in 0..n {
        let runs = slicelab::sim::run_sim_slices(sc, alloc, &cfg.with_seed(seed), &[slice]).unwrap();
        sum += runs[0].delays_ms.iter().sum::<f64>();
        count += runs[0].delays_ms.len();
    }
    sum / count as f64
}
