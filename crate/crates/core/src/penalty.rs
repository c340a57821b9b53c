//! Hinge penalties on QoE violations and their probed gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AllocationMatrix, AllocationVector, QoeRequirement, QoeSample, SliceId, SliceSpec};
use crate::error::{Error, Result};
use crate::oracle::QoeOracle;

/// Power applied to each hinge term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Exponent {
    Linear,
    #[default]
    Quadratic,
}

impl Exponent {
    pub fn power(self) -> i32 {
        match self {
            Exponent::Linear => 1,
            Exponent::Quadratic => 2,
        }
    }
}

impl TryFrom<u8> for Exponent {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Exponent::Linear),
            2 => Ok(Exponent::Quadratic),
            _ => Err(format!("penalty exponent must be 1 or 2, got {v}")),
        }
    }
}

impl From<Exponent> for u8 {
    fn from(e: Exponent) -> u8 {
        e.power() as u8
    }
}

pub const DEFAULT_DELAY_CAP_MS: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyModel {
    pub requirement: QoeRequirement,
    pub alpha_tau: f64,
    pub alpha_rho: f64,
    pub exponent: Exponent,
    /// Delays (including the unbounded marker) saturate here so penalties
    /// stay finite.
    pub delay_cap_ms: f64,
}

impl PenaltyModel {
    pub fn for_slice(spec: &SliceSpec, exponent: Exponent) -> Self {
        PenaltyModel {
            requirement: spec.requirement,
            alpha_tau: spec.alpha_tau,
            alpha_rho: spec.alpha_rho,
            exponent,
            delay_cap_ms: DEFAULT_DELAY_CAP_MS,
        }
    }

    /// Delay excess over the bound, after saturation. Zero when unbounded.
    pub fn delay_excess(&self, delay_ms: f64) -> f64 {
        match self.requirement.tau_ms.ms() {
            Some(tau) => (delay_ms.min(self.delay_cap_ms) - tau).max(0.0),
            None => 0.0,
        }
    }

    pub fn throughput_deficit(&self, throughput: f64) -> f64 {
        (self.requirement.rho - throughput).max(0.0)
    }

    /// Derivative of `x -> x^p` for `x > 0`; 0 at the kink.
    pub fn hinge_slope(&self, excess: f64) -> f64 {
        if excess <= 0.0 {
            return 0.0;
        }
        match self.exponent {
            Exponent::Linear => 1.0,
            Exponent::Quadratic => 2.0 * excess,
        }
    }
}

/// `alpha_tau * max(0, D - tau)^p + alpha_rho * max(0, rho - T)^p`.
pub fn penalty(model: &PenaltyModel, sample: &QoeSample) -> f64 {
    let p = model.exponent.power();
    model.alpha_tau * model.delay_excess(sample.delay_ms).powi(p)
        + model.alpha_rho * model.throughput_deficit(sample.throughput).powi(p)
}

/// One oracle evaluation made while estimating a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRecord {
    pub point: AllocationVector,
    pub seed: u64,
    /// Raw delays are dropped to keep memory bounded.
    pub sample: QoeSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    pub probes: Vec<ProbeRecord>,
}

/// Averages the delay statistic and throughput of repeated samples.
pub fn average_samples(samples: &[QoeSample]) -> QoeSample {
    let n = samples.len().max(1) as f64;
    QoeSample {
        delay_ms: samples.iter().map(|s| s.delay_ms).sum::<f64>() / n,
        throughput: samples.iter().map(|s| s.throughput).sum::<f64>() / n,
        n_requests: samples.iter().map(|s| s.n_requests).sum(),
        raw_delays: None,
        seed: samples.first().map_or(0, |s| s.seed),
    }
}

/// Coordinate-wise central difference of the slice's penalty, probing the
/// oracle once per seed at each perturbed point.
///
/// Probe points are clamped into `[0, 1]`; the quotient then divides by the
/// actual spacing, which makes it one-sided at the boundary. Every seed is
/// reused at every probe point, so the `+` and `-` sides see the same
/// traffic.
pub fn penalty_gradient(
    model: &PenaltyModel,
    oracle: &dyn QoeOracle,
    slice: SliceId,
    alloc: &AllocationMatrix,
    delta: f64,
    seeds: &[u64],
) -> Result<GradientEstimate> {
    penalty_gradient_within(model, oracle, slice, alloc, delta, seeds, Some((0.0, 1.0)))
}

/// [`penalty_gradient`] with explicit probe bounds; `None` probes the plain
/// `x +- delta` points, for oracles defined off the unit box.
pub fn penalty_gradient_within(
    model: &PenaltyModel,
    oracle: &dyn QoeOracle,
    slice: SliceId,
    alloc: &AllocationMatrix,
    delta: f64,
    seeds: &[u64],
    bounds: Option<(f64, f64)>,
) -> Result<GradientEstimate> {
    let (lo, hi) = bounds.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    if !(delta > 0.0) {
        return Err(Error::DegenerateDelta(delta));
    }
    if seeds.is_empty() {
        return Err(Error::NoProbes);
    }
    let center = alloc.row(slice)?.clone();
    let dim = center.dim();

    let points: Vec<(AllocationVector, AllocationVector)> = (0..dim)
        .map(|d| {
            let x = center.coord(d);
            let mut plus = center.clone();
            let mut minus = center.clone();
            plus.set_coord(d, (x + delta).min(hi));
            minus.set_coord(d, (x - delta).max(lo));
            (plus, minus)
        })
        .collect();

    let jobs: Vec<(&AllocationVector, u64)> = points
        .iter()
        .flat_map(|(p, m)| [p, m])
        .flat_map(|pt| seeds.iter().map(move |&s| (pt, s)))
        .collect();

    let probes: Vec<ProbeRecord> = jobs
        .par_iter()
        .map(|&(pt, seed)| {
            let m = alloc.with_row(slice, pt.clone());
            let mut sample = oracle.evaluate(slice, &m, seed)?;
            sample.raw_delays = None;
            Ok(ProbeRecord {
                point: pt.clone(),
                seed,
                sample,
            })
        })
        .collect::<Result<_>>()?;

    let k = seeds.len();
    let side_penalty = |i: usize| {
        let samples: Vec<QoeSample> = probes[i * k..(i + 1) * k]
            .iter()
            .map(|p| p.sample.clone())
            .collect();
        penalty(model, &average_samples(&samples))
    };
    let gradient = (0..dim)
        .map(|d| {
            let (plus, minus) = &points[d];
            let h = plus.coord(d) - minus.coord(d);
            if h <= 0.0 {
                0.0
            } else {
                (side_penalty(2 * d) - side_penalty(2 * d + 1)) / h
            }
        })
        .collect();
    Ok(GradientEstimate { gradient, probes })
}
