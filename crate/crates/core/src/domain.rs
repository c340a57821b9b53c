//! Core value types shared across the crate: slices, their QoE requirements,
//! traffic descriptions, the physical topology and resource allocations.
//!
//! Everything here is an immutable value once validated. The only behaviour
//! is invariant checking, collected in [`validate_scenario`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column sums of an allocation may exceed 1 by this much.
pub const FEASIBILITY_TOL: f64 = 1e-9;

pub const MIN_PACKET_BYTES: u32 = 20;
pub const MAX_PACKET_BYTES: u32 = 65535;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SliceId(pub u32);

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Upper bound on the end-to-end delay statistic, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelayBoundRepr", into = "DelayBoundRepr")]
pub enum DelayBound {
    Bounded(f64),
    Unbounded,
}

impl DelayBound {
    pub fn ms(self) -> Option<f64> {
        match self {
            DelayBound::Bounded(ms) => Some(ms),
            DelayBound::Unbounded => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DelayBoundRepr {
    Ms(f64),
    Word(String),
}

impl TryFrom<DelayBoundRepr> for DelayBound {
    type Error = String;

    fn try_from(r: DelayBoundRepr) -> std::result::Result<Self, String> {
        match r {
            DelayBoundRepr::Ms(ms) => Ok(DelayBound::Bounded(ms)),
            DelayBoundRepr::Word(w) if w == "unbounded" => Ok(DelayBound::Unbounded),
            DelayBoundRepr::Word(w) => Err(format!(
                "tau_ms must be a number or \"unbounded\", got {w:?}"
            )),
        }
    }
}

impl From<DelayBound> for DelayBoundRepr {
    fn from(b: DelayBound) -> Self {
        match b {
            DelayBound::Bounded(ms) => DelayBoundRepr::Ms(ms),
            DelayBound::Unbounded => DelayBoundRepr::Word("unbounded".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoeRequirement {
    /// Delay bound on the configured delay statistic.
    pub tau_ms: DelayBound,
    /// Minimum fraction of requests that must complete.
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficKind {
    BurstyOnoff,
    Poisson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeDist {
    #[default]
    Uniform,
    /// `size_min` plus an exponential excess, truncated at `size_max`.
    ShiftedExponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModel {
    pub kind: TrafficKind,
    /// Long-run request rate in requests (packets) per second.
    pub mean_rate: f64,
    /// Mean packets per burst (geometric). Bursty sources only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst_len: Option<f64>,
    /// Mean idle gap between bursts in milliseconds (exponential). Bursty only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_time_ms: Option<f64>,
    pub size_min: u32,
    pub size_max: u32,
    #[serde(default, skip_serializing_if = "is_default")]
    pub size_dist: SizeDist,
    /// Mean packet size for `shifted-exponential`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_mean: Option<f64>,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl TrafficModel {
    pub fn poisson(mean_rate: f64, size_min: u32, size_max: u32) -> Self {
        TrafficModel {
            kind: TrafficKind::Poisson,
            mean_rate,
            burst_len: None,
            off_time_ms: None,
            size_min,
            size_max,
            size_dist: SizeDist::Uniform,
            size_mean: None,
        }
    }

    pub fn bursty(mean_rate: f64, burst_len: f64, off_time_ms: f64) -> Self {
        TrafficModel {
            kind: TrafficKind::BurstyOnoff,
            mean_rate,
            burst_len: Some(burst_len),
            off_time_ms: Some(off_time_ms),
            size_min: MIN_PACKET_BYTES,
            size_max: MAX_PACKET_BYTES,
            size_dist: SizeDist::Uniform,
            size_mean: None,
        }
    }

    /// Expected packet size in bytes.
    pub fn mean_size_bytes(&self) -> f64 {
        match self.size_dist {
            SizeDist::Uniform => (self.size_min as f64 + self.size_max as f64) / 2.0,
            SizeDist::ShiftedExponential => self
                .size_mean
                .unwrap_or((self.size_min as f64 + self.size_max as f64) / 2.0),
        }
    }

    /// Spacing between consecutive packets inside a burst, in seconds, chosen
    /// so the long-run rate equals `mean_rate`.
    pub fn intra_burst_gap_s(&self) -> Option<f64> {
        let (n, off) = (self.burst_len?, self.off_time_ms?);
        Some((n / self.mean_rate - off / 1e3) / n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub id: SliceId,
    /// Lower rank means higher priority; ties are broken by id.
    pub priority_rank: i64,
    pub alpha_tau: f64,
    pub alpha_rho: f64,
    /// Compute demand per request in million instructions.
    pub demand_mi: f64,
    pub requirement: QoeRequirement,
    pub traffic: TrafficModel,
}

impl SliceSpec {
    pub fn priority_key(&self) -> (i64, SliceId) {
        (self.priority_rank, self.id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: u32,
    pub capacity_mbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Core {
    pub id: u32,
    pub mips: f64,
}

/// Single-path topology: every slice traverses all edges in order, then the
/// server whose cores are listed here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub buffer_pkts: usize,
    pub edges: Vec<Edge>,
    pub cores: Vec<Core>,
}

impl Topology {
    pub fn dim(&self) -> usize {
        self.edges.len() + self.cores.len()
    }
}

/// One slice's resource point: per-edge bandwidth fraction followed by
/// per-core CPU fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationVector {
    pub flows: Vec<f64>,
    pub cpu: Vec<f64>,
}

impl AllocationVector {
    pub fn zeros(n_edges: usize, n_cores: usize) -> Self {
        AllocationVector {
            flows: vec![0.0; n_edges],
            cpu: vec![0.0; n_cores],
        }
    }

    pub fn dim(&self) -> usize {
        self.flows.len() + self.cpu.len()
    }

    pub fn coords(&self) -> Vec<f64> {
        self.flows.iter().chain(&self.cpu).copied().collect()
    }

    pub fn from_coords(n_edges: usize, coords: &[f64]) -> Self {
        let (f, c) = coords.split_at(n_edges.min(coords.len()));
        AllocationVector {
            flows: f.to_vec(),
            cpu: c.to_vec(),
        }
    }

    pub fn coord(&self, d: usize) -> f64 {
        if d < self.flows.len() {
            self.flows[d]
        } else {
            self.cpu[d - self.flows.len()]
        }
    }

    pub fn set_coord(&mut self, d: usize, v: f64) {
        if d < self.flows.len() {
            self.flows[d] = v;
        } else {
            let n = self.flows.len();
            self.cpu[d - n] = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AllocRow {
    slice: SliceId,
    flows: Vec<f64>,
    cpu: Vec<f64>,
}

/// Allocation rows keyed by slice id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<AllocRow>", into = "Vec<AllocRow>")]
pub struct AllocationMatrix {
    rows: BTreeMap<SliceId, AllocationVector>,
}

impl From<Vec<AllocRow>> for AllocationMatrix {
    fn from(rows: Vec<AllocRow>) -> Self {
        AllocationMatrix {
            rows: rows
                .into_iter()
                .map(|r| {
                    (
                        r.slice,
                        AllocationVector {
                            flows: r.flows,
                            cpu: r.cpu,
                        },
                    )
                })
                .collect(),
        }
    }
}

impl From<AllocationMatrix> for Vec<AllocRow> {
    fn from(m: AllocationMatrix) -> Self {
        m.rows
            .into_iter()
            .map(|(slice, v)| AllocRow {
                slice,
                flows: v.flows,
                cpu: v.cpu,
            })
            .collect()
    }
}

impl FromIterator<(SliceId, AllocationVector)> for AllocationMatrix {
    fn from_iter<I: IntoIterator<Item = (SliceId, AllocationVector)>>(iter: I) -> Self {
        AllocationMatrix {
            rows: iter.into_iter().collect(),
        }
    }
}

impl AllocationMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: SliceId) -> Option<&AllocationVector> {
        self.rows.get(&id)
    }

    pub fn row(&self, id: SliceId) -> Result<&AllocationVector> {
        self.rows.get(&id).ok_or(Error::UnknownSlice(id))
    }

    pub fn insert(&mut self, id: SliceId, v: AllocationVector) {
        self.rows.insert(id, v);
    }

    pub fn with_row(&self, id: SliceId, v: AllocationVector) -> Self {
        let mut m = self.clone();
        m.insert(id, v);
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = (SliceId, &AllocationVector)> {
        self.rows.iter().map(|(k, v)| (*k, v))
    }

    pub fn ids(&self) -> impl Iterator<Item = SliceId> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sum of coordinate `d` across all rows.
    pub fn column_sum(&self, d: usize) -> f64 {
        self.rows.values().map(|v| v.coord(d)).sum()
    }

    /// Largest amount by which any column sum exceeds 1, or by which any
    /// entry falls below 0. Zero for a feasible matrix.
    pub fn max_infeasibility(&self) -> f64 {
        let dim = self.rows.values().next().map_or(0, |v| v.dim());
        let over = (0..dim)
            .map(|d| self.column_sum(d) - 1.0)
            .fold(0.0_f64, f64::max);
        let neg = self
            .rows
            .values()
            .flat_map(|v| v.coords())
            .map(|x| -x)
            .fold(0.0_f64, f64::max);
        over.max(neg)
    }
}

/// Names the field and the bound a scenario breaches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// A validated set of slices on a topology.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    slices: Vec<SliceSpec>,
    topology: Topology,
}

impl Scenario {
    pub fn slices(&self) -> &[SliceSpec] {
        &self.slices
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn slice(&self, id: SliceId) -> Result<&SliceSpec> {
        self.slices
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSlice(id))
    }

    pub fn dim(&self) -> usize {
        self.topology.dim()
    }

    pub fn n_edges(&self) -> usize {
        self.topology.edges.len()
    }

    /// Slices strictly below `id` in the priority order.
    pub fn lower_priority_than(&self, id: SliceId) -> Result<Vec<SliceId>> {
        let key = self.slice(id)?.priority_key();
        let mut lower: Vec<_> = self
            .slices
            .iter()
            .filter(|s| s.priority_key() > key)
            .collect();
        lower.sort_by_key(|s| s.priority_key());
        Ok(lower.into_iter().map(|s| s.id).collect())
    }
}

fn num(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    format!("{r}")
}

struct Report(Vec<InvariantViolation>);

impl Report {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(InvariantViolation {
            field: field.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, field: impl Into<String>, message: impl FnOnce() -> String) {
        if !ok {
            self.push(field, message());
        }
    }
}

fn check_slice(r: &mut Report, s: &SliceSpec) {
    let p = format!("slice[{}]", s.id);
    let rho = s.requirement.rho;
    r.check((0.0..=1.0).contains(&rho), format!("{p}.rho"), || {
        format!("rho out of [0,1]: {}", num(rho))
    });
    if let DelayBound::Bounded(tau) = s.requirement.tau_ms {
        r.check(tau.is_finite() && tau > 0.0, format!("{p}.tau_ms"), || {
            format!("tau must be > 0, got {}", num(tau))
        });
    }
    r.check(s.alpha_tau >= 0.0, format!("{p}.alpha_tau"), || {
        format!("alpha_tau must be >= 0, got {}", num(s.alpha_tau))
    });
    r.check(s.alpha_rho >= 0.0, format!("{p}.alpha_rho"), || {
        format!("alpha_rho must be >= 0, got {}", num(s.alpha_rho))
    });
    r.check(
        s.demand_mi.is_finite() && s.demand_mi > 0.0,
        format!("{p}.demand_mi"),
        || format!("demand_mi must be > 0, got {}", num(s.demand_mi)),
    );

    let t = &s.traffic;
    let tp = format!("{p}.traffic");
    r.check(
        t.mean_rate.is_finite() && t.mean_rate > 0.0,
        format!("{tp}.mean_rate"),
        || format!("mean_rate must be > 0, got {}", num(t.mean_rate)),
    );
    r.check(
        MIN_PACKET_BYTES <= t.size_min && t.size_min <= t.size_max && t.size_max <= MAX_PACKET_BYTES,
        format!("{tp}.size"),
        || {
            format!(
                "need {MIN_PACKET_BYTES} <= size_min <= size_max <= {MAX_PACKET_BYTES}, got [{}, {}]",
                t.size_min, t.size_max
            )
        },
    );
    if t.size_dist == SizeDist::ShiftedExponential {
        match t.size_mean {
            Some(m) => r.check(
                m > t.size_min as f64 && m <= t.size_max as f64,
                format!("{tp}.size_mean"),
                || format!("size_mean must lie in (size_min, size_max], got {}", num(m)),
            ),
            None => r.push(
                format!("{tp}.size_mean"),
                "shifted-exponential sizes need size_mean",
            ),
        }
    }
    if t.kind == TrafficKind::BurstyOnoff {
        match (t.burst_len, t.off_time_ms) {
            (Some(n), Some(off)) => {
                r.check(n >= 1.0, format!("{tp}.burst_len"), || {
                    format!("burst_len must be >= 1, got {}", num(n))
                });
                r.check(off >= 0.0, format!("{tp}.off_time_ms"), || {
                    format!("off_time_ms must be >= 0, got {}", num(off))
                });
                if t.mean_rate > 0.0 && n >= 1.0 {
                    let cycle_ms = n / t.mean_rate * 1e3;
                    r.check(off <= cycle_ms, format!("{tp}.off_time_ms"), || {
                        format!(
                            "off_time_ms {} exceeds the mean cycle {} implied by mean_rate and burst_len",
                            num(off),
                            num(cycle_ms)
                        )
                    });
                }
            }
            _ => r.push(
                tp.clone(),
                "bursty-onoff traffic needs burst_len and off_time_ms",
            ),
        }
    }
}

fn check_topology(r: &mut Report, t: &Topology) {
    r.check(!t.edges.is_empty(), "topology.edges", || {
        "at least one edge is required".into()
    });
    r.check(!t.cores.is_empty(), "topology.cores", || {
        "at least one core is required".into()
    });
    r.check(t.buffer_pkts >= 1, "topology.buffer_pkts", || {
        "buffer_pkts must be >= 1".into()
    });
    for e in &t.edges {
        r.check(
            e.capacity_mbps.is_finite() && e.capacity_mbps > 0.0,
            format!("topology.edge[{}]", e.id),
            || format!("capacity must be > 0, got {}", num(e.capacity_mbps)),
        );
    }
    for c in &t.cores {
        r.check(
            c.mips.is_finite() && c.mips > 0.0,
            format!("topology.core[{}]", c.id),
            || format!("capacity must be > 0, got {}", num(c.mips)),
        );
    }
}

/// Checks the allocation against the slice set and topology shape.
fn check_alloc(r: &mut Report, slices: &[SliceSpec], t: &Topology, alloc: &AllocationMatrix) {
    let ids: BTreeSet<_> = slices.iter().map(|s| s.id).collect();
    for id in &ids {
        r.check(alloc.get(*id).is_some(), format!("alloc[{id}]"), || {
            format!("no allocation row for slice {id}")
        });
    }
    let mut shape_ok = true;
    for (id, v) in alloc.iter() {
        if !ids.contains(&id) {
            r.push(format!("alloc[{id}]"), format!("slice {id} is not defined"));
        }
        if v.flows.len() != t.edges.len() || v.cpu.len() != t.cores.len() {
            shape_ok = false;
            r.push(
                format!("alloc[{id}]"),
                format!(
                    "expected {} flows and {} cpu entries, got {} and {}",
                    t.edges.len(),
                    t.cores.len(),
                    v.flows.len(),
                    v.cpu.len()
                ),
            );
            continue;
        }
        for (d, x) in v.coords().into_iter().enumerate() {
            r.check((0.0..=1.0).contains(&x), format!("alloc[{id}][{d}]"), || {
                format!("entry {} out of [0,1]", num(x))
            });
        }
    }
    if !shape_ok {
        return;
    }
    for (k, e) in t.edges.iter().enumerate() {
        let s = alloc.column_sum(k);
        r.check(s <= 1.0 + FEASIBILITY_TOL, format!("alloc.edge[{}]", e.id), || {
            format!("edge {} sum {} > 1", e.id, num(s))
        });
    }
    for (k, c) in t.cores.iter().enumerate() {
        let s = alloc.column_sum(t.edges.len() + k);
        r.check(s <= 1.0 + FEASIBILITY_TOL, format!("alloc.core[{}]", c.id), || {
            format!("core {} sum {} > 1", c.id, num(s))
        });
    }
}

/// Returns the scenario iff every typed invariant holds, otherwise
/// [`Error::Invalid`] listing every violation found.
pub fn validate_scenario(
    slices: &[SliceSpec],
    topology: &Topology,
    alloc: &AllocationMatrix,
) -> Result<Scenario> {
    let mut r = Report(Vec::new());
    r.check(!slices.is_empty(), "slices", || "at least one slice is required".into());
    let mut seen = BTreeSet::new();
    for s in slices {
        if !seen.insert(s.id) {
            r.push(format!("slice[{}]", s.id), "duplicate slice id");
        }
        check_slice(&mut r, s);
    }
    check_topology(&mut r, topology);
    check_alloc(&mut r, slices, topology, alloc);
    if r.0.is_empty() {
        Ok(Scenario {
            slices: slices.to_vec(),
            topology: topology.clone(),
        })
    } else {
        Err(Error::Invalid(r.0))
    }
}

/// Checks only the allocation against an already validated scenario.
pub fn validate_alloc(scenario: &Scenario, alloc: &AllocationMatrix) -> Result<()> {
    let mut r = Report(Vec::new());
    check_alloc(&mut r, &scenario.slices, &scenario.topology, alloc);
    if r.0.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(r.0))
    }
}

/// Checks shape and entry bounds of the listed rows only. Capacity sums are
/// not checked: a single slice may be evaluated at a point the others could
/// not coexist with.
pub fn validate_rows(scenario: &Scenario, alloc: &AllocationMatrix, which: &[SliceId]) -> Result<()> {
    let t = &scenario.topology;
    let mut r = Report(Vec::new());
    for &id in which {
        r.check(scenario.slice(id).is_ok(), format!("alloc[{id}]"), || {
            format!("slice {id} is not defined")
        });
        let Some(v) = alloc.get(id) else {
            r.push(format!("alloc[{id}]"), format!("no allocation row for slice {id}"));
            continue;
        };
        if v.flows.len() != t.edges.len() || v.cpu.len() != t.cores.len() {
            r.push(
                format!("alloc[{id}]"),
                format!(
                    "expected {} flows and {} cpu entries, got {} and {}",
                    t.edges.len(),
                    t.cores.len(),
                    v.flows.len(),
                    v.cpu.len()
                ),
            );
            continue;
        }
        for (d, x) in v.coords().into_iter().enumerate() {
            r.check((0.0..=1.0).contains(&x), format!("alloc[{id}][{d}]"), || {
                format!("entry {} out of [0,1]", num(x))
            });
        }
    }
    if r.0.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(r.0))
    }
}

/// One evaluation of a slice's QoE at an allocation.
#[derive(Clone, Debug, PartialEq)]
pub struct QoeSample {
    /// Delay statistic over successful requests, in ms. `f64::INFINITY`
    /// marks "unbounded" (no successes, or an unstable queue).
    pub delay_ms: f64,
    /// Fraction of offered requests that completed.
    pub throughput: f64,
    pub n_requests: u64,
    pub raw_delays: Option<Vec<f64>>,
    pub seed: u64,
}

impl QoeSample {
    pub fn is_unbounded(&self) -> bool {
        self.delay_ms.is_infinite()
    }
}
