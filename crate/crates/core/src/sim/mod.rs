//! Discrete-event simulation of the sliced path: per-slice traffic enters a
//! per-slice FIFO on every edge (rate `f * B(e)`, finite buffer), then a
//! per-slice FIFO at the server (rate `sum_c phi_c * MIPS_c`, unbounded).
//!
//! Slices never share a queue, so each slice draws from its own random
//! stream and its results do not depend on which other slices are simulated.

mod summary;
mod traffic;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use summary::{summarize, Statistic};
pub use traffic::TrafficSource;

use crate::domain::{validate_alloc, validate_rows, AllocationMatrix, Scenario, SliceId};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_s: f64,
    /// Requests created before this time are excluded. Defaults to 10% of
    /// the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_s: Option<f64>,
    #[serde(default = "default_propagation_ms")]
    pub propagation_ms: f64,
    /// Overrides the topology's per-slice router buffer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_pkts: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_propagation_ms() -> f64 {
    0.1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon_s: 10.0,
            warmup_s: None,
            propagation_ms: default_propagation_ms(),
            buffer_pkts: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn warmup(&self) -> f64 {
        self.warmup_s.unwrap_or(0.1 * self.horizon_s)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.horizon_s.is_finite() && self.horizon_s > 0.0) {
            bad.push("horizon_s must be > 0".to_string());
        }
        let w = self.warmup();
        if !(w >= 0.0 && w < self.horizon_s) {
            bad.push(format!("warmup {w} must lie in [0, horizon)"));
        }
        if self.buffer_pkts == Some(0) {
            bad.push("buffer_pkts must be >= 1".to_string());
        }
        if !(self.propagation_ms >= 0.0) {
            bad.push("propagation_ms must be >= 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(
                bad.into_iter()
                    .map(|m| crate::domain::InvariantViolation {
                        field: "sim".into(),
                        message: m,
                    })
                    .collect(),
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    LinkDeparture { edge: usize },
    ServiceCompletion,
    Arrival,
}

impl EventKind {
    fn rank(self) -> u8 {
        match self {
            EventKind::LinkDeparture { .. } => 0,
            EventKind::ServiceCompletion => 1,
            EventKind::Arrival => 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub slice: usize,
    pub packet: u64,
}

impl Event {
    fn key(&self) -> (u8, u64, usize) {
        (self.kind.rank(), self.packet, self.slice)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.key().cmp(&self.key()))
    }
}

#[derive(Clone, Debug)]
pub struct Packet {
    pub id: u64,
    pub size_bytes: u32,
    pub created_at: f64,
    pub link_out_at: Option<f64>,
    pub served_at: Option<f64>,
    pub dropped: bool,
}

/// One request's fate, for the optional trace dump.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    pub slice: SliceId,
    pub created_at_s: f64,
    /// `None` when the request was dropped.
    pub delay_ms: Option<f64>,
}

/// Raw per-slice outcome of a run, counting only post-warmup requests.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRun {
    pub slice: SliceId,
    pub offered: u64,
    pub succeeded: u64,
    pub dropped: u64,
    /// End-to-end delays of successful requests in creation order.
    pub delays_ms: Vec<f64>,
    pub records: Vec<PacketRecord>,
}

#[derive(Debug)]
struct Stage {
    /// Bits per second on links, million instructions per second at the server.
    rate: f64,
    capacity: Option<usize>,
    queue: VecDeque<u64>,
    busy: bool,
}

impl Stage {
    fn new(rate: f64, capacity: Option<usize>) -> Self {
        Stage {
            rate,
            capacity,
            queue: VecDeque::new(),
            busy: false,
        }
    }
}

struct SliceState {
    id: SliceId,
    demand_mi: f64,
    source: TrafficSource,
    rng: rand_chacha::ChaCha8Rng,
    links: Vec<Stage>,
    server: Stage,
    packets: Vec<Packet>,
}

impl SliceState {
    fn service_time(&self, stage: usize, packet: u64) -> f64 {
        if stage < self.links.len() {
            self.packets[packet as usize].size_bytes as f64 * 8.0 / self.links[stage].rate
        } else {
            self.demand_mi / self.server.rate
        }
    }

    fn stage_mut(&mut self, stage: usize) -> &mut Stage {
        if stage < self.links.len() {
            &mut self.links[stage]
        } else {
            &mut self.server
        }
    }
}

struct Engine {
    now: f64,
    horizon: f64,
    events: BinaryHeap<Event>,
    slices: Vec<SliceState>,
}

impl Engine {
    fn schedule(&mut self, ev: Event) -> Result<()> {
        if !(ev.time >= self.now) {
            return Err(Error::Simulation(format!(
                "event at {} scheduled before current time {}",
                ev.time, self.now
            )));
        }
        self.events.push(ev);
        Ok(())
    }

    fn schedule_next_arrival(&mut self, s: usize) -> Result<()> {
        let st = &mut self.slices[s];
        let t = st.source.next_arrival(&mut st.rng);
        if t < self.horizon {
            let packet = st.packets.len() as u64;
            let size = st.source.packet_size(&mut st.rng);
            st.packets.push(Packet {
                id: packet,
                size_bytes: size,
                created_at: t,
                link_out_at: None,
                served_at: None,
                dropped: false,
            });
            self.schedule(Event {
                time: t,
                kind: EventKind::Arrival,
                slice: s,
                packet,
            })?;
        }
        Ok(())
    }

    fn start_service(&mut self, s: usize, stage: usize) -> Result<()> {
        let st = &mut self.slices[s];
        let n_links = st.links.len();
        let stg = st.stage_mut(stage);
        if stg.busy || stg.rate <= 0.0 {
            return Ok(());
        }
        let Some(&head) = stg.queue.front() else {
            return Ok(());
        };
        stg.busy = true;
        let dt = st.service_time(stage, head);
        let kind = if stage < n_links {
            EventKind::LinkDeparture { edge: stage }
        } else {
            EventKind::ServiceCompletion
        };
        let ev = Event {
            time: self.now + dt,
            kind,
            slice: s,
            packet: head,
        };
        self.schedule(ev)
    }

    fn enter(&mut self, s: usize, stage: usize, packet: u64) -> Result<()> {
        let stg = self.slices[s].stage_mut(stage);
        if stg.capacity.is_some_and(|c| stg.queue.len() >= c) {
            self.slices[s].packets[packet as usize].dropped = true;
            return Ok(());
        }
        stg.queue.push_back(packet);
        self.start_service(s, stage)
    }

    fn finish(&mut self, s: usize, stage: usize, packet: u64) -> Result<()> {
        let stg = self.slices[s].stage_mut(stage);
        if stg.queue.pop_front() != Some(packet) {
            return Err(Error::Simulation(format!(
                "packet {packet} completed stage {stage} out of FIFO order"
            )));
        }
        stg.busy = false;
        self.start_service(s, stage)
    }

    fn step(&mut self, ev: Event) -> Result<()> {
        self.now = ev.time;
        let s = ev.slice;
        let n_links = self.slices[s].links.len();
        match ev.kind {
            EventKind::Arrival => {
                self.schedule_next_arrival(s)?;
                self.enter(s, 0, ev.packet)?;
            }
            EventKind::LinkDeparture { edge } => {
                self.finish(s, edge, ev.packet)?;
                if edge + 1 == n_links {
                    self.slices[s].packets[ev.packet as usize].link_out_at = Some(self.now);
                }
                self.enter(s, edge + 1, ev.packet)?;
            }
            EventKind::ServiceCompletion => {
                self.finish(s, n_links, ev.packet)?;
                self.slices[s].packets[ev.packet as usize].served_at = Some(self.now);
            }
        }
        Ok(())
    }
}

/// Runs every slice of the scenario.
pub fn run_sim(
    scenario: &Scenario,
    alloc: &AllocationMatrix,
    config: &SimConfig,
) -> Result<Vec<SliceRun>> {
    validate_alloc(scenario, alloc)?;
    let ids: Vec<_> = scenario.slices().iter().map(|s| s.id).collect();
    run_sim_slices(scenario, alloc, config, &ids)
}

/// Runs only `which`; each slice's outcome is identical to the full run.
/// Slices are isolated, so only the listed rows are checked.
pub fn run_sim_slices(
    scenario: &Scenario,
    alloc: &AllocationMatrix,
    config: &SimConfig,
    which: &[SliceId],
) -> Result<Vec<SliceRun>> {
    config.validate()?;
    validate_rows(scenario, alloc, which)?;
    let topo = scenario.topology();
    let buffer = config.buffer_pkts.unwrap_or(topo.buffer_pkts);
    let mut slices = Vec::with_capacity(which.len());
    for &id in which {
        let spec = scenario.slice(id)?;
        let row = alloc.row(id)?;
        let links = topo
            .edges
            .iter()
            .zip(&row.flows)
            .map(|(e, f)| Stage::new(f * e.capacity_mbps * 1e6, Some(buffer)))
            .collect();
        let server_rate: f64 = topo.cores.iter().zip(&row.cpu).map(|(c, p)| p * c.mips).sum();
        slices.push(SliceState {
            id,
            demand_mi: spec.demand_mi,
            source: TrafficSource::new(&spec.traffic),
            rng: seed::rng(&[config.seed, u64::from(id.0)]),
            links,
            server: Stage::new(server_rate, None),
            packets: Vec::new(),
        });
    }
    let mut engine = Engine {
        now: 0.0,
        horizon: config.horizon_s,
        events: BinaryHeap::new(),
        slices,
    };
    for s in 0..engine.slices.len() {
        engine.schedule_next_arrival(s)?;
    }
    // Arrivals stop at the horizon; the system then drains. Anything still
    // stuck behind a zero-rate stage is counted as lost.
    while let Some(ev) = engine.events.pop() {
        engine.step(ev)?;
    }

    let warmup = config.warmup();
    let prop = config.propagation_ms;
    Ok(engine
        .slices
        .into_iter()
        .map(|st| {
            let mut run = SliceRun {
                slice: st.id,
                offered: 0,
                succeeded: 0,
                dropped: 0,
                delays_ms: Vec::new(),
                records: Vec::new(),
            };
            for p in st.packets.iter().filter(|p| p.created_at >= warmup) {
                run.offered += 1;
                let delay = p
                    .served_at
                    .filter(|_| !p.dropped)
                    .map(|t| (t - p.created_at) * 1e3 + prop);
                match delay {
                    Some(d) => {
                        run.succeeded += 1;
                        run.delays_ms.push(d);
                    }
                    None => run.dropped += 1,
                }
                run.records.push(PacketRecord {
                    slice: st.id,
                    created_at_s: p.created_at,
                    delay_ms: delay,
                });
            }
            run
        })
        .collect())
}

/// Writes one CSV row per post-warmup request:
/// `slice,created_at_s,delay_ms,dropped`.
pub fn write_packet_trace<W: Write>(runs: &[SliceRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slice", "created_at_s", "delay_ms", "dropped"])?;
    for r in runs.iter().flat_map(|r| &r.records) {
        w.write_record([
            r.slice.to_string(),
            format!("{:.9}", r.created_at_s),
            r.delay_ms.map_or(String::new(), |d| format!("{d:.6}")),
            u8::from(r.delay_ms.is_none()).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
