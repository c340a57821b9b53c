use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};

use crate::domain::{SizeDist, TrafficKind, TrafficModel};

/// Arrival-time and packet-size generator for one slice.
///
/// Bursty sources alternate an exponential OFF period with a burst of
/// geometrically many packets spaced by a fixed gap; the gap is derived from
/// `mean_rate` so the long-run rate matches it exactly.
#[derive(Debug)]
pub struct TrafficSource {
    kind: Kind,
    size: SizeDist,
    size_min: u32,
    size_max: u32,
    size_excess: Option<Exp<f64>>,
    clock: f64,
}

#[derive(Debug)]
enum Kind {
    Poisson(Exp<f64>),
    OnOff {
        off: Option<Exp<f64>>,
        burst: Geometric,
        gap: f64,
        remaining: u64,
    },
}

impl TrafficSource {
    pub fn new(model: &TrafficModel) -> Self {
        let kind = match model.kind {
            TrafficKind::Poisson => {
                Kind::Poisson(Exp::new(model.mean_rate).expect("validated mean_rate"))
            }
            TrafficKind::BurstyOnoff => {
                let n = model.burst_len.expect("validated burst_len");
                let off_s = model.off_time_ms.expect("validated off_time") / 1e3;
                Kind::OnOff {
                    off: (off_s > 0.0).then(|| Exp::new(1.0 / off_s).expect("positive")),
                    burst: Geometric::new(1.0 / n).expect("burst_len >= 1"),
                    gap: model.intra_burst_gap_s().expect("bursty").max(0.0),
                    remaining: 0,
                }
            }
        };
        let size_excess = match model.size_dist {
            SizeDist::Uniform => None,
            SizeDist::ShiftedExponential => {
                let mean = model.mean_size_bytes() - model.size_min as f64;
                Some(Exp::new(1.0 / mean).expect("size_mean > size_min"))
            }
        };
        TrafficSource {
            kind,
            size: model.size_dist,
            size_min: model.size_min,
            size_max: model.size_max,
            size_excess,
            clock: 0.0,
        }
    }

    /// Absolute time (s) of the next request.
    pub fn next_arrival<R: Rng>(&mut self, rng: &mut R) -> f64 {
        match &mut self.kind {
            Kind::Poisson(exp) => {
                self.clock += exp.sample(rng);
                self.clock
            }
            Kind::OnOff {
                off,
                burst,
                gap,
                remaining,
            } => {
                if *remaining == 0 {
                    if let Some(off) = off {
                        self.clock += off.sample(rng);
                    }
                    *remaining = 1 + burst.sample(rng);
                }
                let at = self.clock;
                *remaining -= 1;
                self.clock += *gap;
                at
            }
        }
    }

    pub fn packet_size<R: Rng>(&self, rng: &mut R) -> u32 {
        match self.size {
            SizeDist::Uniform => rng.random_range(self.size_min..=self.size_max),
            SizeDist::ShiftedExponential => {
                let excess = self.size_excess.as_ref().expect("set").sample(rng);
                let s = (self.size_min as f64 + excess).round();
                s.min(self.size_max as f64) as u32
            }
        }
    }
}
