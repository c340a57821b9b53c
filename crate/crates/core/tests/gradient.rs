mod common;

use common::FnOracle;
use proptest::prelude::*;
use slicelab::oracle::{analytic_mm1_evaluate, analytic_penalty_gradient, AnalyticOracle, QoeOracle};
use slicelab::penalty::{penalty, penalty_gradient, penalty_gradient_within, Exponent, PenaltyModel, DEFAULT_DELAY_CAP_MS};
use slicelab::{
    AllocationMatrix, AllocationVector, Core, DelayBound, Edge, QoeRequirement, QoeSample, SliceId, SliceSpec,
    Topology, TrafficModel,
};

const S: SliceId = SliceId(1);

/// Penalty equal to `delay - 1`: the oracle's delay minus a unit bound.
fn linear_model() -> PenaltyModel {
    PenaltyModel {
        requirement: QoeRequirement {
            tau_ms: DelayBound::Bounded(1.0),
            rho: 0.0,
        },
        alpha_tau: 1.0,
        alpha_rho: 0.0,
        exponent: Exponent::Linear,
        delay_cap_ms: DEFAULT_DELAY_CAP_MS,
    }
}

fn point(x: &[f64]) -> AllocationMatrix {
    let mut m = AllocationMatrix::new();
    m.insert(S, AllocationVector::from_coords(1, x));
    m
}

fn seeds(n: u64, base: u64) -> Vec<u64> {
    (0..n).map(|i| base * 1000 + i).collect()
}

#[test]
fn squared_norm_at_corner_unclamped() {
    let o = FnOracle { delay: |s: &[f64]| 1.0 + s.iter().map(|v| v * v).sum::<f64>(), noise_std: 0.0 };
    let g = penalty_gradient_within(&linear_model(), &o, S, &point(&[1.0, 0.0]), 0.1, &[7], None).unwrap();
    assert!((g.gradient[0] - 2.0).abs() < 1e-10, "{:?}", g.gradient);
    assert!(g.gradient[1].abs() < 1e-10, "{:?}", g.gradient);
}

#[test]
fn squared_norm_at_corner_clamped_is_one_sided() {
    let o = FnOracle { delay: |s: &[f64]| 1.0 + s.iter().map(|v| v * v).sum::<f64>(), noise_std: 0.0 };
    let g = penalty_gradient(&linear_model(), &o, S, &point(&[1.0, 0.0]), 0.1, &[7]).unwrap();
    // (1 - 0.81) / 0.1 and (0.01 - 0) / 0.1.
    assert!((g.gradient[0] - 1.9).abs() < 1e-10, "{:?}", g.gradient);
    assert!((g.gradient[1] - 0.1).abs() < 1e-10, "{:?}", g.gradient);
}

#[test]
fn constant_oracle_has_zero_gradient() {
    let o = FnOracle { delay: |_: &[f64]| 3.0, noise_std: 0.0 };
    let g = penalty_gradient(&linear_model(), &o, S, &point(&[0.3, 0.6]), 0.05, &seeds(4, 1)).unwrap();
    assert_eq!(g.gradient, vec![0.0, 0.0]);
}

#[test]
fn noisy_quadratic_is_recovered() {
    let o = FnOracle { delay: |s: &[f64]| 1.0 + s.iter().map(|v| v * v).sum::<f64>(), noise_std: 0.01 };
    let x = [0.5, 0.4];
    let truth = [1.0, 0.8];
    let mut first = Vec::new();
    for rep in 0..50 {
        let g = penalty_gradient(&linear_model(), &o, S, &point(&x), 0.25, &seeds(100, rep + 1)).unwrap();
        for (got, want) in g.gradient.iter().zip(truth) {
            assert!((got - want).abs() <= 0.02, "rep {rep}: {:?}", g.gradient);
        }
        first.push(g.gradient[0]);
    }
    // Spread should match sigma * sqrt(2 / probes) / (2 delta).
    let mean = first.iter().sum::<f64>() / 50.0;
    let sd = (first.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
    let predicted = 0.01 * (2.0f64 / 100.0).sqrt() / 0.5;
    assert!(sd > predicted / 2.0 && sd < predicted * 2.0, "sd {sd} vs {predicted}");
}

#[test]
fn missing_probes_and_degenerate_delta_are_errors() {
    let o = FnOracle { delay: |_: &[f64]| 3.0, noise_std: 0.0 };
    assert!(penalty_gradient(&linear_model(), &o, S, &point(&[0.5, 0.5]), 0.1, &[]).is_err());
    assert!(penalty_gradient(&linear_model(), &o, S, &point(&[0.5, 0.5]), 0.0, &[1]).is_err());
}

/// Bivariate quartic `sum c[a][b] x^a y^b` over `a + b <= 4`.
fn quartic(c: &[f64], s: &[f64]) -> f64 {
    let mut v = 0.0;
    let mut i = 0;
    for a in 0..=4 {
        for b in 0..=(4 - a) {
            v += c[i] * s[0].powi(a) * s[1].powi(b);
            i += 1;
        }
    }
    v
}

fn quartic_grad(c: &[f64], s: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    let mut i = 0;
    for a in 0..=4i32 {
        for b in 0..=(4 - a) {
            if a > 0 {
                g[0] += c[i] * a as f64 * s[0].powi(a - 1) * s[1].powi(b);
            }
            if b > 0 {
                g[1] += c[i] * b as f64 * s[0].powi(a) * s[1].powi(b - 1);
            }
            i += 1;
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quadratics_are_exact(
        q in prop::collection::vec(-3.0f64..3.0, 6),
        x in prop::collection::vec(0.2f64..0.8, 2),
    ) {
        // 1 + 100 keeps the hinge active everywhere on the probe stencil.
        let f = |s: &[f64]| 101.0 + q[0] * s[0] * s[0] + q[1] * s[0] * s[1] + q[2] * s[1] * s[1] + q[3] * s[0] + q[4] * s[1] + q[5];
        let o = FnOracle { delay: f, noise_std: 0.0 };
        let g = penalty_gradient(&linear_model(), &o, S, &point(&x), 0.1, &[3]).unwrap();
        let want = [2.0 * q[0] * x[0] + q[1] * x[1] + q[3], q[1] * x[0] + 2.0 * q[2] * x[1] + q[4]];
        for (got, want) in g.gradient.iter().zip(want) {
            prop_assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn central_difference_error_is_second_order(
        c in prop::collection::vec(-2.0f64..2.0, 15),
        x in prop::collection::vec(0.3f64..0.7, 2),
    ) {
        let f = |s: &[f64]| 201.0 + quartic(&c, s);
        let o = FnOracle { delay: f, noise_std: 0.0 };
        let truth = quartic_grad(&c, &x);
        let g1 = penalty_gradient(&linear_model(), &o, S, &point(&x), 0.1, &[3]).unwrap().gradient;
        let g2 = penalty_gradient(&linear_model(), &o, S, &point(&x), 0.05, &[3]).unwrap().gradient;
        for d in 0..2 {
            let (e1, e2) = ((g1[d] - truth[d]).abs(), (g2[d] - truth[d]).abs());
            if e1 > 1e-9 {
                let ratio = e1 / e2;
                prop_assert!((3.5..=4.5).contains(&ratio), "coordinate {d}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn penalty_is_non_negative(
        d in prop_oneof![Just(f64::INFINITY), 0.0f64..1e5],
        t in 0.0f64..=1.0,
        tau in 0.1f64..50.0,
        rho in 0.0f64..=1.0,
        a in (0.0f64..10.0, 0.0f64..10.0),
        quad in any::<bool>(),
    ) {
        let m = PenaltyModel {
            requirement: QoeRequirement { tau_ms: DelayBound::Bounded(tau), rho },
            alpha_tau: a.0,
            alpha_rho: a.1,
            exponent: if quad { Exponent::Quadratic } else { Exponent::Linear },
            delay_cap_ms: DEFAULT_DELAY_CAP_MS,
        };
        let s = QoeSample { delay_ms: d, throughput: t, n_requests: 1, raw_delays: None, seed: 0 };
        let p = penalty(&m, &s);
        prop_assert!(p >= 0.0 && p.is_finite());
        if d <= tau && t >= rho {
            prop_assert_eq!(p, 0.0);
        }
        if a.0 > 0.0 && a.1 > 0.0 {
            prop_assert_eq!(p == 0.0, d <= tau && t >= rho);
        }
    }
}

fn slice(lambda: f64) -> SliceSpec {
    SliceSpec {
        id: S,
        priority_rank: 0,
        alpha_tau: 1.0,
        alpha_rho: 1.0,
        demand_mi: 1.0,
        requirement: QoeRequirement {
            tau_ms: DelayBound::Bounded(2.0),
            rho: 0.99,
        },
        traffic: TrafficModel::poisson(lambda, 1000, 1000),
    }
}

/// Link and server both serve 1100 requests per second at full allocation.
fn topology() -> Topology {
    Topology {
        buffer_pkts: 100,
        edges: vec![Edge { id: 0, capacity_mbps: 8.8 }],
        cores: vec![Core { id: 0, mips: 1100.0 }],
    }
}

#[test]
fn analytic_tandem_delay() {
    let s = analytic_mm1_evaluate(&slice(100.0), &AllocationVector::from_coords(1, &[1.0, 1.0]), &topology()).unwrap();
    assert!((s.delay_ms - 2.0).abs() < 1e-9);
    assert_eq!(s.throughput, 1.0);
    let unstable =
        analytic_mm1_evaluate(&slice(100.0), &AllocationVector::from_coords(1, &[1.0, 100.0 / 1100.0]), &topology())
            .unwrap();
    assert!(unstable.is_unbounded());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn analytic_penalty_is_monotone(
        lambda in 10.0f64..1000.0,
        x in prop::collection::vec(0.0f64..=1.0, 2),
        d in 0usize..2,
        bump in 0.0f64..0.5,
        quad in any::<bool>(),
    ) {
        let sl = slice(lambda);
        let m = PenaltyModel::for_slice(&sl, if quad { Exponent::Quadratic } else { Exponent::Linear });
        let lo = AllocationVector::from_coords(1, &x);
        let mut hi = lo.clone();
        hi.set_coord(d, (x[d] + bump).min(1.0));
        let p_lo = penalty(&m, &analytic_mm1_evaluate(&sl, &lo, &topology()).unwrap());
        let p_hi = penalty(&m, &analytic_mm1_evaluate(&sl, &hi, &topology()).unwrap());
        prop_assert!(p_hi <= p_lo + 1e-12, "{p_hi} > {p_lo}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(
        lambda in 50.0f64..400.0,
        x in prop::collection::vec(0.45f64..0.95, 2),
    ) {
        // Skip points sitting on the hinge kink.
        let sl = slice(lambda);
        let m = PenaltyModel::for_slice(&sl, Exponent::Quadratic);
        let topo = topology();
        let scenario_oracle = AnalyticOracleAdapter { slice: sl.clone(), topology: topo.clone() };
        let fd = penalty_gradient_within(&m, &scenario_oracle, S, &point(&x), 1e-5, &[0], None).unwrap().gradient;
        let exact = analytic_penalty_gradient(&m, &sl, &AllocationVector::from_coords(1, &x), &topo).unwrap();
        let excess = analytic_mm1_evaluate(&sl, &AllocationVector::from_coords(1, &x), &topo).unwrap().delay_ms - 2.0;
        prop_assume!(excess.abs() > 1e-3);
        for d in 0..2 {
            prop_assert!((fd[d] - exact[d]).abs() <= 1e-4 * (1.0 + exact[d].abs()), "{fd:?} vs {exact:?}");
        }
    }
}

/// Analytic evaluation without building a whole scenario.
struct AnalyticOracleAdapter {
    slice: SliceSpec,
    topology: Topology,
}

impl QoeOracle for AnalyticOracleAdapter {
    fn evaluate(&self, _: SliceId, alloc: &AllocationMatrix, seed: u64) -> slicelab::Result<QoeSample> {
        let mut s = analytic_mm1_evaluate(&self.slice, alloc.row(S)?, &self.topology)?;
        s.seed = seed;
        Ok(s)
    }
}

#[test]
fn analytic_oracle_ignores_seed() {
    let sc = slicelab::validate_scenario(&[slice(100.0)], &topology(), &point(&[0.5, 0.5])).unwrap();
    let o = AnalyticOracle::new(sc);
    let a = o.evaluate(S, &point(&[0.5, 0.5]), 1).unwrap();
    let b = o.evaluate(S, &point(&[0.5, 0.5]), 2).unwrap();
    assert_eq!(a.delay_ms, b.delay_ms);
}
