//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_capped_simplex, dist, mm1_link, pooled_mean_delay, FnOracle};
use slicelab::cli::{aggregate_series, cmd_run, compare, AggregatePoint, Comparison};
use slicelab::osra::{run_osra_with, OsraProblem, SliceGradient, SliceStep};
use slicelab::penalty::{penalty_gradient, Exponent, PenaltyModel, DEFAULT_DELAY_CAP_MS};
use slicelab::{
    project_capped_simplex, AllocationMatrix, AllocationVector, ConstraintSet, DelayBound, OsraConfig,
    QoeRequirement, ScenarioConfig, SimConfig, SliceId, TransferRule, ValidConfig,
};

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

const SEEDS: std::ops::Range<u64> = 0..10;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference() -> ValidConfig {
    ScenarioConfig::reference().validate().expect("reference scenario is valid")
}

/// Runs the reference comparison once; criteria 1 to 4 read from it.
struct ReferenceRun {
    cmp: Comparison,
    seconds: f64,
    slice1: Vec<AggregatePoint>,
    slice2: Vec<AggregatePoint>,
}

impl ReferenceRun {
    fn new() -> Self {
        let cfg = reference();
        let seeds: Vec<u64> = SEEDS.collect();
        let t = Instant::now();
        let cmp = compare(&cfg, &seeds).expect("reference comparison runs");
        let seconds = t.elapsed().as_secs_f64();
        let slice1 = aggregate_series(&cmp.outcomes, SliceId(1));
        let slice2 = aggregate_series(&cmp.outcomes, SliceId(2));
        ReferenceRun {
            cmp,
            seconds,
            slice1,
            slice2,
        }
    }
}

fn convergence(r: &ReferenceRun) -> Verdict {
    let fast = r
        .cmp
        .outcomes
        .iter()
        .filter(|o| o.converged && o.iterations() <= 10)
        .count();
    let iters: Vec<usize> = r.cmp.outcomes.iter().map(|o| o.iterations()).collect();
    check(
        fast >= 9 && r.seconds < 120.0,
        format!("{fast}/10 seeds stopped within 10 iterations {iters:?}; {:.1} s", r.seconds),
    )
}

/// Monotone in the given direction up to one inversion of at most 5%.
fn monotone(series: &[f64], increasing: bool) -> (bool, usize, f64) {
    let mut count = 0;
    let mut worst = 0.0_f64;
    for w in series.windows(2) {
        let step = if increasing { w[0] - w[1] } else { w[1] - w[0] };
        if step > 0.0 {
            count += 1;
            worst = worst.max(step / w[0].abs());
        }
    }
    (count == 0 || (count == 1 && worst <= 0.05), count, worst)
}

fn hand_off(r: &ReferenceRun) -> Verdict {
    let d1: Vec<f64> = r.slice1.iter().map(|p| p.mean_delay_ms).collect();
    let d2: Vec<f64> = r.slice2.iter().map(|p| p.mean_delay_ms).collect();
    let (ok1, n1, w1) = monotone(&d1, false);
    let (ok2, n2, w2) = monotone(&d2, true);
    let final1 = *d1.last().unwrap();
    let tau2 = reference().scenario.slice(SliceId(2)).unwrap().requirement.tau_ms.ms().unwrap();
    let max2 = r.slice2.last().unwrap().max_delay_ms;
    let violation2 = (max2 - tau2).max(0.0);
    check(
        ok1 && ok2 && final1 <= 2.0 && violation2 <= 4.0,
        format!(
            "slice 1 mean {:.3} -> {final1:.3} ms ({n1} inversions, worst {:.1}%); \
             slice 2 mean {:.3} -> {:.3} ms ({n2} inversions, worst {:.1}%); \
             slice 2 final max {max2:.3} ms, violation {violation2:.3} ms",
            d1[0],
            100.0 * w1,
            d2[0],
            d2.last().unwrap(),
            100.0 * w2
        ),
    )
}

fn throughput(r: &ReferenceRun) -> Verdict {
    let t1 = r.slice1.last().unwrap().throughput;
    let (t2a, t2b) = (r.slice2[0].throughput, r.slice2.last().unwrap().throughput);
    let change = (t2b - t2a).abs() / t2a;
    check(
        t1 >= 0.99 && change < 0.02,
        format!(
            "slice 1 {:.4} -> {t1:.4}; slice 2 {t2a:.4} -> {t2b:.4} ({:.2}% change)",
            r.slice1[0].throughput,
            100.0 * change
        ),
    )
}

fn baseline_failure(r: &ReferenceRun) -> Verdict {
    let b = r.cmp.baseline.pooled(SliceId(1)).unwrap().violation_fraction;
    let o = r.cmp.osra.pooled(SliceId(1)).unwrap().violation_fraction;
    check(
        b >= 0.5 && b >= 10.0 * o,
        format!("slice 1 violation fraction: baseline {b:.4}, reconfigured {o:.4}"),
    )
}

fn projection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut oracle_err = 0.0_f64;
    let mut idem_err = 0.0_f64;
    let mut expansion = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let mut draw = || (0..n).map(|_| rng.random_range(-1.5..2.5)).collect::<Vec<f64>>();
        let (y, z) = (draw(), draw());
        let (py, pz) = (project_capped_simplex(&y), project_capped_simplex(&z));
        oracle_err = oracle_err.max(dist(&py, &brute_force_capped_simplex(&y)));
        idem_err = idem_err.max(dist(&project_capped_simplex(&py), &py));
        expansion = expansion.max(dist(&py, &pz) - dist(&y, &z));
    }
    check(
        oracle_err <= 1e-8 && idem_err <= 1e-12 && expansion <= 1e-12,
        format!("max QP gap {oracle_err:.2e}, idempotence {idem_err:.2e}, expansion {expansion:.2e}"),
    )
}

fn unit_bound_model() -> PenaltyModel {
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

fn gradient_fidelity() -> Verdict {
    let s = SliceId(1);
    let at = |x: &[f64]| {
        let mut m = AllocationMatrix::new();
        m.insert(s, AllocationVector::from_coords(1, x));
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut quad_err = 0.0_f64;
    let mut ratios: Vec<f64> = Vec::new();
    for _ in 0..100 {
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(0.2..0.8)).collect();
        let f = |p: &[f64]| {
            101.0 + q[0] * p[0] * p[0] + q[1] * p[0] * p[1] + q[2] * p[1] * p[1] + q[3] * p[0] + q[4] * p[1] + q[5]
        };
        let g = penalty_gradient(&unit_bound_model(), &FnOracle { delay: f, noise_std: 0.0 }, s, &at(&x), 0.1, &[1])
            .unwrap()
            .gradient;
        let want = [2.0 * q[0] * x[0] + q[1] * x[1] + q[3], q[1] * x[0] + 2.0 * q[2] * x[1] + q[4]];
        quad_err = quad_err.max((g[0] - want[0]).abs()).max((g[1] - want[1]).abs());

        // Quartic with cross terms; the third derivatives are non-zero.
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..2.0)).collect();
        let f4 = |p: &[f64]| 201.0 + c[0] * p[0].powi(4) + c[1] * p[1].powi(4) + c[2] * p[0].powi(3) * p[1] + c[3] * p[0] * p[1] + c[4] * p[1].powi(3);
        let truth = [
            4.0 * c[0] * x[0].powi(3) + 3.0 * c[2] * x[0].powi(2) * x[1] + c[3] * x[1],
            4.0 * c[1] * x[1].powi(3) + c[2] * x[0].powi(3) + c[3] * x[0] + 3.0 * c[4] * x[1].powi(2),
        ];
        let o4 = FnOracle { delay: f4, noise_std: 0.0 };
        let g1 = penalty_gradient(&unit_bound_model(), &o4, s, &at(&x), 0.1, &[1]).unwrap().gradient;
        let g2 = penalty_gradient(&unit_bound_model(), &o4, s, &at(&x), 0.05, &[1]).unwrap().gradient;
        for d in 0..2 {
            ratios.push((g1[d] - truth[d]).abs() / (g2[d] - truth[d]).abs());
        }
    }
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(
        quad_err <= 1e-10 && lo >= 3.5 && hi <= 4.5,
        format!("quadratic max error {quad_err:.2e}; quartic error ratio in [{lo:.4}, {hi:.4}]"),
    )
}

fn queueing_theory() -> Verdict {
    let cfg = SimConfig {
        horizon_s: 20.0,
        propagation_ms: 0.0,
        ..SimConfig::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for rho in [0.3, 0.5, 0.7] {
        let (sc, alloc, mu) = mm1_link(rho);
        let sim = pooled_mean_delay(&sc, &alloc, &cfg, SliceId(1), 10);
        let theory = 1e3 / (mu - rho * mu);
        let rel = (sim - theory).abs() / theory;
        ok &= rel <= 0.15;
        parts.push(format!("rho {rho}: {sim:.4} vs {theory:.4} ms ({:.1}%)", 100.0 * rel));
    }
    check(ok, parts.join("; "))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(key, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn feasibility_and_determinism(r: &ReferenceRun) -> Verdict {
    let mut worst = 0.0_f64;
    for o in &r.cmp.outcomes {
        let allocs = o.traces.iter().map(|t| &t.alloc).chain([&o.final_alloc]);
        for a in allocs {
            let over = a.iter().flat_map(|(_, v)| v.coords()).map(|x| x - 1.0).fold(0.0, f64::max);
            worst = worst.max(a.max_infeasibility()).max(over);
        }
    }

    let cfg = reference();
    let seeds: Vec<u64> = SEEDS.collect();
    let tmp = tempfile::tempdir().unwrap();
    let run_in = |threads: usize, name: &str| {
        let dir = tmp.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_run(&cfg, &dir, &seeds)).expect("run succeeds");
        read_tree(&dir)
    };
    let serial = run_in(1, "serial");
    let parallel = run_in(4, "parallel");
    let again = run_in(4, "again");
    let identical = serial == parallel && parallel == again;
    check(
        worst <= 1e-9 && identical && serial.len() == 32,
        format!(
            "max infeasibility {worst:.2e}; {} files byte-identical across 1-thread and 4-thread reruns: {identical}",
            serial.len()
        ),
    )
}

fn conservative_accounting() -> Verdict {
    let j = SliceId(1);
    let lower = [SliceId(2), SliceId(3), SliceId(4)];
    let targets = [[0.1, 0.3, 0.2], [0.05, 0.1, 0.4], [0.2, 0.0, 0.1]];
    let existing = move |id: SliceId, a: &AllocationMatrix| -> slicelab::Result<Vec<f64>> {
        let t = targets[id.0 as usize - 2];
        Ok(a.row(id)?.coords().iter().zip(t).map(|(x, t)| 2.0 * (x - t)).collect())
    };
    let oracle = FnOracle {
        delay: |s: &[f64]| 1.0 + s.iter().map(|x| (1.0 - x).powi(2)).sum::<f64>(),
        noise_std: 0.0,
    };
    let model = unit_bound_model();
    let problem = OsraProblem {
        new_slice: j,
        lower: lower.to_vec(),
        constraints: ConstraintSet::new(1, 2),
        existing: &existing as &dyn SliceGradient,
        new_model: model,
        probe_oracle: &oracle,
        measure: &oracle,
        models: [(j, model)].into_iter().collect(),
    };
    let initial: AllocationMatrix = [
        (j, [0.05, 0.05, 0.05]),
        (lower[0], [0.45, 0.3, 0.3]),
        (lower[1], [0.3, 0.35, 0.3]),
        (lower[2], [0.2, 0.3, 0.35]),
    ]
    .into_iter()
    .map(|(id, r)| (id, AllocationVector::from_coords(1, &r)))
    .collect();
    let config = OsraConfig {
        transfer_rule: TransferRule::Conservative,
        eta: 0.05,
        delta: 0.02,
        probes: 2,
        epsilon: 0.0,
        max_iters: 20,
        eta_per_slice: vec![SliceStep { slice: lower[2], eta: 0.11 }],
        ..OsraConfig::default()
    };
    let out = run_osra_with(&problem, initial, &config, 9).unwrap();

    // Recomputed from the recorded gradients: each lower slice moves by
    // -eta_i g_i and the new slice by the recorded transfer.
    let mut recorded = 0.0_f64;
    let mut recomputed = 0.0_f64;
    for t in &out.traces {
        recorded = t.net_change.iter().fold(recorded, |m, x| m.max(x.abs()));
        for d in 0..3 {
            let given: f64 = lower
                .iter()
                .map(|&i| config.eta_for(i, t.k) * t.slice(i).unwrap().gradient[d])
                .sum();
            recomputed = recomputed.max((t.transfer[d] - given).abs());
        }
    }
    let moved = out.traces.iter().map(|t| t.stop_metric).fold(0.0, f64::max);
    check(
        out.traces.len() == 20 && recorded <= 1e-12 && recomputed <= 1e-12 && moved > 0.0,
        format!(
            "{} steps; max |net change| {recorded:.2e}; max |transfer - sum eta g| {recomputed:.2e}",
            out.traces.len()
        ),
    )
}

fn main() {
    let r = ReferenceRun::new();
    let criteria: Vec<Criterion> = vec![
        ("convergence speed", Box::new(|| convergence(&r))),
        ("QoE hand-off direction", Box::new(|| hand_off(&r))),
        ("throughput recovery", Box::new(|| throughput(&r))),
        ("baseline failure", Box::new(|| baseline_failure(&r))),
        ("projection oracle equivalence", Box::new(projection)),
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("simulator vs queueing theory", Box::new(queueing_theory)),
        ("feasibility and determinism", Box::new(|| feasibility_and_determinism(&r))),
        ("conservative-rule accounting", Box::new(conservative_accounting)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {tag}: {name}: {detail}", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
