//! Experiment commands behind the `slicelab` binary: run the reconfiguration
//! over several seeds, compare it against the M/M/1 baseline, and write
//! plot-ready CSV files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baseline::{baseline_allocation, violation_report, BaselinePlan, SliceViolation, ViolationReport};
use crate::domain::SliceId;
use crate::error::{Error, Result};
use crate::osra::{eval_seed, run_osra, IterationTrace, OsraOutcome, TransferRule};
use crate::scenario::{ScenarioConfig, ValidConfig};
use crate::sim::Statistic;

/// Parses `a..b` (half-open), `a..=b`, or a comma-separated list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("bad seed {x:?}: {e}"));
    let seeds = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list {s:?} is empty"));
    }
    Ok(seeds)
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub transfer_rule: Option<TransferRule>,
    pub statistic: Option<Statistic>,
}

/// Loads a scenario file (or the built-in one), applies overrides and
/// validates it.
pub fn load_config(path: Option<&Path>, ov: Overrides) -> Result<ValidConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::reference(),
    };
    if let Some(r) = ov.transfer_rule {
        cfg.osra.transfer_rule = r;
    }
    if let Some(s) = ov.statistic {
        cfg.osra.statistic = s;
    }
    cfg.validate()
}

/// The fully resolved configuration as TOML.
pub fn dry_run(cfg: &ValidConfig) -> Result<String> {
    cfg.config.to_toml()
}

/// Runs the reconfiguration once per seed, concurrently.
pub fn run_seeds(cfg: &ValidConfig, seeds: &[u64]) -> Result<Vec<OsraOutcome>> {
    let c = &cfg.config;
    seeds
        .par_iter()
        .map(|&s| run_osra(&cfg.scenario, c.initial_alloc.clone(), c.new_slice, &c.sim, &c.osra, s))
        .collect()
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn coord_names(cfg: &ValidConfig) -> Vec<String> {
    let t = cfg.scenario.topology();
    t.edges
        .iter()
        .map(|e| format!("edge{}", e.id))
        .chain(t.cores.iter().map(|c| format!("core{}", c.id)))
        .collect()
}

/// One row per iteration: scalar fields, then the transfer and net change
/// per coordinate, then per slice its penalty, measured QoE, gradient and
/// allocation.
pub fn write_iterations_csv<W: Write>(cfg: &ValidConfig, traces: &[IterationTrace], out: W) -> Result<()> {
    let names = coord_names(cfg);
    let ids: Vec<SliceId> = cfg.config.initial_alloc.ids().collect();
    let mut header: Vec<String> = ["k", "stop_metric", "new_gradient_norm", "fallback"]
        .map(String::from)
        .to_vec();
    header.extend(names.iter().map(|n| format!("transfer_{n}")));
    header.extend(names.iter().map(|n| format!("net_change_{n}")));
    for id in &ids {
        header.push(format!("s{id}_penalty"));
        header.push(format!("s{id}_delay_stat_ms"));
        header.push(format!("s{id}_throughput"));
        header.extend(names.iter().map(|n| format!("s{id}_grad_{n}")));
        header.extend(names.iter().map(|n| format!("s{id}_alloc_{n}")));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for t in traces {
        let mut row = vec![
            t.k.to_string(),
            f(t.stop_metric),
            f(t.new_gradient_norm),
            u8::from(t.fallback).to_string(),
        ];
        row.extend(t.transfer.iter().map(|&x| f(x)));
        row.extend(t.net_change.iter().map(|&x| f(x)));
        for id in &ids {
            let st = t.slice(*id);
            row.push(st.map_or(String::new(), |s| f(s.penalty)));
            row.push(st.map_or(String::new(), |s| f(s.sample.delay_ms)));
            row.push(st.map_or(String::new(), |s| f(s.sample.throughput)));
            for d in 0..names.len() {
                row.push(st.and_then(|s| s.gradient.get(d)).map_or(String::new(), |&g| f(g)));
            }
            let a = t.alloc.get(*id);
            for d in 0..names.len() {
                row.push(a.map_or(String::new(), |v| f(v.coord(d))));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `step,k,slice,mean_delay_ms,max_delay_ms,delay_stat_ms,throughput,penalty,n_requests`.
/// The last step of each run is the final allocation and has an empty `k`.
pub fn write_qoe_csv<W: Write>(outcome: &OsraOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "step",
        "k",
        "slice",
        "mean_delay_ms",
        "max_delay_ms",
        "delay_stat_ms",
        "throughput",
        "penalty",
        "n_requests",
    ])?;
    let steps = outcome
        .traces
        .iter()
        .map(|t| (Some(t.k), &t.slices))
        .chain(std::iter::once((None, &outcome.final_qoe)));
    for (step, (k, slices)) in steps.enumerate() {
        for s in slices {
            w.write_record([
                step.to_string(),
                k.map_or(String::new(), |k| k.to_string()),
                s.slice.to_string(),
                f(s.mean_delay_ms),
                f(s.max_delay_ms),
                f(s.sample.delay_ms),
                f(s.sample.throughput),
                f(s.penalty),
                s.sample.n_requests.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `slice,resource,value` for the final allocation.
pub fn write_final_alloc_csv<W: Write>(cfg: &ValidConfig, outcome: &OsraOutcome, out: W) -> Result<()> {
    let names = coord_names(cfg);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slice", "resource", "value"])?;
    for (id, v) in outcome.final_alloc.iter() {
        for (d, n) in names.iter().enumerate() {
            w.write_record([id.to_string(), n.clone(), f(v.coord(d))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Seed-averaged QoE of one slice at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatePoint {
    pub step: usize,
    pub slice: SliceId,
    pub n_seeds: usize,
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
    pub throughput: f64,
    pub penalty: f64,
}

/// Averages each slice's QoE series over runs. Runs that stopped early are
/// held at their final measurement so every step averages all seeds.
pub fn aggregate_series(outcomes: &[OsraOutcome], slice: SliceId) -> Vec<AggregatePoint> {
    let series: Vec<_> = outcomes.iter().map(|o| o.qoe_series(slice)).collect();
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|step| {
            let pts: Vec<_> = series
                .iter()
                .filter_map(|s| s.get(step).or(s.last()))
                .collect();
            let n = pts.len().max(1) as f64;
            let avg = |g: &dyn Fn(&crate::osra::SliceTrace) -> f64| pts.iter().map(|p| g(p)).sum::<f64>() / n;
            AggregatePoint {
                step,
                slice,
                n_seeds: pts.len(),
                mean_delay_ms: avg(&|p| p.mean_delay_ms),
                max_delay_ms: avg(&|p| p.max_delay_ms),
                throughput: avg(&|p| p.sample.throughput),
                penalty: avg(&|p| p.penalty),
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::File::create(path)?)
}

/// Files written by [`cmd_run`].
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub outcomes: Vec<OsraOutcome>,
    pub seed_dirs: Vec<PathBuf>,
    pub aggregate: PathBuf,
    pub runs: PathBuf,
}

/// Runs every seed, then writes `seed_<s>/{iterations,qoe_per_iter,final_alloc}.csv`,
/// `aggregate.csv` and `runs.csv` under `out`.
pub fn cmd_run(cfg: &ValidConfig, out: &Path, seeds: &[u64]) -> Result<RunArtifacts> {
    let outcomes = run_seeds(cfg, seeds)?;
    let mut seed_dirs = Vec::new();
    for o in &outcomes {
        let dir = out.join(format!("seed_{}", o.run_seed));
        write_iterations_csv(cfg, &o.traces, create(&dir.join("iterations.csv"))?)?;
        write_qoe_csv(o, create(&dir.join("qoe_per_iter.csv"))?)?;
        write_final_alloc_csv(cfg, o, create(&dir.join("final_alloc.csv"))?)?;
        seed_dirs.push(dir);
    }

    let aggregate = out.join("aggregate.csv");
    let mut w = csv::Writer::from_writer(create(&aggregate)?);
    w.write_record([
        "step",
        "slice",
        "n_seeds",
        "mean_delay_ms",
        "max_delay_ms",
        "throughput",
        "penalty",
    ])?;
    for id in cfg.config.initial_alloc.ids() {
        for p in aggregate_series(&outcomes, id) {
            w.write_record([
                p.step.to_string(),
                id.to_string(),
                p.n_seeds.to_string(),
                f(p.mean_delay_ms),
                f(p.max_delay_ms),
                f(p.throughput),
                f(p.penalty),
            ])?;
        }
    }
    w.flush()?;

    let runs = out.join("runs.csv");
    let mut w = csv::Writer::from_writer(create(&runs)?);
    w.write_record(["seed", "iterations", "converged", "max_iters_exceeded", "final_stop_metric", "probes"])?;
    for o in &outcomes {
        w.write_record([
            o.run_seed.to_string(),
            o.iterations().to_string(),
            u8::from(o.converged).to_string(),
            u8::from(o.max_iters_exceeded).to_string(),
            o.traces.last().map_or(String::new(), |t| f(t.stop_metric)),
            o.memory.len().to_string(),
        ])?;
    }
    w.flush()?;

    Ok(RunArtifacts {
        outcomes,
        seed_dirs,
        aggregate,
        runs,
    })
}

/// Baseline and reconfigured allocations scored on the same seeds.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub plan: BaselinePlan,
    pub outcomes: Vec<OsraOutcome>,
    pub baseline: ViolationReport,
    pub osra: ViolationReport,
}

/// Scores the M/M/1 baseline and each seed's final reconfigured allocation
/// on identical traffic.
pub fn compare(cfg: &ValidConfig, seeds: &[u64]) -> Result<Comparison> {
    let c = &cfg.config;
    let plan = baseline_allocation(&cfg.scenario, c.baseline.budget_split)?;
    let outcomes = run_seeds(cfg, seeds)?;
    let eval_seeds: Vec<u64> = seeds.iter().map(|&s| eval_seed(s)).collect();
    let baseline = violation_report(&cfg.scenario, &c.sim, &eval_seeds, |_| plan.alloc.clone())?;
    let osra = violation_report(&cfg.scenario, &c.sim, &eval_seeds, |s| {
        let i = eval_seeds.iter().position(|&e| e == s).unwrap_or(0);
        outcomes[i].final_alloc.clone()
    })?;
    Ok(Comparison {
        plan,
        outcomes,
        baseline,
        osra,
    })
}

/// Writes `compare.csv` and `histogram.csv` under `out`.
pub fn cmd_compare(cfg: &ValidConfig, out: &Path, seeds: &[u64]) -> Result<Comparison> {
    let cmp = compare(cfg, seeds)?;
    let mut w = csv::Writer::from_writer(create(&out.join("compare.csv"))?);
    w.write_record([
        "method",
        "seed",
        "slice",
        "violation_fraction",
        "mean_delay",
        "max_delay",
        "throughput",
        "offered",
        "succeeded",
        "empty",
        "infeasible",
    ])?;
    let methods: [(&str, &ViolationReport); 2] = [("baseline", &cmp.baseline), ("osra", &cmp.osra)];
    let row = |w: &mut csv::Writer<fs::File>, method: &str, seed: String, v: &SliceViolation| -> Result<()> {
        let infeasible = method == "baseline" && cmp.plan.infeasible.get(&v.slice).copied().unwrap_or(false);
        w.write_record([
            method.to_string(),
            seed,
            v.slice.to_string(),
            f(v.violation_fraction),
            f(v.mean_delay_ms),
            f(v.max_delay_ms),
            f(v.throughput),
            v.offered.to_string(),
            v.succeeded.to_string(),
            u8::from(v.empty).to_string(),
            u8::from(infeasible).to_string(),
        ])?;
        Ok(())
    };
    for (method, rep) in methods {
        for (i, (_, vs)) in rep.per_seed.iter().enumerate() {
            for v in vs {
                row(&mut w, method, seeds[i].to_string(), v)?;
            }
        }
        if seeds.len() > 1 {
            for v in &rep.pooled {
                row(&mut w, method, "all".to_string(), v)?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&out.join("histogram.csv"))?);
    w.write_record(["method", "slice", "bin_lo_ms", "bin_hi_ms", "count"])?;
    for (method, rep) in methods {
        for v in &rep.pooled {
            let h = &v.histogram;
            let last = h.counts.len() - 1;
            for (i, c) in h.counts.iter().enumerate() {
                let hi = if i == last { String::new() } else { f(h.lower_edge(i + 1)) };
                w.write_record([method.to_string(), v.slice.to_string(), f(h.lower_edge(i)), hi, c.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(cmp)
}

/// True for errors caused by the input rather than by running it.
pub fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Invalid(_) | Error::Parse(_) | Error::UnknownSlice(_) | Error::DimensionMismatch { .. } | Error::Io(_)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert_eq!(parse_seeds("5").unwrap(), vec![5]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
