//! Seeded benchmark suite: random networks and properties, compressed by
//! quantization and magnitude pruning, each solved from scratch and
//! incrementally.

use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::check::Budget;
use crate::error::{Error, Result};
use crate::incremental::reverify;
use crate::network::{prune_by_magnitude, quantize, Layer, Network};
use crate::proof::{core_checks, validity_ratio, ProofArtifact, Verdict};
use crate::muc::CoreCheck;
use crate::property::{Comparison, Inequality, InputBox, OutputProperty, PropertyFile, VerificationProblem};
use crate::search::solve;

/// Shape of generated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteShape {
    pub inputs: RangeInclusive<usize>,
    pub hidden_layers: RangeInclusive<usize>,
    pub widths: RangeInclusive<usize>,
    pub outputs: RangeInclusive<usize>,
}

impl SuiteShape {
    pub fn bench_default() -> Self {
        Self {
            inputs: 2..=16,
            hidden_layers: 1..=3,
            widths: 3..=12,
            outputs: 1..=3,
        }
    }

    /// Small enough for exhaustive phase enumeration.
    pub fn tiny() -> Self {
        Self {
            inputs: 2..=4,
            hidden_layers: 1..=3,
            widths: 2..=5,
            outputs: 1..=3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compression {
    Identity,
    Quantize(f64),
    Prune(f64),
}

impl Compression {
    pub fn apply(&self, net: &Network) -> Result<Network> {
        match *self {
            Compression::Identity => Ok(net.clone()),
            Compression::Quantize(step) => quantize(net, step),
            Compression::Prune(ratio) => prune_by_magnitude(net, ratio),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Compression::Identity => "identity",
            Compression::Quantize(_) => "quantize",
            Compression::Prune(_) => "prune",
        }
    }
}

/// One random problem `(f, P, Q)`.
pub fn generate_problem(rng: &mut ChaCha8Rng, shape: &SuiteShape) -> Result<VerificationProblem> {
    let n0 = rng.gen_range(shape.inputs.clone());
    let depth = rng.gen_range(shape.hidden_layers.clone());
    let mut dims = vec![n0];
    for _ in 0..depth {
        dims.push(rng.gen_range(shape.widths.clone()));
    }
    dims.push(rng.gen_range(shape.outputs.clone()));
    let layers = dims
        .windows(2)
        .map(|w| {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let weights = (0..w[1])
                .map(|_| (0..w[0]).map(|_| round3(rng.gen_range(-1.5..1.5) * scale)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| round3(rng.gen_range(-0.3..0.3))).collect();
            Layer::new(weights, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    let net = Network::new(n0, layers)?;

    let mut lower = Vec::with_capacity(n0);
    let mut upper = Vec::with_capacity(n0);
    for _ in 0..n0 {
        let c = round3(rng.gen_range(-1.0..1.0));
        let r = round3(rng.gen_range(0.05..0.6));
        lower.push(c - r);
        upper.push(c + r);
    }
    let input_box = InputBox::new(lower, upper)?;

    let samples: Vec<Vec<f64>> = (0..64)
        .map(|_| {
            let x: Vec<f64> = (0..n0)
                .map(|i| rng.gen_range(input_box.lower()[i]..=input_box.upper()[i]))
                .collect();
            net.forward(&x)
        })
        .collect::<Result<_>>()?;
    let m = net.output_dim();
    let property = if m >= 2 && rng.gen_bool(0.4) {
        // output k stays within `slack` of the others
        let center = net.forward(&input_box.center())?;
        let k = (0..m).max_by(|&a, &b| center[a].total_cmp(&center[b])).unwrap_or(0);
        let worst = samples
            .iter()
            .map(|y| (0..m).filter(|&i| i != k).map(|i| y[k] - y[i]).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        let slack = round3(-worst + rng.gen_range(-0.2..0.3));
        let clause = (0..m)
            .filter(|&i| i != k)
            .map(|i| {
                let mut c = vec![0.0; m];
                c[k] = 1.0;
                c[i] = -1.0;
                Inequality::new(c, Comparison::Ge, -slack)
            })
            .collect();
        OutputProperty::new(vec![clause])?
    } else {
        let c: Vec<f64> = (0..m).map(|_| round3(rng.gen_range(-1.0..1.0))).collect();
        let values: Vec<f64> = samples.iter().map(|y| c.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = hi - lo + 0.05;
        let threshold = round3(hi + spread * rng.gen_range(-0.1..0.4));
        let rel = if rng.gen_bool(0.5) { Comparison::Le } else { Comparison::Lt };
        OutputProperty::atom(c, rel, threshold)
    };
    VerificationProblem::new(net, input_box, property)
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scratch,
    Incremental,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub instance: String,
    pub mode: Mode,
    pub verdict: Verdict,
    pub wall_ms: f64,
    pub lp_calls: u64,
    #[serde(serialize_with = "opt_metric")]
    pub validity: Option<f64>,
    #[serde(serialize_with = "opt_metric")]
    pub speedup: Option<f64>,
}

fn opt_metric<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_str(&format!("{x:.6}")),
        None => s.serialize_str("NA"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub suite_size: usize,
    pub seed: u64,
    pub shape: SuiteShape,
    pub compressions: Vec<Compression>,
    pub budget: Budget,
    /// Zero wall times and LP-call speedups, so the CSV is byte-reproducible.
    pub deterministic: bool,
}

impl BenchConfig {
    pub fn new(suite_size: usize, seed: u64) -> Self {
        Self {
            suite_size,
            seed,
            shape: SuiteShape::bench_default(),
            compressions: vec![Compression::Quantize(0.1), Compression::Prune(0.2)],
            budget: Budget::default(),
            deterministic: false,
        }
    }
}

/// Per-compression aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionSummary {
    pub label: &'static str,
    /// `(bucket label, count)` over instances with a defined validity.
    pub validity_histogram: Vec<(String, usize)>,
    pub mean_speedup: Option<f64>,
    pub speedup_instances: usize,
    pub resolved_unk: Option<f64>,
    /// Fraction of scratch-UNSAT instances where incremental used no more LP calls.
    pub lp_not_worse_on_unsat: Option<f64>,
    pub unsat_instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CompressionSummary>,
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let na = |v: Option<f64>, pct: bool| match v {
            Some(x) if pct => format!("{:.1}%", 100.0 * x),
            Some(x) => format!("{x:.3}"),
            None => "N/A".into(),
        };
        for s in &self.summaries {
            writeln!(f, "[{}]", s.label)?;
            writeln!(f, "validity histogram:")?;
            for (bucket, n) in &s.validity_histogram {
                writeln!(f, "  {bucket:>10}  {n}")?;
            }
            writeln!(f, "mean speedup: {} over {} instances", na(s.mean_speedup, false), s.speedup_instances)?;
            writeln!(f, "resolved UNK: {}", na(s.resolved_unk, true))?;
            writeln!(
                f,
                "incremental LP calls <= scratch on UNSAT: {} of {} instances",
                na(s.lp_not_worse_on_unsat, true),
                s.unsat_instances
            )?;
        }
        Ok(())
    }
}

/// Bucket edges in percent; the last bucket is the closed top value.
fn buckets(c: Compression) -> Vec<(f64, f64, String)> {
    match c {
        Compression::Prune(_) => (0..5)
            .map(|i| {
                let lo = 20.0 * i as f64;
                let hi = lo + 20.0;
                let label = if i == 4 { format!("[{lo},{hi}]") } else { format!("[{lo},{hi})") };
                (lo, if i == 4 { f64::INFINITY } else { hi }, label)
            })
            .collect(),
        _ => vec![
            (0.0, 95.0, "[0,95)".into()),
            (95.0, 100.0, "[95,100)".into()),
            (100.0, f64::INFINITY, "100".into()),
        ],
    }
}

pub fn validity_histogram(c: Compression, values: &[f64]) -> Vec<(String, usize)> {
    buckets(c)
        .into_iter()
        .map(|(lo, hi, label)| {
            let n = values
                .iter()
                .filter(|v| {
                    let pct = 100.0 * **v;
                    pct >= lo && pct < hi
                })
                .count();
            (label, n)
        })
        .collect()
}

struct Pair {
    scratch: ProofArtifact,
    scratch_time: Duration,
    incremental_verdict: Verdict,
    incremental_lp: u64,
    incremental_time: Duration,
    validity: Option<f64>,
}

/// Runs the suite; writes `records.csv`, `summary.txt` and the instances
/// under `out_dir` when given. Fails if a scratch and an incremental verdict
/// disagree while neither is UNK.
pub fn run_bench(cfg: &BenchConfig, out_dir: Option<&Path>) -> Result<BenchReport> {
    if cfg.suite_size == 0 {
        return Err(Error::InvalidInput("suite size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut pairs: Vec<Vec<Pair>> = cfg.compressions.iter().map(|_| Vec::new()).collect();
    for i in 0..cfg.suite_size {
        let problem = generate_problem(&mut rng, &cfg.shape)?;
        if let Some(dir) = out_dir {
            let idir = dir.join("instances").join(format!("{i:04}"));
            fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
            problem.network().save(&idir.join("net.json"))?;
            let prop = PropertyFile::from_parts(problem.input_box(), problem.property());
            let path = idir.join("prop.json");
            fs::write(&path, prop.to_json_string()).map_err(|e| Error::io(&path, e))?;
        }
        let original = solve(&problem, cfg.budget, &[])?;
        for (ci, c) in cfg.compressions.iter().enumerate() {
            let f_prime = c.apply(problem.network())?;
            let compressed = problem.with_network(f_prime.clone())?;
            let scratch = solve(&compressed, cfg.budget, &[])?;
            let scratch_time = scratch.stats.wall_duration();
            let inc = reverify(&f_prime, &problem, &original, cfg.budget)?;
            if scratch.verdict != inc.verdict && scratch.verdict != Verdict::Unk && inc.verdict != Verdict::Unk {
                return Err(Error::ContractViolation(format!(
                    "instance {i} ({}): scratch {} but incremental {}",
                    c.label(),
                    scratch.verdict,
                    inc.verdict
                )));
            }
            let checks = core_checks(&original, &compressed, Budget::lp_calls(u64::MAX))?;
            let validity = validity_ratio(
                checks.iter().filter(|c| **c == CoreCheck::StillUnsat).count(),
                checks.len(),
            );
            pairs[ci].push(Pair {
                scratch,
                scratch_time,
                incremental_verdict: inc.verdict,
                incremental_lp: inc.report.lp_calls,
                incremental_time: inc.report.time,
                validity,
            });
            let p = pairs[ci].last().expect("just pushed");
            let id = format!("{i:04}/{}", c.label());
            let (ms_s, ms_i) = if cfg.deterministic {
                (0.0, 0.0)
            } else {
                (ms(p.scratch_time), ms(p.incremental_time))
            };
            records.push(RunRecord {
                instance: id.clone(),
                mode: Mode::Scratch,
                verdict: p.scratch.verdict,
                wall_ms: ms_s,
                lp_calls: p.scratch.stats.lp_calls,
                validity: None,
                speedup: None,
            });
            records.push(RunRecord {
                instance: id,
                mode: Mode::Incremental,
                verdict: p.incremental_verdict,
                wall_ms: ms_i,
                lp_calls: p.incremental_lp,
                validity: p.validity,
                speedup: pair_speedup(p, cfg.deterministic),
            });
        }
    }
    let summaries = cfg
        .compressions
        .iter()
        .zip(&pairs)
        .map(|(c, ps)| summarize(*c, ps, cfg.deterministic))
        .collect();
    let report = BenchReport { records, summaries };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("records.csv");
        fs::write(&csv_path, report.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let sum_path = dir.join("summary.txt");
        fs::write(&sum_path, report.to_string()).map_err(|e| Error::io(&sum_path, e))?;
    }
    Ok(report)
}

fn ms(d: Duration) -> f64 {
    (d.as_secs_f64() * 1e6).round() / 1e3
}

fn pair_speedup(p: &Pair, deterministic: bool) -> Option<f64> {
    if deterministic {
        (p.incremental_lp > 0).then(|| p.scratch.stats.lp_calls as f64 / p.incremental_lp as f64)
    } else {
        crate::proof::speedup(p.scratch_time, p.incremental_time).ok()
    }
}

fn summarize(c: Compression, pairs: &[Pair], deterministic: bool) -> CompressionSummary {
    let validities: Vec<f64> = pairs.iter().filter_map(|p| p.validity).collect();
    let speedups: Vec<f64> = pairs
        .iter()
        .filter(|p| !(p.scratch.verdict == Verdict::Unk && p.incremental_verdict == Verdict::Unk))
        .filter_map(|p| pair_speedup(p, deterministic))
        .collect();
    let unk: Vec<&Pair> = pairs.iter().filter(|p| p.scratch.verdict == Verdict::Unk).collect();
    let unsat: Vec<&Pair> = pairs.iter().filter(|p| p.scratch.verdict == Verdict::Unsat).collect();
    CompressionSummary {
        label: c.label(),
        validity_histogram: validity_histogram(c, &validities),
        mean_speedup: (!speedups.is_empty()).then(|| speedups.iter().sum::<f64>() / speedups.len() as f64),
        speedup_instances: speedups.len(),
        resolved_unk: (!unk.is_empty())
            .then(|| unk.iter().filter(|p| p.incremental_verdict != Verdict::Unk).count() as f64 / unk.len() as f64),
        lp_not_worse_on_unsat: (!unsat.is_empty()).then(|| {
            unsat.iter().filter(|p| p.incremental_lp <= p.scratch.stats.lp_calls).count() as f64 / unsat.len() as f64
        }),
        unsat_instances: unsat.len(),
    }
}
