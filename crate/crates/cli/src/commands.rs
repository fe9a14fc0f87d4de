//! Subcommand implementations. Each writes its files through a [`RunDir`]
//! and records inputs and seeds in the [`Context`] for the manifest.

use std::fs;
use std::path::Path;
use std::time::Duration;

use latnas::analysis::{convergence_curves, correlation_experiment, write_curves_csv, ExperimentSettings};
use latnas::derive_rng;
use latnas::distribution::ArchDistribution;
use latnas::evaluator::external::{ExternalEvaluator, ExternalOracle, ExternalScorer};
use latnas::evaluator::latency::{synth_latency_table, LatencyTable};
use latnas::evaluator::{ArchScorer, SyntheticBenchmark, TrainOracle};
use latnas::search::{
    evolutionary_search, ngd_search, random_search, EvolutionSettings, SearchConfig, SearchOutcome, SearchProblem,
};
use latnas::space::{approx_sci, space_cardinality, SpaceConfig};
use latnas::supernet::{train_progressive, Strategy, SupernetStore, TrainSettings, Trainer};
use serde::Serialize;

use crate::args::*;
use crate::error::{failure, CliError, CliResult};
use crate::manifest::{input_artifact, Artifact, RunDir};

/// Stream of the supernet-training generator; the correlation experiment
/// uses the same one, so `train` and `correlate` agree on a seed.
const STREAM_TRAIN: u64 = 1;

#[derive(Default)]
pub struct Context {
    pub run: Option<RunDir>,
    pub config_source: Option<String>,
    pub config: Option<SpaceConfig>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
}

impl Context {
    fn dir(&mut self, out: &Path) -> CliResult<&mut RunDir> {
        Ok(self.run.insert(RunDir::create(out)?))
    }

    fn load_config(&mut self, opt: &ConfigOpt) -> CliResult<SpaceConfig> {
        let cfg = match opt.config.as_str() {
            "default" => SpaceConfig::default(),
            "handwriting" => SpaceConfig::handwriting(),
            "scene" => SpaceConfig::scene(),
            path => {
                let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{path}: {e}")))?;
                let cfg = SpaceConfig::from_json(&text).map_err(|e| CliError::config(format!("{path}: {e}")))?;
                self.inputs.push(input_artifact(Path::new(path))?);
                cfg
            }
        };
        cfg.check()?;
        self.config_source = Some(opt.config.clone());
        self.config = Some(cfg.clone());
        Ok(cfg)
    }

    fn read_input(&mut self, path: &Path) -> CliResult<String> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        self.inputs.push(input_artifact(path)?);
        Ok(text)
    }
}

fn json_line<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(failure)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn seed_list(seeds: &[u64], start: u64, n: u64) -> Vec<u64> {
    if seeds.is_empty() { (start..start + n).collect() } else { seeds.to_vec() }
}

fn spawn(cmd: &str, opts: &EvaluatorOpts) -> CliResult<ExternalEvaluator> {
    Ok(ExternalEvaluator::spawn(cmd, Duration::from_millis(opts.eval_timeout_ms))?)
}

fn synthetic(seed: u64, opts: &BenchmarkOpts) -> SyntheticBenchmark {
    SyntheticBenchmark {
        noise_sigma: opts.noise_sigma,
        interaction_weight: opts.interaction_weight,
        ..SyntheticBenchmark::new(seed)
    }
}

fn require_synthetic(opts: &EvaluatorOpts, what: &str) -> CliResult<()> {
    match opts.evaluator {
        EvaluatorSpec::Synthetic => Ok(()),
        EvaluatorSpec::External(_) => {
            Err(CliError::config(format!("{what} needs ground truth and only runs with the synthetic evaluator")))
        }
    }
}

#[derive(Serialize)]
struct Counts {
    paths: String,
    spatial: String,
    sequential: String,
    total: String,
}

pub fn count(args: &CountArgs, ctx: &mut Context) -> CliResult<()> {
    let cfg = ctx.load_config(&args.config)?;
    let c = space_cardinality(&cfg)?;
    println!("paths       {}", c.paths);
    println!("spatial     {}  ({})", approx_sci(&c.spatial), c.spatial);
    println!("sequential  {}", c.sequential);
    println!("total       {}  ({})", approx_sci(&c.total), c.total);
    if let Some(out) = &args.out {
        let counts = Counts {
            paths: c.paths.to_string(),
            spatial: c.spatial.to_string(),
            sequential: c.sequential.to_string(),
            total: c.total.to_string(),
        };
        ctx.dir(out)?.write("count.json", &json_line(&counts)?)?;
    }
    Ok(())
}

pub fn train(args: &TrainArgs, ctx: &mut Context) -> CliResult<()> {
    let cfg = ctx.load_config(&args.config)?;
    let seed = args.run.seed;
    ctx.seeds = vec![seed];
    let oracle: Box<dyn TrainOracle> = match &args.evaluator.evaluator {
        EvaluatorSpec::Synthetic => Box::new(synthetic(args.bench_seed.unwrap_or(seed), &args.bench)),
        EvaluatorSpec::External(cmd) => Box::new(ExternalOracle::new(spawn(cmd, &args.evaluator)?)),
    };
    let settings = TrainSettings {
        strategy: args.train.strategy,
        blocks: args.train.blocks,
        iters: args.iters,
        lookup_samples: args.train.lookup_samples,
        ..Default::default()
    };
    let mut trainer = match &args.resume {
        Some(path) => {
            let t = Trainer::from_checkpoint_json(&ctx.read_input(path)?)?;
            if t.store().config != cfg || *t.settings() != settings {
                return Err(CliError::config("checkpoint config or settings differ from the flags"));
            }
            t
        }
        None => Trainer::new(&cfg, settings, oracle.aggregation(), derive_rng(seed, STREAM_TRAIN))?,
    };
    let run = ctx.dir(&args.out)?;
    let chunk = args.checkpoint_every.filter(|&n| n > 0);
    loop {
        let res = trainer.run(oracle.as_ref(), chunk);
        run.write("checkpoint.json", trainer.checkpoint_json().as_bytes())?;
        res?;
        if trainer.progress().done {
            break;
        }
    }
    let store = trainer.store();
    println!("strategy    {}", settings.strategy);
    println!("blocks      {}", store.partition.blocks);
    println!("iterations  {} per block", settings.iters);
    let visits: Vec<String> = (0..store.partition.blocks).map(|b| store.min_visits(b).to_string()).collect();
    println!("min visits  {}", visits.join(" "));
    println!("checkpoint  {}", run.path("checkpoint.json").display());
    Ok(())
}

#[derive(Serialize)]
struct SearchResult<'a> {
    method: &'a str,
    arch: String,
    latency_ms: f64,
    score: f64,
    evaluations: usize,
}

fn run_method(
    method: Method,
    problem: SearchProblem<'_>,
    sc: &SearchConfig,
    opts: &SearchOpts,
) -> CliResult<(SearchOutcome, Option<ArchDistribution>)> {
    Ok(match method {
        Method::Ngd => {
            let dist = ArchDistribution::uniform(problem.config)?;
            let (o, last) = ngd_search(problem, &dist, sc)?;
            (o, Some(last))
        }
        Method::Random => (random_search(problem, sc)?, None),
        Method::Ea => {
            let evo = EvolutionSettings {
                population: opts.population,
                mutation_rate: opts.mutation_rate,
                ..Default::default()
            };
            (evolutionary_search(problem, sc, &evo)?, None)
        }
    })
}

fn search_config(opts: &SearchOpts, iters: usize, seed: u64) -> SearchConfig {
    SearchConfig {
        iters,
        batch: opts.batch,
        rho: opts.rho,
        r_max: opts.r_max_ms,
        damping: opts.damping,
        baseline_subtract: opts.baseline,
        zero_infeasible: opts.zero_infeasible,
        seed,
    }
}

fn latency_table(opts: &SearchOpts, cfg: &SpaceConfig, ctx: &mut Context) -> CliResult<LatencyTable> {
    match &opts.latency_table {
        Some(path) => {
            let text = ctx.read_input(path)?;
            LatencyTable::read_csv(text.as_bytes()).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
        }
        None => Ok(synth_latency_table(cfg, opts.latency_seed)),
    }
}

fn load_store(path: &Path, ctx: &mut Context) -> CliResult<SupernetStore> {
    let trainer = Trainer::from_checkpoint_json(&ctx.read_input(path)?)?;
    if !trainer.progress().done {
        return Err(CliError::config(format!("{} is not a fully trained checkpoint", path.display())));
    }
    Ok(trainer.into_store())
}

pub fn search(args: &SearchArgs, ctx: &mut Context) -> CliResult<()> {
    let store = load_store(&args.checkpoint, ctx)?;
    let cfg = store.config.clone();
    ctx.config = Some(cfg.clone());
    ctx.seeds = vec![args.run.seed];
    let lat = latency_table(&args.search, &cfg, ctx)?;
    let external;
    let scorer: &dyn ArchScorer = match &args.evaluator.evaluator {
        EvaluatorSpec::Synthetic => &store,
        EvaluatorSpec::External(cmd) => {
            external = ExternalScorer::new(spawn(cmd, &args.evaluator)?, args.run.seed);
            &external
        }
    };
    let sc = search_config(&args.search, args.iters, args.run.seed);
    let problem = SearchProblem { config: &cfg, scorer, latency: &lat };
    let (outcome, dist) = run_method(args.method, problem, &sc, &args.search)?;

    let run = ctx.dir(&args.out)?;
    run.write("trace.jsonl", outcome.trace.to_jsonl().as_bytes())?;
    run.write("latency.csv", lat.to_csv().as_bytes())?;
    if let Some(d) = dist {
        run.write("distribution.json", (d.to_json() + "\n").as_bytes())?;
    }
    let best = outcome.best.ok_or_else(CliError::infeasible)?;
    let result = SearchResult {
        method: args.method.name(),
        arch: best.arch.encode(),
        latency_ms: best.latency,
        score: best.reward,
        evaluations: outcome.trace.evaluations(),
    };
    run.write("best.json", &json_line(&result)?)?;
    println!("arch        {}", result.arch);
    println!("latency_ms  {}", result.latency_ms);
    println!("score       {}", result.score);
    Ok(())
}

pub fn correlate(args: &CorrelateArgs, ctx: &mut Context) -> CliResult<()> {
    require_synthetic(&args.evaluator, "correlate")?;
    let cfg = ctx.load_config(&args.config)?;
    let seeds = seed_list(&args.seeds, args.run.seed, args.n_seeds);
    ctx.seeds = seeds.clone();
    let strategies = if args.strategies.is_empty() { Strategy::ALL.to_vec() } else { args.strategies.clone() };
    let s = ExperimentSettings {
        strategies: strategies.clone(),
        n_archs: args.n_archs,
        blocks: args.blocks,
        iters: args.iters,
        lookup_samples: args.lookup_samples,
        seeds,
        noise_sigma: args.bench.noise_sigma,
        interaction_weight: args.bench.interaction_weight,
        standalone_sigma: args.standalone_sigma,
        workers: args.run.workers,
    };
    let result = correlation_experiment(&cfg, &s)?;
    let run = ctx.dir(&args.out)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf).map_err(failure)?;
    run.write("correlations.csv", &buf)?;
    for st in &strategies {
        let mut buf = Vec::new();
        result.write_scatter_csv(st.name(), &mut buf).map_err(failure)?;
        run.write(&format!("scatter_{}.csv", st.name()), &buf)?;
    }
    println!("{:<12} {:>8} {:>8} {:>8}", "strategy", "kendall", "spearman", "pearson");
    for st in &strategies {
        if let Some(m) = result.mean(*st) {
            println!("{:<12} {:>8.4} {:>8.4} {:>8.4}", st.name(), m.kendall, m.spearman, m.pearson);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    method: &'static str,
    seed: u64,
    arch: String,
    reward: f64,
    latency_ms: f64,
    true_quality: f64,
}

type SeedRuns = Vec<(Method, SearchOutcome, Option<f64>)>;

fn bench_seed(args: &BenchArgs, cfg: &SpaceConfig, seed: u64) -> CliResult<SeedRuns> {
    let bench = synthetic(seed, &args.bench);
    let settings = TrainSettings {
        strategy: args.train.strategy,
        blocks: args.train.blocks,
        iters: args.train_iters,
        lookup_samples: args.train.lookup_samples,
        ..Default::default()
    };
    let store = train_progressive(cfg, settings, &bench, derive_rng(seed, STREAM_TRAIN))?;
    let lat = synth_latency_table(cfg, args.search.latency_seed);
    let problem = SearchProblem { config: cfg, scorer: &store, latency: &lat };
    let sc = search_config(&args.search, args.iters, seed);
    args.methods
        .iter()
        .map(|&m| {
            let (o, _) = run_method(m, problem, &sc, &args.search)?;
            let truth = o.best.as_ref().map(|b| bench.true_quality(cfg, &b.arch));
            Ok((m, o, truth))
        })
        .collect()
}

pub fn bench(args: &BenchArgs, ctx: &mut Context) -> CliResult<()> {
    require_synthetic(&args.evaluator, "bench")?;
    if args.search.latency_table.is_some() {
        return Err(CliError::config("bench synthesises its latency table; use --latency-seed"));
    }
    let cfg = ctx.load_config(&args.config)?;
    let seeds = seed_list(&args.seeds, args.run.seed, args.n_seeds);
    ctx.seeds = seeds.clone();
    let workers = args.run.workers.clamp(1, seeds.len().max(1));
    let mut per_seed: Vec<Option<CliResult<SeedRuns>>> = (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (seeds, cfg) = (&seeds, &cfg);
                scope.spawn(move || {
                    (w..seeds.len()).step_by(workers).map(|i| (i, bench_seed(args, cfg, seeds[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                per_seed[i] = Some(r);
            }
        }
    });

    let mut rows = Vec::new();
    let mut traces: Vec<(String, Vec<_>)> = args.methods.iter().map(|m| (m.name().to_string(), Vec::new())).collect();
    for (seed, runs) in seeds.iter().zip(per_seed) {
        for (k, (m, outcome, truth)) in runs.expect("every seed ran")?.into_iter().enumerate() {
            if let (Some(b), Some(t)) = (&outcome.best, truth) {
                rows.push(BenchRow {
                    method: m.name(),
                    seed: *seed,
                    arch: b.arch.encode(),
                    reward: b.reward,
                    latency_ms: b.latency,
                    true_quality: t,
                });
            }
            traces[k].1.push(outcome.trace);
        }
    }
    let curves = convergence_curves(&traces, args.top);
    let run = ctx.dir(&args.out)?;
    let mut buf = Vec::new();
    write_curves_csv(&curves, &mut buf).map_err(failure)?;
    run.write("curves.csv", &buf)?;
    run.write("results.csv", &rows_csv(&rows)?)?;

    println!("{:<8} {:>6} {:>10} {:>13}", "method", "found", "reward", "true_quality");
    for m in &args.methods {
        let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m.name()).collect();
        let n = mine.len().max(1) as f64;
        let reward = mine.iter().map(|r| r.reward).sum::<f64>() / n;
        let truth = mine.iter().map(|r| r.true_quality).sum::<f64>() / n;
        println!("{:<8} {:>3}/{:<2} {:>10.5} {:>13.5}", m.name(), mine.len(), seeds.len(), reward, truth);
    }
    if rows.is_empty() {
        return Err(CliError::infeasible());
    }
    Ok(())
}

fn rows_csv(rows: &[BenchRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(failure)?;
    }
    w.into_inner().map_err(failure)
}
