//! Native implementations of the browser operations.

use serde::Serialize;

use latnas::distribution::ArchDistribution;
use latnas::evaluator::latency::synth_latency_table;
use latnas::evaluator::SyntheticBenchmark;
use latnas::search::{
    evolutionary_search, ngd_search, random_search, EvolutionSettings, SearchConfig, SearchOutcome, SearchProblem,
};
use latnas::space::{approx_sci, space_cardinality, uniform_architecture, walk_geometry, PathCounter, SpaceConfig};
use latnas::supernet::{train_progressive, TrainSettings};
use latnas::{derive_rng, SeededRng};
use rand::SeedableRng;

const STREAM_TRAIN: u64 = 1;

/// Resolves `default`, `handwriting`, `scene` or config JSON.
pub fn load_config(config: &str) -> Result<SpaceConfig, String> {
    let cfg = match config.trim() {
        "" | "default" => SpaceConfig::default(),
        "handwriting" => SpaceConfig::handwriting(),
        "scene" => SpaceConfig::scene(),
        text => SpaceConfig::from_json(text).map_err(|e| e.to_string())?,
    };
    cfg.check().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Counts {
    paths: String,
    spatial: String,
    sequential: String,
    total: String,
    total_approx: String,
}

pub fn cardinality(config: &str) -> Result<String, String> {
    let cfg = load_config(config)?;
    let c = space_cardinality(&cfg).map_err(|e| e.to_string())?;
    json(&Counts {
        paths: c.paths.to_string(),
        spatial: c.spatial.to_string(),
        sequential: c.sequential.to_string(),
        total: c.total.to_string(),
        total_approx: approx_sci(&c.total),
    })
}

#[derive(Serialize)]
struct Layer {
    stride: String,
    op: String,
    h: u32,
    w: u32,
    channels: u32,
    ms: f64,
}

#[derive(Serialize)]
struct Sample {
    arch: String,
    layers: Vec<Layer>,
    transformer: Vec<String>,
    latency_ms: f64,
}

pub fn sample(config: &str, seed: u64) -> Result<String, String> {
    let cfg = load_config(config)?;
    let counter = PathCounter::for_config(&cfg).map_err(|e| e.to_string())?;
    let arch = uniform_architecture(&cfg, &counter, &mut SeededRng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
    let table = synth_latency_table(&cfg, 0);
    let costs = table.layer_costs(&cfg, &arch).map_err(|e| e.to_string())?;
    let geo = walk_geometry(&cfg, &arch.strides);
    let layers = arch
        .strides
        .iter()
        .zip(&arch.ops)
        .enumerate()
        .map(|(i, (s, op))| Layer {
            stride: s.token().to_string(),
            op: op.token(),
            h: geo[i].h,
            w: geo[i].w,
            channels: geo[i].channels,
            ms: costs[i],
        })
        .collect();
    json(&Sample {
        arch: arch.encode(),
        layers,
        transformer: arch.seq.iter().map(|c| c.token()).collect(),
        latency_ms: table.latency(&cfg, &arch).map_err(|e| e.to_string())?,
    })
}

#[derive(Serialize)]
struct MethodResult {
    method: &'static str,
    arch: Option<String>,
    reward: Option<f64>,
    latency_ms: Option<f64>,
    true_quality: Option<f64>,
    /// Best feasible reward after each iteration, `None` until one is found.
    curve: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct Comparison {
    r_max_ms: Option<f64>,
    min_visits: Vec<u64>,
    methods: Vec<MethodResult>,
}

/// Natural-gradient search uses step size 3 with a batch-mean baseline.
pub fn compare(config: &str, seed: u64, r_max_ms: f64, train_iters: u64, search_iters: usize) -> Result<String, String> {
    let cfg = load_config(config)?;
    let bench = SyntheticBenchmark::new(seed);
    let settings = TrainSettings { iters: train_iters, ..TrainSettings::default() };
    let store = train_progressive(&cfg, settings, &bench, derive_rng(seed, STREAM_TRAIN)).map_err(|e| e.to_string())?;
    let latency = synth_latency_table(&cfg, 0);
    let problem = SearchProblem { config: &cfg, scorer: &store, latency: &latency };
    let sc = SearchConfig {
        iters: search_iters,
        r_max: if r_max_ms.is_nan() { f64::INFINITY } else { r_max_ms },
        rho: 3.0,
        baseline_subtract: true,
        seed,
        ..SearchConfig::default()
    };
    let dist = ArchDistribution::uniform(&cfg).map_err(|e| e.to_string())?;
    let ngd = ngd_search(problem, &dist, &sc).map_err(|e| e.to_string())?.0;
    let ea = evolutionary_search(problem, &sc, &EvolutionSettings::default()).map_err(|e| e.to_string())?;
    let rs = random_search(problem, &sc).map_err(|e| e.to_string())?;
    let result = |method, o: SearchOutcome| MethodResult {
        method,
        arch: o.best.as_ref().map(|b| b.arch.encode()),
        reward: o.best.as_ref().map(|b| b.reward),
        latency_ms: o.best.as_ref().map(|b| b.latency),
        true_quality: o.best.as_ref().map(|b| bench.true_quality(&cfg, &b.arch)),
        curve: o.trace.iterations.iter().map(|it| it.best.as_ref().map(|b| b.reward)).collect(),
    };
    json(&Comparison {
        r_max_ms: sc.r_max.is_finite().then_some(sc.r_max),
        min_visits: (0..store.partition.blocks).map(|b| store.min_visits(b)).collect(),
        methods: vec![result("ngd", ngd), result("ea", ea), result("random", rs)],
    })
}
