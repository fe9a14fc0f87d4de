//! Rank correlations and the experiment harnesses built on them.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::SyntheticBenchmark;
use crate::search::SearchTrace;
use crate::space::{uniform_architecture, Architecture, PathCounter, SpaceConfig};
use crate::supernet::{train_progressive, Strategy, SupernetError, SupernetStore, TrainSettings};
use crate::{derive_rng, SeededRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("correlation needs at least two pairs, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: all values on one axis are equal")]
    Constant,
    #[error("non-finite score")]
    NotFinite,
    #[error(transparent)]
    Supernet(#[from] SupernetError),
}

/// `(standalone, oneshot)` pairs.
pub type Pairs = [(f64, f64)];

fn check(pairs: &Pairs) -> Result<(), AnalysisError> {
    if pairs.len() < 2 {
        return Err(AnalysisError::TooShort(pairs.len()));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AnalysisError::NotFinite);
    }
    Ok(())
}

/// Kendall's tau-b with tie correction.
pub fn kendall_tau(pairs: &Pairs) -> Result<f64, AnalysisError> {
    check(pairs)?;
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for (i, &(xi, yi)) in pairs.iter().enumerate() {
        for &(xj, yj) in &pairs[i + 1..] {
            let dx = xi.partial_cmp(&xj).expect("finite");
            let dy = yi.partial_cmp(&yj).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    tie_x += 1;
                    tie_y += 1;
                }
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (pairs.len() * (pairs.len() - 1) / 2) as i64;
    let denom = (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt();
    if denom == 0.0 {
        return Err(AnalysisError::Constant);
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson_r(pairs: &Pairs) -> Result<f64, AnalysisError> {
    check(pairs)?;
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of the average ranks.
pub fn spearman_rho(pairs: &Pairs) -> Result<f64, AnalysisError> {
    check(pairs)?;
    let rx = average_ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ry = average_ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let ranked: Vec<(f64, f64)> = rx.into_iter().zip(ry).collect();
    pearson_r(&ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub kendall: f64,
    pub spearman: f64,
    pub pearson: f64,
}

pub fn correlations(pairs: &Pairs) -> Result<Correlations, AnalysisError> {
    Ok(Correlations { kendall: kendall_tau(pairs)?, spearman: spearman_rho(pairs)?, pearson: pearson_r(pairs)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub strategies: Vec<Strategy>,
    pub n_archs: usize,
    pub blocks: usize,
    /// Iterations per block (SPOS gets `blocks` times as many whole-path ones).
    pub iters: u64,
    pub lookup_samples: usize,
    pub seeds: Vec<u64>,
    pub noise_sigma: f64,
    pub interaction_weight: f64,
    /// Noise on the stand-alone quality of each sampled architecture.
    pub standalone_sigma: f64,
    pub workers: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            strategies: Strategy::ALL.to_vec(),
            n_archs: 70,
            blocks: 5,
            iters: 2000,
            lookup_samples: 2000,
            seeds: (0..5).collect(),
            noise_sigma: 0.05,
            interaction_weight: 0.02,
            standalone_sigma: 0.01,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub kendall: f64,
    pub spearman: f64,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    /// Strategy-major, seeds in the given order.
    pub rows: Vec<CorrelationRow>,
    /// `(standalone, oneshot)` per strategy, seeds concatenated.
    pub scatter: BTreeMap<String, Vec<(f64, f64)>>,
}

impl ExperimentResult {
    pub fn mean(&self, strategy: Strategy) -> Option<Correlations> {
        let rows: Vec<&CorrelationRow> = self.rows.iter().filter(|r| r.strategy == strategy).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(Correlations {
            kendall: rows.iter().map(|r| r.kendall).sum::<f64>() / n,
            spearman: rows.iter().map(|r| r.spearman).sum::<f64>() / n,
            pearson: rows.iter().map(|r| r.pearson).sum::<f64>() / n,
        })
    }

    /// Header `strategy,seed,kendall,spearman,pearson`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_scatter_csv<W: Write>(&self, strategy: &str, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["standalone", "oneshot"])?;
        for (x, y) in self.scatter.get(strategy).into_iter().flatten() {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const STREAM_TRAIN: u64 = 1;
const STREAM_ARCHS: u64 = 2;
const STREAM_STANDALONE: u64 = 3;

/// Architectures and their stand-alone qualities for one seed.
pub fn standalone_sample(
    config: &SpaceConfig,
    bench: &SyntheticBenchmark,
    n_archs: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<(Architecture, f64)>, AnalysisError> {
    let counter = PathCounter::for_config(config).map_err(SupernetError::from)?;
    let mut rng = derive_rng(seed, STREAM_ARCHS);
    let archs: Vec<Architecture> = (0..n_archs)
        .map(|_| uniform_architecture(config, &counter, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(SupernetError::from)?;
    let noise = Normal::new(0.0, sigma).map_err(|_| AnalysisError::NotFinite)?;
    let mut rng = derive_rng(seed, STREAM_STANDALONE);
    Ok(archs
        .into_iter()
        .map(|a| {
            let q = bench.true_quality(config, &a) + noise.sample(&mut rng);
            (a, q)
        })
        .collect())
}

/// Pairs stand-alone quality with the store's estimate.
pub fn score_pairs(store: &SupernetStore, sample: &[(Architecture, f64)]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    sample.iter().map(|(a, q)| Ok((*q, store.oneshot_eval(a)?))).collect()
}

fn run_one(
    config: &SpaceConfig,
    s: &ExperimentSettings,
    strategy: Strategy,
    seed: u64,
) -> Result<(CorrelationRow, Vec<(f64, f64)>), AnalysisError> {
    let bench = SyntheticBenchmark {
        noise_sigma: s.noise_sigma,
        interaction_weight: s.interaction_weight,
        ..SyntheticBenchmark::new(seed)
    };
    let settings = TrainSettings {
        strategy,
        blocks: s.blocks,
        iters: s.iters,
        lookup_samples: s.lookup_samples,
        ..Default::default()
    };
    let store = train_progressive(config, settings, &bench, derive_rng(seed, STREAM_TRAIN))?;
    let sample = standalone_sample(config, &bench, s.n_archs, s.standalone_sigma, seed)?;
    let pairs = score_pairs(&store, &sample)?;
    let c = correlations(&pairs)?;
    let row = CorrelationRow { strategy, seed, kendall: c.kendall, spearman: c.spearman, pearson: c.pearson };
    Ok((row, pairs))
}

/// Trains one store per (strategy, seed) at matched budget and correlates
/// its estimates with stand-alone quality on `n_archs` uniform samples. The
/// sample for a seed is shared across strategies. Jobs run on up to
/// `workers` threads; results do not depend on the worker count.
pub fn correlation_experiment(config: &SpaceConfig, s: &ExperimentSettings) -> Result<ExperimentResult, AnalysisError> {
    let jobs: Vec<(Strategy, u64)> =
        s.strategies.iter().flat_map(|&st| s.seeds.iter().map(move |&seed| (st, seed))).collect();
    let workers = s.workers.max(1).min(jobs.len().max(1));
    let mut results: Vec<Option<Result<(CorrelationRow, Vec<(f64, f64)>), AnalysisError>>> =
        (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> =
            (0..workers).map(|w| (w..jobs.len()).step_by(workers).collect()).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| {
                let jobs = &jobs;
                scope.spawn(move || {
                    idx.into_iter().map(|i| (i, run_one(config, s, jobs[i].0, jobs[i].1))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut out = ExperimentResult::default();
    for r in results {
        let (row, pairs) = r.expect("every job ran")?;
        out.scatter.entry(row.strategy.to_string()).or_default().extend(pairs);
        out.rows.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub evaluations: usize,
    /// Mean, best and worst of the top feasible rewards seen so far.
    pub top_mean: f64,
    pub top_best: f64,
    pub top_worst: f64,
}

/// Per-iteration summary of the `top` best feasible rewards seen so far.
/// Iterations before the first feasible sample are omitted.
pub fn convergence_curve(trace: &SearchTrace, top: usize) -> Vec<CurvePoint> {
    let mut seen: Vec<f64> = Vec::new();
    let mut evaluations = 0;
    let mut out = Vec::new();
    for it in &trace.iterations {
        evaluations += it.samples.len();
        seen.extend(it.samples.iter().filter(|s| s.feasible).map(|s| s.reward));
        seen.sort_by(|a, b| b.partial_cmp(a).expect("finite rewards"));
        seen.truncate(top);
        if seen.is_empty() {
            continue;
        }
        out.push(CurvePoint {
            iteration: it.iteration,
            evaluations,
            top_mean: seen.iter().sum::<f64>() / seen.len() as f64,
            top_best: seen[0],
            top_worst: seen[seen.len() - 1],
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub iteration: usize,
    pub top_mean: f64,
    pub top_best: f64,
    pub top_worst: f64,
}

/// Curves per method, averaged pointwise over that method's traces (one per
/// seed). Only iterations present in every trace are kept.
pub fn convergence_curves(methods: &[(String, Vec<SearchTrace>)], top: usize) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for (name, traces) in methods {
        let curves: Vec<BTreeMap<usize, CurvePoint>> = traces
            .iter()
            .map(|t| convergence_curve(t, top).into_iter().map(|p| (p.iteration, p)).collect())
            .collect();
        let Some(first) = curves.first() else { continue };
        for &it in first.keys() {
            let pts: Option<Vec<&CurvePoint>> = curves.iter().map(|c| c.get(&it)).collect();
            let Some(pts) = pts else { continue };
            let n = pts.len() as f64;
            rows.push(CurveRow {
                method: name.clone(),
                iteration: it,
                top_mean: pts.iter().map(|p| p.top_mean).sum::<f64>() / n,
                top_best: pts.iter().map(|p| p.top_best).sum::<f64>() / n,
                top_worst: pts.iter().map(|p| p.top_worst).sum::<f64>() / n,
            });
        }
    }
    rows
}

/// Header `method,iteration,top_mean,top_best,top_worst`.
pub fn write_curves_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// A store with every reachable edge scored by independent uniform noise,
/// the null model for correlation tests.
pub fn random_store(config: &SpaceConfig, blocks: usize, seed: u64) -> Result<SupernetStore, AnalysisError> {
    use rand::Rng;
    let part = crate::supernet::partition(config, blocks)?;
    let mut store = SupernetStore::new(config.clone(), part, crate::evaluator::Aggregation::Logistic);
    let mut rng = SeededRng::seed_from_u64(seed);
    for b in 0..blocks {
        for e in store.block_edges(b) {
            let score = rng.random_range(-0.25..0.25);
            store.blocks[b].entries.insert(e, crate::supernet::EdgeEntry { score, visits: 0 });
        }
        store.blocks[b].trained = true;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
        x.iter().copied().zip(y.iter().copied()).collect()
    }

    #[test]
    fn kendall_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(kendall_tau(&pairs(&x, &x)).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(kendall_tau(&pairs(&x, &rev)).unwrap(), -1.0);
        let t = kendall_tau(&pairs(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-4);
        assert_eq!(kendall_tau(&pairs(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])), Err(AnalysisError::Constant));
        assert_eq!(kendall_tau(&pairs(&[1.0], &[1.0])), Err(AnalysisError::TooShort(1)));
    }

    #[test]
    fn kendall_tie_correction() {
        // concordant 4, discordant 0, one tie in x: 4 / sqrt(5 * 6)
        let t = kendall_tau(&pairs(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((t - 5.0 / 30f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spearman_pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&pairs(&x, &x)).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&pairs(&x, &y)).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&pairs(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn curve_is_monotone_in_best() {
        use crate::search::{TraceIteration, TraceSample};
        let s = |r| TraceSample { arch: String::new(), reward: r, latency: 1.0, feasible: true };
        let trace = SearchTrace {
            iterations: vec![
                TraceIteration { iteration: 0, samples: vec![s(0.3), s(0.1)], best: None },
                TraceIteration { iteration: 1, samples: vec![s(0.2)], best: None },
            ],
        };
        let c = convergence_curve(&trace, 2);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].top_best, c[0].top_worst), (0.3, 0.1));
        assert_eq!((c[1].top_best, c[1].top_worst), (0.3, 0.2));
        assert!((c[1].top_mean - 0.25).abs() < 1e-12);
    }
}
