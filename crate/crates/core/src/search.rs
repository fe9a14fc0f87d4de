//! Latency-constrained search over a trained supernet.
//!
//! [`ngd_search`] follows the stochastic-relaxation loop: draw a batch from
//! `P_theta`, score every sample, accumulate the empirical Fisher matrix and
//! the reward-weighted score as running averages over the whole batch, then
//! step `eta <- eta + rho (F + damping I)^{-1} g` with one solve per decision
//! block. Only the best-so-far tracking looks at the latency budget unless
//! `zero_infeasible` is set. Random and evolutionary baselines share the
//! evaluation budget `iters * batch` and the trace format.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{ArchDistribution, CategoricalNat, DistError};
use crate::evaluator::latency::LatencyTable;
use crate::evaluator::{ArchScorer, EvalError};
use crate::space::{uniform_architecture, Architecture, PathCounter, SpaceConfig, SpaceError};
use crate::supernet::SupernetStore;
use crate::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid search settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iters: usize,
    pub batch: usize,
    pub rho: f64,
    /// Latency budget in milliseconds.
    pub r_max: f64,
    pub damping: f64,
    /// Subtract the batch-mean reward before forming the gradient.
    pub baseline_subtract: bool,
    /// Give infeasible samples zero reward in the gradient.
    pub zero_infeasible: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iters: 50,
            batch: 16,
            rho: 0.1,
            r_max: f64::INFINITY,
            damping: 1e-3,
            baseline_subtract: false,
            zero_infeasible: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        if self.iters == 0 || self.batch == 0 {
            return Err(SearchError::Settings("iterations and batch size must be at least 1".into()));
        }
        if !(self.rho > 0.0) || !(self.damping >= 0.0) || self.r_max.is_nan() {
            return Err(SearchError::Settings("rho must be positive and damping non-negative".into()));
        }
        Ok(())
    }
}

/// What a search is run against.
#[derive(Clone, Copy)]
pub struct SearchProblem<'a> {
    pub config: &'a SpaceConfig,
    pub scorer: &'a dyn ArchScorer,
    pub latency: &'a LatencyTable,
}

impl ArchScorer for SupernetStore {
    fn score(&self, arch: &Architecture) -> Result<f64, EvalError> {
        self.oneshot_eval(arch).map_err(|e| EvalError::Rejected(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub arch: String,
    pub reward: f64,
    pub latency: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub arch: String,
    pub reward: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub iteration: usize,
    pub samples: Vec<TraceSample>,
    pub best: Option<BestSoFar>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchTrace {
    pub iterations: Vec<TraceIteration>,
}

impl SearchTrace {
    /// One JSON object per iteration.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for it in &self.iterations {
            serde_json::to_writer(&mut out, it)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let iterations = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(SearchTrace { iterations })
    }

    pub fn samples(&self) -> impl Iterator<Item = &TraceSample> {
        self.iterations.iter().flat_map(|it| it.samples.iter())
    }

    pub fn evaluations(&self) -> usize {
        self.iterations.iter().map(|it| it.samples.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Found {
    pub arch: Architecture,
    pub reward: f64,
    pub latency: f64,
}

/// Result of a search; `best` is `None` when no sample met the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Option<Found>,
    pub trace: SearchTrace,
}

/// The feasible sample with the highest reward, earliest on ties.
pub fn constrained_best(trace: &SearchTrace) -> Option<&TraceSample> {
    let mut best: Option<&TraceSample> = None;
    for s in trace.samples().filter(|s| s.feasible) {
        if best.is_none_or(|b| s.reward > b.reward) {
            best = Some(s);
        }
    }
    best
}

/// Scores samples and keeps the best-so-far record.
struct Tracker<'a> {
    problem: SearchProblem<'a>,
    r_max: f64,
    best: Option<Found>,
    trace: SearchTrace,
}

impl<'a> Tracker<'a> {
    fn new(problem: SearchProblem<'a>, r_max: f64) -> Self {
        Tracker { problem, r_max, best: None, trace: SearchTrace::default() }
    }

    fn evaluate(&self, arch: &Architecture) -> Result<TraceSample, SearchError> {
        let reward = self.problem.scorer.score(arch)?;
        let latency = self.problem.latency.latency(self.problem.config, arch)?;
        Ok(TraceSample { arch: arch.encode(), reward, latency, feasible: latency <= self.r_max })
    }

    fn record(&mut self, archs: &[Architecture], samples: Vec<TraceSample>) {
        for (a, s) in archs.iter().zip(&samples) {
            if s.feasible && self.best.as_ref().is_none_or(|b| s.reward > b.reward) {
                self.best = Some(Found { arch: a.clone(), reward: s.reward, latency: s.latency });
            }
        }
        let best = self.best.as_ref().map(|b| BestSoFar {
            arch: b.arch.encode(),
            reward: b.reward,
            latency: b.latency,
        });
        let iteration = self.trace.iterations.len();
        self.trace.iterations.push(TraceIteration { iteration, samples, best });
    }

    fn finish(self) -> SearchOutcome {
        SearchOutcome { best: self.best, trace: self.trace }
    }
}

/// Natural-gradient search from `dist0`. Returns the outcome and the final
/// distribution.
pub fn ngd_search(
    problem: SearchProblem<'_>,
    dist0: &ArchDistribution,
    cfg: &SearchConfig,
) -> Result<(SearchOutcome, ArchDistribution), SearchError> {
    cfg.check()?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut dist = dist0.clone();
    let mut tracker = Tracker::new(problem, cfg.r_max);
    for _ in 0..cfg.iters {
        let mut archs = Vec::with_capacity(cfg.batch);
        let mut samples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let a = dist.sample(&mut rng)?;
            samples.push(tracker.evaluate(&a)?);
            archs.push(a);
        }
        let mut rewards: Vec<f64> = samples
            .iter()
            .map(|s| if cfg.zero_infeasible && !s.feasible { 0.0 } else { s.reward })
            .collect();
        if cfg.baseline_subtract {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            rewards.iter_mut().for_each(|r| *r -= mean);
        }
        dist = ngd_update(&dist, &archs, &rewards, cfg.rho, cfg.damping)?;
        tracker.record(&archs, samples);
    }
    Ok((tracker.finish(), dist))
}

/// One update from a scored batch: per decision block, the running averages
/// `F <- (j F + s s^T) / (j + 1)` and `g <- (j g + r s) / (j + 1)` over the
/// batch, then `eta <- eta + rho (F + damping I)^{-1} g`.
pub fn ngd_update(
    dist: &ArchDistribution,
    archs: &[Architecture],
    rewards: &[f64],
    rho: f64,
    damping: f64,
) -> Result<ArchDistribution, SearchError> {
    let offsets = dist.offsets();
    let sizes: Vec<usize> = dist.decisions().iter().map(|d| d.dist.eta().len()).collect();
    let mut fisher: Vec<DMatrix<f64>> = sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect();
    let mut grad: Vec<DVector<f64>> = sizes.iter().map(|&k| DVector::zeros(k)).collect();
    for (j, (arch, &r)) in archs.iter().zip(rewards).enumerate() {
        let s = dist.grad_log_prob(arch)?;
        let jf = j as f64;
        for (b, (&off, &k)) in offsets.iter().zip(&sizes).enumerate() {
            let sb = DVector::from_column_slice(&s[off..off + k]);
            fisher[b] = (&fisher[b] * jf + &sb * sb.transpose()) / (jf + 1.0);
            grad[b] = (&grad[b] * jf + sb * r) / (jf + 1.0);
        }
    }
    let mut next = dist.clone();
    for (b, (f, g)) in fisher.into_iter().zip(grad).enumerate() {
        let step = solve_block(f, &g, damping)?;
        let eta: Vec<f64> = dist.decisions()[b]
            .dist
            .eta()
            .iter()
            .zip(step.iter())
            .map(|(e, d)| e + rho * d)
            .collect();
        if eta.iter().any(|x| !x.is_finite()) {
            return Err(DistError::State("natural-gradient step left the finite range".into()).into());
        }
        next.set_eta(b, eta);
    }
    Ok(next)
}

fn solve_block(mut f: DMatrix<f64>, g: &DVector<f64>, damping: f64) -> Result<DVector<f64>, SearchError> {
    for i in 0..f.nrows() {
        f[(i, i)] += damping;
    }
    if let Some(ch) = f.clone().cholesky() {
        return Ok(ch.solve(g));
    }
    if let Some(x) = f.clone().lu().solve(g) {
        return Ok(x);
    }
    // singular block: the pseudo-inverse keeps the step inside the span of the scores
    f.pseudo_inverse(1e-12)
        .map(|p| p * g)
        .map_err(|e| SearchError::Settings(format!("cannot invert Fisher block: {e}")))
}

/// Expected reward `sum_j p_j r_j` of one categorical.
pub fn expected_reward(dist: &CategoricalNat, rewards: &[f64]) -> f64 {
    dist.probs().iter().zip(rewards).map(|(p, r)| p * r).sum()
}

/// Natural gradient of the exact expected reward of one categorical,
/// `(F + damping I)^{-1} sum_j p_j r_j (T(j) - p)`.
pub fn exact_natural_gradient(dist: &CategoricalNat, rewards: &[f64], damping: f64) -> Vec<f64> {
    let p = dist.probs();
    let k = dist.eta().len();
    let mut g = DVector::zeros(k);
    for (j, (&pj, &rj)) in p.iter().zip(rewards).enumerate() {
        g += DVector::from_vec(dist.score(j)) * (pj * rj);
    }
    match solve_block(dist.fisher(), &g, damping) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; k],
    }
}

/// One exact-expectation natural-gradient step on a single categorical.
pub fn exact_ngd_step(dist: &CategoricalNat, rewards: &[f64], rho: f64, damping: f64) -> CategoricalNat {
    let step = exact_natural_gradient(dist, rewards, damping);
    CategoricalNat::new(dist.eta().iter().zip(step).map(|(e, d)| e + rho * d).collect())
}

/// `iters * batch` uniform architectures.
pub fn random_search(problem: SearchProblem<'_>, cfg: &SearchConfig) -> Result<SearchOutcome, SearchError> {
    cfg.check()?;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let counter = PathCounter::for_config(problem.config)?;
    let mut tracker = Tracker::new(problem, cfg.r_max);
    for _ in 0..cfg.iters {
        let archs: Vec<Architecture> = (0..cfg.batch)
            .map(|_| uniform_architecture(problem.config, &counter, &mut rng))
            .collect::<Result<_, _>>()?;
        let samples = archs.iter().map(|a| tracker.evaluate(a)).collect::<Result<Vec<_>, _>>()?;
        tracker.record(&archs, samples);
    }
    Ok(tracker.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSettings {
    pub population: usize,
    pub mutation_rate: f64,
    /// Attempts per child before the parent is copied instead.
    pub max_retries: usize,
}

impl Default for EvolutionSettings {
    fn default() -> Self {
        EvolutionSettings { population: 16, mutation_rate: 0.1, max_retries: 100 }
    }
}

/// Evolutionary baseline with the same evaluation budget as the other
/// methods. The initial population is drawn exactly like
/// [`random_search`]'s samples; each later generation breeds `batch`
/// children from the better half of the population by single-point crossover
/// on the decision vector and per-decision uniform mutation. Children that
/// are invalid or over budget are redrawn.
pub fn evolutionary_search(
    problem: SearchProblem<'_>,
    cfg: &SearchConfig,
    evo: &EvolutionSettings,
) -> Result<SearchOutcome, SearchError> {
    cfg.check()?;
    if evo.population == 0 || !(0.0..=1.0).contains(&evo.mutation_rate) {
        return Err(SearchError::Settings("population must be positive and mutation rate in [0, 1]".into()));
    }
    let budget = cfg.iters * cfg.batch;
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let counter = PathCounter::for_config(problem.config)?;
    let enc = ArchDistribution::uniform(problem.config)?;
    let n_cats: Vec<usize> = enc.decisions().iter().map(|d| d.dist.n_categories()).collect();
    let mut tracker = Tracker::new(problem, cfg.r_max);

    let mut population: Vec<(Architecture, TraceSample)> = Vec::new();
    let mut spent = 0;
    while population.len() < evo.population.min(budget) {
        let n = (evo.population.min(budget) - population.len()).min(cfg.batch);
        let archs: Vec<Architecture> = (0..n)
            .map(|_| uniform_architecture(problem.config, &counter, &mut rng))
            .collect::<Result<_, _>>()?;
        let samples = archs.iter().map(|a| tracker.evaluate(a)).collect::<Result<Vec<_>, _>>()?;
        population.extend(archs.iter().cloned().zip(samples.iter().cloned()));
        tracker.record(&archs, samples);
        spent += n;
    }
    let rank = |pop: &mut Vec<(Architecture, TraceSample)>| {
        // stable: feasible first, then by reward
        pop.sort_by(|a, b| {
            b.1.feasible.cmp(&a.1.feasible).then(b.1.reward.partial_cmp(&a.1.reward).expect("finite rewards"))
        });
    };
    rank(&mut population);
    while spent < budget {
        let n = cfg.batch.min(budget - spent);
        let parents = &population[..population.len().div_ceil(2)];
        let mut archs = Vec::with_capacity(n);
        for _ in 0..n {
            archs.push(breed(problem, &enc, &n_cats, parents, evo, cfg.r_max, &mut rng)?);
        }
        let samples = archs.iter().map(|a| tracker.evaluate(a)).collect::<Result<Vec<_>, _>>()?;
        population.extend(archs.iter().cloned().zip(samples.iter().cloned()));
        tracker.record(&archs, samples);
        rank(&mut population);
        population.truncate(evo.population);
        spent += n;
    }
    Ok(tracker.finish())
}

fn breed(
    problem: SearchProblem<'_>,
    enc: &ArchDistribution,
    n_cats: &[usize],
    parents: &[(Architecture, TraceSample)],
    evo: &EvolutionSettings,
    r_max: f64,
    rng: &mut SeededRng,
) -> Result<Architecture, SearchError> {
    let first = &parents[rng.random_range(0..parents.len())].0;
    for _ in 0..evo.max_retries {
        let second = &parents[rng.random_range(0..parents.len())].0;
        let mut cats = enc.categories(first)?;
        let other = enc.categories(second)?;
        let cut = rng.random_range(0..=cats.len());
        cats[cut..].copy_from_slice(&other[cut..]);
        for (c, &n) in cats.iter_mut().zip(n_cats) {
            if rng.random_bool(evo.mutation_rate) {
                *c = rng.random_range(0..n);
            }
        }
        let Some(child) = enc.assemble(&cats) else { continue };
        if problem.latency.latency(problem.config, &child)? <= r_max {
            return Ok(child);
        }
    }
    Ok(first.clone())
}
