//! Block-partitioned supernet store and its training strategies.
//!
//! The spatial layers are split into `K - 1` equal blocks and the transformer
//! stack forms block `K`. Shared weights are stood in for by one scalar score
//! per edge, moved by an exponential moving average toward the per-edge
//! targets a [`TrainOracle`] produces. Progressive strategies train the blocks
//! in order with earlier blocks frozen; SPOS trains whole paths.
//!
//! Paths inside a block are identified by the feature-map node they start
//! from, expressed as the number of `(2,2)` and `(2,1)` strides consumed so far.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::{edges_of, Edge};
use crate::evaluator::{Aggregation, EvalError, TrainOracle, TrainRequest};
use crate::space::{
    uniform_architecture, Architecture, ConvChoice, PathCounter, SpaceConfig, SpaceError, Stride,
    TransformerChoice,
};
use crate::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupernetError {
    #[error("{m} spatial layers cannot be split into {k} blocks; valid block counts: {valid:?}")]
    Partition { m: usize, k: usize, valid: Vec<usize> },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("block {} is not trained", .0 + 1)]
    Untrained(usize),
    #[error("block {} has no lookup entry for resolution {h}x{w}", .block + 1)]
    MissingLookup { block: usize, h: u32, w: u32 },
    #[error("{0}")]
    Mismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// `K - 1` equal spatial blocks followed by the sequential block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub spatial_layers: usize,
}

/// Valid block counts for `m` spatial layers.
pub fn valid_block_counts(m: usize) -> Vec<usize> {
    (1..=m).filter(|d| m % d == 0).map(|d| d + 1).collect()
}

pub fn partition(config: &SpaceConfig, k: usize) -> Result<BlockPartition, SupernetError> {
    let m = config.spatial_layers;
    if k < 2 || m == 0 || m % (k - 1) != 0 {
        return Err(SupernetError::Partition { m, k, valid: valid_block_counts(m) });
    }
    Ok(BlockPartition { blocks: k, layers_per_block: m / (k - 1), spatial_layers: m })
}

impl BlockPartition {
    pub fn sequential_block(&self) -> usize {
        self.blocks - 1
    }

    pub fn is_sequential(&self, block: usize) -> bool {
        block == self.sequential_block()
    }

    /// Layer range of a spatial block.
    pub fn range(&self, block: usize) -> Range<usize> {
        assert!(!self.is_sequential(block));
        block * self.layers_per_block..(block + 1) * self.layers_per_block
    }

    pub fn spatial_ranges(&self) -> Vec<Range<usize>> {
        (0..self.blocks - 1).map(|k| self.range(k)).collect()
    }

    pub fn block_of(&self, edge: &Edge) -> usize {
        match edge {
            Edge::Spatial { layer, .. } => layer / self.layers_per_block,
            Edge::Sequential { .. } => self.sequential_block(),
        }
    }
}

/// A feature-map node: strides of each kind consumed before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub both: usize,
    pub height: usize,
}

impl Node {
    pub const ORIGIN: Node = Node { both: 0, height: 0 };

    pub fn after(self, strides: &[Stride]) -> Node {
        strides.iter().fold(self, |n, s| match s {
            Stride::Both => Node { both: n.both + 1, ..n },
            Stride::Height => Node { height: n.height + 1, ..n },
            Stride::Identity => n,
        })
    }

    pub fn resolution(self, config: &SpaceConfig) -> (u32, u32) {
        let (h, w) = config.searched_input();
        (h >> (self.both + self.height), w >> self.both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomPath,
    BestPath,
    CoUpdate,
    Spos,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::RandomPath, Strategy::BestPath, Strategy::CoUpdate, Strategy::Spos];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::RandomPath => "random_path",
            Strategy::BestPath => "best_path",
            Strategy::CoUpdate => "co_update",
            Strategy::Spos => "spos",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected random_path, best_path, co_update or spos)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub strategy: Strategy,
    /// Block count `K`.
    pub blocks: usize,
    /// Iterations per block; SPOS runs `blocks * iters` whole-path iterations.
    pub iters: u64,
    /// Cap `E` on candidate paths scored per lookup table.
    pub lookup_samples: usize,
    /// Moving-average rate of the score update.
    pub rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            strategy: Strategy::RandomPath,
            blocks: 5,
            iters: 1000,
            lookup_samples: 2000,
            rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub score: f64,
    pub visits: u64,
}

/// Best block path seen for one output resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupEntry {
    pub input: Node,
    pub output: Node,
    pub strides: Vec<Stride>,
    pub ops: Vec<ConvChoice>,
    pub perf: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockState {
    pub trained: bool,
    /// Offset the auxiliary neck added to this block's training targets.
    pub neck_bias: f64,
    pub entries: BTreeMap<Edge, EdgeEntry>,
    /// Keyed by output node; only built by best-path training.
    pub lookup: BTreeMap<Node, LookupEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupernetStore {
    pub config: SpaceConfig,
    pub partition: BlockPartition,
    pub aggregation: Aggregation,
    pub blocks: Vec<BlockState>,
}

impl SupernetStore {
    pub fn new(config: SpaceConfig, partition: BlockPartition, aggregation: Aggregation) -> Self {
        let blocks = vec![BlockState::default(); partition.blocks];
        SupernetStore { config, partition, aggregation, blocks }
    }

    pub fn entry(&self, edge: &Edge) -> Option<&EdgeEntry> {
        self.blocks[self.partition.block_of(edge)].entries.get(edge)
    }

    /// Current score of an edge; untouched edges score 0.
    pub fn score(&self, edge: &Edge) -> f64 {
        self.entry(edge).map_or(0.0, |e| e.score)
    }

    pub fn visits(&self, edge: &Edge) -> u64 {
        self.entry(edge).map_or(0, |e| e.visits)
    }

    /// Estimate for a full or partial path whose blocks are all trained: the
    /// summed edge scores with each block's neck offset removed, aggregated.
    pub fn estimate(&self, path: &Architecture) -> Result<f64, SupernetError> {
        let mut raw = 0.0;
        for e in edges_of(&self.config, path) {
            let b = self.partition.block_of(&e);
            let block = &self.blocks[b];
            if !block.trained {
                return Err(SupernetError::Untrained(b));
            }
            raw += block.entries.get(&e).map_or(0.0, |x| x.score) - block.neck_bias;
        }
        Ok(self.aggregation.apply(raw))
    }

    /// Quality estimate of a whole architecture with inherited scores.
    pub fn oneshot_eval(&self, arch: &Architecture) -> Result<f64, SupernetError> {
        if arch.strides.len() != self.config.spatial_layers
            || arch.ops.len() != self.config.spatial_layers
            || arch.seq.len() != self.config.sequential_layers
        {
            return Err(SupernetError::Mismatch("architecture length does not match the store".into()));
        }
        self.estimate(arch)
    }

    /// Nodes a valid path can occupy before `layer`.
    pub fn nodes_at(&self, counter: &PathCounter, layer: usize) -> Vec<Node> {
        let (a_tot, b_tot) = self.config.slot_counts().expect("valid config");
        let m = self.config.spatial_layers;
        let mut out = Vec::new();
        for both in 0..=a_tot {
            for height in 0..=b_tot {
                if counter.ways(layer, both, height) > 0
                    && counter.ways(m - layer, a_tot - both, b_tot - height) > 0
                {
                    out.push(Node { both, height });
                }
            }
        }
        out
    }

    /// Every edge a valid architecture can traverse in `block`.
    pub fn block_edges(&self, block: usize) -> Vec<Edge> {
        let cfg = &self.config;
        if self.partition.is_sequential(block) {
            return (0..cfg.sequential_layers)
                .flat_map(|layer| TransformerChoice::all().map(move |choice| Edge::Sequential { layer, choice }))
                .collect();
        }
        let counter = PathCounter::for_config(cfg).expect("valid config");
        let mut out = Vec::new();
        for layer in self.partition.range(block) {
            let next: Vec<Node> = self.nodes_at(&counter, layer + 1);
            for node in self.nodes_at(&counter, layer) {
                let (h, w) = node.resolution(cfg);
                for stride in Stride::ALL {
                    if !next.contains(&node.after(&[stride])) {
                        continue;
                    }
                    for &op in &cfg.ops {
                        out.push(Edge::Spatial { layer, h, w, stride, op });
                    }
                }
            }
        }
        out
    }

    /// Smallest visit count over every possible edge of `block`.
    pub fn min_visits(&self, block: usize) -> u64 {
        self.block_edges(block).iter().map(|e| self.visits(e)).min().unwrap_or(0)
    }
}

/// A stride-mix choice for one spatial block: start node, `(2,2)` and `(2,1)`
/// counts inside the block, and how many stride sequences realise it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub input: Node,
    pub both: usize,
    pub height: usize,
    pub ways: u128,
}

/// All feasible segments of spatial block `block`.
pub fn block_segments(
    config: &SpaceConfig,
    part: &BlockPartition,
    counter: &PathCounter,
    block: usize,
) -> Vec<Segment> {
    let (a_tot, b_tot) = config.slot_counts().expect("valid config");
    let len = part.layers_per_block;
    let before = block * len;
    let after = config.spatial_layers - before - len;
    let mut out = Vec::new();
    for ia in 0..=a_tot {
        for ib in 0..=b_tot {
            if counter.ways(before, ia, ib) == 0 {
                continue;
            }
            for sa in 0..=(a_tot - ia) {
                for sb in 0..=(b_tot - ib) {
                    let ways = counter.ways(len, sa, sb);
                    if ways == 0 || counter.ways(after, a_tot - ia - sa, b_tot - ib - sb) == 0 {
                        continue;
                    }
                    out.push(Segment { input: Node { both: ia, height: ib }, both: sa, height: sb, ways });
                }
            }
        }
    }
    out
}

fn uniform_ops(config: &SpaceConfig, n: usize, rng: &mut SeededRng) -> Vec<ConvChoice> {
    (0..n).map(|_| config.ops[rng.random_range(0..config.ops.len())]).collect()
}

fn uniform_seq(n: usize, rng: &mut SeededRng) -> Vec<TransformerChoice> {
    (0..n)
        .map(|_| TransformerChoice::from_index(rng.random_range(0..TransformerChoice::COUNT)))
        .collect()
}

/// A path through one spatial block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPath {
    pub input: Node,
    pub strides: Vec<Stride>,
    pub ops: Vec<ConvChoice>,
}

impl BlockPath {
    pub fn output(&self) -> Node {
        self.input.after(&self.strides)
    }
}

/// Uniform draw over all paths of spatial block `block`.
pub fn sample_block_path(
    config: &SpaceConfig,
    part: &BlockPartition,
    counter: &PathCounter,
    block: usize,
    rng: &mut SeededRng,
) -> BlockPath {
    let segs = block_segments(config, part, counter, block);
    let total: u128 = segs.iter().map(|s| s.ways).sum();
    let mut u = rng.random_range(0..total);
    let seg = segs
        .iter()
        .find(|s| {
            if u < s.ways {
                true
            } else {
                u -= s.ways;
                false
            }
        })
        .expect("draw below total");
    let strides = counter.sample(part.layers_per_block, seg.both, seg.height, rng);
    let ops = uniform_ops(config, part.layers_per_block, rng);
    BlockPath { input: seg.input, strides, ops }
}

/// Uniform draw over prefixes of the first `layers` layers ending at `node`.
pub fn sample_prefix(
    config: &SpaceConfig,
    counter: &PathCounter,
    layers: usize,
    node: Node,
    rng: &mut SeededRng,
) -> Result<Architecture, SupernetError> {
    if counter.ways(layers, node.both, node.height) == 0 {
        let (h, w) = node.resolution(config);
        return Err(SupernetError::Mismatch(format!("no prefix of {layers} layers reaches {h}x{w}")));
    }
    let strides = counter.sample(layers, node.both, node.height, rng);
    let ops = uniform_ops(config, layers, rng);
    Ok(Architecture { strides, ops, seq: vec![] })
}

/// Chains lookup entries backward from the block before `block`, each time
/// taking the entry whose output matches the input of the path after it.
pub fn best_prefix(store: &SupernetStore, block: usize, input: Node) -> Result<Architecture, SupernetError> {
    let mut node = input;
    let mut parts: Vec<&LookupEntry> = Vec::with_capacity(block);
    for j in (0..block).rev() {
        let entry = store.blocks[j].lookup.get(&node).ok_or_else(|| {
            let (h, w) = node.resolution(&store.config);
            SupernetError::MissingLookup { block: j, h, w }
        })?;
        parts.push(entry);
        node = entry.input;
    }
    let mut prefix = Architecture { strides: vec![], ops: vec![], seq: vec![] };
    for e in parts.into_iter().rev() {
        prefix.strides.extend_from_slice(&e.strides);
        prefix.ops.extend_from_slice(&e.ops);
    }
    Ok(prefix)
}

fn stride_patterns(len: usize, both: usize, height: usize) -> Vec<Vec<Stride>> {
    fn rec(r: usize, a: usize, b: usize, cur: &mut Vec<Stride>, out: &mut Vec<Vec<Stride>>) {
        if a + b > r {
            return;
        }
        if r == 0 {
            out.push(cur.clone());
            return;
        }
        for s in Stride::ALL {
            let (na, nb) = match s {
                Stride::Both if a > 0 => (a - 1, b),
                Stride::Height if b > 0 => (a, b - 1),
                Stride::Identity => (a, b),
                _ => continue,
            };
            cur.push(s);
            rec(r - 1, na, nb, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(len, both, height, &mut Vec::new(), &mut out);
    out
}

/// Every path of spatial block `block`, or `None` when there are more than `cap`.
pub fn enumerate_block_paths(
    config: &SpaceConfig,
    part: &BlockPartition,
    counter: &PathCounter,
    block: usize,
    cap: usize,
) -> Option<Vec<BlockPath>> {
    let len = part.layers_per_block;
    let n_ops = config.ops.len() as u128;
    let op_combos = n_ops.checked_pow(len as u32)?;
    let segs = block_segments(config, part, counter, block);
    let total: u128 = segs.iter().map(|s| s.ways.saturating_mul(op_combos)).sum();
    if total > cap as u128 {
        return None;
    }
    let mut out = Vec::with_capacity(total as usize);
    for seg in &segs {
        for strides in stride_patterns(len, seg.both, seg.height) {
            for mut idx in 0..op_combos {
                let mut ops = vec![config.ops[0]; len];
                for slot in ops.iter_mut().rev() {
                    *slot = config.ops[(idx % n_ops) as usize];
                    idx /= n_ops;
                }
                out.push(BlockPath { input: seg.input, strides: strides.clone(), ops });
            }
        }
    }
    Some(out)
}

/// Fills block `block`'s lookup table from at most `samples` candidate paths:
/// all of them when few enough, otherwise uniform draws. Each candidate is
/// scored together with its best prefix; candidates without one are skipped.
pub fn build_lookup(
    store: &mut SupernetStore,
    block: usize,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<(), SupernetError> {
    let counter = PathCounter::for_config(&store.config)?;
    let cfg = store.config.clone();
    let part = store.partition;
    let candidates = match enumerate_block_paths(&cfg, &part, &counter, block, samples) {
        Some(all) => all,
        None => (0..samples).map(|_| sample_block_path(&cfg, &part, &counter, block, rng)).collect(),
    };
    let mut table: BTreeMap<Node, LookupEntry> = BTreeMap::new();
    for cand in candidates {
        let Ok(mut path) = best_prefix(store, block, cand.input) else {
            continue;
        };
        path.strides.extend_from_slice(&cand.strides);
        path.ops.extend_from_slice(&cand.ops);
        let perf = store.estimate(&path)?;
        let output = cand.output();
        if table.get(&output).is_none_or(|e| perf > e.perf) {
            table.insert(
                output,
                LookupEntry { input: cand.input, output, strides: cand.strides, ops: cand.ops, perf },
            );
        }
    }
    store.blocks[block].lookup = table;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    /// Block currently training (unused by SPOS).
    pub block: usize,
    pub iteration: u64,
    pub done: bool,
}

/// Resumable training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    store: SupernetStore,
    settings: TrainSettings,
    progress: Progress,
    aborted: Option<String>,
    rng: SeededRng,
    counter: PathCounter,
}

impl Trainer {
    pub fn new(
        config: &SpaceConfig,
        settings: TrainSettings,
        aggregation: Aggregation,
        rng: SeededRng,
    ) -> Result<Self, SupernetError> {
        config.check()?;
        let part = partition(config, settings.blocks)?;
        Ok(Trainer {
            store: SupernetStore::new(config.clone(), part, aggregation),
            settings,
            progress: Progress::default(),
            aborted: None,
            rng,
            counter: PathCounter::for_config(config)?,
        })
    }

    pub fn store(&self) -> &SupernetStore {
        &self.store
    }

    pub fn into_store(self) -> SupernetStore {
        self.store
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    /// Error message of the step that stopped the run, if any.
    pub fn aborted(&self) -> Option<&str> {
        self.aborted.as_deref()
    }

    fn block_iters(&self, block: usize) -> u64 {
        let empty = self.store.partition.is_sequential(block) && self.store.config.sequential_layers == 0;
        if empty { 0 } else { self.settings.iters }
    }

    /// Runs one iteration or one block transition. Returns whether work remains.
    pub fn step(&mut self, oracle: &dyn TrainOracle) -> Result<bool, SupernetError> {
        if self.progress.done {
            return Ok(false);
        }
        let res = self.step_inner(oracle);
        if let Err(e) = &res {
            self.aborted = Some(e.to_string());
        }
        res.map(|_| !self.progress.done)
    }

    fn step_inner(&mut self, oracle: &dyn TrainOracle) -> Result<(), SupernetError> {
        let k = self.store.partition.blocks;
        if self.settings.strategy == Strategy::Spos {
            if self.progress.iteration < k as u64 * self.settings.iters {
                self.spos_iteration(oracle)?;
                self.progress.iteration += 1;
            } else {
                for b in &mut self.store.blocks {
                    b.trained = true;
                }
                self.progress.done = true;
            }
            return Ok(());
        }
        let block = self.progress.block;
        if self.progress.iteration < self.block_iters(block) {
            self.block_iteration(oracle, block)?;
            self.progress.iteration += 1;
            return Ok(());
        }
        let state = &mut self.store.blocks[block];
        state.trained = true;
        if self.progress.iteration > 0 && !self.store.partition.is_sequential(block) {
            state.neck_bias = oracle.neck_bias(block);
        }
        if self.settings.strategy == Strategy::BestPath && !self.store.partition.is_sequential(block) {
            build_lookup(&mut self.store, block, self.settings.lookup_samples, &mut self.rng)?;
        }
        self.progress.block += 1;
        self.progress.iteration = 0;
        self.progress.done = self.progress.block == k;
        Ok(())
    }

    fn block_iteration(&mut self, oracle: &dyn TrainOracle, block: usize) -> Result<(), SupernetError> {
        let cfg = &self.store.config;
        let part = self.store.partition;
        let (input, mut tail) = if part.is_sequential(block) {
            let (a, b) = cfg.slot_counts()?;
            let seq = uniform_seq(cfg.sequential_layers, &mut self.rng);
            (Node { both: a, height: b }, Architecture { strides: vec![], ops: vec![], seq })
        } else {
            let bp = sample_block_path(cfg, &part, &self.counter, block, &mut self.rng);
            (bp.input, Architecture { strides: bp.strides, ops: bp.ops, seq: vec![] })
        };
        let prefix_len = if part.is_sequential(block) { cfg.spatial_layers } else { part.range(block).start };
        let prefix = match self.settings.strategy {
            Strategy::BestPath => match best_prefix(&self.store, block, input) {
                Ok(p) => p,
                Err(_) => sample_prefix(cfg, &self.counter, prefix_len, input, &mut self.rng)?,
            },
            _ => sample_prefix(cfg, &self.counter, prefix_len, input, &mut self.rng)?,
        };
        let mut path = prefix;
        path.strides.append(&mut tail.strides);
        path.ops.append(&mut tail.ops);
        path.seq = tail.seq;
        let edges = edges_of(cfg, &path);
        let trainable: Vec<usize> = match self.settings.strategy {
            Strategy::CoUpdate => (0..edges.len()).collect(),
            _ => (0..edges.len()).filter(|&i| part.block_of(&edges[i]) == block).collect(),
        };
        let neck = !part.is_sequential(block);
        self.update(oracle, &path, &edges, &trainable, block, neck)
    }

    fn spos_iteration(&mut self, oracle: &dyn TrainOracle) -> Result<(), SupernetError> {
        let cfg = &self.store.config;
        let arch = uniform_architecture(cfg, &self.counter, &mut self.rng)?;
        let edges = edges_of(cfg, &arch);
        let trainable: Vec<usize> = (0..edges.len()).collect();
        let last = self.store.partition.sequential_block();
        self.update(oracle, &arch, &edges, &trainable, last, false)
    }

    fn update(
        &mut self,
        oracle: &dyn TrainOracle,
        path: &Architecture,
        edges: &[Edge],
        trainable: &[usize],
        block: usize,
        neck: bool,
    ) -> Result<(), SupernetError> {
        let current: Vec<f64> = edges.iter().map(|e| self.store.score(e)).collect();
        let req = TrainRequest {
            config: &self.store.config,
            path,
            edges,
            current: &current,
            trainable,
            block,
            neck,
        };
        let targets = oracle.edge_targets(&req, &mut self.rng)?;
        if targets.len() != trainable.len() {
            return Err(EvalError::Protocol("target count does not match trainable edges".into()).into());
        }
        let rate = self.settings.rate;
        for (&i, t) in trainable.iter().zip(targets) {
            let e = edges[i];
            let b = self.store.partition.block_of(&e);
            let entry = self.store.blocks[b].entries.entry(e).or_default();
            entry.score += rate * (t - entry.score);
            entry.visits += 1;
        }
        Ok(())
    }

    /// Runs until done or until `max_steps` steps have been taken.
    pub fn run(&mut self, oracle: &dyn TrainOracle, max_steps: Option<u64>) -> Result<(), SupernetError> {
        let mut steps = 0u64;
        while max_steps.is_none_or(|m| steps < m) && self.step(oracle)? {
            steps += 1;
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let blocks = self
            .store
            .blocks
            .iter()
            .map(|b| BlockRecord {
                trained: b.trained,
                neck_bias: b.neck_bias,
                entries: b.entries.iter().map(|(e, v)| (e.id(), *v)).collect(),
                lookup: b
                    .lookup
                    .values()
                    .map(|l| LookupRecord {
                        input: l.input,
                        output: l.output,
                        path: Architecture { strides: l.strides.clone(), ops: l.ops.clone(), seq: vec![] }
                            .encode(),
                        perf: l.perf,
                    })
                    .collect(),
            })
            .collect();
        Checkpoint {
            config: self.store.config.clone(),
            settings: self.settings,
            aggregation: self.store.aggregation,
            progress: self.progress,
            aborted: self.aborted.clone(),
            rng: self.rng.clone(),
            blocks,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, SupernetError> {
        let mut t = Trainer::new(&ck.config, ck.settings, ck.aggregation, ck.rng)?;
        if ck.blocks.len() != t.store.blocks.len() {
            return Err(SupernetError::Checkpoint("block count does not match settings".into()));
        }
        for (state, rec) in t.store.blocks.iter_mut().zip(ck.blocks) {
            state.trained = rec.trained;
            state.neck_bias = rec.neck_bias;
            for (id, v) in rec.entries {
                let e = Edge::parse_id(&id).ok_or_else(|| SupernetError::Checkpoint(format!("bad edge id `{id}`")))?;
                state.entries.insert(e, v);
            }
            for l in rec.lookup {
                let seg = Architecture::parse(&l.path).map_err(|e| SupernetError::Checkpoint(e.to_string()))?;
                state.lookup.insert(
                    l.output,
                    LookupEntry { input: l.input, output: l.output, strides: seg.strides, ops: seg.ops, perf: l.perf },
                );
            }
        }
        t.progress = ck.progress;
        t.aborted = ck.aborted;
        Ok(t)
    }

    pub fn checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, SupernetError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| SupernetError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

/// Serialized trainer state, keyed by canonical edge ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: SpaceConfig,
    pub settings: TrainSettings,
    pub aggregation: Aggregation,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub rng: SeededRng,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecord {
    pub trained: bool,
    pub neck_bias: f64,
    pub entries: BTreeMap<String, EdgeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lookup: Vec<LookupRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LookupRecord {
    pub input: Node,
    pub output: Node,
    pub path: String,
    pub perf: f64,
}

/// Trains a fresh store to completion.
pub fn train_progressive(
    config: &SpaceConfig,
    settings: TrainSettings,
    oracle: &dyn TrainOracle,
    rng: SeededRng,
) -> Result<SupernetStore, SupernetError> {
    let mut t = Trainer::new(config, settings, oracle.aggregation(), rng)?;
    t.run(oracle, None)?;
    Ok(t.into_store())
}
