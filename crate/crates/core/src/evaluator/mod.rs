//! Quality and cost oracles.
//!
//! [`SyntheticBenchmark`] is a deterministic stand-in for training and
//! validating networks: every supernet edge carries a hidden quality drawn
//! from the seed, adjacent edges interact through a small pair term, and the
//! architecture's ground-truth quality is the logistic of the sum. Training
//! signals add a per-block neck bias and Gaussian noise. [`latency`] models
//! deployment cost with a lookup table and [`external`] talks to an evaluator
//! process over line-delimited JSON.

pub mod latency;
#[cfg(not(target_arch = "wasm32"))]
pub mod external;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::{edges_of, Edge};
use crate::space::{Architecture, SpaceConfig};
use crate::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("evaluator timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("evaluator protocol error: {0}")]
    Protocol(String),
    #[error("evaluator exited with status {0:?}")]
    Exited(Option<i32>),
    #[error("evaluator rejected request: {0}")]
    Rejected(String),
    #[error("evaluator io error: {0}")]
    Io(String),
    #[error("missing latency entry `{0}`")]
    MissingLatency(String),
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One supernet update request: a path through blocks `0..=block`, the store's
/// current scores along it, and which of its edges are being trained.
#[derive(Debug, Clone, Copy)]
pub struct TrainRequest<'a> {
    pub config: &'a SpaceConfig,
    pub path: &'a Architecture,
    pub edges: &'a [Edge],
    pub current: &'a [f64],
    pub trainable: &'a [usize],
    pub block: usize,
    /// Whether the path is read out through the auxiliary neck.
    pub neck: bool,
}

/// Source of training targets for the supernet store.
pub trait TrainOracle {
    /// Target score for each trainable edge of `req`, in `req.trainable` order.
    fn edge_targets(&self, req: &TrainRequest<'_>, rng: &mut SeededRng) -> Result<Vec<f64>, EvalError>;

    /// Additive offset the auxiliary neck introduces while `block` trains.
    fn neck_bias(&self, block: usize) -> f64;

    /// How summed edge scores map to the reported quality scale.
    fn aggregation(&self) -> Aggregation;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Logistic,
    Sum,
}

impl Aggregation {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            Aggregation::Logistic => logistic(raw),
            Aggregation::Sum => raw,
        }
    }
}

/// Architecture quality for the search stage.
pub trait ArchScorer {
    fn score(&self, arch: &Architecture) -> Result<f64, EvalError>;
}

impl<F: Fn(&Architecture) -> f64> ArchScorer for F {
    fn score(&self, arch: &Architecture) -> Result<f64, EvalError> {
        Ok(self(arch))
    }
}

const TAG_EDGE: u64 = 0x6564_6765;
const TAG_PAIR: u64 = 0x7061_6972;
const TAG_BIAS: u64 = 0x6269_6173;
const TAG_OP: u64 = 0x6f70_6572;
const TAG_STRIDE: u64 = 0x7374_7264;
const TAG_BIT: u64 = 0x0062_6974;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[-1, 1)`, a pure function of its inputs.
pub(crate) fn signed_unit(seed: u64, tag: u64, a: u64, b: u64) -> f64 {
    let h = mix(mix(mix(seed ^ tag) ^ a) ^ b);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Deterministic surrogate benchmark with known ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub seed: u64,
    /// Magnitude of edge qualities.
    pub edge_scale: f64,
    /// Weight of the per-edge term against the layer-wise terms, in `[0, 1]`.
    pub joint_share: f64,
    pub interaction_weight: f64,
    pub noise_sigma: f64,
    /// Neck biases are uniform in `[-bias_range, bias_range]`.
    pub bias_range: f64,
}

impl SyntheticBenchmark {
    pub fn new(seed: u64) -> Self {
        SyntheticBenchmark {
            seed,
            edge_scale: 0.25,
            joint_share: 0.2,
            interaction_weight: 0.02,
            noise_sigma: 0.05,
            bias_range: 0.1,
        }
    }

    pub fn noiseless(seed: u64) -> Self {
        SyntheticBenchmark { noise_sigma: 0.0, ..Self::new(seed) }
    }

    /// A layer-wise operator term and a layer-wise stride term (per-bit terms
    /// for transformer layers), plus a `joint_share` of a term drawn for the
    /// exact edge.
    pub fn edge_quality(&self, edge: &Edge) -> f64 {
        let joint = signed_unit(self.seed, TAG_EDGE, edge.key(), 0);
        let local = match *edge {
            Edge::Spatial { layer, stride, op, .. } => {
                let l = layer as u64;
                0.7 * signed_unit(self.seed, TAG_OP, l, op as u64)
                    + 0.3 * signed_unit(self.seed, TAG_STRIDE, l, stride as u64)
            }
            Edge::Sequential { layer, choice } => {
                let l = layer as u64;
                0.5 * choice
                    .bits()
                    .iter()
                    .enumerate()
                    .map(|(bit, &v)| signed_unit(self.seed, TAG_BIT, l, (bit * 2 + usize::from(v)) as u64))
                    .sum::<f64>()
            }
        };
        self.edge_scale * ((1.0 - self.joint_share) * local + self.joint_share * joint)
    }

    /// Interaction between consecutive edges, in `[-1, 1)` before weighting.
    pub fn pair_term(&self, a: &Edge, b: &Edge) -> f64 {
        signed_unit(self.seed, TAG_PAIR, a.key(), b.key())
    }

    pub fn block_bias(&self, block: usize) -> f64 {
        self.bias_range * signed_unit(self.seed, TAG_BIAS, block as u64, 0)
    }

    /// Unsquashed quality of an edge sequence.
    pub fn raw_quality(&self, edges: &[Edge]) -> f64 {
        let unary: f64 = edges.iter().map(|e| self.edge_quality(e)).sum();
        let pairs: f64 = edges.windows(2).map(|p| self.pair_term(&p[0], &p[1])).sum();
        unary + self.interaction_weight * pairs
    }

    /// Ground-truth quality in `(0, 1)`.
    pub fn true_quality(&self, config: &SpaceConfig, arch: &Architecture) -> f64 {
        logistic(self.raw_quality(&edges_of(config, arch)))
    }

    /// Noisy scalar signal for a (partial) path trained as `block`:
    /// raw quality plus neck bias plus Gaussian noise.
    pub fn train_signal(
        &self,
        config: &SpaceConfig,
        path: &Architecture,
        block: usize,
        rng: &mut SeededRng,
    ) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.raw_quality(&edges_of(config, path)) + self.block_bias(block) + self.noise_sigma * z
    }

    /// An edge's share of the path's quality: its own term plus half of each
    /// adjacent interaction.
    pub fn edge_contribution(&self, edges: &[Edge], i: usize) -> f64 {
        let mut v = self.edge_quality(&edges[i]);
        if i > 0 {
            v += 0.5 * self.interaction_weight * self.pair_term(&edges[i - 1], &edges[i]);
        }
        if i + 1 < edges.len() {
            v += 0.5 * self.interaction_weight * self.pair_term(&edges[i], &edges[i + 1]);
        }
        v
    }
}

impl TrainOracle for SyntheticBenchmark {
    /// Each trainable edge sees its contribution plus the neck bias plus noise
    /// whose standard deviation grows with the square root of the number of
    /// layers trained jointly on the path.
    fn edge_targets(&self, req: &TrainRequest<'_>, rng: &mut SeededRng) -> Result<Vec<f64>, EvalError> {
        let bias = if req.neck { self.block_bias(req.block) } else { 0.0 };
        let sigma = self.noise_sigma * (req.trainable.len() as f64).sqrt();
        Ok(req
            .trainable
            .iter()
            .map(|&i| {
                let z: f64 = rng.sample(StandardNormal);
                self.edge_contribution(req.edges, i) + bias + sigma * z
            })
            .collect())
    }

    fn neck_bias(&self, block: usize) -> f64 {
        self.block_bias(block)
    }

    fn aggregation(&self) -> Aggregation {
        Aggregation::Logistic
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{enumerate, reference, ConvChoice, Stride, TransformerChoice};
    use rand::SeedableRng;

    fn toy() -> SpaceConfig {
        SpaceConfig {
            spatial_layers: 6,
            sequential_layers: 1,
            input_h: 4,
            input_w: 2,
            target_h: 1,
            target_w: 1,
            base_channels: 8,
            has_stem: false,
            ops: vec![ConvChoice::K3E1, ConvChoice::K5E6],
        }
    }

    #[test]
    fn quality_is_pure() {
        let bench = SyntheticBenchmark::new(3);
        let cfg = SpaceConfig::scene();
        let arch = reference::scene();
        let q = bench.true_quality(&cfg, &arch);
        assert_eq!(q, bench.true_quality(&cfg, &arch));
        assert_eq!(q, SyntheticBenchmark::new(3).true_quality(&cfg, &arch));
        assert!(q > 0.0 && q < 1.0);
        assert_ne!(q, SyntheticBenchmark::new(4).true_quality(&cfg, &arch));
    }

    #[test]
    fn toy_argmax_is_unique() {
        let cfg = toy();
        for seed in 0..5 {
            let bench = SyntheticBenchmark::new(seed);
            let mut vals: Vec<f64> = enumerate(&cfg, 1 << 20)
                .unwrap()
                .map(|a| bench.true_quality(&cfg, &a))
                .collect();
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!(vals[0] > vals[1], "seed {seed} has a tied optimum");
        }
    }

    #[test]
    fn no_interaction_optimum_is_greedy_per_path() {
        // with pair terms off, ops and transformer choices decouple given the path
        let cfg = toy();
        let bench = SyntheticBenchmark { interaction_weight: 0.0, ..SyntheticBenchmark::new(11) };
        let brute = enumerate(&cfg, 1 << 20)
            .unwrap()
            .max_by(|a, b| {
                bench.true_quality(&cfg, a).partial_cmp(&bench.true_quality(&cfg, b)).unwrap()
            })
            .unwrap();
        let mut best: Option<(f64, Architecture)> = None;
        for path in crate::space::enumerate_paths(&cfg).unwrap() {
            let geo = crate::space::walk_geometry(&cfg, &path);
            let ops: Vec<ConvChoice> = path
                .iter()
                .enumerate()
                .map(|(layer, &stride)| {
                    *cfg.ops
                        .iter()
                        .max_by(|x, y| {
                            let q = |op: ConvChoice| {
                                bench.edge_quality(&Edge::Spatial { layer, h: geo[layer].h, w: geo[layer].w, stride, op })
                            };
                            q(**x).partial_cmp(&q(**y)).unwrap()
                        })
                        .unwrap()
                })
                .collect();
            let seq = (0..cfg.sequential_layers)
                .map(|layer| {
                    TransformerChoice::all()
                        .max_by(|x, y| {
                            let q = |choice| bench.edge_quality(&Edge::Sequential { layer, choice });
                            q(*x).partial_cmp(&q(*y)).unwrap()
                        })
                        .unwrap()
                })
                .collect();
            let arch = Architecture { strides: path, ops, seq };
            let q = bench.true_quality(&cfg, &arch);
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, arch));
            }
        }
        assert_eq!(best.unwrap().1, brute);
    }

    #[test]
    fn train_signal_noiseless_and_unbiased() {
        let cfg = toy();
        let path = Architecture {
            strides: vec![Stride::Height, Stride::Identity, Stride::Both],
            ops: vec![ConvChoice::K3E1, ConvChoice::K5E6, ConvChoice::K3E1],
            seq: vec![],
        };
        let exact = SyntheticBenchmark::noiseless(5);
        let truth = exact.raw_quality(&edges_of(&cfg, &path)) + exact.block_bias(1);
        let mut rng = SeededRng::seed_from_u64(0);
        assert_eq!(exact.train_signal(&cfg, &path, 1, &mut rng), truth);

        let bench = SyntheticBenchmark::new(5);
        let n = 10_000;
        let mut rng = SeededRng::seed_from_u64(9);
        let samples: Vec<f64> = (0..n).map(|_| bench.train_signal(&cfg, &path, 1, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let se = bench.noise_sigma / (n as f64).sqrt();
        assert!((mean - truth).abs() < 3.0 * se, "mean {mean} truth {truth}");

        let mut a = SeededRng::seed_from_u64(4);
        let mut b = SeededRng::seed_from_u64(4);
        assert_eq!(bench.train_signal(&cfg, &path, 0, &mut a), bench.train_signal(&cfg, &path, 0, &mut b));
    }

    #[test]
    fn biases_in_range() {
        let bench = SyntheticBenchmark::new(1);
        for k in 0..16 {
            assert!(bench.block_bias(k).abs() <= 0.1);
        }
    }
}
