//! Factored exponential-family sampling distribution over architectures.
//!
//! Every discrete choice is an independent categorical in natural
//! parameters: `eta_j = ln(theta_j / theta_last)` for the first `n_c - 1`
//! categories, the last category acting as reference. Choices are
//!
//! * one operator decision per spatial layer (`n_c = |O_c|`),
//! * one position decision per non-identity stride slot (`n_c = M`), `(2,2)`
//!   slots first; draws that put two slots on the same layer are rejected,
//! * four binary switches per transformer layer.
//!
//! Flat parameter vectors (gradients, Fisher rows) follow the same order:
//! operators by layer, slots by index, transformer switches by layer then bit.
//! Log-probabilities use the product of the per-slot factors before
//! rejection, with an architecture's slot positions read in ascending order.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::space::{
    derive_slots, validate, Architecture, SpaceConfig, SpaceError, Stride, TransformerChoice,
};

/// Rejection attempts for slot positions before giving up.
pub const MAX_SLOT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("slot positions collided in all {0} attempts")]
    Degenerate(usize),
    #[error("architecture does not match the distribution: {0}")]
    Mismatch(String),
    #[error("bad distribution state: {0}")]
    State(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// A categorical distribution in natural parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalNat {
    eta: Vec<f64>,
}

impl CategoricalNat {
    pub fn uniform(n_categories: usize) -> Self {
        assert!(n_categories >= 1);
        CategoricalNat { eta: vec![0.0; n_categories - 1] }
    }

    pub fn new(eta: Vec<f64>) -> Self {
        assert!(eta.iter().all(|x| x.is_finite()), "non-finite natural parameter");
        CategoricalNat { eta }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn n_categories(&self) -> usize {
        self.eta.len() + 1
    }

    fn log_normalizer(&self) -> f64 {
        let m = self.eta.iter().copied().fold(0.0_f64, f64::max);
        let s: f64 = self.eta.iter().map(|e| (e - m).exp()).sum::<f64>() + (-m).exp();
        m + s.ln()
    }

    /// Category probabilities, computed with the max subtracted.
    pub fn probs(&self) -> Vec<f64> {
        let m = self.eta.iter().copied().fold(0.0_f64, f64::max);
        let mut p: Vec<f64> = self.eta.iter().map(|e| (e - m).exp()).collect();
        p.push((-m).exp());
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        p
    }

    pub fn log_prob(&self, category: usize) -> f64 {
        let logit = self.eta.get(category).copied().unwrap_or(0.0);
        logit - self.log_normalizer()
    }

    /// `T(y) - p` over the first `n_c - 1` categories.
    pub fn score(&self, category: usize) -> Vec<f64> {
        let p = self.probs();
        (0..self.eta.len())
            .map(|j| f64::from(u8::from(j == category)) - p[j])
            .collect()
    }

    /// `diag(p) - p p^T` over the first `n_c - 1` categories.
    pub fn fisher(&self) -> DMatrix<f64> {
        let p = self.probs();
        let k = self.eta.len();
        DMatrix::from_fn(k, k, |i, j| {
            if i == j { p[i] - p[i] * p[i] } else { -p[i] * p[j] }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.probs();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                return j;
            }
        }
        p.len() - 1
    }
}

/// Which choice a decision controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    Op { layer: usize },
    Slot { index: usize, stride: Stride },
    Seq { layer: usize, bit: usize },
}

const BIT_NAMES: [&str; 4] = ["residual", "rel", "drop_scaling", "glu"];

impl DecisionKind {
    /// Stable id, 1-based: `op.3`, `slot.2.S21`, `seq.1.glu`.
    pub fn id(&self) -> String {
        match *self {
            DecisionKind::Op { layer } => format!("op.{}", layer + 1),
            DecisionKind::Slot { index, stride } => format!("slot.{}.{}", index + 1, stride.token()),
            DecisionKind::Seq { layer, bit } => format!("seq.{}.{}", layer + 1, BIT_NAMES[bit]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub dist: CategoricalNat,
}

/// `P_theta` over a [`SpaceConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDistribution {
    config: SpaceConfig,
    decisions: Vec<Decision>,
}

impl ArchDistribution {
    pub fn uniform(config: &SpaceConfig) -> Result<Self, DistError> {
        config.check()?;
        let m = config.spatial_layers;
        let mut decisions = Vec::new();
        for layer in 0..m {
            decisions.push(Decision {
                kind: DecisionKind::Op { layer },
                dist: CategoricalNat::uniform(config.ops.len()),
            });
        }
        for (index, stride) in derive_slots(config)?.into_iter().enumerate() {
            decisions.push(Decision {
                kind: DecisionKind::Slot { index, stride },
                dist: CategoricalNat::uniform(m),
            });
        }
        for layer in 0..config.sequential_layers {
            for bit in 0..4 {
                decisions.push(Decision {
                    kind: DecisionKind::Seq { layer, bit },
                    dist: CategoricalNat::uniform(2),
                });
            }
        }
        Ok(ArchDistribution { config: config.clone(), decisions })
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.config
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    /// Length of flat parameter vectors.
    pub fn dim(&self) -> usize {
        self.decisions.iter().map(|d| d.dist.eta.len()).sum()
    }

    /// Start offset of each decision's block in flat vectors.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.decisions
            .iter()
            .map(|d| {
                let o = off;
                off += d.dist.eta.len();
                o
            })
            .collect()
    }

    pub fn flat_eta(&self) -> Vec<f64> {
        self.decisions.iter().flat_map(|d| d.dist.eta.iter().copied()).collect()
    }

    pub fn with_flat_eta(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.dim());
        let mut out = self.clone();
        let mut off = 0;
        for d in &mut out.decisions {
            let k = d.dist.eta.len();
            d.dist = CategoricalNat::new(flat[off..off + k].to_vec());
            off += k;
        }
        out
    }

    /// Replaces one decision's parameters.
    pub fn set_eta(&mut self, decision: usize, eta: Vec<f64>) {
        assert_eq!(eta.len(), self.decisions[decision].dist.eta.len());
        self.decisions[decision].dist = CategoricalNat::new(eta);
    }

    /// Category index of every decision for `arch`.
    pub fn categories(&self, arch: &Architecture) -> Result<Vec<usize>, DistError> {
        validate(arch, &self.config)
            .map_err(|v| DistError::Mismatch(SpaceError::InvalidArchitecture(v).to_string()))?;
        let mut both: Vec<usize> = Vec::new();
        let mut height: Vec<usize> = Vec::new();
        for (l, s) in arch.strides.iter().enumerate() {
            match s {
                Stride::Both => both.push(l),
                Stride::Height => height.push(l),
                Stride::Identity => {}
            }
        }
        let (mut bi, mut hi) = (both.into_iter(), height.into_iter());
        let mut out = Vec::with_capacity(self.decisions.len());
        for d in &self.decisions {
            let c = match d.kind {
                DecisionKind::Op { layer } => self
                    .config
                    .ops
                    .iter()
                    .position(|o| *o == arch.ops[layer])
                    .expect("validated operator"),
                DecisionKind::Slot { stride: Stride::Both, .. } => bi.next().expect("validated"),
                DecisionKind::Slot { .. } => hi.next().expect("validated"),
                DecisionKind::Seq { layer, bit } => usize::from(arch.seq[layer].bits()[bit]),
            };
            out.push(c);
        }
        Ok(out)
    }

    /// Builds the architecture for a full category assignment; `None` when two
    /// slots share a layer.
    pub fn assemble(&self, cats: &[usize]) -> Option<Architecture> {
        let m = self.config.spatial_layers;
        let mut strides = vec![Stride::Identity; m];
        let mut ops = vec![self.config.ops[0]; m];
        let mut bits = vec![[false; 4]; self.config.sequential_layers];
        for (d, &c) in self.decisions.iter().zip(cats) {
            match d.kind {
                DecisionKind::Op { layer } => ops[layer] = self.config.ops[c],
                DecisionKind::Slot { stride, .. } => {
                    if strides[c] != Stride::Identity {
                        return None;
                    }
                    strides[c] = stride;
                }
                DecisionKind::Seq { layer, bit } => bits[layer][bit] = c == 1,
            }
        }
        let seq = bits.into_iter().map(TransformerChoice::from_bits).collect();
        Some(Architecture { strides, ops, seq })
    }

    /// Draws one architecture; slot tuples with collisions are redrawn.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Architecture, DistError> {
        let mut cats = vec![0; self.decisions.len()];
        for (i, d) in self.decisions.iter().enumerate() {
            if matches!(d.kind, DecisionKind::Op { .. }) {
                cats[i] = d.dist.sample(rng);
            }
        }
        let slots: Vec<usize> = self
            .decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| matches!(d.kind, DecisionKind::Slot { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut used = vec![false; self.config.spatial_layers];
        let mut accepted = slots.is_empty();
        for _ in 0..MAX_SLOT_ATTEMPTS {
            if accepted {
                break;
            }
            used.iter_mut().for_each(|u| *u = false);
            accepted = true;
            for &i in &slots {
                let c = self.decisions[i].dist.sample(rng);
                cats[i] = c;
                if used[c] {
                    accepted = false;
                }
                used[c] = true;
            }
        }
        if !accepted {
            return Err(DistError::Degenerate(MAX_SLOT_ATTEMPTS));
        }
        for (i, d) in self.decisions.iter().enumerate() {
            if matches!(d.kind, DecisionKind::Seq { .. }) {
                cats[i] = d.dist.sample(rng);
            }
        }
        Ok(self.assemble(&cats).expect("slot positions are distinct"))
    }

    /// `sum_i eta_i^T T(y_i) - phi(eta_i)` over all decisions.
    pub fn log_prob(&self, arch: &Architecture) -> Result<f64, DistError> {
        let cats = self.categories(arch)?;
        Ok(self.decisions.iter().zip(&cats).map(|(d, &c)| d.dist.log_prob(c)).sum())
    }

    /// Gradient of [`log_prob`](Self::log_prob) with respect to the flat
    /// natural parameters.
    pub fn grad_log_prob(&self, arch: &Architecture) -> Result<Vec<f64>, DistError> {
        let cats = self.categories(arch)?;
        Ok(self.score_of(&cats))
    }

    pub(crate) fn score_of(&self, cats: &[usize]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.dim());
        for (d, &c) in self.decisions.iter().zip(cats) {
            g.extend(d.dist.score(c));
        }
        g
    }

    /// Per-decision Fisher blocks.
    pub fn fisher_analytic(&self) -> BlockDiagonal {
        BlockDiagonal { blocks: self.decisions.iter().map(|d| d.dist.fisher()).collect() }
    }

    /// Running average of score outer products over `samples`.
    pub fn fisher_empirical(&self, samples: &[Architecture]) -> Result<DMatrix<f64>, DistError> {
        let n = self.dim();
        let mut f = DMatrix::zeros(n, n);
        for (j, arch) in samples.iter().enumerate() {
            let g = nalgebra::DVector::from_vec(self.grad_log_prob(arch)?);
            let j = j as f64;
            f = (f * j + &g * g.transpose()) / (j + 1.0);
        }
        Ok(f)
    }

    /// `{decision id: eta}` for checkpointing.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, Vec<f64>> =
            self.decisions.iter().map(|d| (d.kind.id(), d.dist.eta.clone())).collect();
        serde_json::to_string_pretty(&map).expect("distribution serializes")
    }

    pub fn from_json(text: &str, config: &SpaceConfig) -> Result<Self, DistError> {
        let mut map: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(text).map_err(|e| DistError::State(e.to_string()))?;
        let mut out = Self::uniform(config)?;
        for d in &mut out.decisions {
            let id = d.kind.id();
            let eta = map
                .remove(&id)
                .ok_or_else(|| DistError::State(format!("missing decision `{id}`")))?;
            if eta.len() != d.dist.eta.len() || eta.iter().any(|x| !x.is_finite()) {
                return Err(DistError::State(format!("bad parameters for `{id}`")));
            }
            d.dist = CategoricalNat::new(eta);
        }
        if let Some(extra) = map.keys().next() {
            return Err(DistError::State(format!("unknown decision `{extra}`")));
        }
        Ok(out)
    }
}

/// Block-diagonal symmetric matrix, one block per decision.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            let k = b.nrows();
            out.view_mut((off, off), (k, k)).copy_from(b);
            off += k;
        }
        out
    }

    /// Copies the diagonal blocks of `dense` matching `sizes`.
    pub fn from_dense(dense: &DMatrix<f64>, sizes: &[usize]) -> Self {
        let mut off = 0;
        let blocks = sizes
            .iter()
            .map(|&k| {
                let b = dense.view((off, off), (k, k)).into_owned();
                off += k;
                b
            })
            .collect();
        BlockDiagonal { blocks }
    }

    /// Solves `(B + damping I) x = rhs` block by block.
    pub fn solve_damped(&self, rhs: &[f64], damping: f64) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(rhs.len());
        let mut off = 0;
        for b in &self.blocks {
            let k = b.nrows();
            if k == 0 {
                continue;
            }
            let a = b + DMatrix::identity(k, k) * damping;
            let r = nalgebra::DVector::from_column_slice(&rhs[off..off + k]);
            let x = match a.clone().cholesky() {
                Some(c) => c.solve(&r),
                None => a.lu().solve(&r)?,
            };
            out.extend(x.iter().copied());
            off += k;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ConvChoice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn probs_examples() {
        let p = CategoricalNat::uniform(4).probs();
        assert!(p.iter().all(|&x| close(x, 0.25, 1e-15)));
        let p = CategoricalNat::new(vec![3f64.ln()]).probs();
        assert!(close(p[0], 0.75, 1e-12) && close(p[1], 0.25, 1e-12));
        let p = CategoricalNat::new(vec![2f64.ln(), 0.0]).probs();
        assert!(close(p[0], 0.5, 1e-12) && close(p[1], 0.25, 1e-12) && close(p[2], 0.25, 1e-12));
    }

    #[test]
    fn probs_survive_extreme_parameters() {
        let p = CategoricalNat::new(vec![800.0, -800.0, 0.0]).probs();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!(close(p.iter().sum::<f64>(), 1.0, 1e-12));
        assert!(CategoricalNat::new(vec![800.0]).log_prob(1).is_finite());
    }

    #[test]
    fn score_and_fisher_examples() {
        let d = CategoricalNat::uniform(2);
        assert_eq!(d.score(0), vec![0.5]);
        assert!(close(d.fisher()[(0, 0)], 0.25, 1e-15));
        let f = CategoricalNat::uniform(4).fisher();
        assert!(close(f[(1, 1)], 0.1875, 1e-15));
        assert!(close(f[(0, 2)], -0.0625, 1e-15));
        let f = CategoricalNat::new(vec![0.3, -1.2, 2.0]).fisher();
        assert_eq!(f, f.transpose());
        assert!(f.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
    }

    #[test]
    fn log_prob_of_uniform_ops() {
        let cfg = SpaceConfig {
            spatial_layers: 1,
            sequential_layers: 0,
            input_h: 2,
            input_w: 2,
            target_h: 1,
            target_w: 1,
            base_channels: 4,
            has_stem: false,
            ops: ConvChoice::ALL.to_vec(),
        };
        let dist = ArchDistribution::uniform(&cfg).unwrap();
        let arch = Architecture { strides: vec![Stride::Both], ops: vec![ConvChoice::K5E1], seq: vec![] };
        // op factor ln 0.25, single slot over one position contributes 0
        assert!(close(dist.log_prob(&arch).unwrap(), 0.25f64.ln(), 1e-12));
    }

    #[test]
    fn degenerate_slots() {
        let cfg = SpaceConfig::default();
        let mut dist = ArchDistribution::uniform(&cfg).unwrap();
        let m = cfg.spatial_layers;
        let mut eta = vec![-50.0; m - 1];
        eta[0] = 50.0;
        let slot_ids: Vec<usize> = dist
            .decisions()
            .iter()
            .enumerate()
            .filter(|(_, d)| matches!(d.kind, DecisionKind::Slot { .. }))
            .map(|(i, _)| i)
            .take(2)
            .collect();
        for i in slot_ids {
            dist.set_eta(i, eta.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dist.sample(&mut rng), Err(DistError::Degenerate(MAX_SLOT_ATTEMPTS)));
    }

    #[test]
    fn json_roundtrip_and_errors() {
        let cfg = SpaceConfig::default();
        let mut dist = ArchDistribution::uniform(&cfg).unwrap();
        dist.set_eta(0, vec![0.5, -0.25, 1.0]);
        let text = dist.to_json();
        assert!(text.contains("\"slot.5.S21\""));
        assert_eq!(ArchDistribution::from_json(&text, &cfg).unwrap(), dist);
        assert!(ArchDistribution::from_json("{}", &cfg).is_err());
    }

    #[test]
    fn block_solve_matches_dense() {
        let dist = ArchDistribution::uniform(&SpaceConfig::default())
            .unwrap()
            .with_flat_eta(&(0..171).map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.5).collect::<Vec<_>>());
        let f = dist.fisher_analytic();
        let rhs: Vec<f64> = (0..f.dim()).map(|i| (i as f64).sin()).collect();
        let x = f.solve_damped(&rhs, 1e-3).unwrap();
        let dense = f.to_dense() + DMatrix::identity(f.dim(), f.dim()) * 1e-3;
        let back = dense * nalgebra::DVector::from_vec(x);
        for (a, b) in back.iter().zip(&rhs) {
            assert!(close(*a, *b, 1e-9));
        }
    }
}
