//! Edges of the supernet mesh.
//!
//! A spatial edge is one candidate convolution leaving a feature-map node:
//! `(layer, input geometry, stride, operator)`. A sequential edge is one
//! transformer variant at one layer. Architectures and partial paths are
//! sequences of edges; both the supernet store and the synthetic benchmark
//! are keyed by them.

use std::fmt;

use crate::space::{walk_geometry, Architecture, ConvChoice, SpaceConfig, Stride, TransformerChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Edge {
    /// `layer` is 0-based; `h`, `w` are the input geometry of that layer.
    Spatial { layer: usize, h: u32, w: u32, stride: Stride, op: ConvChoice },
    Sequential { layer: usize, choice: TransformerChoice },
}

impl Edge {
    /// Canonical id: `L03@16x600:S21:MB5E6` or `T01:0110` (1-based layers).
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn parse_id(s: &str) -> Option<Edge> {
        if let Some(rest) = s.strip_prefix('T') {
            let (layer, bits) = rest.split_once(':')?;
            let layer: usize = layer.parse().ok()?;
            if bits.len() != 4 || layer == 0 {
                return None;
            }
            let idx = usize::from_str_radix(bits, 2).ok()?;
            return Some(Edge::Sequential { layer: layer - 1, choice: TransformerChoice::from_index(idx) });
        }
        let rest = s.strip_prefix('L')?;
        let (layer, rest) = rest.split_once('@')?;
        let mut parts = rest.split(':');
        let (hw, st, op) = (parts.next()?, parts.next()?, parts.next()?);
        if parts.next().is_some() {
            return None;
        }
        let (h, w) = hw.split_once('x')?;
        let layer: usize = layer.parse().ok()?;
        let st = st.as_bytes();
        if st.len() != 3 || st[0] != b'S' || layer == 0 {
            return None;
        }
        let digit = |b: u8| char::from(b).to_digit(10);
        let stride = Stride::from_pair(digit(st[1])?, digit(st[2])?)?;
        Some(Edge::Spatial {
            layer: layer - 1,
            h: h.parse().ok()?,
            w: w.parse().ok()?,
            stride,
            op: ConvChoice::try_from(op.to_string()).ok()?,
        })
    }

    /// Injective 64-bit key, used for hashing.
    pub fn key(&self) -> u64 {
        match *self {
            Edge::Spatial { layer, h, w, stride, op } => {
                let s = stride as u64;
                let o = op as u64;
                1 | (layer as u64) << 1 | s << 9 | o << 11 | u64::from(h) << 13 | u64::from(w) << 37
            }
            Edge::Sequential { layer, choice } => (layer as u64) << 1 | (choice.index() as u64) << 9,
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edge::Spatial { layer, h, w, stride, op } => {
                write!(f, "L{:02}@{}x{}:{}:{}", layer + 1, h, w, stride.token(), op)
            }
            Edge::Sequential { layer, choice } => write!(f, "T{:02}:{}", layer + 1, choice.token()),
        }
    }
}

/// Edges traversed by a full or partial architecture (spatial prefix of any
/// length, optionally followed by transformer layers).
pub fn edges_of(config: &SpaceConfig, arch: &Architecture) -> Vec<Edge> {
    debug_assert_eq!(arch.strides.len(), arch.ops.len());
    let geo = walk_geometry(config, &arch.strides);
    let mut out: Vec<Edge> = arch
        .strides
        .iter()
        .zip(&arch.ops)
        .enumerate()
        .map(|(layer, (&stride, &op))| Edge::Spatial { layer, h: geo[layer].h, w: geo[layer].w, stride, op })
        .collect();
    out.extend(
        arch.seq
            .iter()
            .enumerate()
            .map(|(layer, &choice)| Edge::Sequential { layer, choice }),
    );
    out
}
