//! Additive latency model.
//!
//! A table maps `(operator, input h, input w, input channels)` to milliseconds.
//! Spatial layers are keyed by their MBConv token, transformer layers by
//! `TR<bits>` at the final spatial geometry. An architecture's latency is the
//! sum of its layer entries plus a constant head cost.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{signed_unit, EvalError};
use crate::space::{walk_geometry, Architecture, ConvChoice, SpaceConfig, TransformerChoice};

const TAG_JITTER: u64 = 0x6c61_7465;
const HEAD_OP: &str = "head";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatencyKey {
    pub op: String,
    pub h: u32,
    pub w: u32,
    pub channels: u32,
}

impl std::fmt::Display for LatencyKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}x{}x{}", self.op, self.h, self.w, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyTable {
    pub entries: BTreeMap<LatencyKey, f64>,
    pub head_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    op: String,
    h: u32,
    w: u32,
    channels: u32,
    ms: f64,
}

fn seq_op(choice: TransformerChoice) -> String {
    format!("TR{}", choice.token())
}

/// Table keys an architecture (or spatial prefix) touches, in layer order.
pub fn layer_keys(config: &SpaceConfig, arch: &Architecture) -> Vec<LatencyKey> {
    let geo = walk_geometry(config, &arch.strides);
    let mut keys: Vec<LatencyKey> = arch
        .ops
        .iter()
        .zip(&geo)
        .map(|(op, g)| LatencyKey { op: op.token(), h: g.h, w: g.w, channels: g.channels })
        .collect();
    let last = geo[geo.len() - 1];
    keys.extend(arch.seq.iter().map(|&c| LatencyKey {
        op: seq_op(c),
        h: last.h,
        w: last.w,
        channels: last.channels,
    }));
    keys
}

impl LatencyTable {
    pub fn new(head_ms: f64) -> Self {
        LatencyTable { entries: BTreeMap::new(), head_ms }
    }

    pub fn insert(&mut self, key: LatencyKey, ms: f64) {
        self.entries.insert(key, ms);
    }

    pub fn get(&self, key: &LatencyKey) -> Result<f64, EvalError> {
        self.entries.get(key).copied().ok_or_else(|| EvalError::MissingLatency(key.to_string()))
    }

    /// Cost of each layer, spatial then sequential.
    pub fn layer_costs(&self, config: &SpaceConfig, arch: &Architecture) -> Result<Vec<f64>, EvalError> {
        layer_keys(config, arch).iter().map(|k| self.get(k)).collect()
    }

    pub fn latency(&self, config: &SpaceConfig, arch: &Architecture) -> Result<f64, EvalError> {
        Ok(self.head_ms + self.layer_costs(config, arch)?.iter().sum::<f64>())
    }

    /// CSV with header `op,h,w,channels,ms`; the head is the row `head,0,0,0`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.serialize(Row { op: HEAD_OP.into(), h: 0, w: 0, channels: 0, ms: self.head_ms })?;
        for (k, &ms) in &self.entries {
            w.serialize(Row { op: k.op.clone(), h: k.h, w: k.w, channels: k.channels, ms })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, csv::Error> {
        let mut table = LatencyTable::default();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: Row = row?;
            if row.op == HEAD_OP {
                table.head_ms = row.ms;
            } else {
                table.insert(LatencyKey { op: row.op, h: row.h, w: row.w, channels: row.channels }, row.ms);
            }
        }
        Ok(table)
    }
}

/// Milliseconds per `k²·e·h·w·c` unit for spatial layers.
const SPATIAL_SCALE: f64 = 1.4e-8;
/// Milliseconds per `w·c` unit for transformer layers.
const SEQ_SCALE: f64 = 2e-6;
const HEAD_MS: f64 = 0.1;

pub fn spatial_cost(op: ConvChoice, h: u32, w: u32, channels: u32, seed: u64) -> f64 {
    let jitter = 1.0 + 0.1 * signed_unit(seed, TAG_JITTER, op as u64, 0);
    let k = f64::from(op.kernel());
    SPATIAL_SCALE * jitter * k * k * f64::from(op.expansion()) * f64::from(h) * f64::from(w) * f64::from(channels)
}

pub fn sequential_cost(choice: TransformerChoice, w: u32, channels: u32) -> f64 {
    let mut factor = 1.0;
    if choice.relative_embedding {
        factor += 0.35;
    }
    if choice.use_glu {
        factor += 0.3;
    }
    if choice.residual_attention {
        factor += 0.05;
    }
    if choice.drop_scaling {
        factor -= 0.01;
    }
    SEQ_SCALE * factor * f64::from(w) * f64::from(channels)
}

/// Table covering every geometry node the config can reach.
pub fn synth_latency_table(config: &SpaceConfig, seed: u64) -> LatencyTable {
    let mut table = LatencyTable::new(HEAD_MS);
    let (h0, w0) = config.searched_input();
    let (both, height) = config.slot_counts().unwrap_or((0, 0));
    let total = both + height;
    for a in 0..=total {
        for b in 0..=a.min(both) {
            if a - b > height {
                continue;
            }
            let (h, w, c) = (h0 >> a, w0 >> b, config.base_channels << a);
            for &op in &config.ops {
                let key = LatencyKey { op: op.token(), h, w, channels: c };
                table.insert(key, spatial_cost(op, h, w, c, seed));
            }
        }
    }
    let (h, w, c) = (config.target_h, config.target_w, config.base_channels << total);
    for choice in TransformerChoice::all() {
        table.insert(LatencyKey { op: seq_op(choice), h, w, channels: c }, sequential_cost(choice, w, c));
    }
    table
}
