//! The searchable architecture space.
//!
//! A candidate is a spatial CNN of `M` inverted-bottleneck layers, each with a
//! stride and a convolution choice, followed by `N` transformer layers with
//! four binary design switches. Strides must multiply out to the fixed
//! downsampling factor between the input and target feature maps, which makes
//! the set of admissible stride sequences (downsampling paths) a constrained
//! lattice: a path is fully described by where its `(2,2)` and `(2,1)` layers
//! sit, so the count is multinomial and can be sampled exactly.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by space construction and queries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid architecture: {}", join_violations(.0))]
    InvalidArchitecture(Vec<Violation>),
    #[error("search space has {cardinality} architectures, above the cap of {cap}")]
    TooLarge { cardinality: BigUint, cap: u64 },
    #[error("path count overflows the exact sampler")]
    CountOverflow,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A per-layer stride `(s_h, s_w)`. `(1,2)` is deliberately not representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stride {
    /// `(2,2)`
    Both,
    /// `(2,1)`
    Height,
    /// `(1,1)`
    Identity,
}

impl Stride {
    /// Candidate strides in their canonical order.
    pub const ALL: [Stride; 3] = [Stride::Both, Stride::Height, Stride::Identity];

    pub fn sh(self) -> u32 {
        match self {
            Stride::Both | Stride::Height => 2,
            Stride::Identity => 1,
        }
    }

    pub fn sw(self) -> u32 {
        match self {
            Stride::Both => 2,
            Stride::Height | Stride::Identity => 1,
        }
    }

    pub fn from_pair(sh: u32, sw: u32) -> Option<Self> {
        match (sh, sw) {
            (2, 2) => Some(Stride::Both),
            (2, 1) => Some(Stride::Height),
            (1, 1) => Some(Stride::Identity),
            _ => None,
        }
    }

    /// `S<sh><sw>` token fragment.
    pub fn token(self) -> &'static str {
        match self {
            Stride::Both => "S22",
            Stride::Height => "S21",
            Stride::Identity => "S11",
        }
    }
}

/// MBConv kernel size and expansion factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ConvChoice {
    K3E1,
    K3E6,
    K5E1,
    K5E6,
}

impl ConvChoice {
    pub const ALL: [ConvChoice; 4] = [
        ConvChoice::K3E1,
        ConvChoice::K3E6,
        ConvChoice::K5E1,
        ConvChoice::K5E6,
    ];

    pub fn new(kernel: u32, expansion: u32) -> Option<Self> {
        match (kernel, expansion) {
            (3, 1) => Some(ConvChoice::K3E1),
            (3, 6) => Some(ConvChoice::K3E6),
            (5, 1) => Some(ConvChoice::K5E1),
            (5, 6) => Some(ConvChoice::K5E6),
            _ => None,
        }
    }

    pub fn kernel(self) -> u32 {
        match self {
            ConvChoice::K3E1 | ConvChoice::K3E6 => 3,
            ConvChoice::K5E1 | ConvChoice::K5E6 => 5,
        }
    }

    pub fn expansion(self) -> u32 {
        match self {
            ConvChoice::K3E1 | ConvChoice::K5E1 => 1,
            ConvChoice::K3E6 | ConvChoice::K5E6 => 6,
        }
    }

    /// `MB<k>E<e>`
    pub fn token(self) -> String {
        format!("MB{}E{}", self.kernel(), self.expansion())
    }
}

impl fmt::Display for ConvChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

impl From<ConvChoice> for String {
    fn from(c: ConvChoice) -> String {
        c.token()
    }
}

impl TryFrom<String> for ConvChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let b = s.as_bytes();
        if b.len() == 5 && &b[..2] == b"MB" && b[3] == b'E' {
            let k = (b[2] as char).to_digit(10);
            let e = (b[4] as char).to_digit(10);
            if let (Some(k), Some(e)) = (k, e) {
                if let Some(c) = ConvChoice::new(k, e) {
                    return Ok(c);
                }
            }
        }
        Err(format!("unknown operator `{s}`"))
    }
}

/// The four binary switches of one transformer layer. `true` selects the
/// alternative design, `false` the vanilla one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct TransformerChoice {
    pub residual_attention: bool,
    pub relative_embedding: bool,
    pub drop_scaling: bool,
    pub use_glu: bool,
}

impl TransformerChoice {
    pub const COUNT: usize = 16;

    /// Switches in token order: residual, relative embedding, drop scaling, GLU.
    pub fn bits(self) -> [bool; 4] {
        [
            self.residual_attention,
            self.relative_embedding,
            self.drop_scaling,
            self.use_glu,
        ]
    }

    pub fn from_bits(bits: [bool; 4]) -> Self {
        TransformerChoice {
            residual_attention: bits[0],
            relative_embedding: bits[1],
            drop_scaling: bits[2],
            use_glu: bits[3],
        }
    }

    /// Index in `0..16`, residual as the most significant bit.
    pub fn index(self) -> usize {
        self.bits()
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT);
        Self::from_bits([
            index & 8 != 0,
            index & 4 != 0,
            index & 2 != 0,
            index & 1 != 0,
        ])
    }

    pub fn token(self) -> String {
        self.bits()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    pub fn all() -> impl Iterator<Item = TransformerChoice> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

/// Definition of one search space.
///
/// JSON keys are `M, N, input_h, input_w, target_h, target_w, base_channels,
/// has_stem`, plus an optional `ops` list restricting the operator set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(rename = "M")]
    pub spatial_layers: usize,
    #[serde(rename = "N")]
    pub sequential_layers: usize,
    pub input_h: u32,
    pub input_w: u32,
    pub target_h: u32,
    pub target_w: u32,
    pub base_channels: u32,
    pub has_stem: bool,
    #[serde(default = "all_ops", skip_serializing_if = "is_all_ops")]
    pub ops: Vec<ConvChoice>,
}

fn all_ops() -> Vec<ConvChoice> {
    ConvChoice::ALL.to_vec()
}

fn is_all_ops(ops: &[ConvChoice]) -> bool {
    ops == ConvChoice::ALL
}

impl Default for SpaceConfig {
    /// 20 MBConv layers taking `32×128` to `1×32`, four transformer layers.
    fn default() -> Self {
        SpaceConfig {
            spatial_layers: 20,
            sequential_layers: 4,
            input_h: 32,
            input_w: 128,
            target_h: 1,
            target_w: 32,
            base_channels: 16,
            has_stem: false,
            ops: all_ops(),
        }
    }
}

impl SpaceConfig {
    /// Handwriting preset: `64×1200` image, stem to `32×600`, output `1×150`.
    pub fn handwriting() -> Self {
        SpaceConfig {
            input_h: 64,
            input_w: 1200,
            target_h: 1,
            target_w: 150,
            base_channels: 8,
            has_stem: true,
            ..Self::default()
        }
    }

    /// Scene-text preset: `64×256` image, stem to `32×128`, output `1×32`.
    pub fn scene() -> Self {
        SpaceConfig {
            input_h: 64,
            input_w: 256,
            target_h: 1,
            target_w: 32,
            base_channels: 16,
            has_stem: true,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let cfg: SpaceConfig =
            serde_json::from_str(text).map_err(|e| SpaceError::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Geometry entering the first searched layer (after the stem, if any).
    pub fn searched_input(&self) -> (u32, u32) {
        if self.has_stem {
            (self.input_h / 2, self.input_w / 2)
        } else {
            (self.input_h, self.input_w)
        }
    }

    /// Downsampling factors `(S^h, S^w)` the searched layers must realise.
    pub fn residual_factors(&self) -> Result<(u32, u32), SpaceError> {
        let bad = |m: &str| Err(SpaceError::InvalidConfig(m.to_string()));
        if self.target_h == 0 || self.target_w == 0 {
            return bad("target geometry must be positive");
        }
        if self.has_stem && (self.input_h % 2 != 0 || self.input_w % 2 != 0) {
            return bad("stem needs even input geometry");
        }
        let (h, w) = self.searched_input();
        if h % self.target_h != 0 || w % self.target_w != 0 {
            return bad("input geometry is not a multiple of the target");
        }
        let (fh, fw) = (h / self.target_h, w / self.target_w);
        if !fh.is_power_of_two() || !fw.is_power_of_two() {
            return bad("downsampling factors must be powers of two");
        }
        if fh < fw {
            return bad("width cannot be downsampled more than height");
        }
        Ok((fh, fw))
    }

    /// Number of `(2,2)` and `(2,1)` layers every valid path contains.
    pub fn slot_counts(&self) -> Result<(usize, usize), SpaceError> {
        let (fh, fw) = self.residual_factors()?;
        let both = fw.trailing_zeros() as usize;
        let height = (fh.trailing_zeros() - fw.trailing_zeros()) as usize;
        Ok((both, height))
    }

    /// Full validity check.
    pub fn check(&self) -> Result<(), SpaceError> {
        let (both, height) = self.slot_counts()?;
        if both + height > self.spatial_layers {
            return Err(SpaceError::InvalidConfig(format!(
                "{} layers cannot hold {} downsampling strides",
                self.spatial_layers,
                both + height
            )));
        }
        if self.ops.is_empty() {
            return Err(SpaceError::InvalidConfig("operator set is empty".into()));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if self.ops[..i].contains(op) {
                return Err(SpaceError::InvalidConfig(format!("duplicate operator {op}")));
            }
        }
        if self.base_channels == 0 {
            return Err(SpaceError::InvalidConfig("base_channels must be positive".into()));
        }
        Ok(())
    }
}

/// The multiset of non-identity strides any valid path must contain, `(2,2)`
/// entries first.
pub fn derive_slots(config: &SpaceConfig) -> Result<Vec<Stride>, SpaceError> {
    let (both, height) = config.slot_counts()?;
    let mut slots = vec![Stride::Both; both];
    slots.extend(std::iter::repeat_n(Stride::Height, height));
    Ok(slots)
}

/// Exact path counts for segments of a given length and stride mix.
///
/// `ways(r, a, b)` is the number of stride sequences of length `r` containing
/// exactly `a` `(2,2)` and `b` `(2,1)` entries, filled by the recurrence on the
/// first layer's stride.
#[derive(Debug, Clone)]
pub struct PathCounter {
    max_len: usize,
    max_both: usize,
    max_height: usize,
    table: Vec<u128>,
}

impl PathCounter {
    pub fn new(max_len: usize, max_both: usize, max_height: usize) -> Result<Self, SpaceError> {
        let mut pc = PathCounter {
            max_len,
            max_both,
            max_height,
            table: vec![0; (max_len + 1) * (max_both + 1) * (max_height + 1)],
        };
        for r in 0..=max_len {
            for a in 0..=max_both {
                for b in 0..=max_height {
                    let v = if r == 0 {
                        u128::from(a == 0 && b == 0)
                    } else {
                        let mut v = pc.get(r - 1, a, b);
                        if a > 0 {
                            v = v.checked_add(pc.get(r - 1, a - 1, b)).ok_or(SpaceError::CountOverflow)?;
                        }
                        if b > 0 {
                            v = v.checked_add(pc.get(r - 1, a, b - 1)).ok_or(SpaceError::CountOverflow)?;
                        }
                        v
                    };
                    let i = pc.idx(r, a, b);
                    pc.table[i] = v;
                }
            }
        }
        Ok(pc)
    }

    pub fn for_config(config: &SpaceConfig) -> Result<Self, SpaceError> {
        let (a, b) = config.slot_counts()?;
        Self::new(config.spatial_layers, a, b)
    }

    fn idx(&self, r: usize, a: usize, b: usize) -> usize {
        (r * (self.max_both + 1) + a) * (self.max_height + 1) + b
    }

    fn get(&self, r: usize, a: usize, b: usize) -> u128 {
        self.table[self.idx(r, a, b)]
    }

    /// Sequences of length `len` with exactly `both` `(2,2)` and `height` `(2,1)`.
    pub fn ways(&self, len: usize, both: usize, height: usize) -> u128 {
        if len > self.max_len || both > self.max_both || height > self.max_height {
            return 0;
        }
        self.get(len, both, height)
    }

    /// Draws one such sequence uniformly, choosing each layer's stride with
    /// probability proportional to the completions it leaves.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        len: usize,
        mut both: usize,
        mut height: usize,
        rng: &mut R,
    ) -> Vec<Stride> {
        assert!(self.ways(len, both, height) > 0, "no sequence with this stride mix");
        let mut out = Vec::with_capacity(len);
        for r in (1..=len).rev() {
            let total = self.get(r, both, height);
            let mut u = rng.random_range(0..total);
            let w_both = if both > 0 { self.get(r - 1, both - 1, height) } else { 0 };
            if u < w_both {
                out.push(Stride::Both);
                both -= 1;
                continue;
            }
            u -= w_both;
            let w_height = if height > 0 { self.get(r - 1, both, height - 1) } else { 0 };
            if u < w_height {
                out.push(Stride::Height);
                height -= 1;
            } else {
                out.push(Stride::Identity);
            }
        }
        out
    }
}

/// Number of downsampling paths, via the layer-by-layer DP.
pub fn count_paths(config: &SpaceConfig) -> Result<BigUint, SpaceError> {
    let (both, height) = config.slot_counts()?;
    let m = config.spatial_layers;
    // ways[a][b] over the current prefix length, in arbitrary precision
    let mut ways = vec![vec![BigUint::zero(); height + 1]; both + 1];
    ways[0][0] = BigUint::one();
    for _ in 0..m {
        let mut next = ways.clone();
        for a in 0..=both {
            for b in 0..=height {
                if a > 0 {
                    next[a][b] += &ways[a - 1][b];
                }
                if b > 0 {
                    next[a][b] += &ways[a][b - 1];
                }
            }
        }
        ways = next;
    }
    Ok(ways[both][height].clone())
}

/// `C(M, n22+n21) · C(n22+n21, n22)`.
pub fn count_paths_closed_form(config: &SpaceConfig) -> Result<BigUint, SpaceError> {
    let (both, height) = config.slot_counts()?;
    let m = config.spatial_layers;
    let n = both + height;
    if n > m {
        return Ok(BigUint::zero());
    }
    let binom = |n: usize, k: usize| num_integer::binomial(BigUint::from(n), BigUint::from(k));
    Ok(binom(m, n) * binom(n, both))
}

/// Recursive backtracking count over the stride mesh: from the input
/// geometry, try each stride per layer, prune when either side falls below the
/// target, and count the leaves that land exactly on the target.
pub fn count_paths_backtracking(config: &SpaceConfig) -> Result<u64, SpaceError> {
    config.residual_factors()?;
    fn visit(h: u32, w: u32, l: usize, layers: usize, target: (u32, u32), n: &mut u64) {
        if l == layers {
            if (h, w) == target {
                *n += 1;
            }
            return;
        }
        for s in Stride::ALL {
            let (h2, w2) = (h / s.sh(), w / s.sw());
            if h2 < target.0 || w2 < target.1 {
                continue;
            }
            visit(h2, w2, l + 1, layers, target, n);
        }
    }
    let (h, w) = config.searched_input();
    let mut n = 0;
    visit(h, w, 0, config.spatial_layers, (config.target_h, config.target_w), &mut n);
    Ok(n)
}

/// Exact sizes of the spatial, sequential and joint spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cardinality {
    pub paths: BigUint,
    pub spatial: BigUint,
    pub sequential: BigUint,
    pub total: BigUint,
}

pub fn space_cardinality(config: &SpaceConfig) -> Result<Cardinality, SpaceError> {
    let paths = count_paths(config)?;
    let spatial = &paths * BigUint::from(config.ops.len()).pow(config.spatial_layers as u32);
    let sequential = BigUint::from(TransformerChoice::COUNT).pow(config.sequential_layers as u32);
    let total = &spatial * &sequential;
    Ok(Cardinality {
        paths,
        spatial,
        sequential,
        total,
    })
}

/// Two-significant-digit scientific rendering, e.g. `1.7e17`.
pub fn approx_sci(n: &BigUint) -> String {
    let digits = n.to_str_radix(10);
    if digits.len() <= 2 {
        return digits;
    }
    let exp = digits.len() - 1;
    // round to two significant digits using the first three
    let lead: u32 = digits[..3].parse().expect("decimal digits");
    let mut two = (lead + 5) / 10;
    let mut exp = exp;
    if two >= 100 {
        two /= 10;
        exp += 1;
    }
    format!("{}.{}e{}", two / 10, two % 10, exp)
}

/// One constraint violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SpatialLength { expected: usize, got: usize },
    OpsLength { expected: usize, got: usize },
    SequentialLength { expected: usize, got: usize },
    HeightProduct { expected: u32, got: u64 },
    WidthProduct { expected: u32, got: u64 },
    OperatorNotInSet { layer: usize, op: ConvChoice },
    Config(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SpatialLength { expected, got } => {
                write!(f, "stride count {got}, expected {expected}")
            }
            Violation::OpsLength { expected, got } => {
                write!(f, "operator count {got}, expected {expected}")
            }
            Violation::SequentialLength { expected, got } => {
                write!(f, "transformer layer count {got}, expected {expected}")
            }
            Violation::HeightProduct { expected, got } => {
                write!(f, "h-product {got}, expected {expected}")
            }
            Violation::WidthProduct { expected, got } => {
                write!(f, "w-product {got}, expected {expected}")
            }
            Violation::OperatorNotInSet { layer, op } => {
                write!(f, "layer {layer}: operator {op} not in the candidate set")
            }
            Violation::Config(m) => write!(f, "config: {m}"),
        }
    }
}

/// A full candidate: strides `S`, convolutions `C`, transformer layers `R`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub strides: Vec<Stride>,
    pub ops: Vec<ConvChoice>,
    pub seq: Vec<TransformerChoice>,
}

/// Feature map geometry after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub h: u32,
    pub w: u32,
    pub channels: u32,
}

/// Checks lengths, operator membership and both stride products.
pub fn validate(arch: &Architecture, config: &SpaceConfig) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let m = config.spatial_layers;
    if arch.strides.len() != m {
        v.push(Violation::SpatialLength { expected: m, got: arch.strides.len() });
    }
    if arch.ops.len() != m {
        v.push(Violation::OpsLength { expected: m, got: arch.ops.len() });
    }
    if arch.seq.len() != config.sequential_layers {
        v.push(Violation::SequentialLength {
            expected: config.sequential_layers,
            got: arch.seq.len(),
        });
    }
    for (i, op) in arch.ops.iter().enumerate() {
        if !config.ops.contains(op) {
            v.push(Violation::OperatorNotInSet { layer: i + 1, op: *op });
        }
    }
    match config.residual_factors() {
        Ok((fh, fw)) => {
            let ph: u64 = arch.strides.iter().map(|s| u64::from(s.sh())).product();
            let pw: u64 = arch.strides.iter().map(|s| u64::from(s.sw())).product();
            if ph != u64::from(fh) {
                v.push(Violation::HeightProduct { expected: fh, got: ph });
            }
            if pw != u64::from(fw) {
                v.push(Violation::WidthProduct { expected: fw, got: pw });
            }
        }
        Err(e) => v.push(Violation::Config(e.to_string())),
    }
    if v.is_empty() { Ok(()) } else { Err(v) }
}

/// Geometry along any (possibly partial) stride sequence. Entry 0 is the map
/// entering the first searched layer; entry `l` follows layer `l`.
pub fn walk_geometry(config: &SpaceConfig, strides: &[Stride]) -> Vec<LayerGeometry> {
    let (h, w) = config.searched_input();
    let mut g = LayerGeometry { h, w, channels: config.base_channels };
    let mut out = Vec::with_capacity(strides.len() + 1);
    out.push(g);
    for s in strides {
        g.h /= s.sh();
        g.w /= s.sw();
        if s.sh() == 2 {
            g.channels *= 2;
        }
        out.push(g);
    }
    out
}

/// Per-layer geometry of a valid architecture (`M + 1` entries, see
/// [`walk_geometry`]).
pub fn derive_geometry(
    arch: &Architecture,
    config: &SpaceConfig,
) -> Result<Vec<LayerGeometry>, SpaceError> {
    validate(arch, config).map_err(SpaceError::InvalidArchitecture)?;
    Ok(walk_geometry(config, &arch.strides))
}

/// Position-tagged decoding failure.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl Architecture {
    /// Canonical form, e.g. `MB5E6S11-MB3E6S21|0110-1111`.
    pub fn encode(&self) -> String {
        let spatial: Vec<String> = self
            .ops
            .iter()
            .zip(&self.strides)
            .map(|(op, s)| format!("{}{}", op.token(), s.token()))
            .collect();
        let seq: Vec<String> = self.seq.iter().map(|t| t.token()).collect();
        format!("{}|{}", spatial.join("-"), seq.join("-"))
    }

    /// Parses the canonical form without checking it against a config.
    pub fn parse(s: &str) -> Result<Architecture, ParseError> {
        let err = |position: usize, message: String| ParseError { position, message };
        let bar = s
            .find('|')
            .ok_or_else(|| err(s.len(), "missing `|` separator".into()))?;
        let (spatial, seq) = (&s[..bar], &s[bar + 1..]);
        let mut arch = Architecture { strides: vec![], ops: vec![], seq: vec![] };
        let mut pos = 0;
        if !spatial.is_empty() {
            for tok in spatial.split('-') {
                let b = tok.as_bytes();
                if b.len() != 8 || b[5] != b'S' {
                    return Err(err(pos, format!("malformed spatial token `{tok}`")));
                }
                let op = ConvChoice::try_from(tok[..5].to_string()).map_err(|m| err(pos, m))?;
                let sh = (b[6] as char).to_digit(10);
                let sw = (b[7] as char).to_digit(10);
                let stride = match (sh, sw) {
                    (Some(h), Some(w)) => Stride::from_pair(h, w),
                    _ => None,
                }
                .ok_or_else(|| err(pos + 5, format!("invalid stride in `{tok}`")))?;
                arch.ops.push(op);
                arch.strides.push(stride);
                pos += tok.len() + 1;
            }
        }
        pos = bar + 1;
        if !seq.is_empty() {
            for tok in seq.split('-') {
                let mut bits = [false; 4];
                if tok.len() != 4 {
                    return Err(err(pos, format!("malformed transformer token `{tok}`")));
                }
                for (i, c) in tok.chars().enumerate() {
                    bits[i] = match c {
                        '0' => false,
                        '1' => true,
                        _ => return Err(err(pos + i, format!("bad bit `{c}`"))),
                    };
                }
                arch.seq.push(TransformerChoice::from_bits(bits));
                pos += tok.len() + 1;
            }
        }
        Ok(arch)
    }

    /// Parses and validates against `config`.
    pub fn decode(s: &str, config: &SpaceConfig) -> Result<Architecture, SpaceError> {
        let arch = Self::parse(s)?;
        validate(&arch, config).map_err(SpaceError::InvalidArchitecture)?;
        Ok(arch)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Uniform draw over all valid downsampling paths.
pub fn uniform_path_sample<R: Rng + ?Sized>(
    config: &SpaceConfig,
    rng: &mut R,
) -> Result<Vec<Stride>, SpaceError> {
    let counter = PathCounter::for_config(config)?;
    let (a, b) = config.slot_counts()?;
    Ok(counter.sample(config.spatial_layers, a, b, rng))
}

/// Uniform draw over whole architectures given a prepared path counter.
pub fn uniform_architecture<R: Rng + ?Sized>(
    config: &SpaceConfig,
    counter: &PathCounter,
    rng: &mut R,
) -> Result<Architecture, SpaceError> {
    let (a, b) = config.slot_counts()?;
    let strides = counter.sample(config.spatial_layers, a, b, rng);
    let ops = (0..config.spatial_layers)
        .map(|_| config.ops[rng.random_range(0..config.ops.len())])
        .collect();
    let seq = (0..config.sequential_layers)
        .map(|_| TransformerChoice::from_index(rng.random_range(0..TransformerChoice::COUNT)))
        .collect();
    Ok(Architecture { strides, ops, seq })
}

/// Every valid stride sequence, in lexicographic order of [`Stride::ALL`].
pub fn enumerate_paths(config: &SpaceConfig) -> Result<Vec<Vec<Stride>>, SpaceError> {
    let (both, height) = config.slot_counts()?;
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
    rec(config.spatial_layers, both, height, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Brute-force iterator over the whole space. Refuses when the cardinality
/// exceeds `cap`.
pub fn enumerate(config: &SpaceConfig, cap: u64) -> Result<ArchitectureIter, SpaceError> {
    config.check()?;
    let card = space_cardinality(config)?;
    if card.total > BigUint::from(cap) {
        return Err(SpaceError::TooLarge { cardinality: card.total, cap });
    }
    let paths = enumerate_paths(config)?;
    let ops_count = card.spatial.to_u64().expect("below cap") / paths.len().max(1) as u64;
    Ok(ArchitectureIter {
        config: config.clone(),
        paths,
        ops_count,
        seq_count: card.sequential.to_u64().expect("below cap"),
        next: 0,
    })
}

/// Iterator returned by [`enumerate`]; path-major order.
#[derive(Debug, Clone)]
pub struct ArchitectureIter {
    config: SpaceConfig,
    paths: Vec<Vec<Stride>>,
    ops_count: u64,
    seq_count: u64,
    next: u64,
}

impl Iterator for ArchitectureIter {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        let per_path = self.ops_count * self.seq_count;
        let total = per_path * self.paths.len() as u64;
        if self.next >= total {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let path = &self.paths[(i / per_path) as usize];
        let mut rest = i % per_path;
        let mut seq_idx = rest % self.seq_count;
        rest /= self.seq_count;
        let n_ops = self.config.ops.len() as u64;
        let mut ops = vec![self.config.ops[0]; self.config.spatial_layers];
        for slot in ops.iter_mut().rev() {
            *slot = self.config.ops[(rest % n_ops) as usize];
            rest /= n_ops;
        }
        let mut seq = vec![TransformerChoice::default(); self.config.sequential_layers];
        for slot in seq.iter_mut().rev() {
            *slot = TransformerChoice::from_index((seq_idx % 16) as usize);
            seq_idx /= 16;
        }
        Some(Architecture { strides: path.clone(), ops, seq })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let total = self.ops_count * self.seq_count * self.paths.len() as u64;
        let left = (total - self.next.min(total)) as usize;
        (left, Some(left))
    }
}

/// The architectures reported for the handwriting and scene-text searches,
/// used as fixtures.
pub mod reference {
    use super::*;

    fn build(spatial: &[(u32, u32, Stride)], seq: &[&str]) -> Architecture {
        Architecture {
            strides: spatial.iter().map(|t| t.2).collect(),
            ops: spatial
                .iter()
                .map(|&(k, e, _)| ConvChoice::new(k, e).expect("valid op"))
                .collect(),
            seq: seq
                .iter()
                .map(|t| {
                    let b: Vec<bool> = t.chars().map(|c| c == '1').collect();
                    TransformerChoice::from_bits([b[0], b[1], b[2], b[3]])
                })
                .collect(),
        }
    }

    /// Handwriting result; pair with [`SpaceConfig::handwriting`].
    pub fn handwriting() -> Architecture {
        use Stride::*;
        build(
            &[
                (5, 6, Identity),
                (5, 6, Identity),
                (5, 6, Height),
                (5, 6, Identity),
                (5, 6, Identity),
                (5, 6, Identity),
                (5, 6, Identity),
                (3, 1, Identity),
                (5, 6, Height),
                (5, 6, Identity),
                (5, 6, Identity),
                (5, 6, Identity),
                (5, 1, Height),
                (5, 1, Both),
                (5, 1, Identity),
                (5, 6, Identity),
                (5, 1, Identity),
                (5, 1, Identity),
                (5, 6, Both),
                (5, 6, Identity),
            ],
            &["0011", "1010", "0101", "1111"],
        )
    }

    /// Scene-text result; pair with [`SpaceConfig::scene`].
    pub fn scene() -> Architecture {
        use Stride::*;
        build(
            &[
                (5, 6, Identity),
                (3, 6, Height),
                (5, 6, Identity),
                (5, 6, Identity),
                (3, 6, Identity),
                (3, 1, Identity),
                (5, 6, Identity),
                (5, 1, Identity),
                (5, 1, Identity),
                (5, 6, Identity),
                (3, 6, Both),
                (3, 6, Identity),
                (3, 6, Height),
                (5, 6, Identity),
                (5, 6, Identity),
                (3, 6, Identity),
                (3, 6, Identity),
                (5, 6, Height),
                (5, 6, Both),
                (5, 6, Identity),
            ],
            &["0110", "0110", "1010", "1111"],
        )
    }
}
