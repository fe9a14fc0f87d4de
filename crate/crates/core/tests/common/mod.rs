#![allow(dead_code)]

use latnas::space::{ConvChoice, SpaceConfig};

/// `4×2 → 1×1` over `m` layers: one `(2,2)` and one `(2,1)`.
pub fn small(m: usize, n: usize, ops: Vec<ConvChoice>) -> SpaceConfig {
    SpaceConfig {
        spatial_layers: m,
        sequential_layers: n,
        input_h: 4,
        input_w: 2,
        target_h: 1,
        target_w: 1,
        base_channels: 8,
        has_stem: false,
        ops,
    }
}

/// Three layers, six downsampling paths.
pub fn six_path() -> SpaceConfig {
    small(3, 0, ConvChoice::ALL.to_vec())
}

/// Six layers, two operators, one transformer layer: 30720 architectures.
pub fn toy() -> SpaceConfig {
    small(6, 1, vec![ConvChoice::K3E1, ConvChoice::K5E6])
}

/// Store trained on the toy space; it is the scorer of the search tests.
pub fn toy_store(seed: u64) -> latnas::supernet::SupernetStore {
    use latnas::evaluator::SyntheticBenchmark;
    use latnas::supernet::{train_progressive, Strategy, TrainSettings};
    use rand::SeedableRng;
    let settings = TrainSettings { strategy: Strategy::RandomPath, blocks: 3, iters: 2000, ..Default::default() };
    let bench = SyntheticBenchmark::new(seed);
    train_progressive(&toy(), settings, &bench, latnas::SeededRng::seed_from_u64(seed)).unwrap()
}

/// Best architecture of the store by exhaustive enumeration.
pub fn toy_optimum(store: &latnas::supernet::SupernetStore) -> (latnas::space::Architecture, f64) {
    latnas::space::enumerate(&toy(), 1 << 16)
        .unwrap()
        .map(|a| {
            let v = store.oneshot_eval(&a).unwrap();
            (a, v)
        })
        .fold(None, |best: Option<(latnas::space::Architecture, f64)>, (a, v)| match best {
            Some(b) if b.1 >= v => Some(b),
            _ => Some((a, v)),
        })
        .unwrap()
}
