mod common;

use std::collections::HashMap;

use latnas::space::*;
use latnas::SeededRng;
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Small configs spanning stems, both stride kinds and operator subsets.
fn small_configs() -> Vec<SpaceConfig> {
    let mut out = Vec::new();
    for m in 1..=6 {
        for (ih, iw) in [(2u32, 2u32), (4, 2), (4, 4), (8, 2), (8, 4), (2, 1), (1, 1)] {
            for n in 0..=1 {
                for ops in [vec![ConvChoice::K3E1], vec![ConvChoice::K3E1, ConvChoice::K5E6]] {
                    let cfg = SpaceConfig {
                        spatial_layers: m,
                        sequential_layers: n,
                        input_h: ih,
                        input_w: iw,
                        target_h: 1,
                        target_w: 1,
                        base_channels: 4,
                        has_stem: false,
                        ops,
                    };
                    if cfg.check().is_ok() {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    let stem = SpaceConfig { spatial_layers: 4, sequential_layers: 0, input_h: 16, input_w: 4, has_stem: true, ..common::six_path() };
    out.push(stem);
    out
}

#[test]
fn counts_agree_with_enumeration() {
    let cap = 100_000u64;
    let mut checked = 0;
    for cfg in small_configs() {
        let card = space_cardinality(&cfg).unwrap();
        if card.total > BigUint::from(cap) {
            continue;
        }
        let dp = count_paths(&cfg).unwrap();
        assert_eq!(dp, count_paths_closed_form(&cfg).unwrap());
        assert_eq!(dp, BigUint::from(count_paths_backtracking(&cfg).unwrap()));
        let n = enumerate(&cfg, cap).unwrap().count() as u64;
        assert_eq!(BigUint::from(n), card.total, "{cfg:?}");
        checked += 1;
    }
    assert!(checked > 40);
}

#[test]
fn enumeration_is_exhaustive_and_valid() {
    let cfg = common::small(3, 1, vec![ConvChoice::K3E1, ConvChoice::K5E6]);
    let all: Vec<Architecture> = enumerate(&cfg, 1 << 20).unwrap().collect();
    let mut keys: Vec<String> = all.iter().map(Architecture::encode).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), all.len());
    assert!(all.iter().all(|a| validate(a, &cfg).is_ok()));
    assert!(matches!(enumerate(&SpaceConfig::default(), 1000), Err(SpaceError::TooLarge { .. })));
}

#[test]
fn stem_halves_both_factors() {
    let no_stem = SpaceConfig { input_h: 32, input_w: 128, target_h: 1, target_w: 32, ..SpaceConfig::default() };
    let (a, b) = no_stem.slot_counts().unwrap();
    assert_eq!((a, b), (2, 3));
    let stem = SpaceConfig { has_stem: true, ..no_stem };
    assert_eq!(stem.slot_counts().unwrap(), (1, 3));
}

fn chi_square_p(counts: &HashMap<Vec<Stride>, u64>, cells: usize, n: u64) -> f64 {
    let expected = n as f64 / cells as f64;
    let stat: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum::<f64>()
        + (cells - counts.len()) as f64 * expected;
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn path_sampler_passes_chi_square() {
    for m in [3, 5] {
        let cfg = common::small(m, 0, ConvChoice::ALL.to_vec());
        let paths = enumerate_paths(&cfg).unwrap();
        let mut rng = SeededRng::seed_from_u64(m as u64);
        let n = 100_000;
        let mut counts = HashMap::new();
        for _ in 0..n {
            *counts.entry(uniform_path_sample(&cfg, &mut rng).unwrap()).or_insert(0u64) += 1;
        }
        assert!(counts.keys().all(|p| paths.contains(p)));
        let p = chi_square_p(&counts, paths.len(), n);
        assert!(p > 0.01, "M={m}: p = {p}");
        if m == 3 {
            for c in counts.values() {
                assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.02);
            }
        }
    }
}

#[test]
fn default_samples_validate() {
    let cfg = SpaceConfig::default();
    let counter = PathCounter::for_config(&cfg).unwrap();
    let mut rng = SeededRng::seed_from_u64(11);
    for _ in 0..2000 {
        let a = uniform_architecture(&cfg, &counter, &mut rng).unwrap();
        assert!(validate(&a, &cfg).is_ok());
    }
}

fn arb_arch() -> impl Strategy<Value = (SpaceConfig, Architecture)> {
    (0usize..4, any::<u64>()).prop_map(|(which, seed)| {
        let cfg = match which {
            0 => SpaceConfig::default(),
            1 => SpaceConfig::handwriting(),
            2 => SpaceConfig::scene(),
            _ => common::toy(),
        };
        let counter = PathCounter::for_config(&cfg).unwrap();
        let arch = uniform_architecture(&cfg, &counter, &mut SeededRng::seed_from_u64(seed)).unwrap();
        (cfg, arch)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encoding_roundtrips((cfg, arch) in arb_arch()) {
        let s = arch.encode();
        prop_assert_eq!(Architecture::decode(&s, &cfg).unwrap(), arch);
    }
}

proptest! {
    #[test]
    fn geometry_shrinks_to_target((cfg, arch) in arb_arch()) {
        let geo = derive_geometry(&arch, &cfg).unwrap();
        for pair in geo.windows(2) {
            prop_assert!(pair[1].h <= pair[0].h && pair[1].w <= pair[0].w);
        }
        let last = geo[geo.len() - 1];
        prop_assert_eq!((last.h, last.w), (cfg.target_h, cfg.target_w));
        let (fh, _) = cfg.residual_factors().unwrap();
        prop_assert_eq!(last.channels, cfg.base_channels * fh);
    }

    #[test]
    fn identity_prefix_keeps_geometry(k in 0usize..20) {
        let cfg = SpaceConfig::default();
        let geo = walk_geometry(&cfg, &vec![Stride::Identity; k]);
        prop_assert!(geo.iter().all(|g| *g == geo[0]));
    }

    #[test]
    fn flipping_a_downsampling_layer_is_caught((cfg, arch) in arb_arch(), pick in any::<usize>()) {
        let downs: Vec<usize> = (0..arch.strides.len()).filter(|&l| arch.strides[l] != Stride::Identity).collect();
        let mut bad = arch.clone();
        bad.strides[downs[pick % downs.len()]] = Stride::Identity;
        prop_assert!(validate(&bad, &cfg).is_err());
    }

    #[test]
    fn garbage_never_panics(s in "\\PC{0,40}") {
        let _ = Architecture::parse(&s);
    }
}
