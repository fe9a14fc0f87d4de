//! Browser demo: wasm-bindgen exports over [`latnas`].
//!
//! Every export takes a config (a preset name or config JSON) and returns a
//! JSON string. The same functions are available natively through [`demo`].

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Path and architecture counts for a config.
#[wasm_bindgen]
pub fn cardinality(config: &str) -> Result<String, JsError> {
    js(demo::cardinality(config))
}

/// One uniformly drawn architecture with its geometry and latency.
#[wasm_bindgen]
pub fn sample(config: &str, seed: u32) -> Result<String, JsError> {
    js(demo::sample(config, seed.into()))
}

/// Trains a supernet on the synthetic benchmark and runs natural-gradient,
/// evolutionary and random search under `r_max_ms`.
#[wasm_bindgen]
pub fn compare(config: &str, seed: u32, r_max_ms: f64, train_iters: u32, search_iters: u32) -> Result<String, JsError> {
    js(demo::compare(config, seed.into(), r_max_ms, train_iters.into(), search_iters as usize))
}
