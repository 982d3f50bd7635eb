//! WebAssembly bindings for the browser demo in `www/`.

mod demo;

pub use demo::{Comparison, Demo, HaystackView, MemberRow, RankRow, SampleInfo};

use std::sync::OnceLock;

use wasm_bindgen::prelude::*;

fn demo() -> Result<&'static Demo, JsError> {
    static DEMO: OnceLock<Demo> = OnceLock::new();
    if let Some(d) = DEMO.get() {
        return Ok(d);
    }
    let d = Demo::new().map_err(|e| JsError::new(&e.to_string()))?;
    Ok(DEMO.get_or_init(|| d))
}

fn to_json<T: serde::Serialize>(value: haykit::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON list of the built-in questions.
#[wasm_bindgen]
pub fn samples() -> Result<String, JsError> {
    to_json(Ok(demo()?.samples()))
}

/// JSON `{question, bm25: [...], reranked: [...]}`.
#[wasm_bindgen]
pub fn compare_rankings(sample: usize, seeds: usize, damping: f64, top: usize) -> Result<String, JsError> {
    to_json(demo()?.compare(sample, seeds, damping, top))
}

/// JSON `{budget, total_tokens, members: [...]}`. A negative seed keeps
/// retriever order.
#[wasm_bindgen]
pub fn build_haystack(sample: usize, ppr: bool, budget: usize, seed: f64) -> Result<String, JsError> {
    let seed = (seed >= 0.0).then_some(seed as u64);
    to_json(demo()?.haystack(sample, ppr, budget, seed))
}
