//! Shared fixtures for unit tests.

use crate::model::{ModelConfig, ToyTransformer, Vocab};

pub fn tiny_vocab() -> Vocab {
    Vocab::new(
        [
            "<bos>", "<unk>", "<eos>", "alice", "bob", " works at", " lives in", "acme", " corp",
            " labs", "globex", "carol",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    )
    .unwrap()
}

pub fn tiny_model(seed: u64) -> ToyTransformer {
    tiny_model_with(ModelConfig { d_model: 16, n_layers: 2, n_heads: 2, max_seq: 12, seed })
}

pub fn tiny_model_with(config: ModelConfig) -> ToyTransformer {
    ToyTransformer::new(config, tiny_vocab()).unwrap()
}
