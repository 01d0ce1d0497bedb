//! one-shot fixture writer (temporary)
use editlab_core::harness::fixtures::*;

fn main() {
    let model = default_model();
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    generate_counterfactual(&model, 42).unwrap().save(dir.join("toy-counterfactual.jsonl")).unwrap();
    generate_factual(&model, 42).unwrap().save(dir.join("toy-factual.jsonl")).unwrap();
    generate_inconsistency(&model, 42).unwrap().save(dir.join("toy-inconsistency.jsonl")).unwrap();
    println!("fixtures written to {}", dir.display());
}
