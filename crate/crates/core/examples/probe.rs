//! Scratch probe of the default experiment (temporary).

use editlab_core::harness::fixtures::{
    default_model, generate_counterfactual, generate_factual, generate_inconsistency,
};
use editlab_core::harness::{
    csv_string, run_sweep, split_by_consistency, ContainmentJudge, ExperimentConfig,
};
use editlab_core::metrics::{s_accuracy, t_accuracy, LabeledQuery};

fn main() {
    let model = default_model();

    let dataset = generate_factual(&model, 42).expect("fixture");
    let config = ExperimentConfig::default();
    let result = run_sweep(&model, &config, &dataset).expect("sweep");
    println!("== factual sweep ==");
    print!("{}", csv_string(&result));

    // single-lambda 1e12 sweep on the counterfactual fixture
    let dataset = generate_counterfactual(&model, 42).expect("fixture");
    let mut config = ExperimentConfig::default();
    config.edit.lambda_grid = vec![1e12];
    let result = run_sweep(&model, &config, &dataset).expect("sweep");
    println!("== lambda=1e12 ==");
    print!("{}", csv_string(&result));

    // consistency split
    let fixture = generate_inconsistency(&model, 42).expect("fixture");
    let split = split_by_consistency(&model, &fixture.preservation, &ContainmentJudge::default())
        .expect("split");
    println!("== split: {} consistent / {} inconsistent ==", split.consistent.len(), split.inconsistent.len());
    let con_ok = split.consistent.iter().all(|r| r.id.starts_with("con-"));
    let inc_ok = split.inconsistent.iter().all(|r| r.id.starts_with("inc-"));
    println!("ids as constructed: {con_ok} {inc_ok}");
    let labeled: Vec<LabeledQuery> = split
        .inconsistent
        .iter()
        .map(|r| LabeledQuery {
            query: r.query.query.clone(),
            answer: r.gt_answer.clone().unwrap(),
        })
        .collect();
    println!(
        "inconsistent subset: s_acc={} t_acc={}",
        s_accuracy(&model, &labeled).unwrap(),
        t_accuracy(&model, &labeled).unwrap()
    );
}
