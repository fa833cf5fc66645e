//! The config-driven path: describe an experiment declaratively, run it
//! end to end, and post-process the line-delimited record it writes.

use fedsim::runner::{self, export_csv, parse_record, ExportKind};

static CONFIG: &str = r#"
seed = 12
algorithm = "fedavg"

[dataset.synthetic]
num_tasks = 60
cluster_probs = [1.0]
latent_dim = 3
feature_dim = 20
num_classes = 4

[preprocess]
min_samples = 8
split = [0.6, 0.2, 0.2]

[model]
kind = "linear"

[fed]
rounds = 25
clients_per_round = 8
client_lr = 0.1
batch_size = 5
eval_every = 5
"#;

fn main() -> fedsim::Result<()> {
    let cfg: runner::ExperimentConfig = toml::from_str(CONFIG).expect("config parses");
    let violations = runner::validate_config(&cfg);
    assert!(violations.is_empty(), "invalid config: {violations:?}");

    let dir = std::env::temp_dir();
    let record = dir.join("fedsim_demo.jsonl");
    runner::run_experiment(&cfg, &record, None)?;

    let rec = parse_record(&record)?;
    println!(
        "record: {} rounds, {} device entries",
        rec.rounds.len(),
        rec.devices.len()
    );
    for r in rec.rounds.iter().filter(|r| r.eval.is_some()) {
        println!(
            "  round {:2}: train loss {:.4} ({} devices evaluated)",
            r.round,
            r.train_loss.unwrap_or(f64::INFINITY),
            r.eval.as_ref().unwrap().len()
        );
    }
    let s = rec.summary.expect("summary line");
    println!("final mean accuracy {:.1}% over {} devices", 100.0 * s.mean, s.n_devices);

    // the same record flattens into CSV tables for plotting
    let csv = dir.join("fedsim_demo_rounds.csv");
    export_csv(&record, ExportKind::Rounds, &csv)?;
    println!("wrote {}", csv.display());
    Ok(())
}
