use aoisnn::checkpoint::{Checkpoint, CheckpointMeta};
use aoisnn::data::{write_synth_dataset, DatasetManifest, Split, SynthConfig, MANIFEST_FILE};
use aoisnn::ensemble::{uncertainty_curve, Ensemble};
use aoisnn::inference::{anytime_curve, threshold_grid, threshold_sweep, trace_dataset, ScoreMode};
use aoisnn::snn::{Network, NetworkSpec};
use aoisnn::train::{train, TrainConfig};

/// Synthesis, training and evaluation from files, returning every report.
fn run(dir: &std::path::Path) -> (Vec<u8>, String, String, String) {
    let synth =
        SynthConfig { classes: 2, train_per_class: 10, test_per_class: 6, seed: 4, ..Default::default() };
    write_synth_dataset(&synth, dir, true).unwrap();
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    let train_set = manifest.load_split(Split::Train, false).unwrap();
    let test_set = manifest.load_split(Split::Test, false).unwrap();
    let net = Network::new(NetworkSpec::toy(manifest.classes)).unwrap();

    let mut members = Vec::new();
    let mut first_bytes = Vec::new();
    let mut metrics = String::new();
    for seed in 0..2 {
        let cfg = TrainConfig { epochs: 2, batch_size: 5, alpha: 0.5, seed, ..Default::default() };
        let outcome = train(&net, &cfg, &train_set, &test_set).unwrap();
        let meta = CheckpointMeta { config_hash: cfg.to_toml(), epoch: cfg.epochs, seed };
        let ckpt = Checkpoint::new(net.spec.clone(), &outcome.params, meta).unwrap();
        if seed == 0 {
            first_bytes = ckpt.to_bytes();
            metrics = outcome.metrics.to_csv();
        }
        members.push(ckpt.params);
    }

    let traces = trace_dataset(&net, &members[0], &test_set, 10, ScoreMode::Instantaneous).unwrap();
    let sweep = threshold_sweep(&traces, &threshold_grid(0.8, 1.0, 20)).unwrap();
    let curve = anytime_curve(&net, &members[0], &test_set, 10).unwrap();
    assert_eq!(sweep.rows.len(), 20);
    assert!(sweep.rows.windows(2).all(|w| w[0].avg_timestep <= w[1].avg_timestep));
    let no_cutoff = threshold_sweep(&traces, &[f64::INFINITY]).unwrap();
    assert_eq!(no_cutoff.rows[0].accuracy, curve[9]);

    let ensemble = Ensemble::new(net, members).unwrap();
    let unc = uncertainty_curve(&ensemble, &test_set, 10, true).unwrap();
    assert!(unc.sigma2.iter().all(|s| *s >= 0.0));
    (first_bytes, metrics.lines().count().to_string(), sweep.to_csv(), unc.to_csv())
}

#[test]
fn end_to_end_is_a_pure_function_of_configs_and_seeds() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run(a.path());
    let second = run(b.path());
    assert_eq!(first, second);
    // header plus one row per epoch
    assert_eq!(first.1, "3");
}
