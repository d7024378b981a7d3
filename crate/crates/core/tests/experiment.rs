use qfed::data::{Dataset, Label};
use qfed::experiment::{output_paths, results_csv, run_experiment, write_outputs, ExperimentKind, ExperimentSpec, Manifest};
use qfed::fed::FedConfig;
use qfed::model::{TrainConfig, Variant};
use qfed::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn blobs(n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.7).unwrap();
    let (inputs, labels) = (0..n)
        .map(|i| {
            let c = if i % 2 == 0 { -0.5 } else { 0.5 };
            (
                Tensor::from_vec(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]).unwrap(),
                Label::from_index(i % 2).unwrap(),
            )
        })
        .unzip();
    Dataset::new(inputs, labels).unwrap()
}

fn quick(kind: ExperimentKind, sweep: Vec<f64>) -> ExperimentSpec {
    ExperimentSpec {
        kind,
        variants: vec![Variant::Hybrid, Variant::Classical],
        sweep,
        test_size: 40,
        train: TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        },
        fed: FedConfig {
            n_rounds: 2,
            ..FedConfig::default()
        },
        deterministic: true,
        ..ExperimentSpec::default()
    }
}

#[test]
fn dataset_size_sweep_has_four_aggregates_per_variant() {
    let spec = quick(ExperimentKind::DatasetSizeSweep, vec![40.0, 60.0, 80.0, 100.0]);
    let t = run_experiment(&spec, &blobs(160)).unwrap();
    assert_eq!(t.aggregates.len(), 8);
    for v in [Variant::Hybrid, Variant::Classical] {
        assert_eq!(t.aggregates.iter().filter(|a| a.variant == v).count(), 4);
    }
}

#[test]
fn client_count_sweep_has_four_aggregates() {
    let mut spec = quick(ExperimentKind::ClientCountSweep, vec![4.0, 8.0, 16.0, 32.0]);
    spec.variants = vec![Variant::Classical];
    let t = run_experiment(&spec, &blobs(360)).unwrap();
    assert_eq!(t.aggregates.len(), 4);
    assert_eq!(t.rows.len(), 4);
}

#[test]
fn samples_per_client_and_gradcheck_rows() {
    let mut spec = quick(ExperimentKind::SamplesPerClientSweep, vec![10.0, 20.0]);
    spec.variants = vec![Variant::Classical];
    let t = run_experiment(&spec, &blobs(200)).unwrap();
    assert_eq!(t.rows.len(), 2);

    let mut spec = quick(ExperimentKind::Gradcheck, vec![1e-5]);
    spec.seeds = vec![0, 1];
    let t = run_experiment(&spec, &Dataset::default()).unwrap();
    assert_eq!(t.rows.len(), 4);
    assert!(t.rows.iter().all(|r| r.accuracy == 1.0 && r.loss < 1e-4));
}

#[test]
fn deterministic_rows_are_reproducible() {
    let mut spec = quick(ExperimentKind::LambdaSweep, vec![1.0, 4.0]);
    spec.folds = 2;
    spec.seeds = vec![3, 4];
    let data = blobs(40);
    let a = run_experiment(&spec, &data).unwrap();
    let b = run_experiment(&spec, &data).unwrap();
    assert_eq!(a.rows.len(), 2 * 2 * 2 * 2);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!((x.accuracy, x.fn_rate, x.loss.to_bits()), (y.accuracy, y.fn_rate, y.loss.to_bits()));
    }
}

#[test]
fn outputs_are_written_together() {
    let spec = quick(ExperimentKind::SingleTrain, vec![2.0]);
    let data = blobs(80);
    let t = run_experiment(&spec, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sub/run.csv");
    let manifest = Manifest {
        experiment: spec,
        data_source: "blobs".into(),
        n_samples: data.len(),
        version: "test".into(),
        rows: t.rows.len() + t.aggregates.len(),
    };
    write_outputs(&out, &t, &manifest).unwrap();
    let (csv, summary, json) = output_paths(&out);
    assert_eq!(std::fs::read(&csv).unwrap(), results_csv(&t).unwrap());
    assert!(std::fs::read_to_string(summary).unwrap().starts_with("experiment,variant,sweep_value,n,"));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(m["experiment"]["kind"], "single-train");
    let names: Vec<_> = std::fs::read_dir(dir.path().join("sub")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "no temporary files left behind: {names:?}");
}

#[test]
fn empty_sweep_or_seeds_rejected() {
    let mut spec = quick(ExperimentKind::LambdaSweep, vec![]);
    assert!(run_experiment(&spec, &blobs(20)).is_err());
    spec.sweep = vec![1.0];
    spec.seeds.clear();
    assert!(run_experiment(&spec, &blobs(20)).is_err());
}
