mod config;

use std::net::ToSocketAddrs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qfed::checkpoint::{load_model, save_model};
use qfed::data::{load_dataset_dir, load_feature_csv, save_dataset_dir, Dataset, Label};
use qfed::experiment::{output_paths, run_experiment, write_outputs, ExperimentKind, Manifest, GRADCHECK_TOLERANCE};
use qfed::fed::{accept_clients, make_clients, partition, run_rounds, run_tcp_client, Server, TransportKind};
use qfed::gradcheck::gradcheck_micro;
use qfed::model::{count_parameters, evaluate_with_loss, train, Model, ModelSpec, Variant};
use qfed::synth::{gen_dataset, stratified_holdout, to_dataset, to_index};
use qfed::Tensor;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "qfed", version, about = "Hybrid quantum-classical steatosis classifier with federated training")]
struct Cli {
    /// Master seed for data, initialisation, shuffling and partitioning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run sweep jobs one at a time so every row is bitwise reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output path (directory, checkpoint or results CSV depending on the command).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic steatosis image set.
    GenData {
        #[arg(long)]
        per_grade: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Centralized training on a holdout split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Federated training.
    Fed {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        local_epochs: Option<usize>,
        #[arg(long)]
        samples_per_client: Option<usize>,
        #[arg(long, value_parser = parse_transport)]
        transport: Option<TransportKind>,
        /// `sim` runs server and clients in this process.
        #[arg(long, default_value = "sim", value_parser = ["sim", "server", "client"])]
        role: String,
        #[arg(long)]
        addr: Option<String>,
        /// Which shard to serve with `--role client`.
        #[arg(long)]
        client_id: Option<u32>,
    },
    /// Evaluate a checkpoint on the holdout split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Finite-difference check of the analytic gradients of a small model.
    Gradcheck {
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Show the client shards of a federated split.
    Partition {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        samples_per_client: Option<usize>,
    },
    /// Run a sweep and write results CSV, summary and manifest.
    Experiment {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ExperimentKind>,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        rounds: Option<usize>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory from `gen-data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Feature CSV: one row per sample, last column is the 0/1 label.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Images per grade when generating data in-line.
    #[arg(long)]
    per_grade: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss weight of the non-transplantable class.
    #[arg(long)]
    lambda: Option<f64>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: qfed::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: qfed::Error| e.to_string())
}

fn parse_transport(s: &str) -> Result<TransportKind, String> {
    match s {
        "in-process" => Ok(TransportKind::InProcess),
        "tcp" => Ok(TransportKind::Tcp),
        other => Err(format!("unknown transport {other:?} (in-process, tcp)")),
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if let Some(p) = &self.features {
            cfg.features = Some(p.clone());
        }
        if let Some(n) = self.per_grade {
            cfg.synth.per_grade = n;
        }
        if let Some(n) = self.image_size {
            cfg.synth.height = n;
            cfg.synth.width = n;
        }
        if let Some(n) = self.test_size {
            cfg.test_size = n;
        }
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(n) = self.epochs {
            cfg.train.epochs = n;
        }
        if let Some(n) = self.batch_size {
            cfg.train.batch_size = n;
        }
        if let Some(lr) = self.lr {
            cfg.train.adam.lr = lr;
        }
        if let Some(l) = self.lambda {
            cfg.train.lambda = l;
        }
    }
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<(Dataset, String)> {
    if let Some(p) = &cfg.features {
        let d = load_feature_csv(p).with_context(|| format!("loading features {}", p.display()))?;
        return Ok((d, p.display().to_string()));
    }
    if let Some(p) = &cfg.data {
        let (_, d) = load_dataset_dir(p).with_context(|| format!("loading dataset {}", p.display()))?;
        return Ok((d, p.display().to_string()));
    }
    let samples = gen_dataset(&cfg.synth)?;
    let source = format!(
        "synthetic {}x{} per_grade={} seed={}",
        cfg.synth.height, cfg.synth.width, cfg.synth.per_grade, cfg.synth.seed
    );
    Ok((to_dataset(&samples), source))
}

fn holdout(cfg: &RunConfig, data: &Dataset) -> anyhow::Result<(Dataset, Dataset)> {
    let f = stratified_holdout(&data.labels, cfg.test_size, cfg.seed)?;
    Ok((data.subset(&f.train), data.subset(&f.test)))
}

fn model_spec(cfg: &RunConfig, data: &Dataset) -> anyhow::Result<ModelSpec> {
    let shape = data.input_shape().ok_or_else(|| anyhow!("dataset is empty"))?;
    Ok(ModelSpec::for_input(cfg.variant, shape)?)
}

#[derive(Serialize)]
struct RunSummary {
    variant: Variant,
    params: usize,
    accuracy: f64,
    fn_rate: f64,
    loss: f64,
    confusion: [[u64; 2]; 2],
    seconds: f64,
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= cli.deterministic;
    cfg.synth.seed = cfg.seed;
    cfg.fed.seed = cfg.seed;
    let start = Instant::now();

    match cli.command {
        Command::GenData { per_grade, image_size } => {
            if let Some(n) = per_grade {
                cfg.synth.per_grade = n;
            }
            if let Some(n) = image_size {
                cfg.synth.height = n;
                cfg.synth.width = n;
            }
            let out = cli.out.ok_or_else(|| anyhow!("gen-data needs --out <dir>"))?;
            let samples = gen_dataset(&cfg.synth)?;
            let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
            save_dataset_dir(&out, &to_index(&cfg.synth, &samples), &images)?;
            println!("wrote {} images to {}", samples.len(), out.display());
        }
        Command::Train { data, train: targs } => {
            data.apply(&mut cfg);
            targs.apply(&mut cfg);
            let (all, _) = load_data(&cfg)?;
            let (train_set, test_set) = holdout(&cfg, &all)?;
            let mut model = Model::new(model_spec(&cfg, &all)?, cfg.seed)?;
            let history = train(&mut model, &train_set, Some(&test_set), &cfg.train, cfg.seed)?;
            for r in &history {
                let t = r.test.expect("test set given");
                log::info!(
                    "epoch {:>3} train loss {:.4} test acc {:.4} fn {:.4}",
                    r.epoch + 1,
                    r.train.mean_loss,
                    t.metrics.accuracy,
                    t.metrics.fn_rate
                );
            }
            let e = evaluate_with_loss(&model, &test_set, &cfg.train.loss_config()?)?;
            if let Some(out) = &cli.out {
                save_model(&model, out)?;
            }
            print_json(&RunSummary {
                variant: cfg.variant,
                params: count_parameters(&model),
                accuracy: e.metrics.accuracy,
                fn_rate: e.metrics.fn_rate,
                loss: e.mean_loss,
                confusion: e.metrics.confusion,
                seconds: start.elapsed().as_secs_f64(),
            })?;
        }
        Command::Fed {
            data,
            train: targs,
            clients,
            rounds,
            local_epochs,
            samples_per_client,
            transport,
            role,
            addr,
            client_id,
        } => {
            data.apply(&mut cfg);
            targs.apply(&mut cfg);
            if let Some(n) = clients {
                cfg.fed.n_clients = n;
            }
            if let Some(n) = rounds {
                cfg.fed.n_rounds = n;
            }
            if let Some(n) = local_epochs {
                cfg.fed.local_epochs = n;
            }
            if samples_per_client.is_some() {
                cfg.fed.samples_per_client = samples_per_client;
            }
            if let Some(t) = transport {
                cfg.fed.transport = t;
            }
            if let Some(a) = addr {
                cfg.fed.addr = a;
            }
            cfg.fed.validate()?;
            let (all, _) = load_data(&cfg)?;
            let (train_set, test_set) = holdout(&cfg, &all)?;
            let spec = model_spec(&cfg, &all)?;
            let model = match role.as_str() {
                "client" => {
                    let id = client_id.ok_or_else(|| anyhow!("--role client needs --client-id"))?;
                    let client = make_clients(&cfg.fed, &cfg.train, &spec, &train_set)?
                        .into_iter()
                        .find(|c| c.client_id == id)
                        .ok_or_else(|| anyhow!("no client {id} among {} clients", cfg.fed.n_clients))?;
                    let addr = cfg
                        .fed
                        .addr
                        .to_socket_addrs()?
                        .next()
                        .ok_or_else(|| anyhow!("cannot resolve {}", cfg.fed.addr))?;
                    run_tcp_client(addr, client, cfg.fed.max_frame)?;
                    println!("client {id} done");
                    return Ok(ExitCode::SUCCESS);
                }
                "server" => {
                    let listener = std::net::TcpListener::bind(&cfg.fed.addr)?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    let links = accept_clients(&listener, cfg.fed.n_clients, cfg.fed.max_frame)?;
                    let server = Server {
                        model: Model::new(spec.clone(), cfg.seed)?,
                        test: test_set.clone(),
                        loss_config: cfg.train.loss_config()?,
                        n_rounds: cfg.fed.n_rounds,
                    };
                    let history = server.run(links)?;
                    finish_fed(&spec, &history)?
                }
                _ => {
                    let history = run_rounds(&cfg.fed, &cfg.train, &spec, &train_set, &test_set)?;
                    finish_fed(&spec, &history)?
                }
            };
            let e = evaluate_with_loss(&model, &test_set, &cfg.train.loss_config()?)?;
            if let Some(out) = &cli.out {
                save_model(&model, out)?;
            }
            print_json(&RunSummary {
                variant: cfg.variant,
                params: count_parameters(&model),
                accuracy: e.metrics.accuracy,
                fn_rate: e.metrics.fn_rate,
                loss: e.mean_loss,
                confusion: e.metrics.confusion,
                seconds: start.elapsed().as_secs_f64(),
            })?;
        }
        Command::Eval {
            checkpoint,
            data,
            lambda,
        } => {
            data.apply(&mut cfg);
            if let Some(l) = lambda {
                cfg.train.lambda = l;
            }
            let model = load_model(&checkpoint)?;
            let (all, _) = load_data(&cfg)?;
            let (_, test_set) = holdout(&cfg, &all)?;
            let e = evaluate_with_loss(&model, &test_set, &cfg.train.loss_config()?)?;
            print_json(&RunSummary {
                variant: model.spec().variant,
                params: count_parameters(&model),
                accuracy: e.metrics.accuracy,
                fn_rate: e.metrics.fn_rate,
                loss: e.mean_loss,
                confusion: e.metrics.confusion,
                seconds: start.elapsed().as_secs_f64(),
            })?;
        }
        Command::Gradcheck { variant, step } => {
            let report = gradcheck_micro(variant.unwrap_or(cfg.variant), cfg.seed, step)?;
            let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
            println!(
                "max relative gradient error {:.3e} over {} parameters ({})",
                report.max_rel_error,
                report.n_params,
                if pass { "pass" } else { "FAIL" }
            );
            if !pass {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Partition {
            data,
            clients,
            samples_per_client,
        } => {
            data.apply(&mut cfg);
            if let Some(n) = clients {
                cfg.fed.n_clients = n;
            }
            if samples_per_client.is_some() {
                cfg.fed.samples_per_client = samples_per_client;
            }
            let (all, _) = load_data(&cfg)?;
            let (train_set, _) = holdout(&cfg, &all)?;
            let shards = partition(
                &train_set.labels,
                cfg.fed.n_clients,
                cfg.fed.samples_per_client,
                cfg.seed,
            )?;
            for s in &shards {
                let n1 = s
                    .indices
                    .iter()
                    .filter(|&&i| train_set.labels[i] == Label::NonTransplantable)
                    .count();
                println!("client {:>3}: {} samples ({} / {})", s.client_id, s.indices.len(), s.indices.len() - n1, n1);
            }
            if let Some(out) = &cli.out {
                qfed::data::write_atomic(out, &serde_json::to_vec_pretty(&shards)?)?;
            }
        }
        Command::Experiment {
            kind,
            variants,
            sweep,
            seeds,
            folds,
            workers,
            data,
            train: targs,
            rounds,
        } => {
            data.apply(&mut cfg);
            targs.apply(&mut cfg);
            let mut spec = cfg.experiment.clone();
            if let Some(k) = kind {
                if k != spec.kind && sweep.is_none() {
                    spec.sweep = k.default_sweep();
                }
                spec.kind = k;
            }
            if let Some(v) = variants {
                spec.variants = v;
            } else if targs.variant.is_some() {
                spec.variants = vec![cfg.variant];
            }
            if let Some(s) = sweep {
                spec.sweep = s;
            }
            match seeds {
                Some(s) => spec.seeds = s,
                None if cli.seed.is_some() => spec.seeds = vec![cfg.seed],
                None => {}
            }
            if let Some(f) = folds {
                spec.folds = f;
            }
            if workers.is_some() {
                spec.workers = workers;
            }
            if let Some(r) = rounds {
                cfg.fed.n_rounds = r;
            }
            spec.deterministic |= cfg.deterministic;
            spec.test_size = cfg.test_size;
            spec.train = cfg.train.clone();
            spec.fed = cfg.fed.clone();
            spec.synth = cfg.synth.clone();
            spec.validate()?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("results.csv"));
            let (all, source) = if spec.kind == ExperimentKind::Gradcheck {
                (Dataset::default(), "none".to_string())
            } else {
                load_data(&cfg)?
            };
            let table = run_experiment(&spec, &all)?;
            let manifest = Manifest {
                experiment: spec,
                data_source: source,
                n_samples: all.len(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                rows: table.rows.len() + table.aggregates.len(),
            };
            write_outputs(&out, &table, &manifest)?;
            for a in &table.aggregates {
                println!(
                    "{} {} {}: accuracy {:.4} ± {:.4}, fn {:.4} ± {:.4}",
                    a.experiment, a.variant, a.sweep_value, a.accuracy_mean, a.accuracy_std, a.fn_rate_mean, a.fn_rate_std
                );
            }
            let (_, summary, manifest) = output_paths(&out);
            println!("wrote {}, {}, {}", out.display(), summary.display(), manifest.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn finish_fed(spec: &ModelSpec, history: &qfed::fed::FedHistory) -> anyhow::Result<Model> {
    for r in &history.rounds {
        log::info!(
            "round {:>3} acc {:.4} fn {:.4} loss {:.4}",
            r.round + 1,
            r.global.metrics.accuracy,
            r.global.metrics.fn_rate,
            r.global.mean_loss
        );
    }
    let mut model = Model::new(spec.clone(), 0)?;
    model.set_params_flat(&history.final_params)?;
    Ok(model)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
