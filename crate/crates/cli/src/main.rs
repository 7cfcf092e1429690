use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use scoreopt_core::model_io::data_fingerprint;
use scoreopt_core::score::{LrSchedule, SigmaLaw};
use scoreopt_core::{
    bench_inference, emit_bench, emit_results, gen_dataset, read_dataset, save_model, sweep, train_classifier,
    train_dsm, write_dataset, ClassifierArch, DatasetKind, DsmTrainConfig, Error, Experiment, ExperimentSpec,
    MlpScoreNet, ModelFile, ResultFormat, RngStream, SigmaFeatures, StoredModel, SweepAxis, TrainingRecord,
};

/// Adversarial purification with score-based priors on synthetic data.
#[derive(Parser)]
#[command(name = "scoreopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled dataset as CSV (x1..xd,label).
    GenData(GenData),
    /// Train a score network by denoising score matching.
    TrainScore(TrainScore),
    /// Train a classifier.
    TrainClf(TrainClf),
    /// Run one experiment spec and write its result record.
    Evaluate(Evaluate),
    /// Run an experiment spec once per value of one purifier setting.
    Sweep(Sweep),
    /// Time ScoreOpt-N against the multi-step baseline.
    Bench(Bench),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    GmmClasses,
    TwoMoons,
    Rings,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    modes: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Distance between adjacent modes, in units of --std.
    #[arg(long, default_value_t = 12.0)]
    separation: f64,
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 0.2)]
    std: f64,
    /// Noise for two-moons and rings.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Also write the generating mixture as a score model (gmm-classes only).
    #[arg(long)]
    prior_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainScore {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    sigma_min: f64,
    #[arg(long, default_value_t = 2.0)]
    sigma_max: f64,
    #[arg(long, default_value_t = 20_000)]
    iters: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden widths, comma separated.
    #[arg(long, default_value = "64,64", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = Schedule::Cosine)]
    schedule: Schedule,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Constant,
    Cosine,
}

#[derive(Args)]
struct TrainClf {
    #[arg(long)]
    data: PathBuf,
    /// linear, mlp, or mlp:<hidden>
    #[arg(long, default_value = "mlp:64")]
    arch: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Output {
    #[arg(long)]
    out: PathBuf,
    /// csv or json; defaults to the extension of --out.
    #[arg(long)]
    format: Option<String>,
}

impl Output {
    fn format(&self) -> Result<ResultFormat, Error> {
        match &self.format {
            Some(f) => f.parse(),
            None => Ok(ResultFormat::from_path(&self.out)),
        }
    }
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    spec: PathBuf,
    /// steps, inner-steps, lambda, lambda-reg, noise, lr
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Bench {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    steps: Vec<usize>,
    #[command(flatten)]
    output: Output,
}

fn gen_data(a: GenData) -> Result<(), Error> {
    let kind = match a.kind {
        Kind::GmmClasses => DatasetKind::GmmClasses {
            modes: a.modes,
            classes: a.classes,
            separation: a.separation,
            dim: a.dim,
            std: a.std,
        },
        Kind::TwoMoons => DatasetKind::TwoMoons { noise: a.noise },
        Kind::Rings => DatasetKind::Rings {
            classes: a.classes,
            noise: a.noise,
        },
    };
    let set = gen_dataset(&kind, a.n, a.seed)?;
    write_dataset(&a.out, &set)?;
    tracing::info!(n = set.len(), dim = set.dim(), out = %a.out.display(), "dataset written");
    if let Some(path) = a.prior_out {
        let prior = kind
            .analytic_prior()?
            .ok_or_else(|| Error::Config("--prior-out needs --kind gmm-classes".into()))?;
        save_model(
            &path,
            &ModelFile::new(StoredModel::Gmm(prior), Some(TrainingRecord::Analytic { dataset: kind })),
        )?;
        tracing::info!(out = %path.display(), "analytic prior written");
    }
    Ok(())
}

fn train_score(a: TrainScore) -> Result<(), Error> {
    let data = read_dataset(&a.data)?;
    let cfg = DsmTrainConfig {
        sigma_min: a.sigma_min,
        sigma_max: a.sigma_max,
        iterations: a.iters,
        lr: a.lr,
        seed: a.seed,
        batch_size: a.batch,
        lr_schedule: match a.schedule {
            Schedule::Constant => LrSchedule::Constant,
            Schedule::Cosine => LrSchedule::Cosine,
        },
        sigma_law: SigmaLaw::LogUniform,
        ..DsmTrainConfig::default()
    };
    cfg.validate()?;
    let net = MlpScoreNet::new(data.dim(), &a.hidden, SigmaFeatures::default(), &mut RngStream::new(a.seed, 0x5c0e))?;
    let net = train_dsm(net, &data.points, &cfg)?;
    let record = TrainingRecord::Dsm {
        config: cfg,
        hidden: a.hidden,
        data_fingerprint: data_fingerprint(&data),
    };
    save_model(&a.out, &ModelFile::new(StoredModel::MlpScore(net), Some(record)))?;
    tracing::info!(out = %a.out.display(), "score model written");
    Ok(())
}

fn train_clf(a: TrainClf) -> Result<(), Error> {
    let data = read_dataset(&a.data)?;
    let arch = ClassifierArch::from_str(&a.arch)?;
    let clf = train_classifier(arch, &data, a.epochs, a.lr, a.seed)?;
    tracing::info!(accuracy = clf.accuracy(&data), "training accuracy");
    let record = TrainingRecord::Classifier {
        arch,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        data_fingerprint: data_fingerprint(&data),
    };
    save_model(&a.out, &ModelFile::new(StoredModel::Classifier(clf), Some(record)))?;
    tracing::info!(out = %a.out.display(), "classifier written");
    Ok(())
}

fn load_experiment(spec: &Path) -> Result<Experiment<scoreopt_core::AnyScoreModel>, Error> {
    Experiment::load(&ExperimentSpec::load(spec)?)
}

fn evaluate(a: Evaluate) -> Result<(), Error> {
    let format = a.output.format()?;
    let record = load_experiment(&a.spec)?.run()?;
    println!("{record}");
    emit_results(&[record], &a.output.out, format)
}

fn run_sweep(a: Sweep) -> Result<(), Error> {
    let format = a.output.format()?;
    let axis = SweepAxis::from_str(&a.axis)?;
    let records = sweep(&load_experiment(&a.spec)?, axis, &a.values)?;
    for r in &records {
        println!("{r}");
    }
    emit_results(&records, &a.output.out, format)
}

fn bench(a: Bench) -> Result<(), Error> {
    let format = a.output.format()?;
    let exp = load_experiment(&a.spec)?;
    let pool = rayon_single_thread()?;
    let rows = pool.install(|| bench_inference(&exp, &a.steps))?;
    for r in &rows {
        println!(
            "{:<16} steps {:>4}  {:.3e} s/sample  {:.3e} s/step  {} forwards  robust {:.2}",
            r.method, r.steps, r.seconds_per_sample, r.seconds_per_step, r.forwards_per_sample, r.robust_accuracy
        );
    }
    emit_bench(&rows, &a.output.out, format)
}

fn rayon_single_thread() -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{}", e.render());
            eprintln!("{}", error_line("usage", e.kind().as_str().unwrap_or("invalid arguments")));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainScore(a) => train_score(a),
        Command::TrainClf(a) => train_clf(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
