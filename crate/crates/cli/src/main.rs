use std::path::PathBuf;
use std::process::ExitCode;

use apll_core::harness::{self, ExperimentConfig};
use apll_core::{Error, GenerationMode, VerifyLevel};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "apll", version, about = "Adversary-aware partial-label learning experiments", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write clean and corrupted training data plus a held-out test split.
    Generate(ConfigArgs),
    /// Train on previously generated data.
    Train(ConfigArgs),
    /// Score a checkpoint on a clean or partial-label CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the numeric verification suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Fast)]
        level: Level,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "verify_out")]
        out: PathBuf,
    },
    /// Paired with/without transition runs over several seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Level {
    Fast,
    Full,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Standard,
    AdversaryAware,
}

/// Config file plus per-field overrides.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML file of `key = value` lines; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    perturbation: Option<f64>,
    #[arg(long)]
    rival_support: Option<usize>,
    #[arg(long)]
    rival_weight: Option<f64>,
    #[arg(long)]
    rival_path: Option<PathBuf>,
    #[arg(long)]
    use_transition: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    encoder_widths: Option<Vec<usize>>,
    #[arg(long)]
    projection_hidden: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    mask_prob: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    ema: Option<f64>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field { $cfg.$field = v; })+
    };
}

impl ConfigArgs {
    fn resolve(self) -> apll_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let a = self;
        apply!(
            cfg, a, classes, dim, separation, train_size, test_size, q, perturbation, rival_support, rival_weight,
            use_transition, encoder_widths, projection_hidden, embedding_dim, noise_std, mask_prob, alpha, beta,
            phi, lambda, tau, ema, batch_size, lr, momentum, weight_decay, epochs, seed, output_dir,
        );
        if a.train_csv.is_some() {
            cfg.train_csv = a.train_csv;
        }
        if a.test_csv.is_some() {
            cfg.test_csv = a.test_csv;
        }
        if a.rival_path.is_some() {
            cfg.rival_path = a.rival_path;
        }
        if a.queue_capacity.is_some() {
            cfg.queue_capacity = a.queue_capacity;
        }
        if a.warmup_epochs.is_some() {
            cfg.warmup_epochs = a.warmup_epochs;
        }
        if let Some(m) = a.mode {
            cfg.mode = match m {
                Mode::Standard => GenerationMode::Standard,
                Mode::AdversaryAware => GenerationMode::AdversaryAware,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command) -> apll_core::Result<u8> {
    match command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            let report = harness::cmd_generate(&cfg)?;
            println!(
                "wrote {} (mean cardinality {:.4}, full sets {})",
                cfg.output_dir.display(),
                report.mean_cardinality,
                report.full_sets
            );
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let outcome = harness::cmd_train(&cfg)?;
            if let Some(last) = outcome.rows.last() {
                println!(
                    "epoch {} combined={:.6} test_acc={:.4} prototype_acc={:.4}",
                    last.epoch, last.combined, last.test_acc, last.prototype_acc
                );
            }
        }
        Command::Eval { checkpoint, dataset } => {
            let r = harness::cmd_eval(&checkpoint, &dataset)?;
            println!("instances={} top1={:.6}", r.instances, r.top1);
            if let Some(p) = r.prototype_acc {
                println!("prototype_acc={p:.6}");
            }
        }
        Command::Verify { level, seed, out } => {
            let level = match level {
                Level::Fast => VerifyLevel::Fast,
                Level::Full => VerifyLevel::Full,
            };
            let reports = harness::cmd_verify(level, seed, &out)?;
            for line in reports.iter().flat_map(|r| r.summary_lines()) {
                println!("{line}");
            }
            if !reports.iter().all(|r| r.passed()) {
                return Ok(EXIT_VERIFY);
            }
        }
        Command::Ablate { config, seeds } => {
            let cfg = config.resolve()?;
            let report = harness::cmd_ablate(&cfg, &seeds)?;
            for r in &report.rows {
                println!("seed {} with_T={:.4} without_T={:.4}", r.seed, r.with_transition, r.without_transition);
            }
            println!("median with_T={:.4} without_T={:.4}", report.median_with(), report.median_without());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            })
        }
    }
}
