use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpten::baseline::LinearOptions;
use gpten::cli;
use gpten::config::{FitMode, HeadKind, PipelineConfig};
use gpten::synth::SynthOptions;
use gpten::Result;

#[derive(Parser)]
#[command(name = "gpten", version, about = "Detect machine-generated text from human co-occurrence structure")]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate the pipeline and fit a final model.
    Run(ConfigArgs),
    /// Fit the model and detector on the whole input.
    Decompose(ConfigArgs),
    /// Score documents with a saved model.
    Score(ScoreArgs),
    /// Cross-validate a ladder of ranks on shared folds.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated, strictly increasing ranks.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        ranks: Vec<usize>,
    },
    /// Cross-validate the TF-IDF + logistic regression baseline.
    Baseline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
    },
    /// Write the stratified fold assignment.
    Split(ConfigArgs),
    /// Generate a synthetic corpus with a known distribution shift.
    Synth(SynthArgs),
    /// Write each human co-occurrence slice as COO CSV.
    ExportSlices(ConfigArgs),
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with `text` and `label` columns.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    /// kde, lof, iforest, stump or boosted_stumps.
    #[arg(long)]
    detector: Option<HeadKind>,
    #[arg(long)]
    contamination: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Divide each error by the norm of its slice.
    #[arg(long)]
    normalize: bool,
    /// Fit unsupervised heads on the test errors of each fold.
    #[arg(long)]
    transductive: bool,
    /// Run every stage sequentially.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    /// Defaults, then the file, then flags.
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::from_json_file(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            window => window,
            vocab_cap => vocab_cap,
            rank => rank,
            detector => detector,
            contamination => contamination,
            folds => folds,
            seed => seed,
            max_iters => als.max_iters,
            tol => als.tol,
            restarts => als.restarts,
        );
        if self.input.is_some() {
            c.input = self.input.clone();
        }
        if self.output.is_some() {
            c.output = self.output.clone();
        }
        if self.normalize {
            c.normalize = true;
        }
        if self.transductive {
            c.fit_mode = FitMode::Transductive;
        }
        if self.deterministic {
            c.deterministic = true;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Saved model artifact.
    #[arg(long)]
    model: PathBuf,
    /// Saved detector; adds anomaly scores and decisions.
    #[arg(long)]
    detector_file: Option<PathBuf>,
    /// CSV of documents to score (label column optional).
    #[arg(short, long)]
    input: PathBuf,
    /// Output CSV path.
    #[arg(short, long, default_value = "scores.csv")]
    output: PathBuf,
    /// Settings the model is expected to have been built with.
    #[command(flatten)]
    expect: ExpectArgs,
}

#[derive(Args)]
struct ExpectArgs {
    /// Configuration file whose fingerprint must match the model.
    #[arg(long = "config")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_human: usize,
    #[arg(long, default_value_t = 50)]
    n_gpt: usize,
    #[arg(long, default_value_t = 0.5)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let c = args.resolve()?;
            let r = cli::cmd_run(&c)?;
            println!(
                "auc {:.4} ± {:.4}  f1 {:.4} ± {:.4}  f1(best) {:.4}  fingerprint {}",
                r.auc, r.auc_std, r.f1, r.f1_std, r.f1_optimal, r.config_fingerprint
            );
        }
        Command::Decompose(args) => {
            let c = args.resolve()?;
            let m = cli::cmd_decompose(&c)?;
            println!(
                "rank {} fit {:.4} over {} documents, {} terms; fingerprint {}",
                m.cp.rank(),
                m.cp.fit,
                m.tensor_doc_ids.len(),
                m.vocab.len(),
                m.config_fingerprint
            );
        }
        Command::Score(args) => {
            let expect = match &args.expect.config {
                Some(p) => Some(PipelineConfig::from_json_file(p)?),
                None => None,
            };
            let rows = cli::cmd_score(
                &args.model,
                args.detector_file.as_deref(),
                &args.input,
                &args.output,
                expect.as_ref(),
            )?;
            println!("scored {} documents into {}", rows.len(), args.output.display());
        }
        Command::Sweep { config, ranks } => {
            let c = config.resolve()?;
            let s = cli::cmd_sweep(&c, &ranks)?;
            print!("{}", s.to_csv());
        }
        Command::Baseline {
            config,
            epochs,
            l2,
            learning_rate,
        } => {
            let c = config.resolve()?;
            let opts = LinearOptions {
                epochs,
                l2,
                learning_rate,
                seed: c.seed,
            };
            let r = cli::cmd_baseline(&c, &opts)?;
            println!("{}: auc {:.4} f1 {:.4}", r.method, r.auc, r.f1);
        }
        Command::Split(args) => cli::cmd_split(&args.resolve()?)?,
        Command::Synth(args) => {
            let opts = SynthOptions {
                n_human: args.n_human,
                n_gpt: args.n_gpt,
                shift: args.shift,
                seed: args.seed,
                ..SynthOptions::default()
            };
            let c = cli::cmd_synth(&opts, &args.output)?;
            println!("wrote {} documents to {}", c.len(), args.output.display());
        }
        Command::ExportSlices(args) => {
            let n = cli::cmd_export_slices(&args.resolve()?)?;
            println!("exported {n} slices");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string();
            eprintln!("error: {message}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !message.contains(&s.to_string()) {
                    eprintln!("  caused by: {s}");
                }
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
