//! `pacattn`: parse prompts, run guided sampling, audit and render
//! attention bundles, run sweeps and evaluate the PAC-Bayes bound.
//!
//! Exit codes: 0 ok, 2 usage or domain error, 3 engine error, 4 data-format
//! error. Machine-readable output goes to stdout, diagnostics to stderr.

mod commands;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Engine(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Engine(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Engine(m) | CliError::Data(m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pacattn", version, about = "Attention-prior guidance toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
pub struct LossFlags {
    /// JSON guidance configuration; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_div: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_sim: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_out: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda_pac: Option<f64>,
    /// PAC confidence parameter
    #[arg(long)]
    pub delta: Option<f64>,
    /// PAC sample count
    #[arg(long)]
    pub n_samples: Option<u64>,
    /// Additive smoothing applied to every map before the losses
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Use the magnitudes of the weights with the signs that encourage
    /// separation, binding and non-uniform maps
    #[arg(long)]
    pub separation_signs: bool,
}

#[derive(Args, Debug)]
pub struct GuideArgs {
    pub prompt: String,
    #[command(flatten)]
    pub loss: LossFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total denoising steps T
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of leading steps that receive the latent update
    #[arg(long)]
    pub k: Option<usize>,
    /// Latent update step size
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Decay the step size linearly to zero over the run
    #[arg(long)]
    pub step_decay: bool,
    /// Seed for the toy model weights
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    /// Latent height and width
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    /// Latent channels
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    /// Report whether the configured signs encourage each goal
    #[arg(long)]
    pub direction_check: bool,
    /// JSON lexicon extending the built-in word classes
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a prompt into object groups and print JSON
    Parse {
        prompt: String,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Run guided sampling and write trace, bundle and scores
    Guide(GuideArgs),
    /// Recompute losses and scores for an attention bundle
    Audit {
        bundle: PathBuf,
        /// Parse JSON describing the bundle's prompt
        parse: PathBuf,
        #[command(flatten)]
        loss: LossFlags,
    },
    /// Run a hyperparameter sweep described by a JSON spec
    Sweep {
        spec: PathBuf,
        /// json, csv or markdown
        #[arg(long, default_value = "json")]
        format: String,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render bundle maps as binary PGM heatmaps
    Render {
        bundle: PathBuf,
        /// Token index or text; all tokens when omitted
        #[arg(long)]
        token: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an attention bundle and list every problem
    ValidateBundle { bundle: PathBuf },
    /// Evaluate the PAC-Bayes upper bound on expected risk
    PacBound {
        #[arg(long)]
        risk: f64,
        #[arg(long)]
        kl: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        delta: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { prompt, lexicon } => commands::parse(&prompt, lexicon.as_deref()),
        Command::Guide(args) => commands::guide(&args),
        Command::Audit {
            bundle,
            parse,
            loss,
        } => commands::audit(&bundle, &parse, &loss),
        Command::Sweep { spec, format, out } => commands::sweep(&spec, &format, out.as_deref()),
        Command::Render {
            bundle,
            token,
            out,
        } => commands::render(&bundle, token.as_deref(), &out),
        Command::ValidateBundle { bundle } => commands::validate_bundle(&bundle),
        Command::PacBound { risk, kl, n, delta } => commands::pac_bound(risk, kl, n, delta),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
