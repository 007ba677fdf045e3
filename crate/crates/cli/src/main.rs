use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use etcav_cli::commands::{self, Overrides};
use etcav_cli::config::{ClassifierChoice, LoadedConfig, MethodChoice};
use etcav_cli::report::to_pretty;

#[derive(Parser)]
#[command(name = "etcav", version, about = "Concept probing with TCAV and its affine-tail fast path")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Generate(Common),
    /// Train the model on the generated dataset.
    Train(Common),
    /// Extract CAVs, score every layer and class, and test significance.
    Run(Common),
    /// Agreement of each layer with the affine-tail layer.
    Agreement(Common),
    /// Time standard scoring against the fast path.
    Bench(Common),
    /// Print a summary of the reports in the output directory.
    Report(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Signal,
    Svm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Standard,
    Etcav,
    Both,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    classifier: Option<ClassifierArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// CAV runs per concept and layer.
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Leave timing fields out of reports so repeated runs are byte-identical.
    #[arg(long)]
    stable_output: bool,
    /// Allow the fast path beyond the final five probing points.
    #[arg(long)]
    override_window: bool,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<(LoadedConfig, Overrides)> {
        let mut cfg = LoadedConfig::load(&self.config)?;
        let ov = Overrides {
            seed: self.seed,
            classifier: self.classifier.map(|c| match c {
                ClassifierArg::Signal => ClassifierChoice::Signal,
                ClassifierArg::Svm => ClassifierChoice::Svm,
            }),
            method: self.method.map(|m| match m {
                MethodArg::Standard => MethodChoice::Standard,
                MethodArg::Etcav => MethodChoice::Etcav,
                MethodArg::Both => MethodChoice::Both,
            }),
            runs: self.runs,
            out: self.out.clone(),
            stable_output: self.stable_output,
            override_window: self.override_window,
            force: self.force,
        };
        ov.apply(&mut cfg)?;
        Ok((cfg, ov))
    }
}

fn written(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, ov) = c.load()?;
            print!("{}", to_pretty(&commands::generate(&cfg, &ov)?));
        }
        Command::Train(c) => {
            let (cfg, ov) = c.load()?;
            print!("{}", to_pretty(&commands::train_model(&cfg, &ov, &c.config)?));
        }
        Command::Run(c) => {
            let (cfg, ov) = c.load()?;
            let (out, files) = commands::run(&cfg, &ov, &c.config)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            written(&files);
            print!("{}", commands::report_text(&cfg)?);
        }
        Command::Agreement(c) => {
            let (cfg, ov) = c.load()?;
            let (_, files) = commands::agreement(&cfg, &ov, &c.config)?;
            written(&files);
            print!("{}", commands::report_text(&cfg)?);
        }
        Command::Bench(c) => {
            let (cfg, ov) = c.load()?;
            print!("{}", to_pretty(&commands::bench(&cfg, &ov, &c.config)?));
        }
        Command::Report(c) => {
            let (cfg, _) = c.load()?;
            print!("{}", commands::report_text(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
