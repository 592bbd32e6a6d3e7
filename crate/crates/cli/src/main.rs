use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qscope_cli::commands::{self, CommandError, FocusArgs, FriedelArgs, RunKind};
use qscope_cli::config::parse_config;
use qscope_cli::output::{write_json, Format};

#[derive(Parser)]
#[command(name = "qscope", version, about = "Cavity-QED scanning microscope simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    JsonLines,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Overrides the config trajectory count.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Population columns p0..p{K-1} in the samples table.
    #[arg(long, default_value_t = 4)]
    populations: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Dark-state focusing profile and resolution summary.
    Focus {
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = std::f64::consts::TAU)]
        k1: f64,
        #[arg(long, default_value_t = 0.0)]
        z0: f64,
        #[arg(long, default_value_t = 2001)]
        grid_points: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Fixed-focus measurement of a moving wave packet.
    Movie(RunArgs),
    /// Linear focal scans.
    Scan(RunArgs),
    /// Ensemble statistics for any regime.
    Ensemble(RunArgs),
    /// Friedel-oscillation density scan of fermions in a box.
    Friedel {
        #[arg(long, default_value_t = 16)]
        n_fermions: usize,
        #[arg(long, default_value_t = 1.0)]
        box_length: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 4.0 * std::f64::consts::PI * std::f64::consts::PI)]
        kappa: f64,
        #[arg(long = "gammaT", default_value_t = 400.0)]
        gamma_t: f64,
        #[arg(long, default_value_t = 0.01)]
        tau_frac: f64,
        #[arg(long, default_value_t = 50)]
        scans: usize,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        cutoff: usize,
        #[arg(long, default_value_t = 6)]
        window: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn format_of(arg: Option<FormatArg>, fallback: Format) -> Format {
    match arg {
        Some(FormatArg::Csv) => Format::Csv,
        Some(FormatArg::JsonLines) => Format::JsonLines,
        None => fallback,
    }
}

fn run_config(kind: RunKind, a: RunArgs) -> (PathBuf, Result<Vec<String>, CommandError>) {
    let out = a.common.out.clone();
    let result = (|| {
        let mut file = parse_config(&a.config)?;
        if let Some(s) = a.common.seed {
            file.run.seed = s;
        }
        if let Some(n) = a.trajectories {
            file.run.n_trajectories = n;
        }
        let out = file.output.path.clone().filter(|_| a.common.out == PathBuf::from("out")).unwrap_or(a.common.out.clone());
        let format = format_of(a.common.format, file.output.format);
        commands::scan_run(kind, &file.run, a.populations, &out, format)
    })();
    (out, result)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (out, result) = match cli.command {
        Command::Focus {
            epsilon,
            beta,
            k1,
            z0,
            grid_points,
            common,
        } => {
            let args = FocusArgs {
                epsilon,
                beta,
                k1,
                z0,
                grid_points,
            };
            let r = commands::focus(args, &common.out, format_of(common.format, Format::Csv));
            (common.out, r)
        }
        Command::Movie(a) => run_config(RunKind::Movie, a),
        Command::Scan(a) => run_config(RunKind::Scan, a),
        Command::Ensemble(a) => run_config(RunKind::Ensemble, a),
        Command::Friedel {
            n_fermions,
            box_length,
            sigma,
            kappa,
            gamma_t,
            tau_frac,
            scans,
            steps,
            cutoff,
            window,
            common,
        } => {
            let args = FriedelArgs {
                n_fermions,
                box_length,
                sigma,
                kappa,
                gamma_t,
                tau_frac,
                seed: common.seed.unwrap_or(0),
                scans,
                steps,
                cutoff,
                window,
            };
            let r = commands::friedel(args, &common.out, format_of(common.format, Format::Csv));
            (common.out, r)
        }
    };
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = e.record();
            eprintln!("{}", serde_json::to_string(&record).unwrap_or_else(|_| e.to_string()));
            if out.is_dir() {
                let _ = write_json(&out.join("error.json"), &record);
            }
            ExitCode::FAILURE
        }
    }
}
