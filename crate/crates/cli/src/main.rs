mod commands;

use clap::{Parser, Subcommand};

/// Latent radiance field toolkit: train, render, and evaluate C-channel
/// Gaussian splatting scenes, and run the surrounding loss/verification
/// tooling.
#[derive(Parser)]
#[command(name = "lrf", version, about)]
struct Cli {
    /// Force bit-reproducible execution. Accepted everywhere; all commands
    /// are already order-deterministic, so this is a compatibility flag.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Seed for commands that draw random numbers (overrides config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rayon worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a scene against a latent dataset directory.
    Train(commands::train::TrainArgs),
    /// Render views of a saved scene to .lrf latents (and PNG with a decoder).
    Render(commands::render::RenderArgs),
    /// Compare rendered outputs against references (PSNR / SSIM).
    Eval(commands::eval::EvalArgs),
    /// Correspondence-loss report over latent maps, cameras, and matches.
    Losses(commands::losses::LossesArgs),
    /// APE weight report for view pairs.
    Weights(commands::weights::WeightsArgs),
    /// Fit the patch-linear alignment decoder on latent/image pairs.
    Align(commands::align::AlignArgs),
    /// Verify analytic gradients against finite differences.
    CheckGrad(commands::checkgrad::CheckGradArgs),
    /// Run the built-in oracle suites.
    Selftest(commands::selftest::SelftestArgs),
}

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<lrf_core::LrfError>() {
        match e {
            lrf_core::LrfError::NumericalFailure(_) => 3,
            lrf_core::LrfError::InvalidValue(_) => 1,
            _ => 2,
        }
    } else {
        2
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("rayon pool is configured once at startup");
    }

    let result = match cli.command {
        Command::Train(args) => commands::train::run(args, cli.seed),
        Command::Render(args) => commands::render::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Losses(args) => commands::losses::run(args),
        Command::Weights(args) => commands::weights::run(args),
        Command::Align(args) => commands::align::run(args, cli.seed),
        Command::CheckGrad(args) => commands::checkgrad::run(args, cli.seed),
        Command::Selftest(args) => commands::selftest::run(args),
    };

    match result {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}
