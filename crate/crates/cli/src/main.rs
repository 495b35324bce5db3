use clap::{Parser, Subcommand};
use splitglm_cli::commands::{
    cmd_attack, cmd_benchmark, cmd_connect, cmd_serve, cmd_simulate, AttackArgs, BenchmarkArgs,
    ConnectArgs, ServeArgs, SimulateArgs,
};

#[derive(Parser, Debug)]
#[command(name = "splitglm")]
#[command(about = "Generalized linear models on vertically partitioned data \
over a two-party secure block coordinate descent protocol")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run both parties locally over the loopback transport and compare
    /// against the full-data fit.
    Simulate(SimulateArgs),
    /// Replicate grids of synthetic conditions against the oracle.
    Benchmark(BenchmarkArgs),
    /// Listen for a peer and run the responder side of a session.
    Serve(ServeArgs),
    /// Connect to a peer and run the initiator side of a session.
    Connect(ConnectArgs),
    /// Reconstruction studies: what do shared predictions plus disclosed
    /// coefficients reveal?
    Attack(AttackArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Connect(args) => cmd_connect(args),
        Command::Attack(args) => cmd_attack(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
