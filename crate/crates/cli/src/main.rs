//! Command-line front end: run experiments, price protocols, inspect
//! partition schemes.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedistill::commcost::{self, SweepOperands};
use fedistill::config::parse_config;
use fedistill::data::{class_probability_vector, PartitionKind, PartitionScheme};
use fedistill::harness;
use fedistill::seed::{derive_seed, rng_from};

#[derive(Parser)]
#[command(name = "fedistill", about = "Deterministic federated-distillation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config and write metrics files.
    Run(RunArgs),
    /// Print communication costs for the configured operands.
    Cost(CostArgs),
    /// Print per-client class-probability vectors and empirical frequencies.
    PartitionCheck(PartitionCheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics.jsonl and summary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// Size of the public distillation set.
    #[arg(long, default_value_t = 40_000)]
    xdist: u64,
    /// Upload logit width (the full label-space width for DL-SH).
    #[arg(long, default_value_t = 10)]
    logit_width: u64,
    /// Confidence scalars per client.
    #[arg(long, default_value_t = 40_000)]
    conf: u64,
    /// Mask-dict scalars per client (DL-MH).
    #[arg(long, default_value_t = 2)]
    mask: u64,
    /// Model parameter count (server and client sides of FedAvg).
    #[arg(long, default_value_t = 9_146_954)]
    params: u64,
    /// FedAvg communication rounds.
    #[arg(long, default_value_t = 10)]
    rounds: u64,
    /// Number of clients M.
    #[arg(long, default_value_t = 1)]
    clients: u64,
    /// Sweep per-client class counts over an inclusive range `a..b`
    /// and print one row per count.
    #[arg(long, value_parser = parse_range)]
    sweep_classes: Option<(u64, u64)>,
}

#[derive(Args)]
struct PartitionCheckArgs {
    /// Scheme kind: iid, niid1, niid2 or niid3.
    #[arg(long)]
    scheme: String,
    /// Number of clients.
    #[arg(long)]
    clients: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Empirical draws per client.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got {s}"))?;
    let lo: u64 = a.trim().parse().map_err(|e| format!("bad start: {e}"))?;
    let hi: u64 = b.trim().parse().map_err(|e| format!("bad end: {e}"))?;
    if lo > hi {
        return Err(format!("empty range {lo}..{hi}"));
    }
    Ok((lo, hi))
}

/// Two-digit scientific notation in the style the cost tables use,
/// e.g. 182939080 -> 1.83E+08.
fn scientific(x: u64) -> String {
    if x == 0 {
        return "0.00E+00".into();
    }
    let exp = (x as f64).log10().floor() as i32;
    let mantissa = x as f64 / 10f64.powi(exp);
    // Rounding the mantissa can carry it to 10.0.
    if mantissa >= 9.995 {
        format!("1.00E+{:02}", exp + 1)
    } else {
        format!("{mantissa:.2}E+{exp:02}")
    }
}

fn main() -> ExitCode {
    // Die quietly when the output pipe closes, like any Unix filter.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDISTILL_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Cost(args) => cmd_cost(args),
        Command::PartitionCheck(args) => cmd_partition_check(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let config = parse_config(&text)?;
    log::info!("running {} into {}", config.protocol.name(), args.out.display());
    let outcome = harness::run(&config)?;
    harness::write_outputs(&outcome, &args.out)?;
    for record in outcome.summary_records() {
        println!(
            "{} {} {} = {}",
            record.protocol, record.entity, record.metric, record.value
        );
    }
    println!(
        "wrote {} and {}",
        args.out.join("metrics.jsonl").display(),
        args.out.join("summary.csv").display()
    );
    Ok(())
}

fn cmd_cost(args: CostArgs) -> Result<(), Box<dyn std::error::Error>> {
    if let Some((lo, hi)) = args.sweep_classes {
        let counts: Vec<u64> = (lo..=hi).collect();
        let fixed = SweepOperands {
            x_dist_size: args.xdist,
            full_logit_width: args.logit_width,
            conf_size: args.conf,
            params_server: args.params,
            params_client: args.params,
            rounds: args.rounds,
            n_clients: args.clients,
        };
        let rows = commcost::cost_sweep(&counts, &fixed)?;
        print!("{}", commcost::sweep_csv(&rows));
        return Ok(());
    }
    let fedavg = commcost::cost_fedavg(args.params, args.params, args.rounds, args.clients);
    let dlsh = commcost::cost_dlsh(args.xdist, args.logit_width, args.conf, args.clients);
    let dlmh_width = args.mask.max(1);
    let dlmh = commcost::cost_dlmh(args.xdist, dlmh_width, args.conf, args.mask, args.clients);
    let idlmh = commcost::cost_idlmh_incremental(args.xdist, dlmh_width, args.clients);
    println!("protocol,total,approx");
    println!("fedavg,{fedavg},{}", scientific(fedavg));
    println!("dlsh,{dlsh},{}", scientific(dlsh));
    println!("dlmh,{dlmh},{}", scientific(dlmh));
    println!("idlmh_incremental,{idlmh},{}", scientific(idlmh));
    Ok(())
}

fn cmd_partition_check(args: PartitionCheckArgs) -> Result<(), Box<dyn std::error::Error>> {
    let kind = match args.scheme.as_str() {
        "iid" => PartitionKind::Iid,
        "niid1" => PartitionKind::Niid1,
        "niid2" => PartitionKind::Niid2,
        "niid3" => PartitionKind::Niid3,
        other => return Err(format!("unknown scheme {other}").into()),
    };
    let scheme = PartitionScheme {
        kind,
        n_clients: args.clients,
        n_classes: args.classes,
        samples_per_client: 1,
    };
    for client in 0..args.clients {
        let pv = class_probability_vector(&scheme, client)?;
        let probs: Vec<String> = pv.probs().iter().map(|p| format!("{p:.4}")).collect();
        println!("client {client} probs: {}", probs.join(" "));
        let mut rng = rng_from(derive_seed(args.seed, "partition-check", client as u64));
        let mut counts = vec![0usize; args.classes];
        for _ in 0..args.draws {
            counts[pv.sample_class(&mut rng)] += 1;
        }
        let freqs: Vec<String> = counts
            .iter()
            .map(|&c| format!("{:.4}", c as f64 / args.draws as f64))
            .collect();
        println!("client {client} freqs: {}", freqs.join(" "));
    }
    Ok(())
}
