use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cogrelay::cli::{self, RunManifest};
use cogrelay::ChannelModel;

#[derive(Parser)]
#[command(name = "cogrelay", version, about = "Stable throughput region of a cooperative cognitive radio link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the region for every K in the manifest and write CSV/SVG output.
    Region {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the manifest's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a state,pi,a,b table per operating point.
        #[arg(long)]
        policies: bool,
    },
    /// Solve the fixed point for a policy and print the operating point.
    Evaluate {
        /// Policy JSON: {"K": .., "admit": [..], "select_own": [..]}.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        lambda_p: f64,
        #[command(flatten)]
        channel: ChannelArgs,
    },
    /// Simulate the protocol using the manifest's sim section.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Policy JSON to simulate instead of the optimal one.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Compare against the analytical model.
        #[arg(long)]
        validate: bool,
        /// Write a per-slot trace CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Write the occupancy LP for one (lambda_p, mu_p, K) in LP format.
    LpDump {
        #[arg(long)]
        lambda_p: f64,
        #[arg(long)]
        mu_p: f64,
        #[arg(long = "K")]
        k: usize,
        #[command(flatten)]
        channel: ChannelArgs,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a manifest without running anything.
    ValidateConfig {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct ChannelArgs {
    /// Channel as f_pd,f_ps,f_sd.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.3, 0.4, 0.8])]
    channel: Vec<f64>,
    /// Take the channel from a manifest instead.
    #[arg(long, conflicts_with = "channel")]
    manifest: Option<PathBuf>,
}

impl ChannelArgs {
    fn resolve(&self) -> anyhow::Result<ChannelModel> {
        if let Some(path) = &self.manifest {
            return Ok(RunManifest::load(path)?.channel);
        }
        let [f_pd, f_ps, f_sd] = self.channel[..] else { bail!("--channel takes three values") };
        Ok(ChannelModel::new(f_pd, f_ps, f_sd)?)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("COGRELAY_THREADS") {
        let n: usize = v.parse().with_context(|| format!("COGRELAY_THREADS={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Region { manifest, out, policies } => {
            let m = RunManifest::load(&manifest)?;
            let run = cli::cmd_region(&m, out.as_deref(), policies)?;
            for s in &run.sweeps {
                let note = if s.omitted.is_empty() {
                    String::new()
                } else {
                    format!(", {} loads infeasible", s.omitted.len())
                };
                println!("K = {}: {} points{note}", s.curve.k, s.points.len());
            }
            for f in &run.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Evaluate { policy, lambda_p, channel } => {
            let p = cli::load_policy(&policy)?;
            println!("{}", cli::cmd_evaluate(&p, &channel.resolve()?, lambda_p)?);
        }
        Command::Simulate { manifest, out, seed, policy, validate, trace } => {
            let m = RunManifest::load(&manifest)?;
            let policy = policy.map(|p| cli::load_policy(&p)).transpose()?;
            let run = cli::cmd_simulate(&m, policy.as_ref(), out.as_deref(), seed, validate, trace)?;
            let r = &run.report;
            println!(
                "SU throughput {:.6}, PU service {:.6}, stable: PU {} SU {}",
                r.empirical_throughput_s, r.empirical_mu_p, r.stability_flag_p, r.stability_flag_s
            );
            for f in &run.files {
                println!("wrote {}", f.display());
            }
            if let Some(v) = &run.validation {
                print!("{}", v.render());
                if v.skipped.is_none() && !v.passed() {
                    return Ok(false);
                }
            }
        }
        Command::LpDump { lambda_p, mu_p, k, channel, out } => {
            let text = cli::cmd_lp_dump(&channel.resolve()?, lambda_p, mu_p, k)?;
            match out {
                Some(path) => cli::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
        }
        Command::ValidateConfig { manifest } => {
            let m = RunManifest::load(&manifest)?;
            for w in m.validate()? {
                eprintln!("warning: {w}");
            }
            println!("{}: ok", manifest.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
