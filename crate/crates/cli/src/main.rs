use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use featlab::config::{default_output_dir, RunConfig};
use featlab::convex::{run_equivalence_experiment, ConvexLabConfig};
use featlab::data::{check_regularization_scale, sample_dataset, sample_test_set};
use featlab::io::{format_key_values, save_dataset};
use featlab::oracles::{
    cnn_gradient_check, gd_descent_audit, gradient_check_instance, overlap_monte_carlo, tensor_power_sweep,
    AuditThresholds, TensorPowerParams,
};
use featlab::runner::{render_table1, repro_fig3, repro_table1, run_experiment, run_with_closeness_audit, write_run};
use featlab::Algorithm;

#[derive(Parser)]
#[command(
    name = "featlab",
    version,
    about = "Feature learning vs. noise memorization under GD, Adam and sign descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a training set and write it in the dataset text format.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the CNN and write metrics, summary and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long = "T", value_name = "T")]
        steps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Logistic regression trained by GD and Adam, compared at convergence.
    Convex {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        eta_gd: f64,
        #[arg(long, default_value_t = 1e-4)]
        eta_adam: f64,
        #[arg(long, default_value_t = 300_000)]
        steps: usize,
        /// Stop each optimizer once its gradient norm falls below this; 0
        /// runs the full budget.
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        test_size: usize,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the verification oracles.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Adam and GD at the preset; prints the error table at W*.
    #[command(name = "repro-table1")]
    ReproTable1 {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds; overrides --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long = "T", value_name = "T")]
        steps: Option<usize>,
        /// Also write each run's summary under this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Adam and GD trajectories for plotting.
    #[command(name = "repro-fig3")]
    ReproFig3 {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "T", value_name = "T")]
        steps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Sweep the two-sequence tensor-power recursion over starting points.
    TensorPower {
        #[arg(long, default_value_t = 3)]
        q: u32,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.02, 0.04, 0.08])]
        sweep: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.01)]
        b: f64,
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        target: f64,
    },
    /// Monte Carlo probability that two noise supports intersect.
    Overlap {
        #[arg(long, default_value_t = 1_000_000)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        s: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic CNN gradient against central differences on small instances.
    GradientCheck {
        #[arg(long, default_value_t = 10)]
        instances: u64,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        q: u32,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit Adam's update direction against the gradient sign every step.
    Closeness {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "T", value_name = "T")]
        steps: Option<usize>,
        /// Large-gradient threshold; defaults to 10 * eta.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Check sufficient decrease of full-batch GD step by step.
    Descent {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
        #[arg(long = "T", value_name = "T", default_value_t = 1000)]
        steps: usize,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long, default_value = "paper-sec6")]
    preset: String,
    /// Configuration file with `key = value` lines, applied over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for data, initialization and test set.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self, algorithm: Algorithm) -> Result<RunConfig> {
        let mut cfg = RunConfig::preset(&self.preset, algorithm)?;
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading {}", path.display()))?;
        }
        let mut pairs = Vec::new();
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            pairs.push((k, v));
        }
        cfg.apply(pairs)?;
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        Ok(cfg)
    }
}

fn print_key_values<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<()> {
    io::stdout().write_all(format_key_values(pairs).as_bytes())?;
    Ok(())
}

fn warn_about_lambda(cfg: &RunConfig) {
    for w in check_regularization_scale(&cfg.data, cfg.model.lambda, cfg.model.q).warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { cfg, out } => {
            let cfg = cfg.build(Algorithm::Gd)?;
            let ds = sample_dataset(&cfg.data)?;
            save_dataset(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} examples to {}", ds.len(), out.display());
        }
        Command::Train {
            cfg,
            algorithm,
            eta,
            steps,
            out_dir,
            run_id,
        } => {
            let mut cfg = cfg.build(Algorithm::Adam)?;
            if let Some(alg) = algorithm {
                cfg.set("optim.algorithm", &alg.to_string())?;
            }
            if let Some(eta) = eta {
                cfg.optim.eta = eta;
            }
            if let Some(t) = steps {
                cfg.steps = t;
            }
            if let Some(dir) = out_dir {
                cfg.output_dir = dir;
            }
            if let Some(id) = run_id {
                cfg.run_id = id;
            }
            warn_about_lambda(&cfg);
            let out = run_experiment(&cfg)?;
            let dir = cfg.run_dir();
            write_run(&out, &dir).with_context(|| format!("writing {}", dir.display()))?;
            print_key_values(&out.summary.key_values())?;
            eprintln!("run written to {}", dir.display());
        }
        Command::Convex {
            cfg,
            lambda,
            eta_gd,
            eta_adam,
            steps,
            tol,
            test_size,
            out,
        } => {
            let cfg = cfg.build(Algorithm::Gd)?;
            let lab = ConvexLabConfig {
                lambda,
                eta_gd,
                eta_adam,
                steps,
                tol: (tol > 0.0).then_some(tol),
                test_size,
                ..ConvexLabConfig::default()
            };
            let train = sample_dataset(&cfg.data)?;
            let test = sample_test_set(&cfg.data, test_size)?;
            let report = run_equivalence_experiment(&train, &test, &lab)?;
            let kv = report.key_values();
            if let Some(path) = out {
                fs::write(&path, format_key_values(&kv)).with_context(|| format!("writing {}", path.display()))?;
            }
            print_key_values(&kv)?;
        }
        Command::Oracle(oracle) => run_oracle(oracle)?,
        Command::ReproTable1 {
            cfg,
            seeds,
            steps,
            out_dir,
        } => {
            let seeds = if seeds.is_empty() {
                vec![cfg.seed.unwrap_or(7)]
            } else {
                seeds
            };
            let mut base = cfg.build(Algorithm::Adam)?;
            if let Some(t) = steps {
                base.steps = t;
            }
            let rows = repro_table1(&base, &seeds)?;
            print!("{}", render_table1(&rows));
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                for r in &rows {
                    for s in [&r.adam, &r.gd] {
                        let path = dir.join(format!("{}.summary.txt", s.run_id));
                        fs::write(&path, format_key_values(&s.key_values()))?;
                    }
                }
            }
        }
        Command::ReproFig3 { cfg, steps, out_dir } => {
            let mut base = cfg.build(Algorithm::Adam)?;
            if let Some(t) = steps {
                base.steps = t;
            }
            let dir = out_dir.unwrap_or_else(default_output_dir);
            let (adam, gd) = repro_fig3(&base, &dir)?;
            println!("{}", adam.join("metrics.csv").display());
            println!("{}", gd.join("metrics.csv").display());
        }
    }
    Ok(())
}

fn run_oracle(oracle: OracleCommand) -> Result<()> {
    match oracle {
        OracleCommand::TensorPower {
            q,
            sweep,
            a,
            b,
            eta,
            target,
        } => {
            let base = TensorPowerParams {
                q,
                a,
                b,
                eta,
                target,
                ..TensorPowerParams::reference(sweep.first().copied().unwrap_or(0.02))
            };
            let report = tensor_power_sweep(&sweep, &base)?;
            println!("x0,t_x,t_x_eta,y_at_tx");
            for r in &report.rows {
                println!("{},{},{},{}", r.x0, r.t_x, r.t_x_eta, r.y_at_tx);
            }
            println!("# slope = {}", report.slope);
        }
        OracleCommand::Overlap { d, n, s, trials, seed } => {
            let r = overlap_monte_carlo(d, n, s, trials, seed)?;
            print_key_values(&[
                ("trials", r.trials.to_string()),
                ("overlaps", r.overlaps.to_string()),
                ("rate", r.rate.to_string()),
                ("bound", r.bound.to_string()),
                ("margin", r.margin.to_string()),
                ("within_bound", r.within_bound().to_string()),
            ])?;
        }
        OracleCommand::GradientCheck {
            instances,
            m,
            q,
            lambda,
            h,
            seed,
        } => {
            let errors: Vec<f64> = (0..instances)
                .into_par_iter()
                .map(|i| {
                    let (ds, w) = gradient_check_instance(seed + i, m)?;
                    Ok(cnn_gradient_check(&w, &ds, q, lambda, h, 1e-8)?)
                })
                .collect::<Result<_>>()?;
            println!("instance,max_rel_error");
            for (i, e) in errors.iter().enumerate() {
                println!("{i},{e}");
            }
        }
        OracleCommand::Closeness { cfg, steps, threshold } => {
            let mut cfg = cfg.build(Algorithm::Adam)?;
            cfg.set("optim.algorithm", "adam")?;
            if let Some(t) = steps {
                cfg.steps = t;
            }
            let th = threshold.map_or_else(
                || AuditThresholds::for_config(&cfg.optim),
                |large_gradient| AuditThresholds { large_gradient },
            );
            let (_, r) = run_with_closeness_audit(&cfg, &th)?;
            let hist: Vec<String> = r.histogram.iter().map(|c| c.to_string()).collect();
            print_key_values(&[
                ("audited_coordinates", r.coordinates.to_string()),
                ("large_gradient_coordinates", r.large.to_string()),
                ("sign_match_fraction", r.match_fraction().to_string()),
                ("max_ratio", r.max_ratio.to_string()),
                ("bound", r.bound.to_string()),
                ("histogram", hist.join(",")),
            ])?;
        }
        OracleCommand::Descent { cfg, eta, steps } => {
            let cfg = cfg.build(Algorithm::Gd)?;
            let ds = sample_dataset(&cfg.data)?;
            let r = gd_descent_audit(&ds, &cfg.model, eta, steps)?;
            print_key_values(&[
                ("steps", r.steps.to_string()),
                ("sufficient_decrease_fraction", r.sufficient_fraction().to_string()),
                ("monotone_fraction", r.monotone_fraction().to_string()),
                ("worst_slack", r.worst_slack.to_string()),
            ])?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
