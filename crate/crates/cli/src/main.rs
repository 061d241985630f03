use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use memsched::index::{index_curve, index_trace};
use memsched::report::{self, EvaluationRow, Table};
use memsched::sim::{self, Estimate};
use memsched::validate;
use memsched::{Belief, EvalMode, SubsidyProblem};

mod config;

use config::{Experiment, RunConfig};

/// Scheduling experiments for downlink users on Markov channels.
#[derive(Parser, Debug)]
#[command(name = "memsched", version, about)]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `output_path`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index curve W(pi) for every user
    Index,
    /// Optimal threshold of the subsidy problem over a subsidy grid
    Threshold,
    /// Evaluate the configured policies
    Simulate,
    /// Optimal and index-policy values for horizons 1..=M
    SweepHorizon,
    /// Identical users with r = 1 - p over a grid of p
    SweepMemory,
    /// Random-instance %gain table
    Table,
    /// Index along the idle belief trajectory
    Trace,
    /// Run the invariant suite
    Validate,
    /// Run the experiment named in the config
    Run,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if matches!(cli.command, Command::Validate) => RunConfig::builtin(),
        None => bail!("--config is required"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let experiment = match cli.command {
        Command::Index => Experiment::IndexCurve,
        Command::Threshold => Experiment::Threshold,
        Command::Simulate => Experiment::Simulate,
        Command::SweepHorizon => Experiment::HorizonSweep,
        Command::SweepMemory => Experiment::MemorySweep,
        Command::Table => Experiment::Table,
        Command::Trace => Experiment::Trace,
        Command::Validate => Experiment::Validate,
        Command::Run => cfg
            .experiment
            .context("`run` needs an `experiment` field in the config")?,
    };
    let out = cli
        .out
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let outputs = pool.install(|| compute(&cfg, experiment))?;

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, table) in &outputs.tables {
        let path = out.join(name);
        write_table(&path, table)?;
        println!("wrote {}", path.display());
    }
    if let Some(failures) = outputs.failures {
        bail!("invariant violations: {failures}");
    }
    Ok(())
}

struct Outputs {
    tables: Vec<(String, Table)>,
    failures: Option<String>,
}

impl Outputs {
    fn tables(tables: Vec<(String, Table)>) -> Self {
        Outputs {
            tables,
            failures: None,
        }
    }
}

fn write_table(path: &Path, table: &Table) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    table.write_csv(BufWriter::new(file))?;
    Ok(())
}

fn compute(cfg: &RunConfig, experiment: Experiment) -> Result<Outputs> {
    match experiment {
        Experiment::IndexCurve => {
            let beta = cfg.beta()?;
            let mut tables = Vec::new();
            for (i, user) in cfg.user_models()?.iter().enumerate() {
                let rows = index_curve(user, beta, cfg.index.points)?;
                tables.push((
                    format!("index_curve_{i}.csv"),
                    report::index_curve_table(&rows),
                ));
            }
            Ok(Outputs::tables(tables))
        }
        Experiment::Threshold => {
            let beta = cfg.beta()?;
            let mut tables = Vec::new();
            for (i, user) in cfg.user_models()?.iter().enumerate() {
                let rows = cfg
                    .threshold
                    .omegas
                    .iter()
                    .map(|&omega| {
                        let class =
                            SubsidyProblem::new(user.clone(), beta, omega)?.classify_threshold()?;
                        Ok((omega, class))
                    })
                    .collect::<memsched::Result<Vec<_>>>()?;
                tables.push((format!("threshold_{i}.csv"), report::threshold_table(&rows)));
            }
            Ok(Outputs::tables(tables))
        }
        Experiment::Simulate => {
            let sys = cfg.system()?;
            let state = cfg.initial_state(&sys)?;
            let eval = cfg.eval_config()?;
            let mut rows = Vec::new();
            for kind in cfg.policies()? {
                let (mode, runs, seed, estimate) = match eval.mode {
                    EvalMode::Exact => {
                        let mean = sim::evaluate_exact(&sys, kind, &state, eval.horizon)?;
                        ("exact", 0, 0, Estimate { mean, stderr: 0.0 })
                    }
                    EvalMode::MonteCarlo { runs, seed } => {
                        let est = sim::evaluate_monte_carlo(
                            &sys,
                            kind,
                            &state,
                            eval.horizon,
                            runs,
                            seed,
                        )?;
                        ("monte-carlo", runs, seed, est)
                    }
                };
                rows.push(EvaluationRow {
                    policy: kind.name().into(),
                    mode: mode.into(),
                    horizon: eval.horizon,
                    runs,
                    seed,
                    estimate,
                });
            }
            Ok(Outputs::tables(vec![(
                "evaluation.csv".into(),
                report::evaluation_table(&rows),
            )]))
        }
        Experiment::HorizonSweep => {
            let sys = cfg.system()?;
            let state = cfg.initial_state(&sys)?;
            let rows = sim::horizon_sweep(&sys, &state, cfg.eval.horizon)?;
            Ok(Outputs::tables(vec![(
                "horizon_sweep.csv".into(),
                report::horizon_table(&rows),
            )]))
        }
        Experiment::MemorySweep => {
            let m = &cfg.memory_sweep;
            let rows = sim::memory_sweep(
                m.users,
                &m.p_grid,
                &cfg.memory_reward()?,
                cfg.beta()?,
                cfg.eval.horizon,
                cfg.common_initial()?,
            )?;
            Ok(Outputs::tables(vec![(
                "memory_sweep.csv".into(),
                report::memory_table(&rows),
            )]))
        }
        Experiment::Table => {
            let rows = sim::random_instance_table(&cfg.table_config()?)?;
            Ok(Outputs::tables(vec![
                ("gain_table.csv".into(), report::experiment_table(&rows)),
                ("gain_channels.csv".into(), report::channel_table(&rows)),
            ]))
        }
        Experiment::Trace => {
            let beta = cfg.beta()?;
            let pi0 = Belief::new(cfg.trace.pi0).context("[trace].pi0")?;
            let mut tables = Vec::new();
            for (i, user) in cfg.user_models()?.iter().enumerate() {
                let rows = index_trace(user, beta, pi0, cfg.trace.horizon)?;
                tables.push((format!("trace_{i}.csv"), report::trace_table(&rows)));
            }
            Ok(Outputs::tables(tables))
        }
        Experiment::Validate => {
            let results = validate::run_suite(&cfg.user_models()?, cfg.beta()?, cfg.seed)?;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {}::{} {}", r.module, r.name, r.detail);
            }
            let failed: Vec<String> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| format!("{}::{}", r.module, r.name))
                .collect();
            Ok(Outputs {
                tables: vec![("validate.csv".into(), validate::summary_table(&results))],
                failures: (!failed.is_empty()).then(|| failed.join(", ")),
            })
        }
    }
}
