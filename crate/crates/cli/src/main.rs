use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use plansql_core::evaluation::{render_table, EvalReport};
use plansql_core::fixture::materialize;
use plansql_core::pipeline::{
    build_client, inspect_query, rescore_run, run_pipeline, run_refine_iteration, RefineOptions, RefineStep, RunConfig,
};
use plansql_core::planner::ZhMode;

#[derive(Parser)]
#[command(name = "plansql", version, about = "Plan-then-write text-to-SQL runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ZhArg {
    Direct,
    Translate,
}

#[derive(Subcommand)]
enum Command {
    /// Run a split end to end and score it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        no_planner: bool,
        #[arg(long)]
        no_guidelines: bool,
        #[arg(long)]
        no_icl: bool,
        #[arg(long)]
        single_plan: bool,
        #[arg(long, value_enum)]
        zh_mode: Option<ZhArg>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Run directory; overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One refinement iteration over a finished heldout run.
    Refine {
        #[arg(long)]
        config: PathBuf,
        /// Heldout run directory.
        #[arg(long)]
        run: PathBuf,
        /// Cluster review file; defaults to `<run>/clusters.toml`.
        #[arg(long)]
        clusters: Option<PathBuf>,
        /// Distill straight away instead of stopping for review.
        #[arg(long)]
        no_pause: bool,
    },
    /// Re-score run directories and print the comparison table.
    Eval {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Print the stored reports without re-executing anything.
        #[arg(long)]
        no_rescore: bool,
    },
    /// Show the trail of one query in a run directory.
    Inspect {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        query: String,
    },
    /// Write the bundled demo corpus to a directory.
    Fixtures {
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            split,
            mock_script,
            no_planner,
            no_guidelines,
            no_icl,
            single_plan,
            zh_mode,
            parallelism,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            let cwd = std::env::current_dir()?;
            if let Some(split) = split {
                cfg.split = split;
            }
            if let Some(script) = mock_script {
                cfg.gateway.mock_script = Some(cwd.join(script));
            }
            cfg.ablation.no_planner |= no_planner;
            cfg.ablation.no_guidelines |= no_guidelines;
            cfg.ablation.no_icl |= no_icl;
            cfg.ablation.single_plan |= single_plan;
            if let Some(mode) = zh_mode {
                cfg.planner.zh_mode = match mode {
                    ZhArg::Direct => ZhMode::Direct,
                    ZhArg::Translate => ZhMode::Translate,
                };
            }
            if parallelism.is_some() {
                cfg.parallelism = parallelism;
            }
            if let Some(out) = out {
                cfg.out_dir = cwd.join(out);
            }
            let outcome = run_pipeline(&cfg)?;
            print!("{}", render_table(&[&outcome.report]));
            println!("run directory: {}", outcome.run_dir.display());
        }
        Command::Refine {
            config,
            run,
            clusters,
            no_pause,
        } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let client = build_client(&cfg)?;
            let options = RefineOptions {
                clusters_file: clusters.unwrap_or_else(|| run.join("clusters.toml")),
                pause: !no_pause,
            };
            match run_refine_iteration(&cfg, &run, &options, client.as_ref())? {
                RefineStep::NoFailures => println!("no failures in {}; library unchanged", run.display()),
                RefineStep::AwaitingReview { clusters_file, clusters } => {
                    println!("wrote {} clusters to {}", clusters.len(), clusters_file.display());
                    println!("review the file, then run the same command again to distill");
                }
                RefineStep::Completed(summary) => {
                    println!("prompt version {} -> {}", summary.version, summary.snapshot.display());
                    println!("added: {}", summary.added.join(", "));
                    println!("edited: {}", summary.edited.join(", "));
                    println!("unchanged: {}", summary.unchanged.join(", "));
                }
            }
        }
        Command::Eval { runs, no_rescore } => {
            let mut reports = Vec::new();
            for dir in &runs {
                let report: Result<EvalReport> = if no_rescore {
                    EvalReport::load(dir).map_err(Into::into)
                } else {
                    rescore_run(dir).map_err(Into::into)
                };
                reports.push(report.with_context(|| format!("scoring {}", dir.display()))?);
            }
            print!("{}", render_table(&reports.iter().collect::<Vec<_>>()));
        }
        Command::Inspect { run, query } => print!("{}", inspect_query(&run, &query)?),
        Command::Fixtures { dir } => {
            let layout = materialize(&dir)?;
            println!("corpus written to {}", layout.root.display());
            println!("try: plansql run --config {}", layout.config("dev").display());
        }
    }
    Ok(())
}
