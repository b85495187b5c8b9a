//! Command-line interface. Every subcommand emits a JSON report to stdout or
//! `--out`; usage errors exit 2, data errors exit 1 with a structured
//! message on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use cellground_core::plan::parse_plan;
use cellground_core::rewards::{tabrouge, ContentReward, TabRouge};
use cellground_core::stats::binomial_sd;
use cellground_core::table::parse_table;
use cellground_core::verifier::{
    fit_calibration, CalibrationParams, FitConfig, NullKind, NullMaskSpec,
};

use crate::backend::{parse_attention_spec, parse_planner_spec, parse_reasoner_spec};
use crate::controller::{run_trajectory, Backends, HaltConfig, RunConfig};
use crate::pipelines::{
    eval_auroc, eval_falsification_with, eval_labelability, eval_perm_stability, MaskSource,
};
use crate::standards::{load_labels, load_standards};
use crate::theory::{theory_checks, TheoryConfig};

#[derive(Parser)]
#[command(
    name = "cellground",
    version,
    about = "Cell-grounded table reasoning: grounded trajectories and attention evaluation pipelines"
)]
struct Cli {
    /// Seed for everything randomized (mask shuffles, permutations, fits).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HaltArgs {
    /// Minimum score improvement that counts as progress.
    #[arg(long = "halt-delta", default_value_t = 0.02)]
    halt_delta: f64,
    /// Consecutive stagnant steps before halting.
    #[arg(long = "halt-k", default_value_t = 2)]
    halt_k: usize,
    /// Tool-step budget per trajectory.
    #[arg(long = "max-steps", default_value_t = 6)]
    max_steps: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one grounded trajectory over a table.
    Run {
        #[arg(long)]
        question: String,
        /// Table file in the canonical pipe-delimited form.
        #[arg(long)]
        table: PathBuf,
        /// Plan text file (mutually exclusive with --planner).
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Planner backend spec (`scripted:PATH` or `http[:URL]`).
        #[arg(long)]
        planner: Option<String>,
        /// Reasoner backend spec (`scripted:PATH`, `scripted:answer:TEXT`,
        /// `http[:URL]`).
        #[arg(long)]
        reasoner: String,
        /// Attention backend spec (`scripted:*` or `http[:URL]`).
        #[arg(long)]
        attention: String,
        /// Calibration parameter JSON produced by `calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Also score the lexical content reward each step.
        #[arg(long)]
        tabrouge: bool,
        /// Record wall-clock phase timings (off keeps replays byte-identical).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        halt: HaltArgs,
    },
    /// Cell-level AUROC of backend attention against standards.
    EvalAuroc {
        #[arg(long)]
        standards: PathBuf,
        #[arg(long)]
        backend: String,
    },
    /// Per-record AUROC stability across row-permuted views.
    PermStability {
        #[arg(long)]
        standards: PathBuf,
        #[arg(long)]
        backend: String,
        /// Number of views including the identity.
        #[arg(long = "k-perms", default_value_t = 5)]
        k_perms: usize,
        /// Minimum valid views per record.
        #[arg(long = "min-valid", default_value_t = 3)]
        min_valid: usize,
    },
    /// Density-preserving mask falsification with a paired signed-rank test.
    Falsify {
        #[arg(long)]
        standards: PathBuf,
        #[arg(long)]
        backend: String,
        /// Primary null kind: shuffle_cell, shuffle_within_row,
        /// shuffle_within_col, permute_columns.
        #[arg(long = "null-kind", default_value = "shuffle_cell")]
        null_kind: String,
        #[arg(long, default_value_t = 50)]
        draws: usize,
        /// Mask source: `gt` scores the stored masks, `noised` flips each
        /// bit of the stored mask independently first.
        #[arg(long = "mask-source", default_value = "gt")]
        mask_source: String,
        /// Per-bit flip probability for `--mask-source noised`.
        #[arg(long = "p-flip", default_value_t = 0.20)]
        p_flip: f64,
    },
    /// Judge-vs-human agreement and kappa per dataset and pooled.
    Labelability {
        #[arg(long)]
        judge: PathBuf,
        #[arg(long)]
        human: PathBuf,
    },
    /// Score a question against a table state with the lexical reward.
    Tabrouge {
        #[arg(long)]
        question: String,
        #[arg(long)]
        table: PathBuf,
    },
    /// Fit the two-parameter logistic calibration on score/label samples.
    Calibrate {
        /// JSONL of {"score": float, "label": 0|1}.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long = "train-frac", default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long = "learning-rate", default_value_t = 1.0)]
        learning_rate: f64,
        #[arg(long = "max-iters", default_value_t = 5000)]
        max_iters: usize,
    },
    /// Simulation checks of the variance-growth and parsimony claims.
    TheoryCheck {
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Binomial volatility of an accuracy estimate.
    Volatility {
        /// Accuracy as a proportion in [0, 1].
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
}

fn emit<T: Serialize>(report: &T, out: Option<&Path>, compact: bool) -> Result<()> {
    let mut text = if compact {
        serde_json::to_string(report)?
    } else {
        serde_json::to_string_pretty(report)?
    };
    text.push('\n');
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_null_kind(name: &str) -> Result<NullKind> {
    NullKind::ALL
        .iter()
        .copied()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| anyhow!("unknown null kind {name:?}"))
}

fn run_command(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Run {
            question,
            table,
            plan,
            planner,
            reasoner,
            attention,
            calibration,
            tabrouge: with_tabrouge,
            timings,
            halt,
        } => {
            let table_text = fs::read_to_string(&table)
                .with_context(|| format!("reading {}", table.display()))?;
            let table = parse_table(&table_text).map_err(|e| anyhow!("table: {e}"))?;
            let plan_clock = Instant::now();
            let raw_plan = match (plan, planner) {
                (Some(path), None) => fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?,
                (None, Some(spec)) => parse_planner_spec(&spec)?
                    .plan_text(&question, &table)
                    .map_err(|e| anyhow!("planner: {e}"))?,
                (None, None) => return Err(anyhow!("provide --plan or --planner")),
                (Some(_), Some(_)) => {
                    return Err(anyhow!("--plan and --planner are mutually exclusive"))
                }
            };
            let plan_secs = plan_clock.elapsed().as_secs_f64();
            let parsed_plan = parse_plan(&raw_plan, table.columns());
            let reasoner = parse_reasoner_spec(&reasoner)?;
            let attention = parse_attention_spec(&attention, seed)?;
            let calibration: Option<CalibrationParams> = match calibration {
                Some(path) => Some(serde_json::from_str(
                    &fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?),
                None => None,
            };
            let content_rewards: Vec<Box<dyn ContentReward>> = if with_tabrouge {
                vec![Box::new(TabRouge)]
            } else {
                Vec::new()
            };
            let cfg = RunConfig {
                halt: HaltConfig {
                    delta_stag: halt.halt_delta,
                    k_stag: halt.halt_k,
                    t_max: halt.max_steps,
                },
                calibration,
                overlap: Default::default(),
                record_timings: timings,
                record_id: format!("run-{seed}"),
            };
            let mut record = run_trajectory(
                &question,
                table,
                &parsed_plan,
                &Backends {
                    reasoner: reasoner.as_ref(),
                    attention: attention.as_ref(),
                    content_rewards: &content_rewards,
                },
                &cfg,
            );
            if timings {
                record.timings.plan_secs = plan_secs;
            }
            // trajectory logs are JSONL: one record per line
            emit(&record, out, true)
        }
        Command::EvalAuroc { standards, backend } => {
            let records = load_standards(&standards)?;
            let backend = parse_attention_spec(&backend, seed)?;
            emit(&eval_auroc(&records, backend.as_ref()), out, false)
        }
        Command::PermStability {
            standards,
            backend,
            k_perms,
            min_valid,
        } => {
            let records = load_standards(&standards)?;
            let backend = parse_attention_spec(&backend, seed)?;
            emit(
                &eval_perm_stability(&records, backend.as_ref(), k_perms, seed, min_valid),
                out,
                false,
            )
        }
        Command::Falsify {
            standards,
            backend,
            null_kind,
            draws,
            mask_source,
            p_flip,
        } => {
            let records = load_standards(&standards)?;
            let mask_source = match mask_source.as_str() {
                "gt" => MaskSource::GroundTruth,
                "noised" => MaskSource::Noised { p_flip },
                other => return Err(anyhow!("unknown mask source {other:?}")),
            };
            let backend = parse_attention_spec(&backend, seed)?;
            let spec = NullMaskSpec {
                kind: parse_null_kind(&null_kind)?,
                draws,
                seed,
            };
            emit(
                &eval_falsification_with(&records, backend.as_ref(), &spec, mask_source),
                out,
                false,
            )
        }
        Command::Labelability { judge, human } => {
            let judge = load_labels(&judge)?;
            let human = load_labels(&human)?;
            emit(&eval_labelability(&judge, &human), out, false)
        }
        Command::Tabrouge { question, table } => {
            let text = fs::read_to_string(&table)
                .with_context(|| format!("reading {}", table.display()))?;
            let table = parse_table(&text).map_err(|e| anyhow!("table: {e}"))?;
            let state = cellground_core::engine::TableState::initial(table);
            let score = tabrouge(&question, &state).map_err(|e| anyhow!("{e}"))?;
            emit(&score, out, false)
        }
        Command::Calibrate {
            samples,
            train_frac,
            patience,
            learning_rate,
            max_iters,
        } => {
            #[derive(serde::Deserialize)]
            struct Sample {
                score: f64,
                label: u8,
            }
            let text = fs::read_to_string(&samples)
                .with_context(|| format!("reading {}", samples.display()))?;
            let mut pairs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let s: Sample = serde_json::from_str(line)
                    .with_context(|| format!("{}:{}", samples.display(), i + 1))?;
                pairs.push((s.score, s.label != 0));
            }
            let params = fit_calibration(
                &pairs,
                &FitConfig {
                    train_fraction: train_frac,
                    patience,
                    learning_rate,
                    max_iters,
                    seed,
                },
            )
            .map_err(|e| anyhow!("{e}"))?;
            emit(&params, out, false)
        }
        Command::TheoryCheck {
            paths,
            steps,
            cases,
        } => {
            let report = theory_checks(&TheoryConfig {
                seed,
                martingale_paths: paths,
                martingale_steps: steps,
                parsimony_cases: cases,
                pruning_cases: cases.max(1) / 2 + 1,
            });
            let ok = report.all_passed;
            emit(&report, out, false)?;
            if !ok {
                return Err(anyhow!("theory checks failed"));
            }
            Ok(())
        }
        Command::Volatility { p, n } => {
            let sd = binomial_sd(p, n);
            emit(&json!({ "p": p, "n": n, "binomial_sd": sd }), out, false)
        }
    }
}

/// Entry point: 0 on success, 1 on data errors (usage errors exit 2 via
/// clap).
pub fn main_with_exit_code() -> i32 {
    let cli = Cli::parse();
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = json!({ "error": format!("{e:#}") });
            eprintln!("{msg}");
            1
        }
    }
}
