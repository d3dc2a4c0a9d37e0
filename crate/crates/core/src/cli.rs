//! The `sql2text` command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or SQL
//! parse error.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::checkpoint::{load_any, save_checkpoint, AnyModel};
use crate::config::{keys_help, Precision, RunConfig};
use crate::data::{ingest_dataset, ExamplePair};
use crate::decoder::DecoderConfig;
use crate::error::Error;
use crate::eval::{evaluate_model, with_pool};
use crate::model::{gradient_check_fixture, Graph2Seq};
use crate::repr::{build_graph, template_interpret, to_dot, to_json};
use crate::sql::{parse_with, ParseOptions, SqlQuery};
use crate::tensor::Real;
use crate::train::{metrics_csv, train_with, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "sql2text", version, about = "Graph-to-sequence SQL interpretation")]
#[command(after_help = keys_help())]
pub struct Cli {
    /// TOML file of configuration keys (defaults to $SQL2TEXT_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for generation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct SqlInput {
    /// A query; omit to read `--file` or stdin, one query per line.
    pub sql: Option<String>,
    /// File of queries, one per line.
    #[arg(long, short)]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GraphFormat {
    Json,
    Dot,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the AST of each query as a JSON line.
    Parse {
        #[command(flatten)]
        input: SqlInput,
        /// Replace literal values with val_N placeholders.
        #[arg(long)]
        anonymize: bool,
    },
    /// Print the query graph.
    Graphify {
        #[command(flatten)]
        input: SqlInput,
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormat,
        /// Add the reverse of every edge.
        #[arg(long)]
        undirected: bool,
    },
    /// Print the rule-based interpretation of each query.
    Template {
        #[command(flatten)]
        input: SqlInput,
    },
    /// Train a model and write a checkpoint and a metrics CSV.
    Train {
        /// Training pairs, JSON Lines.
        #[arg(long)]
        train: PathBuf,
        /// Development pairs for model selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long, short)]
        out: PathBuf,
        /// Metrics CSV (default: checkpoint path with `.metrics.csv`).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Generate interpretations with a trained model.
    Generate {
        /// Checkpoint written by `train`.
        #[arg(long, short)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: SqlInput,
        /// Argmax decoding instead of beam search.
        #[arg(long, conflicts_with = "beam")]
        greedy: bool,
        /// Beam width (overrides the checkpoint's setting).
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score a model on a test set and write a JSON report.
    Evaluate {
        /// Checkpoint written by `train`.
        #[arg(long, short)]
        checkpoint: PathBuf,
        /// Test pairs, JSON Lines.
        #[arg(long)]
        test: PathBuf,
        /// Report path (default: stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Beam width (overrides the checkpoint's setting).
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Finite-difference check of the model gradients on a 3-node graph.
    Gradcheck {
        /// Coordinates to compare.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Config(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = out.flush();
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write_err(e: io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("writing output: {e}"),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CmdResult {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(j) = cli.jobs {
        overrides.push(format!("jobs={j}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Parse { input, anonymize } => for_each_query(&input, anonymize, |q| {
            writeln!(out, "{}", serde_json::to_string(q).expect("AST serialises")).map_err(write_err)
        }),
        Command::Graphify {
            input,
            format,
            undirected,
        } => for_each_query(&input, false, |q| {
            let mut g = build_graph(q);
            if undirected || cfg.train.model.undirected {
                g = g.to_undirected();
            }
            let text = match format {
                GraphFormat::Json => to_json(&g),
                GraphFormat::Dot => to_dot(&g),
            };
            writeln!(out, "{}", text.trim_end()).map_err(write_err)
        }),
        Command::Template { input } => {
            for_each_query(&input, false, |q| writeln!(out, "{}", template_interpret(q)).map_err(write_err))
        }
        Command::Train {
            train,
            dev,
            out: ckpt,
            metrics,
        } => {
            let metrics = metrics.unwrap_or_else(|| ckpt.with_extension("metrics.csv"));
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, &train, dev.as_deref(), &ckpt, &metrics, out),
                Precision::F64 => cmd_train::<f64>(&cfg, &train, dev.as_deref(), &ckpt, &metrics, out),
            }
        }
        Command::Generate {
            checkpoint,
            input,
            greedy,
            beam,
        } => match load_any(&checkpoint)? {
            AnyModel::F32(m) => cmd_generate(&m, &input, greedy, beam, cfg.train.jobs, out),
            AnyModel::F64(m) => cmd_generate(&m, &input, greedy, beam, cfg.train.jobs, out),
        },
        Command::Evaluate {
            checkpoint,
            test,
            report,
            beam,
        } => match load_any(&checkpoint)? {
            AnyModel::F32(m) => cmd_evaluate(&m, &test, report.as_deref(), beam, cfg.train.jobs, out),
            AnyModel::F64(m) => cmd_evaluate(&m, &test, report.as_deref(), beam, cfg.train.jobs, out),
        },
        Command::Gradcheck { samples } => {
            let seed = cfg.train.seed;
            let model = &cfg.train.model;
            let (report, limit) = match cfg.precision {
                Precision::F32 => (gradient_check_fixture::<f32>(model, samples, seed)?, 1e-3),
                Precision::F64 => (gradient_check_fixture::<f64>(model, samples, seed)?, 1e-6),
            };
            let pass = report.max_rel_error < limit;
            writeln!(
                out,
                "{} max_rel_error={:.3e} limit={limit:e} checked={} precision={}",
                if pass { "PASS" } else { "FAIL" },
                report.max_rel_error,
                report.checked,
                cfg.effective()["precision"]
            )
            .map_err(write_err)?;
            if let Some(w) = report.worst {
                writeln!(
                    out,
                    "worst {}[{}] analytic={:e} numeric={:e}",
                    w.param, w.index, w.analytic, w.numeric
                )
                .map_err(write_err)?;
            }
            if pass {
                Ok(())
            } else {
                Err(Failure {
                    code: 1,
                    message: "gradient check failed".into(),
                })
            }
        }
    }
}

fn read_queries(input: &SqlInput) -> Result<Vec<String>, Failure> {
    if let Some(sql) = &input.sql {
        return Ok(vec![sql.clone()]);
    }
    let lines: Vec<String> = match &input.file {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))?
            .lines()
            .map(String::from)
            .collect(),
        None => io::stdin().lock().lines().collect::<io::Result<_>>().map_err(|e| Failure {
            code: 1,
            message: format!("reading stdin: {e}"),
        })?,
    };
    Ok(lines.into_iter().filter(|l| !l.trim().is_empty()).collect())
}

/// Parses every query and hands it to `f`. Parse failures are reported on
/// stderr and turn into exit code 2 after the remaining queries are handled.
fn for_each_query(input: &SqlInput, anonymize: bool, mut f: impl FnMut(&SqlQuery) -> CmdResult) -> CmdResult {
    let mut failed = 0;
    for (i, sql) in read_queries(input)?.iter().enumerate() {
        match parse_with(sql, ParseOptions { anonymize }) {
            Ok(q) => f(&q)?,
            Err(e) => {
                eprintln!("query {}: {e}", i + 1);
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: 2,
            message: format!("{failed} quer{} failed to parse", if failed == 1 { "y" } else { "ies" }),
        });
    }
    Ok(())
}

fn load_pairs(path: &Path) -> Result<Vec<ExamplePair>, Failure> {
    let report = ingest_dataset(path)?;
    if !report.skipped.is_empty() {
        eprintln!(
            "{}: skipped {} unsupported quer{}",
            path.display(),
            report.skipped.len(),
            if report.skipped.len() == 1 { "y" } else { "ies" }
        );
        for (line, why) in &report.skipped {
            eprintln!("  line {line}: {why}");
        }
    }
    Ok(report.pairs)
}

fn cmd_train<T: Real>(
    cfg: &RunConfig,
    train: &Path,
    dev: Option<&Path>,
    ckpt: &Path,
    metrics: &Path,
    out: &mut dyn Write,
) -> CmdResult {
    let train_pairs = load_pairs(train)?;
    let dev_pairs = match dev {
        Some(p) => load_pairs(p)?,
        None => Vec::new(),
    };
    let tc: &TrainConfig = &cfg.train;
    let outcome = train_with::<T>(tc, &train_pairs, &dev_pairs, |m| {
        let dev = m.dev_bleu.map(|b| format!(" dev_bleu={b:.4}")).unwrap_or_default();
        eprintln!(
            "epoch {} train_loss={:.4}{dev} grad_norm_mean={:.3}",
            m.epoch, m.train_loss, m.grad_norm_mean
        );
    })?;
    save_checkpoint(&outcome.model, ckpt)?;
    std::fs::write(metrics, metrics_csv(&outcome.metrics)).map_err(|e| Error::io(metrics, e))?;
    let run_path = ckpt.with_extension("run.json");
    let run = serde_json::json!({
        "config": cfg.effective(),
        "best_epoch": outcome.best_epoch,
        "best_dev_bleu": outcome.best_dev_bleu,
        "pretrained_coverage": outcome.coverage,
        "metrics": outcome.metrics,
    });
    std::fs::write(&run_path, serde_json::to_string_pretty(&run).expect("run record serialises"))
        .map_err(|e| Error::io(&run_path, e))?;
    writeln!(
        out,
        "wrote {} (best epoch {}), {}, {}",
        ckpt.display(),
        outcome.best_epoch,
        metrics.display(),
        run_path.display()
    )
    .map_err(write_err)
}

fn beam_config(base: &DecoderConfig, beam: Option<usize>) -> Result<DecoderConfig, Failure> {
    let mut dc = base.clone();
    match beam {
        Some(0) => Err(Failure {
            code: 2,
            message: "--beam must be at least 1".into(),
        }),
        Some(b) => {
            dc.beam_size = b;
            Ok(dc)
        }
        None => Ok(dc),
    }
}

fn cmd_generate<T: Real>(
    model: &Graph2Seq<T>,
    input: &SqlInput,
    greedy: bool,
    beam: Option<usize>,
    jobs: usize,
    out: &mut dyn Write,
) -> CmdResult {
    let mut queries = Vec::new();
    for_each_query(input, false, |q| {
        queries.push(q.clone());
        Ok(())
    })?;
    let dc = beam_config(&model.config.decoder, beam)?;
    let results: Vec<crate::Result<Vec<String>>> = with_pool(jobs, || {
        queries
            .par_iter()
            .map(|q| {
                let p = model.prepare(q);
                let hyp = if greedy {
                    model.greedy(&p, dc.max_decode_len)?
                } else {
                    model.beam_search(&p, &dc)?
                };
                Ok(model.tgt_vocab.decode(&hyp.tokens))
            })
            .collect()
    })?;
    for r in results {
        writeln!(out, "{}", r?.join(" ")).map_err(write_err)?;
    }
    Ok(())
}

fn cmd_evaluate<T: Real>(
    model: &Graph2Seq<T>,
    test: &Path,
    report_path: Option<&Path>,
    beam: Option<usize>,
    jobs: usize,
    out: &mut dyn Write,
) -> CmdResult {
    let pairs = load_pairs(test)?;
    let dc = beam_config(&model.config.decoder, beam)?;
    let report = evaluate_model(model, &pairs, &dc, jobs)?;
    eprintln!(
        "BLEU-4 {:.4} (x100 {:.2}) on {} pairs, {} failures",
        report.corpus_bleu4,
        report.corpus_bleu4_x100,
        pairs.len(),
        report.failures
    );
    match report_path {
        Some(p) => Ok(report.write(p)?),
        None => writeln!(out, "{}", report.to_json()).map_err(write_err),
    }
}
