//! `framelab` command line.
//!
//! Exit status: 0 on success, 1 when the operation is refused or fails, 2 on
//! a usage error (reported by clap).

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use framelab_core::annotation::Phase;
use framelab_core::corpus::{self, KeywordFilterSpec, KeywordScope};
use framelab_core::evaluation::{self, FoldPlan, FoldTableRow};
use framelab_core::inference::{self, CompletionBackend, MockBackend, Strategy};
use framelab_core::{Codebook, CorpusManifest, FrameLabel};
use serde::Serialize;

use crate::config::{WorkbenchConfig, DATA_DIR_ENV};
use crate::http_backend::HttpBackend;
use crate::workspace::{self, Access, AnnotationInput, LabelSource, SessionSpec, Workspace};

#[derive(Debug, Parser)]
#[command(name = "framelab", version, about = "Frame-analysis workbench for news headlines")]
pub struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true, env = "FRAMELAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Data directory; overrides the configuration file.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a JSON Lines corpus checked against a manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Overwrite an existing corpus (only before any session exists).
        #[arg(long)]
        replace: bool,
    },
    /// Keep only articles matching the topic keywords.
    Filter {
        /// Keyword (repeatable); defaults to the no-vax keyword list.
        #[arg(long = "keyword")]
        keywords: Vec<String>,
        #[arg(long, value_enum, default_value_t = ScopeArg::Headline)]
        scope: ScopeArg,
    },
    /// Headlines per newspaper and country with normalized totals.
    Stats {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check a codebook file (the configured codebook when omitted).
    CodebookValidate { path: Option<PathBuf> },
    /// Create an annotation session.
    SessionCreate {
        #[arg(long)]
        id: String,
        #[arg(long)]
        phase: Phase,
        /// Annotator id (repeatable, or comma separated).
        #[arg(long = "annotator", required = true, value_delimiter = ',')]
        annotators: Vec<String>,
        /// File with one article id per line; the whole corpus otherwise.
        #[arg(long)]
        items_file: Option<PathBuf>,
        /// Use a seeded sample of this many items.
        #[arg(long, requires = "seed")]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Allow the phase even if the previous phase never passed its gate.
        #[arg(long)]
        skip_gate_check: bool,
    },
    /// Split a production session's items between its annotators.
    Assign {
        #[arg(long)]
        session: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        reassign: bool,
    },
    /// Record one annotation.
    Annotate {
        #[arg(long)]
        session: String,
        #[arg(long)]
        annotator: String,
        #[arg(long)]
        article: String,
        #[arg(long)]
        primary: FrameLabel,
        #[arg(long)]
        secondary: Option<FrameLabel>,
        #[arg(long)]
        submission_id: Option<String>,
    },
    /// Intercoder reliability of a session.
    Icr {
        #[arg(long)]
        session: String,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
    },
    /// Decide whether a training phase may advance and record the decision.
    Gate {
        #[arg(long)]
        session: String,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
    },
    /// Classify every corpus headline with a completion backend.
    Classify(ClassifyArgs),
    /// Write a fine-tuning dataset from labeled headlines.
    ExportFinetune {
        #[command(flatten)]
        labels: LabelsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded k-fold plan over the labeled items.
    Folds {
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        labels: LabelsArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a classification run against gold labels, or
    /// re-aggregation of a per-fold accuracy table.
    Evaluate {
        #[command(flatten)]
        labels: LabelsArg,
        #[arg(long)]
        run: Option<String>,
        /// Fold plan written by `folds`.
        #[arg(long, conflicts_with = "k")]
        plan: Option<PathBuf>,
        /// Build a fresh plan with this many folds.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON list of {model, per_fold, printed_average} rows.
        #[arg(long, conflicts_with_all = ["run", "plan", "k"])]
        fold_table: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Agreement between production labels and a classification run.
    Agreement {
        #[arg(long)]
        run: Option<String>,
    },
    /// Queue human–model disagreements for blind review.
    AdjudicateBuild {
        #[arg(long)]
        run: Option<String>,
        /// Share of items whose proposal is replaced by a random frame.
        #[arg(long, default_value_t = 0.0)]
        control_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        replace: bool,
    },
    /// Verdict counts and agreement rates of the adjudication queue.
    AdjudicateReport,
    /// Frame distribution per country.
    ReportFrames(ReportArgs),
    /// Frame counts per month.
    ReportMonths(ReportArgs),
    /// Sentiment per frame and country.
    ReportSentiment(ReportArgs),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Headline,
    HeadlineOrBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Definitions,
    Adjectives,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Human,
    Model,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Mock backend seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of unparseable mock answers.
    #[arg(long, default_value_t = 0.0)]
    garbage_rate: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Definitions)]
    strategy: StrategyArg,
    /// Model name; for the mock it defaults to a name derived from seed and
    /// garbage rate so differently seeded runs never share predictions.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LabelsArg {
    /// JSON Lines file of {article_id, label}; production labels otherwise.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum, default_value_t = SourceArg::Human, conflicts_with = "labels")]
    source: SourceArg,
    /// Classification run for `--source model`; the latest otherwise.
    #[arg(long)]
    run: Option<String>,
    #[command(flatten)]
    labels: LabelsArg,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

struct Env {
    config: WorkbenchConfig,
}

impl Env {
    fn open(&self, access: Access) -> Result<Workspace> {
        let codebook = self.config.codebook()?;
        Workspace::open(&self.config.data_dir, codebook, self.config.icr_threshold, access)
            .with_context(|| format!("cannot open data directory {}", self.config.data_dir.display()))
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_text(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        writeln!(out)?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            io::stdout().lock().write_all(bytes)?;
            Ok(())
        }
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn label_source(labels: &LabelsArg) -> Result<LabelSource> {
    match &labels.labels {
        Some(p) => Ok(LabelSource::Given(
            workspace::read_label_rows(open_reader(p)?)
                .with_context(|| format!("invalid labels file {}", p.display()))?,
        )),
        None => Ok(LabelSource::Human),
    }
}

fn report_source(args: &ReportArgs) -> Result<LabelSource> {
    if args.labels.labels.is_some() {
        return label_source(&args.labels);
    }
    Ok(match args.source {
        SourceArg::Human => LabelSource::Human,
        SourceArg::Model => LabelSource::Model(args.run.clone()),
    })
}

/// Parse argv and run; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = WorkbenchConfig::load(cli.config.as_deref())?;
    if let Some(d) = cli.data_dir {
        config.data_dir = d;
    }
    let env = Env { config };
    match cli.command {
        Command::Ingest { manifest, input, replace } => {
            let text = std::fs::read_to_string(&manifest)
                .with_context(|| format!("cannot read manifest {}", manifest.display()))?;
            let manifest = CorpusManifest::from_json(&text)?;
            let ws = env.open(Access::ReadWrite)?;
            let summary = ws.ingest(manifest, open_reader(&input)?, replace)?;
            for r in &summary.rejected {
                eprintln!("rejected {r}");
            }
            println!("ingested {} articles, rejected {} rows", summary.accepted, summary.rejected.len());
        }
        Command::Filter { keywords, scope } => {
            let scope = match scope {
                ScopeArg::Headline => KeywordScope::HeadlineOnly,
                ScopeArg::HeadlineOrBody => KeywordScope::HeadlineOrBody,
            };
            let keywords = if keywords.is_empty() { KeywordFilterSpec::no_vax().keywords().to_vec() } else { keywords };
            let spec = KeywordFilterSpec::new(keywords, scope)?;
            let ws = env.open(Access::ReadWrite)?;
            let (before, after) = ws.filter(&spec)?;
            println!("kept {after} of {before} articles");
        }
        Command::Stats { format } => {
            let ws = env.open(Access::ReadOnly)?;
            let stats = corpus::corpus_stats(&*ws.corpus()?)?;
            match format {
                Format::Csv => print_text(&stats.to_csv())?,
                Format::Json => print_json(&stats)?,
            }
        }
        Command::CodebookValidate { path } => {
            let codebook = match path {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                    Codebook::from_json(&text).with_context(|| format!("invalid codebook {}", p.display()))?
                }
                None => env.config.codebook()?,
            };
            println!("valid codebook {}", codebook.version());
        }
        Command::SessionCreate { id, phase, annotators, items_file, sample, seed, threshold, skip_gate_check } => {
            let items = match items_file {
                None => None,
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
                    Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
                }
            };
            let ws = env.open(Access::ReadWrite)?;
            let session = ws.create_session(SessionSpec {
                id,
                phase,
                annotators,
                items,
                sample: sample.map(|n| (n, seed.unwrap_or(0))),
                icr_threshold: threshold,
                skip_gate_check,
            })?;
            println!(
                "created session {} ({:?}, {} items, {} annotators)",
                session.id,
                session.phase,
                session.item_ids.len(),
                session.annotators.len()
            );
        }
        Command::Assign { session, seed, reassign } => {
            let ws = env.open(Access::ReadWrite)?;
            let s = ws.assign(&session, seed, reassign)?;
            for (annotator, items) in &s.assignment {
                println!("{annotator}\t{}", items.len());
            }
        }
        Command::Annotate { session, annotator, article, primary, secondary, submission_id } => {
            let ws = env.open(Access::ReadWrite)?;
            let (record, created) = ws.record_annotation(AnnotationInput {
                session_id: session,
                article_id: article,
                annotator_id: annotator,
                primary,
                secondary,
                submission_id,
                codebook_version: None,
            })?;
            if !created {
                eprintln!("submission already recorded");
            }
            print_json(&record)?;
        }
        Command::Icr { session, a, b } => {
            let ws = env.open(Access::ReadOnly)?;
            print_json(&ws.icr(&session, a.as_deref(), b.as_deref())?)?;
        }
        Command::Gate { session, a, b } => {
            let ws = env.open(Access::ReadWrite)?;
            let (decision, report) = ws.gate(&session, a.as_deref(), b.as_deref())?;
            let s = ws.session(&session)?;
            print_json(&serde_json::json!({
                "session_id": session,
                "phase": s.phase,
                "kappa": report.kappa,
                "percent_agreement": report.percent_agreement,
                "threshold": s.icr_threshold,
                "decision": decision,
                "next_phase": s.phase.next().filter(|_| decision == framelab_core::annotation::GateDecision::Advance),
            }))?;
        }
        Command::Classify(args) => classify(&env, args)?,
        Command::ExportFinetune { labels, out } => {
            let ws = env.open(Access::ReadOnly)?;
            let labeled = ws.labeled_headlines(&label_source(&labels)?)?;
            let mut buf = Vec::new();
            let n = inference::export_finetune(&labeled, &mut buf)?;
            write_output(out.as_deref(), &buf)?;
            eprintln!("wrote {n} examples");
        }
        Command::Folds { k, seed, labels, out } => {
            let ws = env.open(Access::ReadOnly)?;
            let ids: Vec<String> = ws.labels(&label_source(&labels)?)?.into_iter().map(|(id, _)| id).collect();
            let plan = evaluation::make_folds(&ids, k, seed)?;
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            let mut text = serde_json::to_vec_pretty(&plan)?;
            text.push(b'\n');
            write_output(out.as_deref(), &text)?;
            eprintln!("fold sizes {sizes:?}");
        }
        Command::Evaluate { labels, run, plan, k, seed, fold_table, format } => {
            if let Some(p) = fold_table {
                let rows: Vec<FoldTableRow> = serde_json::from_reader(open_reader(&p)?)
                    .with_context(|| format!("invalid fold table {}", p.display()))?;
                let report = evaluation::aggregate_fold_table(&rows);
                match format {
                    Format::Json => print_json(&report)?,
                    Format::Csv => {
                        let mut s = String::from("model,average,displayed,printed_average,consistent\n");
                        for r in &report.rows {
                            let printed = r.printed_average.map(|p| format!("{p:.2}")).unwrap_or_default();
                            s +=
                                &format!("{},{:.3},{},{},{}\n", r.model, r.average, r.displayed, printed, r.consistent);
                        }
                        print_text(&s)?;
                    }
                }
                for n in &report.notes {
                    eprintln!("note: {n}");
                }
                return Ok(());
            }
            let ws = env.open(Access::ReadOnly)?;
            let gold = ws.labels(&label_source(&labels)?)?;
            let preds: Vec<_> = {
                let ids: std::collections::HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
                ws.model_labels(run.as_deref())?.into_iter().filter(|(id, _)| ids.contains(id.as_str())).collect()
            };
            let plan: Option<FoldPlan> = match (plan, k) {
                (Some(p), _) => Some(
                    serde_json::from_reader(open_reader(&p)?)
                        .with_context(|| format!("invalid fold plan {}", p.display()))?,
                ),
                (None, Some(k)) => {
                    let ids: Vec<String> = gold.iter().map(|(id, _)| id.clone()).collect();
                    Some(evaluation::make_folds(&ids, k, seed)?)
                }
                (None, None) => None,
            };
            let report = evaluation::evaluate_predictions(&gold, &preds, plan.as_ref())?;
            match format {
                Format::Csv => print_text(&report.to_csv())?,
                Format::Json => print_json(&serde_json::json!({
                    "displayed_average": evaluation::display_accuracy(report.average),
                    "report": report,
                }))?,
            }
        }
        Command::Agreement { run } => {
            let ws = env.open(Access::ReadWrite)?;
            let (record, report) = ws.agreement(run.as_deref())?;
            print_json(&serde_json::json!({
                "evaluation_run": record.run_id,
                "classification_run": record.manifest.get("classification_run"),
                "n_overlap": report.n_overlap,
                "n_agree": report.n_agree,
                "agreement": report.agreement,
                "n_disagreements": report.disagreements.len(),
            }))?;
        }
        Command::AdjudicateBuild { run, control_rate, seed, replace } => {
            let ws = env.open(Access::ReadWrite)?;
            let (record, items) = ws.build_adjudication(run.as_deref(), control_rate, seed, replace)?;
            println!("queued {} items for blind review ({})", items.len(), record.run_id);
        }
        Command::AdjudicateReport => {
            let ws = env.open(Access::ReadOnly)?;
            print_json(&ws.adjudication_summary()?)?;
        }
        Command::ReportFrames(args) => {
            let ws = env.open(Access::ReadOnly)?;
            let r = ws.report_frames(&report_source(&args)?)?;
            match args.format {
                Format::Csv => print_text(&r.to_csv())?,
                Format::Json => print_json(&r)?,
            }
        }
        Command::ReportMonths(args) => {
            let ws = env.open(Access::ReadOnly)?;
            let r = ws.report_months(&report_source(&args)?)?;
            match args.format {
                Format::Csv => print_text(&r.to_csv())?,
                Format::Json => print_json(&r)?,
            }
        }
        Command::ReportSentiment(args) => {
            let ws = env.open(Access::ReadOnly)?;
            let r = ws.report_sentiment(&report_source(&args)?)?;
            match args.format {
                Format::Csv => print_text(&r.to_csv())?,
                Format::Json => print_json(&r)?,
            }
        }
        Command::Serve { bind } => {
            let addr = bind.unwrap_or(env.config.bind);
            let ws = Arc::new(env.open(Access::ReadWrite)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener =
                    tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
                tracing::info!(addr = %listener.local_addr()?, "serving");
                eprintln!("listening on http://{}", listener.local_addr()?);
                crate::service::serve(ws, listener, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn classify(env: &Env, args: ClassifyArgs) -> Result<()> {
    let mut config = env.config.backend.params.clone();
    if let Some(n) = args.max_parallel {
        config.max_parallel = n;
    }
    let backend: Box<dyn CompletionBackend> = match args.backend {
        BackendKind::Mock => {
            if !(0.0..=1.0).contains(&args.garbage_rate) {
                bail!("--garbage-rate {} outside [0, 1]", args.garbage_rate);
            }
            let mock = MockBackend::new(args.seed).with_garbage_rate(args.garbage_rate);
            config.model_name = args.model.clone().unwrap_or_else(|| mock.describe());
            Box::new(mock)
        }
        BackendKind::Http => {
            let url = env
                .config
                .backend
                .base_url
                .as_deref()
                .ok_or_else(|| anyhow!("the http backend needs backend.base_url in the configuration file"))?;
            if let Some(m) = &args.model {
                config.model_name = m.clone();
            }
            Box::new(HttpBackend::from_env(url))
        }
    };
    let strategy = match args.strategy {
        StrategyArg::Definitions => Strategy::Definitions,
        StrategyArg::Adjectives => Strategy::Adjectives,
    };
    let ws = env.open(Access::ReadWrite)?;
    let rt = tokio::runtime::Runtime::new()?;
    let (record, output) = rt.block_on(ws.classify(backend.as_ref(), &config, strategy))?;
    eprintln!(
        "run {}: {} requests, {} reused, {} failures",
        record.run_id,
        output.requests_issued,
        output.reused,
        output.failures.len()
    );
    print_json(&record.manifest)
}
