use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wellness_eval::attention::{fidelity_report, read_attention_dump, render_attention_map, token_scores, RenderFormat};
use wellness_eval::ingest::{dataset_stats, write_posts_jsonl};
use wellness_eval::llm::{ChatTransport, LiveTransport, RecordingTransport, ReplayTransport, TranscriptStore};
use wellness_eval::orchestrate::{
    load_dataset, render_report, run_experiment, run_llm_experiment, EvaluationReport, ExperimentConfig,
    OrchestrateError, ReportFormat, RunSummary,
};

#[derive(Parser)]
#[command(name = "wellness-eval", version, about = "Robustness and explanation-fidelity evaluation for wellness classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print its statistics.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Also write the merged posts as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the reference model per seed and evaluate it.
    Train(Common),
    /// Evaluate imported predictions (`--predictions DIR`).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Attention fidelity of a dump directory against the dataset's spans.
    Fidelity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        attention: PathBuf,
        /// Render one sample's attention map instead of the summary.
        #[arg(long)]
        render: Option<String>,
        #[arg(long, value_enum, default_value = "ansi")]
        render_format: RenderArg,
    },
    /// Prompt the configured LLM (live or replayed) and score it.
    LlmRun {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replay: bool,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        shots_per_class: Option<usize>,
    },
    /// Merge the reports of finished runs and render them.
    Report {
        /// Run directories (or `report.json` files).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderArg {
    Ansi,
    Html,
}

/// Config file plus per-key overrides; each flag maps to one config key.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any key, e.g. `--set model.dims=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    dataset_path: Option<PathBuf>,
    #[arg(long)]
    label_count: Option<usize>,
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated, e.g. `200,345,546`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_length: Option<usize>,
    /// Comma-separated reservation levels.
    #[arg(long)]
    reservation: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, OrchestrateError> {
        let mut o = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| OrchestrateError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(d) = &self.dataset {
            push("dataset.kind", toml_str(d));
        }
        if let Some(p) = &self.dataset_path {
            push("dataset.path", toml_str(&p.to_string_lossy()));
        }
        if let Some(n) = self.label_count {
            push("dataset.label_count", n.to_string());
        }
        if let Some(l) = &self.loss {
            push("loss", toml_str(&l.to_lowercase()));
        }
        if let Some(s) = &self.seeds {
            push("seeds", format!("[{s}]"));
        }
        if let Some(e) = self.epochs {
            push("epochs", e.to_string());
        }
        if let Some(lr) = self.learning_rate {
            push("learning_rate", format!("{lr:?}"));
        }
        if let Some(m) = self.max_length {
            push("model.max_length", m.to_string());
        }
        if let Some(r) = &self.reservation {
            push("reservation.levels", format!("[{r}]"));
        }
        if let Some(d) = &self.output_dir {
            push("output_dir", toml_str(&d.to_string_lossy()));
        }
        Ok(o)
    }

    fn load(&self, extra: Vec<(String, String)>) -> Result<ExperimentConfig, OrchestrateError> {
        let mut overrides = self.overrides()?;
        overrides.extend(extra);
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_toml_str("", &overrides),
        }
    }
}

fn print_summary(s: &RunSummary) -> Result<(), OrchestrateError> {
    print!("{}", render_report(&s.report, ReportFormat::Markdown)?);
    eprintln!("run written to {}", s.run_dir.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<EvaluationReport, OrchestrateError> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| OrchestrateError::Report(format!("{}: {e}", file.display())))?;
    serde_json::from_str(&text).map_err(|e| OrchestrateError::Report(format!("{}: {e}", file.display())))
}

fn run(cli: Cli) -> Result<(), OrchestrateError> {
    match cli.command {
        Command::Ingest { common, out } => {
            let cfg = common.load(vec![])?;
            let posts = load_dataset(&cfg)?;
            let stats = dataset_stats(&posts);
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            if let Some(out) = out {
                let file = fs::File::create(&out).map_err(|e| OrchestrateError::Io { path: out.display().to_string(), message: e.to_string() })?;
                write_posts_jsonl(&posts, std::io::BufWriter::new(file))
                    .map_err(|e| OrchestrateError::Io { path: out.display().to_string(), message: e.to_string() })?;
            }
            Ok(())
        }
        Command::Train(common) => {
            let cfg = common.load(vec![("model.kind".into(), toml_str("reference"))])?;
            print_summary(&run_experiment(&cfg)?)
        }
        Command::Evaluate { common, predictions } => {
            let cfg = common.load(vec![
                ("model.kind".into(), toml_str("imported")),
                ("model.predictions".into(), toml_str(&predictions.to_string_lossy())),
            ])?;
            print_summary(&run_experiment(&cfg)?)
        }
        Command::Fidelity { common, attention, render, render_format } => {
            let cfg = common.load(vec![])?;
            let posts = load_dataset(&cfg)?;
            let records = read_attention_dump(&attention).map_err(|e| OrchestrateError::Stage {
                stage: "fidelity".into(),
                message: e.to_string(),
                provider: false,
            })?;
            let fail = |e: wellness_eval::attention::AttentionError| OrchestrateError::Stage {
                stage: "fidelity".into(),
                message: e.to_string(),
                provider: false,
            };
            if let Some(id) = render {
                let rec = records
                    .iter()
                    .find(|r| r.sample_id == id)
                    .ok_or_else(|| OrchestrateError::Config(format!("no attention record for {id}")))?;
                let post = posts
                    .iter()
                    .find(|p| p.id == id)
                    .ok_or_else(|| OrchestrateError::Config(format!("no post {id} in the dataset")))?;
                let scores = token_scores(rec, cfg.attention.aggregation).map_err(fail)?;
                let format = match render_format {
                    RenderArg::Ansi => RenderFormat::Ansi,
                    RenderArg::Html => RenderFormat::Html,
                };
                println!("{}", render_attention_map(rec, &post.text, &scores, &post.spans, format));
                return Ok(());
            }
            let spans: HashMap<String, _> = posts.into_iter().map(|p| (p.id, p.spans)).collect();
            let result = fidelity_report(&records, &spans, &cfg.attention).map_err(fail)?;
            println!("{}", serde_json::to_string_pretty(&result).expect("fidelity serializes"));
            Ok(())
        }
        Command::LlmRun { common, replay, transcript, shots_per_class } => {
            let mut extra = Vec::new();
            if replay {
                extra.push(("llm.replay".to_string(), "true".to_string()));
            }
            if let Some(t) = transcript {
                extra.push(("llm.transcript".to_string(), toml_str(&t.to_string_lossy())));
            }
            if let Some(n) = shots_per_class {
                extra.push(("llm.shots_per_class".to_string(), n.to_string()));
            }
            let cfg = common.load(extra)?;
            let path = cfg.llm.transcript.clone().unwrap_or_else(|| cfg.output_dir.join("transcript.jsonl"));
            let store = TranscriptStore::new(path);
            let provider_err = |e: wellness_eval::llm::LlmError| OrchestrateError::Stage {
                stage: "llm".into(),
                provider: e.is_provider(),
                message: e.to_string(),
            };
            let mut transport: Box<dyn ChatTransport> = if cfg.llm.replay {
                Box::new(ReplayTransport::from_store(&store).map_err(provider_err)?)
            } else {
                Box::new(RecordingTransport::new(LiveTransport::from_env(&cfg.llm.run.provider).map_err(provider_err)?, store))
            };
            print_summary(&run_llm_experiment(&cfg, transport.as_mut())?)
        }
        Command::Report { runs, format, out } => {
            let reports = runs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>, _>>()?;
            let merged = EvaluationReport::merge(reports)?;
            let format = match format {
                FormatArg::Markdown => ReportFormat::Markdown,
                FormatArg::Csv => ReportFormat::Csv,
            };
            let text = render_report(&merged, format)?;
            match out {
                Some(path) => fs::write(&path, text)
                    .map_err(|e| OrchestrateError::Io { path: path.display().to_string(), message: e.to_string() }),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
