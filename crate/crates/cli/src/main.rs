use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlm_audit_core::corpus::ExtractionBackend;
use mlm_audit_core::gateway::ModelHandle;
use mlm_audit_models::MODEL_CACHE_ENV;
use mlm_audit_report::config::AuditConfig;
use mlm_audit_report::pipeline::Runner;
use mlm_audit_report::Result;

#[derive(Parser)]
#[command(name = "mlm-audit", version, about = "Audit masked language models for speciesist bias")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model id or directory; repeat for several. Replaces the configured list.
    #[arg(long = "model", global = true)]
    models: Vec<String>,
    /// Reuse cached model outputs from an earlier run.
    #[arg(long, global = true)]
    cached: bool,
    /// Local model cache.
    #[arg(long, global = true, env = MODEL_CACHE_ENV)]
    model_dir: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Name lexicon.
    Lexicon {
        #[command(subcommand)]
        action: LexiconCmd,
    },
    /// Template probes.
    Probe {
        #[command(subcommand)]
        action: ProbeCmd,
    },
    /// Word shifts and their sentiment.
    Analyze {
        #[command(subcommand)]
        action: AnalyzeCmd,
    },
    /// Corpus sentences and corpus-based bias.
    Corpus {
        #[command(subcommand)]
        action: CorpusCmd,
    },
    /// Pseudo-perplexity.
    Score {
        #[command(subcommand)]
        action: ScoreCmd,
    },
    /// Every stage.
    Report {
        #[command(subcommand)]
        action: ReportCmd,
    },
}

#[derive(Subcommand)]
enum LexiconCmd {
    /// Filter candidate names by corpus frequency.
    Build {
        #[arg(long)]
        threshold: Option<u64>,
    },
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Mean mask distributions over the template family.
    Templates,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Shifted words, token match rates and clustering.
    Shifts {
        #[arg(long)]
        z_threshold: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Sentiment of the shifted words per cluster and direction.
    Sentiment,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Extract relative-clause sentences and pronoun counts.
    Extract {
        #[arg(long)]
        probe: Option<PathBuf>,
        #[arg(long, value_parser = parse_backend)]
        backend: Option<ExtractionBackend>,
    },
    /// Bias scores from extracted sentences.
    Bias {
        #[arg(long)]
        max_per_class: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ScoreCmd {
    /// Natural versus word-shuffled sentences.
    Pppl {
        #[arg(long)]
        sample_size: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    All,
}

fn parse_backend(s: &str) -> std::result::Result<ExtractionBackend, String> {
    match s {
        "heuristic" => Ok(ExtractionBackend::Heuristic),
        "preparsed_ingest" | "preparsed" => Ok(ExtractionBackend::PreparsedIngest),
        _ => Err(format!("unknown backend `{s}` (heuristic, preparsed_ingest)")),
    }
}

fn load_config(g: &GlobalArgs) -> Result<AuditConfig> {
    let mut cfg = match &g.config {
        Some(path) => AuditConfig::load(path)?,
        None => AuditConfig::default(),
    };
    if let Some(outdir) = &g.outdir {
        cfg.outdir = outdir.clone();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if !g.models.is_empty() {
        cfg.models = g.models.clone();
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut AuditConfig, command: &Command) {
    match command {
        Command::Lexicon {
            action: LexiconCmd::Build { threshold: Some(t) },
        } => cfg.lexicon.threshold = *t,
        Command::Analyze {
            action: AnalyzeCmd::Shifts { z_threshold, top_k },
        } => {
            if let Some(z) = z_threshold {
                cfg.shifts.z_threshold = *z;
            }
            if let Some(k) = top_k {
                cfg.shifts.top_k = *k;
            }
        }
        Command::Corpus {
            action: CorpusCmd::Extract { probe, backend },
        } => {
            if let Some(p) = probe {
                cfg.corpus.probe = Some(p.clone());
            }
            if let Some(b) = backend {
                cfg.corpus.backend = *b;
            }
        }
        Command::Corpus {
            action: CorpusCmd::Bias { max_per_class: Some(n) },
        } => cfg.bias.max_per_class = *n,
        Command::Score {
            action: ScoreCmd::Pppl { sample_size: Some(n) },
        } => cfg.pppl.sample_size = *n,
        _ => {}
    }
}

/// Run `stage` for every configured model; a failure is logged and the
/// remaining models still run. Returns whether every model succeeded.
fn per_model<F>(runner: &Runner, stage: &str, mut f: F) -> bool
where
    F: FnMut(&Runner, &ModelHandle) -> Result<()>,
{
    let mut ok = true;
    for model in &runner.cfg.models {
        let outcome = runner.load_model(model).and_then(|h| f(runner, &h));
        if let Err(e) = outcome {
            log::error!("{model} {stage}: {e}");
            ok = false;
        }
    }
    ok
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli.global)?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    let runner = Runner::new(cfg, cli.global.cached, cli.global.model_dir.clone());

    let ok = match cli.command {
        Command::Lexicon { .. } => {
            runner.lexicon_build()?;
            true
        }
        Command::Probe { .. } => {
            let lexicon = runner.lexicon()?;
            per_model(&runner, "probe templates", |r, h| {
                r.probe_templates(h, &lexicon).map(drop)
            })
        }
        Command::Analyze {
            action: AnalyzeCmd::Shifts { .. },
        } => {
            let lexicon = runner.lexicon()?;
            per_model(&runner, "analyze shifts", |r, h| {
                let probes = r.probe_templates(h, &lexicon)?;
                r.analyze_shifts(h, &lexicon, &probes).map(drop)
            })
        }
        Command::Analyze {
            action: AnalyzeCmd::Sentiment,
        } => {
            let lexicon = runner.lexicon()?;
            per_model(&runner, "analyze sentiment", |r, h| {
                let probes = r.probe_templates(h, &lexicon)?;
                let shifts = r.analyze_shifts(h, &lexicon, &probes)?;
                r.analyze_sentiment(h.model_id(), &shifts).map(drop)
            })
        }
        Command::Corpus {
            action: CorpusCmd::Extract { .. },
        } => {
            let lexicon = runner.lexicon()?;
            let stats = runner.corpus_extract(&lexicon)?;
            for (corpus, s) in stats {
                log::info!(
                    "{corpus}: {} documents, {} sentences, {} extracted, {} malformed lines",
                    s.documents,
                    s.sentences,
                    s.extracted,
                    s.malformed
                );
            }
            true
        }
        Command::Corpus {
            action: CorpusCmd::Bias { .. },
        } => {
            let lexicon = runner.lexicon()?;
            per_model(&runner, "corpus bias", |r, h| r.corpus_bias(h, &lexicon).map(drop))
        }
        Command::Score { .. } => per_model(&runner, "score pppl", |r, h| r.score_pppl(h).map(drop)),
        Command::Report { .. } => {
            let statuses = runner.report_all()?;
            statuses.iter().all(|s| s.status != "failed")
        }
    };
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("some stages failed; see the log above");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
