//! Command-line front end: validate, diagnose, repair, inject and evaluate
//! trajectory datasets.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use trajfix::backends::{parse_corpus, BackendError, KeywordRetriever, Meter};
use trajfix::diagnosis::{CoverageMode, Diagnoser, DiagnosisConfig, ErrorType};
use trajfix::harness::sim::write_simulation;
use trajfix::harness::{
    emit_report, inject_failure, load_dataset, repair_instance, run_pipeline, Backends, HarnessError, InjectError,
    InstanceError, RunConfig, Strategy,
};
use trajfix::metrics::exact_match;
use trajfix::prompts::PromptTemplates;
use trajfix::trajectory::{to_line, Trajectory};

#[derive(Parser)]
#[command(name = "trajfix", version, about = "Diagnose and repair failed agentic RAG trajectories")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every line of a JSONL file is a valid trajectory.
    Validate { input: PathBuf },
    /// Diagnose failed trajectories; one JSON line per trajectory.
    Diagnose {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repair failed trajectories with one strategy; emits repaired JSONL.
    Repair {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inject one labelled failure type into clean trajectories.
    Inject {
        input: PathBuf,
        #[arg(long = "type", value_parser = parse_error_type)]
        error_type: ErrorType,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write the report files.
    Eval {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Report directory; overrides `paths.output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a simulated dataset, script and config into a directory.
    Simulate { dir: PathBuf },
    /// Serve a keyword retriever over HTTP at POST /search.
    ServeRetriever {
        #[arg(long, default_value = "127.0.0.1:8088")]
        addr: String,
        /// JSONL corpus of documents; defaults to the bundled toy corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long, value_parser = parse_coverage)]
    coverage: Option<CoverageMode>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Replay a script instead of calling live endpoints.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Skip trajectories whose question the judge deems unanswerable.
    #[arg(long)]
    screen_noise: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_coverage(s: &str) -> Result<CoverageMode, String> {
    s.parse()
}

fn parse_error_type(s: &str) -> Result<ErrorType, String> {
    s.parse()
}

impl RunArgs {
    /// Defaults, then environment, then config file, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_env(|k| std::env::var(k).ok());
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        if let Some(s) = self.strategy {
            c.strategy = s;
        }
        if let Some(m) = self.coverage {
            c.coverage_mode = m;
        }
        if let Some(n) = self.concurrency {
            c.concurrency = n;
        }
        if let Some(p) = &self.script {
            c.backend.script = Some(p.clone());
        }
        if let Some(p) = &self.templates {
            c.templates = Some(p.clone());
        }
        c.screen_noise |= self.screen_noise;
        c.validate()?;
        Ok(c)
    }
}

fn templates(c: &RunConfig) -> Result<PromptTemplates> {
    Ok(match &c.templates {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// Gold-labelled trajectories that already answer correctly need no work.
fn already_correct(t: &Trajectory) -> bool {
    t.gold_answer
        .as_deref()
        .is_some_and(|g| exact_match(&t.predicted_answer, g) == 1)
}

fn hard(e: &InstanceError) -> Option<anyhow::Error> {
    e.hard_failure().map(|b| anyhow::Error::new(b.clone()))
}

fn validate(input: &Path) -> Result<()> {
    let data = load_dataset(input)?;
    let failed = data.iter().filter(|t| !already_correct(t)).count();
    println!("{}: {} trajectories valid ({failed} not known correct)", input.display(), data.len());
    Ok(())
}

fn diagnose(input: &Path, run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let config = run.resolve()?;
    let data = load_dataset(input)?;
    let backends = Backends::from_config(&config)?;
    let tpl = templates(&config)?;
    let dg = Diagnoser::new(
        backends.llm.as_ref(),
        &tpl,
        DiagnosisConfig {
            coverage_mode: config.coverage_mode,
            model: config.backend.llm_model.clone().unwrap_or_default(),
            ..DiagnosisConfig::default()
        },
    );
    let mut w = output(out)?;
    for t in data.iter().filter(|t| !already_correct(t)) {
        let mut meter = Meter::new();
        let line = match dg.diagnose_metered(&mut meter, t) {
            Ok(d) => json!({ "id": t.id, "diagnosis": d, "ledger": meter.ledger() }),
            Err(e) => {
                let e = InstanceError::from(e);
                if let Some(h) = hard(&e) {
                    return Err(h);
                }
                log::warn!("{}: {e}", t.id);
                json!({ "id": t.id, "error": e.to_string() })
            }
        };
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn repair(input: &Path, run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let config = run.resolve()?;
    let data = load_dataset(input)?;
    let backends = Backends::from_config(&config)?;
    let tpl = templates(&config)?;
    let mut w = output(out)?;
    let (mut repaired, mut errored) = (0, 0);
    for t in &data {
        if already_correct(t) {
            writeln!(w, "{}", to_line(t))?;
            continue;
        }
        match repair_instance(t, &config, &backends, &tpl) {
            Ok(run) => {
                let fixed = run.outcome.map(|o| o.repaired).unwrap_or_else(|| t.clone());
                writeln!(w, "{}", to_line(&fixed))?;
                repaired += 1;
            }
            Err(e) => {
                if let Some(h) = hard(&e) {
                    return Err(h);
                }
                log::warn!("{}: {e}", t.id);
                writeln!(w, "{}", to_line(t))?;
                errored += 1;
            }
        }
    }
    w.flush()?;
    eprintln!("{}: {repaired} repaired, {errored} errored", config.strategy);
    Ok(())
}

fn inject(input: &Path, error_type: ErrorType, seed: u64, out: Option<&Path>) -> Result<()> {
    let data = load_dataset(input)?;
    let mut w = output(out)?;
    let mut skipped = 0;
    for (i, t) in data.iter().enumerate() {
        match inject_failure(t, error_type, seed.wrapping_add(i as u64)) {
            Ok((injected, _)) => writeln!(w, "{}", to_line(&injected))?,
            Err(e @ InjectError::Skip { .. }) => {
                log::warn!("{e}");
                skipped += 1;
            }
            Err(e) => return Err(HarnessError::from(e).into()),
        }
    }
    w.flush()?;
    if skipped > 0 {
        eprintln!("skipped {skipped} of {} trajectories", data.len());
    }
    Ok(())
}

fn eval(input: &Path, run: &RunArgs, out: Option<&Path>) -> Result<()> {
    let config = run.resolve()?;
    let data = load_dataset(input)?;
    let backends = Backends::from_config(&config)?;
    let tpl = templates(&config)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("report"));
    match run_pipeline(&data, &config, &backends, &tpl) {
        Ok(report) => {
            emit_report(&report, &dir)?;
            print!("{}", report.summary_markdown());
            eprintln!("report written to {}", dir.display());
            Ok(())
        }
        Err(HarnessError::Aborted { error, partial }) => {
            emit_report(&partial, &dir)?;
            eprintln!(
                "partial report ({} instances) written to {}",
                partial.records.len(),
                dir.display()
            );
            Err(anyhow::Error::new(error))
        }
        Err(e) => Err(e.into()),
    }
}

fn serve_retriever(addr: &str, corpus: Option<&Path>) -> Result<()> {
    let retriever = match corpus {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KeywordRetriever::new(parse_corpus(&text)?)
        }
        None => KeywordRetriever::toy(),
    };
    let server = tiny_http::Server::http(addr).map_err(|e| anyhow!("binding {addr}: {e}"))?;
    eprintln!("serving {} documents on http://{addr}/search", retriever.docs().len());
    for mut req in server.incoming_requests() {
        let mut body = String::new();
        let parsed = req
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| e.to_string())
            .and_then(|_| serde_json::from_str::<serde_json::Value>(&body).map_err(|e| e.to_string()));
        let (status, reply) = match (req.method(), req.url(), parsed) {
            (tiny_http::Method::Post, "/search", Ok(v)) => match (v["query"].as_str(), v["top_k"].as_u64()) {
                (Some(q), Some(k)) => (200, json!({ "results": retriever.search(q, k as usize) })),
                _ => (400, json!({ "error": "expected {query: string, top_k: integer}" })),
            },
            (tiny_http::Method::Post, "/search", Err(e)) => (400, json!({ "error": e })),
            _ => (404, json!({ "error": "not found" })),
        };
        let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        let resp = tiny_http::Response::from_string(reply.to_string())
            .with_status_code(status)
            .with_header(header);
        if let Err(e) = req.respond(resp) {
            log::warn!("responding: {e}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { input } => validate(&input),
        Command::Diagnose { input, run, out } => diagnose(&input, &run, out.as_deref()),
        Command::Repair { input, run, out } => {
            if run.strategy.is_none() {
                bail!("repair needs --strategy");
            }
            repair(&input, &run, out.as_deref())
        }
        Command::Inject {
            input,
            error_type,
            seed,
            out,
        } => inject(&input, error_type, seed, out.as_deref()),
        Command::Eval { input, run, out } => eval(&input, &run, out.as_deref()),
        Command::Simulate { dir } => {
            write_simulation(&dir)?;
            eprintln!("wrote dataset.jsonl, script.json and config.toml to {}", dir.display());
            Ok(())
        }
        Command::ServeRetriever { addr, corpus } => serve_retriever(&addr, corpus.as_deref()),
    }
}

/// 2 for backend failures, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let runtime = |b: &BackendError| !matches!(b, BackendError::Config(_));
    let backend = e.chain().any(|c| {
        c.downcast_ref::<BackendError>().is_some_and(runtime)
            || c.downcast_ref::<HarnessError>().is_some_and(|h| match h {
                HarnessError::Backend(b) => runtime(b),
                other => other.is_backend(),
            })
    });
    if backend {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.chain()
                .any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
