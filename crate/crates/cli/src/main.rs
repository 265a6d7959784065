use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use novelkg_annotate::service::{AppState, ServiceOptions};
use novelkg_core::clustering::Algorithm;
use novelkg_core::embeddings::Metric;
use novelkg_core::pipeline::{self, PipelineConfig, PipelineError, RunReport, Stage};
use novelkg_core::provider::{ProviderSpec, ReferenceBackend};
use novelkg_core::synthetic::{generate, SynthConfig};

const CONFIG_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "novelkg", version, about = "Unsupervised knowledge graphs from novels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline described by a config file.
    Extract {
        config: PathBuf,
        /// Number of k-means clusters.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// kmeans or dbscan.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// cosine or euclidean.
        #[arg(long)]
        metric: Option<Metric>,
        /// Embedding and summarization provider: none, builtin:DIM, exec:CMD or an http(s) URL.
        #[arg(long)]
        provider: Option<ProviderSpec>,
        /// Reuse artifacts of earlier stages from the output directory.
        #[arg(long, default_value = "corpus")]
        from_stage: Stage,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report of a finished run.
    Stats { dir: PathBuf },
    /// Serve a finished run for review.
    Serve {
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Static review UI to serve next to the API.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Annotation store; defaults to DIR/annotations.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Classifier distance threshold.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Reference model provider on stdin/stdout.
    Provider {
        #[arg(long, default_value_t = 256)]
        dim: usize,
    },
    /// Write the synthetic evaluation corpus with its ground truth.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        two_casts: bool,
    },
}

fn print_report(report: &RunReport) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| PipelineError::Config(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn fail(err: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("novelkg: {err}");
    ExitCode::from(code)
}

fn pipeline_result(result: Result<(), PipelineError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code() as u8;
            fail(e, code)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn extract(
    path: PathBuf,
    k: Option<usize>,
    seed: Option<u64>,
    algorithm: Option<Algorithm>,
    metric: Option<Metric>,
    provider: Option<ProviderSpec>,
    from: Stage,
    out: Option<PathBuf>,
) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&path)?;
    if let Some(k) = k {
        config.clustering.k = k;
    }
    if let Some(seed) = seed {
        config.clustering.seed = seed;
    }
    if let Some(a) = algorithm {
        config.clustering.algorithm = a;
    }
    if let Some(m) = metric {
        config.clustering.metric = m;
    }
    if let Some(p) = provider {
        config.embedding.provider = p.clone();
        config.summarization.provider = p;
    }
    if out.is_some() {
        config.output = out;
    }
    let report = pipeline::run(&config, from)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    eprintln!("{}", report.summary);
    print_report(&report)
}

fn serve(dir: PathBuf, addr: SocketAddr, ui_dir: Option<PathBuf>, store: Option<PathBuf>, tau: Option<f64>) -> ExitCode {
    let options = ServiceOptions { store_dir: store, ui_dir: ui_dir.clone(), tau, embedding: None };
    let state = match AppState::load(&dir, &options) {
        Ok(s) => Arc::new(s),
        Err(novelkg_annotate::service::ServiceError::Run(e)) => return pipeline_result(Err(e)),
        Err(e) => return fail(e, 2),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(e, 2),
    };
    match runtime.block_on(novelkg_annotate::service::serve(state, ui_dir.as_deref(), addr)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e, 2),
    }
}

fn synth(out: PathBuf, seed: u64, two_casts: bool) -> ExitCode {
    let corpus = generate(&SynthConfig { seed, two_casts, ..Default::default() });
    match corpus.write_to(&out) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e, 2),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    match cli.command {
        Command::Extract { config, k, seed, algorithm, metric, provider, from_stage, out } => {
            pipeline_result(extract(config, k, seed, algorithm, metric, provider, from_stage, out))
        }
        Command::Stats { dir } => pipeline_result(pipeline::stats(&dir).and_then(|r| print_report(&r))),
        Command::Serve { dir, addr, ui_dir, store, tau } => serve(dir, addr, ui_dir, store, tau),
        Command::Provider { dim } => {
            let stdin = std::io::stdin();
            let mut stdout = std::io::stdout().lock();
            let result = novelkg_core::provider::serve(&mut ReferenceBackend { dim }, BufReader::new(stdin.lock()), &mut stdout);
            let _ = stdout.flush();
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e, 3),
            }
        }
        Command::Synth { out, seed, two_casts } => synth(out, seed, two_casts),
    }
}
