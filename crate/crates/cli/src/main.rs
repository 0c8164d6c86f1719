use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use geobehave_core::aggregation::{Period, Semantics};
use geobehave_core::analysis::{associate, predict_intervention, CausalDag, Dataset, FitResult};
use geobehave_core::config::Config;
use geobehave_core::ingest::Store;
use geobehave_core::lec::LecRegistry;
use geobehave_core::portal::{parse_delta, render, Portal, Roles, Snapshot};
use geobehave_cli::pipeline::{self, read_text, write_atomic};
use geobehave_cli::{server, CliError};
use geobehave_sim::SimConfig;

#[derive(Parser)]
#[command(name = "geobehave", version, about = "Geo-referenced behavioral indicators from wearable and phone streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study tree (raw streams, POIs, regions, statistics, truth).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse raw stream files (or directories of them) into a store.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        /// Participant records, one JSON object per line.
        #[arg(long)]
        participants: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute base indicators for every participant in a store.
    Extract {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute region visits and gated population indicators.
    Aggregate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        /// `from..to` in RFC 3339 dates or times; either side may be empty.
        #[arg(long, default_value = "..")]
        period: Period,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k_min: Option<usize>,
    },
    /// Compute local environmental characteristics of regions.
    Lec {
        #[arg(long)]
        regions: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        /// LEC registry (TOML); the built-in registry when omitted.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also publish the LECs and statistics into this store for `serve`.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    #[command(subcommand)]
    Analyze(Analyze),
    /// Serve the portal API, and optionally a static UI bundle.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Token-to-role mapping (TOML).
        #[arg(long)]
        roles: Option<PathBuf>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Re-read the store at this interval.
        #[arg(long)]
        reload_secs: Option<u64>,
    },
    /// Print the effective pipeline configuration.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// Build the analysis dataset of one semantics from a store.
    Dataset {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        semantics: Semantics,
        #[arg(long, default_value = "..")]
        period: Period,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an exposure-outcome association adjusted by the DAG.
    Associate {
        /// Causal DAG (JSON); the built-in DAG when omitted.
        #[arg(long)]
        dag: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        exposure: String,
        #[arg(long)]
        outcome: String,
        #[arg(long = "covariate")]
        covariates: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict an outcome change for a region under an exposure change.
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        region: String,
        #[arg(long, value_parser = parse_delta)]
        delta: (String, f64),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the participant mix with census margins.
    Balance {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the built-in causal DAG.
    Dag,
}

fn config(path: Option<&Path>) -> Result<Config, CliError> {
    Config::load(path).map_err(CliError::Invalid)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_file<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Runs a command; `Ok(false)` reports partial failure already printed.
fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Simulate { config, out, threads } => {
            let cfg = match config {
                Some(p) => SimConfig::from_toml(&read_text(&p)?)?,
                None => SimConfig::default(),
            };
            let summary = geobehave_sim::write_tree_with(&out, &cfg, threads.unwrap_or_else(geobehave_sim::default_threads))?;
            emit(None, &render(&summary))?;
        }
        Command::Ingest { files, store, participants, config: c } => {
            config(c.as_deref())?;
            let store = Store::open(&store)?;
            let report = pipeline::ingest(&store, &files, participants.as_deref())?;
            emit(None, &render(&report))?;
            let failed: Vec<_> = report.iter().filter(|r| r.error.is_some()).collect();
            for f in &failed {
                eprintln!("{}: {}", f.file, f.error.as_deref().unwrap_or_default());
            }
            return Ok(failed.is_empty());
        }
        Command::Extract { store, pois, out, config: c } => {
            let cfg = config(c.as_deref())?;
            let store = Store::open(&store)?;
            let pois = pipeline::read_pois(&pois)?;
            let done = pipeline::extract(&store, &pois, &cfg, out.as_deref())?;
            emit(None, &render(&done))?;
        }
        Command::Aggregate { store, regions, period, out, config: c, k_min } => {
            let mut cfg = config(c.as_deref())?;
            if let Some(k) = k_min {
                cfg.aggregation.k_min = k;
            }
            let store = Store::open(&store)?;
            let regions = pipeline::read_regions(&regions)?;
            let ind = pipeline::aggregate(&store, &regions, period, &cfg)?;
            write_atomic(&out.join("population.jsonl"), pipeline::jsonl(&ind).as_bytes())?;
            let released = ind.iter().filter(|i| !i.suppressed).count();
            eprintln!("{} indicators, {released} released, {} suppressed", ind.len(), ind.len() - released);
        }
        Command::Lec { regions, pois, stats, registry, out, store } => {
            let regions = pipeline::read_regions(&regions)?;
            let pois = pipeline::read_pois(&pois)?;
            let table = stats.as_deref().map(pipeline::read_stat_table).transpose()?;
            let registry = match registry {
                Some(p) => LecRegistry::from_toml(&read_text(&p)?)?,
                None => LecRegistry::default_registry(),
            };
            let res = pipeline::lecs(&regions, &pois, table.as_ref(), &registry);
            write_atomic(&out, render(&res.values).as_bytes())?;
            if let Some(s) = store {
                pipeline::publish_environment(&Store::open(&s)?, &res.values, table.as_ref(), None)?;
            }
            for f in &res.failures {
                eprintln!("{} for region {}: {}", f.spec, f.region_id, f.error);
            }
            return Ok(res.failures.is_empty());
        }
        Command::Analyze(a) => analyze(a)?,
        Command::Serve { store, bind, roles, k_min, ui, reload_secs } => {
            let roles = match roles {
                Some(p) => Roles::from_toml(&read_text(&p)?).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?,
                None => Roles::default(),
            };
            if let Some(dir) = ui.as_ref().filter(|d| !d.is_dir()) {
                return Err(CliError::Invalid(format!("{} is not a directory", dir.display())));
            }
            let snap = Snapshot::load(&Store::open(&store)?, k_min)?;
            let portal = Arc::new(Portal::new(snap, roles));
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::io(Path::new(&bind), e))?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| CliError::io(Path::new(&bind), e))?;
                let addr = listener.local_addr().map_err(|e| CliError::io(Path::new(&bind), e))?;
                eprintln!("listening on http://{addr}");
                if let Some(s) = reload_secs.filter(|&s| s > 0) {
                    server::spawn_reload(portal.clone(), store.clone(), k_min, Duration::from_secs(s));
                }
                server::serve(listener, portal, ui).await.map_err(|e| CliError::io(Path::new(&bind), e))
            })?;
        }
        Command::Config { config: c } => emit(None, &config(c.as_deref())?.to_toml())?,
    }
    Ok(true)
}

fn analyze(a: Analyze) -> Result<(), CliError> {
    match a {
        Analyze::Dataset { store, semantics, period, k_min, out } => {
            let snap = Snapshot::load(&Store::open(&store)?, k_min)?;
            emit(out.as_deref(), &render(&snap.dataset(semantics, period)?))
        }
        Analyze::Associate { dag, data, exposure, outcome, covariates, out } => {
            let dag = match dag {
                Some(p) => CausalDag::from_json(&read_text(&p)?)?,
                None => CausalDag::default_dag(),
            };
            let ds: Dataset = json_file(&data)?;
            let fit = associate(&dag, &ds, &exposure, &outcome, &covariates)?;
            emit(out.as_deref(), &render(&fit))
        }
        Analyze::Predict { fit, region, delta: (name, delta), out } => {
            let fit: FitResult = json_file(&fit)?;
            if name != fit.exposure {
                return Err(CliError::Invalid(format!("delta names `{name}` but the fit's exposure is `{}`", fit.exposure)));
            }
            emit(out.as_deref(), &render(&predict_intervention(&fit, &region, delta)?))
        }
        Analyze::Balance { store, config: c } => {
            let cfg = config(c.as_deref())?;
            emit(None, &render(&pipeline::balance(&Store::open(&store)?, &cfg)?))
        }
        Analyze::Dag => emit(None, &render(&CausalDag::default_dag().to_file())),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
