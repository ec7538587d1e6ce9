//! `geoharvest` command line: the scraping workflow as file-connected
//! stages (assess, fetch, extract, geocode, quality, model, gridmap) plus
//! the synthetic site generator and its fixture server.

pub mod config;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use geoharvest_core::compliance::ViabilityAssessment;
use geoharvest_core::sitegen::{self, FailureScript, SyntheticSiteSpec, CENTROIDS_FILE, GAZETTEER_FILE, RULES_FILE, SITE_DIR};

use config::PipelineConfig;
use manifest::DirLock;
use stages::{Context, FetchOptions, ModelOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_COMPLIANCE: i32 = 4;

/// Config file written next to a generated site.
pub const PIPELINE_FILE: &str = "pipeline.json";
pub const ASSESSMENT_FILE: &str = "assessment.txt";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("blocked: {0}")]
    Compliance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Stage { .. } => EXIT_STAGE,
            CliError::Compliance(_) => EXIT_COMPLIANCE,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::io_msg(path, e)
    }

    pub(crate) fn io_msg(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage: "io".into(),
            message: format!("{}: {e}", path.display()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geoharvest", version, about = "Polite geographic web scraping and hedonic rent modeling")]
pub struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FetchArgs {
    /// Seconds between requests to one host.
    #[arg(long)]
    pub min_delay: Option<f64>,
    /// Allowed local hours, e.g. `22-5`.
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub user_agent: Option<String>,
    /// Request paths that robots.txt disallows. Logged as a warning.
    #[arg(long)]
    pub unsafe_ignore_robots: bool,
    /// Fetch even though the viability assessment says stop.
    #[arg(long)]
    pub acknowledge_risk: bool,
    /// Fetch listings again that an earlier run already stored.
    #[arg(long)]
    pub refetch: bool,
}

impl FetchArgs {
    fn options(&self) -> FetchOptions {
        FetchOptions {
            min_delay_s: self.min_delay,
            window: self.window.clone(),
            max_retries: self.max_retries,
            user_agent: self.user_agent.clone(),
            unsafe_ignore_robots: self.unsafe_ignore_robots,
            acknowledge_risk: self.acknowledge_risk,
            refetch: self.refetch,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Model spec (JSON) replacing the config's.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Training rows; the rest is held out.
    #[arg(long)]
    pub train_n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Fit on the quality stage's feature rows.
    Fit(ModelArgs),
    /// Score the fitted model on the held-out rows.
    Evaluate,
    /// Predict on a regular grid over the bbox.
    Gridmap,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer the viability checklist and check robots.txt.
    Assess,
    /// Enumerate result pages and download listings.
    Fetch(FetchArgs),
    /// Extract listing records from fetched pages.
    Extract,
    /// Normalize addresses, geocode and compute distances.
    Geocode,
    /// Plausibility report, imputation, exclusions and feature rows.
    Quality,
    /// Fit, evaluate or map a model.
    Model {
        #[command(subcommand)]
        action: ModelCommand,
    },
    /// Same as `model gridmap`.
    Gridmap,
    /// Every stage in order.
    All {
        #[command(flatten)]
        fetch: FetchArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Generate a synthetic listing site with its ground truth.
    Sitegen {
        /// Site spec (JSON); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Serve a generated site over HTTP on 127.0.0.1.
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        /// JSON map from path to status codes answered before the file.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Request log, rewritten as requests arrive.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required for pipeline stages".into()))?;
    let cfg = PipelineConfig::load(path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Validation("no output directory: pass --out or set `out` in the config".into()))?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    Ok(Context { cfg, out, seed })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sitegen { spec } => return run_sitegen(cli, spec.as_deref()),
        Command::Serve { dir, port, script, log } => return run_serve(dir, *port, script.as_deref(), log.as_deref()),
        _ => {}
    }
    let ctx = context(cli)?;
    let _lock = DirLock::acquire(&ctx.out)?;
    match &cli.command {
        Command::Assess => stages::assess(&ctx).map(|_| ()),
        Command::Fetch(a) => stages::fetch(&ctx, &a.options()),
        Command::Extract => stages::extract(&ctx),
        Command::Geocode => stages::geocode(&ctx),
        Command::Quality => stages::quality(&ctx),
        Command::Model { action } => match action {
            ModelCommand::Fit(a) => stages::model_fit(&ctx, &model_options(a)),
            ModelCommand::Evaluate => stages::model_evaluate(&ctx),
            ModelCommand::Gridmap => stages::gridmap(&ctx),
        },
        Command::Gridmap => stages::gridmap(&ctx),
        Command::All { fetch, model } => {
            stages::assess(&ctx)?;
            stages::fetch(&ctx, &fetch.options())?;
            stages::extract(&ctx)?;
            stages::geocode(&ctx)?;
            stages::quality(&ctx)?;
            stages::model_fit(&ctx, &model_options(model))?;
            stages::model_evaluate(&ctx)?;
            stages::gridmap(&ctx)
        }
        Command::Sitegen { .. } | Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn model_options(a: &ModelArgs) -> ModelOptions {
    ModelOptions {
        spec: a.spec.clone(),
        train_n: a.train_n,
    }
}

fn run_sitegen(cli: &Cli, spec: Option<&Path>) -> Result<(), CliError> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::Validation("sitegen needs --out".into()))?;
    let mut s = match spec {
        Some(p) => SyntheticSiteSpec::from_json(&config::read_text(p)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => SyntheticSiteSpec::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    let site = sitegen::generate_site(&s).map_err(|e| CliError::Validation(e.to_string()))?;
    site.write_to(out).map_err(|e| CliError::io_msg(out, e))?;
    let answers = ViabilityAssessment::benign().to_text();
    std::fs::write(out.join(ASSESSMENT_FILE), answers).map_err(|e| CliError::io(out, e))?;
    let cfg = fixture_config(&s);
    let mut text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    text.push('\n');
    std::fs::write(out.join(PIPELINE_FILE), text).map_err(|e| CliError::io(out, e))?;
    println!(
        "sitegen: {} listings on {} pages in {}; run `geoharvest all --config {}`",
        s.n_listings,
        s.pages,
        out.display(),
        out.join(PIPELINE_FILE).display()
    );
    Ok(())
}

/// Pipeline config for a generated site, with paths relative to the
/// directory the site was written to.
pub fn fixture_config(s: &SyntheticSiteSpec) -> serde_json::Value {
    serde_json::json!({
        "target": {"fixture_dir": SITE_DIR},
        "query": {"place": s.place, "object_type": "wohnungen", "sort_orders": s.sort_orders},
        "rules": RULES_FILE,
        "assessment": ASSESSMENT_FILE,
        "geocoder": {"stub": {"gazetteer": GAZETTEER_FILE}},
        "city": s.city,
        "center": {"lat": s.center_lat, "lon": s.center_lon},
        "bbox": s.bbox,
        "centroids": CENTROIDS_FILE,
        "scrape_year": s.scrape_year,
        "seed": s.seed,
    })
}

fn run_serve(dir: &Path, port: u16, script: Option<&Path>, log: Option<&Path>) -> Result<(), CliError> {
    let script = match script {
        Some(p) => serde_json::from_str(&config::read_text(p)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => FailureScript::new(),
    };
    let server = sitegen::serve(dir, port, script).map_err(|e| CliError::Validation(e.to_string()))?;
    println!("serving {} at {}", dir.display(), server.base_url());
    let mut written = 0;
    loop {
        std::thread::sleep(Duration::from_millis(500));
        let Some(path) = log else { continue };
        let n = server.log().len();
        if n != written {
            let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            server.write_log(std::io::BufWriter::new(f)).map_err(|e| CliError::io(path, e))?;
            written = n;
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
