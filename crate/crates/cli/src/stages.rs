//! Pipeline stages. Each reads its predecessor's files from the output
//! directory, writes its own under `<out>/<stage>/` and records a run
//! manifest. Only fetch, and geocode with a network backend, may open
//! sockets.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use geoharvest_core::clock::{Clock, SimulatedClock, SystemClock};
use geoharvest_core::compliance::{assess_viability, is_allowed, ComplianceVerdict, RobotsPolicy, VerdictLevel, ViabilityAssessment};
use geoharvest_core::extractor::{extract_record, id_from_url, read_jsonl, write_csv, write_jsonl, ExtractionRuleSet, ListingRecord};
use geoharvest_core::fetcher::{enumerate_listings, FetchPlan, FetchResult, FetchStatus, Fetcher, TimeWindow};
use geoharvest_core::geo::{locate_records, GeocodeBackend, Geocoder, LocateSummary, NominatimBackend, StubBackend};
use geoharvest_core::model::{
    build_features, evaluate, fit_gam, fit_random_forest, prediction_grid, split_train_test, FeatureEncoder, FeatureSet, FittedModel,
    ModelKind,
};
use geoharvest_core::net::{with_network_denied, FileTransport, HttpTransport, Transport};
use geoharvest_core::quality::{apply_exclusions, default_rules, impute_distance_by_postal, quality_report, PostalCentroids, RuleBook};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::config::{read_text, GeocoderConfig, ModelSpec, PipelineConfig, Target};
use crate::manifest::{self, hash_files, read_manifest, sha256_file, write_manifest, Predecessor, RunManifest, StageIo, StageStatus};
use crate::CliError;

pub const STAGES: [&str; 7] = ["assess", "fetch", "extract", "geocode", "quality", "model", "gridmap"];

fn predecessor_of(stage: &str) -> Option<&'static str> {
    match stage {
        "fetch" => Some("assess"),
        "extract" => Some("fetch"),
        "geocode" => Some("extract"),
        "quality" => Some("geocode"),
        "model" => Some("quality"),
        "evaluate" | "gridmap" => Some("model"),
        _ => None,
    }
}

/// Shared state of one invocation.
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }
}

/// Run `body` as stage `stage` and write its manifest, whether it succeeds
/// or not. Offline stages run with network access denied.
pub fn run_stage(
    ctx: &Context,
    stage: &str,
    network: bool,
    body: impl FnOnce(&mut StageIo) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let started_at = Utc::now();
    let t0 = Instant::now();
    fs::create_dir_all(ctx.dir(stage)).map_err(|e| CliError::io(&ctx.dir(stage), e))?;
    let predecessor = match predecessor_of(stage) {
        Some(p) => {
            let path = manifest::manifest_path(&ctx.out, p);
            let manifest_sha256 = sha256_file(&path).map_err(|_| {
                CliError::Validation(format!("stage {stage} needs the output of {p}; run `geoharvest {p}` first"))
            })?;
            if read_manifest(&ctx.out, p)?.status != StageStatus::Ok {
                return Err(CliError::Validation(format!("stage {p} did not complete; rerun it before {stage}")));
            }
            Some(Predecessor {
                stage: p.to_string(),
                manifest_sha256,
            })
        }
        None => None,
    };
    let mut io = StageIo::default();
    log::info!("stage {stage} started");
    let result = if network { body(&mut io) } else { with_network_denied(|| body(&mut io)) };
    let (status, error) = match &result {
        Ok(()) => (StageStatus::Ok, None),
        Err(e) => (StageStatus::Failed, Some(e.to_string())),
    };
    let m = RunManifest {
        stage: stage.to_string(),
        status,
        error,
        seed: ctx.seed,
        config: ctx.config_json(),
        predecessor,
        inputs: hash_files(&ctx.out, &io.inputs),
        outputs: hash_files(&ctx.out, &io.outputs),
        notes: io.notes,
        started_at,
        duration_s: t0.elapsed().as_secs_f64(),
    };
    write_manifest(&ctx.out, &m)?;
    log::info!("stage {stage} finished in {:.2}s", m.duration_s);
    result
}

fn stage_err(stage: &str) -> impl Fn(String) -> CliError + '_ {
    move |message| CliError::Stage {
        stage: stage.to_string(),
        message,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("serializable");
    s.push('\n');
    s
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn load_rules(cfg: &PipelineConfig) -> Result<ExtractionRuleSet, CliError> {
    ExtractionRuleSet::from_json(&read_text(&cfg.rules)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", cfg.rules.display())))
}

fn fixture_transport(cfg: &PipelineConfig) -> Option<FileTransport> {
    match &cfg.target {
        Target::FixtureDir(d) => Some(FileTransport::new(d)),
        Target::BaseUrl(_) => None,
    }
}

// ---------------------------------------------------------------- assess

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessOutcome {
    pub verdict: ComplianceVerdict,
    /// False for live targets, whose robots.txt is read by `fetch`.
    pub robots_checked: bool,
}

pub fn assess(ctx: &Context) -> Result<AssessOutcome, CliError> {
    let mut outcome = None;
    run_stage(ctx, "assess", false, |io| {
        let cfg = &ctx.cfg;
        io.input(&cfg.assessment);
        let answers = ViabilityAssessment::parse(&read_text(&cfg.assessment)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", cfg.assessment.display())))?;
        let mut verdict = assess_viability(&answers).map_err(|e| CliError::Validation(e.to_string()))?;
        let robots_checked = match fixture_transport(cfg) {
            Some(t) => {
                let base = cfg.base_url();
                let mut robots_url = base.clone();
                robots_url.set_path("/robots.txt");
                let resp = t.get(&robots_url, &cfg.politeness.user_agent).map_err(|e| CliError::Validation(e.to_string()))?;
                let host = geoharvest_core::fetcher::authority(&base);
                let policy = match resp.status {
                    200..=299 => RobotsPolicy::parse(&String::from_utf8_lossy(&resp.body), &host, cfg.fixture_start),
                    _ => RobotsPolicy::permissive(&host),
                };
                let allowed = cfg
                    .search_query()
                    .first_page_urls()
                    .iter()
                    .all(|u| is_allowed(&policy, u.path(), &cfg.politeness.user_agent));
                verdict = verdict.with_robots(allowed);
                true
            }
            None => {
                io.note("robots.txt of the live target is checked by the fetch stage");
                false
            }
        };
        let dir = ctx.dir("assess");
        let o = AssessOutcome { verdict, robots_checked };
        write_file(&dir.join("verdict.json"), &pretty(&o))?;
        write_file(&dir.join("verdict.txt"), o.verdict.render_text().as_bytes())?;
        io.output(dir.join("verdict.json"));
        io.output(dir.join("verdict.txt"));
        print!("{}", o.verdict.render_text());
        outcome = Some(o);
        Ok(())
    })?;
    Ok(outcome.expect("set on success"))
}

// ----------------------------------------------------------------- fetch

#[derive(Debug, Clone, Default)]
pub struct FetchOptions {
    pub min_delay_s: Option<f64>,
    pub window: Option<String>,
    pub max_retries: Option<u32>,
    pub user_agent: Option<String>,
    pub unsafe_ignore_robots: bool,
    pub acknowledge_risk: bool,
    pub refetch: bool,
}

/// One line of `fetch/results.jsonl`: the terminal outcome for a listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub url: String,
    pub status: String,
    pub attempt: u32,
    pub fetched_at: DateTime<Utc>,
    /// Page file relative to the fetch directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

fn page_file_name(url: &Url) -> String {
    let id: String = id_from_url(url.as_str())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .take(64)
        .collect();
    let h = manifest::sha256_bytes(url.as_str().as_bytes());
    format!("{id}_{}.html", &h[..8])
}

fn read_results(path: &Path) -> Result<Vec<ResultEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn fetch(ctx: &Context, opts: &FetchOptions) -> Result<(), CliError> {
    let verdict_path = ctx.dir("assess").join("verdict.json");
    let assessed: AssessOutcome = serde_json::from_str(&read_text(&verdict_path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", verdict_path.display())))?;
    if assessed.verdict.level == VerdictLevel::Stop && !opts.acknowledge_risk {
        return Err(CliError::Compliance(
            "the viability assessment says stop; fetch refuses without --acknowledge-risk".into(),
        ));
    }
    let cfg = &ctx.cfg;
    let p = &cfg.politeness;
    let min_delay_s = opts.min_delay_s.unwrap_or(p.min_delay_s);
    let window = opts
        .window
        .as_deref()
        .or(p.window.as_deref())
        .map(TimeWindow::parse)
        .transpose()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let max_retries = opts.max_retries.unwrap_or(p.max_retries);
    let user_agent = opts.user_agent.clone().unwrap_or_else(|| p.user_agent.clone());
    let mut plan = FetchPlan::new(Vec::new(), min_delay_s, &user_agent);
    plan.window = window;
    plan.max_retries = max_retries;
    plan.respect_robots = !opts.unsafe_ignore_robots;
    plan.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let rules = load_rules(cfg)?;
    run_stage(ctx, "fetch", true, |io| {
        let err = stage_err("fetch");
        io.input(&verdict_path);
        io.input(&cfg.rules);
        if assessed.verdict.level == VerdictLevel::Stop {
            log::warn!("assessment verdict is stop; continuing because --acknowledge-risk was given");
            io.note("assessment verdict stop overridden with --acknowledge-risk");
        }

        let (transport, clock): (Arc<dyn Transport>, Arc<dyn Clock>) = match &cfg.target {
            Target::FixtureDir(d) => (Arc::new(FileTransport::new(d)), Arc::new(SimulatedClock::new(cfg.fixture_start))),
            Target::BaseUrl(_) => (Arc::new(HttpTransport::default()), Arc::new(SystemClock::new())),
        };
        let mut fetcher = Fetcher::new(transport, clock, &user_agent, min_delay_s)
            .with_retries(max_retries)
            .with_window(window);
        let base = cfg.base_url();
        let query = cfg.search_query();
        let dir = ctx.dir("fetch");
        let pages_dir = dir.join("pages");
        fs::create_dir_all(&pages_dir).map_err(|e| CliError::io(&pages_dir, e))?;
        let log_path = dir.join("fetch_log.jsonl");

        let policy = if opts.unsafe_ignore_robots {
            fetcher.warn(base.as_str(), "WARNING: robots.txt is ignored for this run (--unsafe-ignore-robots)");
            io.note("robots.txt ignored (--unsafe-ignore-robots)");
            RobotsPolicy::permissive(&geoharvest_core::fetcher::authority(&base))
        } else {
            let policy = fetcher.fetch_robots(&base);
            let start_pages = query.first_page_urls();
            if !start_pages.iter().any(|u| is_allowed(&policy, u.path(), &user_agent)) {
                append_log(&log_path, &fetcher.log().to_jsonl())?;
                io.output(&log_path);
                return Err(CliError::Compliance(format!("robots.txt of {base} disallows every result page")));
            }
            policy
        };
        fetcher.apply_policy(&policy);
        if fetcher.min_delay().as_secs_f64() > min_delay_s {
            io.note(format!("crawl-delay raises the request gap to {:.1}s", fetcher.min_delay().as_secs_f64()));
        }

        let listing = enumerate_listings(&mut fetcher, &query, &rules, &policy);
        io.note(format!(
            "{} result pages, {} listing links",
            listing.pages_fetched,
            listing.listing_urls.len()
        ));
        if listing.pages_fetched == 0 {
            append_log(&log_path, &fetcher.log().to_jsonl())?;
            io.output(&log_path);
            return Err(err("no result pages could be fetched".into()));
        }

        let results_path = dir.join("results.jsonl");
        let mut known: BTreeMap<String, ResultEntry> = BTreeMap::new();
        if !opts.refetch && results_path.is_file() {
            for e in read_results(&results_path)? {
                let on_disk = e.file.as_ref().is_some_and(|f| dir.join(f).is_file());
                if e.status == "ok" && on_disk {
                    known.insert(e.url.clone(), e);
                }
            }
        }
        let todo: Vec<Url> = listing
            .listing_urls
            .iter()
            .filter(|u| !known.contains_key(u.as_str()))
            .cloned()
            .collect();
        if !known.is_empty() {
            io.note(format!("{} listings already fetched; pass --refetch to fetch them again", known.len()));
        }
        plan.seed_urls = todo;
        let mut fresh: BTreeMap<String, ResultEntry> = BTreeMap::new();
        let mut sink = |r: FetchResult| -> Result<(), String> {
            let file = match &r.body {
                Some(body) => {
                    let name = page_file_name(&r.url);
                    fs::write(pages_dir.join(&name), body).map_err(|e| e.to_string())?;
                    Some(format!("pages/{name}"))
                }
                None => None,
            };
            fresh.insert(
                r.url.to_string(),
                ResultEntry {
                    url: r.url.to_string(),
                    status: r.status.label(),
                    attempt: r.attempt,
                    fetched_at: r.fetched_at,
                    file,
                },
            );
            Ok(())
        };
        let run = fetcher.run_plan(&plan, &policy, &mut sink);
        append_log(&log_path, &fetcher.log().to_jsonl())?;
        io.output(&log_path);
        run.map_err(|e| err(e.to_string()))?;

        let mut out = String::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for u in &listing.listing_urls {
            let Some(e) = fresh.remove(u.as_str()).or_else(|| known.remove(u.as_str())) else {
                continue;
            };
            *counts.entry(e.status.clone()).or_default() += 1;
            if let Some(f) = &e.file {
                io.output(dir.join(f));
            }
            out.push_str(&json_line(&e));
        }
        write_file(&results_path, out.as_bytes())?;
        io.output(&results_path);
        let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        io.note(format!("listing results: {}", summary.join(", ")));
        println!("fetch: {}", summary.join(", "));
        Ok(())
    })
}

fn append_log(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

// --------------------------------------------------------------- extract

pub fn extract(ctx: &Context) -> Result<(), CliError> {
    run_stage(ctx, "extract", false, |io| {
        let cfg = &ctx.cfg;
        let rules = load_rules(cfg)?;
        io.input(&cfg.rules);
        let fetch_dir = ctx.dir("fetch");
        let results_path = fetch_dir.join("results.jsonl");
        io.input(&results_path);
        let mut records = Vec::new();
        let mut issues = String::new();
        for e in read_results(&results_path)? {
            let (FetchStatus::Ok, Some(file)) = (status_of(&e.status), &e.file) else {
                continue;
            };
            let path = fetch_dir.join(file);
            let html = fs::read(&path).map_err(|err| CliError::io(&path, err))?;
            io.input(&path);
            let (rec, found) = extract_record(&html, &rules, &e.url, e.fetched_at);
            for i in found {
                issues.push_str(&json_line(&serde_json::json!({"id": rec.id, "url": rec.url, "issue": i})));
            }
            records.push(rec);
        }
        let dir = ctx.dir("extract");
        write_records(&dir, &records, io)?;
        write_file(&dir.join("issues.jsonl"), issues.as_bytes())?;
        io.output(dir.join("issues.jsonl"));
        io.note(format!("{} records extracted", records.len()));
        println!("extract: {} records", records.len());
        Ok(())
    })
}

fn status_of(label: &str) -> FetchStatus {
    match label {
        "ok" => FetchStatus::Ok,
        "skipped_disallowed" => FetchStatus::SkippedDisallowed,
        "skipped_window" => FetchStatus::SkippedWindow,
        _ => FetchStatus::NetworkError,
    }
}

fn write_records(dir: &Path, records: &[ListingRecord], io: &mut StageIo) -> Result<(), CliError> {
    let jsonl = dir.join("records.jsonl");
    let csv = dir.join("records.csv");
    let mut w = create(&jsonl)?;
    write_jsonl(&mut w, records).map_err(|e| CliError::io_msg(&jsonl, e))?;
    w.flush().map_err(|e| CliError::io(&jsonl, e))?;
    let mut w = create(&csv)?;
    write_csv(&mut w, records).map_err(|e| CliError::io_msg(&csv, e))?;
    w.flush().map_err(|e| CliError::io(&csv, e))?;
    io.output(jsonl);
    io.output(csv);
    Ok(())
}

fn read_records(path: &Path, io: &mut StageIo) -> Result<Vec<ListingRecord>, CliError> {
    io.input(path);
    read_jsonl(open(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

// --------------------------------------------------------------- geocode

fn locate_with<B: GeocodeBackend>(records: &mut [ListingRecord], g: &Geocoder<B>, ctx: &Context) -> Result<LocateSummary, CliError> {
    Ok(locate_records(records, g, &ctx.cfg.locate_config()?))
}

pub fn geocode(ctx: &Context) -> Result<(), CliError> {
    let network = matches!(ctx.cfg.geocoder, GeocoderConfig::Nominatim { .. });
    run_stage(ctx, "geocode", network, |io| {
        let err = stage_err("geocode");
        let mut records = read_records(&ctx.dir("extract").join("records.jsonl"), io)?;
        let summary = match &ctx.cfg.geocoder {
            GeocoderConfig::Stub { gazetteer } => {
                io.input(gazetteer);
                let backend = StubBackend::from_csv_file(gazetteer).map_err(|e| CliError::Validation(e.to_string()))?;
                locate_with(&mut records, &Geocoder::new(backend), ctx)?
            }
            GeocoderConfig::Nominatim {
                base_url,
                min_interval_s,
                cache,
            } => {
                let backend = NominatimBackend::new(
                    base_url.clone(),
                    &ctx.cfg.politeness.user_agent,
                    Arc::new(HttpTransport::default()),
                    Arc::new(SystemClock::new()),
                )
                .with_min_interval(Duration::from_secs_f64(min_interval_s.max(0.0)));
                let mut g = Geocoder::new(backend);
                if let Some(c) = cache {
                    g = g.with_cache_file(c).map_err(|e| err(e.to_string()))?;
                }
                let s = locate_with(&mut records, &g, ctx)?;
                g.save().map_err(|e| err(e.to_string()))?;
                s
            }
        };
        let dir = ctx.dir("geocode");
        write_records(&dir, &records, io)?;
        write_file(&dir.join("summary.json"), &pretty(&summary))?;
        io.output(dir.join("summary.json"));
        io.note(format!(
            "{} geocoded, {} without match, success rate {:.1}%",
            summary.geocoded,
            summary.no_match,
            100.0 * summary.success_rate()
        ));
        println!("geocode: {} of {} records located", summary.geocoded + summary.embedded_fallback, records.len());
        Ok(())
    })
}

// --------------------------------------------------------------- quality

pub fn quality(ctx: &Context) -> Result<(), CliError> {
    run_stage(ctx, "quality", false, |io| {
        let cfg = &ctx.cfg;
        let err = stage_err("quality");
        let mut records = read_records(&ctx.dir("geocode").join("records.jsonl"), io)?;
        let book = match &cfg.quality_rules {
            Some(p) => {
                io.input(p);
                RuleBook::from_json(&read_text(p)?).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
            }
            None => RuleBook::new(default_rules(cfg.scrape_year, Some(cfg.bbox))).map_err(|e| err(e.to_string()))?,
        };
        let report = quality_report(&records, &book).map_err(|e| err(e.to_string()))?;
        book.apply(&mut records);
        let center = cfg.center_point()?;
        let dir = ctx.dir("quality");
        if let Some(p) = &cfg.centroids {
            io.input(p);
            let centroids = PostalCentroids::from_csv(open(p)?).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            let s = impute_distance_by_postal(&mut records, &centroids, &center, cfg.centroid_radius_m);
            write_file(&dir.join("imputation.json"), &pretty(&s))?;
            io.output(dir.join("imputation.json"));
            io.note(format!("distance imputed for {} records, {} not imputable", s.imputed, s.unimputed));
        }
        let (retained, ledger) = apply_exclusions(records, &cfg.exclusion).map_err(|e| CliError::Validation(e.to_string()))?;
        let vocab = load_rules(cfg)?.amenity_vocabulary();
        io.input(&cfg.rules);
        let features = build_features(&retained, &center, &vocab);

        write_file(&dir.join("report.txt"), report.render_text().as_bytes())?;
        write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
        let ex = dir.join("exclusions.csv");
        ledger.write_csv(create(&ex)?).map_err(|e| err(e.to_string()))?;
        write_records(&dir, &retained, io)?;
        let fpath = dir.join("features.csv");
        let mut w = create(&fpath)?;
        features.write_csv(&mut w).map_err(|e| err(e.to_string()))?;
        w.flush().map_err(|e| CliError::io(&fpath, e))?;
        for f in ["report.txt", "report.json", "exclusions.csv", "features.csv"] {
            io.output(dir.join(f));
        }
        io.note(format!(
            "{} records retained, {} excluded, {} feature rows",
            retained.len(),
            ledger.total(),
            features.rows.len()
        ));
        print!("{}", report.render_text());
        println!("quality: {} feature rows", features.rows.len());
        Ok(())
    })
}

// ----------------------------------------------------------------- model

#[derive(Debug, Clone, Default)]
pub struct ModelOptions {
    pub spec: Option<PathBuf>,
    pub train_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitSummary {
    kind: ModelKind,
    seed: u64,
    n_train: usize,
    n_holdout: usize,
    train_rmse: f64,
    #[serde(default)]
    oob_rmse: Option<f64>,
    #[serde(default)]
    r2_adj: Option<f64>,
    #[serde(default)]
    edf: Vec<(String, f64)>,
}

fn read_features(path: &Path, io: &mut StageIo) -> Result<FeatureSet, CliError> {
    io.input(path);
    FeatureSet::read_csv(open(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn model_fit(ctx: &Context, opts: &ModelOptions) -> Result<(), CliError> {
    run_stage(ctx, "model", false, |io| {
        let err = stage_err("model");
        let spec = match &opts.spec {
            Some(p) => ModelSpec::from_file(p)?,
            None => ctx.cfg.model_spec()?,
        };
        if let Some(p) = opts.spec.as_ref().or(ctx.cfg.model.spec_file.as_ref()) {
            io.input(p);
        }
        let fs = read_features(&ctx.dir("quality").join("features.csv"), io)?;
        let n = fs.rows.len();
        if n < 10 {
            return Err(err(format!("only {n} feature rows; too few to fit a model")));
        }
        let n_train = opts
            .train_n
            .or(ctx.cfg.model.train_n)
            .unwrap_or_else(|| (0.8 * n as f64).round() as usize);
        if n_train == 0 || n_train > n {
            return Err(CliError::Validation(format!("train_n {n_train} must be in 1..={n}")));
        }
        let (train, test) = split_train_test(&fs.rows, n_train, ctx.seed);
        let fitted = match spec.kind {
            ModelKind::Gam | ModelKind::GamShrinkage => {
                let g = fit_gam(&train, &spec.gam_spec(fs.vocab.len())).map_err(|e| err(e.to_string()))?;
                FittedModel::gam(g, &fs.vocab, &train)
            }
            ModelKind::RandomForest => {
                let enc = if spec.extended { FeatureEncoder::extended(&train) } else { FeatureEncoder::Simple };
                let params = spec.forest.clone().unwrap_or_default();
                let f = fit_random_forest(&train, enc, &params, ctx.seed).map_err(|e| err(e.to_string()))?;
                FittedModel::forest(f, &fs.vocab, &train)
            }
        };
        let dir = ctx.dir("model");
        let mpath = dir.join("model.bin");
        fitted.save_file(&mpath).map_err(|e| err(e.to_string()))?;
        let summary = match (fitted.as_gam(), fitted.as_forest()) {
            (Some(g), _) => FitSummary {
                kind: fitted.kind,
                seed: ctx.seed,
                n_train,
                n_holdout: test.len(),
                train_rmse: g.rmse,
                oob_rmse: None,
                r2_adj: Some(g.r2_adj),
                edf: g.edf.clone(),
            },
            (_, Some(f)) => FitSummary {
                kind: fitted.kind,
                seed: ctx.seed,
                n_train,
                n_holdout: test.len(),
                train_rmse: f.train_rmse,
                oob_rmse: f.oob_rmse,
                r2_adj: None,
                edf: Vec::new(),
            },
            _ => unreachable!("a model is a GAM or a forest"),
        };
        write_file(&dir.join("fit.json"), &pretty(&summary))?;
        let ppath = dir.join("predictions.csv");
        write_predictions(&ppath, &fitted, &fs)?;
        for p in [mpath, dir.join("fit.json"), ppath] {
            io.output(p);
        }
        println!(
            "model: {} on {n_train} rows, training RMSE {:.3}",
            fitted.kind.as_str(),
            summary.train_rmse
        );
        Ok(())
    })
}

fn write_predictions(path: &Path, model: &FittedModel, fs: &FeatureSet) -> Result<(), CliError> {
    let train: HashSet<&str> = model.train_ids.iter().map(String::as_str).collect();
    let mut s = String::from("id,set,target,pred_eur_sqm\n");
    for r in &fs.rows {
        let p = model.predict(r).map_err(|e| CliError::Stage {
            stage: "model".into(),
            message: e.to_string(),
        })?;
        let set = if train.contains(r.id.as_str()) { "train" } else { "holdout" };
        s.push_str(&format!("{},{set},{},{}\n", r.id, r.target, p));
    }
    write_file(path, s.as_bytes())
}

pub fn model_evaluate(ctx: &Context) -> Result<(), CliError> {
    run_stage(ctx, "evaluate", false, |io| {
        let err = stage_err("evaluate");
        let mpath = ctx.dir("model").join("model.bin");
        io.input(&mpath);
        let model = FittedModel::load_file(&mpath).map_err(|e| CliError::Validation(format!("{}: {e}", mpath.display())))?;
        let fs = read_features(&ctx.dir("quality").join("features.csv"), io)?;
        let train: HashSet<&str> = model.train_ids.iter().map(String::as_str).collect();
        let holdout: Vec<_> = fs.rows.iter().filter(|r| !train.contains(r.id.as_str())).cloned().collect();
        if holdout.is_empty() {
            return Err(err("no holdout rows: every feature row was used for training".into()));
        }
        let e = evaluate(&model, &holdout).map_err(|e| err(e.to_string()))?;
        let path = ctx.dir("evaluate").join("evaluation.json");
        write_file(&path, &pretty(&e))?;
        io.output(path);
        println!("evaluate: holdout n = {}, RMSE {:.3}, R² {:.3}", e.n, e.rmse, e.r2);
        Ok(())
    })
}

// --------------------------------------------------------------- gridmap

pub fn gridmap(ctx: &Context) -> Result<(), CliError> {
    run_stage(ctx, "gridmap", false, |io| {
        let cfg = &ctx.cfg;
        let err = stage_err("gridmap");
        let mpath = ctx.dir("model").join("model.bin");
        io.input(&mpath);
        let model = FittedModel::load_file(&mpath).map_err(|e| CliError::Validation(format!("{}: {e}", mpath.display())))?;
        let centroids = match &cfg.centroids {
            Some(p) => {
                io.input(p);
                Some(PostalCentroids::from_csv(open(p)?).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        let grid = prediction_grid(
            &model,
            &cfg.bbox,
            cfg.grid.cell_m,
            &cfg.grid.profile,
            &cfg.center_point()?,
            centroids.as_ref(),
        )
        .map_err(|e| err(e.to_string()))?;
        let dir = ctx.dir("gridmap");
        let gj = dir.join("grid.geojson");
        let mut w = create(&gj)?;
        grid.write_geojson(&mut w).map_err(|e| err(e.to_string()))?;
        w.flush().map_err(|e| CliError::io(&gj, e))?;
        let csv = dir.join("grid.csv");
        let mut w = create(&csv)?;
        grid.write_csv(&mut w).map_err(|e| err(e.to_string()))?;
        w.flush().map_err(|e| CliError::io(&csv, e))?;
        io.output(gj);
        io.output(csv);
        println!("gridmap: {} cells of {} m", grid.cells.len(), grid.cell_m);
        Ok(())
    })
}
