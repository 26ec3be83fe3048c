//! `vitsel`: two-stage necessity-based data selection from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 data, 4 internal invariant.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vitsel_core::config::{Orientation, SelectionConfig, Strategy, CONFIG_KEYS};
use vitsel_core::digest::{sha256_file, sha256_hex};
use vitsel_core::pipeline::{self, MemoryScores, Pipeline, RunOptions, ScorerSpec, Stage};
use vitsel_core::report::{self, SourceIndex};
use vitsel_core::scoring::DEFAULT_ORDER;
use vitsel_core::{ErrorClass, PoolReader, Sample};

const OUT_ROOT_ENV: &str = "VITSEL_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "vitsel", version, about = "Two-stage necessity-based data selection for instruction-tuning pools")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a pool and print its statistics as JSON.
    Ingest(IngestArgs),
    /// Write a synthetic pool with source-correlated difficulty.
    Fixture(FixtureArgs),
    /// Draw the uniform seed subset.
    Seed(StageArgs),
    /// Train the scorer on the seed subset and score the candidates.
    Score(ScoreArgs),
    /// Select the necessity subset and write the merged dataset.
    Select(ScoreArgs),
    /// Run every stage.
    Run(ScoreArgs),
    /// Continue an interrupted run from its recorded state.
    Resume(ResumeArgs),
    /// Write diversity diagnostics and exemplars for a finished selection.
    Report(ReportArgs),
    /// Run several strategies on one pool and tabulate their diagnostics.
    Compare(CompareArgs),
    /// Run the pipeline over a grid of configurations.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Input pool (JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Skip invalid records instead of failing on the first one.
    #[arg(long)]
    lenient: bool,
    /// Also write the valid records in canonical form here.
    #[arg(long, value_name = "PATH")]
    canonical: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Output pool path.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Number of sources.
    #[arg(long, default_value_t = 8)]
    sources: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
}

/// Selection parameters; each overrides the `--config` file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed subset size n1 [default: 100000].
    #[arg(long, value_name = "N")]
    seed_size: Option<usize>,
    /// Necessity subset size n2 [default: 565000].
    #[arg(long, value_name = "N")]
    select_size: Option<usize>,
    /// Group size k [default: 50000].
    #[arg(long, value_name = "K")]
    group_size: Option<usize>,
    /// Softmax temperature tau, > 0 [default: 1.0].
    #[arg(long, value_name = "TAU", allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// Selection strategy: nbgs, random, top, bottom [default: nbgs].
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Score orientation: nll (higher = harder) or loglik [default: nll].
    #[arg(long, value_parser = parse_orientation)]
    orientation: Option<Orientation>,
    /// Master RNG seed [default: 0].
    #[arg(long, value_name = "SEED")]
    rng_seed: Option<u64>,
    /// Divide scores by the response token count [default: false].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    length_norm: Option<bool>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_orientation(s: &str) -> Result<Orientation, String> {
    s.parse()
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Input pool (JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Run directory [default: $VITSEL_OUT_ROOT/run-<fingerprint>].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Skip invalid pool records instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Worker threads (0 = all cores); never changes outputs.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    stage: StageArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
}

#[derive(Debug, Clone, Args)]
struct ScorerArgs {
    /// Precomputed score file to use instead of the built-in scorer.
    #[arg(long, value_name = "PATH", conflicts_with = "ngram_order")]
    scores: Option<PathBuf>,
    /// Order of the built-in byte n-gram scorer [default: 3].
    #[arg(long, value_name = "N")]
    ngram_order: Option<usize>,
}

impl ScorerArgs {
    fn spec(&self) -> Option<ScorerSpec> {
        match (&self.scores, self.ngram_order) {
            (Some(path), _) => Some(ScorerSpec::External { path: path.clone() }),
            (None, Some(order)) => Some(ScorerSpec::Builtin { order }),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Args)]
struct ResumeArgs {
    /// Run directory to continue.
    #[arg(long)]
    out: PathBuf,
    /// Input pool [default: the path recorded in the run].
    #[arg(long)]
    pool: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Worker threads (0 = all cores); never changes outputs.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory with a completed selection.
    #[arg(long)]
    out: PathBuf,
    /// Input pool [default: the path recorded in the run].
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Number of highest-scored exemplars.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Number of lowest-scored exemplars.
    #[arg(long, default_value_t = 5)]
    bottom: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Input pool (JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Directory for compare.csv and compare.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Strategies to compare.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "nbgs,random,top,bottom")]
    strategies: Vec<Strategy>,
    /// Repeat each strategy over this many consecutive RNG seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Skip invalid pool records instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Worker threads (0 = all cores); never changes outputs.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Input pool (JSONL).
    #[arg(long)]
    pool: PathBuf,
    /// Grid file: `key = v1, v2, ...` lines; runs the cartesian product.
    #[arg(long)]
    grid: PathBuf,
    /// Directory that receives one run directory per grid point plus sweep.csv and sweep.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Skip invalid pool records instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Worker threads (0 = all cores); never changes outputs.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<vitsel_core::Error> for Failure {
    fn from(e: vitsel_core::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Data => 3,
            ErrorClass::Internal => 4,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<vitsel_core::ConfigError> for Failure {
    fn from(e: vitsel_core::ConfigError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<vitsel_core::IngestError> for Failure {
    fn from(e: vitsel_core::IngestError) -> Self {
        Failure::data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

impl ConfigArgs {
    /// Defaults, then the config file, then explicit flags.
    fn resolve(&self, base: SelectionConfig) -> CliResult<SelectionConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            cfg.apply_text(&text)?;
        }
        self.overlay(&mut cfg);
        cfg.check()?;
        Ok(cfg)
    }

    fn overlay(&self, cfg: &mut SelectionConfig) {
        if let Some(v) = self.seed_size {
            cfg.n1 = v;
        }
        if let Some(v) = self.select_size {
            cfg.n2 = v;
        }
        if let Some(v) = self.group_size {
            cfg.k = v;
        }
        if let Some(v) = self.temperature {
            cfg.tau = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.orientation {
            cfg.orientation = v;
        }
        if let Some(v) = self.rng_seed {
            cfg.rng_seed = v;
        }
        if let Some(v) = self.length_norm {
            cfg.length_norm = v;
        }
    }
}

fn print_config(cfg: &SelectionConfig) {
    eprintln!("effective configuration:");
    for line in cfg.to_canonical_text().lines() {
        eprintln!("  {line}");
    }
}

/// Default run directory under `$VITSEL_OUT_ROOT`, keyed by pool, config, and scorer.
fn default_out(pool: &Path, cfg: &SelectionConfig, scorer: &Option<ScorerSpec>) -> CliResult<PathBuf> {
    let root = std::env::var_os(OUT_ROOT_ENV)
        .ok_or_else(|| Failure::usage(format!("no --out given and {OUT_ROOT_ENV} is not set")))?;
    let pool_sha = sha256_file(pool).map_err(|e| io_failure(pool, e))?;
    let key = format!("{pool_sha}\n{}{scorer:?}", cfg.to_canonical_text());
    Ok(PathBuf::from(root).join(format!("run-{}", &sha256_hex(key.as_bytes())[..16])))
}

fn run_options(stage: &StageArgs, scorer: Option<ScorerSpec>) -> CliResult<RunOptions> {
    let config = stage.config.resolve(SelectionConfig::default())?;
    let out = match &stage.out {
        Some(out) => out.clone(),
        None => default_out(&stage.pool, &config, &scorer)?,
    };
    print_config(&config);
    Ok(RunOptions { pool: stage.pool.clone(), out, config, scorer, strict: !stage.lenient, jobs: stage.jobs })
}

fn run_to(opts: RunOptions, target: Stage) -> CliResult {
    let mut p = Pipeline::open(opts)?;
    p.advance_to(target)?;
    println!("{}", p.dir().display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> CliResult {
    let mut reader = PoolReader::open(&args.pool, !args.lenient)?;
    let mut samples = Vec::new();
    for s in reader.by_ref() {
        let s = s?;
        if args.canonical.is_some() {
            samples.push(s);
        }
    }
    let stats = reader.into_stats();
    if let Some(path) = &args.canonical {
        vitsel_core::write_pool(&samples, path)?;
    }
    print!("{}", stats.to_json());
    Ok(())
}

fn cmd_fixture(args: FixtureArgs) -> CliResult {
    if args.sources == 0 {
        return Err(Failure::validation("--sources must be at least 1"));
    }
    let n = vitsel_core::write_fixture(&args.out, args.samples, args.sources, args.rng_seed)?;
    eprintln!("wrote {n} samples to {}", args.out.display());
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> CliResult {
    let state = pipeline::read_state(&args.out)?.ok_or_else(|| vitsel_core::Error::NoState { dir: args.out.clone() })?;
    let pool = match args.pool.clone().or_else(|| state.pool_path.clone()) {
        Some(p) => p,
        None => return Err(Failure::usage("the run does not record its pool; pass --pool")),
    };
    let config = args.config.resolve(state.config.clone())?;
    print_config(&config);
    let opts = RunOptions { pool, out: args.out, config, scorer: args.scorer.spec(), strict: state.strict, jobs: args.jobs };
    let manifest = pipeline::resume(opts.clone())?;
    eprintln!("manifest {}", manifest.manifest_sha256);
    println!("{}", opts.out.display());
    Ok(())
}

fn load_pool(path: &Path, strict: bool) -> CliResult<Vec<Sample>> {
    Ok(pipeline::load_pool(path, strict)?)
}

fn cmd_report(args: ReportArgs) -> CliResult {
    let state = pipeline::read_state(&args.out)?.ok_or_else(|| vitsel_core::Error::NoState { dir: args.out.clone() })?;
    if state.stage < Stage::Selected {
        return Err(vitsel_core::Error::StageMissing { required: Stage::Selected, dir: args.out.clone() }.into());
    }
    let pool_path = args
        .pool
        .or(state.pool_path)
        .ok_or_else(|| Failure::usage("the run does not record its pool; pass --pool"))?;
    let pool = load_pool(&pool_path, state.strict)?;
    let (selection, scored) = report::load_run(&args.out)?;
    let diversity = report::diversity_report(&selection, &scored, &SourceIndex::new(&pool));
    let ex = report::exemplars(&scored, args.top, args.bottom);
    let by_id: HashMap<&str, &Sample> = pool.iter().map(|s| (s.id.as_str(), s)).collect();
    let json = diversity.to_json();
    write_file(&args.out.join("report.json"), &json)?;
    write_file(&args.out.join("groups.csv"), &diversity.groups_csv())?;
    write_file(&args.out.join("exemplars.md"), &report::exemplars_markdown(&ex, &by_id))?;
    print!("{json}");
    Ok(())
}

fn memory_scores(scorer: &ScorerArgs, holder: &mut HashMap<String, vitsel_core::ScoredSample>, cfg: &SelectionConfig) -> CliResult<bool> {
    match &scorer.scores {
        Some(path) => {
            let (_, rows) = vitsel_core::scoring::load_scores(path, cfg.orientation, cfg.length_norm, None)
                .map_err(|e| Failure::from(vitsel_core::Error::from(e)))?;
            holder.extend(rows.into_iter().map(|r| (r.id.clone(), r)));
            Ok(true)
        }
        None => Ok(false),
    }
}

fn write_rows<T: serde::Serialize>(dir: &Path, stem: &str, rows: &[T]) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let csv = report::rows_to_csv(rows);
    write_file(&dir.join(format!("{stem}.csv")), &csv)?;
    write_file(&dir.join(format!("{stem}.json")), &report::rows_to_json(rows))?;
    print!("{csv}");
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let base = args.config.resolve(SelectionConfig::default())?;
    print_config(&base);
    let pool = load_pool(&args.pool, !args.lenient)?;
    let mut grid = Vec::new();
    for strategy in &args.strategies {
        for offset in 0..args.seeds.max(1) {
            let cfg = SelectionConfig { strategy: *strategy, rng_seed: base.rng_seed.wrapping_add(offset), ..base.clone() };
            grid.push((format!("{strategy}/seed={}", cfg.rng_seed), cfg));
        }
    }
    let mut provided = HashMap::new();
    let scores = if memory_scores(&args.scorer, &mut provided, &base)? {
        MemoryScores::Provided(&provided)
    } else {
        MemoryScores::Builtin { order: args.scorer.ngram_order.unwrap_or(DEFAULT_ORDER) }
    };
    let rows = report::compare_strategies(&pool, &grid, &scores, args.jobs);
    write_rows(&args.out, "compare", &rows)
}

/// Parses a grid file into per-key value lists, in file order.
fn parse_grid(text: &str) -> CliResult<Vec<(String, Vec<String>)>> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Failure::validation(format!("grid line {}: {why}: {raw:?}", idx + 1));
        let (key, values) = line.split_once('=').ok_or_else(|| bad("expected `key = v1, v2, ...`"))?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(bad("unknown key"));
        }
        if axes.iter().any(|(k, _)| k == key) {
            return Err(bad("key given twice"));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(bad("empty value"));
        }
        axes.push((key.to_string(), values));
    }
    if axes.is_empty() {
        return Err(Failure::validation("grid file has no axes"));
    }
    Ok(axes)
}

/// Cartesian product of the axes; the last axis varies fastest.
fn expand_grid(base: &SelectionConfig, axes: &[(String, Vec<String>)]) -> CliResult<Vec<(String, SelectionConfig)>> {
    let mut points = vec![(Vec::<String>::new(), base.clone())];
    for (key, values) in axes {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for (label, cfg) in &points {
            for v in values {
                let mut cfg = cfg.clone();
                cfg.set(key, v)?;
                let mut label = label.clone();
                label.push(format!("{key}={v}"));
                next.push((label, cfg));
            }
        }
        points = next;
    }
    Ok(points.into_iter().map(|(l, c)| (l.join(","), c)).collect())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let base = args.config.resolve(SelectionConfig::default())?;
    let text = fs::read_to_string(&args.grid).map_err(|e| io_failure(&args.grid, e))?;
    let grid = expand_grid(&base, &parse_grid(&text)?)?;
    print_config(&base);
    eprintln!("sweeping {} configurations", grid.len());
    let pool = load_pool(&args.pool, !args.lenient)?;
    let sources = SourceIndex::new(&pool);
    let mut rows = Vec::with_capacity(grid.len());
    for (i, (label, cfg)) in grid.into_iter().enumerate() {
        let dir = args.out.join(format!("run-{i:03}"));
        let opts = RunOptions {
            pool: args.pool.clone(),
            out: dir.clone(),
            config: cfg.clone(),
            scorer: args.scorer.spec(),
            strict: !args.lenient,
            jobs: args.jobs,
        };
        let outcome = pipeline::run(opts).and_then(|m| {
            let (selection, scored) = report::load_run(&dir)?;
            Ok((m, report::diversity_report(&selection, &scored, &sources)))
        });
        rows.push(match outcome {
            Ok((m, r)) => SweepRow::ok(&label, &dir, &cfg, &m.manifest_sha256, &r),
            Err(e) => {
                log::warn!("{label}: {e}");
                SweepRow::failed(&label, &dir, &cfg, e.to_string())
            }
        });
    }
    write_rows(&args.out, "sweep", &rows)
}

#[derive(serde::Serialize)]
struct SweepRow {
    label: String,
    dir: String,
    strategy: String,
    n1: usize,
    n2: usize,
    k: usize,
    tau: f64,
    rng_seed: u64,
    manifest_sha256: Option<String>,
    selected: Option<usize>,
    source_entropy: Option<f64>,
    coverage: Option<f64>,
    mean_score: Option<f64>,
    median_score: Option<f64>,
    decile_occupancy: Option<usize>,
    error: Option<String>,
}

impl SweepRow {
    fn failed(label: &str, dir: &Path, cfg: &SelectionConfig, error: String) -> Self {
        Self {
            label: label.to_string(),
            dir: dir.display().to_string(),
            strategy: cfg.strategy.to_string(),
            n1: cfg.n1,
            n2: cfg.n2,
            k: cfg.k,
            tau: cfg.tau,
            rng_seed: cfg.rng_seed,
            manifest_sha256: None,
            selected: None,
            source_entropy: None,
            coverage: None,
            mean_score: None,
            median_score: None,
            decile_occupancy: None,
            error: Some(error),
        }
    }

    fn ok(label: &str, dir: &Path, cfg: &SelectionConfig, sha: &str, r: &report::DiversityReport) -> Self {
        Self {
            manifest_sha256: Some(sha.to_string()),
            selected: Some(r.selected),
            source_entropy: r.source_entropy,
            coverage: r.coverage,
            mean_score: r.mean_score,
            median_score: r.median_score,
            decile_occupancy: Some(r.decile_occupancy),
            error: None,
            ..Self::failed(label, dir, cfg, String::new())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::Seed(a) => run_to(run_options(&a, None)?, Stage::Seeded),
        Command::Score(a) => run_to(run_options(&a.stage, a.scorer.spec())?, Stage::Scored),
        Command::Select(a) => run_to(run_options(&a.stage, a.scorer.spec())?, Stage::Merged),
        Command::Run(a) => run_to(run_options(&a.stage, a.scorer.spec())?, Stage::Merged),
        Command::Resume(a) => cmd_resume(a),
        Command::Report(a) => cmd_report(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
