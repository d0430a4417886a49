use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use teamlens::analysis::{self, Frame, S1_SUITE};
use teamlens::error::{Error, ErrorClass, Result};
use teamlens::features::{FeatureTable, Scaler};
use teamlens::glm::{self, FitConfig};
use teamlens::match_data::{self, Format, MatchRecord};
use teamlens::pipeline::{self, ModelArtifact, OutputDir, Progress, RunConfig, TauPolicy, MAIN_MODEL};
use teamlens::simgen::{self, SyntheticConfig};
use teamlens::tp_effect::{self, ResidualOptions, TeamPlayerIndex};

#[derive(Parser)]
#[command(name = "teamlens", version, about = "Team-player effects from team match logs")]
struct Cli {
    /// Run configuration (JSON). Supplies seeds, threshold and stage settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed of the run configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic match log from a world configuration.
    Simulate(SimulateArgs),
    /// Partition a log into the S, T1 and T2 splits.
    Split(SplitArgs),
    /// Feature table of one team-match half.
    Featurize(FeaturizeArgs),
    /// Fit a clustered logistic model on a feature table.
    Fit(FitArgs),
    /// Residuals, inclusion threshold and team-player index.
    Tp(TpArgs),
    /// Second-half suite, marginal effects, facets and robustness tables.
    Analyze(AnalyzeArgs),
    /// Full run from a configuration.
    Pipeline,
    /// Summary of a report directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// World configuration; its `seed` is replaced by `--seed` when given.
    #[arg(long = "world")]
    world: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Directory for players.csv and matches.csv.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Jsonl => Format::Jsonl,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Half {
    T1,
    T2,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    split: Half,
    /// Scaler JSON, or `new` to fit one on this half.
    #[arg(long, default_value = "new")]
    scaler: String,
    /// Where a new scaler is written (default: scaler.json next to `--out`).
    #[arg(long)]
    scaler_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    /// Column of the feature table holding cluster keys.
    #[arg(long, default_value = "cluster")]
    clusters: String,
    /// Comma-separated regressors (default: the task-proficiency set).
    #[arg(long, value_delimiter = ',')]
    terms: Option<Vec<String>>,
    #[arg(long, default_value = MAIN_MODEL)]
    name: String,
    /// Scaler stored with the model, needed later for task proficiency.
    #[arg(long)]
    scaler: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t1: PathBuf,
    /// Second-half features, required by `--sweep`.
    #[arg(long)]
    t2: Option<PathBuf>,
    /// `auto`, `sweep` or an integer.
    #[arg(long)]
    tau: Option<TauPolicy>,
    /// Sweep grid `min:max:step`.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    focal_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    t2: PathBuf,
    #[arg(long)]
    tp: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// First-half features; enables the robustness and descriptive tables.
    #[arg(long)]
    t1: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report directory (default: `--out-dir`).
    dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Data => ExitCode::from(3),
                ErrorClass::Numeric => ExitCode::from(4),
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = pipeline::Seeds::all(seed);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn read_log(path: &Path, format: Option<Format>) -> Result<Vec<MatchRecord>> {
    let format = format.unwrap_or_else(|| pipeline::format_for(path));
    Ok(match_data::order_chronologically(match_data::parse_matches(open(path)?, format)?))
}

fn read_features(path: &Path) -> Result<FeatureTable> {
    FeatureTable::read_csv(open(path)?)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Simulate(a) = &cli.command {
        return simulate(a, &cli);
    }
    let cfg = run_config(&cli)?;
    match &cli.command {
        Command::Simulate(_) => unreachable!(),
        Command::Split(a) => split(a, &cfg),
        Command::Featurize(a) => featurize(a, &cfg),
        Command::Fit(a) => fit(a),
        Command::Tp(a) => tp(a, &cfg),
        Command::Analyze(a) => analyze(a, &cfg),
        Command::Pipeline => {
            if cli.config.is_none() {
                return Err(Error::Config("pipeline needs --config".into()));
            }
            let (out, _) = pipeline::run_pipeline(&cfg)?;
            for w in &out.warnings {
                log::info!("warning: {w}");
            }
            println!("wrote {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Report(a) => {
            let dir = a
                .dir
                .clone()
                .or_else(|| cli.out_dir.clone())
                .ok_or_else(|| Error::Config("report needs a directory".into()))?;
            print!("{}", pipeline::report_summary(&dir)?);
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs, cli: &Cli) -> Result<()> {
    let path = a
        .world
        .as_ref()
        .or(cli.config.as_ref())
        .ok_or_else(|| Error::Config("simulate needs --world or --config".into()))?;
    let mut world = SyntheticConfig::from_json(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        world.seed = seed;
    }
    let sim = simgen::run_world(&world)?;
    let mut w = create(&a.out)?;
    match pipeline::format_for(&a.out) {
        Format::Jsonl => match_data::write_jsonl(&sim.records, &mut w)?,
        Format::Csv => match_data::write_csv(&sim.records, &mut w)?,
    }
    finish(w, &a.out)?;
    if let Some(dir) = &a.truth {
        sim.write_truth(dir)?;
    }
    println!("{} matches, {} players", sim.records.len(), sim.players.len());
    Ok(())
}

fn split(a: &SplitArgs, cfg: &RunConfig) -> Result<()> {
    let input = a.input.clone().unwrap_or_else(|| cfg.input.clone());
    let records = read_log(&input, a.format.map(Format::from).or(cfg.format))?;
    let mut dir = OutputDir::new(&cfg.out_dir)?;
    pipeline::write_splits(&records, cfg.seeds.split, &mut dir)?;
    let splits = match_data::split_dataset(&records, cfg.seeds.split);
    for (name, part) in [("s", &splits.split_s), ("t1", &splits.split_t1), ("t2", &splits.split_t2)] {
        let owned: Vec<MatchRecord> = part.iter().map(|r| (*r).clone()).collect();
        dir.write(&format!("split_{name}.jsonl"), |b| match_data::write_jsonl(&owned, b))?;
    }
    println!(
        "S {}  T1 {}  T2 {}",
        splits.split_s.len(),
        splits.split_t1.len(),
        splits.split_t2.len()
    );
    Ok(())
}

fn featurize(a: &FeaturizeArgs, cfg: &RunConfig) -> Result<()> {
    let input = a.input.clone().unwrap_or_else(|| cfg.input.clone());
    let records = read_log(&input, a.format.map(Format::from).or(cfg.format))?;
    let (t1, t2) = pipeline::featurize_halves(&records, cfg.seeds.split, &cfg.feature_config())?;
    let rows = if a.split == Half::T1 { t1 } else { t2 };
    let scaler = if a.scaler == "new" {
        let s = Scaler::fit(&rows);
        let path = a.scaler_out.clone().unwrap_or_else(|| sibling(&a.out, "scaler.json"));
        let mut w = create(&path)?;
        s.write(&mut w)?;
        w.write_all(b"\n").map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        finish(w, &path)?;
        s
    } else {
        Scaler::read(open(Path::new(&a.scaler))?)?
    };
    let table = FeatureTable::standardize(rows, &scaler)?;
    let mut w = create(&a.out)?;
    table.write_csv(&mut w)?;
    finish(w, &a.out)?;
    println!("{} rows", table.rows.len());
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let table = read_features(&a.features)?;
    let mut frame = Frame::from_table(&table);
    if a.clusters != "cluster" {
        let mut rd = csv::Reader::from_reader(open(&a.features)?);
        let j = rd
            .headers()?
            .iter()
            .position(|h| h == a.clusters)
            .ok_or_else(|| Error::MissingFeature(a.clusters.clone()))?;
        frame.clusters = rd
            .records()
            .map(|r| Ok(r?[j].to_string()))
            .collect::<Result<Vec<_>>>()?;
    }
    let default_terms = S1_SUITE[2].features.iter().map(|s| s.to_string()).collect();
    let terms: Vec<String> = a.terms.clone().unwrap_or(default_terms);
    let refs: Vec<&str> = terms.iter().map(String::as_str).collect();
    let model = glm::fit_logistic(&frame.design(&refs, None)?, &FitConfig::default())?;
    let scaler = a.scaler.as_ref().map(|p| Scaler::read(open(p)?)).transpose()?;
    let mut w = create(&a.out)?;
    w.write_all(ModelArtifact::new(&a.name, &model, scaler.as_ref()).to_json()?.as_bytes())
        .map_err(|e| Error::Io {
            path: a.out.display().to_string(),
            source: e,
        })?;
    finish(w, &a.out)?;
    println!("pseudo R2 {:.4}, n {}", model.pseudo_r2, model.n_obs);
    Ok(())
}

fn tp(a: &TpArgs, cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    if a.sweep.is_some() {
        cfg.sweep = a.sweep.clone();
    }
    let model = ModelArtifact::read(&a.model)?.fitted();
    let t1 = read_features(&a.t1)?;
    let t2 = a.t2.as_deref().map(read_features).transpose()?;
    let opts = ResidualOptions {
        focal_only: a.focal_only || cfg.focal_only,
    };
    let ledger = tp_effect::compute_residuals(&model, &t1, opts)?;
    let mut warnings = Vec::new();
    let threshold = pipeline::choose_threshold(&ledger, t2.as_ref(), &cfg, &mut warnings)?;
    let index = TeamPlayerIndex::build(&ledger, threshold.tau);
    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut dir = OutputDir::new(out_dir)?;
    pipeline::write_threshold_outputs(&threshold, &index, &mut dir)?;
    let written = out_dir.join("tp.csv");
    if written != a.out {
        fs::rename(&written, &a.out).map_err(|e| Error::Io {
            path: a.out.display().to_string(),
            source: e,
        })?;
    }
    println!("tau {}, {} of {} players qualified", threshold.tau, index.qualified_count(), ledger.len());
    Ok(())
}

fn analyze(a: &AnalyzeArgs, cfg: &RunConfig) -> Result<()> {
    let artifact = ModelArtifact::read(&a.model)?;
    let scaler = artifact
        .scaler
        .clone()
        .ok_or_else(|| Error::Config(format!("{} has no scaler; refit with --scaler", a.model.display())))?;
    let model = artifact.fitted();
    let t2 = read_features(&a.t2)?;
    let index = TeamPlayerIndex::read_csv(open(&a.tp)?)?;
    let mut progress = Progress::default();
    let second = pipeline::second_half_stages(&t2, &index, &model, &scaler, cfg, &mut progress)?;
    let mut dir = OutputDir::new(&cfg.out_dir)?;
    let _lock = pipeline::DirLock::acquire(&cfg.out_dir)?;
    pipeline::write_second_half_outputs(&second, &mut dir)?;
    match &a.t1 {
        Some(p) => {
            let t1 = read_features(p)?;
            let s1 = analysis::run_s1_suite(&t1)?;
            dir.write("s1_suite.csv", |b| analysis::write_suite_csv(&s1, b))?;
            let opts = ResidualOptions {
                focal_only: cfg.focal_only,
            };
            let mut ledgers = pipeline::residual_ledgers(&s1, &t1, opts)?;
            ledgers.insert(artifact.name.clone(), tp_effect::compute_residuals(&model, &t1, opts)?);
            if cfg.stages.robustness {
                let main = if ledgers.contains_key(MAIN_MODEL) { MAIN_MODEL } else { artifact.name.as_str() };
                let r = pipeline::robustness_checks(&ledgers, main, &cfg.robustness)?;
                pipeline::write_robustness_outputs(&r, &mut dir)?;
            }
            if cfg.stages.descriptives {
                let d = pipeline::team_descriptives(&t1, &t2);
                dir.write("descriptives.csv", |b| analysis::write_descriptives_csv(&d, b))?;
            }
        }
        None => log::warn!("no --t1: robustness and descriptive tables skipped"),
    }
    for w in &progress.warnings {
        log::info!("warning: {w}");
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}
