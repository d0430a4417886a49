//! End-to-end run: split, featurize, first-half model suite, residuals,
//! threshold, team-player index, second-half suite, interaction effects,
//! facets, robustness checks and descriptive tables, with persisted artifacts
//! and a manifest.

use crate::analysis::{
    self, AbsFamiliarity, BandPoint, Descriptives, FacetKind, FacetReport, InteractionResult, KsBin, PositionBin,
    S2Config, S2Frame, SuiteResult,
};
use crate::error::{Error, Result};
use crate::features::{self, EapmMode, FeatureConfig, FeatureRow, FeatureTable, Scaler};
use crate::glm::{FittedModel, ModelJson};
use crate::match_data::{self, Format, MatchRecord};
use crate::tp_effect::{
    self, ResidualLedger, ResidualOptions, TeamPlayerIndex, ThresholdConfig, ThresholdSelection, ThresholdSweepResult,
};
use crate::simgen::{self, SyntheticConfig};
use crate::util;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

/// How the inclusion threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauPolicy {
    /// Knee of the band-width curve.
    #[default]
    Auto,
    Fixed(usize),
    /// Argmax of the sweep.
    Sweep,
}

impl std::str::FromStr for TauPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TauPolicy::Auto),
            "sweep" => Ok(TauPolicy::Sweep),
            n => n
                .parse::<usize>()
                .map(TauPolicy::Fixed)
                .map_err(|_| Error::Config(format!("bad tau `{s}`, expected auto, sweep or an integer"))),
        }
    }
}

impl std::fmt::Display for TauPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauPolicy::Auto => f.write_str("auto"),
            TauPolicy::Sweep => f.write_str("sweep"),
            TauPolicy::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TauRepr {
    Int(usize),
    Text(String),
}

impl Serialize for TauPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TauPolicy::Fixed(n) => s.serialize_u64(*n as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for TauPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TauRepr::deserialize(d)? {
            TauRepr::Int(n) => Ok(TauPolicy::Fixed(n)),
            TauRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub focal: u64,
    pub holdout: u64,
    /// Overrides the seed of `simulation` when set.
    pub simulation: Option<u64>,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 1,
            focal: 2,
            holdout: 3,
            simulation: None,
        }
    }
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Seeds {
            split: seed,
            focal: seed,
            holdout: seed,
            simulation: Some(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub mem: bool,
    pub facets: bool,
    pub robustness: bool,
    pub descriptives: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            mem: true,
            facets: true,
            robustness: true,
            descriptives: true,
        }
    }
}

/// Standardization source; only first-half statistics are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerPolicy {
    #[default]
    FirstHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub ks_bin_size: usize,
    pub position_bin_size: usize,
    pub bandwidth_window: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            ks_bin_size: 50,
            position_bin_size: 25,
            bandwidth_window: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    /// Inferred from the extension when absent.
    pub format: Option<Format>,
    pub out_dir: PathBuf,
    pub seeds: Seeds,
    pub tau: TauPolicy,
    /// `min:max:step`; runs the threshold sweep when present.
    pub sweep: Option<String>,
    pub threshold: ThresholdConfig,
    pub focal_only: bool,
    pub eapm_mode: EapmMode,
    pub test_fraction: f64,
    pub abs_familiarity: AbsFamiliarity,
    pub stages: StageToggles,
    pub scaler: ScalerPolicy,
    pub robustness: RobustnessConfig,
    /// When set, the run first simulates this world into `input` and writes
    /// its ground truth under `out_dir/truth`.
    pub simulation: Option<SyntheticConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::from("matches.jsonl"),
            format: None,
            out_dir: PathBuf::from("reports"),
            seeds: Seeds::default(),
            tau: TauPolicy::Auto,
            sweep: None,
            threshold: ThresholdConfig::default(),
            focal_only: false,
            eapm_mode: EapmMode::CareerMean,
            test_fraction: 0.2,
            abs_familiarity: AbsFamiliarity::MeanOfTeams,
            stages: StageToggles::default(),
            scaler: ScalerPolicy::FirstHalf,
            robustness: RobustnessConfig::default(),
            simulation: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{} at `{}`", e.inner(), e.path())))
    }

    pub fn input_format(&self) -> Format {
        self.format.unwrap_or_else(|| format_for(&self.input))
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            focal_seed: self.seeds.focal,
            eapm_mode: self.eapm_mode,
        }
    }

    pub fn s2_config(&self) -> S2Config {
        S2Config {
            holdout_seed: self.seeds.holdout,
            test_fraction: self.test_fraction,
            abs_familiarity: self.abs_familiarity,
        }
    }
}

pub fn format_for(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::Jsonl,
    }
}

/// Task-proficiency model with the scaler its deltas were built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub name: String,
    pub model: ModelJson,
    pub scaler: Option<Scaler>,
}

impl ModelArtifact {
    pub fn new(name: &str, model: &FittedModel, scaler: Option<&Scaler>) -> Self {
        ModelArtifact {
            name: name.to_string(),
            model: model.into(),
            scaler: scaler.cloned(),
        }
    }

    pub fn fitted(&self) -> FittedModel {
        self.model.clone().into()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {} at `{}`", path.display(), e.inner(), e.path())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Feature rows of every team match (history over the full log), divided by
/// the seeded first/second-half assignment.
pub fn featurize_halves(
    records: &[MatchRecord],
    split_seed: u64,
    cfg: &FeatureConfig,
) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>)> {
    let splits = match_data::split_dataset(records, split_seed);
    let t1: HashSet<&str> = splits.split_t1.iter().map(|r| r.match_id.as_str()).collect();
    let rows = features::featurize_log(records, cfg)?;
    Ok(rows.into_iter().partition(|r| t1.contains(r.match_id.as_str())))
}

/// Model whose residuals define the team-player effect.
pub const MAIN_MODEL: &str = "S1.3";

/// In-memory results of a run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub t1: FeatureTable,
    pub t2: FeatureTable,
    pub scaler: Scaler,
    pub s1: SuiteResult,
    /// Residual ledgers of S1.1 to S1.3.
    pub ledgers: BTreeMap<String, ResidualLedger>,
    pub threshold: ThresholdOutcome,
    pub index: TeamPlayerIndex,
    pub second: SecondHalf,
    pub robustness: Option<RobustnessOutput>,
    pub descriptives: Option<Descriptives>,
    pub warnings: Vec<String>,
    pub stages: Vec<String>,
    pub counts: BTreeMap<String, usize>,
}

impl PipelineOutput {
    /// Residual ledger of the task-proficiency model.
    pub fn ledger(&self) -> &ResidualLedger {
        &self.ledgers[MAIN_MODEL]
    }

    pub fn tau(&self) -> usize {
        self.threshold.tau
    }
}

/// Tracks completed stages so a failure can be reported with partial progress.
#[derive(Debug, Default)]
pub struct Progress {
    pub completed: Vec<String>,
    pub warnings: Vec<String>,
}

impl Progress {
    pub fn run<T>(&mut self, stage: &str, f: impl FnOnce(&mut Vec<String>) -> Result<T>) -> Result<T> {
        log::info!("stage {stage}");
        match f(&mut self.warnings) {
            Ok(v) => {
                self.completed.push(stage.to_string());
                Ok(v)
            }
            Err(e) => Err(Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            }),
        }
    }
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Residual ledgers of every model in the first-half suite.
pub fn residual_ledgers(
    s1: &SuiteResult,
    t1: &FeatureTable,
    opts: ResidualOptions,
) -> Result<BTreeMap<String, ResidualLedger>> {
    s1.models
        .iter()
        .map(|m| Ok((m.name.clone(), tp_effect::compute_residuals(&m.model, t1, opts)?)))
        .collect()
}

/// Inclusion threshold with its band curve and optional sweep.
#[derive(Debug, Clone)]
pub struct ThresholdOutcome {
    pub selection: Option<ThresholdSelection>,
    pub sweep: Option<ThresholdSweepResult>,
    pub tau: usize,
}

/// Band-curve selection, sweep over `cfg.sweep` (needs the second half) and
/// the threshold picked by `cfg.tau`.
pub fn choose_threshold(
    ledger: &ResidualLedger,
    t2: Option<&FeatureTable>,
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<ThresholdOutcome> {
    let selection = match tp_effect::select_threshold(ledger, &cfg.threshold) {
        Ok(s) => {
            if let Some(msg) = &s.warning {
                warn(warnings, msg.clone());
            }
            Some(s)
        }
        Err(e) if cfg.tau != TauPolicy::Auto => {
            warn(warnings, format!("threshold selection: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let grid = match (&cfg.sweep, cfg.tau) {
        (Some(g), _) => Some(tp_effect::parse_grid(g)?),
        (None, TauPolicy::Sweep) => return Err(Error::Config("tau policy `sweep` needs a sweep grid".into())),
        _ => None,
    };
    let sweep = match (grid, t2) {
        (Some(g), Some(t2)) => {
            let ids: Vec<&str> = t2.rows.iter().map(|r| r.match_id.as_str()).collect();
            let holdout = util::holdout_mask(&ids, cfg.seeds.holdout, cfg.test_fraction);
            Some(tp_effect::sweep_threshold(ledger, t2, &holdout, &g)?)
        }
        (Some(_), None) => return Err(Error::Config("the threshold sweep needs second-half features".into())),
        (None, _) => None,
    };
    let tau = match cfg.tau {
        TauPolicy::Fixed(n) => n,
        TauPolicy::Auto => selection.as_ref().expect("auto selection").tau,
        TauPolicy::Sweep => sweep.as_ref().expect("sweep ran").selected_tau,
    };
    Ok(ThresholdOutcome { selection, sweep, tau })
}

/// Everything computed on the second half once the team-player index exists.
#[derive(Debug, Clone)]
pub struct SecondHalf {
    pub s2_frame: S2Frame,
    pub s2: SuiteResult,
    pub interaction: Option<InteractionResult>,
    pub facets: Option<Vec<FacetReport>>,
}

pub fn second_half_stages(
    t2: &FeatureTable,
    index: &TeamPlayerIndex,
    s1_model: &FittedModel,
    scaler: &Scaler,
    cfg: &RunConfig,
    progress: &mut Progress,
) -> Result<SecondHalf> {
    let s2_frame = progress.run("task_proficiency", |_| {
        analysis::build_s2_frame(t2, index, s1_model, scaler, &cfg.s2_config())
    })?;
    let s2 = progress.run("s2_suite", |_| analysis::run_s2_suite(&s2_frame))?;

    let interaction = if cfg.stages.mem {
        Some(progress.run("mem", |w| {
            let r = analysis::interaction_mem(&s2_frame)?;
            for d in &r.dropped {
                warn(w, format!("interaction term `{d}` dropped: constant moderator"));
            }
            Ok(r)
        })?)
    } else {
        None
    };

    let facets = if cfg.stages.facets {
        Some(progress.run("facets", |w| {
            let mut out = Vec::new();
            for kind in [FacetKind::FamiliarityQuantile, FacetKind::TeamSize] {
                match analysis::facet_regressions(&s2_frame, kind) {
                    Ok(r) => {
                        for lv in &r.levels {
                            if !lv.dropped.is_empty() {
                                warn(
                                    w,
                                    format!("facet {} {}: constant {} dropped", kind.as_str(), lv.level, lv.dropped.join(", ")),
                                );
                            }
                            if let Some(s) = &lv.skipped {
                                warn(w, format!("facet {} {} skipped: {s}", kind.as_str(), lv.level));
                            }
                        }
                        out.push(r);
                    }
                    Err(e @ Error::DegenerateQuantiles(_)) => warn(w, format!("facet {}: {e}", kind.as_str())),
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })?)
    } else {
        None
    };
    Ok(SecondHalf {
        s2_frame,
        s2,
        interaction,
        facets,
    })
}

#[derive(Debug, Clone)]
pub struct RobustnessOutput {
    pub ks: Vec<KsBin>,
    pub positions: Vec<PositionBin>,
    pub bandwidth: Vec<BandPoint>,
}

/// KS and position checks on the task-proficiency ledger, bandwidth on all.
pub fn robustness_checks(
    ledgers: &BTreeMap<String, ResidualLedger>,
    main: &str,
    rc: &RobustnessConfig,
) -> Result<RobustnessOutput> {
    let ledger = ledgers
        .get(main)
        .ok_or_else(|| Error::Config(format!("no residual ledger for `{main}`")))?;
    Ok(RobustnessOutput {
        ks: analysis::ks_zero_familiarity(ledger, rc.ks_bin_size),
        positions: analysis::position_residual_correlation(ledger, rc.position_bin_size),
        bandwidth: ledgers
            .iter()
            .flat_map(|(name, l)| analysis::residual_bandwidth(name, l, rc.bandwidth_window))
            .collect(),
    })
}

/// Descriptive tables over both halves in time order.
pub fn team_descriptives(t1: &FeatureTable, t2: &FeatureTable) -> Descriptives {
    let mut all: Vec<FeatureRow> = t1.rows.iter().chain(&t2.rows).cloned().collect();
    all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.match_id.cmp(&b.match_id)));
    analysis::descriptive_stats(&all)
}

/// Runs every analysis stage on a chronologically ordered log.
pub fn run_analysis(records: &[MatchRecord], cfg: &RunConfig, progress: &mut Progress) -> Result<PipelineOutput> {
    let mut counts = BTreeMap::new();
    counts.insert("matches".to_string(), records.len());
    counts.insert("solo_matches".into(), records.iter().filter(|r| !r.mode.is_team()).count());

    let (t1_rows, t2_rows) = progress.run("featurize", |_| featurize_halves(records, cfg.seeds.split, &cfg.feature_config()))?;
    counts.insert("t1_rows".into(), t1_rows.len());
    counts.insert("t2_rows".into(), t2_rows.len());

    let (scaler, t1, t2) = progress.run("scale", |w| {
        let scaler = Scaler::fit(&t1_rows);
        for name in features::FEATURE_NAMES {
            if !scaler.features.contains_key(name) {
                warn(w, format!("feature `{name}` has no variance in the first half and was dropped"));
            }
        }
        let t1 = FeatureTable::standardize(t1_rows, &scaler)?;
        let t2 = FeatureTable::standardize(t2_rows, &scaler)?;
        Ok((scaler, t1, t2))
    })?;

    let s1 = progress.run("s1_suite", |_| analysis::run_s1_suite(&t1))?;
    let s1_model = s1.get(MAIN_MODEL).expect("suite member").model.clone();

    let opts = ResidualOptions {
        focal_only: cfg.focal_only,
    };
    let ledgers = progress.run("residuals", |_| residual_ledgers(&s1, &t1, opts))?;
    counts.insert("ledger_players".into(), ledgers[MAIN_MODEL].len());

    let threshold = progress.run("threshold", |w| choose_threshold(&ledgers[MAIN_MODEL], Some(&t2), cfg, w))?;
    let index = progress.run("tp_index", |_| Ok(TeamPlayerIndex::build(&ledgers[MAIN_MODEL], threshold.tau)))?;
    counts.insert("qualified_players".into(), index.qualified_count());

    let second = second_half_stages(&t2, &index, &s1_model, &scaler, cfg, progress)?;

    let robustness = if cfg.stages.robustness {
        Some(progress.run("robustness", |_| robustness_checks(&ledgers, MAIN_MODEL, &cfg.robustness))?)
    } else {
        None
    };
    let descriptives = if cfg.stages.descriptives {
        Some(progress.run("descriptives", |_| Ok(team_descriptives(&t1, &t2)))?)
    } else {
        None
    };

    Ok(PipelineOutput {
        t1,
        t2,
        scaler,
        s1,
        ledgers,
        threshold,
        index,
        second,
        robustness,
        descriptives,
        warnings: progress.warnings.clone(),
        stages: progress.completed.clone(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub config: RunConfig,
    pub input_sha256: Option<String>,
    pub tau: Option<usize>,
    pub counts: BTreeMap<String, usize>,
    pub sample_hashes: BTreeMap<String, String>,
    pub stages: Vec<String>,
    pub warnings: Vec<String>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".teamlens.lock";

/// Exclusive claim on a report directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects output files and their hashes.
pub struct OutputDir {
    dir: PathBuf,
    pub hashes: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.dir.join(name);
        fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
        self.hashes.insert(name.to_string(), util::sha256_hex(&buf));
        Ok(())
    }
}

/// `splits.csv`: one `match_id,split` row per match.
pub fn write_splits(records: &[MatchRecord], seed: u64, dir: &mut OutputDir) -> Result<()> {
    dir.write("splits.csv", |b| {
        let splits = match_data::split_dataset(records, seed);
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["match_id", "split"])?;
        for (name, part) in [("S", &splits.split_s), ("T1", &splits.split_t1), ("T2", &splits.split_t2)] {
            for r in part {
                w.write_record([r.match_id.as_str(), name])?;
            }
        }
        w.flush().map_err(|e| Error::io("splits.csv", e))
    })
}

pub fn write_model(name: &str, model: &FittedModel, scaler: Option<&Scaler>, dir: &mut OutputDir) -> Result<()> {
    dir.write("model.json", |b| {
        b.extend(ModelArtifact::new(name, model, scaler).to_json()?.as_bytes());
        Ok(())
    })
}

/// `tp.csv`, `threshold.csv` and `tau_sweep.csv`.
pub fn write_threshold_outputs(t: &ThresholdOutcome, index: &TeamPlayerIndex, dir: &mut OutputDir) -> Result<()> {
    dir.write("tp.csv", |b| index.write_csv(b))?;
    if let Some(sel) = &t.selection {
        dir.write("threshold.csv", |b| analysis::write_threshold_csv(sel, b))?;
    }
    if let Some(sw) = &t.sweep {
        dir.write("tau_sweep.csv", |b| analysis::write_sweep_csv(sw, b))?;
    }
    Ok(())
}

/// `s2_suite.csv`, `mem.csv` and `facets.csv`.
pub fn write_second_half_outputs(sh: &SecondHalf, dir: &mut OutputDir) -> Result<()> {
    dir.write("s2_suite.csv", |b| analysis::write_suite_csv(&sh.s2, b))?;
    if let Some(i) = &sh.interaction {
        dir.write("mem.csv", |b| analysis::write_mem_csv(i, b))?;
    }
    if let Some(f) = &sh.facets {
        dir.write("facets.csv", |b| analysis::write_facets_csv(f, b))?;
    }
    Ok(())
}

pub fn write_robustness_outputs(r: &RobustnessOutput, dir: &mut OutputDir) -> Result<()> {
    dir.write("ks.csv", |b| analysis::write_ks_csv(&r.ks, b))?;
    dir.write("position.csv", |b| analysis::write_position_csv(&r.positions, b))?;
    dir.write("bandwidth.csv", |b| analysis::write_bandwidth_csv(&r.bandwidth, b))
}

/// Writes every artifact and report table of a run.
pub fn write_outputs(out: &PipelineOutput, records: &[MatchRecord], cfg: &RunConfig, dir: &mut OutputDir) -> Result<()> {
    write_splits(records, cfg.seeds.split, dir)?;
    dir.write("t1_features.csv", |b| out.t1.write_csv(b))?;
    dir.write("t2_features.csv", |b| out.t2.write_csv(b))?;
    dir.write("scaler.json", |b| out.scaler.write(&mut *b).map(|_| b.push(b'\n')))?;
    let main = &out.s1.get(MAIN_MODEL).expect("suite member").model;
    write_model(MAIN_MODEL, main, Some(&out.scaler), dir)?;
    dir.write("s1_suite.csv", |b| analysis::write_suite_csv(&out.s1, b))?;
    write_threshold_outputs(&out.threshold, &out.index, dir)?;
    write_second_half_outputs(&out.second, dir)?;
    if let Some(r) = &out.robustness {
        write_robustness_outputs(r, dir)?;
    }
    if let Some(d) = &out.descriptives {
        dir.write("descriptives.csv", |b| analysis::write_descriptives_csv(d, b))?;
    }
    Ok(())
}

fn simulate_input(world: &SyntheticConfig, cfg: &RunConfig) -> Result<()> {
    let mut world = world.clone();
    if let Some(seed) = cfg.seeds.simulation {
        world.seed = seed;
    }
    let sim = simgen::run_world(&world)?;
    if let Some(parent) = cfg.input.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let mut out = std::io::BufWriter::new(file);
    match cfg.input_format() {
        Format::Jsonl => match_data::write_jsonl(&sim.records, &mut out)?,
        Format::Csv => match_data::write_csv(&sim.records, &mut out)?,
    }
    std::io::Write::flush(&mut out).map_err(|e| Error::io(&cfg.input, e))?;
    sim.write_truth(&cfg.out_dir.join("truth"))
}

fn base_manifest(cfg: &RunConfig) -> Manifest {
    Manifest {
        tool: "teamlens".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        status: "ok".into(),
        failed_stage: None,
        error: None,
        config: cfg.clone(),
        input_sha256: None,
        tau: None,
        counts: BTreeMap::new(),
        sample_hashes: BTreeMap::new(),
        stages: Vec::new(),
        warnings: Vec::new(),
        outputs: BTreeMap::new(),
    }
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(m)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Full run from `cfg.input` into `cfg.out_dir`. On failure a manifest with the
/// failed stage and the completed ones is still written.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(PipelineOutput, Manifest)> {
    let mut dir = OutputDir::new(&cfg.out_dir)?;
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let mut manifest = base_manifest(cfg);
    let mut progress = Progress::default();

    let result = (|| -> Result<(PipelineOutput, Vec<MatchRecord>)> {
        if let Some(world) = &cfg.simulation {
            progress.run("simulate", |_| simulate_input(world, cfg))?;
        }
        let bytes = progress.run("read", |_| fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e)))?;
        manifest.input_sha256 = Some(util::sha256_hex(&bytes));
        let records = progress.run("parse", |_| {
            Ok(match_data::order_chronologically(match_data::parse_matches(&bytes[..], cfg.input_format())?))
        })?;
        drop(bytes);
        let out = run_analysis(&records, cfg, &mut progress)?;
        progress.run("write", |_| write_outputs(&out, &records, cfg, &mut dir))?;
        Ok((out, records))
    })();

    manifest.stages = progress.completed.clone();
    manifest.warnings = progress.warnings.clone();
    manifest.outputs = dir.hashes.clone();
    match result {
        Ok((out, _)) => {
            manifest.tau = Some(out.tau());
            manifest.counts = out.counts.clone();
            manifest.sample_hashes.insert("s1_suite".into(), out.s1.sample_hash.clone());
            manifest.sample_hashes.insert("s2_suite".into(), out.second.s2.sample_hash.clone());
            manifest
                .sample_hashes
                .insert("t1_rows".into(), util::sample_hash(out.t1.rows.iter().map(|r| r.match_id.as_str())));
            manifest
                .sample_hashes
                .insert("t2_rows".into(), util::sample_hash(out.t2.rows.iter().map(|r| r.match_id.as_str())));
            write_manifest(&cfg.out_dir, &manifest)?;
            Ok((out, manifest))
        }
        Err(e) => {
            if let Error::Stage { stage, source } = &e {
                manifest.failed_stage = Some(stage.clone());
                manifest.error = Some(source.to_string());
            } else {
                manifest.error = Some(e.to_string());
            }
            manifest.status = "failed".into();
            write_manifest(&cfg.out_dir, &manifest)?;
            Err(e)
        }
    }
}

fn read_table(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.records().map(|r| r.map_err(Error::from)).collect()
}

/// Human-readable summary of a report directory: suite tables with stars,
/// the accuracy chain and marginal effects.
pub fn report_summary(dir: &Path) -> Result<String> {
    use std::fmt::Write as _;
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(Error::Config(format!("no manifest in {}", dir.display())));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("corrupt manifest {}: {e}", mpath.display())))?;
    let mut s = String::new();
    let _ = writeln!(s, "teamlens {} run: {}", manifest.version, manifest.status);
    if let Some(stage) = &manifest.failed_stage {
        let _ = writeln!(s, "failed at stage `{stage}`: {}", manifest.error.as_deref().unwrap_or(""));
    }
    if let Some(tau) = manifest.tau {
        let _ = writeln!(s, "inclusion threshold: {tau}");
    }
    for (k, v) in &manifest.counts {
        let _ = writeln!(s, "{k}: {v}");
    }
    for file in ["s1_suite.csv", "s2_suite.csv"] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        let rows = read_table(&path)?;
        let _ = writeln!(s, "\n{file}");
        let _ = writeln!(s, "{:<6} {:<10} {:>11} {:>10} {:<4}", "model", "term", "estimate", "se", "");
        let mut last = String::new();
        let mut chain: Vec<(String, String, String)> = Vec::new();
        for r in &rows {
            if r[0] != last {
                if !last.is_empty() {
                    let _ = writeln!(s);
                }
                last = r[0].to_string();
                chain.push((r[0].to_string(), r[10].to_string(), r[11].to_string()));
                let _ = writeln!(s, "{:<6} pseudo R2 {}  n {}  clusters {}", &r[0], short(&r[7]), &r[8], &r[9]);
            }
            let _ = writeln!(s, "{:<6} {:<10} {:>11} {:>10} {:<4}", "", &r[1], short(&r[2]), short(&r[3]), &r[6]);
        }
        if chain.iter().any(|c| !c.1.is_empty()) {
            let _ = writeln!(s, "\naccuracy chain");
            for (m, acc, delta) in chain {
                let d = if delta.is_empty() { String::new() } else { format!(" ({:+.4})", delta.parse::<f64>().unwrap_or(f64::NAN)) };
                let _ = writeln!(s, "{m}: {}{d}", short(&acc));
            }
        }
    }
    let path = dir.join("mem.csv");
    if path.exists() {
        let _ = writeln!(s, "\nmarginal effects at the mean");
        for r in read_table(&path)? {
            let _ = writeln!(s, "{:<20} {:>11} {:>10} {:<4}", &r[0], short(&r[2]), short(&r[3]), &r[6]);
        }
    }
    Ok(s)
}

fn short(v: &str) -> String {
    match v.parse::<f64>() {
        Ok(x) => format!("{x:.4}"),
        Err(_) => v.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_policy_parses_and_round_trips() {
        assert_eq!("auto".parse::<TauPolicy>().unwrap(), TauPolicy::Auto);
        assert_eq!("25".parse::<TauPolicy>().unwrap(), TauPolicy::Fixed(25));
        assert!("x".parse::<TauPolicy>().is_err());
        let cfg = RunConfig::from_json(r#"{"tau": 25, "sweep": "2:40:2"}"#).unwrap();
        assert_eq!(cfg.tau, TauPolicy::Fixed(25));
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::from_json(r#"{"tau": "sweep"}"#).unwrap().tau, TauPolicy::Sweep);
    }

    #[test]
    fn unknown_config_field_is_named() {
        let err = RunConfig::from_json(r#"{"seeds": {"splt": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("splt"));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let d = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(d.path()).unwrap();
        assert!(DirLock::acquire(d.path()).is_err());
        drop(a);
        assert!(DirLock::acquire(d.path()).is_ok());
    }

    #[test]
    fn empty_directory_has_no_manifest() {
        let d = tempfile::tempdir().unwrap();
        let err = report_summary(d.path()).unwrap_err();
        assert!(err.to_string().contains("no manifest"));
    }
}
