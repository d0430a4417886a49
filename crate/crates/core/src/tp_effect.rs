//! Residual ledgers from the task-proficiency model, per-player and per-team
//! team-player effects, and selection / validation of the inclusion threshold.

use crate::error::{Error, Result};
use crate::features::{FeatureRow, FeatureTable};
use crate::glm::{self, DesignMatrix, FitConfig, FittedModel};
use crate::match_data::{PlayerId, Position};
use crate::stats;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub match_id: String,
    /// Outcome minus predicted win probability, from the player's own team's side.
    pub residual: f64,
    /// Predicted win probability of the player's own team.
    pub predicted: f64,
    pub position: Position,
    pub team_size: usize,
    pub zero_familiarity: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualLedger {
    pub entries: BTreeMap<PlayerId, Vec<ResidualEntry>>,
}

impl ResidualLedger {
    pub fn n(&self, player: &PlayerId) -> usize {
        self.entries.get(player).map_or(0, Vec::len)
    }

    pub fn players(&self) -> impl Iterator<Item = &PlayerId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(n_j, TP_j)` for every player, in player order.
    pub fn effects(&self) -> Vec<(PlayerId, usize, f64)> {
        self.entries
            .iter()
            .map(|(p, e)| (p.clone(), e.len(), e.iter().map(|x| x.residual).sum::<f64>() / e.len() as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ResidualOptions {
    /// Record residuals for focal-team members only.
    pub focal_only: bool,
}

/// Extracts the model's regressors from a feature row.
pub(crate) fn model_row(table: &FeatureTable, model: &FittedModel) -> Result<Vec<usize>> {
    model
        .features
        .iter()
        .map(|f| table.column_index(f).ok_or_else(|| Error::MissingFeature(f.clone())))
        .collect()
}

/// Residual `y - p` per match, credited to every focal-team member, and the
/// complement-perspective residual `-(y - p)` to every opposing member.
pub fn compute_residuals(
    model: &FittedModel,
    table: &FeatureTable,
    opts: ResidualOptions,
) -> Result<ResidualLedger> {
    let cols = model_row(table, model)?;
    let per_row: Vec<Result<Vec<(PlayerId, ResidualEntry)>>> = table
        .rows
        .par_iter()
        .map(|row| {
            let x: Vec<f64> = cols.iter().map(|&j| row.delta[j]).collect();
            let p = glm::predict_proba(model, &x)?;
            let r = row.y as f64 - p;
            let zero = row.zero_familiarity();
            let mut out = Vec::with_capacity(row.focal_roster.len() * 2);
            for s in &row.focal_roster {
                out.push((
                    s.player.clone(),
                    ResidualEntry {
                        match_id: row.match_id.clone(),
                        residual: r,
                        predicted: p,
                        position: s.position,
                        team_size: row.team_size,
                        zero_familiarity: zero,
                    },
                ));
            }
            if !opts.focal_only {
                for s in &row.opponent_roster {
                    out.push((
                        s.player.clone(),
                        ResidualEntry {
                            match_id: row.match_id.clone(),
                            residual: -r,
                            predicted: 1.0 - p,
                            position: s.position,
                            team_size: row.team_size,
                            zero_familiarity: zero,
                        },
                    ));
                }
            }
            Ok(out)
        })
        .collect();
    let mut ledger = ResidualLedger::default();
    for part in per_row {
        for (p, e) in part? {
            ledger.entries.entry(p).or_default().push(e);
        }
    }
    Ok(ledger)
}

/// Mean residual of a player; `None` when the player has no entries.
pub fn player_effect(ledger: &ResidualLedger, player: &PlayerId) -> Option<f64> {
    let e = ledger.entries.get(player)?;
    if e.is_empty() {
        return None;
    }
    Some(e.iter().map(|x| x.residual).sum::<f64>() / e.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlayerEffect {
    pub n: usize,
    pub tp: f64,
    pub qualified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamPlayerIndex {
    pub tau: usize,
    pub players: BTreeMap<PlayerId, PlayerEffect>,
}

impl TeamPlayerIndex {
    pub fn build(ledger: &ResidualLedger, tau: usize) -> Self {
        let players = ledger
            .effects()
            .into_iter()
            .map(|(p, n, tp)| (p, PlayerEffect { n, tp, qualified: n >= tau }))
            .collect();
        TeamPlayerIndex { tau, players }
    }

    pub fn qualified_count(&self) -> usize {
        self.players.values().filter(|e| e.qualified).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["player_id", "n_matches", "tp_effect", "qualified"])?;
        for (p, e) in &self.players {
            w.write_record([
                p.0.clone(),
                e.n.to_string(),
                e.tp.to_string(),
                (e.qualified as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<tp>", e))?;
        Ok(())
    }

    /// Reads an index export; `tau` is recovered as the smallest qualified count.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut players = BTreeMap::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let parse_err = |field: &str, m: String| Error::Parse {
                row,
                field: field.into(),
                message: m,
            };
            let n: usize = rec[1].parse().map_err(|e| parse_err("n_matches", format!("{e}")))?;
            let tp: f64 = rec[2].parse().map_err(|e| parse_err("tp_effect", format!("{e}")))?;
            let qualified = match &rec[3] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(parse_err("qualified", format!("bad flag `{other}`"))),
            };
            players.insert(PlayerId::new(&rec[0]), PlayerEffect { n, tp, qualified });
        }
        let tau = players
            .values()
            .filter(|e: &&PlayerEffect| e.qualified)
            .map(|e| e.n)
            .min()
            .unwrap_or(usize::MAX);
        Ok(TeamPlayerIndex { tau, players })
    }
}

/// Mean effect over qualified members; 0 when no member qualifies.
pub fn team_effect(index: &TeamPlayerIndex, roster: &[PlayerId]) -> Result<f64> {
    if roster.is_empty() {
        return Err(Error::Domain("empty roster".into()));
    }
    let (sum, count) = roster
        .iter()
        .filter_map(|p| index.players.get(p))
        .filter(|e| e.qualified)
        .fold((0.0, 0usize), |(s, c), e| (s + e.tp, c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Focal-minus-opponent team effect for each feature row.
pub fn team_effect_delta(index: &TeamPlayerIndex, row: &FeatureRow) -> Result<f64> {
    let f: Vec<PlayerId> = row.focal_roster.iter().map(|s| s.player.clone()).collect();
    let o: Vec<PlayerId> = row.opponent_roster.iter().map(|s| s.player.clone()).collect();
    Ok(team_effect(index, &f)? - team_effect(index, &o)?)
}

/// `TP_j * sqrt(n_j)` for every player.
pub fn scaled_effects(ledger: &ResidualLedger) -> Vec<f64> {
    ledger
        .effects()
        .into_iter()
        .map(|(_, n, tp)| tp * (n as f64).sqrt())
        .collect()
}

/// Scaled effects under the no-effect hypothesis: each recorded prediction
/// `p` is replaced by a fresh outcome `y* ~ Bernoulli(p)`, giving residual
/// `y* - p`. `replicates` independent copies are concatenated.
pub fn simulated_null_effects(ledger: &ResidualLedger, replicates: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ledger.len() * replicates);
    for _ in 0..replicates {
        for entries in ledger.entries.values() {
            let sum: f64 = entries
                .iter()
                .map(|e| (rng.random::<f64>() < e.predicted) as u8 as f64 - e.predicted)
                .sum();
            out.push(sum / (entries.len() as f64).sqrt());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ThresholdConfig {
    pub bin_size: usize,
    /// Bins with fewer players are left out of the band curve.
    pub min_bin_players: usize,
    /// Central coverage of the percentile band.
    pub band: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            bin_size: 10,
            min_bin_players: 5,
            band: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandBin {
    pub lower: usize,
    pub upper: usize,
    pub center: f64,
    pub players: usize,
    pub q_low: f64,
    pub q_high: f64,
    pub width: f64,
}

/// Percentile band of per-player effects within bins of match count.
pub fn band_curve(ledger: &ResidualLedger, cfg: &ThresholdConfig) -> Vec<BandBin> {
    let mut by_bin: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, n, tp) in ledger.effects() {
        by_bin.entry(n / cfg.bin_size).or_default().push(tp);
    }
    let tail = (1.0 - cfg.band) / 2.0;
    by_bin
        .into_iter()
        .filter(|(_, v)| v.len() >= cfg.min_bin_players)
        .map(|(b, mut v)| {
            v.sort_by(f64::total_cmp);
            let q_low = stats::quantile_sorted(&v, tail);
            let q_high = stats::quantile_sorted(&v, 1.0 - tail);
            let lower = b * cfg.bin_size;
            BandBin {
                lower,
                upper: lower + cfg.bin_size - 1,
                center: lower as f64 + cfg.bin_size as f64 / 2.0,
                players: v.len(),
                q_low,
                q_high,
                width: q_high - q_low,
            }
        })
        .collect()
}

/// Index of the point farthest (perpendicular) from the chord joining the
/// first and last points; `None` when no interior point leaves the chord.
pub fn knee_index(xs: &[f64], ys: &[f64]) -> Option<usize> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let (x0, y0, x1, y1) = (xs[0], ys[0], xs[n - 1], ys[n - 1]);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return None;
    }
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        let d = (dy * (xs[i] - x0) - dx * (ys[i] - y0)).abs() / len;
        if d > 1e-12 * scale && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSelection {
    pub tau: usize,
    pub bins: Vec<BandBin>,
    pub knee: Option<usize>,
    pub warning: Option<String>,
}

/// Elbow of the band-width curve; the threshold is the center of the knee bin.
pub fn select_threshold(ledger: &ResidualLedger, cfg: &ThresholdConfig) -> Result<ThresholdSelection> {
    let bins = band_curve(ledger, cfg);
    if bins.len() < 3 {
        return Err(Error::InsufficientRange(format!(
            "{} populated match-count bins, need at least 3",
            bins.len()
        )));
    }
    let xs: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.width).collect();
    match knee_index(&xs, &ys) {
        Some(i) => Ok(ThresholdSelection {
            tau: bins[i].center.round() as usize,
            knee: Some(i),
            bins,
            warning: None,
        }),
        None => {
            let msg = "band-width curve has no knee; using the smallest bin edge".to_string();
            log::warn!("{msg}");
            Ok(ThresholdSelection {
                tau: bins[0].lower.max(1),
                knee: None,
                bins,
                warning: Some(msg),
            })
        }
    }
}

/// Parses `min:max:step` into an ascending grid.
pub fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("bad sweep grid `{spec}`, expected min:max:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    if nums[2] == 0 || nums[0] > nums[1] {
        return Err(bad());
    }
    Ok((nums[0]..=nums[1]).step_by(nums[2]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub tau: usize,
    pub pseudo_r2: f64,
    pub accuracy: Option<f64>,
    /// Share of T2 players with a qualified effect at this threshold.
    pub coverage: f64,
    pub qualified_players: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSweepResult {
    pub points: Vec<SweepPoint>,
    pub selected_tau: usize,
    /// Share of T2 players that appear in the ledger at all.
    pub overlap_share: f64,
}

impl ThresholdSweepResult {
    pub fn argmax_is_interior(&self) -> bool {
        let i = self.points.iter().position(|p| p.tau == self.selected_tau);
        matches!(i, Some(i) if i > 0 && i + 1 < self.points.len())
    }
}

/// For each threshold: rebuild team effects on T2, fit a logistic model with
/// the effect delta as the only regressor on the training rows, and record
/// pseudo R², holdout accuracy and player coverage.
pub fn sweep_threshold(
    ledger: &ResidualLedger,
    t2: &FeatureTable,
    is_test: &[bool],
    grid: &[usize],
) -> Result<ThresholdSweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if is_test.len() != t2.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: t2.rows.len(),
            got: is_test.len(),
        });
    }
    let t2_players: BTreeSet<&PlayerId> = t2
        .rows
        .iter()
        .flat_map(|r| r.focal_roster.iter().chain(&r.opponent_roster).map(|s| &s.player))
        .collect();
    let total = t2_players.len().max(1) as f64;
    let overlap = t2_players.iter().filter(|p| ledger.entries.contains_key(**p)).count() as f64 / total;

    let points: Vec<Result<SweepPoint>> = grid
        .par_iter()
        .map(|&tau| {
            let index = TeamPlayerIndex::build(ledger, tau);
            let covered = t2_players
                .iter()
                .filter(|p| index.players.get(**p).is_some_and(|e| e.qualified))
                .count();
            let deltas: Vec<f64> = t2
                .rows
                .iter()
                .map(|r| team_effect_delta(&index, r))
                .collect::<Result<_>>()?;
            let (train, test) = split_design(t2, &deltas, is_test)?;
            let informative = stats::variance(&train.column(0)) > 1e-24;
            let (pseudo_r2, accuracy) = if informative {
                let m = glm::fit_logistic(&train, &FitConfig::default())?;
                let acc = if test.n() > 0 { Some(glm::accuracy(&m, &test)?) } else { None };
                (m.pseudo_r2, acc)
            } else {
                (0.0, None)
            };
            Ok(SweepPoint {
                tau,
                pseudo_r2,
                accuracy,
                coverage: covered as f64 / total,
                qualified_players: index.qualified_count(),
            })
        })
        .collect();
    let points: Vec<SweepPoint> = points.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.pseudo_r2 > points[best].pseudo_r2 {
            best = i;
        }
    }
    Ok(ThresholdSweepResult {
        selected_tau: points[best].tau,
        points,
        overlap_share: overlap,
    })
}

fn split_design(t2: &FeatureTable, deltas: &[f64], is_test: &[bool]) -> Result<(DesignMatrix, DesignMatrix)> {
    let mut parts: [(Vec<Vec<f64>>, Vec<u8>, Vec<String>); 2] = Default::default();
    for ((row, d), &test) in t2.rows.iter().zip(deltas).zip(is_test) {
        let part = &mut parts[test as usize];
        part.0.push(vec![*d]);
        part.1.push(row.y);
        part.2.push(row.focal_key());
    }
    let [train, test] = parts;
    Ok((
        DesignMatrix::from_rows(vec!["tp".into()], &train.0, &train.1, &train.2)?,
        DesignMatrix::from_rows(vec!["tp".into()], &test.0, &test.1, &test.2)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(r: f64) -> ResidualEntry {
        ResidualEntry {
            match_id: "m".into(),
            residual: r,
            predicted: 0.5,
            position: Position::Flank,
            team_size: 2,
            zero_familiarity: false,
        }
    }

    fn index(pairs: &[(&str, f64, bool)]) -> TeamPlayerIndex {
        TeamPlayerIndex {
            tau: 25,
            players: pairs
                .iter()
                .map(|(p, tp, q)| (PlayerId::new(*p), PlayerEffect { n: if *q { 30 } else { 3 }, tp: *tp, qualified: *q }))
                .collect(),
        }
    }

    #[test]
    fn player_effect_is_mean_or_missing() {
        let mut l = ResidualLedger::default();
        l.entries.insert(PlayerId::new("a"), vec![entry(0.3), entry(-0.1)]);
        assert!((player_effect(&l, &PlayerId::new("a")).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(player_effect(&l, &PlayerId::new("zz")), None);
    }

    #[test]
    fn team_effect_rules() {
        let idx = index(&[("a", 0.2, true), ("b", 0.0, true), ("c", 0.4, true), ("d", 0.9, false)]);
        let ids = |v: &[&str]| v.iter().map(|s| PlayerId::new(*s)).collect::<Vec<_>>();
        assert!((team_effect(&idx, &ids(&["a", "b"])).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(team_effect(&idx, &ids(&["d", "unknown"])).unwrap(), 0.0);
        assert_eq!(team_effect(&idx, &ids(&["c", "d"])).unwrap(), 0.4);
        assert!(team_effect(&idx, &[]).is_err());
    }

    #[test]
    fn knee_of_flat_curve_falls_back() {
        let mut l = ResidualLedger::default();
        for p in 0..30 {
            let n = 5 + (p % 3) * 10;
            let e: Vec<ResidualEntry> = (0..n).map(|i| entry(if i % 2 == 0 { 0.5 } else { -0.5 } * 0.0)).collect();
            l.entries.insert(PlayerId::new(format!("p{p}")), e);
        }
        let sel = select_threshold(&l, &ThresholdConfig::default()).unwrap();
        assert!(sel.warning.is_some());
        assert_eq!(sel.tau, 1);
    }

    #[test]
    fn too_few_bins_is_insufficient_range() {
        let mut l = ResidualLedger::default();
        for p in 0..10 {
            l.entries.insert(PlayerId::new(format!("p{p}")), vec![entry(0.1); 3]);
        }
        let err = select_threshold(&l, &ThresholdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("insufficient range"));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("2:10:2").unwrap(), vec![2, 4, 6, 8, 10]);
        assert!(parse_grid("2:10").is_err());
        assert!(parse_grid("2:10:0").is_err());
    }

    #[test]
    fn tp_csv_round_trip() {
        let idx = index(&[("a", 0.123456789, true), ("b", -0.5, false)]);
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let back = TeamPlayerIndex::read_csv(&buf[..]).unwrap();
        assert_eq!(back.players, idx.players);
    }
}
