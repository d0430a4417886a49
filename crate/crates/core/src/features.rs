//! Per-player rolling history over time-ordered matches, the four feature
//! families (eAPM, Solo Elo, functional familiarity, team familiarity), team
//! aggregates and standardized between-team deltas.

use crate::error::{Error, Result};
use crate::match_data::{MatchRecord, PlayerId, PlayerObservation, Position, Side};
use crate::util;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

/// Raw team features in canonical column order.
pub const FEATURE_NAMES: [&str; 6] = ["eapm", "selo", "ffam_match", "ffam_map", "ffam_civ", "tfam"];

pub fn effective_apm(actions: u64, duration: f64) -> Result<f64> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Domain(format!("nonpositive duration {duration}")));
    }
    Ok(actions as f64 / duration)
}

/// `ln(1 + prior_count)`.
pub fn functional_familiarity(prior_count: i64) -> Result<f64> {
    if prior_count < 0 {
        return Err(Error::Domain(format!("negative match count {prior_count}")));
    }
    Ok((prior_count as f64).ln_1p())
}

/// `ln(1 + mean over ordered pairs p1 != p2 of Fam(p1, p2))` for a square,
/// symmetric matrix of prior shared-team match counts.
pub fn team_familiarity(pair_counts: &[Vec<u32>]) -> Result<f64> {
    let n = pair_counts.len();
    if n < 2 {
        return Err(Error::Domain(format!("team familiarity needs at least 2 players, got {n}")));
    }
    let mut total = 0u64;
    for (i, row) in pair_counts.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: row.len() });
        }
        for (j, &c) in row.iter().enumerate() {
            if i != j {
                total += c as u64;
            }
        }
    }
    let pairs = (n * (n - 1)) as f64;
    Ok((total as f64 / pairs).ln_1p())
}

/// How the per-player eAPM entering the team mean is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EapmMode {
    /// Mean over the player's earlier matches; the current match when there are none.
    #[default]
    CareerMean,
    PerMatch,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlayerHistoryState {
    pub matches: u32,
    pub per_map: HashMap<u32, u32>,
    pub per_civ: HashMap<u32, u32>,
    pub last_solo_elo: Option<f64>,
    pub eapm_sum: f64,
    pub eapm_count: u32,
}

impl PlayerHistoryState {
    pub fn career_eapm(&self) -> Option<f64> {
        (self.eapm_count > 0).then(|| self.eapm_sum / self.eapm_count as f64)
    }
}

/// Interning store of all player histories and pairwise familiarity counters.
#[derive(Debug, Clone, Default)]
pub struct HistoryStore {
    player_ids: HashMap<PlayerId, u32>,
    players: Vec<PlayerHistoryState>,
    tokens: HashMap<String, u32>,
    familiarity: HashMap<(u32, u32), u32>,
    last_timestamp: Option<i64>,
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl HistoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn player_index(&self, p: &PlayerId) -> Option<u32> {
        self.player_ids.get(p).copied()
    }

    fn intern_player(&mut self, p: &PlayerId) -> u32 {
        if let Some(&i) = self.player_ids.get(p) {
            return i;
        }
        let i = self.players.len() as u32;
        self.players.push(PlayerHistoryState::default());
        self.player_ids.insert(p.clone(), i);
        i
    }

    fn intern_token(&mut self, t: &str) -> u32 {
        if let Some(&i) = self.tokens.get(t) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.tokens.insert(t.to_string(), i);
        i
    }

    pub fn player(&self, p: &PlayerId) -> Option<&PlayerHistoryState> {
        self.player_index(p).map(|i| &self.players[i as usize])
    }

    /// Shared-team match count; symmetric by construction.
    pub fn familiarity(&self, a: &PlayerId, b: &PlayerId) -> u32 {
        match (self.player_index(a), self.player_index(b)) {
            (Some(x), Some(y)) if x != y => self.familiarity.get(&pair_key(x, y)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn map_count(&self, p: &PlayerId, map: &str) -> u32 {
        let (Some(pi), Some(&ti)) = (self.player_index(p), self.tokens.get(map)) else {
            return 0;
        };
        self.players[pi as usize].per_map.get(&ti).copied().unwrap_or(0)
    }

    pub fn civ_count(&self, p: &PlayerId, civ: &str) -> u32 {
        let (Some(pi), Some(&ti)) = (self.player_index(p), self.tokens.get(civ)) else {
            return 0;
        };
        self.players[pi as usize].per_civ.get(&ti).copied().unwrap_or(0)
    }

    pub fn match_count(&self, p: &PlayerId) -> u32 {
        self.player(p).map_or(0, |s| s.matches)
    }

    /// Applies a finished match: participant context counters, eAPM stats and
    /// same-team pair counters. Non-participants are untouched.
    pub fn update_history(&mut self, record: &MatchRecord) -> Result<()> {
        if let Some(last) = self.last_timestamp {
            if record.timestamp < last {
                return Err(Error::OutOfOrder {
                    match_id: record.match_id.clone(),
                    timestamp: record.timestamp,
                    last,
                });
            }
        }
        self.last_timestamp = Some(record.timestamp);
        let map = self.intern_token(&record.map);
        for side in [Side::A, Side::B] {
            let mut members = Vec::with_capacity(4);
            for obs in record.team(side) {
                let civ = self.intern_token(&obs.civilization);
                let idx = self.intern_player(&obs.player);
                let eapm = effective_apm(obs.effective_actions, record.duration)?;
                let st = &mut self.players[idx as usize];
                st.matches += 1;
                *st.per_map.entry(map).or_insert(0) += 1;
                *st.per_civ.entry(civ).or_insert(0) += 1;
                st.last_solo_elo = Some(obs.solo_elo);
                st.eapm_sum += eapm;
                st.eapm_count += 1;
                members.push(idx);
            }
            for i in 0..members.len() {
                for j in (i + 1)..members.len() {
                    *self.familiarity.entry(pair_key(members[i], members[j])).or_insert(0) += 1;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamFeatureVector {
    pub eapm_mean: f64,
    pub selo_mean: f64,
    pub ffam_match: f64,
    pub ffam_map: f64,
    pub ffam_civ: f64,
    pub tfam: f64,
    pub team_size: usize,
}

impl TeamFeatureVector {
    pub fn values(&self) -> [f64; 6] {
        [
            self.eapm_mean,
            self.selo_mean,
            self.ffam_match,
            self.ffam_map,
            self.ffam_civ,
            self.tfam,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }

    pub fn from_values(v: [f64; 6], team_size: usize) -> Self {
        TeamFeatureVector {
            eapm_mean: v[0],
            selo_mean: v[1],
            ffam_match: v[2],
            ffam_map: v[3],
            ffam_civ: v[4],
            tfam: v[5],
            team_size,
        }
    }
}

/// Team means of the member features. `history` must reflect only matches
/// strictly earlier than this one.
pub fn aggregate_team(
    observations: &[PlayerObservation],
    history: &HistoryStore,
    map: &str,
    duration: f64,
    eapm_mode: EapmMode,
) -> Result<TeamFeatureVector> {
    if observations.is_empty() {
        return Err(Error::Domain("empty team".into()));
    }
    let n = observations.len() as f64;
    let mut sums = [0.0f64; 5];
    for obs in observations {
        let current = effective_apm(obs.effective_actions, duration)?;
        let state = history.player(&obs.player);
        let eapm = match eapm_mode {
            EapmMode::PerMatch => current,
            EapmMode::CareerMean => state.and_then(|s| s.career_eapm()).unwrap_or(current),
        };
        sums[0] += eapm;
        sums[1] += obs.solo_elo;
        sums[2] += functional_familiarity(history.match_count(&obs.player) as i64)?;
        sums[3] += functional_familiarity(history.map_count(&obs.player, map) as i64)?;
        sums[4] += functional_familiarity(history.civ_count(&obs.player, &obs.civilization) as i64)?;
    }
    let tfam = if observations.len() >= 2 {
        let counts: Vec<Vec<u32>> = observations
            .iter()
            .map(|a| {
                observations
                    .iter()
                    .map(|b| if a.player == b.player { 0 } else { history.familiarity(&a.player, &b.player) })
                    .collect()
            })
            .collect();
        team_familiarity(&counts)?
    } else {
        0.0
    };
    Ok(TeamFeatureVector::from_values(
        [sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n, tfam],
        observations.len(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterSlot {
    pub player: PlayerId,
    pub position: Position,
}

/// One team match, oriented from the focal team's side.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub match_id: String,
    pub timestamp: i64,
    /// 1 when the focal team won.
    pub y: u8,
    pub team_size: usize,
    pub focal_side: Side,
    pub focal: TeamFeatureVector,
    pub opponent: TeamFeatureVector,
    pub focal_roster: Vec<RosterSlot>,
    pub opponent_roster: Vec<RosterSlot>,
    /// Standardized deltas aligned with [`FeatureTable::columns`].
    pub delta: Vec<f64>,
}

fn team_key(roster: &[RosterSlot]) -> String {
    let mut ids: Vec<&str> = roster.iter().map(|s| s.player.as_str()).collect();
    ids.sort_unstable();
    ids.join("+")
}

impl FeatureRow {
    pub fn raw_delta(&self) -> [f64; 6] {
        let a = self.focal.values();
        let b = self.opponent.values();
        std::array::from_fn(|i| a[i] - b[i])
    }

    /// Team identity of the focal roster, used as the cluster label.
    pub fn focal_key(&self) -> String {
        team_key(&self.focal_roster)
    }

    pub fn opponent_key(&self) -> String {
        team_key(&self.opponent_roster)
    }

    /// Both teams start without any shared history.
    pub fn zero_familiarity(&self) -> bool {
        self.focal.tfam == 0.0 && self.opponent.tfam == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub mean: f64,
    pub sd: f64,
}

/// Per-feature delta standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler {
    pub features: BTreeMap<String, ScaleParams>,
}

impl Scaler {
    /// Fits mean / sample sd of the raw deltas. Features with zero variance are
    /// dropped with a warning.
    pub fn fit(rows: &[FeatureRow]) -> Scaler {
        let mut features = BTreeMap::new();
        for (j, name) in FEATURE_NAMES.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r.raw_delta()[j]).collect();
            let mean = crate::stats::mean(&col);
            let sd = crate::stats::std_dev(&col);
            if !(sd > 1e-12) || !mean.is_finite() {
                log::warn!("dropping zero-variance feature `{name}`");
                continue;
            }
            features.insert(name.to_string(), ScaleParams { mean, sd });
        }
        Scaler { features }
    }

    /// Kept features in canonical order.
    pub fn columns(&self) -> Vec<String> {
        FEATURE_NAMES
            .iter()
            .filter(|n| self.features.contains_key(**n))
            .map(|n| n.to_string())
            .collect()
    }

    pub fn read<R: Read>(r: R) -> Result<Scaler> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub focal_team: Side,
    pub y: u8,
}

/// `(focal - opponent - mean) / sd` for every scaler feature; `y = 1` iff the focal team won.
pub fn delta_standardize(
    focal: &TeamFeatureVector,
    opponent: &TeamFeatureVector,
    scaler: &Scaler,
    focal_won: bool,
) -> Result<DeltaFeatureVector> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for name in scaler.columns() {
        let p = scaler.features[&name];
        let a = focal.get(&name).expect("known feature");
        let b = opponent.get(&name).expect("known feature");
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Domain(format!("non-finite `{name}` feature")));
        }
        values.push((a - b - p.mean) / p.sd);
        names.push(name);
    }
    Ok(DeltaFeatureVector {
        names,
        values,
        focal_team: Side::A,
        y: focal_won as u8,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub focal_seed: u64,
    pub eapm_mode: EapmMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            focal_seed: 0,
            eapm_mode: EapmMode::CareerMean,
        }
    }
}

fn roster(obs: &[PlayerObservation]) -> Vec<RosterSlot> {
    obs.iter()
        .map(|o| RosterSlot {
            player: o.player.clone(),
            position: o.position,
        })
        .collect()
}

/// Randomly chosen (seeded, keyed on match id) focal side of a match.
pub fn focal_side(seed: u64, match_id: &str) -> Side {
    if util::uniform_key(seed, "focal", match_id) & 1 == 0 {
        Side::A
    } else {
        Side::B
    }
}

fn materialize(record: &MatchRecord, history: &HistoryStore, cfg: &FeatureConfig) -> Result<FeatureRow> {
    let focal_side = focal_side(cfg.focal_seed, &record.match_id);
    let opp_side = focal_side.other();
    let focal = aggregate_team(record.team(focal_side), history, &record.map, record.duration, cfg.eapm_mode)?;
    let opponent = aggregate_team(record.team(opp_side), history, &record.map, record.duration, cfg.eapm_mode)?;
    Ok(FeatureRow {
        match_id: record.match_id.clone(),
        timestamp: record.timestamp,
        y: (record.winner == focal_side) as u8,
        team_size: record.mode.team_size(),
        focal_side,
        focal,
        opponent,
        focal_roster: roster(record.team(focal_side)),
        opponent_roster: roster(record.team(opp_side)),
        delta: Vec::new(),
    })
}

/// Single pass over a chronologically ordered log. Every team match gets raw
/// team features built from matches with a strictly smaller timestamp;
/// matches sharing a timestamp are materialized before any of them is applied.
pub fn featurize_log(records: &[MatchRecord], cfg: &FeatureConfig) -> Result<Vec<FeatureRow>> {
    let mut history = HistoryStore::new();
    let mut rows = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let ts = records[start].timestamp;
        let mut end = start;
        while end < records.len() && records[end].timestamp == ts {
            end += 1;
        }
        for r in &records[start..end] {
            if r.mode.is_team() {
                rows.push(materialize(r, &history, cfg)?);
            }
        }
        for r in &records[start..end] {
            history.update_history(r)?;
        }
        start = end;
    }
    Ok(rows)
}

/// A set of feature rows with standardized delta columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Fills the standardized deltas of every row using `scaler`.
    pub fn standardize(mut rows: Vec<FeatureRow>, scaler: &Scaler) -> Result<FeatureTable> {
        let columns = scaler.columns();
        for r in rows.iter_mut() {
            let d = delta_standardize(&r.focal, &r.opponent, scaler, r.y == 1)?;
            r.delta = d.values;
        }
        Ok(FeatureTable { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r.delta[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "match_id",
            "ts",
            "y",
            "team_size",
            "focal_side",
            "cluster",
            "opponent",
            "focal_players",
            "opponent_players",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(FEATURE_NAMES.iter().map(|n| format!("f_{n}")));
        header.extend(FEATURE_NAMES.iter().map(|n| format!("o_{n}")));
        header.extend(self.columns.iter().map(|c| format!("d_{c}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.match_id.clone(),
                r.timestamp.to_string(),
                r.y.to_string(),
                r.team_size.to_string(),
                r.focal_side.as_str().to_string(),
                r.focal_key(),
                r.opponent_key(),
                encode_roster(&r.focal_roster)?,
                encode_roster(&r.opponent_roster)?,
            ];
            rec.extend(r.focal.values().iter().map(|v| v.to_string()));
            rec.extend(r.opponent.values().iter().map(|v| v.to_string()));
            rec.extend(r.delta.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<features>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureTable> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let fixed = 9 + 2 * FEATURE_NAMES.len();
        if header.len() < fixed {
            return Err(Error::Parse {
                row: 1,
                field: "<header>".into(),
                message: "too few columns for a feature table".into(),
            });
        }
        let columns: Vec<String> = header[fixed..]
            .iter()
            .map(|h| h.strip_prefix("d_").unwrap_or(h).to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|e| Error::Parse {
                    row,
                    field: header[j].clone(),
                    message: e.to_string(),
                })
            };
            let int = |j: usize| -> Result<i64> {
                rec[j].parse::<i64>().map_err(|e| Error::Parse {
                    row,
                    field: header[j].clone(),
                    message: e.to_string(),
                })
            };
            let team_size = int(3)? as usize;
            let f: [f64; 6] = [num(9)?, num(10)?, num(11)?, num(12)?, num(13)?, num(14)?];
            let o: [f64; 6] = [num(15)?, num(16)?, num(17)?, num(18)?, num(19)?, num(20)?];
            let delta = (fixed..header.len()).map(num).collect::<Result<Vec<_>>>()?;
            rows.push(FeatureRow {
                match_id: rec[0].to_string(),
                timestamp: int(1)?,
                y: int(2)? as u8,
                team_size,
                focal_side: if &rec[4] == "B" { Side::B } else { Side::A },
                focal: TeamFeatureVector::from_values(f, team_size),
                opponent: TeamFeatureVector::from_values(o, team_size),
                focal_roster: decode_roster(&rec[7], row)?,
                opponent_roster: decode_roster(&rec[8], row)?,
                delta,
            });
        }
        Ok(FeatureTable { columns, rows })
    }
}

fn encode_roster(r: &[RosterSlot]) -> Result<String> {
    let mut parts = Vec::with_capacity(r.len());
    for s in r {
        if s.player.as_str().contains(';') {
            return Err(Error::Domain(format!("player id `{}` contains `;`", s.player)));
        }
        parts.push(format!("{}:{}", s.player, s.position.as_str()));
    }
    Ok(parts.join(";"))
}

fn decode_roster(s: &str, row: usize) -> Result<Vec<RosterSlot>> {
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (pid, pos) = p.rsplit_once(':').ok_or_else(|| Error::Parse {
                row,
                field: "players".into(),
                message: format!("bad roster entry `{p}`"),
            })?;
            let position = Position::parse(pos).ok_or_else(|| Error::Parse {
                row,
                field: "players".into(),
                message: format!("bad position `{pos}`"),
            })?;
            Ok(RosterSlot {
                player: PlayerId::new(pid),
                position,
            })
        })
        .collect()
}
