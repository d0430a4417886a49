//! Match log data model, ingestion (JSONL / CSV), chronological ordering and
//! the solo / T1 / T2 dataset split.

use crate::error::{Error, Result};
use crate::util;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub String);

impl PlayerId {
    pub fn new(id: impl Into<String>) -> Self {
        PlayerId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Flank,
    Pocket,
    None,
}

impl Position {
    pub fn as_str(self) -> &'static str {
        match self {
            Position::Flank => "flank",
            Position::Pocket => "pocket",
            Position::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flank" => Some(Position::Flank),
            "pocket" => Some(Position::Pocket),
            "none" => Some(Position::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "solo")]
    Solo,
    #[serde(rename = "2v2")]
    TwoVsTwo,
    #[serde(rename = "3v3")]
    ThreeVsThree,
    #[serde(rename = "4v4")]
    FourVsFour,
}

impl Mode {
    pub fn team_size(self) -> usize {
        match self {
            Mode::Solo => 1,
            Mode::TwoVsTwo => 2,
            Mode::ThreeVsThree => 3,
            Mode::FourVsFour => 4,
        }
    }

    pub fn is_team(self) -> bool {
        self != Mode::Solo
    }

    pub fn from_team_size(size: usize) -> Option<Self> {
        match size {
            1 => Some(Mode::Solo),
            2 => Some(Mode::TwoVsTwo),
            3 => Some(Mode::ThreeVsThree),
            4 => Some(Mode::FourVsFour),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solo => "solo",
            Mode::TwoVsTwo => "2v2",
            Mode::ThreeVsThree => "3v3",
            Mode::FourVsFour => "4v4",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "solo" => Some(Mode::Solo),
            "2v2" => Some(Mode::TwoVsTwo),
            "3v3" => Some(Mode::ThreeVsThree),
            "4v4" => Some(Mode::FourVsFour),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "A" => Some(Side::A),
            "B" => Some(Side::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerObservation {
    #[serde(rename = "pid")]
    pub player: PlayerId,
    #[serde(rename = "selo")]
    pub solo_elo: f64,
    #[serde(rename = "telo", default)]
    pub team_elo: Option<f64>,
    #[serde(rename = "actions")]
    pub effective_actions: u64,
    #[serde(rename = "pos")]
    pub position: Position,
    #[serde(rename = "civ")]
    pub civilization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub mode: Mode,
    pub map: String,
    #[serde(rename = "duration_min")]
    pub duration: f64,
    pub winner: Side,
    pub team_a: Vec<PlayerObservation>,
    pub team_b: Vec<PlayerObservation>,
}

enum Violation {
    Field { field: String, message: String },
    Roster(String),
}

impl MatchRecord {
    pub fn team(&self, side: Side) -> &[PlayerObservation] {
        match side {
            Side::A => &self.team_a,
            Side::B => &self.team_b,
        }
    }

    pub fn players(&self) -> impl Iterator<Item = &PlayerObservation> {
        self.team_a.iter().chain(self.team_b.iter())
    }

    fn check(&self) -> std::result::Result<(), Violation> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Violation::Field {
                field: "duration_min".into(),
                message: "nonpositive duration".into(),
            });
        }
        for (side, team) in [("team_a", &self.team_a), ("team_b", &self.team_b)] {
            for (i, obs) in team.iter().enumerate() {
                if !obs.solo_elo.is_finite() {
                    return Err(Violation::Field {
                        field: format!("{side}[{i}].selo"),
                        message: "non-finite solo elo".into(),
                    });
                }
                if let Some(t) = obs.team_elo {
                    if !t.is_finite() {
                        return Err(Violation::Field {
                            field: format!("{side}[{i}].telo"),
                            message: "non-finite team elo".into(),
                        });
                    }
                }
            }
        }
        let size = self.mode.team_size();
        if self.team_a.len() != size || self.team_b.len() != size {
            return Err(Violation::Roster(format!(
                "mode {} needs {size} players per team, got {} and {}",
                self.mode.as_str(),
                self.team_a.len(),
                self.team_b.len()
            )));
        }
        let mut seen = HashSet::new();
        for obs in self.players() {
            if !seen.insert(&obs.player) {
                return Err(Violation::Roster(format!(
                    "player `{}` appears twice",
                    obs.player
                )));
            }
        }
        Ok(())
    }

    /// Checks the record invariants (roster sizes, unique players, positive duration).
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|v| Error::Schema {
            match_id: self.match_id.clone(),
            message: match v {
                Violation::Field { field, message } => format!("{field}: {message}"),
                Violation::Roster(m) => m,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

fn finish(row: usize, record: MatchRecord) -> Result<MatchRecord> {
    match record.check() {
        Ok(()) => Ok(record),
        Err(Violation::Field { field, message }) => Err(Error::Parse {
            row,
            field,
            message,
        }),
        Err(Violation::Roster(message)) => Err(Error::Schema {
            match_id: record.match_id,
            message,
        }),
    }
}

/// Reads match records in input order. Errors name the (1-based) row and field.
pub fn parse_matches<R: Read>(source: R, format: Format) -> Result<Vec<MatchRecord>> {
    match format {
        Format::Jsonl => parse_jsonl(source),
        Format::Csv => parse_csv(source),
    }
}

fn parse_jsonl<R: Read>(source: R) -> Result<Vec<MatchRecord>> {
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            row: i + 1,
            field: "<line>".into(),
            message: e.to_string(),
        })?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let parsed: Vec<Result<MatchRecord>> = lines
        .par_iter()
        .map(|(row, line)| {
            let de = &mut serde_json::Deserializer::from_str(line);
            let record: MatchRecord =
                serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
                    row: *row,
                    field: e.path().to_string(),
                    message: e.inner().to_string(),
                })?;
            finish(*row, record)
        })
        .collect();
    parsed.into_iter().collect()
}

/// Column order of the per-observation CSV variant.
pub const CSV_COLUMNS: [&str; 13] = [
    "match_id",
    "ts",
    "mode",
    "map",
    "duration_min",
    "winner",
    "team",
    "pid",
    "selo",
    "telo",
    "actions",
    "pos",
    "civ",
];

fn parse_csv<R: Read>(source: R) -> Result<Vec<MatchRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != CSV_COLUMNS {
        return Err(Error::Parse {
            row: 1,
            field: "<header>".into(),
            message: format!("expected columns {}", CSV_COLUMNS.join(",")),
        });
    }
    let mut out: Vec<MatchRecord> = Vec::new();
    let mut current: Option<(usize, MatchRecord)> = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let bad = |idx: usize, message: String| Error::Parse {
            row,
            field: CSV_COLUMNS[idx].to_string(),
            message,
        };
        let ts: i64 = field(1).parse().map_err(|e| bad(1, format!("{e}")))?;
        let mode = Mode::parse(field(2)).ok_or_else(|| bad(2, format!("unknown mode `{}`", field(2))))?;
        let duration: f64 = field(4).parse().map_err(|e| bad(4, format!("{e}")))?;
        let winner = Side::parse(field(5)).ok_or_else(|| bad(5, "expected A or B".into()))?;
        let team = Side::parse(field(6)).ok_or_else(|| bad(6, "expected A or B".into()))?;
        let selo: f64 = field(8).parse().map_err(|e| bad(8, format!("{e}")))?;
        let telo = match field(9) {
            "" | "null" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(9, format!("{e}")))?),
        };
        let actions: u64 = field(10).parse().map_err(|e| bad(10, format!("{e}")))?;
        let pos = Position::parse(field(11)).ok_or_else(|| bad(11, format!("unknown position `{}`", field(11))))?;
        let obs = PlayerObservation {
            player: PlayerId::new(field(7)),
            solo_elo: selo,
            team_elo: telo,
            effective_actions: actions,
            position: pos,
            civilization: field(12).to_string(),
        };
        let same = matches!(&current, Some((_, m)) if m.match_id == field(0));
        if !same {
            if let Some((first_row, m)) = current.take() {
                out.push(finish(first_row, m)?);
            }
            current = Some((
                row,
                MatchRecord {
                    match_id: field(0).to_string(),
                    timestamp: ts,
                    mode,
                    map: field(3).to_string(),
                    duration,
                    winner,
                    team_a: Vec::new(),
                    team_b: Vec::new(),
                },
            ));
        }
        let (_, m) = current.as_mut().expect("current match");
        match team {
            Side::A => m.team_a.push(obs),
            Side::B => m.team_b.push(obs),
        }
    }
    if let Some((first_row, m)) = current.take() {
        out.push(finish(first_row, m)?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[MatchRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(records: &[MatchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        for side in [Side::A, Side::B] {
            for obs in r.team(side) {
                w.write_record([
                    r.match_id.clone(),
                    r.timestamp.to_string(),
                    r.mode.as_str().to_string(),
                    r.map.clone(),
                    r.duration.to_string(),
                    r.winner.as_str().to_string(),
                    side.as_str().to_string(),
                    obs.player.0.clone(),
                    obs.solo_elo.to_string(),
                    obs.team_elo.map(|t| t.to_string()).unwrap_or_default(),
                    obs.effective_actions.to_string(),
                    obs.position.as_str().to_string(),
                    obs.civilization.clone(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Sorts by timestamp; equal timestamps are ordered by `match_id`.
pub fn order_chronologically(mut records: Vec<MatchRecord>) -> Vec<MatchRecord> {
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.match_id.cmp(&b.match_id))
    });
    records
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub split_s: Vec<MatchRecord>,
    pub split_t1: Vec<MatchRecord>,
    pub split_t2: Vec<MatchRecord>,
    pub seed: u64,
}

/// Solo matches go to S; team matches are divided 50:50 between T1 and T2 by
/// a seeded uniform draw keyed on `match_id` (T1 gets the extra match when the
/// count is odd). Each split keeps the input order.
pub fn split_dataset(records: &[MatchRecord], seed: u64) -> DatasetSplits {
    let (solo, team): (Vec<&MatchRecord>, Vec<&MatchRecord>) =
        records.iter().partition(|r| !r.mode.is_team());
    let ids: Vec<&str> = team.iter().map(|r| r.match_id.as_str()).collect();
    let in_t1 = util::keyed_selection(&ids, seed, "t1t2", ids.len().div_ceil(2));
    let mut split_t1 = Vec::with_capacity(in_t1.len() / 2 + 1);
    let mut split_t2 = Vec::with_capacity(in_t1.len() / 2 + 1);
    for (r, t1) in team.into_iter().zip(in_t1) {
        if t1 {
            split_t1.push(r.clone());
        } else {
            split_t2.push(r.clone());
        }
    }
    DatasetSplits {
        split_s: solo.into_iter().cloned().collect(),
        split_t1,
        split_t2,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn obs(pid: &str, selo: f64) -> PlayerObservation {
        PlayerObservation {
            player: PlayerId::new(pid),
            solo_elo: selo,
            team_elo: Some(1000.0),
            effective_actions: 600,
            position: Position::Flank,
            civilization: "franks".into(),
        }
    }

    fn record(id: &str, ts: i64, mode: Mode) -> MatchRecord {
        let n = mode.team_size();
        MatchRecord {
            match_id: id.into(),
            timestamp: ts,
            mode,
            map: "arabia".into(),
            duration: 30.0,
            winner: Side::A,
            team_a: (0..n).map(|i| obs(&format!("{id}a{i}"), 1000.0)).collect(),
            team_b: (0..n).map(|i| obs(&format!("{id}b{i}"), 1000.0)).collect(),
        }
    }

    const LINE_2V2: &str = r#"{"match_id":"m1","ts":100,"mode":"2v2","map":"arabia","duration_min":31.5,"winner":"A","team_a":[{"pid":"p1","selo":1200.0,"telo":1100.0,"actions":900,"pos":"flank","civ":"franks"},{"pid":"p2","selo":1000.0,"telo":null,"actions":700,"pos":"pocket","civ":"mayans"}],"team_b":[{"pid":"p3","selo":1150.0,"telo":1120.0,"actions":800,"pos":"flank","civ":"huns"},{"pid":"p4","selo":1010.0,"telo":1090.0,"actions":650,"pos":"pocket","civ":"goths"}]}"#;

    #[test]
    fn parses_one_2v2_line() {
        let recs = parse_matches(LINE_2V2.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].players().count(), 4);
        assert_eq!(recs[0].team_a[1].team_elo, None);
        assert_eq!(recs[0].team_b[1].position, Position::Pocket);
    }

    #[test]
    fn empty_stream_is_empty_list() {
        assert!(parse_matches(&b""[..], Format::Jsonl).unwrap().is_empty());
        let header = CSV_COLUMNS.join(",") + "\n";
        assert!(parse_matches(header.as_bytes(), Format::Csv).unwrap().is_empty());
    }

    #[test]
    fn zero_duration_is_rejected_with_row_and_field() {
        let line = LINE_2V2.replace("31.5", "0.0");
        let input = format!("{LINE_2V2}\n{line}\n");
        let err = parse_matches(input.as_bytes(), Format::Jsonl).unwrap_err();
        match err {
            Error::Parse { row, field, message } => {
                assert_eq!(row, 2);
                assert_eq!(field, "duration_min");
                assert_eq!(message, "nonpositive duration");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_field_names_path() {
        let line = LINE_2V2.replace(r#""actions":800"#, r#""actions":"many""#);
        let err = parse_matches(line.as_bytes(), Format::Jsonl).unwrap_err();
        match err {
            Error::Parse { row, field, .. } => {
                assert_eq!(row, 1);
                assert_eq!(field, "team_b[0].actions");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roster_mismatch_is_schema_error() {
        let line = LINE_2V2.replace(r#""mode":"2v2""#, r#""mode":"3v3""#);
        let err = parse_matches(line.as_bytes(), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err:?}");
    }

    #[test]
    fn duplicate_player_is_schema_error() {
        let line = LINE_2V2.replace(r#""pid":"p4""#, r#""pid":"p1""#);
        let err = parse_matches(line.as_bytes(), Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![record("m1", 5, Mode::TwoVsTwo), record("m2", 6, Mode::Solo)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let back = parse_matches(&buf[..], Format::Csv).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn csv_bad_cell_names_column() {
        let recs = vec![record("m1", 5, Mode::TwoVsTwo)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen(",600,", ",-3,", 1);
        let err = parse_matches(text.as_bytes(), Format::Csv).unwrap_err();
        match err {
            Error::Parse { row, field, .. } => {
                assert_eq!(row, 2);
                assert_eq!(field, "actions");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ordering_rules() {
        let a = record("a", 1, Mode::Solo);
        let b = record("b", 2, Mode::Solo);
        let c = record("c", 3, Mode::Solo);
        let sorted = vec![a.clone(), b.clone(), c.clone()];
        assert_eq!(order_chronologically(sorted.clone()), sorted);
        assert_eq!(
            order_chronologically(vec![c.clone(), b.clone(), a.clone()]),
            sorted
        );
        let x = record("x", 5, Mode::Solo);
        let w = record("w", 5, Mode::Solo);
        let out = order_chronologically(vec![x, w]);
        assert_eq!(out[0].match_id, "w");
        assert_eq!(out[1].match_id, "x");
    }

    #[test]
    fn split_counts_and_determinism() {
        let mut recs: Vec<MatchRecord> = (0..10)
            .map(|i| record(&format!("t{i}"), i, Mode::TwoVsTwo))
            .collect();
        recs.extend((0..3).map(|i| record(&format!("s{i}"), 20 + i, Mode::Solo)));
        let s = split_dataset(&recs, 42);
        assert_eq!(s.split_s.len(), 3);
        assert_eq!(s.split_t1.len(), 5);
        assert_eq!(s.split_t2.len(), 5);
        assert_eq!(split_dataset(&recs, 42), s);
        let mut ids: Vec<&str> = s
            .split_t1
            .iter()
            .chain(&s.split_t2)
            .map(|r| r.match_id.as_str())
            .collect();
        ids.sort();
        let mut all: Vec<&str> = recs[..10].iter().map(|r| r.match_id.as_str()).collect();
        all.sort();
        assert_eq!(ids, all);
    }

    #[test]
    fn large_log_split_sizes() {
        // 1,623,828 team matches split evenly.
        let n = 1_623_828usize;
        let ids: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let t1 = util::keyed_selection(&refs, 1, "t1t2", n.div_ceil(2));
        let count = t1.iter().filter(|b| **b).count();
        assert_eq!(count, 811_914);
        assert_eq!(n - count, 811_914);
    }
}
