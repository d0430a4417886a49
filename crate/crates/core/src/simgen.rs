//! Seeded synthetic worlds: a player population with latent traits, an Elo
//! ladder, quasi-random Elo-balanced team matchmaking with premade groups, and
//! a logistic outcome model. Emits ingestion-compatible match logs plus a
//! ground-truth sidecar.

use crate::error::{Error, Result};
use crate::features::team_familiarity;
use crate::glm::sigmoid;
use crate::match_data::{self, MatchRecord, Mode, PlayerId, PlayerObservation, Position, Side};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraitDist {
    pub mean: f64,
    pub sd: f64,
}

/// Logit weights of the team outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeWeights {
    /// On the difference in mean skill index.
    pub skill: f64,
    /// On the difference in mean team-player trait.
    pub theta: f64,
    /// On the difference in team familiarity times mean trait.
    pub familiarity_theta: f64,
    /// On the difference in team familiarity.
    pub familiarity: f64,
}

impl Default for OutcomeWeights {
    fn default() -> Self {
        OutcomeWeights {
            skill: 1.0,
            theta: 1.0,
            familiarity_theta: 0.0,
            familiarity: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EloParams {
    pub k_factor: f64,
    pub scale: f64,
    pub base: f64,
    /// Larger K used for a player's first `provisional_matches` rated games.
    pub provisional_k: f64,
    pub provisional_matches: u32,
}

impl Default for EloParams {
    fn default() -> Self {
        EloParams {
            k_factor: 32.0,
            scale: 400.0,
            base: 1000.0,
            provisional_k: 32.0,
            provisional_matches: 0,
        }
    }
}

/// Relative frequency of the team modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeWeights {
    #[serde(rename = "2v2")]
    pub two: f64,
    #[serde(rename = "3v3")]
    pub three: f64,
    #[serde(rename = "4v4")]
    pub four: f64,
}

impl Default for ModeWeights {
    fn default() -> Self {
        ModeWeights {
            two: 1.0,
            three: 1.0,
            four: 1.0,
        }
    }
}

impl ModeWeights {
    fn pairs(&self) -> [(Mode, f64); 3] {
        [
            (Mode::TwoVsTwo, self.two),
            (Mode::ThreeVsThree, self.three),
            (Mode::FourVsFour, self.four),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueRating {
    #[default]
    TeamElo,
    SoloElo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_players: usize,
    /// Mechanical skill in actions per minute.
    pub mechanical: TraitDist,
    /// Tactical skill on the logit scale.
    pub tactical: TraitDist,
    pub team_player: TraitDist,
    /// Logit contribution of one action per minute to the skill index.
    pub mechanical_weight: f64,
    pub weights: OutcomeWeights,
    /// Standard deviation of the per-match logit shock.
    pub noise_sd: f64,
    /// Per-match standard deviation of realized APM around the player's mean.
    pub action_noise_sd: f64,
    /// Match length in minutes.
    pub duration: TraitDist,
    /// Chance that a queueing player brings friends from their clique.
    pub premade_prob: f64,
    pub clique_size: usize,
    /// Log-scale spread of player activity; 0 gives every player the same rate.
    pub activity_sd: f64,
    pub solo_matches_per_player: f64,
    pub team_matches_per_player: f64,
    pub mode_weights: ModeWeights,
    pub n_maps: usize,
    pub n_civs: usize,
    pub elo: EloParams,
    /// Largest accepted Team Elo gap between paired teams.
    pub tolerance: f64,
    /// Complete waiting teams after which the oldest one is paired regardless of tolerance.
    pub max_waiting_teams: usize,
    pub queue_rating: QueueRating,
    /// Seed each player's Team Elo with their Solo Elo when the team phase starts.
    pub team_elo_from_solo: bool,
    pub start_timestamp: i64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 1,
            n_players: 200,
            mechanical: TraitDist { mean: 40.0, sd: 10.0 },
            tactical: TraitDist { mean: 0.0, sd: 1.0 },
            team_player: TraitDist { mean: 0.0, sd: 1.0 },
            mechanical_weight: 0.05,
            weights: OutcomeWeights::default(),
            noise_sd: 0.3,
            action_noise_sd: 6.0,
            duration: TraitDist { mean: 35.0, sd: 8.0 },
            premade_prob: 0.2,
            clique_size: 4,
            activity_sd: 0.0,
            solo_matches_per_player: 60.0,
            team_matches_per_player: 100.0,
            mode_weights: ModeWeights::default(),
            n_maps: 8,
            n_civs: 20,
            elo: EloParams::default(),
            tolerance: 100.0,
            max_waiting_teams: 6,
            queue_rating: QueueRating::TeamElo,
            team_elo_from_solo: true,
            start_timestamp: 1_600_000_000,
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

impl SyntheticConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{} at `{}`", e.inner(), e.path())))
    }

    pub fn max_team_size(&self) -> usize {
        self.mode_weights
            .pairs()
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(m, _)| m.team_size())
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("mechanical", self.mechanical),
            ("tactical", self.tactical),
            ("team_player", self.team_player),
            ("duration", self.duration),
        ] {
            check(d.sd >= 0.0 && d.sd.is_finite() && d.mean.is_finite(), &format!("`{name}` needs a finite mean and sd >= 0"))?;
        }
        check(self.duration.mean > 0.0, "`duration.mean` must be positive")?;
        check((0.0..=1.0).contains(&self.premade_prob), "`premade_prob` must lie in [0, 1]")?;
        check(self.noise_sd >= 0.0 && self.action_noise_sd >= 0.0 && self.activity_sd >= 0.0, "noise scales must be >= 0")?;
        let w = self.weights;
        check(
            [w.skill, w.theta, w.familiarity_theta, w.familiarity, self.mechanical_weight]
                .iter()
                .all(|v| v.is_finite()),
            "outcome weights must be finite",
        )?;
        check(self.elo.k_factor > 0.0 && self.elo.provisional_k > 0.0, "Elo K must be positive")?;
        check(self.elo.scale > 0.0, "Elo scale must be positive")?;
        check(self.tolerance >= 0.0, "`tolerance` must be >= 0")?;
        check(self.n_maps >= 1 && self.n_civs >= 1, "map and civilization pools must be nonempty")?;
        check(self.clique_size >= 1, "`clique_size` must be at least 1")?;
        check(self.max_waiting_teams >= 2, "`max_waiting_teams` must be at least 2")?;
        check(self.solo_matches_per_player >= 0.0 && self.team_matches_per_player >= 0.0, "match counts must be >= 0")?;
        let mw = self.mode_weights.pairs();
        check(mw.iter().all(|(_, v)| *v >= 0.0 && v.is_finite()), "mode weights must be >= 0")?;
        let max = self.max_team_size();
        check(max > 0 || self.team_matches_per_player == 0.0, "at least one team mode needs positive weight")?;
        if self.n_players < 2 * max.max(1) {
            return Err(Error::Config(format!(
                "{} players cannot fill two teams of {}",
                self.n_players,
                max.max(1)
            )));
        }
        Ok(())
    }
}

/// Latent traits and ladder state of one synthetic player.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPlayer {
    pub id: PlayerId,
    pub mu: f64,
    pub s: f64,
    pub theta: f64,
    pub activity: f64,
    pub clique: usize,
    pub solo_elo: f64,
    pub team_elo: f64,
    pub solo_games: u32,
    pub team_games: u32,
}

impl SimPlayer {
    pub fn skill_index(&self, mechanical_weight: f64) -> f64 {
        self.s + mechanical_weight * self.mu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub player_id: String,
    pub mu: f64,
    pub s: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchTruth {
    pub match_id: String,
    pub true_p: f64,
}

const STREAM_PLAYERS: u64 = u64::MAX;
const STREAM_QUEUE: u64 = u64::MAX - 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(d: TraitDist) -> Normal<f64> {
    Normal::new(d.mean, d.sd).expect("validated trait distribution")
}

/// Draws the population. Traits are i.i.d. normal, activity is log-normal,
/// cliques are consecutive blocks of a random permutation.
pub fn generate_players(cfg: &SyntheticConfig) -> Result<Vec<SimPlayer>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_PLAYERS);
    let (mu_d, s_d, th_d) = (normal(cfg.mechanical), normal(cfg.tactical), normal(cfg.team_player));
    let act = Normal::new(0.0, cfg.activity_sd).expect("validated activity spread");
    let mut players: Vec<SimPlayer> = (0..cfg.n_players)
        .map(|i| SimPlayer {
            id: PlayerId::new(format!("p{i:05}")),
            mu: mu_d.sample(&mut rng),
            s: s_d.sample(&mut rng),
            theta: th_d.sample(&mut rng),
            activity: act.sample(&mut rng).exp(),
            clique: 0,
            solo_elo: cfg.elo.base,
            team_elo: cfg.elo.base,
            solo_games: 0,
            team_games: 0,
        })
        .collect();
    let mut order: Vec<usize> = (0..cfg.n_players).collect();
    order.shuffle(&mut rng);
    for (pos, &i) in order.iter().enumerate() {
        players[i].clique = pos / cfg.clique_size;
    }
    Ok(players)
}

/// Expected score of a player rated `r` against `opp`.
pub fn elo_expected(r: f64, opp: f64, scale: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(-(r - opp) / scale))
}

/// Solo update: returns the new ratings of the two players.
pub fn update_ratings(a: f64, b: f64, a_won: bool, k: f64, scale: f64) -> (f64, f64) {
    let ea = elo_expected(a, b, scale);
    let sa = a_won as u8 as f64;
    (a + k * (sa - ea), b + k * ((1.0 - sa) - (1.0 - ea)))
}

/// Team update: each member moves against the opposing team's mean rating.
pub fn update_team_ratings(team_a: &[f64], team_b: &[f64], a_won: bool, k: &[f64], scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(team_a), mean(team_b));
    let sa = a_won as u8 as f64;
    let na = team_a
        .iter()
        .zip(k)
        .map(|(r, k)| r + k * (sa - elo_expected(*r, mb, scale)))
        .collect();
    let nb = team_b
        .iter()
        .zip(&k[team_a.len()..])
        .map(|(r, k)| r + k * ((1.0 - sa) - elo_expected(*r, ma, scale)))
        .collect();
    (na, nb)
}

/// A group that enters the queue together and must share a team.
#[derive(Debug, Clone, PartialEq)]
pub struct Party {
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchmakingQueue {
    pub parties: VecDeque<Party>,
}

impl MatchmakingQueue {
    pub fn len_players(&self) -> usize {
        self.parties.iter().map(|p| p.members.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub team_a: Vec<usize>,
    pub team_b: Vec<usize>,
    pub rating_gap: f64,
}

/// Assembles teams first-fit in arrival order (parties stay intact), then pairs
/// the two complete teams with the smallest rating gap if it is within
/// `tolerance`. On success the paired parties leave the queue; otherwise the
/// queue is unchanged and everyone waits.
pub fn matchmake(queue: &mut MatchmakingQueue, team_size: usize, ratings: &[f64], tolerance: f64) -> Option<Pairing> {
    // Teams as lists of party indices.
    let mut open: Vec<(Vec<usize>, usize)> = Vec::new();
    for (pi, party) in queue.parties.iter().enumerate() {
        let len = party.members.len();
        if len > team_size {
            continue;
        }
        match open.iter_mut().find(|(_, filled)| filled + len <= team_size) {
            Some(t) => {
                t.0.push(pi);
                t.1 += len;
            }
            None => open.push((vec![pi], len)),
        }
    }
    let complete: Vec<&Vec<usize>> = open.iter().filter(|t| t.1 == team_size).map(|t| &t.0).collect();
    if complete.len() < 2 {
        return None;
    }
    let rating = |t: &Vec<usize>| {
        let ms: Vec<usize> = t.iter().flat_map(|&pi| queue.parties[pi].members.iter().copied()).collect();
        ms.iter().map(|&m| ratings[m]).sum::<f64>() / ms.len() as f64
    };
    let r: Vec<f64> = complete.iter().map(|t| rating(t)).collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..complete.len() {
        for j in i + 1..complete.len() {
            let gap = (r[i] - r[j]).abs();
            if best.is_none_or(|b| gap < b.2) {
                best = Some((i, j, gap));
            }
        }
    }
    let (i, j, gap) = best?;
    if gap > tolerance {
        return None;
    }
    let members = |t: &Vec<usize>| -> Vec<usize> {
        t.iter().flat_map(|&pi| queue.parties[pi].members.iter().copied()).collect()
    };
    let (ta, tb) = (members(complete[i]), members(complete[j]));
    let mut used: Vec<usize> = complete[i].iter().chain(complete[j]).copied().collect();
    used.sort_unstable();
    for pi in used.into_iter().rev() {
        queue.parties.remove(pi);
    }
    Some(Pairing {
        team_a: ta,
        team_b: tb,
        rating_gap: gap,
    })
}

/// Traits of one team entering the outcome model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeamState {
    pub skill_index: f64,
    pub theta: f64,
    pub tfam: f64,
}

/// `P(A wins)` given the shock `eps`.
pub fn win_probability(a: TeamState, b: TeamState, w: &OutcomeWeights, eps: f64) -> f64 {
    let logit = w.skill * (a.skill_index - b.skill_index)
        + w.theta * (a.theta - b.theta)
        + w.familiarity_theta * (a.tfam * a.theta - b.tfam * b.theta)
        + w.familiarity * (a.tfam - b.tfam)
        + eps;
    sigmoid(logit)
}

/// A generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub records: Vec<MatchRecord>,
    pub players: Vec<PlayerTruth>,
    pub matches: Vec<MatchTruth>,
}

impl SyntheticWorld {
    /// Writes `players.csv` and `matches.csv` into `dir`.
    pub fn write_truth(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("players.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for p in &self.players {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("matches.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for m in &self.matches {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        match_data::write_jsonl(&self.records, out)
    }
}

pub fn read_player_truth(path: &Path) -> Result<Vec<PlayerTruth>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

struct Sim<'a> {
    cfg: &'a SyntheticConfig,
    players: Vec<SimPlayer>,
    pair_counts: HashMap<(usize, usize), u32>,
    records: Vec<MatchRecord>,
    truths: Vec<MatchTruth>,
    duration: Normal<f64>,
    shock: Normal<f64>,
    action_noise: Normal<f64>,
}

impl Sim<'_> {
    fn k(&self, games: u32) -> f64 {
        if games < self.cfg.elo.provisional_matches {
            self.cfg.elo.provisional_k
        } else {
            self.cfg.elo.k_factor
        }
    }

    fn observe(&self, rng: &mut ChaCha8Rng, i: usize, duration: f64, team_elo: Option<f64>, pos: Position) -> PlayerObservation {
        let p = &self.players[i];
        let apm = p.mu + self.action_noise.sample(rng);
        let actions = (apm * duration).round().max(0.0) as u64;
        PlayerObservation {
            player: p.id.clone(),
            solo_elo: p.solo_elo,
            team_elo,
            effective_actions: actions,
            position: pos,
            civilization: format!("civ{:02}", rng.random_range(0..self.cfg.n_civs)),
        }
    }

    fn header(&self, rng: &mut ChaCha8Rng) -> (String, i64, String, f64) {
        let ordinal = self.records.len();
        let duration = self.duration.sample(rng).max(1.0);
        let duration = (duration * 100.0).round() / 100.0;
        (
            format!("m{ordinal:08}"),
            self.cfg.start_timestamp + 60 * ordinal as i64,
            format!("map{:02}", rng.random_range(0..self.cfg.n_maps)),
            duration,
        )
    }

    fn solo_match(&mut self, a: usize, b: usize) {
        let mut rng = stream_rng(self.cfg.seed, self.records.len() as u64);
        let (id, ts, map, duration) = self.header(&mut rng);
        let w = self.cfg.mechanical_weight;
        let logit = self.cfg.weights.skill * (self.players[a].skill_index(w) - self.players[b].skill_index(w))
            + self.shock.sample(&mut rng);
        let p = sigmoid(logit);
        let a_won = rng.random::<f64>() < p;
        let oa = self.observe(&mut rng, a, duration, None, Position::None);
        let ob = self.observe(&mut rng, b, duration, None, Position::None);
        let (ka, kb) = (self.k(self.players[a].solo_games), self.k(self.players[b].solo_games));
        let (ra, rb) = (self.players[a].solo_elo, self.players[b].solo_elo);
        let ea = elo_expected(ra, rb, self.cfg.elo.scale);
        let sa = a_won as u8 as f64;
        self.players[a].solo_elo = ra + ka * (sa - ea);
        self.players[b].solo_elo = rb + kb * ((1.0 - sa) - (1.0 - ea));
        self.players[a].solo_games += 1;
        self.players[b].solo_games += 1;
        self.truths.push(MatchTruth { match_id: id.clone(), true_p: p });
        self.records.push(MatchRecord {
            match_id: id,
            timestamp: ts,
            mode: Mode::Solo,
            map,
            duration,
            winner: if a_won { Side::A } else { Side::B },
            team_a: vec![oa],
            team_b: vec![ob],
        });
    }

    fn team_state(&self, team: &[usize]) -> TeamState {
        let n = team.len() as f64;
        let w = self.cfg.mechanical_weight;
        let counts: Vec<Vec<u32>> = team
            .iter()
            .map(|&i| {
                team.iter()
                    .map(|&j| if i == j { 0 } else { *self.pair_counts.get(&(i.min(j), i.max(j))).unwrap_or(&0) })
                    .collect()
            })
            .collect();
        TeamState {
            skill_index: team.iter().map(|&i| self.players[i].skill_index(w)).sum::<f64>() / n,
            theta: team.iter().map(|&i| self.players[i].theta).sum::<f64>() / n,
            tfam: team_familiarity(&counts).expect("team of at least two"),
        }
    }

    fn positions(rng: &mut ChaCha8Rng, size: usize) -> Vec<Position> {
        let mut pos: Vec<Position> = (0..size)
            .map(|i| if i < size.div_ceil(2) { Position::Flank } else { Position::Pocket })
            .collect();
        pos.shuffle(rng);
        pos
    }

    fn team_match(&mut self, mode: Mode, pairing: &Pairing) {
        let mut rng = stream_rng(self.cfg.seed, self.records.len() as u64);
        let (id, ts, map, duration) = self.header(&mut rng);
        let (sa, sb) = (self.team_state(&pairing.team_a), self.team_state(&pairing.team_b));
        let p = win_probability(sa, sb, &self.cfg.weights, self.shock.sample(&mut rng));
        let a_won = rng.random::<f64>() < p;
        let size = mode.team_size();
        let side = |team: &[usize], rng: &mut ChaCha8Rng| -> Vec<PlayerObservation> {
            let pos = Self::positions(rng, size);
            team.iter()
                .zip(pos)
                .map(|(&i, ps)| self.observe(rng, i, duration, Some(self.players[i].team_elo), ps))
                .collect()
        };
        let team_a = side(&pairing.team_a, &mut rng);
        let team_b = side(&pairing.team_b, &mut rng);

        let ra: Vec<f64> = pairing.team_a.iter().map(|&i| self.players[i].team_elo).collect();
        let rb: Vec<f64> = pairing.team_b.iter().map(|&i| self.players[i].team_elo).collect();
        let ks: Vec<f64> = pairing
            .team_a
            .iter()
            .chain(&pairing.team_b)
            .map(|&i| self.k(self.players[i].team_games))
            .collect();
        let (na, nb) = update_team_ratings(&ra, &rb, a_won, &ks, self.cfg.elo.scale);
        for (&i, r) in pairing.team_a.iter().zip(na).chain(pairing.team_b.iter().zip(nb)) {
            self.players[i].team_elo = r;
            self.players[i].team_games += 1;
        }
        for team in [&pairing.team_a, &pairing.team_b] {
            for (x, &i) in team.iter().enumerate() {
                for &j in &team[x + 1..] {
                    *self.pair_counts.entry((i.min(j), i.max(j))).or_insert(0) += 1;
                }
            }
        }
        self.truths.push(MatchTruth { match_id: id.clone(), true_p: p });
        self.records.push(MatchRecord {
            match_id: id,
            timestamp: ts,
            mode,
            map,
            duration,
            winner: if a_won { Side::A } else { Side::B },
            team_a,
            team_b,
        });
    }
}

/// Runs the solo phase (uniform random pairings) and then the team phase
/// (activity-weighted arrivals into per-mode queues, Elo-balanced pairing).
pub fn run_world(cfg: &SyntheticConfig) -> Result<SyntheticWorld> {
    let players = generate_players(cfg)?;
    let n = cfg.n_players;
    let mut sim = Sim {
        cfg,
        players,
        pair_counts: HashMap::new(),
        records: Vec::new(),
        truths: Vec::new(),
        duration: normal(cfg.duration),
        shock: Normal::new(0.0, cfg.noise_sd).expect("validated noise"),
        action_noise: Normal::new(0.0, cfg.action_noise_sd).expect("validated noise"),
    };

    let solo_total = (cfg.solo_matches_per_player * n as f64 / 2.0).round() as usize;
    let mut qrng = stream_rng(cfg.seed, STREAM_QUEUE);
    for _ in 0..solo_total {
        let a = qrng.random_range(0..n);
        let mut b = qrng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        sim.solo_match(a, b);
    }

    if cfg.team_elo_from_solo {
        for p in sim.players.iter_mut() {
            p.team_elo = p.solo_elo;
        }
    }

    let modes = cfg.mode_weights.pairs();
    let weight_sum: f64 = modes.iter().map(|m| m.1).sum();
    if weight_sum > 0.0 && cfg.team_matches_per_player > 0.0 {
        let seats: f64 = modes.iter().map(|(m, w)| w * 2.0 * m.team_size() as f64).sum::<f64>() / weight_sum;
        let team_total = (cfg.team_matches_per_player * n as f64 / seats).round() as usize;
        let mode_pick = WeightedIndex::new(modes.iter().map(|m| m.1)).expect("validated mode weights");
        let arrival = WeightedIndex::new(sim.players.iter().map(|p| p.activity))
            .map_err(|e| Error::Config(format!("activity weights: {e}")))?;
        let mut cliques: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, p) in sim.players.iter().enumerate() {
            cliques.entry(p.clique).or_default().push(i);
        }
        let mut queues: [MatchmakingQueue; 3] = Default::default();
        let mut queued = vec![false; n];
        let mut played = 0;
        let mut attempts = 0;
        while played < team_total {
            let mi = mode_pick.sample(&mut qrng);
            let mode = modes[mi].0;
            let size = mode.team_size();
            loop {
                let ratings: Vec<f64> = sim
                    .players
                    .iter()
                    .map(|p| match cfg.queue_rating {
                        QueueRating::TeamElo => p.team_elo,
                        QueueRating::SoloElo => p.solo_elo,
                    })
                    .collect();
                let free = queued.iter().filter(|q| !**q).count();
                let q = &mut queues[mi];
                let waiting_teams = q.len_players() / size;
                // Relax once enough teams wait or nobody else could fill another team.
                let tol = if waiting_teams >= cfg.max_waiting_teams || free < size {
                    f64::INFINITY
                } else {
                    cfg.tolerance
                };
                if let Some(pairing) = matchmake(q, size, &ratings, tol) {
                    for &i in pairing.team_a.iter().chain(&pairing.team_b) {
                        queued[i] = false;
                    }
                    sim.team_match(mode, &pairing);
                    played += 1;
                    attempts = 0;
                    break;
                }
                attempts += 1;
                if attempts > 100 * n {
                    return Err(Error::Config("matchmaking stalled; too few players for the queues".into()));
                }
                if free + q.len_players() < 2 * size {
                    // This queue cannot complete with the players still free:
                    // the oldest party of the fullest other queue gives up.
                    let other = (0..queues.len())
                        .filter(|&k| k != mi)
                        .max_by_key(|&k| (queues[k].len_players(), std::cmp::Reverse(k)));
                    match other.and_then(|k| queues[k].parties.pop_front()) {
                        Some(p) => {
                            for m in p.members {
                                queued[m] = false;
                            }
                        }
                        None => {
                            return Err(Error::Config("matchmaking stalled; too few players for the queues".into()))
                        }
                    }
                    continue;
                }
                if free == 0 {
                    // Enough players wait but their parties do not fit together.
                    if let Some(p) = q.parties.pop_front() {
                        for m in p.members {
                            queued[m] = false;
                        }
                    }
                    continue;
                }
                let j = loop {
                    let j = arrival.sample(&mut qrng);
                    if !queued[j] {
                        break j;
                    }
                };
                let mut members = vec![j];
                if qrng.random::<f64>() < cfg.premade_prob {
                    let want = qrng.random_range(2..=size.max(2)).min(size);
                    let mut mates: Vec<usize> = cliques[&sim.players[j].clique]
                        .iter()
                        .copied()
                        .filter(|&m| m != j && !queued[m])
                        .collect();
                    mates.shuffle(&mut qrng);
                    members.extend(mates.into_iter().take(want - 1));
                }
                for &m in &members {
                    queued[m] = true;
                }
                q.parties.push_back(Party { members });
            }
        }
    }

    let players = sim
        .players
        .iter()
        .map(|p| PlayerTruth {
            player_id: p.id.0.clone(),
            mu: p.mu,
            s: p.s,
            theta: p.theta,
        })
        .collect();
    Ok(SyntheticWorld {
        records: sim.records,
        players,
        matches: sim.truths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_players: 60,
            solo_matches_per_player: 10.0,
            team_matches_per_player: 20.0,
            ..Default::default()
        }
    }

    #[test]
    fn equal_elo_win_moves_sixteen() {
        let (a, b) = update_ratings(1500.0, 1500.0, true, 32.0, 400.0);
        assert_eq!(a, 1516.0);
        assert_eq!(b, 1484.0);
    }

    #[test]
    fn solo_update_is_zero_sum() {
        let (a, b) = update_ratings(1620.0, 1388.0, false, 32.0, 400.0);
        assert!(((a - 1620.0) + (b - 1388.0)).abs() < 1e-12);
    }

    #[test]
    fn mirror_teams_are_even() {
        let t = TeamState { skill_index: 0.7, theta: -0.2, tfam: 1.1 };
        let w = OutcomeWeights { skill: 1.3, theta: 0.8, familiarity_theta: 0.5, familiarity: 0.2 };
        assert_eq!(win_probability(t, t, &w, 0.0), 0.5);
    }

    #[test]
    fn identical_rating_players_pair_without_gap() {
        let mut q = MatchmakingQueue::default();
        for i in 0..4 {
            q.parties.push_back(Party { members: vec![i] });
        }
        let p = matchmake(&mut q, 2, &[1200.0; 4], 0.0).unwrap();
        assert_eq!(p.rating_gap, 0.0);
        assert!(q.parties.is_empty());
    }

    #[test]
    fn premade_stays_together_and_gap_respects_tolerance() {
        let mut q = MatchmakingQueue::default();
        q.parties.push_back(Party { members: vec![0] });
        q.parties.push_back(Party { members: vec![1, 2] });
        q.parties.push_back(Party { members: vec![3] });
        let ratings = [1000.0, 1400.0, 1400.0, 1000.0];
        assert!(matchmake(&mut q, 2, &ratings, 100.0).is_none());
        assert_eq!(q.parties.len(), 3);
        let p = matchmake(&mut q, 2, &ratings, f64::INFINITY).unwrap();
        let together = |t: &[usize]| t.contains(&1) == t.contains(&2);
        assert!(together(&p.team_a) && together(&p.team_b));
    }

    #[test]
    fn zero_sd_gives_identical_players() {
        let cfg = SyntheticConfig {
            mechanical: TraitDist { mean: 30.0, sd: 0.0 },
            tactical: TraitDist { mean: 0.5, sd: 0.0 },
            team_player: TraitDist { mean: 0.0, sd: 0.0 },
            ..small()
        };
        let ps = generate_players(&cfg).unwrap();
        assert!(ps.iter().all(|p| p.mu == 30.0 && p.s == 0.5 && p.theta == 0.0));
    }

    #[test]
    fn too_few_players_rejected() {
        let cfg = SyntheticConfig { n_players: 7, ..small() };
        assert!(matches!(generate_players(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn world_is_deterministic_and_parses() {
        let a = run_world(&small()).unwrap();
        let b = run_world(&small()).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_log(&mut buf).unwrap();
        let back = match_data::parse_matches(&buf[..], match_data::Format::Jsonl).unwrap();
        assert_eq!(back, a.records);
        assert_eq!(a.matches.len(), a.records.len());
        assert!(a.records.iter().any(|r| r.mode.is_team()));
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        assert!(SyntheticConfig::from_json(r#"{"n_players": 100}"#).is_ok());
        let err = SyntheticConfig::from_json(r#"{"n_player": 100}"#).unwrap_err();
        assert!(err.to_string().contains("n_player"));
    }
}
