use crate::features::{FeatureRow, FEATURE_NAMES};
use crate::stats;
use serde::Serialize;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrCell {
    pub a: String,
    pub b: String,
    /// `None` when either column is constant.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EloBinRow {
    pub bin: &'static str,
    pub matches: usize,
    pub mean_team_eapm: Option<f64>,
    /// Correlation of the raw eAPM delta with the focal win indicator.
    pub corr_delta_eapm_win: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifRow {
    pub feature: String,
    pub vif: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppearanceRow {
    /// `team` or `player`.
    pub entity: &'static str,
    pub quantile: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptives {
    pub correlations: Vec<CorrCell>,
    pub elo_bins: Vec<EloBinRow>,
    pub vif: Vec<VifRow>,
    pub appearances: Vec<AppearanceRow>,
}

pub const ELO_BINS: [&str; 4] = ["<1000", "1000-1500", "1501-2000", ">2000"];

fn elo_bin(elo: f64) -> usize {
    if elo < 1000.0 {
        0
    } else if elo <= 1500.0 {
        1
    } else if elo <= 2000.0 {
        2
    } else {
        3
    }
}

/// Correlations of the raw deltas and the win indicator, eAPM by Elo bin
/// (match Elo = mean of the two teams' Solo Elo), variance inflation of the raw
/// deltas, and appearance-count quantiles of teams and players.
pub fn descriptive_stats(rows: &[FeatureRow]) -> Descriptives {
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut cols: Vec<Vec<f64>> = (0..FEATURE_NAMES.len())
        .map(|j| rows.iter().map(|r| r.raw_delta()[j]).collect())
        .collect();
    names.push("win".into());
    cols.push(rows.iter().map(|r| r.y as f64).collect());

    let mut correlations = Vec::new();
    for a in 0..names.len() {
        for b in 0..names.len() {
            let r = stats::pearson(&cols[a], &cols[b]);
            correlations.push(CorrCell {
                a: names[a].clone(),
                b: names[b].clone(),
                r,
                p_value: r.map(|r| stats::pearson_p_value(r, rows.len())),
            });
        }
    }

    let mut by_bin: [Vec<&FeatureRow>; 4] = Default::default();
    for r in rows {
        by_bin[elo_bin(0.5 * (r.focal.selo_mean + r.opponent.selo_mean))].push(r);
    }
    let elo_bins = by_bin
        .iter()
        .zip(ELO_BINS)
        .map(|(rs, bin)| {
            let eapm: Vec<f64> = rs.iter().flat_map(|r| [r.focal.eapm_mean, r.opponent.eapm_mean]).collect();
            let d: Vec<f64> = rs.iter().map(|r| r.focal.eapm_mean - r.opponent.eapm_mean).collect();
            let y: Vec<f64> = rs.iter().map(|r| r.y as f64).collect();
            let corr = stats::pearson(&d, &y);
            EloBinRow {
                bin,
                matches: rs.len(),
                mean_team_eapm: (!eapm.is_empty()).then(|| stats::mean(&eapm)),
                corr_delta_eapm_win: corr,
                p_value: corr.map(|r| stats::pearson_p_value(r, rs.len())),
            }
        })
        .collect();

    let feats = &cols[..FEATURE_NAMES.len()];
    let vif = (0..feats.len())
        .map(|j| {
            let others: Vec<&[f64]> = (0..feats.len()).filter(|&k| k != j).map(|k| feats[k].as_slice()).collect();
            let vif = stats::ols_r_squared(&feats[j], &others).map(|r2| 1.0 / (1.0 - r2));
            VifRow {
                feature: FEATURE_NAMES[j].to_string(),
                vif,
            }
        })
        .collect();

    let mut teams: HashMap<String, usize> = HashMap::new();
    let mut players: HashMap<&str, usize> = HashMap::new();
    for r in rows {
        *teams.entry(r.focal_key()).or_default() += 1;
        *teams.entry(r.opponent_key()).or_default() += 1;
        for s in r.focal_roster.iter().chain(&r.opponent_roster) {
            *players.entry(s.player.as_str()).or_default() += 1;
        }
    }
    let mut appearances = Vec::new();
    for (entity, counts) in [("team", teams.values().copied().collect::<Vec<_>>()), ("player", players.values().copied().collect())] {
        if counts.is_empty() {
            continue;
        }
        let mut v: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        v.sort_by(f64::total_cmp);
        for q in [0.5, 0.75, 0.95, 0.99] {
            appearances.push(AppearanceRow {
                entity,
                quantile: q,
                value: stats::quantile_sorted(&v, q),
            });
        }
    }

    Descriptives {
        correlations,
        elo_bins,
        vif,
        appearances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elo_bin_edges() {
        assert_eq!(elo_bin(999.9), 0);
        assert_eq!(elo_bin(1000.0), 1);
        assert_eq!(elo_bin(1500.0), 1);
        assert_eq!(elo_bin(1500.5), 2);
        assert_eq!(elo_bin(2000.0), 2);
        assert_eq!(elo_bin(2000.1), 3);
    }
}
