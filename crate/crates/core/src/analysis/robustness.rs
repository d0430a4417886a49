use crate::match_data::Position;
use crate::stats::{self, KsResult};
use crate::tp_effect::ResidualLedger;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsBin {
    pub lower: usize,
    pub upper: usize,
    pub n_zero: usize,
    pub n_all: usize,
    pub statistic: f64,
    pub p_value: f64,
}

fn bin_of(n: usize, size: usize) -> (usize, usize) {
    let lower = n / size * size;
    (lower, lower + size - 1)
}

/// Per match-count bin (players binned by their residual count): residuals of
/// matches where both teams had zero familiarity against all residuals.
/// Bins with an empty sample are skipped.
pub fn ks_zero_familiarity(ledger: &ResidualLedger, bin_size: usize) -> Vec<KsBin> {
    let mut bins: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for entries in ledger.entries.values() {
        let (zero, all) = bins.entry(bin_of(entries.len(), bin_size)).or_default();
        for e in entries {
            all.push(e.residual);
            if e.zero_familiarity {
                zero.push(e.residual);
            }
        }
    }
    bins.into_iter()
        .filter_map(|((lower, upper), (zero, all))| {
            let KsResult { statistic, p_value, .. } = stats::ks_two_sample(&zero, &all)?;
            Some(KsBin {
                lower,
                upper,
                n_zero: zero.len(),
                n_all: all.len(),
                statistic,
                p_value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionBin {
    pub lower: usize,
    pub upper: usize,
    pub players: usize,
    pub correlation: f64,
    pub p_value: f64,
}

/// Pearson correlation between players' mean pocket and mean flank residuals,
/// per match-count bin. Bins with fewer than 3 eligible players, or a constant
/// side, are skipped.
pub fn position_residual_correlation(ledger: &ResidualLedger, bin_size: usize) -> Vec<PositionBin> {
    let mut bins: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for entries in ledger.entries.values() {
        let side = |pos: Position| {
            let v: Vec<f64> = entries.iter().filter(|e| e.position == pos).map(|e| e.residual).collect();
            (!v.is_empty()).then(|| stats::mean(&v))
        };
        if let (Some(p), Some(f)) = (side(Position::Pocket), side(Position::Flank)) {
            let b = bins.entry(bin_of(entries.len(), bin_size)).or_default();
            b.0.push(p);
            b.1.push(f);
        }
    }
    bins.into_iter()
        .filter(|(_, (p, _))| p.len() >= 3)
        .filter_map(|((lower, upper), (p, f))| {
            let r = stats::pearson(&p, &f)?;
            Some(PositionBin {
                lower,
                upper,
                players: p.len(),
                correlation: r,
                p_value: stats::pearson_p_value(r, p.len()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandPoint {
    pub model: String,
    /// Mean residual count of the players in the window.
    pub n_center: f64,
    pub p95_abs: f64,
    pub band_width: f64,
}

/// Rolling window over players sorted by residual count: 95th percentile of
/// the absolute per-player mean residual and the width of its central 95%
/// band. Windows advance by a tenth of their length. With fewer players than
/// the window, one whole-sample window is emitted.
pub fn residual_bandwidth(model: &str, ledger: &ResidualLedger, window: usize) -> Vec<BandPoint> {
    let mut effects: Vec<(usize, f64)> = ledger.effects().into_iter().map(|(_, n, tp)| (n, tp)).collect();
    effects.sort_by_key(|e| e.0);
    if effects.is_empty() {
        return Vec::new();
    }
    let w = if effects.len() < window {
        log::warn!("{model}: {} players is below the window of {window}", effects.len());
        effects.len()
    } else {
        window
    };
    let step = (w / 10).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let win = &effects[start..start + w];
        let mut tp: Vec<f64> = win.iter().map(|e| e.1).collect();
        let mut abs: Vec<f64> = tp.iter().map(|v| v.abs()).collect();
        tp.sort_by(f64::total_cmp);
        abs.sort_by(f64::total_cmp);
        out.push(BandPoint {
            model: model.to_string(),
            n_center: win.iter().map(|e| e.0 as f64).sum::<f64>() / w as f64,
            p95_abs: stats::quantile_sorted(&abs, 0.95),
            band_width: stats::quantile_sorted(&tp, 0.975) - stats::quantile_sorted(&tp, 0.025),
        });
        if start + w >= effects.len() {
            break;
        }
        start = (start + step).min(effects.len() - w);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::match_data::PlayerId;
    use crate::tp_effect::ResidualEntry;

    fn entry(r: f64, pos: Position, zero: bool) -> ResidualEntry {
        ResidualEntry {
            match_id: "m".into(),
            residual: r,
            predicted: 0.5,
            position: pos,
            team_size: 2,
            zero_familiarity: zero,
        }
    }

    #[test]
    fn identical_position_means_correlate_perfectly() {
        let mut l = ResidualLedger::default();
        for p in 0..6 {
            let v = p as f64 * 0.1 - 0.2;
            l.entries.insert(
                PlayerId::new(format!("p{p}")),
                vec![entry(v, Position::Pocket, false), entry(v, Position::Flank, false)],
            );
        }
        let bins = position_residual_correlation(&l, 10);
        assert_eq!(bins.len(), 1);
        assert!((bins[0].correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_residuals_have_zero_band() {
        let mut l = ResidualLedger::default();
        for p in 0..40 {
            l.entries
                .insert(PlayerId::new(format!("p{p}")), vec![entry(0.25, Position::Flank, false); 1 + p % 7]);
        }
        let pts = residual_bandwidth("m", &l, 10);
        assert!(pts.len() > 1);
        assert!(pts.iter().all(|p| p.band_width == 0.0 && p.p95_abs == 0.25));
        let whole = residual_bandwidth("m", &l, 500);
        assert_eq!(whole.len(), 1);
    }

    #[test]
    fn ks_bins_skip_empty_zero_samples() {
        let mut l = ResidualLedger::default();
        l.entries.insert(PlayerId::new("a"), vec![entry(0.1, Position::Flank, false); 3]);
        l.entries.insert(
            PlayerId::new("b"),
            (0..12).map(|i| entry(i as f64 / 12.0 - 0.5, Position::Flank, i % 2 == 0)).collect(),
        );
        let bins = ks_zero_familiarity(&l, 10);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].lower, 10);
        assert_eq!(bins[0].n_zero, 6);
    }
}
