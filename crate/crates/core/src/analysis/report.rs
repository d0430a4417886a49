use super::{BandPoint, Descriptives, FacetReport, InteractionResult, KsBin, PositionBin, SuiteResult};
use crate::error::{Error, Result};
use crate::stats;
use crate::tp_effect::{ThresholdSelection, ThresholdSweepResult};
use std::io::Write;

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<report>", e))
}

/// One row per coefficient; model-level statistics repeat on every row.
pub fn write_suite_csv<W: Write>(suite: &SuiteResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "term",
        "estimate",
        "se",
        "z",
        "p_value",
        "stars",
        "pseudo_r2",
        "n_obs",
        "clusters",
        "accuracy",
        "delta_accuracy",
        "sample_hash",
    ])?;
    for m in &suite.models {
        for c in m.model.coef_table() {
            w.write_record([
                m.name.clone(),
                c.name,
                num(c.estimate),
                num(c.se),
                num(c.z),
                num(c.p_value),
                stats::stars(c.p_value).to_string(),
                num(m.model.pseudo_r2),
                m.model.n_obs.to_string(),
                m.model.cluster_count.to_string(),
                opt(m.accuracy),
                opt(m.delta_accuracy),
                suite.sample_hash.clone(),
            ])?;
        }
    }
    finish(w)
}

pub fn write_mem_csv<W: Write>(res: &InteractionResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "coefficient", "mem", "se", "z", "p_value", "stars"])?;
    for r in &res.mem.rows {
        w.write_record([
            r.term.clone(),
            opt(res.model.coef(&r.term)),
            num(r.effect),
            num(r.se),
            num(r.z),
            num(r.p_value),
            r.stars.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_facets_csv<W: Write>(reports: &[FacetReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "facet", "level", "n", "sparse", "term", "estimate", "se", "p_value", "stars", "pseudo_r2", "dropped", "skipped",
    ])?;
    for rep in reports {
        for lv in &rep.levels {
            let base = |term: String, est: String, se: String, p: String, st: String, r2: String| {
                vec![
                    rep.kind.as_str().to_string(),
                    lv.level.clone(),
                    lv.n.to_string(),
                    (lv.sparse as u8).to_string(),
                    term,
                    est,
                    se,
                    p,
                    st,
                    r2,
                    lv.dropped.join(";"),
                    lv.skipped.clone().unwrap_or_default(),
                ]
            };
            match &lv.model {
                Some(m) => {
                    for c in m.coef_table() {
                        w.write_record(base(
                            c.name,
                            num(c.estimate),
                            num(c.se),
                            num(c.p_value),
                            stats::stars(c.p_value).into(),
                            num(m.pseudo_r2),
                        ))?;
                    }
                }
                None => w.write_record(base(String::new(), String::new(), String::new(), String::new(), String::new(), String::new()))?,
            }
        }
    }
    finish(w)
}

pub fn write_ks_csv<W: Write>(bins: &[KsBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_lower", "n_upper", "n_zero_familiarity", "n_all", "statistic", "p_value"])?;
    for b in bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.n_zero.to_string(),
            b.n_all.to_string(),
            num(b.statistic),
            num(b.p_value),
        ])?;
    }
    finish(w)
}

pub fn write_position_csv<W: Write>(bins: &[PositionBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_lower", "n_upper", "players", "correlation", "p_value"])?;
    for b in bins {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            b.players.to_string(),
            num(b.correlation),
            num(b.p_value),
        ])?;
    }
    finish(w)
}

pub fn write_bandwidth_csv<W: Write>(points: &[BandPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "n_center", "p95_abs", "band_width"])?;
    for p in points {
        w.write_record([p.model.clone(), num(p.n_center), num(p.p95_abs), num(p.band_width)])?;
    }
    finish(w)
}

/// Long format: `table,row,column,value,p_value`.
pub fn write_descriptives_csv<W: Write>(d: &Descriptives, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["table", "row", "column", "value", "p_value"])?;
    for c in &d.correlations {
        w.write_record(["correlation".into(), c.a.clone(), c.b.clone(), opt(c.r), opt(c.p_value)])?;
    }
    for b in &d.elo_bins {
        w.write_record(["elo_bin".into(), b.bin.to_string(), "matches".into(), b.matches.to_string(), String::new()])?;
        w.write_record(["elo_bin".into(), b.bin.to_string(), "mean_team_eapm".into(), opt(b.mean_team_eapm), String::new()])?;
        w.write_record([
            "elo_bin".into(),
            b.bin.to_string(),
            "corr_delta_eapm_win".into(),
            opt(b.corr_delta_eapm_win),
            opt(b.p_value),
        ])?;
    }
    for v in &d.vif {
        w.write_record(["vif".into(), v.feature.clone(), "vif".into(), opt(v.vif), String::new()])?;
    }
    for a in &d.appearances {
        w.write_record(["appearances".into(), a.entity.to_string(), num(a.quantile), num(a.value), String::new()])?;
    }
    finish(w)
}

pub fn write_threshold_csv<W: Write>(sel: &ThresholdSelection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_lower", "n_upper", "center", "players", "q_low", "q_high", "width", "knee"])?;
    for (i, b) in sel.bins.iter().enumerate() {
        w.write_record([
            b.lower.to_string(),
            b.upper.to_string(),
            num(b.center),
            b.players.to_string(),
            num(b.q_low),
            num(b.q_high),
            num(b.width),
            ((sel.knee == Some(i)) as u8).to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_sweep_csv<W: Write>(sweep: &ThresholdSweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "pseudo_r2", "accuracy", "coverage", "qualified_players", "selected"])?;
    for p in &sweep.points {
        w.write_record([
            p.tau.to_string(),
            num(p.pseudo_r2),
            opt(p.accuracy),
            num(p.coverage),
            p.qualified_players.to_string(),
            ((p.tau == sweep.selected_tau) as u8).to_string(),
        ])?;
    }
    finish(w)
}
