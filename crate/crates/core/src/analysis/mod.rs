//! Model suites on the two team-match halves, task proficiency, the
//! interaction model with marginal effects, faceted refits, robustness checks
//! and descriptive tables.

mod descriptives;
mod report;
mod robustness;

pub use descriptives::{descriptive_stats, AppearanceRow, CorrCell, Descriptives, EloBinRow, VifRow};
pub use report::{
    write_bandwidth_csv, write_descriptives_csv, write_facets_csv, write_ks_csv, write_mem_csv, write_position_csv,
    write_suite_csv, write_sweep_csv, write_threshold_csv,
};
pub use robustness::{
    ks_zero_familiarity, position_residual_correlation, residual_bandwidth, BandPoint, KsBin, PositionBin,
};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, ScaleParams, Scaler, TeamFeatureVector};
use crate::glm::{self, DesignMatrix, FitConfig, FittedModel, MemResult};
use crate::stats;
use crate::tp_effect::{team_effect_delta, TeamPlayerIndex};
use crate::util;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSpec {
    pub name: &'static str,
    pub features: &'static [&'static str],
}

pub const S1_SUITE: [SuiteSpec; 3] = [
    SuiteSpec { name: "S1.1", features: &["eapm"] },
    SuiteSpec { name: "S1.2", features: &["eapm", "selo"] },
    SuiteSpec {
        name: "S1.3",
        features: &["eapm", "selo", "ffam_match", "ffam_map", "ffam_civ"],
    },
];

pub const S2_SUITE: [SuiteSpec; 4] = [
    SuiteSpec { name: "S2.1", features: &["tp"] },
    SuiteSpec { name: "S2.2", features: &["taskprof"] },
    SuiteSpec { name: "S2.3", features: &["tp", "taskprof"] },
    SuiteSpec { name: "S2.4", features: &["tp", "taskprof", "tfam"] },
];

/// Columns of the interaction model; `a*b` is the product of `a` and `b`.
pub const INTERACTION_TERMS: [&str; 7] = [
    "tp",
    "taskprof",
    "tfam",
    "abs_tfam*tp",
    "abs_tfam*taskprof",
    "team_size*tp",
    "team_size*taskprof",
];

/// Named numeric columns with labels, cluster keys and row ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub ids: Vec<String>,
    pub y: Vec<u8>,
    pub clusters: Vec<String>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl Frame {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Values of a column or of a product of columns (`a*b`).
    pub fn values(&self, term: &str) -> Result<Vec<f64>> {
        let mut out = vec![1.0; self.len()];
        for f in term.split('*') {
            let col = self.columns.get(f).ok_or_else(|| Error::MissingFeature(f.to_string()))?;
            for (o, v) in out.iter_mut().zip(col) {
                *o *= v;
            }
        }
        Ok(out)
    }

    /// Design over the rows where `mask` is `want` (all rows without a mask).
    pub fn design(&self, terms: &[&str], mask: Option<(&[bool], bool)>) -> Result<DesignMatrix> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| mask.is_none_or(|(m, want)| m[i] == want))
            .collect();
        self.design_rows(terms, &keep)
    }

    pub fn design_rows(&self, terms: &[&str], keep: &[usize]) -> Result<DesignMatrix> {
        let cols: Vec<Vec<f64>> = terms.iter().map(|t| self.values(t)).collect::<Result<_>>()?;
        let picked: Vec<Vec<f64>> = cols.iter().map(|c| keep.iter().map(|&i| c[i]).collect()).collect();
        let y: Vec<u8> = keep.iter().map(|&i| self.y[i]).collect();
        let cl: Vec<&str> = keep.iter().map(|&i| self.clusters[i].as_str()).collect();
        DesignMatrix::from_columns(terms.iter().map(|s| s.to_string()).collect(), &picked, &y, &cl)
    }

    fn sample_hash(&self, mask: Option<(&[bool], bool)>) -> String {
        util::sample_hash(
            (0..self.len())
                .filter(|&i| mask.is_none_or(|(m, want)| m[i] == want))
                .map(|i| self.ids[i].as_str()),
        )
    }

    /// Frame of the standardized delta columns of a feature table.
    pub fn from_table(table: &FeatureTable) -> Frame {
        let mut columns = BTreeMap::new();
        for (j, c) in table.columns.iter().enumerate() {
            columns.insert(c.clone(), table.rows.iter().map(|r| r.delta[j]).collect());
        }
        Frame {
            ids: table.rows.iter().map(|r| r.match_id.clone()).collect(),
            y: table.rows.iter().map(|r| r.y).collect(),
            clusters: table.rows.iter().map(|r| r.focal_key()).collect(),
            columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteModel {
    pub name: String,
    pub model: FittedModel,
    /// Holdout accuracy, when the suite has a test split.
    pub accuracy: Option<f64>,
    /// Accuracy gain over the previous model in the suite.
    pub delta_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub models: Vec<SuiteModel>,
    /// Hash of the estimation rows, shared by every model in the suite.
    pub sample_hash: String,
    pub n_train: usize,
    pub n_test: usize,
}

impl SuiteResult {
    pub fn get(&self, name: &str) -> Option<&SuiteModel> {
        self.models.iter().find(|m| m.name == name)
    }
}

fn run_suite(frame: &Frame, specs: &[SuiteSpec], is_test: Option<&[bool]>) -> Result<SuiteResult> {
    let train_mask = is_test.map(|m| (m, false));
    let fitted: Vec<Result<SuiteModel>> = specs
        .par_iter()
        .map(|spec| {
            let train = frame.design(spec.features, train_mask)?;
            let model = glm::fit_logistic(&train, &FitConfig::default())?;
            let accuracy = match is_test {
                Some(m) if m.iter().any(|t| *t) => Some(glm::accuracy(&model, &frame.design(spec.features, Some((m, true)))?)?),
                _ => None,
            };
            Ok(SuiteModel {
                name: spec.name.to_string(),
                model,
                accuracy,
                delta_accuracy: None,
            })
        })
        .collect();
    let mut models: Vec<SuiteModel> = fitted.into_iter().collect::<Result<_>>()?;
    for i in 1..models.len() {
        if let (Some(a), Some(b)) = (models[i].accuracy, models[i - 1].accuracy) {
            models[i].delta_accuracy = Some(a - b);
        }
    }
    let n_test = is_test.map_or(0, |m| m.iter().filter(|t| **t).count());
    Ok(SuiteResult {
        models,
        sample_hash: frame.sample_hash(train_mask),
        n_train: frame.len() - n_test,
        n_test,
    })
}

/// S1.1 to S1.3 on the standardized first-half deltas, all rows.
pub fn run_s1_suite(t1: &FeatureTable) -> Result<SuiteResult> {
    run_suite(&Frame::from_table(t1), &S1_SUITE, None)
}

/// `sum_f beta_f * x_f / sd_f` over the model's features, with the first-half
/// scaler. The difference of two teams' indices equals the model's linear
/// predictor on their standardized delta up to the centering constant.
pub fn task_proficiency(s1: &FittedModel, scaler: &Scaler, team: &TeamFeatureVector) -> Result<f64> {
    let mut acc = 0.0;
    for (j, f) in s1.features.iter().enumerate() {
        let p = scaler
            .features
            .get(f)
            .ok_or_else(|| Error::MissingFeature(f.clone()))?;
        let x = team.get(f).ok_or_else(|| Error::MissingFeature(f.clone()))?;
        acc += s1.beta[j + 1] * x / p.sd;
    }
    Ok(acc)
}

/// How the match-level absolute familiarity is formed from the two teams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsFamiliarity {
    #[default]
    MeanOfTeams,
    FocalTeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2Config {
    pub holdout_seed: u64,
    pub test_fraction: f64,
    pub abs_familiarity: AbsFamiliarity,
}

impl Default for S2Config {
    fn default() -> Self {
        S2Config {
            holdout_seed: 0,
            test_fraction: 0.2,
            abs_familiarity: AbsFamiliarity::MeanOfTeams,
        }
    }
}

/// Second-half evaluation frame: standardized `tp`, `taskprof` and `tfam`
/// deltas plus raw `abs_tfam` and `team_size`, with the holdout assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct S2Frame {
    pub frame: Frame,
    pub is_test: Vec<bool>,
    /// Training-row standardization of the three deltas.
    pub scale: BTreeMap<String, ScaleParams>,
}

pub fn build_s2_frame(
    t2: &FeatureTable,
    index: &TeamPlayerIndex,
    s1: &FittedModel,
    scaler: &Scaler,
    cfg: &S2Config,
) -> Result<S2Frame> {
    let n = t2.rows.len();
    let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut tp = Vec::with_capacity(n);
    let mut taskprof = Vec::with_capacity(n);
    let mut tfam = Vec::with_capacity(n);
    let mut abs = Vec::with_capacity(n);
    let mut size = Vec::with_capacity(n);
    for r in &t2.rows {
        tp.push(team_effect_delta(index, r)?);
        taskprof.push(task_proficiency(s1, scaler, &r.focal)? - task_proficiency(s1, scaler, &r.opponent)?);
        tfam.push(r.focal.tfam - r.opponent.tfam);
        abs.push(match cfg.abs_familiarity {
            AbsFamiliarity::MeanOfTeams => 0.5 * (r.focal.tfam + r.opponent.tfam),
            AbsFamiliarity::FocalTeam => r.focal.tfam,
        });
        size.push(r.team_size as f64);
    }
    let ids: Vec<&str> = t2.rows.iter().map(|r| r.match_id.as_str()).collect();
    let is_test = util::holdout_mask(&ids, cfg.holdout_seed, cfg.test_fraction);
    let mut scale = BTreeMap::new();
    for (name, col) in [("tp", tp), ("taskprof", taskprof), ("tfam", tfam)] {
        let train: Vec<f64> = col.iter().zip(&is_test).filter(|(_, t)| !**t).map(|(v, _)| *v).collect();
        let mean = stats::mean(&train);
        let mut sd = stats::std_dev(&train);
        if !(sd > 1e-12) {
            log::warn!("`{name}` delta has no variance on the training rows");
            sd = 1.0;
        }
        raw.insert(name.to_string(), col.iter().map(|v| (v - mean) / sd).collect());
        scale.insert(name.to_string(), ScaleParams { mean, sd });
    }
    raw.insert("abs_tfam".into(), abs);
    raw.insert("team_size".into(), size);
    Ok(S2Frame {
        frame: Frame {
            ids: ids.iter().map(|s| s.to_string()).collect(),
            y: t2.rows.iter().map(|r| r.y).collect(),
            clusters: t2.rows.iter().map(|r| r.focal_key()).collect(),
            columns: raw,
        },
        is_test,
        scale,
    })
}

/// S2.1 to S2.4 fitted on the training rows, accuracy on the test rows.
pub fn run_s2_suite(s2: &S2Frame) -> Result<SuiteResult> {
    run_suite(&s2.frame, &S2_SUITE, Some(&s2.is_test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionResult {
    pub model: FittedModel,
    pub mem: MemResult,
    /// Evaluation point of the base variables.
    pub means: BTreeMap<String, f64>,
    /// Product terms left out because their moderator is constant.
    pub dropped: Vec<String>,
}

/// Interaction model on the training rows and marginal effects at the mean of
/// every term. Products with a constant moderator (a single team size, say)
/// are dropped.
pub fn interaction_mem(s2: &S2Frame) -> Result<InteractionResult> {
    let mut means = BTreeMap::new();
    let mut constant = Vec::new();
    for base in ["tp", "taskprof", "tfam", "abs_tfam", "team_size"] {
        let col = s2.frame.values(base)?;
        let train: Vec<f64> = col.iter().zip(&s2.is_test).filter(|(_, t)| !**t).map(|(v, _)| *v).collect();
        if stats::variance(&train) <= 1e-24 {
            constant.push(base);
        }
        means.insert(base.to_string(), stats::mean(&train));
    }
    let (terms, dropped): (Vec<&str>, Vec<&str>) = INTERACTION_TERMS
        .iter()
        .partition(|t| !t.contains('*') || !t.split('*').any(|f| constant.contains(&f)));
    for d in &dropped {
        log::warn!("interaction term `{d}` dropped: constant moderator");
    }
    let train = s2.frame.design(&terms, Some((&s2.is_test, false)))?;
    let model = glm::fit_logistic(&train, &FitConfig::default())?;
    let mem = glm::marginal_effects_at_mean(&model, &means, &terms)?;
    Ok(InteractionResult {
        model,
        mem,
        means,
        dropped: dropped.iter().map(|s| s.to_string()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKind {
    FamiliarityQuantile,
    TeamSize,
}

impl FacetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FacetKind::FamiliarityQuantile => "familiarity_quantile",
            FacetKind::TeamSize => "team_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetLevel {
    pub level: String,
    pub n: usize,
    /// Fewer rows than the facet minimum.
    pub sparse: bool,
    pub model: Option<FittedModel>,
    /// Why no model was fitted.
    pub skipped: Option<String>,
    /// Regressors left out because they are constant within the level.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FacetReport {
    pub kind: FacetKind,
    pub levels: Vec<FacetLevel>,
    /// Quantile edges (familiarity facet only).
    pub edges: Vec<f64>,
}

/// 1-based quantile membership; values equal to an edge fall in the lower group.
pub fn quantile_groups(values: &[f64], groups: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateQuantiles("every value is identical".into()));
    }
    let edges: Vec<f64> = (1..groups)
        .map(|g| stats::quantile_sorted(&sorted, g as f64 / groups as f64))
        .collect();
    let member = values
        .iter()
        .map(|v| 1 + edges.iter().filter(|e| v > *e).count())
        .collect();
    Ok((member, edges))
}

pub const FACET_MIN_ROWS: usize = 500;

/// Independent S2.4 refits per facet level over all second-half rows.
pub fn facet_regressions(s2: &S2Frame, kind: FacetKind) -> Result<FacetReport> {
    let f = &s2.frame;
    let (groups, labels, edges): (Vec<usize>, Vec<String>, Vec<f64>) = match kind {
        FacetKind::FamiliarityQuantile => {
            let (g, e) = quantile_groups(&f.values("abs_tfam")?, 5)?;
            (g, (1..=5).map(|q| format!("Q{q}")).collect(), e)
        }
        FacetKind::TeamSize => {
            let g = f.values("team_size")?.iter().map(|v| *v as usize).collect();
            (g, vec!["2".into(), "3".into(), "4".into()], Vec::new())
        }
    };
    let keys: Vec<usize> = match kind {
        FacetKind::FamiliarityQuantile => (1..=5).collect(),
        FacetKind::TeamSize => vec![2, 3, 4],
    };
    let spec = S2_SUITE[3];
    let levels: Vec<FacetLevel> = keys
        .par_iter()
        .zip(labels)
        .map(|(&key, level)| {
            let rows: Vec<usize> = (0..f.len()).filter(|&i| groups[i] == key).collect();
            let n = rows.len();
            let sparse = n < FACET_MIN_ROWS;
            let mut out = FacetLevel {
                level,
                n,
                sparse,
                model: None,
                skipped: None,
                dropped: Vec::new(),
            };
            if n == 0 {
                out.skipped = Some("no rows".into());
                return out;
            }
            let mut terms = Vec::new();
            for t in spec.features {
                let v: Vec<f64> = match f.values(t) {
                    Ok(col) => rows.iter().map(|&i| col[i]).collect(),
                    Err(e) => {
                        out.skipped = Some(e.to_string());
                        return out;
                    }
                };
                if stats::variance(&v) <= 1e-24 {
                    out.dropped.push(t.to_string());
                } else {
                    terms.push(*t);
                }
            }
            if !out.dropped.is_empty() {
                log::warn!("facet {} {}: constant {:?} dropped", kind.as_str(), out.level, out.dropped);
            }
            let fit = f
                .design_rows(&terms, &rows)
                .and_then(|d| glm::fit_logistic(&d, &FitConfig::default()));
            match fit {
                Ok(m) => out.model = Some(m),
                Err(e) => {
                    log::warn!("facet {} {}: {e}", kind.as_str(), out.level);
                    out.skipped = Some(e.to_string());
                }
            }
            out
        })
        .collect();
    Ok(FacetReport { kind, levels, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TeamFeatureVector;

    fn team(eapm: f64) -> TeamFeatureVector {
        TeamFeatureVector::from_values([eapm, 1200.0, 2.0, 1.0, 0.5, 0.0], 2)
    }

    fn s1_model() -> FittedModel {
        FittedModel {
            features: vec!["eapm".into(), "selo".into()],
            beta: vec![0.1, 0.5, 0.8],
            cov_cluster: None,
            cov_classical: vec![vec![0.0; 3]; 3],
            loglik: 0.0,
            loglik_null: 0.0,
            pseudo_r2: 0.0,
            n_obs: 0,
            cluster_count: 0,
            converged: true,
            iterations: 0,
        }
    }

    fn scaler() -> Scaler {
        let mut s = Scaler::default();
        s.features.insert("eapm".into(), ScaleParams { mean: 0.3, sd: 4.0 });
        s.features.insert("selo".into(), ScaleParams { mean: 0.0, sd: 100.0 });
        s
    }

    #[test]
    fn identical_teams_have_zero_task_proficiency_delta() {
        let (m, s) = (s1_model(), scaler());
        let a = task_proficiency(&m, &s, &team(33.0)).unwrap();
        let b = task_proficiency(&m, &s, &team(33.0)).unwrap();
        assert_eq!(a - b, 0.0);
    }

    #[test]
    fn task_proficiency_is_linear_in_eapm() {
        let (m, s) = (s1_model(), scaler());
        let a = task_proficiency(&m, &s, &team(30.0)).unwrap();
        let b = task_proficiency(&m, &s, &team(60.0)).unwrap();
        assert!((b - a - 0.5 * 30.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn task_proficiency_missing_feature() {
        let mut s = scaler();
        s.features.remove("selo");
        assert!(matches!(
            task_proficiency(&s1_model(), &s, &team(30.0)),
            Err(Error::MissingFeature(_))
        ));
    }

    #[test]
    fn quantile_ties_go_low() {
        let v = [0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let (g, e) = quantile_groups(&v, 5).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(g[0], 1);
        assert!(g.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(quantile_groups(&[0.0; 20], 5), Err(Error::DegenerateQuantiles(_))));
    }

    #[test]
    fn product_columns() {
        let mut f = Frame {
            ids: vec!["a".into(), "b".into()],
            y: vec![0, 1],
            clusters: vec!["a".into(), "b".into()],
            columns: BTreeMap::new(),
        };
        f.columns.insert("x".into(), vec![2.0, 3.0]);
        f.columns.insert("z".into(), vec![-1.0, 4.0]);
        assert_eq!(f.values("x*z").unwrap(), vec![-2.0, 12.0]);
        assert!(f.values("x*w").is_err());
    }
}
