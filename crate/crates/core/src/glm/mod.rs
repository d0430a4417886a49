//! Binary logistic regression: Newton fitting with step halving,
//! cluster-robust covariance, McFadden pseudo R², holdout accuracy and
//! marginal effects at the mean.

mod covariance;
mod mem;

pub use covariance::{cluster_robust_covariance, hc1_covariance};
pub use mem::{marginal_effects_at_mean, MemResult, MemRow};

use crate::error::{Error, Result};
use crate::stats;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const CHUNK_ROWS: usize = 4096;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Rows of regressors (intercept prepended internally), binary labels and one
/// cluster label per row.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    names: Vec<String>,
    /// Row-major `n x (k + 1)`, column 0 is the intercept.
    x: Vec<f64>,
    y: Vec<f64>,
    clusters: Vec<u32>,
    cluster_count: usize,
}

impl DesignMatrix {
    pub fn from_rows<S: AsRef<str>>(
        names: Vec<String>,
        rows: &[Vec<f64>],
        y: &[u8],
        clusters: &[S],
    ) -> Result<Self> {
        let k = names.len();
        let p = k + 1;
        if y.len() != rows.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: y.len() });
        }
        if clusters.len() != rows.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: clusters.len() });
        }
        let mut x = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != k {
                return Err(Error::DimensionMismatch { expected: k, got: r.len() });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("non-finite value in column `{}`", names[j])));
            }
            x.push(1.0);
            x.extend_from_slice(r);
        }
        let mut labels = Vec::with_capacity(y.len());
        for &v in y {
            if v > 1 {
                return Err(Error::Domain(format!("label {v} is not binary")));
            }
            labels.push(v as f64);
        }
        let mut ids: HashMap<&str, u32> = HashMap::new();
        let cl: Vec<u32> = clusters
            .iter()
            .map(|c| {
                let next = ids.len() as u32;
                *ids.entry(c.as_ref()).or_insert(next)
            })
            .collect();
        Ok(DesignMatrix {
            names,
            x,
            y: labels,
            cluster_count: ids.len(),
            clusters: cl,
        })
    }

    pub fn from_columns<S: AsRef<str>>(
        names: Vec<String>,
        columns: &[Vec<f64>],
        y: &[u8],
        clusters: &[S],
    ) -> Result<Self> {
        if columns.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: columns.len() });
        }
        let n = y.len();
        for c in columns {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.len() });
            }
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::from_rows(names, &rows, y, clusters)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of regressors, excluding the intercept.
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    /// Row `i` including the leading intercept `1.0`.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.k() + 1;
        &self.x[i * p..(i + 1) * p]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn cluster(&self, i: usize) -> u32 {
        self.clusters[i]
    }

    /// Column `j` of the regressors (no intercept).
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.row(i)[j + 1]).collect()
    }

    pub fn mean_label(&self) -> f64 {
        stats::mean(&self.y)
    }

    /// Rows picked by index (repeats allowed) with cluster labels given per pick.
    pub fn resample(&self, picks: &[usize], clusters: &[u32]) -> DesignMatrix {
        let p = self.k() + 1;
        let mut x = Vec::with_capacity(picks.len() * p);
        let mut y = Vec::with_capacity(picks.len());
        for &i in picks {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        let mut distinct: Vec<u32> = clusters.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        DesignMatrix {
            names: self.names.clone(),
            x,
            y,
            clusters: clusters.to_vec(),
            cluster_count: distinct.len(),
        }
    }
}

struct Accum {
    loglik: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Accum {
    fn zero(p: usize) -> Self {
        Accum {
            loglik: 0.0,
            grad: vec![0.0; p],
            hess: vec![0.0; p * p],
        }
    }

    fn add(&mut self, other: &Accum) {
        self.loglik += other.loglik;
        self.grad.iter_mut().zip(&other.grad).for_each(|(a, b)| *a += b);
        self.hess.iter_mut().zip(&other.hess).for_each(|(a, b)| *a += b);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood, score and observed information, reduced over fixed-size
/// row chunks in a fixed order so results do not depend on thread scheduling.
fn accumulate(d: &DesignMatrix, beta: &[f64], with_hessian: bool) -> Accum {
    let p = beta.len();
    let partials: Vec<Accum> = d
        .x
        .par_chunks(CHUNK_ROWS * p)
        .zip(d.y.par_chunks(CHUNK_ROWS))
        .map(|(xs, ys)| {
            let mut acc = Accum::zero(p);
            for (row, &y) in xs.chunks_exact(p).zip(ys) {
                let eta = dot(row, beta);
                acc.loglik += y * eta - log1p_exp(eta);
                let mu = sigmoid(eta);
                let r = y - mu;
                for (g, xv) in acc.grad.iter_mut().zip(row) {
                    *g += xv * r;
                }
                if with_hessian {
                    let w = mu * (1.0 - mu);
                    for a in 0..p {
                        let wa = w * row[a];
                        for b in a..p {
                            acc.hess[a * p + b] += wa * row[b];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::zero(p);
    for part in &partials {
        total.add(part);
    }
    if with_hessian {
        for a in 0..p {
            for b in 0..a {
                total.hess[a * p + b] = total.hess[b * p + a];
            }
        }
    }
    total
}

pub fn log_likelihood(d: &DesignMatrix, beta: &[f64]) -> f64 {
    accumulate(d, beta, false).loglik
}

/// Analytic gradient of the log-likelihood, `X'(y - p)`.
pub fn score(d: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    accumulate(d, beta, false).grad
}

/// Intercept-only log-likelihood (closed form).
pub fn null_log_likelihood(d: &DesignMatrix) -> f64 {
    let n = d.n() as f64;
    let ybar = d.mean_label();
    if ybar <= 0.0 || ybar >= 1.0 {
        return 0.0;
    }
    n * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln())
}

pub(crate) fn information(d: &DesignMatrix, beta: &[f64]) -> DMatrix<f64> {
    let p = beta.len();
    let acc = accumulate(d, beta, true);
    DMatrix::from_row_slice(p, p, &acc.hess)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop when the max-norm of the log-likelihood gradient is at most this.
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Regressor names, intercept excluded.
    pub features: Vec<String>,
    /// `[intercept, beta_1, ..., beta_k]`.
    pub beta: Vec<f64>,
    /// CR1 cluster-robust covariance, when at least two clusters were present.
    pub cov_cluster: Option<Vec<Vec<f64>>>,
    /// Inverse observed information.
    pub cov_classical: Vec<Vec<f64>>,
    pub loglik: f64,
    pub loglik_null: f64,
    pub pseudo_r2: f64,
    pub n_obs: usize,
    pub cluster_count: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

impl FittedModel {
    /// Covariance used for inference: clustered when available.
    pub fn cov(&self) -> &Vec<Vec<f64>> {
        self.cov_cluster.as_ref().unwrap_or(&self.cov_classical)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.features.iter().position(|f| f == name).map(|j| self.beta[j + 1])
    }

    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    /// Coefficient table; the intercept row is named `const`.
    pub fn coef_table(&self) -> Vec<CoefRow> {
        let cov = self.cov();
        let names = std::iter::once("const".to_string()).chain(self.features.iter().cloned());
        names
            .enumerate()
            .map(|(j, name)| {
                let se = cov[j][j].max(0.0).sqrt();
                let z = self.beta[j] / se;
                CoefRow {
                    name,
                    estimate: self.beta[j],
                    se,
                    z,
                    p_value: stats::normal_two_sided_p(z),
                }
            })
            .collect()
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        let j = self.features.iter().position(|f| f == name)? + 1;
        Some(self.cov()[j][j].max(0.0).sqrt())
    }

    pub fn linear_index(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                expected: self.features.len(),
                got: row.len(),
            });
        }
        Ok(self.beta[0] + dot(&self.beta[1..], row))
    }
}

fn check_collinearity(d: &DesignMatrix) -> Result<()> {
    let p = d.k() + 1;
    let mut gram = vec![0.0; p * p];
    for i in 0..d.n() {
        let r = d.row(i);
        for a in 0..p {
            for b in a..p {
                gram[a * p + b] += r[a] * r[b];
            }
        }
    }
    let name = |j: usize| {
        if j == 0 {
            "const".to_string()
        } else {
            d.names[j - 1].clone()
        }
    };
    let scale: Vec<f64> = (0..p).map(|j| gram[j * p + j].sqrt()).collect();
    for (j, s) in scale.iter().enumerate() {
        if *s == 0.0 {
            return Err(Error::Collinear { column: name(j) });
        }
    }
    // Cholesky of the column-normalized Gram matrix; a vanishing pivot means
    // the column lies in the span of the earlier ones.
    let g = |a: usize, b: usize| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        gram[lo * p + hi] / (scale[lo] * scale[hi])
    };
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut diag = g(j, j);
        for m in 0..j {
            diag -= l[j * p + m] * l[j * p + m];
        }
        if diag < 1e-10 {
            return Err(Error::Collinear { column: name(j) });
        }
        let ljj = diag.sqrt();
        l[j * p + j] = ljj;
        for i in (j + 1)..p {
            let mut s = g(i, j);
            for m in 0..j {
                s -= l[i * p + m] * l[j * p + m];
            }
            l[i * p + j] = s / ljj;
        }
    }
    Ok(())
}

fn max_abs_eta(d: &DesignMatrix, beta: &[f64]) -> f64 {
    (0..d.n()).map(|i| dot(d.row(i), beta).abs()).fold(0.0, f64::max)
}

fn separation_direction(d: &DesignMatrix, beta: &[f64]) -> String {
    if d.k() == 0 {
        return "const".into();
    }
    let mut best = (0usize, -1.0f64);
    for j in 0..d.k() {
        let sd = stats::std_dev(&d.column(j)).max(1e-300);
        let s = beta[j + 1].abs() * sd;
        if s > best.1 {
            best = (j, s);
        }
    }
    d.names[best.0].clone()
}

const SEPARATION_ETA: f64 = 35.0;

/// Maximum-likelihood logistic fit by Newton iterations with step halving.
pub fn fit_logistic(design: &DesignMatrix, config: &FitConfig) -> Result<FittedModel> {
    let n = design.n();
    let p = design.k() + 1;
    if n <= p {
        return Err(Error::Domain(format!("need more than {p} rows, got {n}")));
    }
    let ybar = design.mean_label();
    if ybar <= 0.0 || ybar >= 1.0 {
        return Err(Error::SingleClass);
    }
    check_collinearity(design)?;

    let mut beta = vec![0.0; p];
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut converged = false;
    let mut iterations = 0;
    let mut gmax = f64::INFINITY;
    while iterations < config.max_iter {
        let acc = accumulate(design, &beta, true);
        gmax = acc.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= config.tol {
            converged = true;
            break;
        }
        if max_abs_eta(design, &beta) > SEPARATION_ETA {
            return Err(Error::Separation {
                direction: separation_direction(design, &beta),
            });
        }
        iterations += 1;
        let h = DMatrix::from_row_slice(p, p, &acc.hess);
        let Some(chol) = h.cholesky() else {
            return Err(Error::Singular);
        };
        let step = chol.solve(&DVector::from_column_slice(&acc.grad));
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let ll = log_likelihood(design, &cand);
            if ll.is_finite() && ll >= acc.loglik - 1e-12 * acc.loglik.abs() {
                beta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // At the floating-point noise floor of the likelihood.
            break;
        }
    }
    if max_abs_eta(design, &beta) > SEPARATION_ETA {
        return Err(Error::Separation {
            direction: separation_direction(design, &beta),
        });
    }
    if !converged {
        if gmax > 1e-6 * n as f64 {
            return Err(Error::NotConverged { iterations, gradient: gmax });
        }
        log::warn!("logistic fit stopped at gradient max-norm {gmax:e} above tolerance {:e}", config.tol);
    }

    let info = information(design, &beta);
    let inv = info.clone().cholesky().ok_or(Error::Singular)?.inverse();
    let cov_classical = to_rows(&inv);
    let loglik = log_likelihood(design, &beta);
    let loglik_null = null_log_likelihood(design);
    let mut model = FittedModel {
        features: design.names.clone(),
        beta,
        cov_cluster: None,
        cov_classical,
        loglik,
        loglik_null,
        pseudo_r2: if loglik_null != 0.0 { 1.0 - loglik / loglik_null } else { 0.0 },
        n_obs: n,
        cluster_count: design.cluster_count(),
        converged,
        iterations,
    };
    if design.cluster_count() >= 2 {
        model.cov_cluster = Some(cluster_robust_covariance(&model, design)?);
    }
    Ok(model)
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// `sigma(beta_0 + beta' x)` for a row without intercept.
pub fn predict_proba(model: &FittedModel, row: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.linear_index(row)?))
}

/// `1 - loglik(model) / loglik(intercept only)` evaluated on `design`.
pub fn mcfadden_pseudo_r2(model: &FittedModel, design: &DesignMatrix) -> f64 {
    let null = null_log_likelihood(design);
    if null == 0.0 {
        return 0.0;
    }
    1.0 - log_likelihood(design, &model.beta) / null
}

/// Share of rows where `p >= 0.5` agrees with the label.
pub fn accuracy(model: &FittedModel, holdout: &DesignMatrix) -> Result<f64> {
    if holdout.n() == 0 {
        return Err(Error::EmptyHoldout);
    }
    if holdout.k() != model.features.len() {
        return Err(Error::DimensionMismatch {
            expected: model.features.len(),
            got: holdout.k(),
        });
    }
    let hits = (0..holdout.n())
        .filter(|&i| {
            let p = sigmoid(dot(holdout.row(i), &model.beta));
            (p >= 0.5) == (holdout.label(i) == 1.0)
        })
        .count();
    Ok(hits as f64 / holdout.n() as f64)
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub features: Vec<String>,
    pub beta: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub cov_kind: String,
    pub pseudo_r2: f64,
    pub n_obs: usize,
    pub cluster_count: usize,
    pub loglik: f64,
    pub loglik_null: f64,
    pub converged: bool,
    pub iterations: usize,
    pub cov_classical: Vec<Vec<f64>>,
}

impl From<&FittedModel> for ModelJson {
    fn from(m: &FittedModel) -> Self {
        ModelJson {
            features: m.features.clone(),
            beta: m.beta.clone(),
            cov: m.cov().clone(),
            cov_kind: if m.cov_cluster.is_some() { "cluster_cr1" } else { "classical" }.into(),
            pseudo_r2: m.pseudo_r2,
            n_obs: m.n_obs,
            cluster_count: m.cluster_count,
            loglik: m.loglik,
            loglik_null: m.loglik_null,
            converged: m.converged,
            iterations: m.iterations,
            cov_classical: m.cov_classical.clone(),
        }
    }
}

impl From<ModelJson> for FittedModel {
    fn from(j: ModelJson) -> Self {
        let clustered = j.cov_kind == "cluster_cr1";
        FittedModel {
            features: j.features,
            beta: j.beta,
            cov_cluster: clustered.then(|| j.cov.clone()),
            cov_classical: j.cov_classical,
            loglik: j.loglik,
            loglik_null: j.loglik_null,
            pseudo_r2: j.pseudo_r2,
            n_obs: j.n_obs,
            cluster_count: j.cluster_count,
            converged: j.converged,
            iterations: j.iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate(n: usize, beta: &[f64], seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = beta.len() - 1;
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let eta = beta[0] + dot(&beta[1..], &x);
            y.push((rng.random::<f64>() < sigmoid(eta)) as u8);
            rows.push(x);
        }
        let names = (0..k).map(|j| format!("x{j}")).collect();
        let clusters: Vec<String> = (0..n).map(|i| format!("c{}", i % 50)).collect();
        DesignMatrix::from_rows(names, &rows, &y, &clusters).unwrap()
    }

    #[test]
    fn intercept_only_matches_logit_of_mean() {
        let n = 1000;
        let y: Vec<u8> = (0..n).map(|i| (i % 10 < 3) as u8).collect();
        let rows = vec![Vec::new(); n];
        let cl: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let d = DesignMatrix::from_rows(vec![], &rows, &y, &cl).unwrap();
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        assert!((m.beta[0] - (0.3f64 / 0.7).ln()).abs() < 1e-10);
        assert!(m.pseudo_r2.abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let rows = vec![vec![0.5], vec![1.0], vec![2.0], vec![3.0]];
        let d = DesignMatrix::from_rows(vec!["x".into()], &rows, &[1, 1, 1, 1], &["a", "b", "c", "d"]).unwrap();
        let err = fit_logistic(&d, &FitConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "labels contain a single class");
    }

    #[test]
    fn perfect_separation_names_direction() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 - 19.5, ((i * 7) % 5) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| (i >= 20) as u8).collect();
        let cl: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        let d = DesignMatrix::from_rows(vec!["sep".into(), "noise".into()], &rows, &y, &cl).unwrap();
        match fit_logistic(&d, &FitConfig::default()) {
            Err(Error::Separation { direction }) => assert_eq!(direction, "sep"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_column_rejected() {
        let base = simulate(300, &[0.0, 0.5], 3);
        let col = base.column(0);
        let y: Vec<u8> = (0..base.n()).map(|i| base.label(i) as u8).collect();
        let cl: Vec<String> = (0..base.n()).map(|i| i.to_string()).collect();
        let d = DesignMatrix::from_columns(vec!["x".into(), "x_dup".into()], &[col.clone(), col], &y, &cl).unwrap();
        match fit_logistic(&d, &FitConfig::default()) {
            Err(Error::Collinear { column }) => assert_eq!(column, "x_dup"),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let m = FittedModel {
            features: vec!["a".into(), "b".into()],
            beta: vec![0.0; 3],
            cov_cluster: None,
            cov_classical: vec![vec![0.0; 3]; 3],
            loglik: 0.0,
            loglik_null: 0.0,
            pseudo_r2: 0.0,
            n_obs: 0,
            cluster_count: 0,
            converged: true,
            iterations: 0,
        };
        assert_eq!(predict_proba(&m, &[3.0, -7.0]).unwrap(), 0.5);
        assert!(predict_proba(&m, &[1.0]).is_err());
    }

    #[test]
    fn sigmoid_is_monotone_towards_one() {
        let mut last = 0.0;
        for z in [0.0, 1.0, 5.0, 20.0, 50.0, 700.0] {
            let p = sigmoid(z);
            assert!(p >= last && p <= 1.0);
            last = p;
        }
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn perfect_predictor_accuracy_is_one() {
        let d = simulate(400, &[0.0, 1.0], 11);
        let mut m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let y: Vec<u8> = (0..d.n()).map(|i| d.label(i) as u8).collect();
        let col: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
        let cl: Vec<String> = (0..d.n()).map(|i| i.to_string()).collect();
        let hold = DesignMatrix::from_columns(vec!["x0".into()], &[col], &y, &cl).unwrap();
        m.beta = vec![0.0, 10.0];
        assert_eq!(accuracy(&m, &hold).unwrap(), 1.0);
        let empty = DesignMatrix::from_rows::<&str>(vec!["x0".into()], &[], &[], &[]).unwrap();
        assert!(matches!(accuracy(&m, &empty), Err(Error::EmptyHoldout)));
    }

    #[test]
    fn score_equation_holds_at_optimum() {
        let d = simulate(5000, &[0.3, 0.8, -0.4], 5);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let g = score(&d, &m.beta);
        assert!(g[0].abs() < 1e-8 * d.n() as f64);
        assert!(m.converged);
    }

    #[test]
    fn rescaling_a_column_rescales_its_coefficient() {
        let d = simulate(3000, &[0.1, 0.7, -0.3], 9);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let c = 3.5;
        let y: Vec<u8> = (0..d.n()).map(|i| d.label(i) as u8).collect();
        let cl: Vec<String> = (0..d.n()).map(|i| i.to_string()).collect();
        let cols = vec![d.column(0).iter().map(|v| v * c).collect::<Vec<_>>(), d.column(1)];
        let d2 = DesignMatrix::from_columns(d.names().to_vec(), &cols, &y, &cl).unwrap();
        let m2 = fit_logistic(&d2, &FitConfig::default()).unwrap();
        assert!((m2.beta[1] * c - m.beta[1]).abs() < 1e-8);
        for i in 0..50 {
            let p1 = sigmoid(dot(d.row(i), &m.beta));
            let p2 = sigmoid(dot(d2.row(i), &m2.beta));
            assert!((p1 - p2).abs() < 1e-8);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let d = simulate(500, &[0.0, 0.5], 1);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let text = serde_json::to_string(&ModelJson::from(&m)).unwrap();
        let back: FittedModel = serde_json::from_str::<ModelJson>(&text).unwrap().into();
        assert_eq!(back, m);
    }
}
