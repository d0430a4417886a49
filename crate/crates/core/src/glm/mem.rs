use super::{sigmoid, FittedModel};
use crate::error::{Error, Result};
use crate::stats;
use std::collections::BTreeMap;

/// Marginal effect of one term at the regressor means.
#[derive(Debug, Clone, PartialEq)]
pub struct MemRow {
    pub term: String,
    pub effect: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub stars: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemResult {
    pub rows: Vec<MemRow>,
    /// Linear index at the evaluation point.
    pub eta_at_mean: f64,
}

impl MemResult {
    pub fn get(&self, term: &str) -> Option<&MemRow> {
        self.rows.iter().find(|r| r.term == term)
    }
}

fn factors(column: &str) -> Vec<&str> {
    column.split('*').collect()
}

/// Marginal effects at the mean for a model whose columns are base variables
/// or products of them (`a*b`).
///
/// `means` holds the evaluation point for every base variable; product columns
/// are evaluated as products of those means. For a base variable the effect is
/// the full derivative `dP/dv` with every product column containing `v`
/// expanded by the chain rule. For a product column the effect is the
/// derivative with respect to that column alone. Standard errors use the delta
/// method on the model covariance (clustered when available).
pub fn marginal_effects_at_mean(
    model: &FittedModel,
    means: &BTreeMap<String, f64>,
    terms: &[&str],
) -> Result<MemResult> {
    let p = model.beta.len();
    let mut xbar = vec![1.0; p];
    for (j, col) in model.features.iter().enumerate() {
        let mut v = 1.0;
        for f in factors(col) {
            v *= *means.get(f).ok_or_else(|| Error::MissingFeature(f.to_string()))?;
        }
        xbar[j + 1] = v;
    }
    let eta: f64 = xbar.iter().zip(&model.beta).map(|(x, b)| x * b).sum();
    let mu = sigmoid(eta);
    let d1 = mu * (1.0 - mu);
    let d2 = d1 * (1.0 - 2.0 * mu);
    let cov = model.cov();

    let mut rows = Vec::with_capacity(terms.len());
    for &term in terms {
        // c = d(column values) / d(term) at the mean.
        let mut c = vec![0.0; p];
        let mut referenced = false;
        if term.contains('*') {
            let j = model
                .features
                .iter()
                .position(|f| f == term)
                .ok_or_else(|| Error::UnknownTerm(term.to_string()))?;
            c[j + 1] = 1.0;
            referenced = true;
        } else {
            for (j, col) in model.features.iter().enumerate() {
                let fs = factors(col);
                for (pos, f) in fs.iter().enumerate() {
                    if *f != term {
                        continue;
                    }
                    referenced = true;
                    let mut prod = 1.0;
                    for (q, g) in fs.iter().enumerate() {
                        if q != pos {
                            prod *= means[*g];
                        }
                    }
                    c[j + 1] += prod;
                }
            }
        }
        if !referenced {
            return Err(Error::UnknownTerm(term.to_string()));
        }
        let cb: f64 = c.iter().zip(&model.beta).map(|(a, b)| a * b).sum();
        let effect = d1 * cb;
        let grad: Vec<f64> = (0..p).map(|i| d1 * c[i] + cb * d2 * xbar[i]).collect();
        let mut var = 0.0;
        for a in 0..p {
            for b in 0..p {
                var += grad[a] * cov[a][b] * grad[b];
            }
        }
        let se = var.max(0.0).sqrt();
        let z = if se > 0.0 { effect / se } else { 0.0 };
        let p_value = if se > 0.0 { stats::normal_two_sided_p(z) } else { 1.0 };
        rows.push(MemRow {
            term: term.to_string(),
            effect,
            se,
            z,
            p_value,
            stars: stats::stars(p_value),
        });
    }
    Ok(MemResult {
        rows,
        eta_at_mean: eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(features: &[&str], beta: Vec<f64>) -> FittedModel {
        let p = beta.len();
        let mut cov = vec![vec![0.0; p]; p];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 0.01 * (i + 1) as f64;
        }
        FittedModel {
            features: features.iter().map(|s| s.to_string()).collect(),
            beta,
            cov_cluster: None,
            cov_classical: cov,
            loglik: 0.0,
            loglik_null: 0.0,
            pseudo_r2: 0.0,
            n_obs: 100,
            cluster_count: 0,
            converged: true,
            iterations: 1,
        }
    }

    fn means(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn zero_beta_gives_zero_effects() {
        let m = model(&["a", "b"], vec![0.0, 0.0, 0.0]);
        let r = marginal_effects_at_mean(&m, &means(&[("a", 1.0), ("b", -2.0)]), &["a", "b"]).unwrap();
        assert!(r.rows.iter().all(|row| row.effect == 0.0));
    }

    #[test]
    fn quarter_slope_at_zero() {
        let m = model(&["a", "b"], vec![0.0, 0.8, -0.4]);
        let r = marginal_effects_at_mean(&m, &means(&[("a", 0.0), ("b", 0.0)]), &["a", "b"]).unwrap();
        assert!((r.rows[0].effect - 0.2).abs() < 1e-15);
        assert!((r.rows[1].effect + 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_interaction_coefficient_gives_zero_interaction_effect() {
        let m = model(&["tp", "fam*tp"], vec![0.1, 0.5, 0.0]);
        let r = marginal_effects_at_mean(&m, &means(&[("tp", 0.2), ("fam", 1.3)]), &["fam*tp"]).unwrap();
        assert_eq!(r.rows[0].effect, 0.0);
    }

    #[test]
    fn unknown_term_is_error() {
        let m = model(&["a"], vec![0.0, 1.0]);
        let err = marginal_effects_at_mean(&m, &means(&[("a", 0.0)]), &["zzz"]).unwrap_err();
        assert!(matches!(err, Error::UnknownTerm(_)));
    }

    #[test]
    fn matches_finite_differences() {
        let m = model(
            &["tp", "tf", "fam*tp", "size*tf"],
            vec![0.05, 0.6, 0.9, 0.2, -0.15],
        );
        let at = means(&[("tp", 0.3), ("tf", -0.2), ("fam", 1.1), ("size", 2.7)]);
        let prob = |pt: &BTreeMap<String, f64>| {
            let x = [pt["tp"], pt["tf"], pt["fam"] * pt["tp"], pt["size"] * pt["tf"]];
            let eta = m.beta[0] + x.iter().zip(&m.beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            sigmoid(eta)
        };
        let r = marginal_effects_at_mean(&m, &at, &["tp", "tf", "fam", "fam*tp"]).unwrap();
        let h = 1e-5;
        for name in ["tp", "tf", "fam"] {
            let mut up = at.clone();
            let mut dn = at.clone();
            *up.get_mut(name).unwrap() += h;
            *dn.get_mut(name).unwrap() -= h;
            let fd = (prob(&up) - prob(&dn)) / (2.0 * h);
            assert!((r.get(name).unwrap().effect - fd).abs() < 1e-6, "{name}");
        }
        // Product column treated as its own regressor.
        let eta = r.eta_at_mean;
        let col = |delta: f64| sigmoid(eta + m.beta[3] * delta);
        let fd = (col(h) - col(-h)) / (2.0 * h);
        assert!((r.get("fam*tp").unwrap().effect - fd).abs() < 1e-6);
    }
}
