use super::{information, sigmoid, to_rows, DesignMatrix, FittedModel};
use crate::error::{Error, Result};
use nalgebra::DMatrix;

fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>, factor: f64) -> Vec<Vec<f64>> {
    let mut v = bread * meat * bread * factor;
    // Symmetrize away rounding noise.
    let p = v.nrows();
    for a in 0..p {
        for b in 0..a {
            let m = 0.5 * (v[(a, b)] + v[(b, a)]);
            v[(a, b)] = m;
            v[(b, a)] = m;
        }
    }
    to_rows(&v)
}

fn bread(model: &FittedModel, design: &DesignMatrix) -> Result<DMatrix<f64>> {
    if design.k() != model.features.len() {
        return Err(Error::DimensionMismatch {
            expected: model.features.len(),
            got: design.k(),
        });
    }
    Ok(information(design, &model.beta)
        .cholesky()
        .ok_or(Error::Singular)?
        .inverse())
}

/// CR1 sandwich `B (c * sum_g s_g s_g') B` with `B` the inverse information,
/// `s_g` the per-cluster score sums and `c = G/(G-1) * (n-1)/(n-k-1)`.
pub fn cluster_robust_covariance(model: &FittedModel, design: &DesignMatrix) -> Result<Vec<Vec<f64>>> {
    let g = design.cluster_count();
    if g < 2 {
        return Err(Error::SingleCluster);
    }
    let b = bread(model, design)?;
    let p = model.beta.len();
    let mut scores = vec![0.0; g * p];
    for i in 0..design.n() {
        let row = design.row(i);
        let eta: f64 = row.iter().zip(&model.beta).map(|(x, b)| x * b).sum();
        let r = design.label(i) - sigmoid(eta);
        let c = design.cluster(i) as usize;
        for (s, x) in scores[c * p..(c + 1) * p].iter_mut().zip(row) {
            *s += x * r;
        }
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in scores.chunks_exact(p) {
        for a in 0..p {
            for bb in 0..p {
                meat[(a, bb)] += s[a] * s[bb];
            }
        }
    }
    let n = design.n() as f64;
    let k = design.k() as f64;
    let gf = g as f64;
    let factor = gf / (gf - 1.0) * (n - 1.0) / (n - k - 1.0);
    Ok(sandwich(&b, &meat, factor))
}

/// Heteroskedasticity-robust HC1 covariance (each row its own score term).
pub fn hc1_covariance(model: &FittedModel, design: &DesignMatrix) -> Result<Vec<Vec<f64>>> {
    let b = bread(model, design)?;
    let p = model.beta.len();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..design.n() {
        let row = design.row(i);
        let eta: f64 = row.iter().zip(&model.beta).map(|(x, b)| x * b).sum();
        let r = design.label(i) - sigmoid(eta);
        for a in 0..p {
            for bb in 0..p {
                meat[(a, bb)] += row[a] * row[bb] * r * r;
            }
        }
    }
    let n = design.n() as f64;
    let k = design.k() as f64;
    Ok(sandwich(&b, &meat, n / (n - k - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::super::{fit_logistic, FitConfig};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, clusters: &dyn Fn(usize) -> String, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>() * 2.0 - 1.0]).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| (rng.random::<f64>() < sigmoid(0.2 + 0.9 * r[0])) as u8)
            .collect();
        let cl: Vec<String> = (0..n).map(clusters).collect();
        DesignMatrix::from_rows(vec!["x".into()], &rows, &y, &cl).unwrap()
    }

    #[test]
    fn singleton_clusters_equal_hc1() {
        let d = data(800, &|i| format!("r{i}"), 4);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let cr = cluster_robust_covariance(&m, &d).unwrap();
        let hc = hc1_covariance(&m, &d).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((cr[a][b] - hc[a][b]).abs() < 1e-12 * hc[a][b].abs().max(1e-12));
            }
        }
    }

    #[test]
    fn single_cluster_is_error() {
        let d = data(100, &|_| "same".into(), 2);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        assert!(m.cov_cluster.is_none());
        assert!(matches!(cluster_robust_covariance(&m, &d), Err(Error::SingleCluster)));
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let d = data(600, &|i| format!("c{}", i % 30), 8);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let v = m.cov_cluster.clone().unwrap();
        assert_eq!(v[0][1], v[1][0]);
        let mat = DMatrix::from_fn(2, 2, |a, b| v[a][b]);
        let eig = mat.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|e| *e >= -1e-15));
    }

    #[test]
    fn duplicating_every_cluster_keeps_beta() {
        let d = data(500, &|i| format!("c{}", i % 25), 6);
        let m = fit_logistic(&d, &FitConfig::default()).unwrap();
        let picks: Vec<usize> = (0..d.n()).chain(0..d.n()).collect();
        let cl: Vec<u32> = picks.iter().map(|&i| d.cluster(i)).collect();
        let dd = d.resample(&picks, &cl);
        let m2 = fit_logistic(&dd, &FitConfig::default()).unwrap();
        for (a, b) in m.beta.iter().zip(&m2.beta) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
