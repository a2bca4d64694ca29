//! Principal-component projection by power iteration with deflation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 50_000;
const TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal axes, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis (eigenvalues of the n−1 covariance).
    pub variance: Vec<f64>,
    /// Share of the total variance per axis; zeros when the data is constant.
    pub explained_ratio: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest-magnitude entry made positive; the first one wins exact ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn remove_span(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

fn mat_vec(c: &[f64], v: &[f64]) -> Vec<f64> {
    c.chunks_exact(v.len()).map(|row| dot(row, v)).collect()
}

impl Pca {
    /// Fits `dims` axes to the rows of `data`.
    pub fn fit(data: &[Vec<f64>], dims: usize) -> Result<Self> {
        let d = data.first().map_or(0, Vec::len);
        if data.is_empty() || d == 0 {
            return Err(Error::Data("no points to project".into()));
        }
        if data.iter().any(|r| r.len() != d) {
            return Err(Error::Data("points of differing dimension".into()));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        if dims == 0 || dims > d {
            return Err(Error::InvalidConfig(format!("{dims} components from {d}-dimensional points")));
        }
        let n = data.len();
        let mut mean = vec![0.0; d];
        for r in data {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let denom = (n.max(2) - 1) as f64;
        let mut cov = vec![0.0; d * d];
        for r in data {
            let c: Vec<f64> = r.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += c[i] * c[j] / denom;
                }
            }
        }
        let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut components: Vec<Vec<f64>> = Vec::with_capacity(dims);
        let mut variance = Vec::with_capacity(dims);
        for _ in 0..dims {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            remove_span(&mut v, &components);
            normalize(&mut v);
            let mut lambda = 0.0;
            for _ in 0..MAX_ITERS {
                let mut w = mat_vec(&cov, &v);
                // deflation by projection keeps the iterate off earlier axes
                remove_span(&mut w, &components);
                lambda = dot(&w, &v);
                if normalize(&mut w) <= scale * 1e-15 {
                    break;
                }
                let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                v = w;
                if delta < TOL {
                    break;
                }
            }
            if lambda <= scale * 1e-12 {
                // nothing left: any direction orthogonal to the earlier axes
                lambda = 0.0;
                v = (0..d)
                    .map(|j| {
                        let mut e = vec![0.0; d];
                        e[j] = 1.0;
                        remove_span(&mut e, &components);
                        e
                    })
                    .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
                    .unwrap_or_default();
                normalize(&mut v);
            }
            fix_sign(&mut v);
            components.push(v);
            variance.push(lambda.max(0.0));
        }
        let explained_ratio = variance.iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect();
        Ok(Pca { mean, components, variance, explained_ratio })
    }

    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = point.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components.iter().map(|a| dot(a, &c)).collect()
    }
}

/// Coordinates of every row on the top two principal axes.
pub fn project_features(data: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let pca = Pca::fit(data, 2)?;
    Ok(data
        .iter()
        .map(|r| {
            let p = pca.project(r);
            [p[0], p[1]]
        })
        .collect())
}
