//! Full-covariance Gaussian mixture fitted by EM; the analytic pool
//! baseline.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const COV_REG: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Per-iteration mean log-likelihood of the training run.
    pub log_likelihood_trace: Vec<f64>,
    chols: Vec<Cholesky<f64, nalgebra::Dyn>>,
}

impl GaussianMixture {
    /// Fits `n_components` full-covariance components with EM.
    pub fn fit(data: &DMatrix<f64>, n_components: usize, seed: u64) -> Result<Self> {
        let n = data.nrows();
        let d = data.ncols();
        if n_components == 0 || n < n_components {
            return Err(Error::Protocol(format!(
                "gmm needs 1..=n components, got {n_components} for {n} samples"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Init: distinct random rows as means, global covariance everywhere.
        let global_mean = DVector::from_fn(d, |j, _| data.column(j).mean());
        let mut global_cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = data.row(i).transpose() - &global_mean;
            global_cov += &diff * diff.transpose();
        }
        global_cov /= n as f64;
        for j in 0..d {
            global_cov[(j, j)] += COV_REG;
        }
        let mut pick = std::collections::HashSet::new();
        while pick.len() < n_components {
            pick.insert(rng.random_range(0..n));
        }
        let mut means: Vec<DVector<f64>> =
            pick.iter().map(|&i| data.row(i).transpose()).collect();
        means.sort_by(|a, b| a[0].total_cmp(&b[0])); // seed-stable order
        let mut covs = vec![global_cov.clone(); n_components];
        let mut weights = vec![1.0 / n_components as f64; n_components];

        let mut trace = Vec::new();
        let mut prev_ll = f64::NEG_INFINITY;
        for _iter in 0..200 {
            let chols = cholesky_all(&covs)?;
            // E-step in log space.
            let mut resp = DMatrix::zeros(n, n_components);
            let mut ll = 0.0;
            for i in 0..n {
                let x = data.row(i).transpose();
                let logp: Vec<f64> = (0..n_components)
                    .map(|c| weights[c].ln() + log_gaussian(&x, &means[c], &chols[c]))
                    .collect();
                let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = logp.iter().map(|v| (v - max).exp()).sum();
                ll += max + denom.ln();
                for c in 0..n_components {
                    resp[(i, c)] = (logp[c] - max).exp() / denom;
                }
            }
            ll /= n as f64;
            trace.push(ll);

            // M-step.
            for c in 0..n_components {
                let nk: f64 = resp.column(c).sum();
                weights[c] = nk / n as f64;
                let mut mu = DVector::zeros(d);
                for i in 0..n {
                    mu += data.row(i).transpose() * resp[(i, c)];
                }
                mu /= nk.max(1e-12);
                let mut cov = DMatrix::zeros(d, d);
                for i in 0..n {
                    let diff = data.row(i).transpose() - &mu;
                    cov += &diff * diff.transpose() * resp[(i, c)];
                }
                cov /= nk.max(1e-12);
                for j in 0..d {
                    cov[(j, j)] += COV_REG;
                }
                means[c] = mu;
                covs[c] = cov;
            }

            let converged = (ll - prev_ll).abs() < 1e-8;
            prev_ll = ll;
            if converged {
                break;
            }
        }

        let _ = prev_ll;
        let chols = cholesky_all(&covs)?;
        Ok(Self {
            weights,
            means,
            covs,
            log_likelihood_trace: trace,
            chols,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draws `n` samples.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        for i in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut comp = self.weights.len() - 1;
            for (c, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    comp = c;
                    break;
                }
            }
            let g = DVector::from_fn(d, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                v
            });
            let x = &self.means[comp] + self.chols[comp].l() * g;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }
}

fn cholesky_all(covs: &[DMatrix<f64>]) -> Result<Vec<Cholesky<f64, nalgebra::Dyn>>> {
    covs.iter()
        .map(|c| {
            Cholesky::new(c.clone()).ok_or_else(|| {
                Error::Training {
                    epoch: 0,
                    msg: "gmm covariance lost positive definiteness".into(),
                }
            })
        })
        .collect()
}

fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let maha = diff.dot(&solved);
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (maha + logdet + d * (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_data(seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(200, 2, |_, j| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * (j as f64 + 1.0) + j as f64
        })
    }

    #[test]
    fn single_component_matches_sample_statistics() {
        let data = toy_data(1);
        let gmm = GaussianMixture::fit(&data, 1, 0).unwrap();
        let n = data.nrows() as f64;
        for j in 0..2 {
            assert_abs_diff_eq!(gmm.means[0][j], data.column(j).mean(), epsilon = 1e-9);
        }
        // Population covariance (EM fixed point), up to the regularizer.
        let mean = &gmm.means[0];
        let mut cov = DMatrix::zeros(2, 2);
        for i in 0..data.nrows() {
            let d = data.row(i).transpose() - mean;
            cov += &d * d.transpose();
        }
        cov /= n;
        for a in 0..2 {
            for b in 0..2 {
                let expect = cov[(a, b)] + if a == b { COV_REG } else { 0.0 };
                assert_abs_diff_eq!(gmm.covs[0][(a, b)], expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn log_likelihood_non_decreasing() {
        let data = toy_data(2);
        let gmm = GaussianMixture::fit(&data, 3, 1).unwrap();
        for w in gmm.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "ll decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_and_sampling_deterministic() {
        let data = toy_data(3);
        let a = GaussianMixture::fit(&data, 2, 7).unwrap();
        let b = GaussianMixture::fit(&data, 2, 7).unwrap();
        assert_eq!(a.weights, b.weights);
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(a.sample(5, &mut r1), b.sample(5, &mut r2));
    }
}
