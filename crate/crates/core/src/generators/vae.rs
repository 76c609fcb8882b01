//! MMD-regularized autoencoder generators and the total-correlation
//! penalty with its warm-up schedule.
//!
//! The encoder is deterministic; the latent batch is pulled toward N(0, I)
//! by a differentiable RBF-kernel MMD term instead of a KL divergence. The
//! TC variant adds `beta * TC(z)` with the Gaussian-fit estimator
//! `TC = .5 (sum_i log C_ii - log det C)` over the batch covariance `C`.
//! The optional critic head turns the decoder adversarial (the hybrid
//! composition), trained with weight clipping like the WGAN critic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{backward, Activation, Adam, DenseNet};
use crate::error::{Error, Result};

use super::wgan::{clip_net, critic_input_gradient, critic_step};
use super::{concat_cond_rows, gather_rows, TrainConfig};

/// Linear warm-up: 0 at epoch 0 up to `beta_target` at `warmup` epochs.
pub fn beta_schedule(epoch: usize, warmup: usize, beta_target: f64) -> f64 {
    if warmup == 0 || epoch >= warmup {
        beta_target
    } else {
        beta_target * epoch as f64 / warmup as f64
    }
}

/// Gaussian-fit total correlation of a latent batch.
pub fn tc_penalty(latent: &DMatrix<f64>) -> f64 {
    tc_penalty_grad(latent).0
}

/// TC value and its gradient with respect to the latent batch.
///
/// With `C` the (jittered) population covariance of the batch and
/// `G = .5 (diag(1/C_ii) - C^{-1})`, the gradient is `(2/n) Z_c G`; the
/// centering term vanishes because `1' Z_c = 0`.
pub fn tc_penalty_grad(latent: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = latent.nrows();
    let d = latent.ncols();
    if d < 2 || n < 2 {
        return (0.0, DMatrix::zeros(n, d));
    }
    let mean = DVector::from_fn(d, |j, _| latent.column(j).mean());
    let mut centered = latent.clone();
    for i in 0..n {
        for j in 0..d {
            centered[(i, j)] -= mean[j];
        }
    }
    let mut cov = centered.transpose() * &centered / n as f64;
    for j in 0..d {
        cov[(j, j)] += 1e-6;
    }
    let chol = match nalgebra::Cholesky::new(cov.clone()) {
        Some(c) => c,
        None => return (f64::INFINITY, DMatrix::zeros(n, d)),
    };
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let sum_log_diag: f64 = (0..d).map(|j| cov[(j, j)].ln()).sum();
    let tc = 0.5 * (sum_log_diag - logdet);

    let inv = chol.inverse();
    let mut g = -inv;
    for j in 0..d {
        g[(j, j)] += 1.0 / cov[(j, j)];
    }
    g *= 0.5;
    let grad = centered * g * (2.0 / n as f64);
    (tc, grad)
}

/// Squared MMD between a latent batch and prior draws, with its gradient
/// w.r.t. the latent batch (V-statistic, RBF kernel).
pub fn mmd_loss_grad(z: &DMatrix<f64>, prior: &DMatrix<f64>, sigma: f64) -> (f64, DMatrix<f64>) {
    let n = z.nrows();
    let p = prior.nrows();
    let d = z.ncols();
    let gamma = 1.0 / (2.0 * sigma * sigma);

    let mut kzz = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut d2 = 0.0;
            for c in 0..d {
                let dv = z[(i, c)] - z[(j, c)];
                d2 += dv * dv;
            }
            kzz[(i, j)] = (-gamma * d2).exp();
        }
    }
    let mut kzp = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let mut d2 = 0.0;
            for c in 0..d {
                let dv = z[(i, c)] - prior[(j, c)];
                d2 += dv * dv;
            }
            kzp[(i, j)] = (-gamma * d2).exp();
        }
    }
    let mut kpp_sum = 0.0;
    for i in 0..p {
        for j in 0..p {
            let mut d2 = 0.0;
            for c in 0..d {
                let dv = prior[(i, c)] - prior[(j, c)];
                d2 += dv * dv;
            }
            kpp_sum += (-gamma * d2).exp();
        }
    }
    let value = (kzz.sum() / (n * n) as f64 + kpp_sum / (p * p) as f64
        - 2.0 * kzp.sum() / (n * p) as f64)
        .max(0.0);

    // d k(x, y) / dx = k * (y - x) / sigma^2.
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut grad = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let k = kzz[(i, j)];
            for c in 0..d {
                grad[(i, c)] += 2.0 / (n * n) as f64 * k * (z[(j, c)] - z[(i, c)]) * inv_s2;
            }
        }
        for j in 0..p {
            let k = kzp[(i, j)];
            for c in 0..d {
                grad[(i, c)] -= 2.0 / (n * p) as f64 * k * (prior[(j, c)] - z[(i, c)]) * inv_s2;
            }
        }
    }
    (value, grad)
}

/// Which extra objective terms a VAE-family trainer activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaeVariant {
    Plain,
    /// TC penalty with the warm-up schedule active.
    TcWarmup,
    /// TC penalty at full strength from epoch zero.
    TcStatic,
    /// Plain objective plus an adversarial critic on decoded samples.
    WithCritic,
}

pub struct VaeNets {
    pub enc: DenseNet,
    pub dec: DenseNet,
    pub critic: Option<DenseNet>,
    pub loss_history: Vec<f64>,
}

/// Shared trainer for the MMD-VAE family.
pub fn train_vae(
    data: &DMatrix<f64>,
    cond: &DVector<f64>,
    cfg: &TrainConfig,
    variant: VaeVariant,
    seed: u64,
) -> Result<VaeNets> {
    cfg.validate()?;
    let n = data.nrows();
    let m = data.ncols();
    let c_dim = cond.len();
    let latent = cfg.latent_dim;
    let hidden = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut enc = DenseNet::new(
        &[m + c_dim, hidden, latent],
        &[Activation::Tanh, Activation::Linear],
        &mut rng,
    );
    let mut dec = DenseNet::new(
        &[latent + c_dim, hidden, m],
        &[Activation::Tanh, Activation::Linear],
        &mut rng,
    );
    let mut critic = if variant == VaeVariant::WithCritic {
        Some(DenseNet::new(
            &[m + c_dim, hidden, 1],
            &[Activation::Tanh, Activation::Linear],
            &mut rng,
        ))
    } else {
        None
    };
    let mut adam_enc = Adam::new(cfg.lr);
    let mut adam_dec = Adam::new(cfg.lr);
    let mut adam_critic = Adam::new(cfg.lr);

    let batch = cfg.batch.min(n).max(2);
    let sigma = (latent as f64).sqrt();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let beta = match variant {
            VaeVariant::TcWarmup => beta_schedule(epoch, cfg.warmup_epochs, cfg.beta_target),
            VaeVariant::TcStatic => cfg.beta_target,
            _ => 0.0,
        };
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut chunks = 0.0;
        for chunk in order.chunks(batch) {
            let xb = gather_rows(data, chunk);
            let bsz = xb.nrows();
            let enc_in = concat_cond_rows(&xb, cond);
            let (zb, enc_tape) = enc.forward(&enc_in);
            let dec_in = concat_cond_rows(&zb, cond);
            let (xhat, dec_tape) = dec.forward(&dec_in);

            // Reconstruction.
            let recon = (&xhat - &xb).map(|v| v * v).sum() / (bsz * m) as f64;
            let up_dec = (&xhat - &xb) * (2.0 / (bsz * m) as f64);
            let dec_grads = backward(&dec, &dec_tape, &up_dec);
            let mut up_z = dec_grads.input.columns(0, latent).into_owned();

            // Latent MMD toward the prior.
            let prior = DMatrix::from_fn(bsz, latent, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            });
            let (mmd, mmd_grad) = mmd_loss_grad(&zb, &prior, sigma);
            up_z += mmd_grad * cfg.mmd_lambda;

            // Total correlation.
            let mut tc_value = 0.0;
            if beta > 0.0 {
                let (tc, tc_grad) = tc_penalty_grad(&zb);
                tc_value = tc;
                up_z += tc_grad * beta;
            }

            let enc_grads = backward(&enc, &enc_tape, &up_z);
            adam_enc.step(&mut enc, &enc_grads);
            adam_dec.step(&mut dec, &dec_grads);

            // Adversarial head on freshly decoded prior samples.
            if let Some(critic_net) = critic.as_mut() {
                for _ in 0..cfg.n_critic {
                    let zp = DMatrix::from_fn(bsz, latent, |_, _| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g
                    });
                    let fake = dec.predict(&concat_cond_rows(&zp, cond));
                    critic_step(
                        critic_net,
                        &mut adam_critic,
                        &concat_cond_rows(&xb, cond),
                        &concat_cond_rows(&fake, cond),
                    );
                    clip_net(critic_net, cfg.clip_value);
                }
                let zp = DMatrix::from_fn(bsz, latent, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g
                });
                let dec_in2 = concat_cond_rows(&zp, cond);
                let (fake, dec_tape2) = dec.forward(&dec_in2);
                let fake_in = concat_cond_rows(&fake, cond);
                let dfake = critic_input_gradient(critic_net, &fake_in, -cfg.critic_weight / bsz as f64);
                let up_fake = dfake.columns(0, m).into_owned();
                let adv_grads = backward(&dec, &dec_tape2, &up_fake);
                adam_dec.step(&mut dec, &adv_grads);
            }

            let total = recon + cfg.mmd_lambda * mmd + beta * tc_value;
            if !total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: "vae loss diverged".into(),
                });
            }
            epoch_loss += total;
            chunks += 1.0;
        }
        history.push(epoch_loss / chunks);
    }

    Ok(VaeNets {
        enc,
        dec,
        critic,
        loss_history: history,
    })
}
