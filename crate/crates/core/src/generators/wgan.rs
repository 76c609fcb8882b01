//! Wasserstein GAN with weight clipping.
//!
//! The critic approximates the Earth-Mover distance between real and
//! generated batches; its weights are clamped to `+-clip_value` after every
//! update to keep it Lipschitz. The generator maximizes the critic score of
//! its samples, receiving gradients through the critic's input.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{backward, Activation, Adam, DenseNet};
use crate::error::{Error, Result};

use super::{concat_cond_rows, gather_rows, TrainConfig};

/// Clamps every weight and bias to `+-clip`.
pub(super) fn clip_net(net: &mut DenseNet, clip: f64) {
    for layer in &mut net.layers {
        for v in layer.w.iter_mut() {
            *v = v.clamp(-clip, clip);
        }
        for v in layer.b.iter_mut() {
            *v = v.clamp(-clip, clip);
        }
    }
}

#[cfg(test)]
fn max_abs_param(net: &DenseNet) -> f64 {
    net.layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()))
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// One critic update: minimize mean(critic(fake)) - mean(critic(real)).
/// Returns the (pre-update) critic loss.
pub(super) fn critic_step(
    critic: &mut DenseNet,
    adam: &mut Adam,
    real_in: &DMatrix<f64>,
    fake_in: &DMatrix<f64>,
) -> f64 {
    let nr = real_in.nrows() as f64;
    let nf = fake_in.nrows() as f64;
    let (real_out, real_tape) = critic.forward(real_in);
    let (fake_out, fake_tape) = critic.forward(fake_in);
    let loss = fake_out.sum() / nf - real_out.sum() / nr;
    let up_real = DMatrix::from_element(real_in.nrows(), 1, -1.0 / nr);
    let up_fake = DMatrix::from_element(fake_in.nrows(), 1, 1.0 / nf);
    let mut grads = backward(critic, &real_tape, &up_real);
    let fake_grads = backward(critic, &fake_tape, &up_fake);
    grads.add_scaled(&fake_grads, 1.0);
    adam.step(critic, &grads);
    loss
}

/// Gradient of `scale * sum(critic(x))` with respect to the critic input.
pub(super) fn critic_input_gradient(
    critic: &DenseNet,
    x: &DMatrix<f64>,
    scale: f64,
) -> DMatrix<f64> {
    let (out, tape) = critic.forward(x);
    let upstream = DMatrix::from_element(out.nrows(), 1, scale);
    backward(critic, &tape, &upstream).input
}

pub struct WganNets {
    pub generator: DenseNet,
    pub critic: DenseNet,
    pub loss_history: Vec<f64>,
}

/// Trains generator and clipped critic on normalized data.
pub fn train_wgan_nets(
    data: &DMatrix<f64>,
    cond: &DVector<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<WganNets> {
    cfg.validate()?;
    let n = data.nrows();
    let m = data.ncols();
    let c_dim = cond.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut generator = DenseNet::new(
        &[cfg.latent_dim + c_dim, cfg.hidden, cfg.hidden, m],
        &[Activation::Tanh, Activation::Tanh, Activation::Linear],
        &mut rng,
    );
    let mut critic = DenseNet::new(
        &[m + c_dim, cfg.hidden, 1],
        &[Activation::Tanh, Activation::Linear],
        &mut rng,
    );
    let mut adam_g = Adam::new(cfg.lr);
    let mut adam_c = Adam::new(cfg.lr);

    let batch = cfg.batch.min(n).max(2);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0.0f64;
        for chunk in order.chunks(batch) {
            let real = gather_rows(data, chunk);
            let bsz = real.nrows();
            let real_in = concat_cond_rows(&real, cond);

            for _ in 0..cfg.n_critic {
                let z = DMatrix::from_fn(bsz, cfg.latent_dim, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g
                });
                let fake = generator.predict(&concat_cond_rows(&z, cond));
                let loss = critic_step(&mut critic, &mut adam_c, &real_in, &concat_cond_rows(&fake, cond));
                clip_net(&mut critic, cfg.clip_value);
                epoch_loss += loss;
                steps += 1.0;
            }

            // Generator step: maximize mean critic score of fresh fakes.
            let z = DMatrix::from_fn(bsz, cfg.latent_dim, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            });
            let gen_in = concat_cond_rows(&z, cond);
            let (fake, gen_tape) = generator.forward(&gen_in);
            let fake_in = concat_cond_rows(&fake, cond);
            let dfake = critic_input_gradient(&critic, &fake_in, -1.0 / bsz as f64);
            let upstream = dfake.columns(0, m).into_owned();
            let gen_grads = backward(&generator, &gen_tape, &upstream);
            adam_g.step(&mut generator, &gen_grads);
        }
        let mean_loss = epoch_loss / steps.max(1.0);
        if !mean_loss.is_finite() || !generator.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: "wgan loss diverged".into(),
            });
        }
        history.push(mean_loss);
    }

    Ok(WganNets {
        generator,
        critic,
        loss_history: history,
    })
}
