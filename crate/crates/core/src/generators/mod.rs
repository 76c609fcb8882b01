//! The benchmark pool: attack-distribution generators across four trainable
//! families plus analytic baselines, attacker-knowledge conditioning, and
//! the physics-informed output modes.
//!
//! Trainable families consume data normalized by the pipeline scaler and
//! emit samples in that space; [`apply_pi`] converts samples to physical
//! units under the configured [`PiMode`]. Everything is deterministic given
//! the training and sampling seeds.

pub mod condition;
pub mod ddpm;
pub mod flow;
pub mod gmm;
pub mod vae;
pub mod wgan;

pub use condition::{build_condition_vector, knowledge_to_mitre, KnowledgeCondition, MitreLabel};
pub use vae::{beta_schedule, tc_penalty};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::DenseNet;
use crate::error::{Error, Result};
use crate::physics::{physics_wrapper, Harmoniser, PhysicsConfig, PiMode, Scaler};

/// Generator families in the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Wgan,
    MmdVae,
    TcMmdVae,
    RealNvp,
    Ddpm,
    MmdVaeWgan,
    Gmm,
    HdeltaOracle,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Wgan => "wgan",
            Family::MmdVae => "mmd_vae",
            Family::TcMmdVae => "tc_mmd_vae",
            Family::RealNvp => "realnvp",
            Family::Ddpm => "ddpm",
            Family::MmdVaeWgan => "mmd_vae_wgan",
            Family::Gmm => "gmm",
            Family::HdeltaOracle => "hdelta_oracle",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "wgan" => Family::Wgan,
            "mmd_vae" => Family::MmdVae,
            "tc_mmd_vae" => Family::TcMmdVae,
            "realnvp" => Family::RealNvp,
            "ddpm" => Family::Ddpm,
            "mmd_vae_wgan" => Family::MmdVaeWgan,
            "gmm" => Family::Gmm,
            "hdelta_oracle" => Family::HdeltaOracle,
            other => return Err(Error::Protocol(format!("unknown family `{other}`"))),
        })
    }
}

/// Training hyperparameters shared across the pool.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Total-correlation target weight.
    pub beta_target: f64,
    pub warmup_epochs: usize,
    /// Critic weight clamp (WGAN and hybrid heads).
    pub clip_value: f64,
    pub diffusion_steps: usize,
    pub n_critic: usize,
    /// Weight of the latent MMD term.
    pub mmd_lambda: f64,
    /// Weight of the adversarial term in the hybrid composition.
    pub critic_weight: f64,
    pub coupling_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 64,
            lr: 2e-4,
            latent_dim: 8,
            hidden: 64,
            beta_target: 6.0,
            warmup_epochs: 50,
            clip_value: 0.01,
            diffusion_steps: 50,
            n_critic: 5,
            mmd_lambda: 1.0,
            critic_weight: 0.1,
            coupling_layers: 6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, ok) in [
            ("epochs", self.epochs > 0),
            ("batch", self.batch > 0),
            ("lr", self.lr > 0.0),
            ("latent_dim", self.latent_dim > 0),
            ("hidden", self.hidden > 0),
            ("clip_value", self.clip_value > 0.0),
            ("diffusion_steps", self.diffusion_steps >= 2),
            ("n_critic", self.n_critic > 0),
            ("warmup", self.warmup_epochs <= self.epochs),
        ] {
            if !ok {
                return Err(Error::Protocol(format!("invalid train config field {name}")));
            }
        }
        Ok(())
    }
}

enum HandleKind {
    Wgan {
        generator: DenseNet,
        critic: DenseNet,
    },
    Vae {
        enc: DenseNet,
        dec: DenseNet,
        critic: Option<DenseNet>,
    },
    Flow(flow::RealNvp),
    Ddpm(ddpm::DdpmNets),
    Gmm(gmm::GaussianMixture),
    Oracle {
        h: DMatrix<f64>,
        delta_mean: f64,
        delta_sigma: f64,
        /// When set, conditioning masks the Jacobian rows the attacker has
        /// not observed (the knowledge-degradation scenario).
        knowledge_wired: bool,
    },
}

/// A trained (or analytic) pool member.
pub struct GeneratorHandle {
    pub family: Family,
    pub latent_dim: usize,
    pub c_dim: usize,
    pub pi_mode: PiMode,
    pub train_seed: u64,
    pub loss_history: Vec<f64>,
    /// Output dimension in sample space.
    pub m: usize,
    kind: HandleKind,
}

impl GeneratorHandle {
    /// Draws `n` samples in the generator's (normalized) output space.
    pub fn sample(&self, n: usize, cond: &KnowledgeCondition, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.kind {
            HandleKind::Wgan { generator, .. } => {
                let z = DMatrix::from_fn(n, self.latent_dim, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g
                });
                generator.predict(&concat_cond_rows(&z, &cond.vector))
            }
            HandleKind::Vae { dec, .. } => {
                let z = DMatrix::from_fn(n, self.latent_dim, |_, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g
                });
                dec.predict(&concat_cond_rows(&z, &cond.vector))
            }
            HandleKind::Flow(flow) => flow.sample(n, &mut rng),
            HandleKind::Ddpm(nets) => ddpm::sample_ddpm(nets, n, self.m, &cond.vector, &mut rng),
            HandleKind::Gmm(model) => model.sample(n, &mut rng),
            HandleKind::Oracle {
                h,
                delta_mean,
                delta_sigma,
                knowledge_wired,
            } => {
                let m = h.nrows();
                let known = if *knowledge_wired {
                    cond.revealed_rows(m)
                } else {
                    m
                };
                let mut out = DMatrix::zeros(n, m);
                for i in 0..n {
                    let delta = DVector::from_fn(h.ncols(), |_, _| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        delta_mean + g * delta_sigma
                    });
                    let c = h * &delta;
                    for j in 0..known.min(m) {
                        out[(i, j)] = c[j];
                    }
                }
                out
            }
        }
    }

    /// The critic net, when this family trains one (IG target).
    pub fn critic(&self) -> Option<&DenseNet> {
        match &self.kind {
            HandleKind::Wgan { critic, .. } => Some(critic),
            HandleKind::Vae { critic, .. } => critic.as_ref(),
            _ => None,
        }
    }

    /// Exact flow log-density, available for the RealNVP family.
    pub fn flow_logprob(&self, x: &DVector<f64>) -> Option<f64> {
        match &self.kind {
            HandleKind::Flow(flow) => Some(flow.log_prob(x)),
            _ => None,
        }
    }

    /// Serialized checkpoint of the trainable parameters, when any exist.
    pub fn checkpoint_json(&self) -> Option<String> {
        match &self.kind {
            HandleKind::Wgan { generator, critic } => Some(
                serde_json::json!({
                    "generator": serde_json::from_str::<serde_json::Value>(&generator.to_json()).unwrap(),
                    "critic": serde_json::from_str::<serde_json::Value>(&critic.to_json()).unwrap(),
                })
                .to_string(),
            ),
            HandleKind::Vae { enc, dec, .. } => Some(
                serde_json::json!({
                    "encoder": serde_json::from_str::<serde_json::Value>(&enc.to_json()).unwrap(),
                    "decoder": serde_json::from_str::<serde_json::Value>(&dec.to_json()).unwrap(),
                })
                .to_string(),
            ),
            HandleKind::Ddpm(nets) => Some(
                serde_json::json!({
                    "denoiser": serde_json::from_str::<serde_json::Value>(&nets.denoiser.to_json()).unwrap(),
                })
                .to_string(),
            ),
            _ => None,
        }
    }
}

/// Appends the condition vector to every row.
pub(crate) fn concat_cond_rows(x: &DMatrix<f64>, cond: &DVector<f64>) -> DMatrix<f64> {
    let c_dim = cond.len();
    if c_dim == 0 {
        return x.clone();
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols() + c_dim);
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            out[(i, j)] = x[(i, j)];
        }
        for j in 0..c_dim {
            out[(i, x.ncols() + j)] = cond[j];
        }
    }
    out
}

pub(crate) fn gather_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), m.ncols());
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).copy_from(&m.row(i));
    }
    out
}

/// Trains a weight-clipped WGAN on normalized attack data.
pub fn train_wgan(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneratorHandle> {
    let nets = wgan::train_wgan_nets(data, &cond.vector, cfg, seed)?;
    Ok(GeneratorHandle {
        family: Family::Wgan,
        latent_dim: cfg.latent_dim,
        c_dim: cond.c_dim(),
        pi_mode: PiMode::Off,
        train_seed: seed,
        loss_history: nets.loss_history,
        m: data.ncols(),
        kind: HandleKind::Wgan {
            generator: nets.generator,
            critic: nets.critic,
        },
    })
}

/// Trains the plain MMD-VAE.
pub fn train_mmd_vae(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneratorHandle> {
    vae_handle(data, cond, cfg, vae::VaeVariant::Plain, Family::MmdVae, seed)
}

/// Trains the TC-MMD-VAE; `warmup_on` selects the annealed schedule versus
/// the full static weight from epoch zero.
pub fn train_tc_mmd_vae(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    seed: u64,
    warmup_on: bool,
) -> Result<GeneratorHandle> {
    let variant = if warmup_on {
        vae::VaeVariant::TcWarmup
    } else {
        vae::VaeVariant::TcStatic
    };
    vae_handle(data, cond, cfg, variant, Family::TcMmdVae, seed)
}

/// Trains the MMD-VAE with an adversarial critic head (hybrid composition).
pub fn train_mmd_vae_wgan(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneratorHandle> {
    vae_handle(data, cond, cfg, vae::VaeVariant::WithCritic, Family::MmdVaeWgan, seed)
}

fn vae_handle(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    variant: vae::VaeVariant,
    family: Family,
    seed: u64,
) -> Result<GeneratorHandle> {
    let nets = vae::train_vae(data, &cond.vector, cfg, variant, seed)?;
    Ok(GeneratorHandle {
        family,
        latent_dim: cfg.latent_dim,
        c_dim: cond.c_dim(),
        pi_mode: PiMode::Off,
        train_seed: seed,
        loss_history: nets.loss_history,
        m: data.ncols(),
        kind: HandleKind::Vae {
            enc: nets.enc,
            dec: nets.dec,
            critic: nets.critic,
        },
    })
}

/// Trains the RealNVP flow (unconditioned; exact likelihood).
pub fn train_realnvp(data: &DMatrix<f64>, cfg: &TrainConfig, seed: u64) -> Result<GeneratorHandle> {
    cfg.validate()?;
    let (flow, history) = flow::train_flow(
        data,
        cfg.coupling_layers,
        cfg.hidden,
        cfg.epochs,
        cfg.batch,
        cfg.lr,
        seed,
    )?;
    Ok(GeneratorHandle {
        family: Family::RealNvp,
        latent_dim: data.ncols(),
        c_dim: 0,
        pi_mode: PiMode::Off,
        train_seed: seed,
        loss_history: history,
        m: data.ncols(),
        kind: HandleKind::Flow(flow),
    })
}

/// Trains the diffusion model.
pub fn train_ddpm(
    data: &DMatrix<f64>,
    cond: &KnowledgeCondition,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GeneratorHandle> {
    let nets = ddpm::train_ddpm_nets(data, &cond.vector, cfg, seed)?;
    let loss_history = nets.loss_history.clone();
    Ok(GeneratorHandle {
        family: Family::Ddpm,
        latent_dim: data.ncols(),
        c_dim: cond.c_dim(),
        pi_mode: PiMode::Off,
        train_seed: seed,
        loss_history,
        m: data.ncols(),
        kind: HandleKind::Ddpm(nets),
    })
}

/// Fits the Gaussian-mixture baseline.
pub fn train_gmm(data: &DMatrix<f64>, n_components: usize, seed: u64) -> Result<GeneratorHandle> {
    let model = gmm::GaussianMixture::fit(data, n_components, seed)?;
    Ok(GeneratorHandle {
        family: Family::Gmm,
        latent_dim: data.ncols(),
        c_dim: 0,
        pi_mode: PiMode::Off,
        train_seed: seed,
        loss_history: model.log_likelihood_trace.clone(),
        m: data.ncols(),
        kind: HandleKind::Gmm(model),
    })
}

/// The analytic oracle emitting exact column-space injections `H delta`.
///
/// With `knowledge_wired` the oracle only injects on the sensors whose
/// Jacobian rows the condition reveals, which degrades both fidelity and
/// stealth as k shrinks.
pub fn hdelta_oracle(
    h: &DMatrix<f64>,
    delta_mean: f64,
    delta_sigma: f64,
    knowledge_wired: bool,
) -> GeneratorHandle {
    GeneratorHandle {
        family: Family::HdeltaOracle,
        latent_dim: h.ncols(),
        c_dim: h.nrows(),
        pi_mode: PiMode::Off,
        train_seed: 0,
        loss_history: Vec::new(),
        m: h.nrows(),
        kind: HandleKind::Oracle {
            h: h.clone(),
            delta_mean,
            delta_sigma,
            knowledge_wired,
        },
    }
}

/// Converts normalized generator samples to physical-unit attacks under the
/// selected physics-informed mode.
///
/// * `Off`: inverse scaling only.
/// * `BrokenNormalized`: wrapper in normalized space, then inverse scaling —
///   reproduces the out-of-subspace displacement.
/// * `Physical`: inverse scaling, then wrapper in physical units.
/// * `Harmonised`: the physical pipeline followed by the least-squares
///   reprojection onto col(H).
pub fn apply_pi(
    samples_normalized: &DMatrix<f64>,
    z_batch: &DMatrix<f64>,
    cfg: &PhysicsConfig,
    scaler: &Scaler,
    mode: PiMode,
    harmoniser: &Harmoniser,
) -> DMatrix<f64> {
    assert_eq!(samples_normalized.nrows(), z_batch.nrows(), "attack/measurement row mismatch");
    let n = samples_normalized.nrows();
    let rows = crate::exec::map_range(n, |i| {
        let a = samples_normalized.row(i).transpose();
        let z = z_batch.row(i).transpose();
        match mode {
            PiMode::Off => scaler.invert(&a),
            PiMode::BrokenNormalized => scaler.invert(&physics_wrapper(&a, &z, cfg)),
            PiMode::Physical => physics_wrapper(&scaler.invert(&a), &z, cfg),
            PiMode::Harmonised => {
                harmoniser.project(&physics_wrapper(&scaler.invert(&a), &z, cfg))
            }
        }
    });
    let mut out = DMatrix::zeros(n, samples_normalized.ncols());
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from(&r.transpose());
    }
    out
}
