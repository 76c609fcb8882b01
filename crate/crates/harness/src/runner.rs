//! Experiment orchestration: shared pipeline preparation, per-cell training
//! and evaluation, and the A/B/C blocks plus the failure-demonstration and
//! ablation runs.
//!
//! Independent (cell, seed) jobs run through the core's ordered parallel
//! helpers; every aggregation is a deterministic merge over sorted keys, so
//! a fixed config yields byte-identical reports.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use fdia_core::autodiff::DenseNet;
use fdia_core::detectors::{
    ae_evasion, iforest_evasion, train_ae_detector, train_iforest, AeConfig, AeDetector,
    IsolationForestModel,
};
use fdia_core::error::{Error, Result};
use fdia_core::estimation::{
    build_projector, calibrate_threshold, evasion_rate, DetectorThreshold, EvasionMode, Projector,
    WlsEstimator,
};
use fdia_core::exec;
use fdia_core::generators::{
    apply_pi, build_condition_vector, hdelta_oracle, train_ddpm, train_gmm, train_mmd_vae,
    train_mmd_vae_wgan, train_realnvp, train_tc_mmd_vae, train_wgan, Family, GeneratorHandle,
    KnowledgeCondition,
};
use fdia_core::grid::{
    build_measurement_model, chronological_split, parse_case, synthesize_corpus, GridCase,
    MeasurementModel, SplitCorpus,
};
use fdia_core::metrics::{
    attack_impact, discriminator_probe, mmd_rbf_median, pareto_front, sliced_w1, train_probe_net,
    Direction, EvalRecord, ParetoResult,
};
use fdia_core::physics::{blended_project, mean_leakage, Harmoniser, PhysicsConfig, PiMode, Scaler};
use fdia_core::stats::{kruskal_wallis, TestReport};
use fdia_core::xai::{cross_level_profile, AttributionProfile};

use crate::config::{CellConfig, ExperimentConfig};

/// Ordered record of pipeline phases; the protocol tests assert that
/// thresholds freeze before any evaluation data is read.
#[derive(Debug, Default)]
pub struct PhaseLog {
    events: Mutex<Vec<String>>,
}

impl PhaseLog {
    pub fn record(&self, event: &str) {
        let mut ev = self.events.lock().expect("phase log poisoned");
        ev.push(event.to_string());
    }

    pub fn first_index_of(&self, event: &str) -> Option<usize> {
        let ev = self.events.lock().expect("phase log poisoned");
        ev.iter().position(|e| e == event)
    }

    pub fn events(&self) -> Vec<String> {
        self.events.lock().expect("phase log poisoned").clone()
    }
}

/// Everything shared across cells of one experiment: model, partitions,
/// scaler, frozen thresholds, detectors, and projection operators.
pub struct Pipeline {
    pub case: GridCase,
    pub model: MeasurementModel,
    pub split: SplitCorpus,
    /// Pipeline scaler fitted on the observed attack recordings of D_gen.
    pub scaler: Scaler,
    pub estimator: WlsEstimator,
    pub projector: Projector,
    pub harmoniser: Harmoniser,
    pub physics: PhysicsConfig,
    pub bdd: DetectorThreshold,
    pub iforest: IsolationForestModel,
    pub ae: AeDetector,
    pub evasion_mode: EvasionMode,
    pub phases: PhaseLog,
}

fn load_case(source: &str) -> Result<GridCase> {
    match source {
        "ieee14" | "ieee30" => fdia_core::grid::builtin_case(source),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("cannot read case file `{path}`: {e}")))?;
            parse_case(&text)
        }
    }
}

/// Builds the full pipeline: corpus, split, scaler, calibrated thresholds.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Pipeline> {
    let phases = PhaseLog::default();
    let case = load_case(&cfg.case)?;
    let model = build_measurement_model(&case)?.with_noise_sigma(cfg.corpus.noise_sigma);
    let corpus = synthesize_corpus(&model, &case, &cfg.corpus.to_params())?;
    phases.record("corpus_synthesized");
    let split = chronological_split(&corpus, cfg.split)?;
    phases.record("split");

    let scaler = Scaler::fit(&split.gen.0.observed_attacks())?;
    let physics = PhysicsConfig::from_measurements(&split.gen.0.z, cfg.physics_width_sigmas, 0.0)?;
    phases.record("scaler_fitted");

    let estimator = WlsEstimator::new(&model)?;
    let projector = build_projector(&model)?;
    let harmoniser = Harmoniser::new(&model)?;

    let bdd = calibrate_threshold(&model, &split.det, cfg.calibration_percentile)?;
    let iforest = train_iforest(&split.det, 100, 256, cfg.corpus.seed ^ 0x1F)?;
    let ae = train_ae_detector(&split.det, &AeConfig::default(), cfg.corpus.seed ^ 0x2F)?;
    phases.record("thresholds_frozen");

    let evasion_mode: EvasionMode = cfg.evasion_mode.parse()?;
    Ok(Pipeline {
        case,
        model,
        split,
        scaler,
        estimator,
        projector,
        harmoniser,
        physics,
        bdd,
        iforest,
        ae,
        evasion_mode,
        phases,
    })
}

impl Pipeline {
    /// The scaler a cell's samples are expressed in: the oracle emits
    /// physical-unit column-space vectors, trainable families emit in the
    /// pipeline's normalized space.
    pub fn cell_scaler(&self, family: Family) -> Scaler {
        if family == Family::HdeltaOracle {
            Scaler::identity(self.model.m())
        } else {
            self.scaler.clone()
        }
    }

    pub fn eval_len(&self) -> usize {
        self.split.eval.0.len()
    }
}

/// Deterministic per-job seed derivation (splitmix-style mixing).
pub fn derive_seed(train_seed: u64, pass: u64, salt: u64) -> u64 {
    let mut x = train_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(pass.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(salt.wrapping_mul(0x94D0_49BB_1331_11EB));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x
}

/// Trains one roster cell at the given knowledge condition.
pub fn train_cell(
    pipeline: &Pipeline,
    cell: &CellConfig,
    cond: &KnowledgeCondition,
    cfg: &ExperimentConfig,
    seed: u64,
    oracle_knowledge_wired: bool,
) -> Result<GeneratorHandle> {
    let family: Family = cell.family.parse()?;
    let data = pipeline
        .scaler
        .apply_rows(&pipeline.split.gen.0.observed_attacks());
    let train = &cfg.train;
    let mut handle = match family {
        Family::Wgan => train_wgan(&data, cond, train, seed)?,
        Family::MmdVae => train_mmd_vae(&data, cond, train, seed)?,
        Family::TcMmdVae => train_tc_mmd_vae(&data, cond, train, seed, cell.warmup)?,
        Family::MmdVaeWgan => train_mmd_vae_wgan(&data, cond, train, seed)?,
        Family::RealNvp => train_realnvp(&data, train, seed)?,
        Family::Ddpm => train_ddpm(&data, cond, train, seed)?,
        Family::Gmm => train_gmm(&data, cfg.gmm_components, seed)?,
        Family::HdeltaOracle => hdelta_oracle(
            &pipeline.model.h,
            cfg.corpus.attack_mean_scale,
            cfg.corpus.attack_sigma,
            oracle_knowledge_wired,
        ),
    };
    handle.pi_mode = cell.pi_mode.parse()?;
    Ok(handle)
}

/// One fully evaluated run of a cell.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub pass: usize,
    #[serde(flatten)]
    pub record: EvalRecord,
}

/// A cell whose training or evaluation failed; failures are data.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub model: String,
    pub seed: u64,
    pub error: String,
}

/// Samples a trained handle and scores every metric on the eval partition.
pub fn evaluate_cell(
    pipeline: &Pipeline,
    handle: &GeneratorHandle,
    label: &str,
    cond: &KnowledgeCondition,
    cfg: &ExperimentConfig,
    train_seed: u64,
    pass: usize,
) -> Result<RunRecord> {
    pipeline.phases.record("eval_opened");
    let eval = &pipeline.split.eval.0;
    let n = eval.len();
    let sample_seed = derive_seed(train_seed, pass as u64, 0xA7);
    let samples = handle.sample(n, cond, sample_seed);
    let cell_scaler = pipeline.cell_scaler(handle.family);
    let attacks = apply_pi(
        &samples,
        &eval.z,
        &pipeline.physics,
        &cell_scaler,
        handle.pi_mode,
        &pipeline.harmoniser,
    );

    let eps_bdd = evasion_rate(
        &pipeline.model,
        &pipeline.split.eval,
        &attacks,
        &pipeline.bdd,
        pipeline.evasion_mode,
    )?;
    let eps_if = iforest_evasion(&pipeline.iforest, &attacks, &eval.z);
    let eps_ae = ae_evasion(&pipeline.ae, &attacks, &eval.z);
    let phi = fdia_core::physics::physics_consistency(&attacks, &eval.z, &pipeline.physics);

    // Distributional metrics in the pipeline's normalized space against the
    // ground-truth stealthy injections.
    let real_norm = pipeline.scaler.apply_rows(&eval.c_real);
    let gen_norm = pipeline.scaler.apply_rows(&attacks);
    let mmd = mmd_rbf_median(&gen_norm, &real_norm);
    let w1 = sliced_w1(
        &gen_norm,
        &real_norm,
        cfg.sliced_w1_directions,
        derive_seed(train_seed, pass as u64, 0xB3),
    );
    let psi = discriminator_probe(
        &real_norm,
        &gen_norm,
        derive_seed(train_seed, pass as u64, 0xC1),
    );
    let impact = attack_impact(&attacks, &eval.c_real);

    Ok(RunRecord {
        pass,
        record: EvalRecord {
            model: label.to_string(),
            seed: train_seed,
            k: cond.k,
            mmd,
            w1,
            eps_bdd,
            eps_ae,
            eps_if,
            phi,
            psi,
            impact,
        },
    })
}

/// Mean and standard deviation over the runs of one cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub model: String,
    pub k: f64,
    pub n_runs: usize,
    pub mmd_mean: f64,
    pub mmd_sd: f64,
    pub w1_mean: f64,
    pub w1_sd: f64,
    pub eps_bdd_mean: f64,
    pub eps_bdd_sd: f64,
    pub eps_ae_mean: f64,
    pub eps_ae_sd: f64,
    pub eps_if_mean: f64,
    pub eps_if_sd: f64,
    pub phi_mean: f64,
    pub phi_sd: f64,
    pub psi_mean: f64,
    pub psi_sd: f64,
    pub impact_mean: f64,
    pub impact_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(label: &str, runs: &[&EvalRecord]) -> CellSummary {
    let take = |f: fn(&EvalRecord) -> f64| -> Vec<f64> { runs.iter().map(|r| f(r)).collect() };
    let (mmd_mean, mmd_sd) = mean_sd(&take(|r| r.mmd));
    let (w1_mean, w1_sd) = mean_sd(&take(|r| r.w1));
    let (eps_bdd_mean, eps_bdd_sd) = mean_sd(&take(|r| r.eps_bdd));
    let (eps_ae_mean, eps_ae_sd) = mean_sd(&take(|r| r.eps_ae));
    let (eps_if_mean, eps_if_sd) = mean_sd(&take(|r| r.eps_if));
    let (phi_mean, phi_sd) = mean_sd(&take(|r| r.phi));
    let (psi_mean, psi_sd) = mean_sd(&take(|r| r.psi));
    let (impact_mean, impact_sd) = mean_sd(&take(|r| r.impact));
    CellSummary {
        model: label.to_string(),
        k: runs.first().map(|r| r.k).unwrap_or(0.0),
        n_runs: runs.len(),
        mmd_mean,
        mmd_sd,
        w1_mean,
        w1_sd,
        eps_bdd_mean,
        eps_bdd_sd,
        eps_ae_mean,
        eps_ae_sd,
        eps_if_mean,
        eps_if_sd,
        phi_mean,
        phi_sd,
        psi_mean,
        psi_sd,
        impact_mean,
        impact_sd,
    }
}

pub struct BlockAResult {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    pub summaries: Vec<CellSummary>,
    /// Pareto front over per-cell mean objectives; `None` under the
    /// no-selection ablation.
    pub front: Option<ParetoResult>,
}

/// Block A: trains every roster cell per seed, evaluates every sampling
/// pass, and applies Pareto selection over the cell means.
pub fn run_block_a(cfg: &ExperimentConfig, pipeline: &Pipeline) -> Result<BlockAResult> {
    // Block A benchmarks at the zero-knowledge default, so the
    // no-conditioning ablation leaves it unchanged by construction.
    let cond = build_condition_vector(&pipeline.model.h, 0.0, pipeline.model.m())?;

    let mut roster = cfg.roster.clone();
    if cfg.ablation.no_physics {
        for cell in &mut roster {
            cell.pi_mode = "off".into();
        }
        roster.dedup_by_key(|c| c.label());
    }
    roster.sort_by_key(|c| c.label());
    roster.dedup_by_key(|c| c.label());

    let jobs: Vec<(CellConfig, u64)> = roster
        .iter()
        .flat_map(|cell| cfg.seeds.iter().map(move |&s| (cell.clone(), s)))
        .collect();

    let outcomes = exec::map_slice(&jobs, |(cell, seed)| {
        let label = cell.label();
        match train_cell(pipeline, cell, &cond, cfg, *seed, false) {
            Ok(handle) => {
                let mut runs = Vec::with_capacity(cfg.eval_passes);
                for pass in 0..cfg.eval_passes {
                    match evaluate_cell(pipeline, &handle, &label, &cond, cfg, *seed, pass) {
                        Ok(r) => runs.push(r),
                        Err(e) => {
                            return Err(CellFailure {
                                model: label,
                                seed: *seed,
                                error: e.to_string(),
                            })
                        }
                    }
                }
                Ok(runs)
            }
            Err(e) => Err(CellFailure {
                model: label,
                seed: *seed,
                error: e.to_string(),
            }),
        }
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(runs) => records.extend(runs),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| {
        (&a.record.model, a.record.seed, a.pass).cmp(&(&b.record.model, b.record.seed, b.pass))
    });

    let mut labels: Vec<String> = records.iter().map(|r| r.record.model.clone()).collect();
    labels.sort();
    labels.dedup();
    let summaries: Vec<CellSummary> = labels
        .iter()
        .map(|label| {
            let runs: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| &r.record.model == label)
                .map(|r| &r.record)
                .collect();
            summarize(label, &runs)
        })
        .collect();

    let front = if cfg.ablation.no_selection {
        None
    } else {
        let points: Vec<(String, Vec<f64>)> = summaries
            .iter()
            .map(|s| {
                (
                    s.model.clone(),
                    vec![s.mmd_mean, s.eps_bdd_mean, s.phi_mean, s.impact_mean],
                )
            })
            .collect();
        Some(pareto_front(
            &points,
            &[Direction::Min, Direction::Max, Direction::Max, Direction::Max],
        ))
    };

    Ok(BlockAResult {
        records,
        failures,
        summaries,
        front,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KSweepRow {
    pub model: String,
    pub k: f64,
    pub seed: u64,
    pub w1: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KSweepTest {
    pub model: String,
    pub statistic: f64,
    pub p_value: f64,
    pub eta_squared: f64,
    pub n: usize,
}

pub struct BlockBResult {
    pub rows: Vec<KSweepRow>,
    pub tests: Vec<KSweepTest>,
    pub failures: Vec<CellFailure>,
    /// Set when the k grid is too small for a between-level test.
    pub notice: Option<String>,
}

/// Block B: re-trains the representative cells at every attacker-knowledge
/// level and tests the k effect per model with Kruskal-Wallis.
///
/// The oracle cell runs with its knowledge wiring enabled, degrading with
/// shrinking k: this is the constructed distribution-shifting scenario.
pub fn run_block_b(cfg: &ExperimentConfig, pipeline: &Pipeline) -> Result<BlockBResult> {
    let mut triplet = cfg.triplet.clone();
    triplet.sort_by_key(|c| c.label());
    let mut k_grid = cfg.k_grid.clone();
    k_grid.sort_by(|a, b| a.total_cmp(b));
    k_grid.dedup();

    let jobs: Vec<(CellConfig, f64, u64)> = triplet
        .iter()
        .flat_map(|cell| {
            k_grid
                .iter()
                .flat_map(move |&k| cfg.seeds.iter().map(move |&s| (cell.clone(), k, s)))
        })
        .collect();

    let outcomes = exec::map_slice(&jobs, |(cell, k, seed)| {
        let label = cell.label();
        let fail = |e: String| CellFailure {
            model: label.clone(),
            seed: *seed,
            error: e,
        };
        let cond = build_condition_vector(&pipeline.model.h, *k, pipeline.model.m())
            .map_err(|e| fail(e.to_string()))?;
        let handle =
            train_cell(pipeline, cell, &cond, cfg, *seed, true).map_err(|e| fail(e.to_string()))?;
        let run = evaluate_cell(pipeline, &handle, &label, &cond, cfg, *seed, 0)
            .map_err(|e| fail(e.to_string()))?;
        Ok(KSweepRow {
            model: label,
            k: *k,
            seed: *seed,
            w1: run.record.w1,
            phi: run.record.phi,
        })
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| {
        (&a.model, a.k, a.seed)
            .partial_cmp(&(&b.model, b.k, b.seed))
            .expect("finite keys")
    });

    if k_grid.len() < 2 {
        return Ok(BlockBResult {
            rows,
            tests: Vec::new(),
            failures,
            notice: Some("k grid has a single level; knowledge-effect test skipped".into()),
        });
    }

    let mut tests = Vec::new();
    let mut labels: Vec<String> = rows.iter().map(|r| r.model.clone()).collect();
    labels.sort();
    labels.dedup();
    for label in labels {
        let groups: Vec<Vec<f64>> = k_grid
            .iter()
            .map(|&k| {
                rows.iter()
                    .filter(|r| r.model == label && r.k == k)
                    .map(|r| r.w1)
                    .collect()
            })
            .filter(|g: &Vec<f64>| !g.is_empty())
            .collect();
        if groups.len() < 2 {
            continue;
        }
        let report: TestReport = kruskal_wallis(&groups)?;
        tests.push(KSweepTest {
            model: label,
            statistic: report.statistic,
            p_value: report.p_value,
            eta_squared: report.effect_size.unwrap_or(f64::NAN),
            n: report.n,
        });
    }

    Ok(BlockBResult {
        rows,
        tests,
        failures,
        notice: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct XaiProfileRow {
    pub model: String,
    pub seed: u64,
    pub kappa: f64,
    pub top5_data: Vec<usize>,
    pub top5_model: Vec<usize>,
    #[serde(skip_serializing)]
    pub profile: AttributionProfile,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlendRow {
    pub model: String,
    pub seed: u64,
    pub t: f64,
    pub kappa: f64,
    pub mmd: f64,
}

pub struct BlockCResult {
    pub profiles: Vec<XaiProfileRow>,
    pub blend: Vec<BlendRow>,
    pub failures: Vec<CellFailure>,
}

/// Folds a fixed condition vector into the first layer of a conditioned
/// critic, yielding an equivalent net over the measurement inputs alone.
fn fold_condition(net: &DenseNet, cond: &DVector<f64>, m: usize) -> DenseNet {
    let mut folded = net.clone();
    let first = &mut folded.layers[0];
    let w_cond = first.w.columns(m, cond.len()).into_owned();
    first.b += &w_cond * cond;
    first.w = first.w.columns(0, m).into_owned();
    folded
}

fn critic_for_ig(
    handle: &GeneratorHandle,
    cond: &KnowledgeCondition,
    m: usize,
) -> Option<DenseNet> {
    let critic = handle.critic()?;
    if critic.input_dim() == m {
        Some(critic.clone())
    } else if critic.input_dim() == m + cond.c_dim() {
        Some(fold_condition(critic, &cond.vector, m))
    } else {
        None
    }
}

/// Block C: cross-level attribution for the Pareto-optimal cells with the
/// harmonised mode enforced, plus the blended-projection diagnostic sweep.
///
/// Both attribution levels operate in the pipeline's normalized attack
/// space: `generated` is the model's final (blended/harmonised) output,
/// `clean` is the ground-truth injection corpus, and the IG baseline is the
/// clean-corpus mean.
pub fn run_block_c(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    block_a: &BlockAResult,
) -> Result<BlockCResult> {
    let front_models: Vec<String> = match &block_a.front {
        Some(front) => front.non_dominated.clone(),
        None => block_a.summaries.iter().map(|s| s.model.clone()).collect(),
    };
    let mut cells: Vec<CellConfig> = cfg
        .roster
        .iter()
        .filter(|c| front_models.contains(&c.label()))
        .cloned()
        .collect();
    // Attribution is defined on the harmonised pipeline.
    for cell in &mut cells {
        cell.pi_mode = "harmonised".into();
    }
    cells.sort_by_key(|c| c.label());
    cells.dedup_by_key(|c| c.label());

    let seed = *cfg.seeds.first().expect("validated non-empty");
    let cond = build_condition_vector(&pipeline.model.h, 0.0, pipeline.model.m())?;
    let eval = &pipeline.split.eval.0;
    let real_norm = pipeline.scaler.apply_rows(&eval.c_real);
    let baseline = DVector::from_fn(real_norm.ncols(), |j, _| real_norm.column(j).mean());

    let mut profiles = Vec::new();
    let mut blend = Vec::new();
    let mut failures = Vec::new();

    for cell in &cells {
        let label = cell.label();
        let handle = match train_cell(pipeline, cell, &cond, cfg, seed, false) {
            Ok(h) => h,
            Err(e) => {
                failures.push(CellFailure {
                    model: label,
                    seed,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let samples = handle.sample(eval.len(), &cond, derive_seed(seed, 0, 0xA7));
        let cell_scaler = pipeline.cell_scaler(handle.family);

        // Physical pipeline output before the final reprojection: the sweep
        // interpolates between it (t = 0) and the harmonised attack (t = 1).
        let physical = apply_pi(
            &samples,
            &eval.z,
            &pipeline.physics,
            &cell_scaler,
            PiMode::Physical,
            &pipeline.harmoniser,
        );

        let harmonised_norm = pipeline
            .scaler
            .apply_rows(&blend_rows(&pipeline.projector, &physical, 1.0));
        let net = match critic_for_ig(&handle, &cond, pipeline.model.m()) {
            Some(critic) => critic,
            None => train_probe_net(&real_norm, &harmonised_norm, derive_seed(seed, 0, 0xD7)).0,
        };

        for &t in &cfg.blend_grid {
            let blended = blend_rows(&pipeline.projector, &physical, t);
            let blended_norm = pipeline.scaler.apply_rows(&blended);
            let profile =
                cross_level_profile(&blended_norm, &real_norm, &net, &baseline, cfg.ig_steps)?;
            let mmd = mmd_rbf_median(&blended_norm, &real_norm);
            blend.push(BlendRow {
                model: label.clone(),
                seed,
                t,
                kappa: profile.kappa,
                mmd,
            });
            if (t - 1.0).abs() < 1e-12 {
                profiles.push(XaiProfileRow {
                    model: label.clone(),
                    seed,
                    kappa: profile.kappa,
                    top5_data: profile.top5_data.clone(),
                    top5_model: profile.top5_model.clone(),
                    profile,
                });
            }
        }
    }
    profiles.sort_by(|a, b| (&a.model, a.seed).cmp(&(&b.model, b.seed)));
    blend.sort_by(|a, b| {
        (&a.model, a.seed, a.t)
            .partial_cmp(&(&b.model, b.seed, b.t))
            .expect("finite keys")
    });

    Ok(BlockCResult {
        profiles,
        blend,
        failures,
    })
}

fn blend_rows(projector: &Projector, physical: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(physical.nrows(), physical.ncols());
    for i in 0..physical.nrows() {
        let blended = blended_project(projector, &physical.row(i).transpose(), t);
        out.row_mut(i).copy_from(&blended.transpose());
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaRow {
    pub model: String,
    pub seed: u64,
    pub eps_bdd_broken: f64,
    pub eps_bdd_harmonised: f64,
    pub inflation_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeakageReport {
    pub mean_leakage: f64,
    pub expected_residual: f64,
    pub tau: f64,
    pub inflation_ratio: f64,
}

pub struct LemmaResult {
    pub rows: Vec<LemmaRow>,
    pub leakage: LeakageReport,
    pub failures: Vec<CellFailure>,
}

/// The failure/recovery demonstration: every roster family evaluated under
/// the broken normalized-space wrapper versus the harmonised pipeline.
///
/// All cells, the oracle included, run through the corpus scaler here: the
/// oracle's column-space samples stand in for a perfectly trained
/// generator's normalized output, which is exactly the setting where
/// inverse scaling ejects the projection out of col(H).
pub fn run_lemma_demo(cfg: &ExperimentConfig, pipeline: &Pipeline) -> Result<LemmaResult> {
    let mut families: Vec<CellConfig> = cfg.roster.clone();
    for cell in &mut families {
        cell.pi_mode = "off".into();
    }
    families.sort_by_key(|c| c.label());
    families.dedup_by_key(|c| c.label());

    let cond = build_condition_vector(&pipeline.model.h, 0.0, pipeline.model.m())?;
    let eval = &pipeline.split.eval.0;
    let tau = pipeline.bdd.tau;

    let jobs: Vec<(CellConfig, u64)> = families
        .iter()
        .flat_map(|cell| cfg.seeds.iter().map(move |&s| (cell.clone(), s)))
        .collect();

    let outcomes = exec::map_slice(&jobs, |(cell, seed)| {
        let fail = |e: String| CellFailure {
            model: cell.label(),
            seed: *seed,
            error: e,
        };
        let handle =
            train_cell(pipeline, cell, &cond, cfg, *seed, false).map_err(|e| fail(e.to_string()))?;
        let samples = handle.sample(eval.len(), &cond, derive_seed(*seed, 0, 0xA7));
        let scaler = &pipeline.scaler;
        let broken = apply_pi(
            &samples,
            &eval.z,
            &pipeline.physics,
            scaler,
            PiMode::BrokenNormalized,
            &pipeline.harmoniser,
        );
        let harmonised = apply_pi(
            &samples,
            &eval.z,
            &pipeline.physics,
            scaler,
            PiMode::Harmonised,
            &pipeline.harmoniser,
        );
        let eps_broken = evasion_rate(
            &pipeline.model,
            &pipeline.split.eval,
            &broken,
            &pipeline.bdd,
            pipeline.evasion_mode,
        )
        .map_err(|e| fail(e.to_string()))?;
        let eps_harm = evasion_rate(
            &pipeline.model,
            &pipeline.split.eval,
            &harmonised,
            &pipeline.bdd,
            pipeline.evasion_mode,
        )
        .map_err(|e| fail(e.to_string()))?;
        // Residual inflation of the broken attacks (isolated semantics).
        let mean_j: f64 = (0..eval.len())
            .map(|i| {
                let z = eval.z.row(i).transpose();
                let base = pipeline.estimator.reconstruct(&z);
                pipeline
                    .estimator
                    .residual(&(base + broken.row(i).transpose()))
            })
            .sum::<f64>()
            / eval.len() as f64;
        Ok(LemmaRow {
            model: cell.family.clone(),
            seed: *seed,
            eps_bdd_broken: eps_broken,
            eps_bdd_harmonised: eps_harm,
            inflation_ratio: mean_j / tau,
        })
    });

    let mut rows: Vec<LemmaRow> = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| (&a.model, a.seed).cmp(&(&b.model, b.seed)));

    let leak = mean_leakage(&pipeline.projector, &pipeline.scaler);
    let expected_residual = if rows.is_empty() {
        f64::NAN
    } else {
        rows.iter().map(|r| r.inflation_ratio * tau).sum::<f64>() / rows.len() as f64
    };
    Ok(LemmaResult {
        rows,
        leakage: LeakageReport {
            mean_leakage: leak,
            expected_residual,
            tau,
            inflation_ratio: expected_residual / tau,
        },
        failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub model: String,
    pub seed: u64,
    pub mmd_full: f64,
    pub mmd_ablated: f64,
    /// Relative change (ablated - full) / full.
    pub delta_mmd: f64,
}

pub struct AblationResult {
    pub condition: String,
    pub rows: Vec<AblationRow>,
    pub failures: Vec<CellFailure>,
    /// Present under no-selection, where records stay untouched.
    pub front_dropped: bool,
}

/// Retrains the roster under one ablation condition and reports the MMD
/// change per (cell, seed).
pub fn run_ablation(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    condition: &str,
) -> Result<AblationResult> {
    let mut ablated_cfg = cfg.clone();
    match condition {
        "no_physics" => ablated_cfg.ablation.no_physics = true,
        "no_selection" => ablated_cfg.ablation.no_selection = true,
        "no_conditioning" => ablated_cfg.ablation.no_conditioning = true,
        other => {
            return Err(Error::Protocol(format!(
                "unknown ablation condition `{other}`"
            )))
        }
    }
    let full = run_block_a(cfg, pipeline)?;
    let ablated = run_block_a(&ablated_cfg, pipeline)?;

    // no-physics renames cells to mode off; align by family prefix.
    let strip = |label: &str| -> String { label.split(':').next().unwrap_or(label).to_string() };
    let mut rows = Vec::new();
    for f_sum in &full.summaries {
        let family = strip(&f_sum.model);
        let Some(a_sum) = ablated.summaries.iter().find(|s| strip(&s.model) == family) else {
            continue;
        };
        for &seed in &cfg.seeds {
            let pick = |records: &[RunRecord], label: &str| -> Vec<f64> {
                records
                    .iter()
                    .filter(|r| r.record.model == label && r.record.seed == seed)
                    .map(|r| r.record.mmd)
                    .collect()
            };
            let (full_mean, _) = mean_sd(&pick(&full.records, &f_sum.model));
            let (abl_mean, _) = mean_sd(&pick(&ablated.records, &a_sum.model));
            if full_mean.is_nan() || abl_mean.is_nan() {
                continue;
            }
            rows.push(AblationRow {
                model: f_sum.model.clone(),
                seed,
                mmd_full: full_mean,
                mmd_ablated: abl_mean,
                delta_mmd: (abl_mean - full_mean) / full_mean.max(1e-12),
            });
        }
    }
    rows.sort_by(|a, b| (&a.model, a.seed).cmp(&(&b.model, b.seed)));
    let mut failures = full.failures;
    failures.extend(ablated.failures);
    Ok(AblationResult {
        condition: condition.to_string(),
        rows,
        failures,
        front_dropped: condition == "no_selection",
    })
}
