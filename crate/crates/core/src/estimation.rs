//! WLS state estimation, the weighted-residual bad-data test, threshold
//! calibration, and the stealthy-subspace projector.
//!
//! The estimate solves `min ||R^{-1/2}(z - H x)||` through a thin SVD of the
//! weighted Jacobian rather than the normal equations; the same
//! factorization yields the residual and a condition estimate.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{DetPartition, EvalPartition, MeasurementModel};
use crate::special::chi2_quantile;

/// Condition-number ceiling for accepting a weighted Jacobian.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Orthogonal projector onto col(H) and its complement.
#[derive(Debug, Clone)]
pub struct Projector {
    p: DMatrix<f64>,
    complement: DMatrix<f64>,
}

impl Projector {
    /// The projector matrix P_H.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// The complement I - P_H.
    pub fn complement(&self) -> &DMatrix<f64> {
        &self.complement
    }

    /// P_H v.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p * v
    }

    /// (I - P_H) v.
    pub fn complement_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.complement * v
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

/// How a detector threshold was derived.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMethod {
    ChiSquareQuantile { dof: usize, alpha: f64 },
    Percentile { percentile: f64 },
}

/// A frozen residual threshold.
#[derive(Debug, Clone)]
pub struct DetectorThreshold {
    pub tau: f64,
    pub method: ThresholdMethod,
    pub calibration_size: usize,
}

/// Reusable WLS solver for one measurement model.
pub struct WlsEstimator {
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// 1/sqrt(R_ii) weights.
    w: DVector<f64>,
    h: DMatrix<f64>,
    r_diag: DVector<f64>,
}

impl WlsEstimator {
    pub fn new(model: &MeasurementModel) -> Result<Self> {
        let m = model.m();
        let w = DVector::from_fn(m, |i, _| 1.0 / model.r_diag[i].sqrt());
        let mut hw = model.h.clone();
        for i in 0..m {
            for j in 0..hw.ncols() {
                hw[(i, j)] *= w[i];
            }
        }
        let svd = hw.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if cond > CONDITION_LIMIT {
            return Err(Error::Conditioning {
                cond,
                limit: CONDITION_LIMIT,
            });
        }
        Ok(Self {
            svd,
            w,
            h: model.h.clone(),
            r_diag: model.r_diag.clone(),
        })
    }

    /// x_hat = argmin ||R^{-1/2}(z - H x)||.
    pub fn estimate(&self, z: &DVector<f64>) -> DVector<f64> {
        let zw = DVector::from_fn(z.len(), |i, _| z[i] * self.w[i]);
        let u = self.svd.u.as_ref().expect("svd with u");
        let v_t = self.svd.v_t.as_ref().expect("svd with v_t");
        let mut coeffs = u.transpose() * zw;
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c /= self.svd.singular_values[i];
        }
        v_t.transpose() * coeffs
    }

    /// Weighted residual J(z) = (z - H x_hat)' R^{-1} (z - H x_hat).
    pub fn residual(&self, z: &DVector<f64>) -> f64 {
        let x = self.estimate(z);
        let r = z - &self.h * x;
        r.iter()
            .zip(self.r_diag.iter())
            .map(|(ri, rv)| ri * ri / rv)
            .sum()
    }

    /// H x_hat: the noise-free measurement reconstruction.
    pub fn reconstruct(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * self.estimate(z)
    }
}

/// One-shot WLS estimate (see [`WlsEstimator`] for batched use).
pub fn wls_estimate(model: &MeasurementModel, z: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(WlsEstimator::new(model)?.estimate(z))
}

/// One-shot weighted residual J(z).
pub fn bdd_residual(model: &MeasurementModel, z: &DVector<f64>) -> Result<f64> {
    Ok(WlsEstimator::new(model)?.residual(z))
}

/// Upper-alpha chi-square threshold.
pub fn chi2_threshold(dof: usize, alpha: f64) -> DetectorThreshold {
    assert!(dof >= 1, "dof must be >= 1");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    DetectorThreshold {
        tau: chi2_quantile(1.0 - alpha, dof),
        method: ThresholdMethod::ChiSquareQuantile { dof, alpha },
        calibration_size: 0,
    }
}

/// Nearest-rank percentile of a sample (no interpolation).
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> f64 {
    assert!(!values.is_empty());
    assert!((0.0..=100.0).contains(&percentile));
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Calibrates the residual threshold on the clean detector partition.
///
/// The empirical nearest-rank percentile of J over `det` is frozen; the
/// partition type guarantees no attack or evaluation data was seen.
pub fn calibrate_threshold(
    model: &MeasurementModel,
    det: &DetPartition,
    percentile: f64,
) -> Result<DetectorThreshold> {
    let n = det.0.len();
    if n < 20 {
        return Err(Error::Calibration(format!(
            "calibration slice has {n} samples, need at least 20"
        )));
    }
    let est = WlsEstimator::new(model)?;
    let residuals = exec::map_range(n, |i| est.residual(&det.0.z.row(i).transpose()));
    Ok(DetectorThreshold {
        tau: nearest_rank_percentile(&residuals, percentile),
        method: ThresholdMethod::Percentile { percentile },
        calibration_size: n,
    })
}

/// Builds the orthogonal projector onto col(H) from a thin SVD.
pub fn build_projector(model: &MeasurementModel) -> Result<Projector> {
    let svd = model.h.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < model.state_dim() {
        return Err(Error::Conditioning {
            cond: f64::INFINITY,
            limit: CONDITION_LIMIT,
        });
    }
    let ur = u.columns(0, rank);
    let p = &ur * ur.transpose();
    let complement = DMatrix::identity(model.m(), model.m()) - &p;
    Ok(Projector { p, complement })
}

/// Whether BDD is evaluated on the noise-free reconstruction plus attack
/// (isolated) or on the noisy measurement plus attack (superposed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvasionMode {
    Isolated,
    Superposed,
}

impl std::str::FromStr for EvasionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "isolated" => Ok(Self::Isolated),
            "superposed" => Ok(Self::Superposed),
            other => Err(Error::Protocol(format!("unknown evasion mode `{other}`"))),
        }
    }
}

/// Fraction of per-sample injections whose residual stays at or below tau.
///
/// `attacks` rows align 1:1 with the evaluation slice.
pub fn evasion_rate(
    model: &MeasurementModel,
    eval: &EvalPartition,
    attacks: &DMatrix<f64>,
    threshold: &DetectorThreshold,
    mode: EvasionMode,
) -> Result<f64> {
    let n = eval.0.len();
    if attacks.nrows() != n || attacks.ncols() != model.m() {
        return Err(Error::Protocol(format!(
            "attack matrix is {}x{}, expected {}x{}",
            attacks.nrows(),
            attacks.ncols(),
            n,
            model.m()
        )));
    }
    let est = WlsEstimator::new(model)?;
    let tau = threshold.tau;
    let passes = exec::sum_range(n, |i| {
        let z = eval.0.z.row(i).transpose();
        let c = attacks.row(i).transpose();
        let attacked = match mode {
            EvasionMode::Isolated => est.reconstruct(&z) + c,
            EvasionMode::Superposed => z + c,
        };
        if est.residual(&attacked) <= tau {
            1.0
        } else {
            0.0
        }
    });
    Ok(passes / n as f64)
}

/// Residual increase caused by injecting `c` into `z`.
pub fn residual_increment(model: &MeasurementModel, z: &DVector<f64>, c: &DVector<f64>) -> Result<f64> {
    let est = WlsEstimator::new(model)?;
    Ok(est.residual(&(z + c)) - est.residual(z))
}

/// Per-sample residual trace as CSV: `sample_id, J_clean, J_attacked, pass`.
pub fn residual_trace_csv(
    model: &MeasurementModel,
    eval: &EvalPartition,
    attacks: &DMatrix<f64>,
    threshold: &DetectorThreshold,
    mode: EvasionMode,
) -> Result<String> {
    let n = eval.0.len();
    if attacks.nrows() != n {
        return Err(Error::Protocol("attack/eval row mismatch".into()));
    }
    let est = WlsEstimator::new(model)?;
    let mut out = String::from("sample_id,J_clean,J_attacked,pass\n");
    for i in 0..n {
        let z = eval.0.z.row(i).transpose();
        let c = attacks.row(i).transpose();
        let j_clean = est.residual(&z);
        let attacked = match mode {
            EvasionMode::Isolated => est.reconstruct(&z) + c,
            EvasionMode::Superposed => z + c,
        };
        let j_attacked = est.residual(&attacked);
        out.push_str(&format!(
            "{},{},{},{}\n",
            eval.0.t[i],
            j_clean,
            j_attacked,
            j_attacked <= threshold.tau
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// The 3x2 hand case: H = [[1,0],[0,1],[1,1]], R = I.
    fn hand_model() -> MeasurementModel {
        MeasurementModel {
            h: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            r_diag: DVector::from_element(3, 1.0),
            labels: vec!["m1".into(), "m2".into(), "m3".into()],
        }
    }

    #[test]
    fn wls_normal_equations_hand_case() {
        let model = hand_model();
        let x = wls_estimate(&model, &DVector::from_vec(vec![1.0, 1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-12);
    }

    #[test]
    fn wls_annihilates_null_space_input() {
        let model = hand_model();
        let x = wls_estimate(&model, &DVector::from_vec(vec![1.0, 1.0, -1.0])).unwrap();
        assert!(x.norm() < 1e-12);
        let x0 = wls_estimate(&model, &DVector::zeros(3)).unwrap();
        assert!(x0.norm() == 0.0 || x0.norm() < 1e-15);
    }

    #[test]
    fn residual_values_hand_case() {
        let model = hand_model();
        let j_in = bdd_residual(&model, &DVector::from_vec(vec![1.0, 1.0, 2.0])).unwrap();
        assert!(j_in < 1e-24, "col(H) input must give zero residual");
        let j_null = bdd_residual(&model, &DVector::from_vec(vec![1.0, 1.0, -1.0])).unwrap();
        assert_abs_diff_eq!(j_null, 3.0, epsilon = 1e-12);
        let j_zero = bdd_residual(&model, &DVector::zeros(3)).unwrap();
        assert_abs_diff_eq!(j_zero, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn chi2_threshold_reference_values() {
        let t = chi2_threshold(41, 0.05);
        assert_abs_diff_eq!(t.tau, 56.942, epsilon = 1e-3);
        let t1 = chi2_threshold(1, 0.05);
        assert_abs_diff_eq!(t1.tau, 3.841, epsilon = 1e-3);
        // alpha -> 1 sends the threshold to 0.
        let t0 = chi2_threshold(2, 0.999999);
        assert!(t0.tau < 1e-4);
    }

    #[test]
    fn nearest_rank_percentile_definition() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_abs_diff_eq!(nearest_rank_percentile(&values, 95.0), 95.0);
        assert_abs_diff_eq!(nearest_rank_percentile(&values, 100.0), 100.0);
        let constant = vec![4.2; 30];
        assert_abs_diff_eq!(nearest_rank_percentile(&constant, 95.0), 4.2);
    }

    #[test]
    fn percentile_threshold_monotone_in_percentile() {
        let values: Vec<f64> = (0..57).map(|v| (v as f64).sin().abs() * 10.0).collect();
        let mut prev = f64::NEG_INFINITY;
        for p in [10.0, 25.0, 50.0, 75.0, 90.0, 99.0] {
            let tau = nearest_rank_percentile(&values, p);
            assert!(tau >= prev);
            prev = tau;
        }
    }

    #[test]
    fn projector_hand_values() {
        let model = hand_model();
        let proj = build_projector(&model).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[
                2.0 / 3.0,
                -1.0 / 3.0,
                1.0 / 3.0,
                -1.0 / 3.0,
                2.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                2.0 / 3.0,
            ],
        );
        assert_abs_diff_eq!(proj.matrix().clone(), expected, epsilon = 1e-12);
        let null = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        assert!(proj.apply(&null).norm() < 1e-12);
    }

    #[test]
    fn projector_fixes_its_range_and_is_idempotent() {
        let model = hand_model();
        let proj = build_projector(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let delta = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let c = &model.h * &delta;
            assert_abs_diff_eq!(proj.apply(&c), c, epsilon = 1e-12);
        }
        let pp = proj.matrix() * proj.matrix();
        assert_abs_diff_eq!(pp, proj.matrix().clone(), epsilon = 1e-10);
        assert_abs_diff_eq!(proj.matrix().transpose(), proj.matrix().clone(), epsilon = 1e-12);
        assert_abs_diff_eq!(proj.matrix().trace(), 2.0, epsilon = 1e-8);
    }

    fn ieee_pipeline(name: &str, sigma: f64) -> (MeasurementModel, crate::grid::SplitCorpus) {
        let case = crate::grid::builtin_case(name).unwrap();
        let model = crate::grid::build_measurement_model(&case)
            .unwrap()
            .with_noise_sigma(sigma);
        let corpus = crate::grid::synthesize_corpus(
            &model,
            &case,
            &crate::grid::CorpusParams {
                n: 600,
                noise_sigma: sigma,
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let split = crate::grid::chronological_split(&corpus, (0.6, 0.2, 0.2)).unwrap();
        (model, split)
    }

    #[test]
    fn stealth_identity_for_random_state_biases() {
        let (model, split) = ieee_pipeline("ieee14", 0.004);
        let est = WlsEstimator::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = split.eval.0.z.row(0).transpose();
        let j = est.residual(&z);
        for _ in 0..1000 {
            let delta =
                DVector::from_fn(model.state_dim(), |_, _| StandardNormal.sample(&mut rng));
            let c = &model.h * &delta;
            let dj = est.residual(&(&z + &c)) - j;
            assert!(dj.abs() <= 1e-8 * (1.0 + j), "stealth identity violated: {dj}");
        }
    }

    #[test]
    fn residual_via_projector_matches_estimator() {
        let (model, split) = ieee_pipeline("ieee14", 0.004);
        let est = WlsEstimator::new(&model).unwrap();
        let proj = build_projector(&model).unwrap();
        let sigma2 = model.r_diag[0];
        for i in 0..10 {
            let z = split.det.0.z.row(i).transpose();
            let j_est = est.residual(&z);
            let out = proj.complement_apply(&z);
            let j_proj = out.dot(&out) / sigma2;
            assert_abs_diff_eq!(j_est, j_proj, epsilon = 1e-8 * j_proj.max(1.0));
        }
    }

    #[test]
    fn calibration_requires_enough_samples() {
        let (model, split) = ieee_pipeline("ieee14", 0.004);
        let tau = calibrate_threshold(&model, &split.det, 95.0).unwrap();
        assert!(tau.tau > 0.0);
        // Shrink the slice below the minimum.
        let mut small = split.det.clone();
        small.0.z = small.0.z.rows(0, 10).into_owned();
        small.0.c_real = small.0.c_real.rows(0, 10).into_owned();
        small.0.x_true = small.0.x_true.rows(0, 10).into_owned();
        small.0.t.truncate(10);
        assert!(matches!(
            calibrate_threshold(&model, &small, 95.0),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn evasion_examples() {
        let (model, split) = ieee_pipeline("ieee14", 0.004);
        let threshold = calibrate_threshold(&model, &split.det, 95.0).unwrap();
        let n = split.eval.0.len();
        let m = model.m();

        // Exactly stealthy attacks in isolated mode evade always.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut attacks = DMatrix::zeros(n, m);
        for i in 0..n {
            let delta =
                DVector::from_fn(model.state_dim(), |_, _| StandardNormal.sample(&mut rng));
            attacks
                .row_mut(i)
                .copy_from(&(&model.h * &delta).transpose());
        }
        let eps = evasion_rate(&model, &split.eval, &attacks, &threshold, EvasionMode::Isolated)
            .unwrap();
        assert_eq!(eps, 1.0);

        // Zero attacks in superposed mode reproduce the calibrated percentile.
        let zeros = DMatrix::zeros(n, m);
        let eps0 =
            evasion_rate(&model, &split.eval, &zeros, &threshold, EvasionMode::Superposed).unwrap();
        assert!((eps0 - 0.95).abs() <= 0.03, "eps0 = {eps0}");

        // Large pure null-space attacks are always caught.
        let proj = build_projector(&model).unwrap();
        let mut null_attacks = DMatrix::zeros(n, m);
        for i in 0..n {
            let raw = DVector::from_fn(m, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            });
            let mut nv = proj.complement_apply(&raw);
            nv *= 10.0 / nv.norm();
            null_attacks.row_mut(i).copy_from(&nv.transpose());
        }
        let eps_null = evasion_rate(
            &model,
            &split.eval,
            &null_attacks,
            &threshold,
            EvasionMode::Superposed,
        )
        .unwrap();
        assert_eq!(eps_null, 0.0);

        // Length mismatch is a protocol error.
        let short = DMatrix::zeros(n - 1, m);
        assert!(matches!(
            evasion_rate(&model, &split.eval, &short, &threshold, EvasionMode::Isolated),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn residual_increment_cases() {
        let model = hand_model();
        let z = DVector::from_vec(vec![0.3, -0.2, 0.4]);
        // Stealthy increment vanishes.
        let c_in = &model.h * DVector::from_vec(vec![0.7, -0.1]);
        assert!(residual_increment(&model, &z, &c_in).unwrap().abs() <= 1e-8);
        // Null-space increment expands the quadratic exactly (R = I).
        let c_null = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let est = WlsEstimator::new(&model).unwrap();
        let resid = &z - &model.h * est.estimate(&z);
        let expected = c_null.norm_squared() + 2.0 * c_null.dot(&resid);
        assert_abs_diff_eq!(
            residual_increment(&model, &z, &c_null).unwrap(),
            expected,
            epsilon = 1e-10
        );
        // Zero injection changes nothing.
        assert_abs_diff_eq!(
            residual_increment(&model, &z, &DVector::zeros(3)).unwrap(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn ieee30_projector_dimensions() {
        let case = crate::grid::builtin_case("ieee30").unwrap();
        let model = crate::grid::build_measurement_model(&case).unwrap();
        let proj = build_projector(&model).unwrap();
        assert_eq!(proj.dim(), 71);
        assert_abs_diff_eq!(proj.matrix().trace(), 29.0, epsilon = 1e-8);
    }
}
