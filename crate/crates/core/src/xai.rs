//! Cross-level sensor attribution.
//!
//! Data-level importance is the standardized per-feature mean shift between
//! generated and clean samples; model-level importance is the mean absolute
//! Integrated Gradients of a scalar-output network. Agreement between the
//! two top-5 sensor sets is scored with Cohen's kappa.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::{backward, DenseNet};
use crate::error::{Error, Result};
use crate::exec;
use crate::stats::cohens_kappa_topk;

/// Standardized per-feature mean shift
/// `(mean(x_gen) - mean(x_clean)) / std(x_clean)`.
pub fn data_attribution(x_gen: &DMatrix<f64>, x_clean: &DMatrix<f64>) -> DVector<f64> {
    assert_eq!(x_gen.ncols(), x_clean.ncols());
    let m = x_clean.ncols();
    DVector::from_fn(m, |j, _| {
        let mean_g = x_gen.column(j).mean();
        let mean_c = x_clean.column(j).mean();
        let var = x_clean
            .column(j)
            .iter()
            .map(|v| (v - mean_c).powi(2))
            .sum::<f64>()
            / x_clean.nrows() as f64;
        (mean_g - mean_c) / var.sqrt().max(1e-8)
    })
}

/// Integrated Gradients of a scalar-output net along the straight path from
/// `baseline` to `a`, with a Riemann midpoint rule.
///
/// `phi_j = (a_j - a'_j) * (1/S) sum_s dF/da_j` at the midpoint abscissae.
pub fn integrated_gradients(
    net: &DenseNet,
    a: &DVector<f64>,
    baseline: &DVector<f64>,
    steps: usize,
) -> Result<DVector<f64>> {
    if net.output_dim() != 1 {
        return Err(Error::Contract(format!(
            "integrated gradients needs a scalar-output net, got {} outputs",
            net.output_dim()
        )));
    }
    if a.len() != net.input_dim() || baseline.len() != net.input_dim() {
        return Err(Error::Contract("input dimension mismatch".into()));
    }
    assert!(steps > 0);
    let dim = a.len();
    // Evaluate all midpoints as one batch.
    let mut xs = DMatrix::zeros(steps, dim);
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        for j in 0..dim {
            xs[(s, j)] = baseline[j] + alpha * (a[j] - baseline[j]);
        }
    }
    let (out, tape) = net.forward(&xs);
    let upstream = DMatrix::from_element(out.nrows(), 1, 1.0);
    let grads = backward(net, &tape, &upstream);
    Ok(DVector::from_fn(dim, |j, _| {
        let avg = grads.input.column(j).sum() / steps as f64;
        (a[j] - baseline[j]) * avg
    }))
}

/// Indices of the k largest values, ties broken by lower index.
pub fn top_k_indices(values: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Per-sensor importance at both levels plus their top-5 agreement.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AttributionProfile {
    pub data_level: Vec<f64>,
    pub model_level: Vec<f64>,
    pub top5_data: Vec<usize>,
    pub top5_model: Vec<usize>,
    pub kappa: f64,
}

/// Composes data-level attribution, batch-averaged |IG| on the probe or
/// critic net, top-5 extraction, and Cohen's kappa.
pub fn cross_level_profile(
    generated: &DMatrix<f64>,
    clean: &DMatrix<f64>,
    net: &DenseNet,
    baseline: &DVector<f64>,
    ig_steps: usize,
) -> Result<AttributionProfile> {
    let m = generated.ncols();
    let data_level = data_attribution(generated, clean);

    let igs = exec::map_range(generated.nrows(), |i| {
        integrated_gradients(net, &generated.row(i).transpose(), baseline, ig_steps)
    });
    let mut model_level = DVector::zeros(m);
    let mut count = 0usize;
    for ig in igs {
        let ig = ig?;
        for j in 0..m {
            model_level[j] += ig[j].abs();
        }
        count += 1;
    }
    if count > 0 {
        model_level /= count as f64;
    }

    let data_magnitude = data_level.map(|v| v.abs());
    let top5_data = top_k_indices(&data_magnitude, 5.min(m));
    let top5_model = top_k_indices(&model_level, 5.min(m));
    let kappa = cohens_kappa_topk(&top5_data, &top5_model, m, 5.min(m));

    Ok(AttributionProfile {
        data_level: data_level.iter().cloned().collect(),
        model_level: model_level.iter().cloned().collect(),
        top5_data,
        top5_model,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn data_attribution_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean = DMatrix::from_fn(400, 4, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        // Identical sets give the zero vector.
        let zero = data_attribution(&clean, &clean);
        assert!(zero.norm() < 1e-12);
        // A +2 sigma shift on one feature shows up as ~2 on that component.
        let mut shifted = clean.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, 2)] += 2.0;
        }
        let d = data_attribution(&shifted, &clean);
        assert!((d[2] - 2.0).abs() < 0.2, "d[2] = {}", d[2]);
        // Invariance under adding the same constant to both sets.
        let add = |m: &DMatrix<f64>| m.map(|v| v + 7.0);
        let d2 = data_attribution(&add(&shifted), &add(&clean));
        assert_abs_diff_eq!(d, d2, epsilon = 1e-9);
    }

    #[test]
    fn ig_linear_net_closed_form() {
        // F = w'a with zero baseline: phi_j = w_j a_j exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 1], &[Activation::Linear], &mut rng);
        let a = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let baseline = DVector::zeros(3);
        let phi = integrated_gradients(&net, &a, &baseline, 8).unwrap();
        for j in 0..3 {
            let expected = net.layers[0].w[(0, j)] * a[j];
            assert_abs_diff_eq!(phi[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ig_completeness_on_random_tanh_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let net = DenseNet::new(
                &[6, 16, 1],
                &[Activation::Tanh, Activation::Linear],
                &mut rng,
            );
            let a = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let baseline = DVector::from_fn(6, |_, _| rng.random_range(-0.2..0.2));
            let phi = integrated_gradients(&net, &a, &baseline, 256).unwrap();
            let fa = net.predict(&DMatrix::from_row_slice(1, 6, a.as_slice()))[(0, 0)];
            let fb = net.predict(&DMatrix::from_row_slice(1, 6, baseline.as_slice()))[(0, 0)];
            let total = fa - fb;
            assert!(
                (phi.sum() - total).abs() <= 1e-3 * total.abs().max(1.0),
                "completeness gap {}",
                (phi.sum() - total).abs()
            );
        }
    }

    #[test]
    fn ig_zero_at_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[4, 8, 1], &[Activation::Tanh, Activation::Linear], &mut rng);
        let a = DVector::from_vec(vec![0.3, -0.4, 0.1, 0.9]);
        let phi = integrated_gradients(&net, &a, &a, 16).unwrap();
        assert!(phi.norm() < 1e-15);
    }

    #[test]
    fn top_k_breaks_ties_by_lower_index() {
        let v = DVector::from_vec(vec![1.0, 3.0, 3.0, 0.5, 3.0]);
        assert_eq!(top_k_indices(&v, 3), vec![1, 2, 4]);
    }

    #[test]
    fn profile_identifies_shifted_feature_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = DMatrix::from_fn(200, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let mut gen = DMatrix::from_fn(50, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        for i in 0..gen.nrows() {
            gen[(i, 3)] += 4.0;
        }
        let net = DenseNet::new(&[6, 12, 1], &[Activation::Tanh, Activation::Linear], &mut rng);
        let baseline = DVector::from_fn(6, |j, _| clean.column(j).mean());
        let p1 = cross_level_profile(&gen, &clean, &net, &baseline, 32).unwrap();
        assert_eq!(p1.top5_data[0], 3);
        assert!((-1.0..=1.0).contains(&p1.kappa));
        let p2 = cross_level_profile(&gen, &clean, &net, &baseline, 32).unwrap();
        assert_eq!(p1.top5_model, p2.top5_model);
        assert_eq!(p1.kappa, p2.kappa);
    }

    #[test]
    fn identical_rankings_give_unit_kappa() {
        // When the net is linear with weights aligned to the shift, both
        // levels rank the same sensors first.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let clean = DMatrix::from_fn(300, 8, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let mut gen = clean.rows(0, 100).into_owned();
        for i in 0..gen.nrows() {
            for j in 0..5 {
                gen[(i, j)] += (5 - j) as f64; // features 0..4 shifted, ranked in order
            }
        }
        let mut net = DenseNet::new(&[8, 1], &[Activation::Linear], &mut rng);
        for j in 0..8 {
            net.layers[0].w[(0, j)] = if j < 5 { (5 - j) as f64 } else { 1e-3 };
        }
        let baseline = DVector::zeros(8);
        let profile = cross_level_profile(&gen, &clean, &net, &baseline, 16).unwrap();
        assert_eq!(profile.top5_data.len(), 5);
        assert_abs_diff_eq!(profile.kappa, 1.0, epsilon = 1e-12);
    }
}
