//! Distributional and operational metrics plus Pareto-front selection.
//!
//! MMD uses the biased V-statistic with an RBF kernel
//! `k(x, y) = exp(-||x - y||^2 / (2 sigma^2))`, which is exactly zero on
//! identical sample lists. The sliced Wasserstein-1 averages 1-D transport
//! costs over random unit directions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{backward, Activation, Adam, DenseNet};
use crate::exec;

/// One evaluated (model, seed, k) cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub seed: u64,
    pub k: f64,
    pub mmd: f64,
    pub w1: f64,
    pub eps_bdd: f64,
    pub eps_ae: f64,
    pub eps_if: f64,
    pub phi: f64,
    pub psi: f64,
    pub impact: f64,
}

impl EvalRecord {
    /// Stable CSV column order.
    pub const CSV_HEADER: &'static str =
        "model,seed,k,mmd,w1,eps_bdd,eps_ae,eps_if,phi,psi,impact";

    /// The four Pareto objectives in spec order:
    /// (mmd, min), (eps_bdd, max), (phi, max), (impact, max).
    pub fn objectives(&self) -> Vec<f64> {
        vec![self.mmd, self.eps_bdd, self.phi, self.impact]
    }
}

/// Median pairwise Euclidean distance over the pooled rows of `x` and `y`,
/// floored at 1e-8.
pub fn median_heuristic(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    assert_eq!(x.ncols(), y.ncols());
    let mut pooled: Vec<DVector<f64>> = Vec::with_capacity(x.nrows() + y.nrows());
    for i in 0..x.nrows() {
        pooled.push(x.row(i).transpose());
    }
    for i in 0..y.nrows() {
        pooled.push(y.row(i).transpose());
    }
    let n = pooled.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((&pooled[i] - &pooled[j]).norm());
        }
    }
    if dists.is_empty() {
        return 1e-8;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    median.max(1e-8)
}

/// Squared MMD between two sample sets (biased V-statistic, clamped at 0).
pub fn mmd_rbf(x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> f64 {
    assert_eq!(x.ncols(), y.ncols(), "dimension mismatch");
    assert!(sigma > 0.0);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let n = x.nrows();
    let m = y.nrows();
    assert!(n > 0 && m > 0);

    let kxx = exec::sum_range(n, |i| {
        let xi = x.row(i);
        (0..n)
            .map(|j| {
                let mut d2 = 0.0;
                for c in 0..x.ncols() {
                    let d = xi[c] - x[(j, c)];
                    d2 += d * d;
                }
                (-gamma * d2).exp()
            })
            .sum()
    });
    let kyy = exec::sum_range(m, |i| {
        let yi = y.row(i);
        (0..m)
            .map(|j| {
                let mut d2 = 0.0;
                for c in 0..y.ncols() {
                    let d = yi[c] - y[(j, c)];
                    d2 += d * d;
                }
                (-gamma * d2).exp()
            })
            .sum()
    });
    let kxy = exec::sum_range(n, |i| {
        let xi = x.row(i);
        (0..m)
            .map(|j| {
                let mut d2 = 0.0;
                for c in 0..x.ncols() {
                    let d = xi[c] - y[(j, c)];
                    d2 += d * d;
                }
                (-gamma * d2).exp()
            })
            .sum()
    });
    let v = kxx / (n * n) as f64 + kyy / (m * m) as f64 - 2.0 * kxy / (n * m) as f64;
    v.max(0.0)
}

/// Squared MMD with the bandwidth from [`median_heuristic`].
pub fn mmd_rbf_median(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    mmd_rbf(x, y, median_heuristic(x, y))
}

/// First-order sliced Wasserstein distance over random unit directions.
///
/// Each 1-D distance pairs sorted samples when the sets have equal size and
/// couples nearest-rank quantiles otherwise.
pub fn sliced_w1(x: &DMatrix<f64>, y: &DMatrix<f64>, n_directions: usize, seed: u64) -> f64 {
    assert_eq!(x.ncols(), y.ncols(), "dimension mismatch");
    assert!(n_directions > 0);
    let dim = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<DVector<f64>> = (0..n_directions)
        .map(|_| {
            let mut u = DVector::from_fn(dim, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            });
            let norm = u.norm();
            if norm > 0.0 {
                u /= norm;
            } else {
                u[0] = 1.0;
            }
            u
        })
        .collect();
    let totals = exec::map_slice(&directions, |u| {
        let mut px: Vec<f64> = (0..x.nrows()).map(|i| x.row(i).transpose().dot(u)).collect();
        let mut py: Vec<f64> = (0..y.nrows()).map(|i| y.row(i).transpose().dot(u)).collect();
        px.sort_by(|a, b| a.total_cmp(b));
        py.sort_by(|a, b| a.total_cmp(b));
        w1_sorted_1d(&px, &py)
    });
    totals.iter().sum::<f64>() / n_directions as f64
}

/// 1-D W1 between two sorted samples.
fn w1_sorted_1d(x: &[f64], y: &[f64]) -> f64 {
    if x.len() == y.len() {
        return x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / x.len() as f64;
    }
    // Quantile coupling at the midpoints of the finer grid.
    let k = x.len().max(y.len());
    let quantile = |v: &[f64], q: f64| -> f64 {
        let rank = (q * v.len() as f64).ceil() as usize;
        v[rank.clamp(1, v.len()) - 1]
    };
    (0..k)
        .map(|j| {
            let q = (j as f64 + 0.5) / k as f64;
            (quantile(x, q) - quantile(y, q)).abs()
        })
        .sum::<f64>()
        / k as f64
}

/// Mean generated attack 2-norm relative to the mean real attack 2-norm.
pub fn attack_impact(c_gen: &DMatrix<f64>, c_real_eval: &DMatrix<f64>) -> f64 {
    let mean_norm = |m: &DMatrix<f64>| -> f64 {
        if m.nrows() == 0 {
            return 0.0;
        }
        (0..m.nrows()).map(|i| m.row(i).norm()).sum::<f64>() / m.nrows() as f64
    };
    let denom = mean_norm(c_real_eval);
    if denom == 0.0 {
        return 0.0;
    }
    mean_norm(c_gen) / denom
}

/// Trains a fresh two-layer probe on a 70/30 real-vs-generated split and
/// returns the held-out balanced accuracy (0.5 = indistinguishable).
pub fn discriminator_probe(real: &DMatrix<f64>, generated: &DMatrix<f64>, seed: u64) -> f64 {
    train_probe_net(real, generated, seed).1
}

/// The probe behind [`discriminator_probe`], returned together with its
/// balanced accuracy so it can serve as an attribution target.
pub fn train_probe_net(real: &DMatrix<f64>, generated: &DMatrix<f64>, seed: u64) -> (DenseNet, f64) {
    assert_eq!(real.ncols(), generated.ncols());
    let dim = real.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let split = |m: &DMatrix<f64>, rng: &mut ChaCha8Rng| -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..m.nrows()).collect();
        // Fisher-Yates with the probe's own stream.
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let cut = (idx.len() as f64 * 0.7).floor() as usize;
        (idx[..cut].to_vec(), idx[cut..].to_vec())
    };
    let (real_tr, real_te) = split(real, &mut rng);
    let (gen_tr, gen_te) = split(generated, &mut rng);

    let mut net = DenseNet::new(&[dim, 32, 1], &[Activation::Relu, Activation::Linear], &mut rng);
    let mut adam = Adam::new(1e-3);

    let n_tr = real_tr.len() + gen_tr.len();
    let mut x_tr = DMatrix::zeros(n_tr, dim);
    let mut y_tr = Vec::with_capacity(n_tr);
    for (row, &i) in real_tr.iter().enumerate() {
        x_tr.row_mut(row).copy_from(&real.row(i));
        y_tr.push(1.0);
    }
    for (row, &i) in gen_tr.iter().enumerate() {
        x_tr.row_mut(row + real_tr.len()).copy_from(&generated.row(i));
        y_tr.push(0.0);
    }

    // Full-batch logistic training; 300 steps is enough for a separable
    // shift and conservatively short for the null case.
    for _ in 0..300 {
        let (logits, tape) = net.forward(&x_tr);
        let mut upstream = DMatrix::zeros(n_tr, 1);
        for i in 0..n_tr {
            let p = 1.0 / (1.0 + (-logits[(i, 0)]).exp());
            upstream[(i, 0)] = (p - y_tr[i]) / n_tr as f64;
        }
        let grads = backward(&net, &tape, &upstream);
        adam.step(&mut net, &grads);
    }

    let score = |rows: &[usize], data: &DMatrix<f64>| -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                let mut x = DMatrix::zeros(1, dim);
                x.row_mut(0).copy_from(&data.row(i));
                net.predict(&x)[(0, 0)]
            })
            .collect()
    };
    let real_scores = score(&real_te, real);
    let gen_scores = score(&gen_te, generated);
    let tpr = real_scores.iter().filter(|&&s| s > 0.0).count() as f64
        / real_scores.len().max(1) as f64;
    let tnr = gen_scores.iter().filter(|&&s| s <= 0.0).count() as f64
        / gen_scores.len().max(1) as f64;
    (net, 0.5 * (tpr + tnr))
}

/// Objective direction for Pareto ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Non-dominated subset plus per-record dominance counts.
#[derive(Debug, Clone)]
pub struct ParetoResult {
    /// Ids of non-dominated records, in input order.
    pub non_dominated: Vec<String>,
    /// For each input record: how many other records it dominates.
    pub dominance_count: Vec<(String, usize)>,
}

/// Strict-dominance Pareto front over labelled objective vectors.
///
/// `r` dominates `s` iff `r` is no worse on every objective and strictly
/// better on at least one.
pub fn pareto_front(points: &[(String, Vec<f64>)], directions: &[Direction]) -> ParetoResult {
    for (_, objs) in points {
        assert_eq!(objs.len(), directions.len(), "objective arity mismatch");
    }
    let better = |a: f64, b: f64, d: Direction| match d {
        Direction::Min => a < b,
        Direction::Max => a > b,
    };
    let dominates = |a: &[f64], b: &[f64]| -> bool {
        let mut strictly = false;
        for (i, &d) in directions.iter().enumerate() {
            if better(b[i], a[i], d) {
                return false;
            }
            if better(a[i], b[i], d) {
                strictly = true;
            }
        }
        strictly
    };
    let mut non_dominated = Vec::new();
    let mut dominance_count = Vec::with_capacity(points.len());
    for (i, (id, objs)) in points.iter().enumerate() {
        let mut dominated = false;
        let mut count = 0;
        for (j, (_, other)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            if dominates(other, objs) {
                dominated = true;
            }
            if dominates(objs, other) {
                count += 1;
            }
        }
        if !dominated {
            non_dominated.push(id.clone());
        }
        dominance_count.push((id.clone(), count));
    }
    ParetoResult {
        non_dominated,
        dominance_count,
    }
}

/// Pareto front over [`EvalRecord`]s on the spec's four objectives.
pub fn pareto_front_records(records: &[EvalRecord]) -> ParetoResult {
    let points: Vec<(String, Vec<f64>)> = records
        .iter()
        .map(|r| (r.model.clone(), r.objectives()))
        .collect();
    pareto_front(
        &points,
        &[Direction::Min, Direction::Max, Direction::Max, Direction::Max],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn median_heuristic_examples() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DMatrix::from_row_slice(1, 1, &[3.0]);
        assert_abs_diff_eq!(median_heuristic(&x, &y), 3.0, epsilon = 1e-12);
        // Identical points floor at 1e-8.
        let z = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(median_heuristic(&z, &z), 1e-8);
    }

    #[test]
    fn median_heuristic_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let base = median_heuristic(&x, &y);
        let scaled = median_heuristic(&(&x * 2.5), &(&y * 2.5));
        assert_abs_diff_eq!(scaled, 2.5 * base, epsilon = 1e-10);
    }

    #[test]
    fn mmd_identical_sets_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(mmd_rbf(&x, &x.clone(), 1.0), 0.0);
    }

    #[test]
    fn mmd_two_point_closed_form() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DMatrix::from_row_slice(1, 1, &[2.0]);
        let got = mmd_rbf(&x, &y, 2.0);
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn mmd_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = DMatrix::from_fn(50, 8, |_, _| rng.random_range(-2.0..2.0));
            let y = DMatrix::from_fn(50, 8, |_, _| rng.random_range(-2.0..2.0));
            let sigma = 1.3;
            let oracle = mmd_oracle(&x, &y, sigma);
            let got = mmd_rbf(&x, &y, sigma);
            assert!((got - oracle).abs() <= 1e-12, "got {got}, oracle {oracle}");
        }
    }

    /// Brute-force double loop, written independently of the implementation.
    fn mmd_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, sigma: f64) -> f64 {
        let k = |a: nalgebra::RowDVector<f64>, b: nalgebra::RowDVector<f64>| -> f64 {
            let d = &a - &b;
            (-d.norm_squared() / (2.0 * sigma * sigma)).exp()
        };
        let (n, m) = (x.nrows(), y.nrows());
        let mut xx = 0.0;
        for i in 0..n {
            for j in 0..n {
                xx += k(x.row(i).clone_owned(), x.row(j).clone_owned());
            }
        }
        let mut yy = 0.0;
        for i in 0..m {
            for j in 0..m {
                yy += k(y.row(i).clone_owned(), y.row(j).clone_owned());
            }
        }
        let mut xy = 0.0;
        for i in 0..n {
            for j in 0..m {
                xy += k(x.row(i).clone_owned(), y.row(j).clone_owned());
            }
        }
        (xx / (n * n) as f64 + yy / (m * m) as f64 - 2.0 * xy / (n * m) as f64).max(0.0)
    }

    #[test]
    fn mmd_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        assert_abs_diff_eq!(mmd_rbf(&x, &y, 0.8), mmd_rbf(&y, &x, 0.8), epsilon = 1e-15);
    }

    #[test]
    fn sliced_w1_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        // In 1-D every direction is +-e1, and W1 of the sorted pairing is 1.
        assert_abs_diff_eq!(sliced_w1(&x, &y, 16, 0), 1.0, epsilon = 1e-12);
        assert_eq!(sliced_w1(&x, &x.clone(), 16, 0), 0.0);
    }

    #[test]
    fn sliced_w1_translation_of_point_masses() {
        // Point masses translated by v: W1 equals mean |u'v| over directions
        // and never exceeds ||v||.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::from_vec(vec![0.4, -0.2, 0.7]);
        let mut shifted = base.clone();
        for i in 0..shifted.nrows() {
            for j in 0..3 {
                shifted[(i, j)] += v[j];
            }
        }
        let w = sliced_w1(&base, &shifted, 512, 7);
        assert!(w <= v.norm() + 1e-9);
        // Reference: average |u'v| over the same directions.
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let mut acc = 0.0;
        for _ in 0..512 {
            let mut u = DVector::from_fn(3, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng2);
                g
            });
            u /= u.norm();
            acc += u.dot(&v).abs();
        }
        assert_abs_diff_eq!(w, acc / 512.0, epsilon = 1e-9);
    }

    #[test]
    fn sliced_w1_triangle_inequality_1d() {
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1.5, 2.0]);
        let c = DMatrix::from_row_slice(3, 1, &[2.0, 2.5, 3.0]);
        let ab = sliced_w1(&a, &b, 8, 1);
        let bc = sliced_w1(&b, &c, 8, 1);
        let ac = sliced_w1(&a, &c, 8, 1);
        assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn sliced_w1_unequal_sizes_quantile_coupling() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        // Same empirical distribution at matched quantiles.
        assert!(sliced_w1(&x, &y, 8, 2) < 1e-9);
    }

    #[test]
    fn attack_impact_examples() {
        let real = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 3.0, 4.0]); // norms 5
        let same = DMatrix::from_row_slice(1, 2, &[0.0, 5.0]);
        assert_abs_diff_eq!(attack_impact(&same, &real), 1.0, epsilon = 1e-12);
        let zero = DMatrix::zeros(3, 2);
        assert_eq!(attack_impact(&zero, &real), 0.0);
    }

    #[test]
    fn probe_near_chance_on_same_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let real = DMatrix::from_fn(300, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let generated = DMatrix::from_fn(300, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let psi = discriminator_probe(&real, &generated, 0);
        assert!((psi - 0.5).abs() <= 0.1, "psi = {psi}");
    }

    #[test]
    fn probe_separates_large_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real = DMatrix::from_fn(200, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let generated = DMatrix::from_fn(200, 6, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g + 20.0
        });
        let psi = discriminator_probe(&real, &generated, 0);
        assert!(psi >= 0.95, "psi = {psi}");
    }

    #[test]
    fn probe_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let real = DMatrix::from_fn(60, 4, |_, _| rng.random_range(-1.0..1.0));
        let generated = DMatrix::from_fn(60, 4, |_, _| rng.random_range(-0.5..1.5));
        assert_eq!(
            discriminator_probe(&real, &generated, 3),
            discriminator_probe(&real, &generated, 3)
        );
    }

    fn ids(v: &[String]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }

    #[test]
    fn pareto_trivial_cases() {
        let dirs = [Direction::Min, Direction::Max];
        let single = vec![("a".to_string(), vec![1.0, 2.0])];
        assert_eq!(ids(&pareto_front(&single, &dirs).non_dominated), ["a"]);
        let two = vec![
            ("good".to_string(), vec![0.1, 5.0]),
            ("bad".to_string(), vec![0.5, 1.0]),
        ];
        assert_eq!(ids(&pareto_front(&two, &dirs).non_dominated), ["good"]);
    }

    #[test]
    fn pareto_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dirs = [Direction::Min, Direction::Max, Direction::Max, Direction::Max];
        for _ in 0..20 {
            let points: Vec<(String, Vec<f64>)> = (0..50)
                .map(|i| {
                    (
                        format!("r{i}"),
                        (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
                    )
                })
                .collect();
            let got = pareto_front(&points, &dirs);
            let expected = pareto_oracle(&points, &dirs);
            assert_eq!(got.non_dominated, expected);
        }
    }

    /// Independent O(n^2) dominance enumeration.
    fn pareto_oracle(points: &[(String, Vec<f64>)], dirs: &[Direction]) -> Vec<String> {
        let key = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(dirs)
                .map(|(&x, d)| if *d == Direction::Min { x } else { -x })
                .collect()
        };
        let mut out = Vec::new();
        'outer: for (id, objs) in points {
            let a = key(objs);
            for (other_id, other) in points {
                if other_id == id {
                    continue;
                }
                let b = key(other);
                let no_worse = b.iter().zip(&a).all(|(x, y)| x <= y);
                let strictly = b.iter().zip(&a).any(|(x, y)| x < y);
                if no_worse && strictly {
                    continue 'outer;
                }
            }
            out.push(id.clone());
        }
        out
    }

    #[test]
    fn pareto_front_invariant_to_dominated_insertions() {
        let dirs = [Direction::Min, Direction::Max];
        let mut points = vec![
            ("a".to_string(), vec![0.1, 0.9]),
            ("b".to_string(), vec![0.2, 0.95]),
        ];
        let before = pareto_front(&points, &dirs).non_dominated;
        points.push(("dominated".to_string(), vec![0.3, 0.5]));
        let after = pareto_front(&points, &dirs).non_dominated;
        assert_eq!(before, after);
        // A record dominating everything collapses the front.
        points.push(("best".to_string(), vec![0.01, 0.99]));
        let collapsed = pareto_front(&points, &dirs).non_dominated;
        assert_eq!(ids(&collapsed), ["best"]);
    }
}
