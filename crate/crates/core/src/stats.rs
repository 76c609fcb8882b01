//! Rank-based statistical tests and agreement measures.
//!
//! All p-values are two-sided at the caller's alpha. The Wilcoxon test
//! enumerates sign assignments exactly for n <= 12 and falls back to the
//! tie-corrected normal approximation above that.

use crate::error::{Error, Result};
use crate::special::{chi2_sf, normal_cdf, studentized_range_quantile};

/// Outcome of one statistical test.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TestReport {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Cohen's d or eta-squared, when the test defines one.
    pub effect_size: Option<f64>,
    /// Effective sample count the statistic was computed from.
    pub n: usize,
    pub alpha_adjusted: Option<f64>,
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Friedman test over a models x runs matrix (rows = models).
///
/// Ranks are assigned within each run (column); identical values share
/// average ranks. The statistic follows chi-square with k-1 dof.
pub fn friedman_test(matrix: &nalgebra::DMatrix<f64>) -> Result<TestReport> {
    let k = matrix.nrows();
    let n = matrix.ncols();
    if k < 2 || n < 1 {
        return Err(Error::Protocol(format!(
            "friedman needs >= 2 models and >= 1 run, got {k} x {n}"
        )));
    }
    let mut rank_sums = vec![0.0; k];
    for run in 0..n {
        let col: Vec<f64> = (0..k).map(|m| matrix[(m, run)]).collect();
        for (m, r) in average_ranks(&col).into_iter().enumerate() {
            rank_sums[m] += r;
        }
    }
    let kf = k as f64;
    let nf = n as f64;
    let mean_rank = (kf + 1.0) / 2.0;
    let spread: f64 = rank_sums
        .iter()
        .map(|&s| {
            let mean = s / nf;
            (mean - mean_rank).powi(2)
        })
        .sum();
    let statistic = 12.0 * nf / (kf * (kf + 1.0)) * spread;
    let p_value = chi2_sf(statistic, k - 1);
    Ok(TestReport {
        method: "friedman".into(),
        statistic,
        p_value,
        effect_size: None,
        n,
        alpha_adjusted: None,
    })
}

/// Mean rank per model from the same matrix layout as [`friedman_test`].
pub fn mean_ranks(matrix: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let k = matrix.nrows();
    let n = matrix.ncols();
    let mut rank_sums = vec![0.0; k];
    for run in 0..n {
        let col: Vec<f64> = (0..k).map(|m| matrix[(m, run)]).collect();
        for (m, r) in average_ranks(&col).into_iter().enumerate() {
            rank_sums[m] += r;
        }
    }
    rank_sums.into_iter().map(|s| s / n as f64).collect()
}

/// Pairwise post-hoc comparison of mean ranks against the studentized-range
/// critical difference at the (already corrected) significance level.
#[derive(Debug, Clone)]
pub struct NemenyiResult {
    pub critical_difference: f64,
    /// Symmetric significance matrix.
    pub significant: Vec<Vec<bool>>,
}

pub fn nemenyi_posthoc(rank_means: &[f64], n_runs: usize, alpha_adj: f64) -> Result<NemenyiResult> {
    let k = rank_means.len();
    if k < 2 || n_runs < 1 {
        return Err(Error::Protocol("nemenyi needs >= 2 models and >= 1 run".into()));
    }
    if !(0.0..1.0).contains(&alpha_adj) || alpha_adj == 0.0 {
        return Err(Error::Protocol("alpha_adj must lie in (0, 1)".into()));
    }
    let q = studentized_range_quantile(1.0 - alpha_adj, k) / std::f64::consts::SQRT_2;
    let cd = q * ((k * (k + 1)) as f64 / (6.0 * n_runs as f64)).sqrt();
    let significant = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| i != j && (rank_means[i] - rank_means[j]).abs() > cd)
                .collect()
        })
        .collect();
    Ok(NemenyiResult {
        critical_difference: cd,
        significant,
    })
}

/// Paired Wilcoxon signed-rank test with paired Cohen's d.
///
/// Zero differences are dropped. n <= 12 uses exact enumeration of all sign
/// assignments; larger n uses the tie-corrected normal approximation
/// (no continuity correction). `a = b` degenerates to n = 0, p = 1.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestReport> {
    if a.len() != b.len() {
        return Err(Error::Protocol(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(TestReport {
            method: "wilcoxon-signed-rank".into(),
            statistic: f64::NAN,
            p_value: 1.0,
            effect_size: None,
            n: 0,
            alpha_adjusted: None,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let p_value = if n <= 12 {
        exact_wilcoxon_p(&ranks, w_plus)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term = tie_correction_term(&abs);
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = (w_plus - mean) / var.sqrt();
        (2.0 * (1.0 - normal_cdf(z.abs()))).min(1.0)
    };

    // Paired Cohen's d on the retained differences (sample std).
    let mean_d = diffs.iter().sum::<f64>() / n as f64;
    let effect = if n > 1 {
        let var = diffs.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if var > 0.0 {
            Some(mean_d / var.sqrt())
        } else {
            None
        }
    } else {
        None
    };

    Ok(TestReport {
        method: "wilcoxon-signed-rank".into(),
        statistic: w_plus,
        p_value,
        effect_size: effect,
        n,
        alpha_adjusted: None,
    })
}

/// Sum of (t^3 - t) over tie groups of |differences|.
fn tie_correction_term(abs: &[f64]) -> f64 {
    let mut sorted = abs.to_vec();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let mut term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        term += t * t * t - t;
        i = j + 1;
    }
    term
}

/// Exact two-sided p: enumerate all 2^n sign assignments over the observed
/// ranks and double the smaller tail (capped at 1).
fn exact_wilcoxon_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let total = 1u64 << n;
    let mut ge = 0u64;
    let mut le = 0u64;
    for mask in 0..total {
        let mut w = 0.0;
        for (i, r) in ranks.iter().enumerate() {
            if mask >> i & 1 == 1 {
                w += r;
            }
        }
        if w >= w_plus - 1e-12 {
            ge += 1;
        }
        if w <= w_plus + 1e-12 {
            le += 1;
        }
    }
    let tail = ge.min(le) as f64 / total as f64;
    (2.0 * tail).min(1.0)
}

/// Kruskal-Wallis H test with tie correction and the eta-squared effect size
/// `(H - G + 1) / (N - G)`.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestReport> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::Protocol("kruskal-wallis needs >= 2 groups".into()));
    }
    if groups.iter().any(|grp| grp.is_empty()) {
        return Err(Error::Protocol("kruskal-wallis groups must be non-empty".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().cloned().collect();
    let n = pooled.len();
    let ranks = average_ranks(&pooled);
    let nf = n as f64;
    let mut h = 0.0;
    let mut offset = 0;
    for grp in groups {
        let size = grp.len();
        let sum: f64 = ranks[offset..offset + size].iter().sum();
        h += sum * sum / size as f64;
        offset += size;
    }
    h = 12.0 / (nf * (nf + 1.0)) * h - 3.0 * (nf + 1.0);
    let tie = 1.0 - tie_correction_term(&pooled) / (nf * nf * nf - nf);
    if tie > 0.0 {
        h /= tie;
    }
    let p_value = chi2_sf(h, g - 1);
    let eta_squared = kruskal_eta_squared(h, g, n);
    Ok(TestReport {
        method: "kruskal-wallis".into(),
        statistic: h,
        p_value,
        effect_size: Some(eta_squared),
        n,
        alpha_adjusted: None,
    })
}

/// eta^2 = (H - G + 1) / (N - G).
pub fn kruskal_eta_squared(h: f64, g: usize, n: usize) -> f64 {
    (h - g as f64 + 1.0) / (n as f64 - g as f64)
}

/// Chance-corrected agreement between two top-k index sets over M features.
///
/// Each rater flags exactly k of M features; p_e follows from the marginal
/// flag rate k/M for both raters.
pub fn cohens_kappa_topk(set_a: &[usize], set_b: &[usize], m: usize, k: usize) -> f64 {
    assert!(set_a.len() == k && set_b.len() == k, "top-k sets must have k entries");
    assert!(m >= k && k > 0);
    let in_a: std::collections::HashSet<usize> = set_a.iter().cloned().collect();
    let in_b: std::collections::HashSet<usize> = set_b.iter().cloned().collect();
    let agree = (0..m)
        .filter(|i| in_a.contains(i) == in_b.contains(i))
        .count();
    let p_o = agree as f64 / m as f64;
    let rate = k as f64 / m as f64;
    let p_e = rate * rate + (1.0 - rate) * (1.0 - rate);
    (p_o - p_e) / (1.0 - p_e)
}
