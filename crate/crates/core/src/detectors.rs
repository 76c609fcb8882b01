//! Non-BDD detectors: Isolation Forest and a dense autoencoder.
//!
//! Both consume attacked measurement vectors `z + c` in physical units,
//! standardized by a detector-local scaler, and both freeze a
//! 95th-percentile threshold on the clean calibration partition before any
//! attack data is seen (the [`DetPartition`] argument enforces that).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, Activation, Adam, DenseNet};
use crate::error::Result;
use crate::exec;
use crate::grid::DetPartition;
use crate::physics::Scaler;

const EULER_GAMMA: f64 = 0.5772156649015329;

/// Average unsuccessful-search path length in a binary tree of `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let mf = m as f64;
            2.0 * ((mf - 1.0).ln() + EULER_GAMMA) - 2.0 * (mf - 1.0) / mf
        }
    }
}

enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

struct ITree {
    nodes: Vec<Node>,
}

impl ITree {
    fn build(data: &DMatrix<f64>, rows: &[usize], height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut nodes = Vec::new();
        Self::grow(data, rows, 0, height_limit, rng, &mut nodes);
        Self { nodes }
    }

    fn grow(
        data: &DMatrix<f64>,
        rows: &[usize],
        depth: usize,
        limit: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node>,
    ) -> usize {
        if depth >= limit || rows.len() <= 1 {
            nodes.push(Node::Leaf { size: rows.len() });
            return nodes.len() - 1;
        }
        // Pick a feature with spread; give up after a few attempts.
        let dim = data.ncols();
        let mut feature = rng.random_range(0..dim);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for attempt in 0..4 {
            lo = f64::INFINITY;
            hi = f64::NEG_INFINITY;
            for &r in rows {
                lo = lo.min(data[(r, feature)]);
                hi = hi.max(data[(r, feature)]);
            }
            if hi > lo {
                break;
            }
            if attempt == 3 {
                nodes.push(Node::Leaf { size: rows.len() });
                return nodes.len() - 1;
            }
            feature = rng.random_range(0..dim);
        }
        let value = rng.random_range(lo..hi);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| data[(r, feature)] < value);
        let slot = nodes.len();
        nodes.push(Node::Leaf { size: 0 }); // placeholder
        let left = Self::grow(data, &left_rows, depth + 1, limit, rng, nodes);
        let right = Self::grow(data, &right_rows, depth + 1, limit, rng, nodes);
        nodes[slot] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        slot
    }

    fn path_length(&self, x: &DVector<f64>) -> f64 {
        let mut idx = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { size } => return depth + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    idx = if x[*feature] < *value { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Subsampled isolation forest with a calibrated pass threshold.
pub struct IsolationForestModel {
    trees: Vec<ITree>,
    subsample: usize,
    scaler: Scaler,
    /// Anomaly-score threshold frozen on the clean calibration slice.
    pub score_threshold: f64,
}

impl IsolationForestModel {
    /// Anomaly score `s(x) = 2^(-E[h(x)] / c(m_s))` in (0, 1).
    pub fn score(&self, x_physical: &DVector<f64>) -> f64 {
        let x = self.scaler.apply(x_physical);
        let mean_path = self
            .trees
            .iter()
            .map(|t| t.path_length(&x))
            .sum::<f64>()
            / self.trees.len() as f64;
        self.score_from_mean_path(mean_path)
    }

    /// The scoring formula itself, exposed for direct checks.
    pub fn score_from_mean_path(&self, mean_path: f64) -> f64 {
        2.0f64.powf(-mean_path / average_path_length(self.subsample))
    }

    pub fn mean_path_length(&self, x_physical: &DVector<f64>) -> f64 {
        let x = self.scaler.apply(x_physical);
        self.trees.iter().map(|t| t.path_length(&x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Trains an isolation forest on the clean calibration slice and freezes the
/// 95th-percentile score threshold.
pub fn train_iforest(
    det: &DetPartition,
    n_trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<IsolationForestModel> {
    assert!(n_trees > 0);
    let data = &det.0.z;
    let scaler = Scaler::fit(data)?;
    let std_data = scaler.apply_rows(data);
    let n = std_data.nrows();
    let m_s = subsample.min(n).max(2);
    let height_limit = (m_s as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees: Vec<ITree> = (0..n_trees)
        .map(|_| {
            let rows: Vec<usize> = (0..m_s).map(|_| rng.random_range(0..n)).collect();
            ITree::build(&std_data, &rows, height_limit, &mut rng)
        })
        .collect();
    let mut model = IsolationForestModel {
        trees,
        subsample: m_s,
        scaler,
        score_threshold: 1.0,
    };
    let clean_scores: Vec<f64> =
        exec::map_range(n, |i| model.score(&det.0.z.row(i).transpose()));
    model.score_threshold = crate::estimation::nearest_rank_percentile(&clean_scores, 95.0);
    Ok(model)
}

/// Fraction of attacked samples scoring below the frozen threshold.
pub fn iforest_evasion(
    model: &IsolationForestModel,
    attacks_physical: &DMatrix<f64>,
    z_batch: &DMatrix<f64>,
) -> f64 {
    assert_eq!(attacks_physical.nrows(), z_batch.nrows());
    let n = attacks_physical.nrows();
    let passes = exec::sum_range(n, |i| {
        let x = z_batch.row(i).transpose() + attacks_physical.row(i).transpose();
        if model.score(&x) < model.score_threshold {
            1.0
        } else {
            0.0
        }
    });
    passes / n as f64
}

/// Dense autoencoder detector with a frozen reconstruction-error threshold.
pub struct AeDetector {
    net: DenseNet,
    scaler: Scaler,
    pub tau_ae: f64,
}

/// Autoencoder training settings.
#[derive(Debug, Clone)]
pub struct AeConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch: 64,
            lr: 1e-3,
        }
    }
}

impl AeDetector {
    /// Mean squared reconstruction error of one physical-unit sample.
    pub fn reconstruction_error(&self, x_physical: &DVector<f64>) -> f64 {
        let x = self.scaler.apply(x_physical);
        let input = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        let out = self.net.predict(&input);
        (0..x.len())
            .map(|j| (out[(0, j)] - x[j]).powi(2))
            .sum::<f64>()
            / x.len() as f64
    }
}

/// Trains the autoencoder on the clean calibration slice; bottleneck
/// ceil(M/4), two hidden layers, threshold at the clean 95th percentile.
pub fn train_ae_detector(det: &DetPartition, cfg: &AeConfig, seed: u64) -> Result<AeDetector> {
    let data = &det.0.z;
    let m = data.ncols();
    let scaler = Scaler::fit(data)?;
    let x = scaler.apply_rows(data);
    let n = x.nrows();

    let bottleneck = m.div_ceil(4);
    let hidden = (m / 2).max(bottleneck + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DenseNet::new(
        &[m, hidden, bottleneck, hidden, m],
        &[
            Activation::Tanh,
            Activation::Tanh,
            Activation::Tanh,
            Activation::Linear,
        ],
        &mut rng,
    );
    let mut adam = Adam::new(cfg.lr);
    adam.beta1 = 0.9;

    let batch = cfg.batch.min(n).max(1);
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(batch) {
            let mut xb = DMatrix::zeros(chunk.len(), m);
            for (row, &i) in chunk.iter().enumerate() {
                xb.row_mut(row).copy_from(&x.row(i));
            }
            let (out, tape) = net.forward(&xb);
            let upstream = (&out - &xb) * (2.0 / (chunk.len() * m) as f64);
            let grads = backward(&net, &tape, &upstream);
            adam.step(&mut net, &grads);
        }
    }

    let mut detector = AeDetector {
        net,
        scaler,
        tau_ae: f64::INFINITY,
    };
    let clean_errors: Vec<f64> = exec::map_range(n, |i| {
        detector.reconstruction_error(&det.0.z.row(i).transpose())
    });
    detector.tau_ae = crate::estimation::nearest_rank_percentile(&clean_errors, 95.0);
    Ok(detector)
}

/// Fraction of attacked samples whose reconstruction error stays at or
/// below the frozen threshold.
pub fn ae_evasion(det: &AeDetector, attacks_physical: &DMatrix<f64>, z_batch: &DMatrix<f64>) -> f64 {
    assert_eq!(attacks_physical.nrows(), z_batch.nrows());
    let n = attacks_physical.nrows();
    let passes = exec::sum_range(n, |i| {
        let x = z_batch.row(i).transpose() + attacks_physical.row(i).transpose();
        if det.reconstruction_error(&x) <= det.tau_ae {
            1.0
        } else {
            0.0
        }
    });
    passes / n as f64
}

/// Verdict rows for both detectors as CSV:
/// `sample_id, detector, score, threshold, flagged`.
pub fn verdict_csv(
    iforest: &IsolationForestModel,
    ae: &AeDetector,
    attacks_physical: &DMatrix<f64>,
    z_batch: &DMatrix<f64>,
    sample_ids: &[usize],
) -> String {
    let mut out = String::from("sample_id,detector,score,threshold,flagged\n");
    for i in 0..attacks_physical.nrows() {
        let x = z_batch.row(i).transpose() + attacks_physical.row(i).transpose();
        let s = iforest.score(&x);
        out.push_str(&format!(
            "{},isolation_forest,{},{},{}\n",
            sample_ids[i],
            s,
            iforest.score_threshold,
            s >= iforest.score_threshold
        ));
        let e = ae.reconstruction_error(&x);
        out.push_str(&format!(
            "{},autoencoder,{},{},{}\n",
            sample_ids[i],
            e,
            ae.tau_ae,
            e > ae.tau_ae
        ));
    }
    out
}
