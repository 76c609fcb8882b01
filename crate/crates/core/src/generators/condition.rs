//! Attacker-knowledge conditioning.
//!
//! A scalar `k` in [0, 1] controls how many Jacobian rows the generation
//! process sees. The condition vector flattens the first `floor(k * M)` rows
//! of `H` row-major, then zero-pads or truncates to `c_dim` (the flattened
//! length exceeds `c_dim = M` for most `k`, so truncation keeps the earliest
//! entries).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// MITRE ATT&CK ICS sub-technique labels along the knowledge axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MitreLabel {
    /// k = 0: drive-by compromise.
    T0817,
    /// k = 0.5: network sniffing.
    T0842,
    /// k = 1: program download.
    T0843,
    Interpolated,
}

impl std::fmt::Display for MitreLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MitreLabel::T0817 => "T0817",
            MitreLabel::T0842 => "T0842",
            MitreLabel::T0843 => "T0843",
            MitreLabel::Interpolated => "interpolated",
        };
        f.write_str(s)
    }
}

/// Maps a knowledge level to its MITRE label.
pub fn knowledge_to_mitre(k: f64) -> MitreLabel {
    if (k - 0.0).abs() < 1e-12 {
        MitreLabel::T0817
    } else if (k - 0.5).abs() < 1e-12 {
        MitreLabel::T0842
    } else if (k - 1.0).abs() < 1e-12 {
        MitreLabel::T0843
    } else {
        MitreLabel::Interpolated
    }
}

/// One attacker-knowledge level with its condition vector.
#[derive(Debug, Clone)]
pub struct KnowledgeCondition {
    pub k: f64,
    pub vector: DVector<f64>,
    pub mitre: MitreLabel,
}

impl KnowledgeCondition {
    /// Zero knowledge with an all-zero condition vector.
    pub fn zero(c_dim: usize) -> Self {
        Self {
            k: 0.0,
            vector: DVector::zeros(c_dim),
            mitre: MitreLabel::T0817,
        }
    }

    pub fn c_dim(&self) -> usize {
        self.vector.len()
    }

    /// Number of H rows revealed at this level for an M-row Jacobian.
    pub fn revealed_rows(&self, m: usize) -> usize {
        ((self.k * m as f64).floor() as usize).min(m)
    }
}

/// Builds the condition vector from the first `floor(k * M)` rows of `H`.
pub fn build_condition_vector(h: &DMatrix<f64>, k: f64, c_dim: usize) -> Result<KnowledgeCondition> {
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Validation(format!("knowledge k = {k} outside [0, 1]")));
    }
    let m = h.nrows();
    let rows = ((k * m as f64).floor() as usize).min(m);
    let mut flat = Vec::with_capacity(rows * h.ncols());
    for i in 0..rows {
        for j in 0..h.ncols() {
            flat.push(h[(i, j)]);
        }
    }
    flat.resize(c_dim, 0.0); // pads short vectors, truncates long ones
    Ok(KnowledgeCondition {
        k,
        vector: DVector::from_vec(flat),
        mitre: knowledge_to_mitre(k),
    })
}
