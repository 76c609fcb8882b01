//! DC grid cases, measurement models, and synthetic corpora.
//!
//! A [`GridCase`] describes one testbed (buses, branches, base injections,
//! measurement configuration). [`build_measurement_model`] turns it into the
//! measurement Jacobian `H` (one row per configured sensor, reference angle
//! eliminated) with a diagonal noise covariance. [`synthesize_corpus`] draws
//! load scenarios, solves the reduced susceptance system for the states, and
//! attaches ground-truth stealthy injections `c = H delta`.
//!
//! Case files use a small JSON schema (see `cases/`); a minimal
//! MATPOWER-style text subset is accepted as alternate input. Bus and branch
//! ids in both formats are 1-based, matching the published case data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::error::{Error, Result};

/// One branch of the network, 0-based endpoints, reactance in p.u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

/// A measurement descriptor: a branch power flow or a bus power injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// Power flow on the branch with this 0-based index.
    Flow(usize),
    /// Net power injection at the bus with this 0-based index.
    Injection(usize),
}

/// A validated testbed description.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub name: String,
    pub n_buses: usize,
    /// 0-based reference bus.
    pub reference_bus: usize,
    pub branches: Vec<Branch>,
    /// Per-bus net real power in MW.
    pub base_injections: Vec<f64>,
    pub measurements: Vec<Measurement>,
    /// MVA base used to convert injections to per-unit.
    pub base_mva: f64,
}

impl GridCase {
    /// Checks every structural invariant: endpoint validity, positive
    /// reactances, reference-bus membership, connectivity, and measurement
    /// descriptor validity.
    pub fn validate(&self) -> Result<()> {
        if self.n_buses < 2 {
            return Err(Error::Validation("case needs at least 2 buses".into()));
        }
        if self.reference_bus >= self.n_buses {
            return Err(Error::Validation(format!(
                "reference bus {} outside 1..={}",
                self.reference_bus + 1,
                self.n_buses
            )));
        }
        if self.base_injections.len() != self.n_buses {
            return Err(Error::Validation(format!(
                "{} injection entries for {} buses",
                self.base_injections.len(),
                self.n_buses
            )));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.from >= self.n_buses || b.to >= self.n_buses || b.from == b.to {
                return Err(Error::Validation(format!(
                    "branch {} has invalid endpoints {}-{}",
                    i + 1,
                    b.from + 1,
                    b.to + 1
                )));
            }
            if !(b.x > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {} has non-positive reactance {}",
                    i + 1,
                    b.x
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Validation("branch graph is not connected".into()));
        }
        for (i, m) in self.measurements.iter().enumerate() {
            match *m {
                Measurement::Flow(b) if b >= self.branches.len() => {
                    return Err(Error::Validation(format!(
                        "measurement {} references branch {} of {}",
                        i + 1,
                        b + 1,
                        self.branches.len()
                    )));
                }
                Measurement::Injection(bus) if bus >= self.n_buses => {
                    return Err(Error::Validation(format!(
                        "measurement {} references bus {} of {}",
                        i + 1,
                        bus + 1,
                        self.n_buses
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_buses];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for b in &self.branches {
                for (a, c) in [(b.from, b.to), (b.to, b.from)] {
                    if a == u && !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Measurement count of the configured sensor set.
    pub fn measurement_count(&self) -> usize {
        self.measurements.len()
    }

    /// Ordered list of non-reference buses (the state vector layout).
    pub fn state_buses(&self) -> Vec<usize> {
        (0..self.n_buses).filter(|&b| b != self.reference_bus).collect()
    }
}

/// DC measurement model: Jacobian, diagonal noise covariance, labels.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    /// M x (N-1) measurement Jacobian in p.u. susceptance units.
    pub h: DMatrix<f64>,
    /// Diagonal of the M x M noise covariance (strictly positive).
    pub r_diag: DVector<f64>,
    pub labels: Vec<String>,
}

impl MeasurementModel {
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// State dimension N-1.
    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// Sets a homoscedastic noise covariance R = sigma^2 I.
    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        assert!(sigma > 0.0, "noise sigma must be positive");
        self.r_diag = DVector::from_element(self.m(), sigma * sigma);
        self
    }
}

// ---------------------------------------------------------------------------
// Case parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct JsonBranch {
    from: usize,
    to: usize,
    x: f64,
}

#[derive(Deserialize)]
struct JsonMeasurement {
    #[serde(rename = "type")]
    kind: String,
    id: usize,
}

#[derive(Deserialize)]
struct JsonCase {
    #[serde(default)]
    name: Option<String>,
    n_buses: usize,
    reference_bus: usize,
    branches: Vec<JsonBranch>,
    injections: Vec<f64>,
    measurements: Vec<JsonMeasurement>,
    #[serde(default)]
    base_mva: Option<f64>,
}

/// Parses case-file content: JSON (primary schema) or a minimal
/// MATPOWER-style bus/branch table subset.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let trimmed = text.trim_start();
    let case = if trimmed.starts_with('{') {
        parse_case_json(text)?
    } else {
        parse_case_matpower(text)?
    };
    case.validate()?;
    Ok(case)
}

fn parse_case_json(text: &str) -> Result<GridCase> {
    // Surface unknown top-level keys before strict parsing.
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(text) {
        if let Some(map) = value.as_object() {
            const KNOWN: [&str; 7] = [
                "name",
                "n_buses",
                "reference_bus",
                "branches",
                "injections",
                "measurements",
                "base_mva",
            ];
            for key in map.keys() {
                if !KNOWN.contains(&key.as_str()) {
                    log::warn!("ignoring unknown case field `{key}`");
                }
            }
        }
    }
    let raw: JsonCase = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if raw.reference_bus == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "bus ids are 1-based; reference_bus 0 is invalid".into(),
        });
    }
    let mut measurements = Vec::with_capacity(raw.measurements.len());
    for (i, m) in raw.measurements.iter().enumerate() {
        if m.id == 0 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("measurement {} has 0 id; ids are 1-based", i + 1),
            });
        }
        measurements.push(match m.kind.as_str() {
            "flow" => Measurement::Flow(m.id - 1),
            "injection" => Measurement::Injection(m.id - 1),
            other => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown measurement type `{other}`"),
                })
            }
        });
    }
    let branches = raw
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if b.from == 0 || b.to == 0 {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("branch {} uses 0-based bus id; ids are 1-based", i + 1),
                });
            }
            Ok(Branch {
                from: b.from - 1,
                to: b.to - 1,
                x: b.x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridCase {
        name: raw.name.unwrap_or_else(|| "case".into()),
        n_buses: raw.n_buses,
        reference_bus: raw.reference_bus - 1,
        branches,
        base_injections: raw.injections,
        measurements,
        base_mva: raw.base_mva.unwrap_or(100.0),
    })
}

/// Minimal MATPOWER-style subset: `mpc.baseMVA`, `mpc.bus` rows
/// (`bus_i type Pd ...`, type 3 marks the reference) and `mpc.branch` rows
/// (`fbus tbus r x ...`). Net injection is taken as -Pd. The measurement set
/// defaults to all branch flows plus all bus injections.
fn parse_case_matpower(text: &str) -> Result<GridCase> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Bus,
        Branch,
    }
    let mut section = Section::None;
    let mut buses: Vec<(usize, usize, f64)> = Vec::new(); // (id, type, pd)
    let mut branches_raw: Vec<(usize, usize, f64)> = Vec::new();
    let mut base_mva = 100.0;
    let mut name = String::from("mpc");

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('%').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lno = lineno + 1;
        if let Some(rest) = line.strip_prefix("function mpc =") {
            name = rest.trim().to_string();
            continue;
        }
        if let Some(rest) = line.strip_prefix("mpc.baseMVA") {
            let v = rest.trim_start_matches([' ', '=']).trim_end_matches(';').trim();
            base_mva = v.parse().map_err(|_| Error::Parse {
                line: lno,
                msg: format!("bad baseMVA `{v}`"),
            })?;
            continue;
        }
        if line.starts_with("mpc.bus") {
            section = Section::Bus;
            continue;
        }
        if line.starts_with("mpc.branch") {
            section = Section::Branch;
            continue;
        }
        if line.starts_with("mpc.") {
            log::warn!("ignoring unknown matpower section at line {lno}");
            section = Section::None;
            continue;
        }
        if line.starts_with("];") || line == "]" {
            section = Section::None;
            continue;
        }
        let fields: Vec<f64> = line
            .trim_end_matches(';')
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: lno,
                    msg: format!("bad numeric field `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match section {
            Section::Bus => {
                if fields.len() < 3 {
                    return Err(Error::Parse {
                        line: lno,
                        msg: "bus row needs at least bus_i, type, Pd".into(),
                    });
                }
                buses.push((fields[0] as usize, fields[1] as usize, fields[2]));
            }
            Section::Branch => {
                if fields.len() < 4 {
                    return Err(Error::Parse {
                        line: lno,
                        msg: "branch row needs at least fbus, tbus, r, x".into(),
                    });
                }
                branches_raw.push((fields[0] as usize, fields[1] as usize, fields[3]));
            }
            Section::None => {
                return Err(Error::Parse {
                    line: lno,
                    msg: format!("unexpected content outside a table: `{line}`"),
                });
            }
        }
    }
    if buses.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no mpc.bus table found".into(),
        });
    }
    buses.sort_by_key(|&(id, _, _)| id);
    let n_buses = buses.len();
    let reference_bus = buses
        .iter()
        .position(|&(_, t, _)| t == 3)
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "no reference bus (type 3) in mpc.bus".into(),
        })?;
    let base_injections: Vec<f64> = buses.iter().map(|&(_, _, pd)| -pd).collect();
    let id_index = |id: usize| -> Result<usize> {
        buses
            .iter()
            .position(|&(b, _, _)| b == id)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("branch references unknown bus {id}"),
            })
    };
    let mut branches = Vec::with_capacity(branches_raw.len());
    for &(f, t, x) in &branches_raw {
        branches.push(Branch {
            from: id_index(f)?,
            to: id_index(t)?,
            x,
        });
    }
    let mut measurements: Vec<Measurement> =
        (0..branches.len()).map(Measurement::Flow).collect();
    measurements.extend((0..n_buses).map(Measurement::Injection));
    Ok(GridCase {
        name,
        n_buses,
        reference_bus,
        branches,
        base_injections,
        measurements,
        base_mva,
    })
}

// ---------------------------------------------------------------------------
// Measurement model
// ---------------------------------------------------------------------------

/// Builds the DC measurement Jacobian for the configured sensor set.
///
/// Flow rows implement `(theta_i - theta_j) / x_ij`; injection rows sum the
/// incident flows. The reference angle is eliminated, so `H` is
/// M x (N-1) and must have full column rank for the state to be observable.
pub fn build_measurement_model(case: &GridCase) -> Result<MeasurementModel> {
    case.validate()?;
    let state_buses = case.state_buses();
    let col_of = |bus: usize| -> Option<usize> { state_buses.iter().position(|&b| b == bus) };
    let m = case.measurements.len();
    let n_state = state_buses.len();
    if m == 0 {
        return Err(Error::Validation("empty measurement configuration".into()));
    }
    let mut h = DMatrix::zeros(m, n_state);
    let mut labels = Vec::with_capacity(m);
    let mut seen_label_count: std::collections::HashMap<String, usize> =
        std::collections::HashMap::new();
    for (row, meas) in case.measurements.iter().enumerate() {
        let base_label = match *meas {
            Measurement::Flow(bidx) => {
                let b = case.branches[bidx];
                let susceptance = 1.0 / b.x;
                if let Some(c) = col_of(b.from) {
                    h[(row, c)] += susceptance;
                }
                if let Some(c) = col_of(b.to) {
                    h[(row, c)] -= susceptance;
                }
                format!("flow:{}-{}", b.from + 1, b.to + 1)
            }
            Measurement::Injection(bus) => {
                for br in &case.branches {
                    let (i, j) = (br.from, br.to);
                    if i != bus && j != bus {
                        continue;
                    }
                    let other = if i == bus { j } else { i };
                    let susceptance = 1.0 / br.x;
                    if let Some(c) = col_of(bus) {
                        h[(row, c)] += susceptance;
                    }
                    if let Some(c) = col_of(other) {
                        h[(row, c)] -= susceptance;
                    }
                }
                format!("inj:{}", bus + 1)
            }
        };
        let count = seen_label_count.entry(base_label.clone()).or_insert(0);
        *count += 1;
        labels.push(if *count == 1 {
            base_label
        } else {
            format!("{base_label}#{count}")
        });
    }

    // Observability check: rank(H) must equal N-1.
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < n_state {
        // Name the least-observable state direction from the null space.
        let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
        let null_dir: Vec<f64> = v_t.row(v_t.nrows() - 1).iter().cloned().collect();
        let worst = null_dir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| state_buses[i] + 1)
            .unwrap_or(0);
        return Err(Error::Observability(format!(
            "rank {} < {} state dimensions; bus {} angle is in the unobservable direction",
            rank, n_state, worst
        )));
    }
    Ok(MeasurementModel {
        h,
        r_diag: DVector::from_element(m, 1.0),
        labels,
    })
}

// ---------------------------------------------------------------------------
// Corpus synthesis and chronological split
// ---------------------------------------------------------------------------

/// Parameters for [`synthesize_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusParams {
    pub n: usize,
    /// Measurement noise std in p.u.
    pub noise_sigma: f64,
    /// Multiplicative per-bus load perturbation half-width.
    pub load_spread: f64,
    /// Std of the fixed sensor-offset vector; `None` uses
    /// 0.05 * mean |noise-free z|.
    pub bias_sigma: Option<f64>,
    /// Mean of the state-bias draw, applied to every angle (radians).
    pub attack_mean_scale: f64,
    /// Std of the state-bias draw (radians).
    pub attack_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n: 2000,
            noise_sigma: 0.004,
            load_spread: 0.2,
            bias_sigma: None,
            attack_mean_scale: 0.03,
            attack_sigma: 0.015,
            seed: 42,
        }
    }
}

/// A synthesized corpus: clean measurements, ground-truth stealthy
/// injections, underlying states, and the fixed sensor-offset vector.
///
/// `c_real` rows are exactly `H delta`; the offset `b` is stored separately
/// and only enters the measurements (and the *observed* attack recordings,
/// see [`Corpus::observed_attacks`]).
#[derive(Debug, Clone)]
pub struct Corpus {
    /// n x M clean measurements (offset and noise included).
    pub z: DMatrix<f64>,
    /// n x M ground-truth stealthy injections, rows in col(H).
    pub c_real: DMatrix<f64>,
    /// n x (N-1) underlying states.
    pub x_true: DMatrix<f64>,
    /// Fixed per-sensor offset vector.
    pub bias: DVector<f64>,
    /// Strictly increasing chronological index.
    pub t: Vec<usize>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Attack recordings as captured through the (offset-bearing) sensors:
    /// `c_real + b` per row. This is the matrix generators train on, and its
    /// mean generically lies outside col(H).
    pub fn observed_attacks(&self) -> DMatrix<f64> {
        add_bias(&self.c_real, &self.bias)
    }

    /// CSV export: `t, z_1..z_M, c_1..c_M`.
    pub fn to_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let m = self.z.ncols();
        write!(w, "t")?;
        for j in 1..=m {
            write!(w, ",z_{j}")?;
        }
        for j in 1..=m {
            write!(w, ",c_{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{}", self.t[i])?;
            for j in 0..m {
                write!(w, ",{}", self.z[(i, j)])?;
            }
            for j in 0..m {
                write!(w, ",{}", self.c_real[(i, j)])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    fn slice(&self, range: std::ops::Range<usize>) -> CorpusSlice {
        CorpusSlice {
            z: self.z.rows(range.start, range.len()).into_owned(),
            c_real: self.c_real.rows(range.start, range.len()).into_owned(),
            x_true: self.x_true.rows(range.start, range.len()).into_owned(),
            bias: self.bias.clone(),
            t: self.t[range].to_vec(),
        }
    }
}

fn add_bias(c: &DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
    let mut out = c.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] += bias[j];
        }
    }
    out
}

/// A contiguous chronological slice of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusSlice {
    pub z: DMatrix<f64>,
    pub c_real: DMatrix<f64>,
    pub x_true: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub t: Vec<usize>,
}

impl CorpusSlice {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// See [`Corpus::observed_attacks`].
    pub fn observed_attacks(&self) -> DMatrix<f64> {
        add_bias(&self.c_real, &self.bias)
    }
}

/// Generator-training partition (60% head of the corpus).
#[derive(Debug, Clone)]
pub struct GenPartition(pub CorpusSlice);

/// Detector-calibration partition. Threshold and scaler calibration APIs
/// accept only this type, which pins "frozen before any attack data" at the
/// type level.
#[derive(Debug, Clone)]
pub struct DetPartition(pub CorpusSlice);

/// Held-out evaluation partition.
#[derive(Debug, Clone)]
pub struct EvalPartition(pub CorpusSlice);

/// The three chronological partitions of one corpus.
#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub gen: GenPartition,
    pub det: DetPartition,
    pub eval: EvalPartition,
}

/// Synthesizes a measurement/attack corpus from a case.
///
/// States come from per-bus uniform load perturbations solved through the
/// reduced DC susceptance system; `z = H x + b + eps`; ground-truth
/// injections are `H delta` with `delta ~ N(mean_scale * 1, sigma^2 I)`.
/// Fully deterministic given `params.seed`.
pub fn synthesize_corpus(
    model: &MeasurementModel,
    case: &GridCase,
    params: &CorpusParams,
) -> Result<Corpus> {
    if params.n < 10 {
        return Err(Error::Protocol(format!(
            "corpus needs at least 10 samples, got {}",
            params.n
        )));
    }
    for (name, v) in [
        ("noise_sigma", params.noise_sigma),
        ("load_spread", params.load_spread),
        ("attack_sigma", params.attack_sigma),
    ] {
        if v < 0.0 {
            return Err(Error::Protocol(format!("{name} must be non-negative")));
        }
    }
    let state_buses = case.state_buses();
    let n_state = state_buses.len();
    let m = model.m();

    // Reduced susceptance matrix B' over non-reference buses.
    let mut b_red: DMatrix<f64> = DMatrix::zeros(n_state, n_state);
    let col_of = |bus: usize| state_buses.iter().position(|&b| b == bus);
    for br in &case.branches {
        let s = 1.0 / br.x;
        let ci = col_of(br.from);
        let cj = col_of(br.to);
        if let Some(i) = ci {
            b_red[(i, i)] += s;
        }
        if let Some(j) = cj {
            b_red[(j, j)] += s;
        }
        if let (Some(i), Some(j)) = (ci, cj) {
            b_red[(i, j)] -= s;
            b_red[(j, i)] -= s;
        }
    }
    let lu = b_red.clone().lu();
    if lu.determinant().abs() < 1e-12 {
        return Err(Error::Validation(
            "reduced susceptance matrix is singular; topology does not support DC solution".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = StandardNormal;

    // Load scenarios -> states.
    let base_pu: Vec<f64> = state_buses
        .iter()
        .map(|&b| case.base_injections[b] / case.base_mva)
        .collect();
    let mut x_true = DMatrix::zeros(params.n, n_state);
    for i in 0..params.n {
        let mut p = DVector::zeros(n_state);
        for (jj, &bp) in base_pu.iter().enumerate() {
            let u: f64 = rng.random_range(1.0 - params.load_spread..=1.0 + params.load_spread);
            p[jj] = bp * u;
        }
        let theta = lu
            .solve(&p)
            .ok_or_else(|| Error::Validation("reduced susceptance solve failed".into()))?;
        x_true.row_mut(i).copy_from(&theta.transpose());
    }

    // Noise-free measurements first, to size the sensor offsets.
    let z_clean = &x_true * model.h.transpose();
    let mean_abs_z = z_clean.iter().map(|v| v.abs()).sum::<f64>() / (z_clean.len() as f64);
    let bias_sigma = params.bias_sigma.unwrap_or(0.05 * mean_abs_z);
    if bias_sigma < 0.0 {
        return Err(Error::Protocol("bias_sigma must be non-negative".into()));
    }
    let bias = DVector::from_fn(m, |_, _| {
        let g: f64 = normal.sample(&mut rng);
        g * bias_sigma
    });

    let mut z = z_clean;
    for i in 0..params.n {
        for j in 0..m {
            let g: f64 = normal.sample(&mut rng);
            z[(i, j)] += bias[j] + g * params.noise_sigma;
        }
    }

    // Ground-truth stealthy injections.
    let mut c_real = DMatrix::zeros(params.n, m);
    for i in 0..params.n {
        let delta = DVector::from_fn(n_state, |_, _| {
            let g: f64 = normal.sample(&mut rng);
            params.attack_mean_scale + g * params.attack_sigma
        });
        let c = &model.h * &delta;
        c_real.row_mut(i).copy_from(&c.transpose());
    }

    Ok(Corpus {
        z,
        c_real,
        x_true,
        bias,
        t: (0..params.n).collect(),
    })
}

/// Splits a corpus into three contiguous, order-preserving partitions.
///
/// Sizes use floor rounding with the remainder assigned to the last slice.
pub fn chronological_split(corpus: &Corpus, fractions: (f64, f64, f64)) -> Result<SplitCorpus> {
    let (f1, f2, f3) = fractions;
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::Protocol(format!(
            "split fractions must sum to 1, got {}",
            f1 + f2 + f3
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Protocol("cannot split an empty corpus".into()));
    }
    let n = corpus.len();
    let n1 = (n as f64 * f1).floor() as usize;
    let n2 = (n as f64 * f2).floor() as usize;
    let n3 = n - n1 - n2;
    if n1 == 0 || n2 == 0 || n3 == 0 {
        return Err(Error::Protocol(format!(
            "split produced an empty slice: sizes ({n1}, {n2}, {n3})"
        )));
    }
    Ok(SplitCorpus {
        gen: GenPartition(corpus.slice(0..n1)),
        det: DetPartition(corpus.slice(n1..n1 + n2)),
        eval: EvalPartition(corpus.slice(n1 + n2..n)),
    })
}

/// Loads one of the bundled case fixtures by short name.
pub fn builtin_case(name: &str) -> Result<GridCase> {
    match name {
        "ieee14" => parse_case(include_str!("../cases/ieee14.json")),
        "ieee30" => parse_case(include_str!("../cases/ieee30.json")),
        other => Err(Error::Validation(format!(
            "unknown builtin case `{other}` (available: ieee14, ieee30)"
        ))),
    }
}
