//! Experiment configuration: JSON-config mirror of every knob the runner
//! reads. Unknown fields are rejected so typos surface as config errors.

use serde::{Deserialize, Serialize};

use fdia_core::generators::TrainConfig;
use fdia_core::grid::CorpusParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n: usize,
    pub noise_sigma: f64,
    pub load_spread: f64,
    /// `null` selects the data-driven default (5% of mean |z|).
    pub bias_sigma: Option<f64>,
    pub attack_mean_scale: f64,
    pub attack_sigma: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let p = CorpusParams::default();
        Self {
            n: p.n,
            noise_sigma: p.noise_sigma,
            load_spread: p.load_spread,
            bias_sigma: p.bias_sigma,
            attack_mean_scale: p.attack_mean_scale,
            attack_sigma: p.attack_sigma,
            seed: p.seed,
        }
    }
}

impl CorpusConfig {
    pub fn to_params(&self) -> CorpusParams {
        CorpusParams {
            n: self.n,
            noise_sigma: self.noise_sigma,
            load_spread: self.load_spread,
            bias_sigma: self.bias_sigma,
            attack_mean_scale: self.attack_mean_scale,
            attack_sigma: self.attack_sigma,
            seed: self.seed,
        }
    }
}

/// One pool cell: a family plus its physics-informed output mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub family: String,
    #[serde(default = "default_mode")]
    pub pi_mode: String,
    /// TC families only: anneal the total-correlation weight.
    #[serde(default = "default_true")]
    pub warmup: bool,
}

fn default_mode() -> String {
    "off".into()
}

fn default_true() -> bool {
    true
}

impl CellConfig {
    pub fn new(family: &str, pi_mode: &str) -> Self {
        Self {
            family: family.into(),
            pi_mode: pi_mode.into(),
            warmup: true,
        }
    }

    /// Stable cell id used in reports: `family[:static]:mode`.
    pub fn label(&self) -> String {
        let base = if self.family == "tc_mmd_vae" && !self.warmup {
            "tc_mmd_vae_static".to_string()
        } else if self.family == "tc_mmd_vae" {
            "tc_mmd_vae_warm".to_string()
        } else {
            self.family.clone()
        };
        format!("{base}:{}", self.pi_mode)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_physics: bool,
    pub no_selection: bool,
    pub no_conditioning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format `{other}` (csv|json)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to a case file, or a builtin name (`ieee14`, `ieee30`).
    pub case: String,
    pub corpus: CorpusConfig,
    /// Block A roster.
    pub roster: Vec<CellConfig>,
    /// Block B representative cells.
    pub triplet: Vec<CellConfig>,
    pub k_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Fresh sampling passes per training seed.
    pub eval_passes: usize,
    pub evasion_mode: String,
    pub train: TrainConfig,
    pub gmm_components: usize,
    pub format: ReportFormat,
    pub ablation: AblationFlags,
    pub split: (f64, f64, f64),
    pub calibration_percentile: f64,
    /// Window half-width in per-feature standard deviations.
    pub physics_width_sigmas: f64,
    pub sliced_w1_directions: usize,
    pub blend_grid: Vec<f64>,
    pub ig_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let families = [
            "wgan",
            "mmd_vae",
            "tc_mmd_vae",
            "realnvp",
            "ddpm",
            "mmd_vae_wgan",
            "gmm",
            "hdelta_oracle",
        ];
        let mut roster = Vec::new();
        for f in families {
            roster.push(CellConfig::new(f, "off"));
            roster.push(CellConfig::new(f, "harmonised"));
        }
        // The static-beta TC cell completes the desk-scale pool.
        let mut static_tc = CellConfig::new("tc_mmd_vae", "off");
        static_tc.warmup = false;
        roster.push(static_tc);

        Self {
            case: "ieee14".into(),
            corpus: CorpusConfig::default(),
            roster,
            triplet: vec![
                CellConfig::new("mmd_vae", "off"),
                CellConfig::new("ddpm", "harmonised"),
                CellConfig::new("mmd_vae_wgan", "harmonised"),
                CellConfig::new("hdelta_oracle", "off"),
            ],
            k_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: vec![42, 43, 44, 45, 46],
            eval_passes: 5,
            evasion_mode: "isolated".into(),
            train: TrainConfig::default(),
            gmm_components: 3,
            format: ReportFormat::Csv,
            ablation: AblationFlags::default(),
            split: (0.6, 0.2, 0.2),
            calibration_percentile: 95.0,
            physics_width_sigmas: 3.0,
            sliced_w1_directions: 128,
            blend_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ig_steps: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            anyhow::bail!("config needs at least one seed");
        }
        if self.eval_passes == 0 {
            anyhow::bail!("eval_passes must be at least 1");
        }
        if self.k_grid.iter().any(|k| !(0.0..=1.0).contains(k)) {
            anyhow::bail!("k grid values must lie in [0, 1]");
        }
        if self.roster.is_empty() {
            anyhow::bail!("roster must not be empty");
        }
        for cell in self.roster.iter().chain(&self.triplet) {
            cell.family
                .parse::<fdia_core::generators::Family>()
                .map_err(|e| anyhow::anyhow!("bad roster family: {e}"))?;
            cell.pi_mode
                .parse::<fdia_core::physics::PiMode>()
                .map_err(|e| anyhow::anyhow!("bad roster mode: {e}"))?;
        }
        self.evasion_mode
            .parse::<fdia_core::estimation::EvasionMode>()
            .map_err(|e| anyhow::anyhow!("bad evasion mode: {e}"))?;
        self.train
            .validate()
            .map_err(|e| anyhow::anyhow!("bad train config: {e}"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = ExperimentConfig::from_json(r#"{"surprise": 1}"#).unwrap_err();
        assert!(err.to_string().contains("surprise"));
    }

    #[test]
    fn bad_family_rejected() {
        let cfg = r#"{"roster": [{"family": "nope"}]}"#;
        assert!(ExperimentConfig::from_json(cfg).is_err());
    }

    #[test]
    fn labels_distinguish_tc_variants() {
        let mut warm = CellConfig::new("tc_mmd_vae", "off");
        let mut stat = warm.clone();
        stat.warmup = false;
        warm.warmup = true;
        assert_eq!(warm.label(), "tc_mmd_vae_warm:off");
        assert_eq!(stat.label(), "tc_mmd_vae_static:off");
    }

    #[test]
    fn round_trip_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.seeds, cfg.seeds);
        assert_eq!(back.roster.len(), cfg.roster.len());
    }
}
