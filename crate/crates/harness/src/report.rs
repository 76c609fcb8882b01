//! Deterministic report emission.
//!
//! Every writer formats floats through `Display` (shortest round-trip
//! representation) and walks rows in their already-sorted order, so a fixed
//! config produces byte-identical files. Each run stamps a `manifest.json`
//! with the schema version and the effective config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::{ExperimentConfig, ReportFormat};
use crate::runner::{
    AblationResult, BlockAResult, BlockBResult, BlockCResult, CellFailure, LemmaResult, RunRecord,
};

pub const SCHEMA_VERSION: u32 = 1;

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let manifest = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
    });
    write_file(&path, &format!("{:#}\n", manifest))?;
    Ok(path)
}

fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("model,seed,pass,k,mmd,w1,eps_bdd,eps_ae,eps_if,phi,psi,impact\n");
    for r in records {
        let rec = &r.record;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            rec.model,
            rec.seed,
            r.pass,
            fmt(rec.k),
            fmt(rec.mmd),
            fmt(rec.w1),
            fmt(rec.eps_bdd),
            fmt(rec.eps_ae),
            fmt(rec.eps_if),
            fmt(rec.phi),
            fmt(rec.psi),
            fmt(rec.impact),
        ));
    }
    out
}

fn failures_csv(failures: &[CellFailure]) -> String {
    let mut out = String::from("model,seed,error\n");
    for f in failures {
        let sanitized = f.error.replace([',', '\n'], ";");
        out.push_str(&format!("{},{},{}\n", f.model, f.seed, sanitized));
    }
    out
}

pub fn write_block_a(
    dir: &Path,
    result: &BlockAResult,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    match format {
        ReportFormat::Csv => {
            let records = dir.join("records.csv");
            write_file(&records, &records_csv(&result.records))?;
            written.push(records);

            let mut summary = String::from(
                "model,k,n_runs,mmd_mean,mmd_sd,w1_mean,w1_sd,eps_bdd_mean,eps_bdd_sd,\
                 eps_ae_mean,eps_ae_sd,eps_if_mean,eps_if_sd,phi_mean,phi_sd,psi_mean,psi_sd,\
                 impact_mean,impact_sd\n",
            );
            for s in &result.summaries {
                summary.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    s.model,
                    fmt(s.k),
                    s.n_runs,
                    fmt(s.mmd_mean),
                    fmt(s.mmd_sd),
                    fmt(s.w1_mean),
                    fmt(s.w1_sd),
                    fmt(s.eps_bdd_mean),
                    fmt(s.eps_bdd_sd),
                    fmt(s.eps_ae_mean),
                    fmt(s.eps_ae_sd),
                    fmt(s.eps_if_mean),
                    fmt(s.eps_if_sd),
                    fmt(s.phi_mean),
                    fmt(s.phi_sd),
                    fmt(s.psi_mean),
                    fmt(s.psi_sd),
                    fmt(s.impact_mean),
                    fmt(s.impact_sd),
                ));
            }
            let summary_path = dir.join("summary.csv");
            write_file(&summary_path, &summary)?;
            written.push(summary_path);

            if let Some(front) = &result.front {
                let mut pareto = String::from("model,non_dominated,dominance_count\n");
                for (model, count) in &front.dominance_count {
                    pareto.push_str(&format!(
                        "{},{},{}\n",
                        model,
                        front.non_dominated.contains(model),
                        count
                    ));
                }
                let pareto_path = dir.join("pareto.csv");
                write_file(&pareto_path, &pareto)?;
                written.push(pareto_path);
            }
        }
        ReportFormat::Json => {
            let records = dir.join("records.json");
            let body = serde_json::json!({
                "records": result.records,
                "summaries": result.summaries,
                "pareto": result.front.as_ref().map(|f| serde_json::json!({
                    "non_dominated": f.non_dominated,
                    "dominance_count": f.dominance_count,
                })),
            });
            write_file(&records, &format!("{:#}\n", body))?;
            written.push(records);
        }
    }

    if !result.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_file(&failures, &failures_csv(&result.failures))?;
        written.push(failures);
    }
    Ok(written)
}

pub fn write_block_b(
    dir: &Path,
    result: &BlockBResult,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let mut rows = String::from("model,k,seed,w1,phi\n");
            for r in &result.rows {
                rows.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.model,
                    fmt(r.k),
                    r.seed,
                    fmt(r.w1),
                    fmt(r.phi)
                ));
            }
            let rows_path = dir.join("ksweep.csv");
            write_file(&rows_path, &rows)?;
            written.push(rows_path);

            let mut tests = String::from("model,statistic,p_value,eta_squared,n\n");
            for t in &result.tests {
                tests.push_str(&format!(
                    "{},{},{},{},{}\n",
                    t.model,
                    fmt(t.statistic),
                    fmt(t.p_value),
                    fmt(t.eta_squared),
                    t.n
                ));
            }
            let tests_path = dir.join("kw_tests.csv");
            write_file(&tests_path, &tests)?;
            written.push(tests_path);
        }
        ReportFormat::Json => {
            let body = serde_json::json!({
                "rows": result.rows,
                "tests": result.tests,
                "notice": result.notice,
            });
            let path = dir.join("ksweep.json");
            write_file(&path, &format!("{:#}\n", body))?;
            written.push(path);
        }
    }
    if let Some(notice) = &result.notice {
        let path = dir.join("notice.txt");
        write_file(&path, &format!("{notice}\n"))?;
        written.push(path);
    }
    if !result.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_file(&failures, &failures_csv(&result.failures))?;
        written.push(failures);
    }
    Ok(written)
}

pub fn write_block_c(
    dir: &Path,
    result: &BlockCResult,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    // Attribution profiles are structured; they always go to JSON.
    let profiles: Vec<serde_json::Value> = result
        .profiles
        .iter()
        .map(|p| {
            serde_json::json!({
                "model": p.model,
                "seed": p.seed,
                "data_level": p.profile.data_level,
                "model_level": p.profile.model_level,
                "top5_data": p.profile.top5_data,
                "top5_model": p.profile.top5_model,
                "kappa": p.profile.kappa,
            })
        })
        .collect();
    let profiles_path = dir.join("profiles.json");
    write_file(
        &profiles_path,
        &format!("{:#}\n", serde_json::Value::Array(profiles)),
    )?;
    written.push(profiles_path);

    match format {
        ReportFormat::Csv => {
            let mut kappa = String::from("model,seed,kappa\n");
            for p in &result.profiles {
                kappa.push_str(&format!("{},{},{}\n", p.model, p.seed, fmt(p.kappa)));
            }
            let kappa_path = dir.join("kappa.csv");
            write_file(&kappa_path, &kappa)?;
            written.push(kappa_path);

            let mut blend = String::from("model,seed,t,kappa,mmd\n");
            for b in &result.blend {
                blend.push_str(&format!(
                    "{},{},{},{},{}\n",
                    b.model,
                    b.seed,
                    fmt(b.t),
                    fmt(b.kappa),
                    fmt(b.mmd)
                ));
            }
            let blend_path = dir.join("blended.csv");
            write_file(&blend_path, &blend)?;
            written.push(blend_path);
        }
        ReportFormat::Json => {
            let body = serde_json::json!({
                "kappa": result.profiles.iter().map(|p| serde_json::json!({
                    "model": p.model, "seed": p.seed, "kappa": p.kappa,
                })).collect::<Vec<_>>(),
                "blend": result.blend,
            });
            let path = dir.join("xai.json");
            write_file(&path, &format!("{:#}\n", body))?;
            written.push(path);
        }
    }
    if !result.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_file(&failures, &failures_csv(&result.failures))?;
        written.push(failures);
    }
    Ok(written)
}

pub fn write_lemma(dir: &Path, result: &LemmaResult, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let mut rows =
                String::from("model,seed,eps_bdd_broken,eps_bdd_harmonised,inflation_ratio\n");
            for r in &result.rows {
                rows.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.model,
                    r.seed,
                    fmt(r.eps_bdd_broken),
                    fmt(r.eps_bdd_harmonised),
                    fmt(r.inflation_ratio)
                ));
            }
            let path = dir.join("lemma.csv");
            write_file(&path, &rows)?;
            written.push(path);
        }
        ReportFormat::Json => {
            let path = dir.join("lemma.json");
            write_file(
                &path,
                &format!("{:#}\n", serde_json::json!({ "rows": result.rows })),
            )?;
            written.push(path);
        }
    }
    let leakage_path = dir.join("leakage.json");
    write_file(
        &leakage_path,
        &format!("{:#}\n", serde_json::to_value(&result.leakage)?),
    )?;
    written.push(leakage_path);
    if !result.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_file(&failures, &failures_csv(&result.failures))?;
        written.push(failures);
    }
    Ok(written)
}

pub fn write_ablation(
    dir: &Path,
    result: &AblationResult,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let mut rows = String::from("condition,model,seed,mmd_full,mmd_ablated,delta_mmd\n");
            for r in &result.rows {
                rows.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    result.condition,
                    r.model,
                    r.seed,
                    fmt(r.mmd_full),
                    fmt(r.mmd_ablated),
                    fmt(r.delta_mmd)
                ));
            }
            let path = dir.join("ablation.csv");
            write_file(&path, &rows)?;
            written.push(path);
        }
        ReportFormat::Json => {
            let path = dir.join("ablation.json");
            let body = serde_json::json!({
                "condition": result.condition,
                "front_dropped": result.front_dropped,
                "rows": result.rows,
            });
            write_file(&path, &format!("{:#}\n", body))?;
            written.push(path);
        }
    }
    if !result.failures.is_empty() {
        let failures = dir.join("failures.csv");
        write_file(&failures, &failures_csv(&result.failures))?;
        written.push(failures);
    }
    Ok(written)
}
