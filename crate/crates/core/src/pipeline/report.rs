//! Human-readable summary and plot-data emission for a finished campaign.

use std::path::Path;

use super::campaign::{CampaignResult, SampleStatus};
use super::PipelineError;
use crate::rng::stream_rng;
use rand::Rng;

/// Writes band.csv, sobol.csv, validation.csv, summary.txt, and timing.txt.
pub fn write_report(result: &CampaignResult, report_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(report_dir)?;
    std::fs::write(report_dir.join("band.csv"), band_csv(result))?;
    std::fs::write(report_dir.join("sobol.csv"), sobol_csv(result))?;
    std::fs::write(report_dir.join("validation.csv"), validation_csv(result)?)?;
    std::fs::write(report_dir.join("summary.txt"), summary_text(result))?;
    std::fs::write(report_dir.join("timing.txt"), timing_text(result))?;
    Ok(())
}

/// Mean curve with a one-standard-deviation band.
fn band_csv(result: &CampaignResult) -> String {
    let mut out = String::from("strain,mean_mpa,std_mpa,lo_mpa,hi_mpa\n");
    for (i, &strain) in result.model.strain_grid.iter().enumerate() {
        let (mean, var) = result.moments[i];
        let std = var.max(0.0).sqrt();
        out.push_str(&format!(
            "{strain},{mean},{std},{},{}\n",
            mean - std,
            mean + std
        ));
    }
    out
}

/// First-order and total Sobol indices per input at each reported offset.
fn sobol_csv(result: &CampaignResult) -> String {
    let mut out = String::from("offset_strain,strain,component,first_order,total\n");
    for stat in &result.offset_stats {
        let Some(idx) = stat.strain_index else {
            out.push_str(&format!(
                "{},unreached,all,undefined (offset not reached),undefined (offset not reached)\n",
                stat.offset
            ));
            continue;
        };
        let strain = result.model.strain_grid[idx];
        match &result.sobol[idx] {
            Some(point) => {
                for k in 0..point.first_order.len() {
                    out.push_str(&format!(
                        "{},{strain},{},{},{}\n",
                        stat.offset,
                        result.model.input_name(k),
                        point.first_order[k],
                        point.total[k]
                    ));
                }
            }
            None => {
                out.push_str(&format!(
                    "{},{strain},all,undefined (zero variance),undefined (zero variance)\n",
                    stat.offset
                ));
            }
        }
    }
    out
}

/// Simulated-vs-predicted overlay for up to eight validation samples.
fn validation_csv(result: &CampaignResult) -> Result<String, PipelineError> {
    let mut chosen: Vec<usize> = result.validation_indices.clone();
    let mut rng = stream_rng(result.config.seed, "report-validation-picks", 0);
    for i in (1..chosen.len()).rev() {
        let j = rng.gen_range(0..=i);
        chosen.swap(i, j);
    }
    chosen.truncate(8);
    chosen.sort_unstable();

    let mut out = String::from("sample,strain,simulated_mpa,predicted_mpa\n");
    for &idx in &chosen {
        let curve = result.curves[idx]
            .as_ref()
            .expect("validation samples simulated successfully");
        let predicted =
            crate::pce::predict(&result.model, &result.samples[idx].raw_percent)?;
        for (i, &strain) in result.model.strain_grid.iter().enumerate() {
            out.push_str(&format!(
                "{idx},{strain},{},{}\n",
                curve.stress[i], predicted[i]
            ));
        }
    }
    Ok(out)
}

fn summary_text(result: &CampaignResult) -> String {
    let mut out = String::new();
    let n_failed = result
        .samples
        .iter()
        .filter(|s| matches!(s.status, SampleStatus::Failed { .. }))
        .count();
    out.push_str("Texture uncertainty campaign summary\n");
    out.push_str("====================================\n\n");
    out.push_str(&format!(
        "samples: {} total, {} failed; train/validation split {}/{}\n",
        result.samples.len(),
        n_failed,
        result.train_indices.len(),
        result.validation_indices.len()
    ));
    out.push_str(&format!(
        "surrogate: degree {} over {} inputs, {} basis terms, {} strain points\n\n",
        result.model.max_degree,
        result.model.input_spec.n_inputs(),
        result.model.n_basis(),
        result.model.n_outputs()
    ));

    out.push_str(&format!(
        "validation R^2: min {:.6}, mean {:.6}; overall RMSE {:.4} MPa\n\n",
        result.validation.min_r2, result.validation.mean_r2, result.validation.overall_rmse
    ));

    out.push_str("offset stresses under texture variability (surrogate Monte Carlo):\n");
    out.push_str("  offset    mean (MPa)    min (MPa)    max (MPa)\n");
    for stat in &result.offset_stats {
        out.push_str(&format!(
            "  {:<9} {:<13.2} {:<12.2} {:<12.2}\n",
            format!("{:.1}%", stat.offset * 100.0),
            stat.mean,
            stat.min,
            stat.max
        ));
    }
    out.push('\n');

    // input ranking by total Sobol index at the first (yield) offset
    if let Some(stat) = result.offset_stats.first() {
        match stat.strain_index.and_then(|idx| result.sobol[idx].as_ref()) {
            Some(point) => {
                let mut ranked: Vec<(usize, f64)> = point
                    .total
                    .iter()
                    .copied()
                    .enumerate()
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
                out.push_str(&format!(
                    "texture-component ranking by total Sobol index at the {:.1}% offset:\n",
                    stat.offset * 100.0
                ));
                for (rank, (k, total)) in ranked.iter().enumerate() {
                    out.push_str(&format!(
                        "  {}. {:<8} total {:.4}  first-order {:.4}\n",
                        rank + 1,
                        result.model.input_name(*k),
                        total,
                        point.first_order[*k]
                    ));
                }
            }
            None => {
                out.push_str("Sobol ranking at the yield point: undefined (zero variance)\n");
            }
        }
    }
    out
}

fn timing_text(result: &CampaignResult) -> String {
    let t = &result.timing;
    let per_sim = t.simulation_seconds / result.samples.len().max(1) as f64;
    let per_eval = t.surrogate_eval_seconds / t.surrogate_evals.max(1) as f64;
    let speedup = if per_eval > 0.0 { per_sim / per_eval } else { f64::INFINITY };
    format!(
        "simulation: {:.2} s total, {:.4} s per sample\n\
         surrogate fit: {:.3} s\n\
         surrogate evaluation: {:.3} s for {} draws ({:.2e} s each)\n\
         surrogate-vs-simulation wall-clock ratio: {:.1}x\n",
        t.simulation_seconds, per_sim, t.surrogate_fit_seconds, t.surrogate_eval_seconds,
        t.surrogate_evals, per_eval, speedup
    )
}
