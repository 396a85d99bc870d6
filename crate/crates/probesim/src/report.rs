//! CSV and JSON emission for probe runs and experiments. One CSV per
//! figure family, amounts in integer msat, deterministic row order, so
//! identical runs produce identical bytes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::{error_class_label, MetricsReport};
use crate::prober::ProbeRun;

/// Top-level run summary, also printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub onions_total: u64,
    pub onions_usable_fraction: f64,
    pub channels_probed: u64,
    pub mean_info_coefficient: f64,
    pub simulated_ms: u64,
}

pub fn build_summary(run: &ProbeRun, report: &MetricsReport) -> RunSummary {
    let onions_total = run.log.onions_sent() as u64;
    let usable = run.log.usable_onions() as u64;
    RunSummary {
        onions_total,
        onions_usable_fraction: if onions_total == 0 {
            0.0
        } else {
            usable as f64 / onions_total as f64
        },
        channels_probed: run.probed_channels.len() as u64,
        mean_info_coefficient: report.mean_info_coefficient(),
        simulated_ms: run.simulated_ms,
    }
}

fn fmt_coeff(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_reports(dir: &Path, report: &MetricsReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;

    let mut timings = String::from("onion_id,hops,erring_hop,elapsed_ms,error_class\n");
    for row in &report.timings {
        let erring = row.erring_hop.map(|h| h.to_string()).unwrap_or_default();
        timings.push_str(&format!(
            "{},{},{},{},{}\n",
            row.onion_id,
            row.hops,
            erring,
            row.elapsed_ms,
            error_class_label(row.error_class)
        ));
    }
    fs::write(dir.join("timings.csv"), timings)?;

    let mut channel_times = String::from("channel,total_ms,probes\n");
    for row in &report.channel_times {
        channel_times.push_str(&format!("{},{},{}\n", row.channel, row.total_ms, row.probes));
    }
    fs::write(dir.join("channel_times.csv"), channel_times)?;

    let mut info = String::from("channel,capacity,b_min,b_max,coefficient,size_class\n");
    for row in &report.info_coeffs {
        info.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.channel,
            row.capacity_msat,
            row.b_min_msat,
            row.b_max_msat,
            fmt_coeff(row.coefficient),
            row.size_class.as_str()
        ));
    }
    fs::write(dir.join("info_coeffs.csv"), info)?;

    let mut balance = String::from("channel,capacity,balance_estimate,coefficient\n");
    for row in &report.balance_coeffs {
        balance.push_str(&format!(
            "{},{},{},{}\n",
            row.channel,
            row.capacity_msat,
            row.balance_estimate_msat,
            fmt_coeff(row.coefficient)
        ));
    }
    fs::write(dir.join("balance_coeffs.csv"), balance)?;

    let mut usage = String::from("channel,used_in_routes\n");
    for row in &report.usage {
        usage.push_str(&format!("{},{}\n", row.channel, row.used_in_routes));
    }
    fs::write(dir.join("usage.csv"), usage)?;

    let cost = &report.cost;
    let mut cost_csv = String::from(
        "committed_capital_msat,fees_paid_msat,run_duration_ms,lock_duration_ms,hanging_probes\n",
    );
    cost_csv.push_str(&format!(
        "{},{},{},{},{}\n",
        cost.committed_capital_msat,
        cost.fees_paid_msat,
        cost.run_duration_ms,
        cost.lock_duration_ms,
        cost.hanging_probes
    ));
    fs::write(dir.join("cost.csv"), cost_csv)?;

    Ok(())
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut file = fs::File::create(dir.join("summary.json"))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")
}

pub fn write_attack_matrix(
    dir: &Path,
    rows: &[crate::experiments::MatrixRow],
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from(
        "countermeasure,channels_probed,mean_info_coefficient,soundness_violations,soundness_violation_rate,mean_estimate_error\n",
    );
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.countermeasure,
            row.channels_probed,
            fmt_coeff(row.mean_info_coefficient),
            row.soundness_violations,
            fmt_coeff(row.soundness_violation_rate),
            fmt_coeff(row.mean_estimate_error)
        ));
    }
    fs::write(dir.join("attack_matrix.csv"), csv)
}

pub fn write_efficiency(dir: &Path, rows: &[crate::experiments::EfficiencyRow]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("seed,mode,payments,successes,success_rate,mean_attempts\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.seed,
            row.mode,
            row.payments,
            row.successes,
            fmt_coeff(row.success_rate),
            fmt_coeff(row.mean_attempts)
        ));
    }
    fs::write(dir.join("efficiency.csv"), csv)
}
