//! Subcommand implementations. Each returns a typed error so `main` can map
//! config problems to exit code 2 and runtime failures to exit code 3.

use std::fs;
use std::path::{Path, PathBuf};

use probesim::experiments::{run_attack_matrix, run_efficiency_experiment, ExperimentConfig};
use probesim::metrics::{attack_cost, summarize};
use probesim::model::{derive_public_view, GroundTruthNetwork};
use probesim::prober::{attach_attacker, ProbeSession};
use probesim::report::{
    build_summary, write_attack_matrix, write_efficiency, write_reports, write_summary, RunSummary,
};
use probesim::snapshot::{emit_snapshot, parse_snapshot, snapshot_to_string};
use probesim::sweep::{derive_seed, par_map};
use probesim::topology::{generate_topology, ConfigError};

use crate::config::ScenarioConfig;

#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CmdError {
    fn from(e: ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Runtime(e.to_string())
    }
}

fn resolve_network(cfg: &ScenarioConfig, seed: u64) -> Result<GroundTruthNetwork, CmdError> {
    if let Some(topology) = &cfg.topology {
        let mut topology = topology.clone();
        topology.rng_seed = derive_seed(seed, 1);
        return Ok(generate_topology(&topology)?);
    }
    let path = cfg.snapshot.as_ref().expect("validated config");
    let raw = fs::read_to_string(path)
        .map_err(|e| CmdError::Config(format!("cannot read snapshot {}: {e}", path.display())))?;
    parse_snapshot(&raw).map_err(|e| CmdError::Config(e.to_string()))
}

/// `generate`: resolve the network (usually from a topology section) and
/// write it as a snapshot document.
pub fn cmd_generate(cfg: &ScenarioConfig, out: &Path) -> Result<(), CmdError> {
    let net = resolve_network(cfg, cfg.seed)?;
    let file = emit_snapshot(&net).map_err(|e| CmdError::Runtime(e.to_string()))?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, snapshot_to_string(&file))?;
    println!(
        "wrote {}: {} nodes, {} channels",
        out.display(),
        net.node_count(),
        net.channel_count()
    );
    Ok(())
}

fn probe_once(cfg: &ScenarioConfig, seed: u64, out_dir: &Path) -> Result<RunSummary, CmdError> {
    let mut net = resolve_network(cfg, seed)?;
    let attacker = attach_attacker(&mut net, &cfg.attacker)?;
    let entry_capacities: Vec<_> = attacker
        .entry_channels
        .iter()
        .map(|id| {
            let cap = net.channel(id).map(|c| c.capacity_msat).unwrap_or(0);
            (id.clone(), cap)
        })
        .collect();
    let session = ProbeSession::new(
        &mut net,
        attacker,
        cfg.prober.clone(),
        cfg.forwarding.clone(),
        derive_seed(seed, 2),
    );
    let run = session.probe_all();
    let view = derive_public_view(&net);
    let cost = attack_cost(&entry_capacities, &run.log, cfg.htlc_timeout_ms);
    let report = summarize(&run.log, &run.table, &view, &cfg.prober, cost);
    write_reports(out_dir, &report)?;
    let summary = build_summary(&run, &report);
    write_summary(out_dir, &summary)?;
    Ok(summary)
}

/// `probe`: run the full probing campaign and write the metric CSVs plus a
/// run summary. With `runs > 1`, executes that many independently seeded
/// campaigns (in parallel when built with the default features).
pub fn cmd_probe(cfg: &ScenarioConfig, out_dir: &Path, runs: usize) -> Result<(), CmdError> {
    if runs <= 1 {
        let summary = probe_once(cfg, cfg.seed, out_dir)?;
        print_summary(out_dir, &summary);
        return Ok(());
    }
    let indices: Vec<usize> = (0..runs).collect();
    let results: Vec<(PathBuf, Result<RunSummary, CmdError>)> = par_map(indices, |i| {
        let run_dir = out_dir.join(format!("run_{i}"));
        let seed = derive_seed(cfg.seed, i as u64);
        let result = probe_once(cfg, seed, &run_dir);
        (run_dir, result)
    });
    for (dir, result) in results {
        let summary = result?;
        print_summary(&dir, &summary);
    }
    Ok(())
}

fn print_summary(dir: &Path, summary: &RunSummary) {
    println!(
        "{}: onions={} usable={:.4} channels_probed={} mean_info={:.4} simulated_ms={}",
        dir.display(),
        summary.onions_total,
        summary.onions_usable_fraction,
        summary.channels_probed,
        summary.mean_info_coefficient,
        summary.simulated_ms
    );
}

/// `experiment`: the countermeasure attack matrix and the disclosure
/// efficiency comparison, written as comparison CSVs.
pub fn cmd_experiment(cfg: &ScenarioConfig, out_dir: &Path) -> Result<(), CmdError> {
    let Some(topology) = cfg.topology.clone() else {
        return Err(CmdError::Config(
            "invalid config: experiment requires a topology section".to_owned(),
        ));
    };
    let experiment = ExperimentConfig {
        topology,
        workload: cfg.experiment.workload.clone(),
        paired_seeds: cfg.experiment.paired_seeds,
        disclosure: cfg.experiment.disclosure.clone(),
        forwarding: cfg.forwarding.clone(),
        prober: cfg.prober.clone(),
        attacker: cfg.attacker.clone(),
        master_seed: cfg.seed,
        max_hops: cfg.prober.max_hops,
    };
    let matrix = run_attack_matrix(&experiment)?;
    write_attack_matrix(out_dir, &matrix.rows)?;
    let efficiency = run_efficiency_experiment(&experiment)?;
    write_efficiency(out_dir, &efficiency.rows)?;
    println!(
        "{}: {} matrix rows, {} efficiency rows",
        out_dir.display(),
        matrix.rows.len(),
        efficiency.rows.len()
    );
    Ok(())
}
