//! Data-parallel execution of independent seeded runs.
//!
//! Each run derives its own RNG stream from the master seed, so results are
//! identical whether the sweep executes on the rayon pool (`parallel`
//! feature, on by default) or on the sequential fallback.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::forwarding::ForwardingConfig;
use crate::metrics::{attack_cost, summarize};
use crate::prober::{attach_attacker, AttackerConfig, ProbeRun, ProbeSession, ProberConfig};
use crate::report::{build_summary, RunSummary};
use crate::topology::{generate_topology, ConfigError, TopologyConfig};

/// Mixes a stream index into a master seed (splitmix64 finalizer); derived
/// streams are independent for distinct indices.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `f` over the items on the rayon pool when the `parallel` feature is
/// enabled; otherwise a plain sequential loop.
#[cfg(feature = "parallel")]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential map, kept alongside [`par_map`] so benchmarks can
/// compare the two on the same build.
pub fn seq_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Per-run results of a sweep, in run-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub index: usize,
    pub seed: u64,
    pub summary: RunSummary,
}

fn run_once(
    topology: &TopologyConfig,
    attacker_cfg: &AttackerConfig,
    prober: &ProberConfig,
    forwarding: &ForwardingConfig,
    seed: u64,
) -> Result<(ProbeRun, RunSummary), ConfigError> {
    let mut cfg = topology.clone();
    cfg.rng_seed = derive_seed(seed, 1);
    let mut net = generate_topology(&cfg)?;
    let attacker = attach_attacker(&mut net, attacker_cfg)?;
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
        prober.clone(),
        forwarding.clone(),
        derive_seed(seed, 2),
    );
    let run = session.probe_all();
    let view = crate::model::derive_public_view(&net);
    let cost = attack_cost(&entry_capacities, &run.log, default_htlc_timeout_ms());
    let report = summarize(&run.log, &run.table, &view, prober, cost);
    let summary = build_summary(&run, &report);
    Ok((run, summary))
}

/// HTLC timeout used for lock-duration accounting; hours of simulated time,
/// far beyond any run.
pub fn default_htlc_timeout_ms() -> u64 {
    3_600_000
}

/// Runs `runs` independent probing campaigns with seeds derived from
/// `master_seed`, in parallel when the feature allows.
pub fn probe_sweep(
    topology: &TopologyConfig,
    attacker: &AttackerConfig,
    prober: &ProberConfig,
    forwarding: &ForwardingConfig,
    master_seed: u64,
    runs: usize,
) -> Result<Vec<SweepRun>, ConfigError> {
    let indices: Vec<usize> = (0..runs).collect();
    let results = par_map(indices, |index| {
        let seed = derive_seed(master_seed, index as u64);
        run_once(topology, attacker, prober, forwarding, seed)
            .map(|(_, summary)| SweepRun { index, seed, summary })
    });
    results.into_iter().collect()
}

/// Sequential twin of [`probe_sweep`] for benchmarking the parallel gain.
pub fn probe_sweep_sequential(
    topology: &TopologyConfig,
    attacker: &AttackerConfig,
    prober: &ProberConfig,
    forwarding: &ForwardingConfig,
    master_seed: u64,
    runs: usize,
) -> Result<Vec<SweepRun>, ConfigError> {
    let indices: Vec<usize> = (0..runs).collect();
    let results = seq_map(indices, |index| {
        let seed = derive_seed(master_seed, index as u64);
        run_once(topology, attacker, prober, forwarding, seed)
            .map(|(_, summary)| SweepRun { index, seed, summary })
    });
    results.into_iter().collect()
}

/// Testnet-scale preset: the desk-scale stand-in for a public-testnet
/// snapshot, sized at 1974 nodes and 5884 channels with liveness and
/// activity tuned to leave roughly 1600 probeable channels.
pub fn testnet_scale_preset(seed: u64) -> TopologyConfig {
    let mut cfg = TopologyConfig::new(1974, 5884, seed);
    cfg.balance_skew = 0.45;
    cfg.dead_node_fraction = 0.5;
    cfg.inactive_channel_fraction = 0.57;
    cfg.parallel_channel_fraction = 0.03;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn parallel_and_sequential_sweeps_agree() {
        let mut topology = TopologyConfig::new(40, 80, 0);
        topology.dead_node_fraction = 0.1;
        let attacker = AttackerConfig::default();
        let prober = ProberConfig::default();
        let forwarding = ForwardingConfig::default();
        let par = probe_sweep(&topology, &attacker, &prober, &forwarding, 5, 4).unwrap();
        let seq =
            probe_sweep_sequential(&topology, &attacker, &prober, &forwarding, 5, 4).unwrap();
        assert_eq!(par, seq);
    }
}
