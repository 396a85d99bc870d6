//! Scenario harness comparing attack effectiveness and routing efficiency
//! across countermeasure configurations, including the balance-disclosure
//! API.
//!
//! Paired arms always run on clones of the same generated network with the
//! same derived RNG streams, so any difference in the results is
//! attributable to the countermeasure alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forwarding::{
    send_probe, FloodTracker, ForwardingConfig, HtlcLedger, SimClock,
};
use crate::model::{derive_public_view, ChannelId, Direction, GroundTruthNetwork, NodeId};
use crate::prober::{attach_attacker, AttackerConfig, ProbeSession, ProberConfig};
use crate::routing::{find_payment_route, RoutingGraph};
use crate::sweep::derive_seed;
use crate::topology::{generate_topology, ConfigError, TopologyConfig};

/// Whether a node reveals a channel balance to a given asker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisclosurePolicy {
    Never,
    Always,
    TrustedOnly(BTreeSet<NodeId>),
}

/// The queried node declined to reveal the balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("balance disclosure refused")]
pub struct Refused;

/// Balance-disclosure API: returns the channel's true source-side balance
/// iff the policy admits the asker. Channel parties always know their own
/// balances, regardless of policy. Never mutates network state.
pub fn query_balance(
    net: &GroundTruthNetwork,
    asker: &NodeId,
    channel: &ChannelId,
    policy: &DisclosurePolicy,
) -> Result<u64, Refused> {
    let ch = net.channel(channel).ok_or(Refused)?;
    if &ch.source == asker || &ch.destination == asker {
        return Ok(ch.balance_source_msat());
    }
    let admitted = match policy {
        DisclosurePolicy::Always => true,
        DisclosurePolicy::Never => false,
        DisclosurePolicy::TrustedOnly(trusted) => trusted.contains(asker),
    };
    if admitted {
        Ok(ch.balance_source_msat())
    } else {
        Err(Refused)
    }
}

/// How disclosure policies are assigned across nodes in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisclosureAssignment {
    AllNever,
    AllAlways,
    /// Each node discloses with this probability (derived deterministically
    /// from the node id and the experiment seed).
    FractionAlways { fraction: f64 },
}

impl DisclosureAssignment {
    pub fn policy_for(&self, node: &NodeId, salt: u64) -> DisclosurePolicy {
        match self {
            DisclosureAssignment::AllNever => DisclosurePolicy::Never,
            DisclosureAssignment::AllAlways => DisclosurePolicy::Always,
            DisclosureAssignment::FractionAlways { fraction } => {
                let h = fnv1a(node.as_str().as_bytes(), salt);
                if (h % 1_000_000) as f64 / 1_000_000.0 < *fraction {
                    DisclosurePolicy::Always
                } else {
                    DisclosurePolicy::Never
                }
            }
        }
    }
}

fn fnv1a(bytes: &[u8], salt: u64) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ salt;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub pair_count: usize,
    pub amount_min_sat: u64,
    pub amount_max_sat: u64,
    pub max_attempts_per_payment: u32,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            pair_count: 50,
            amount_min_sat: 100,
            amount_max_sat: 10_000,
            max_attempts_per_payment: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    /// Number of paired seeds for the efficiency experiment.
    pub paired_seeds: u32,
    pub disclosure: DisclosureAssignment,
    pub forwarding: ForwardingConfig,
    pub prober: ProberConfig,
    pub attacker: AttackerConfig,
    pub master_seed: u64,
    pub max_hops: usize,
}

impl ExperimentConfig {
    pub fn new(topology: TopologyConfig, master_seed: u64) -> Self {
        ExperimentConfig {
            topology,
            workload: WorkloadConfig::default(),
            paired_seeds: 10,
            disclosure: DisclosureAssignment::AllAlways,
            forwarding: ForwardingConfig::default(),
            prober: ProberConfig::default(),
            attacker: AttackerConfig::default(),
            master_seed,
            max_hops: 10,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate()?;
        self.prober.validate()?;
        if self.workload.pair_count == 0 {
            return Err(ConfigError::field("pair_count", "must be positive"));
        }
        if self.workload.amount_min_sat == 0 {
            return Err(ConfigError::field("amount_min_sat", "must be positive"));
        }
        if self.workload.amount_min_sat > self.workload.amount_max_sat {
            return Err(ConfigError::field(
                "amount_max_sat",
                "must be at least amount_min_sat",
            ));
        }
        if self.workload.max_attempts_per_payment == 0 {
            return Err(ConfigError::field(
                "max_attempts_per_payment",
                "must be positive",
            ));
        }
        if self.paired_seeds == 0 {
            return Err(ConfigError::field("paired_seeds", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub seed: u64,
    pub mode: &'static str,
    pub payments: u64,
    pub successes: u64,
    pub success_rate: f64,
    /// Mean payment attempts per successful payment.
    pub mean_attempts: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyReport {
    /// (disclosure_off, disclosure_on) rows for a seed.
    pub fn pair(&self, seed: u64) -> Option<(&EfficiencyRow, &EfficiencyRow)> {
        let off = self
            .rows
            .iter()
            .find(|r| r.seed == seed && r.mode == "disclosure_off")?;
        let on = self
            .rows
            .iter()
            .find(|r| r.seed == seed && r.mode == "disclosure_on")?;
        Some((off, on))
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
    }
}

struct Payment {
    sender: NodeId,
    recipient: NodeId,
    amount_msat: u64,
}

fn draw_workload(
    net: &GroundTruthNetwork,
    workload: &WorkloadConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Payment> {
    let live: Vec<&NodeId> = net
        .nodes()
        .filter(|n| n.live && !net.adjacent(&n.id).is_empty())
        .map(|n| &n.id)
        .collect();
    let mut payments = Vec::with_capacity(workload.pair_count);
    if live.len() < 2 {
        return payments;
    }
    for _ in 0..workload.pair_count {
        let sender = live[rng.gen_range(0..live.len())].clone();
        let recipient = loop {
            let candidate = live[rng.gen_range(0..live.len())];
            if candidate != &sender {
                break candidate.clone();
            }
        };
        let amount_sat = rng.gen_range(workload.amount_min_sat..=workload.amount_max_sat);
        payments.push(Payment {
            sender,
            recipient,
            amount_msat: crate::model::sat_to_msat(amount_sat),
        });
    }
    payments
}

enum SenderMode<'a> {
    Baseline,
    Disclosure {
        assignment: &'a DisclosureAssignment,
        salt: u64,
    },
}

/// Runs one workload arm on its own clone of the network. Returns
/// (successes, total attempts over successful payments).
fn run_workload_arm(
    net: &mut GroundTruthNetwork,
    payments: &[Payment],
    workload: &WorkloadConfig,
    fwd_cfg: &ForwardingConfig,
    max_hops: usize,
    mode: SenderMode<'_>,
    rng_seed: u64,
) -> (u64, u64) {
    let view = derive_public_view(net);
    let graph = RoutingGraph::new(&view);
    let mut ledger = HtlcLedger::new();
    let mut flood = FloodTracker::new();
    let mut clock = SimClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut successes = 0u64;
    let mut attempts_successful = 0u64;

    for payment in payments {
        let mut excluded: BTreeSet<ChannelId> = BTreeSet::new();
        let mut attempts = 0u64;
        'payment: while attempts < workload.max_attempts_per_payment as u64 {
            let Some(route) = (match &mode {
                SenderMode::Baseline => find_payment_route(
                    &graph,
                    &view,
                    &payment.sender,
                    &payment.recipient,
                    payment.amount_msat,
                    &excluded,
                    max_hops,
                ),
                SenderMode::Disclosure { assignment, salt } => {
                    // Query balances along candidate routes and re-route
                    // around known insufficiencies before spending an attempt.
                    let mut candidate;
                    loop {
                        candidate = find_payment_route(
                            &graph,
                            &view,
                            &payment.sender,
                            &payment.recipient,
                            payment.amount_msat,
                            &excluded,
                            max_hops,
                        );
                        let Some(route) = &candidate else { break };
                        let mut insufficient: Option<ChannelId> = None;
                        for hop in route.hops().iter().take(max_hops) {
                            let policy = assignment.policy_for(&hop.from, *salt);
                            match query_balance(net, &payment.sender, &hop.channel, &policy) {
                                Ok(source_balance) => {
                                    let traversal = match hop.direction {
                                        Direction::SrcToDst => source_balance,
                                        Direction::DstToSrc => {
                                            view.channel(&hop.channel)
                                                .map(|c| c.capacity_msat)
                                                .unwrap_or(0)
                                                - source_balance
                                        }
                                    };
                                    if traversal < hop.amount_msat {
                                        insufficient = Some(hop.channel.clone());
                                        break;
                                    }
                                }
                                // On refusal, fall back to sending as-is.
                                Err(Refused) => break,
                            }
                        }
                        match insufficient {
                            Some(channel) => {
                                excluded.insert(channel);
                            }
                            None => break,
                        }
                    }
                    candidate
                }
            }) else {
                break 'payment;
            };
            attempts += 1;
            let outcome = send_probe(
                net,
                &mut ledger,
                &mut flood,
                &route,
                payment.amount_msat,
                true,
                fwd_cfg,
                &mut clock,
                &mut rng,
            )
            .expect("search yields valid routes");
            if outcome.is_success() {
                successes += 1;
                attempts_successful += attempts;
                break 'payment;
            }
            match &outcome.reported_channel {
                Some(channel) => {
                    excluded.insert(channel.clone());
                }
                // Unattributable failure: the sender gives up.
                None => break 'payment,
            }
        }
    }
    (successes, attempts_successful)
}

/// Simulates the payment workload twice per seed with identical streams:
/// a baseline sender that retries on errors, and a disclosure-aware sender
/// that queries balances along candidate routes before sending.
pub fn run_efficiency_experiment(cfg: &ExperimentConfig) -> Result<EfficiencyReport, ConfigError> {
    cfg.validate()?;
    let mut report = EfficiencyReport::default();
    for i in 0..cfg.paired_seeds {
        let seed = derive_seed(cfg.master_seed, i as u64);
        let mut topology = cfg.topology.clone();
        topology.rng_seed = derive_seed(seed, 1);
        let base_net = generate_topology(&topology)?;
        let mut workload_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let payments = draw_workload(&base_net, &cfg.workload, &mut workload_rng);
        let run_seed = derive_seed(seed, 3);

        for (mode_name, mode) in [
            ("disclosure_off", SenderMode::Baseline),
            (
                "disclosure_on",
                SenderMode::Disclosure {
                    assignment: &cfg.disclosure,
                    salt: seed,
                },
            ),
        ] {
            let mut net = base_net.clone();
            let (successes, attempts) = run_workload_arm(
                &mut net,
                &payments,
                &cfg.workload,
                &cfg.forwarding,
                cfg.max_hops,
                mode,
                run_seed,
            );
            report.rows.push(EfficiencyRow {
                seed,
                mode: mode_name,
                payments: payments.len() as u64,
                successes,
                success_rate: if payments.is_empty() {
                    0.0
                } else {
                    successes as f64 / payments.len() as f64
                },
                mean_attempts: if successes == 0 {
                    0.0
                } else {
                    attempts as f64 / successes as f64
                },
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub countermeasure: String,
    pub channels_probed: u64,
    pub mean_info_coefficient: f64,
    pub soundness_violations: u64,
    pub soundness_violation_rate: f64,
    /// Mean normalized distance of the true pre-attack balance outside the
    /// final interval; zero when estimates are sound.
    pub mean_estimate_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackMatrixReport {
    pub rows: Vec<MatrixRow>,
}

pub const MATRIX_COUNTERMEASURES: [&str; 4] = ["none", "merge_errors", "jit", "flood_detection"];

fn matrix_forwarding(base: &ForwardingConfig, countermeasure: &str) -> ForwardingConfig {
    let mut cfg = ForwardingConfig {
        merge_errors: false,
        jit_rebalancing: false,
        flood_detection: crate::forwarding::FloodDetectionConfig {
            enabled: false,
            ..base.flood_detection.clone()
        },
        ..base.clone()
    };
    match countermeasure {
        "none" => {}
        "merge_errors" => cfg.merge_errors = true,
        "jit" => cfg.jit_rebalancing = true,
        "flood_detection" => cfg.flood_detection.enabled = true,
        other => panic!("unknown countermeasure {other}"),
    }
    cfg
}

/// Runs the full probing attack under each countermeasure configuration on
/// clones of the same network and reports how much the attack still
/// learned.
pub fn run_attack_matrix(cfg: &ExperimentConfig) -> Result<AttackMatrixReport, ConfigError> {
    cfg.validate()?;
    let mut topology = cfg.topology.clone();
    topology.rng_seed = derive_seed(cfg.master_seed, 11);
    let base_net = generate_topology(&topology)?;
    let truth: BTreeMap<ChannelId, u64> = base_net
        .channels()
        .map(|ch| (ch.id.clone(), ch.balance_source_msat()))
        .collect();
    let run_seed = derive_seed(cfg.master_seed, 13);

    let runs = crate::sweep::par_map(MATRIX_COUNTERMEASURES.to_vec(), |name| {
        let mut net = base_net.clone();
        let attacker = attach_attacker(&mut net, &cfg.attacker)
            .expect("attacker attaches to generated networks");
        let fwd = matrix_forwarding(&cfg.forwarding, name);
        let run = ProbeSession::new(&mut net, attacker, cfg.prober.clone(), fwd, run_seed)
            .probe_all();
        (name, run)
    });

    let mut report = AttackMatrixReport::default();
    for (name, run) in runs {
        let mut coeff_sum = 0.0;
        let mut err_sum = 0.0;
        let mut violations = 0u64;
        let mut counted = 0u64;
        for channel in &run.probed_channels {
            let Some(k) = run.table.get(channel) else {
                continue;
            };
            let Some(&true_balance) = truth.get(channel) else {
                continue;
            };
            counted += 1;
            coeff_sum += crate::metrics::information_coefficient(&k.estimate, k.capacity_msat);
            if !k.estimate.contains(true_balance) {
                violations += 1;
                let outside = true_balance
                    .saturating_sub(k.estimate.b_max_msat)
                    .max(k.estimate.b_min_msat.saturating_sub(true_balance));
                err_sum += outside as f64 / k.capacity_msat.max(1) as f64;
            }
        }
        report.rows.push(MatrixRow {
            countermeasure: name.to_owned(),
            channels_probed: counted,
            mean_info_coefficient: if counted == 0 { 0.0 } else { coeff_sum / counted as f64 },
            soundness_violations: violations,
            soundness_violation_rate: if counted == 0 {
                0.0
            } else {
                violations as f64 / counted as f64
            },
            mean_estimate_error: if counted == 0 { 0.0 } else { err_sum / counted as f64 },
        });
    }
    Ok(report)
}
