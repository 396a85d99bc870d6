//! Synthetic topology generation with controlled balance, liveness and
//! parallel-channel distributions. Everything is driven by one seed so a
//! config reproduces its network byte for byte.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    sat_to_msat, Channel, ChannelId, DirectionPolicy, GroundTruthNetwork, LatencyParams, Node,
    NodeId,
};

/// Hard per-HTLC payload limit, in msat.
pub const HTLC_PAYLOAD_MAX_MSAT: u64 = 4_294_967_295;

/// Default capacity range: 20k sat up to the common soft channel cap.
pub const DEFAULT_CAPACITY_MIN_SAT: u64 = 20_000;
pub const DEFAULT_CAPACITY_MAX_SAT: u64 = 16_777_215;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeDistribution {
    PowerLaw { exponent: f64 },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub node_count: usize,
    pub channel_count: usize,
    #[serde(default = "default_degree_distribution")]
    pub degree_distribution: DegreeDistribution,
    #[serde(default = "default_capacity_min_sat")]
    pub capacity_min_sat: u64,
    #[serde(default = "default_capacity_max_sat")]
    pub capacity_max_sat: u64,
    /// Probability that a channel is fully one-sided.
    #[serde(default)]
    pub balance_skew: f64,
    #[serde(default)]
    pub dead_node_fraction: f64,
    #[serde(default)]
    pub inactive_channel_fraction: f64,
    #[serde(default)]
    pub parallel_channel_fraction: f64,
    /// Usually overridden by the scenario's master seed.
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_latency_mean")]
    pub latency_ms_mean: f64,
    #[serde(default = "default_latency_jitter")]
    pub latency_ms_jitter: f64,
    #[serde(default = "default_base_fee_msat")]
    pub base_fee_msat: u64,
    #[serde(default = "default_fee_ppm")]
    pub fee_ppm: u64,
}

fn default_degree_distribution() -> DegreeDistribution {
    DegreeDistribution::PowerLaw { exponent: 2.5 }
}
fn default_capacity_min_sat() -> u64 {
    DEFAULT_CAPACITY_MIN_SAT
}
fn default_capacity_max_sat() -> u64 {
    DEFAULT_CAPACITY_MAX_SAT
}
fn default_latency_mean() -> f64 {
    LatencyParams::DEFAULT_MEAN_MS
}
fn default_latency_jitter() -> f64 {
    LatencyParams::DEFAULT_JITTER
}
fn default_base_fee_msat() -> u64 {
    1_000
}
fn default_fee_ppm() -> u64 {
    100
}

impl TopologyConfig {
    /// A small default usable as a starting point in configs and tests.
    pub fn new(node_count: usize, channel_count: usize, rng_seed: u64) -> Self {
        TopologyConfig {
            node_count,
            channel_count,
            degree_distribution: default_degree_distribution(),
            capacity_min_sat: DEFAULT_CAPACITY_MIN_SAT,
            capacity_max_sat: DEFAULT_CAPACITY_MAX_SAT,
            balance_skew: 0.0,
            dead_node_fraction: 0.0,
            inactive_channel_fraction: 0.0,
            parallel_channel_fraction: 0.0,
            rng_seed,
            latency_ms_mean: LatencyParams::DEFAULT_MEAN_MS,
            latency_ms_jitter: LatencyParams::DEFAULT_JITTER,
            base_fee_msat: default_base_fee_msat(),
            fee_ppm: default_fee_ppm(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_count < 2 {
            return Err(ConfigError::field("node_count", "must be at least 2"));
        }
        if self.channel_count == 0 {
            return Err(ConfigError::field("channel_count", "must be positive"));
        }
        for (name, value) in [
            ("balance_skew", self.balance_skew),
            ("dead_node_fraction", self.dead_node_fraction),
            ("inactive_channel_fraction", self.inactive_channel_fraction),
            ("parallel_channel_fraction", self.parallel_channel_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::field(name, "must be within [0, 1]"));
            }
        }
        if self.capacity_min_sat == 0 || self.capacity_min_sat > self.capacity_max_sat {
            return Err(ConfigError::field(
                "capacity_min_sat",
                "must be positive and not exceed capacity_max_sat",
            ));
        }
        if !(self.latency_ms_mean > 0.0) {
            return Err(ConfigError::field("latency_ms_mean", "must be positive"));
        }
        if self.latency_ms_jitter < 0.0 {
            return Err(ConfigError::field("latency_ms_jitter", "must be non-negative"));
        }
        if let DegreeDistribution::PowerLaw { exponent } = self.degree_distribution {
            if !(exponent > 1.0) {
                return Err(ConfigError::field("exponent", "must be greater than 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {field} {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn field(field: &str, reason: &str) -> Self {
        ConfigError {
            field: field.to_owned(),
            reason: reason.to_owned(),
        }
    }
}

/// Generates a network deterministically from the config seed. The graph is
/// grown connected (a weighted attachment tree plus extra edges), with node
/// attractiveness heavy-tailed under the power-law setting.
pub fn generate_topology(cfg: &TopologyConfig) -> Result<GroundTruthNetwork, ConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.node_count;

    let id_width = n.saturating_sub(1).to_string().len().max(4);
    let node_ids: Vec<NodeId> = (0..n)
        .map(|i| NodeId::new(format!("n{i:0width$}", width = id_width)))
        .collect();

    let dead_count = (cfg.dead_node_fraction * n as f64).round() as usize;
    let mut dead = vec![false; n];
    for idx in rand::seq::index::sample(&mut rng, n, dead_count.min(n)) {
        dead[idx] = true;
    }

    let mut net = GroundTruthNetwork::new();
    for (i, id) in node_ids.iter().enumerate() {
        net.add_node(Node {
            id: id.clone(),
            live: !dead[i],
            latency: LatencyParams {
                mean_ms: cfg.latency_ms_mean,
                jitter: cfg.latency_ms_jitter,
            },
        })
        .expect("generated ids are unique");
    }

    // Static attractiveness weights; degrees concentrate on low indices
    // under the power-law setting.
    let weights: Vec<f64> = match cfg.degree_distribution {
        DegreeDistribution::PowerLaw { exponent } => {
            let beta = 1.0 / (exponent - 1.0);
            (0..n).map(|i| ((i + 1) as f64).powf(-beta)).collect()
        }
        DegreeDistribution::Uniform => vec![1.0; n],
    };

    let parallel_target = (cfg.parallel_channel_fraction * cfg.channel_count as f64).round() as usize;
    // At least one base pair must exist for parallels to duplicate.
    let base_target = (cfg.channel_count - parallel_target.min(cfg.channel_count)).max(1);

    // Attachment tree over a shuffled node order keeps the graph connected
    // when the channel budget allows.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(cfg.channel_count);
    let mut seen = std::collections::HashSet::new();
    let mut cumulative: Vec<f64> = Vec::with_capacity(n);
    let mut total = 0.0;
    for (k, &node) in order.iter().enumerate() {
        if k > 0 && pairs.len() < base_target {
            let pick = weighted_pick(&cumulative, total, &mut rng);
            let peer = order[pick];
            let pair = ordered_pair(node, peer);
            seen.insert(pair);
            pairs.push(pair);
        }
        total += weights[node];
        cumulative.push(total);
    }

    let full_cumulative: Vec<f64> = {
        let mut acc = 0.0;
        weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    };
    let full_total = *full_cumulative.last().unwrap();
    while pairs.len() < base_target {
        let mut placed = false;
        for _ in 0..64 {
            let a = weighted_pick(&full_cumulative, full_total, &mut rng);
            let b = weighted_pick(&full_cumulative, full_total, &mut rng);
            if a == b {
                continue;
            }
            let pair = ordered_pair(a, b);
            if seen.insert(pair) {
                pairs.push(pair);
                placed = true;
                break;
            }
        }
        if !placed {
            // Dense graph: fall back to accepting a duplicate pair so the
            // requested channel count is always met.
            let a = weighted_pick(&full_cumulative, full_total, &mut rng);
            let b = (a + 1 + rng.gen_range(0..n - 1)) % n;
            pairs.push(ordered_pair(a, b));
        }
    }

    for _ in 0..cfg.channel_count - pairs.len().min(cfg.channel_count) {
        let &(a, b) = pairs
            .get(rng.gen_range(0..pairs.len()))
            .expect("base pairs exist");
        pairs.push((a, b));
    }

    let inactive_count =
        (cfg.inactive_channel_fraction * cfg.channel_count as f64).round() as usize;
    let mut inactive = vec![false; cfg.channel_count];
    for idx in rand::seq::index::sample(&mut rng, cfg.channel_count, inactive_count.min(cfg.channel_count))
    {
        inactive[idx] = true;
    }

    let ch_width = cfg.channel_count.saturating_sub(1).to_string().len().max(5);
    let log_min = (cfg.capacity_min_sat as f64).ln();
    let log_max = (cfg.capacity_max_sat as f64).ln();
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let capacity_sat = if cfg.capacity_min_sat == cfg.capacity_max_sat {
            cfg.capacity_min_sat
        } else {
            let u: f64 = rng.gen();
            ((log_min + u * (log_max - log_min)).exp().round() as u64)
                .clamp(cfg.capacity_min_sat, cfg.capacity_max_sat)
        };
        let balance_sat = if rng.gen_bool(cfg.balance_skew) {
            if rng.gen_bool(0.5) {
                capacity_sat
            } else {
                0
            }
        } else {
            rng.gen_range(0..=capacity_sat)
        };
        let capacity_msat = sat_to_msat(capacity_sat);
        let max_htlc = capacity_msat.min(HTLC_PAYLOAD_MAX_MSAT);
        let policy = |active: bool| DirectionPolicy {
            active,
            max_htlc_msat: max_htlc,
            base_fee_msat: cfg.base_fee_msat,
            fee_ppm: cfg.fee_ppm,
        };
        let (active_fwd, active_rev) = if inactive[i] {
            if rng.gen_bool(0.5) {
                // Partially active: one direction disabled.
                if rng.gen_bool(0.5) {
                    (false, true)
                } else {
                    (true, false)
                }
            } else {
                (false, false)
            }
        } else {
            (true, true)
        };
        let channel = Channel::new(
            ChannelId::new(format!("c{i:0width$}", width = ch_width)),
            node_ids[a].clone(),
            node_ids[b].clone(),
            capacity_msat,
            sat_to_msat(balance_sat),
            policy(active_fwd),
            policy(active_rev),
        )
        .expect("generator keeps channel invariants");
        net.add_channel(channel).expect("generated ids are unique");
    }

    Ok(net)
}

fn ordered_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn weighted_pick(cumulative: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    let x: f64 = rng.gen::<f64>() * total;
    match cumulative.binary_search_by(|c| c.partial_cmp(&x).unwrap()) {
        Ok(i) => i,
        Err(i) => i.min(cumulative.len() - 1),
    }
}
