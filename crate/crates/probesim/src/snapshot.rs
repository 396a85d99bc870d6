//! Network snapshot files: a single JSON document standing in for gossip
//! data plus the hidden state a simulation needs (balances, liveness).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    msat_to_sat_floor, sat_to_msat, Channel, ChannelId, DirectionPolicy, GroundTruthNetwork,
    LatencyParams, ModelError, Node, NodeId,
};
use crate::MSAT_PER_SAT;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub nodes: Vec<SnapshotNode>,
    pub channels: Vec<SnapshotChannel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: String,
    pub live: bool,
    pub latency_ms_mean: f64,
    pub latency_ms_jitter: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotChannel {
    pub id: String,
    pub source: String,
    pub dest: String,
    pub capacity_sat: u64,
    pub balance_source_sat: u64,
    /// Exactly two entries: `[source -> dest, dest -> source]`.
    pub policies: Vec<SnapshotPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotPolicy {
    pub active: bool,
    pub max_htlc_msat: u64,
    pub base_fee_msat: u64,
    pub fee_ppm: u64,
}

impl From<&SnapshotPolicy> for DirectionPolicy {
    fn from(p: &SnapshotPolicy) -> Self {
        DirectionPolicy {
            active: p.active,
            max_htlc_msat: p.max_htlc_msat,
            base_fee_msat: p.base_fee_msat,
            fee_ppm: p.fee_ppm,
        }
    }
}

impl From<&DirectionPolicy> for SnapshotPolicy {
    fn from(p: &DirectionPolicy) -> Self {
        SnapshotPolicy {
            active: p.active,
            max_htlc_msat: p.max_htlc_msat,
            base_fee_msat: p.base_fee_msat,
            fee_ppm: p.fee_ppm,
        }
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    /// The document is malformed: not JSON, missing fields, unknown node
    /// references, wrong policy arity.
    #[error("snapshot schema error: {0}")]
    Schema(String),
    /// The document parses but violates a model invariant.
    #[error("snapshot invariant error: {0}")]
    Invariant(String),
}

/// Parses and validates a snapshot document into a ground-truth network.
pub fn parse_snapshot(document: &str) -> Result<GroundTruthNetwork, SnapshotError> {
    let file: SnapshotFile =
        serde_json::from_str(document).map_err(|e| SnapshotError::Schema(e.to_string()))?;
    network_from_snapshot(&file)
}

pub fn network_from_snapshot(file: &SnapshotFile) -> Result<GroundTruthNetwork, SnapshotError> {
    let mut net = GroundTruthNetwork::new();
    for n in &file.nodes {
        net.add_node(Node {
            id: NodeId::new(n.id.clone()),
            live: n.live,
            latency: LatencyParams {
                mean_ms: n.latency_ms_mean,
                jitter: n.latency_ms_jitter,
            },
        })
        .map_err(invariant)?;
    }
    for c in &file.channels {
        if c.policies.len() != 2 {
            return Err(SnapshotError::Schema(format!(
                "channel {}: expected 2 policies, got {}",
                c.id,
                c.policies.len()
            )));
        }
        for endpoint in [&c.source, &c.dest] {
            if net.node(&NodeId::new(endpoint.clone())).is_none() {
                return Err(SnapshotError::Schema(format!(
                    "channel {} references unknown node {}",
                    c.id, endpoint
                )));
            }
        }
        let channel = Channel::new(
            ChannelId::new(c.id.clone()),
            NodeId::new(c.source.clone()),
            NodeId::new(c.dest.clone()),
            sat_to_msat(c.capacity_sat),
            sat_to_msat(c.balance_source_sat),
            DirectionPolicy::from(&c.policies[0]),
            DirectionPolicy::from(&c.policies[1]),
        )
        .map_err(invariant)?;
        net.add_channel(channel).map_err(invariant)?;
    }
    net.validate().map_err(invariant)?;
    Ok(net)
}

/// Serializes a network back into the snapshot document form. Node and
/// channel order follow id order, so emission is deterministic.
pub fn emit_snapshot(net: &GroundTruthNetwork) -> Result<SnapshotFile, SnapshotError> {
    let nodes = net
        .nodes()
        .map(|n| SnapshotNode {
            id: n.id.as_str().to_owned(),
            live: n.live,
            latency_ms_mean: n.latency.mean_ms,
            latency_ms_jitter: n.latency.jitter,
        })
        .collect();
    let mut channels = Vec::with_capacity(net.channel_count());
    for ch in net.channels() {
        if ch.capacity_msat % MSAT_PER_SAT != 0 || ch.balance_source_msat() % MSAT_PER_SAT != 0 {
            return Err(SnapshotError::Invariant(format!(
                "channel {}: amounts not representable in whole satoshis",
                ch.id
            )));
        }
        channels.push(SnapshotChannel {
            id: ch.id.as_str().to_owned(),
            source: ch.source.as_str().to_owned(),
            dest: ch.destination.as_str().to_owned(),
            capacity_sat: msat_to_sat_floor(ch.capacity_msat),
            balance_source_sat: msat_to_sat_floor(ch.balance_source_msat()),
            policies: vec![
                SnapshotPolicy::from(&ch.policy_src_to_dst),
                SnapshotPolicy::from(&ch.policy_dst_to_src),
            ],
        });
    }
    Ok(SnapshotFile { nodes, channels })
}

pub fn snapshot_to_string(file: &SnapshotFile) -> String {
    serde_json::to_string_pretty(file).expect("snapshot serialization cannot fail")
}

fn invariant(e: ModelError) -> SnapshotError {
    SnapshotError::Invariant(e.to_string())
}
