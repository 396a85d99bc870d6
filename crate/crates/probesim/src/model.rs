//! Network, channel and estimate types shared by the whole simulator.
//!
//! The central design rule is the split between [`GroundTruthNetwork`] and
//! [`PublicView`]. The ground truth carries per-direction balances and node
//! liveness and is only ever consulted by the forwarding engine; the public
//! view is what gossip would reveal (capacities, policies, active flags) and
//! is the only network data the attacker-side modules receive.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MSAT_PER_SAT;

/// Node identifier. The lexicographic order of identifiers is load-bearing:
/// the channel endpoint with the smaller id is the channel's "source", and
/// all balance estimates refer to the source side.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.0)
    }
}

/// Channel identifier, unique within a network. Several channels may connect
/// the same node pair (parallel channels).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub String);

impl ChannelId {
    pub fn new(id: impl Into<String>) -> Self {
        ChannelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChannelId({})", self.0)
    }
}

/// Traversal direction over a channel, relative to its canonical orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// From the lexicographically smaller endpoint to the larger one.
    SrcToDst,
    /// From the larger endpoint back to the smaller one.
    DstToSrc,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::SrcToDst => Direction::DstToSrc,
            Direction::DstToSrc => Direction::SrcToDst,
        }
    }
}

/// Routing policy one channel partner advertises for its direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionPolicy {
    pub active: bool,
    pub max_htlc_msat: u64,
    pub base_fee_msat: u64,
    /// Proportional fee in parts-per-million of the forwarded amount.
    pub fee_ppm: u64,
}

impl DirectionPolicy {
    /// Fee charged for forwarding `amount_msat` over this direction,
    /// truncated to whole millisatoshis.
    pub fn fee_msat(&self, amount_msat: u64) -> u64 {
        self.base_fee_msat + amount_msat / 1_000_000 * self.fee_ppm
            + amount_msat % 1_000_000 * self.fee_ppm / 1_000_000
    }
}

impl Default for DirectionPolicy {
    fn default() -> Self {
        DirectionPolicy {
            active: true,
            max_htlc_msat: u64::MAX,
            base_fee_msat: 0,
            fee_ppm: 0,
        }
    }
}

/// Parameters of a node's per-hop response latency distribution
/// (lognormal-shaped around `mean_ms` with relative spread `jitter`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub mean_ms: f64,
    pub jitter: f64,
}

impl LatencyParams {
    pub const DEFAULT_MEAN_MS: f64 = 400.0;
    pub const DEFAULT_JITTER: f64 = 0.5;
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            mean_ms: Self::DEFAULT_MEAN_MS,
            jitter: Self::DEFAULT_JITTER,
        }
    }
}

/// A network participant. `live` and the latency parameters are ground truth
/// and never appear in the public view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub live: bool,
    pub latency: LatencyParams,
}

/// A payment channel. The canonical orientation is fixed at construction:
/// `source < destination` under the node id order, and `balance_source_msat`
/// is the source-side balance, so the destination side always holds
/// `capacity - balance_source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub source: NodeId,
    pub destination: NodeId,
    pub capacity_msat: u64,
    balance_source_msat: u64,
    pub policy_src_to_dst: DirectionPolicy,
    pub policy_dst_to_src: DirectionPolicy,
}

impl Channel {
    pub fn new(
        id: ChannelId,
        source: NodeId,
        destination: NodeId,
        capacity_msat: u64,
        balance_source_msat: u64,
        policy_src_to_dst: DirectionPolicy,
        policy_dst_to_src: DirectionPolicy,
    ) -> Result<Self, ModelError> {
        if source >= destination {
            return Err(ModelError::BadOrientation {
                channel: id,
                source_node: source,
                destination_node: destination,
            });
        }
        if balance_source_msat > capacity_msat {
            return Err(ModelError::BalanceExceedsCapacity {
                channel: id,
                balance_msat: balance_source_msat,
                capacity_msat,
            });
        }
        Ok(Channel {
            id,
            source,
            destination,
            capacity_msat,
            balance_source_msat,
            policy_src_to_dst,
            policy_dst_to_src,
        })
    }

    /// Ground-truth source-side balance. Forwarding-engine and evaluation
    /// use only; attacker-side code has no path to this value.
    pub fn balance_source_msat(&self) -> u64 {
        self.balance_source_msat
    }

    /// Ground-truth balance owned by the endpoint that forwards in `dir`.
    pub fn balance_msat(&self, dir: Direction) -> u64 {
        match dir {
            Direction::SrcToDst => self.balance_source_msat,
            Direction::DstToSrc => self.capacity_msat - self.balance_source_msat,
        }
    }

    /// Moves `amount_msat` across the channel in `dir`. Fails the caller's
    /// bookkeeping loudly rather than silently breaking conservation.
    pub(crate) fn shift_balance(&mut self, dir: Direction, amount_msat: u64) {
        match dir {
            Direction::SrcToDst => {
                assert!(amount_msat <= self.balance_source_msat, "balance underflow");
                self.balance_source_msat -= amount_msat;
            }
            Direction::DstToSrc => {
                let dst = self.capacity_msat - self.balance_source_msat;
                assert!(amount_msat <= dst, "balance underflow");
                self.balance_source_msat += amount_msat;
            }
        }
    }

    pub fn policy(&self, dir: Direction) -> &DirectionPolicy {
        match dir {
            Direction::SrcToDst => &self.policy_src_to_dst,
            Direction::DstToSrc => &self.policy_dst_to_src,
        }
    }

    /// Node that forwards when the channel is traversed in `dir`.
    pub fn from_node(&self, dir: Direction) -> &NodeId {
        match dir {
            Direction::SrcToDst => &self.source,
            Direction::DstToSrc => &self.destination,
        }
    }

    /// Node that receives when the channel is traversed in `dir`.
    pub fn to_node(&self, dir: Direction) -> &NodeId {
        match dir {
            Direction::SrcToDst => &self.destination,
            Direction::DstToSrc => &self.source,
        }
    }

    /// Active per gossip: available for routing in at least one direction.
    pub fn gossip_active(&self) -> bool {
        self.policy_src_to_dst.active || self.policy_dst_to_src.active
    }
}

/// Full network state including everything hidden from gossip. Visible only
/// to the forwarding engine and to evaluation code that compares attacker
/// estimates against the truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthNetwork {
    nodes: BTreeMap<NodeId, Node>,
    channels: BTreeMap<ChannelId, Channel>,
    adjacency: BTreeMap<NodeId, Vec<ChannelId>>,
}

impl GroundTruthNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), ModelError> {
        if self.nodes.contains_key(&node.id) {
            return Err(ModelError::DuplicateNode(node.id));
        }
        if !(node.latency.mean_ms > 0.0) || node.latency.jitter < 0.0 {
            return Err(ModelError::BadLatency(node.id));
        }
        self.adjacency.entry(node.id.clone()).or_default();
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn add_channel(&mut self, channel: Channel) -> Result<(), ModelError> {
        if self.channels.contains_key(&channel.id) {
            return Err(ModelError::DuplicateChannel(channel.id));
        }
        for endpoint in [&channel.source, &channel.destination] {
            if !self.nodes.contains_key(endpoint) {
                return Err(ModelError::UnknownNode {
                    channel: channel.id.clone(),
                    node: endpoint.clone(),
                });
            }
        }
        for endpoint in [&channel.source, &channel.destination] {
            self.adjacency
                .get_mut(endpoint)
                .expect("endpoint checked above")
                .push(channel.id.clone());
        }
        self.channels.insert(channel.id.clone(), channel);
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Scenario construction helper: toggles a node's ground-truth liveness.
    pub fn set_live(&mut self, id: &NodeId, live: bool) {
        if let Some(node) = self.nodes.get_mut(id) {
            node.live = live;
        }
    }

    pub fn channel(&self, id: &ChannelId) -> Option<&Channel> {
        self.channels.get(id)
    }

    pub(crate) fn channel_mut(&mut self, id: &ChannelId) -> Option<&mut Channel> {
        self.channels.get_mut(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Channel ids adjacent to `node`, in insertion order.
    pub fn adjacent(&self, node: &NodeId) -> &[ChannelId] {
        self.adjacency.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Channels connecting exactly the pair `{a, b}`, sorted by id.
    pub fn channels_between(&self, a: &NodeId, b: &NodeId) -> Vec<&Channel> {
        let mut found: Vec<&Channel> = self
            .adjacent(a)
            .iter()
            .filter_map(|id| self.channels.get(id))
            .filter(|ch| {
                (&ch.source == a && &ch.destination == b) || (&ch.source == b && &ch.destination == a)
            })
            .collect();
        found.sort_by(|x, y| x.id.cmp(&y.id));
        found
    }

    /// Checks the structural invariants; used by ingestion before handing a
    /// parsed network to the rest of the system.
    pub fn validate(&self) -> Result<(), ModelError> {
        for ch in self.channels.values() {
            for endpoint in [&ch.source, &ch.destination] {
                if !self.nodes.contains_key(endpoint) {
                    return Err(ModelError::UnknownNode {
                        channel: ch.id.clone(),
                        node: endpoint.clone(),
                    });
                }
            }
            if ch.balance_source_msat > ch.capacity_msat {
                return Err(ModelError::BalanceExceedsCapacity {
                    channel: ch.id.clone(),
                    balance_msat: ch.balance_source_msat,
                    capacity_msat: ch.capacity_msat,
                });
            }
        }
        Ok(())
    }
}

/// A channel as gossip reveals it: capacity and policies, no balance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewChannel {
    pub id: ChannelId,
    pub source: NodeId,
    pub destination: NodeId,
    pub capacity_msat: u64,
    pub policy_src_to_dst: DirectionPolicy,
    pub policy_dst_to_src: DirectionPolicy,
}

impl ViewChannel {
    pub fn policy(&self, dir: Direction) -> &DirectionPolicy {
        match dir {
            Direction::SrcToDst => &self.policy_src_to_dst,
            Direction::DstToSrc => &self.policy_dst_to_src,
        }
    }

    pub fn from_node(&self, dir: Direction) -> &NodeId {
        match dir {
            Direction::SrcToDst => &self.source,
            Direction::DstToSrc => &self.destination,
        }
    }

    pub fn to_node(&self, dir: Direction) -> &NodeId {
        match dir {
            Direction::SrcToDst => &self.destination,
            Direction::DstToSrc => &self.source,
        }
    }

    pub fn gossip_active(&self) -> bool {
        self.policy_src_to_dst.active || self.policy_dst_to_src.active
    }
}

/// The attacker-visible network graph: node ids plus [`ViewChannel`]s.
/// There is deliberately no field through which a balance or a liveness
/// flag could leak.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PublicView {
    nodes: Vec<NodeId>,
    channels: BTreeMap<ChannelId, ViewChannel>,
    #[serde(skip)]
    adjacency: BTreeMap<NodeId, Vec<ChannelId>>,
}

impl PublicView {
    pub fn node_ids(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn channel(&self, id: &ChannelId) -> Option<&ViewChannel> {
        self.channels.get(id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &ViewChannel> {
        self.channels.values()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn adjacent(&self, node: &NodeId) -> &[ChannelId] {
        self.adjacency.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, node: &NodeId) -> usize {
        self.adjacent(node).len()
    }

    /// Channels connecting exactly the pair `{a, b}`, sorted by id.
    pub fn channels_between(&self, a: &NodeId, b: &NodeId) -> Vec<&ViewChannel> {
        let mut found: Vec<&ViewChannel> = self
            .adjacent(a)
            .iter()
            .filter_map(|id| self.channels.get(id))
            .filter(|ch| {
                (&ch.source == a && &ch.destination == b) || (&ch.source == b && &ch.destination == a)
            })
            .collect();
        found.sort_by(|x, y| x.id.cmp(&y.id));
        found
    }
}

/// Projects the ground truth down to what gossip carries. Deterministic:
/// nodes and channels come out in id order.
pub fn derive_public_view(net: &GroundTruthNetwork) -> PublicView {
    let mut view = PublicView {
        nodes: net.nodes.keys().cloned().collect(),
        channels: BTreeMap::new(),
        adjacency: BTreeMap::new(),
    };
    for node in net.nodes.keys() {
        view.adjacency.entry(node.clone()).or_default();
    }
    for ch in net.channels.values() {
        view.channels.insert(
            ch.id.clone(),
            ViewChannel {
                id: ch.id.clone(),
                source: ch.source.clone(),
                destination: ch.destination.clone(),
                capacity_msat: ch.capacity_msat,
                policy_src_to_dst: ch.policy_src_to_dst.clone(),
                policy_dst_to_src: ch.policy_dst_to_src.clone(),
            },
        );
        for endpoint in [&ch.source, &ch.destination] {
            view.adjacency
                .entry(endpoint.clone())
                .or_default()
                .push(ch.id.clone());
        }
    }
    view
}

/// Lower/upper bound on a channel's source-side balance, in msat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceEstimate {
    pub b_min_msat: u64,
    pub b_max_msat: u64,
}

impl BalanceEstimate {
    /// The no-information estimate for a channel of the given capacity.
    pub fn unknown(capacity_msat: u64) -> Self {
        BalanceEstimate {
            b_min_msat: 0,
            b_max_msat: capacity_msat,
        }
    }

    pub fn exact(balance_msat: u64) -> Self {
        BalanceEstimate {
            b_min_msat: balance_msat,
            b_max_msat: balance_msat,
        }
    }

    pub fn width_msat(&self) -> u64 {
        self.b_max_msat - self.b_min_msat
    }

    pub fn is_closed(&self) -> bool {
        self.b_min_msat == self.b_max_msat
    }

    pub fn contains(&self, balance_msat: u64) -> bool {
        self.b_min_msat <= balance_msat && balance_msat <= self.b_max_msat
    }
}

/// Interval for the opposite side of the channel: since the two local
/// balances sum to the capacity, `[lo, hi]` maps to `[c - hi, c - lo]`.
/// An involution for any valid estimate.
pub fn flip_estimate(capacity_msat: u64, estimate: BalanceEstimate) -> BalanceEstimate {
    BalanceEstimate {
        b_min_msat: capacity_msat - estimate.b_max_msat,
        b_max_msat: capacity_msat - estimate.b_min_msat,
    }
}

pub fn sat_to_msat(sat: u64) -> u64 {
    sat * MSAT_PER_SAT
}

pub fn msat_to_sat_floor(msat: u64) -> u64 {
    msat / MSAT_PER_SAT
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("channel {channel}: source {source_node} must be lexicographically smaller than destination {destination_node}")]
    BadOrientation {
        channel: ChannelId,
        source_node: NodeId,
        destination_node: NodeId,
    },
    #[error("channel {channel}: balance {balance_msat} msat exceeds capacity {capacity_msat} msat")]
    BalanceExceedsCapacity {
        channel: ChannelId,
        balance_msat: u64,
        capacity_msat: u64,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate channel id {0}")]
    DuplicateChannel(ChannelId),
    #[error("channel {channel} references unknown node {node}")]
    UnknownNode { channel: ChannelId, node: NodeId },
    #[error("node {0}: latency parameters must be strictly positive")]
    BadLatency(NodeId),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn node(id: &str, live: bool) -> Node {
        Node {
            id: NodeId::new(id),
            live,
            latency: LatencyParams::default(),
        }
    }

    fn simple_channel(id: &str, a: &str, b: &str, cap_sat: u64, bal_sat: u64) -> Channel {
        Channel::new(
            ChannelId::new(id),
            NodeId::new(a),
            NodeId::new(b),
            sat_to_msat(cap_sat),
            sat_to_msat(bal_sat),
            DirectionPolicy::default(),
            DirectionPolicy::default(),
        )
        .unwrap()
    }

    #[test]
    fn view_hides_balance_but_keeps_channel() {
        let mut net = GroundTruthNetwork::new();
        net.add_node(node("a", true)).unwrap();
        net.add_node(node("b", true)).unwrap();
        net.add_channel(simple_channel("ch1", "a", "b", 100, 40)).unwrap();

        let view = derive_public_view(&net);
        let ch = view.channel(&ChannelId::new("ch1")).unwrap();
        assert_eq!(ch.capacity_msat, sat_to_msat(100));
        // Serialized form is the full attacker-visible surface; neither the
        // balance nor any liveness flag may appear in it.
        let json = serde_json::to_string(&view).unwrap();
        assert!(!json.contains("balance"));
        assert!(!json.contains("live"));
    }

    #[test]
    fn view_of_empty_network_is_empty() {
        let view = derive_public_view(&GroundTruthNetwork::new());
        assert_eq!(view.node_count(), 0);
        assert_eq!(view.channel_count(), 0);
    }

    #[test]
    fn dead_node_present_in_view() {
        let mut net = GroundTruthNetwork::new();
        net.add_node(node("a", false)).unwrap();
        let view = derive_public_view(&net);
        assert_eq!(view.node_ids(), &[NodeId::new("a")]);
    }

    #[test]
    fn flip_estimate_examples() {
        let flip = |c: u64, lo: u64, hi: u64| {
            flip_estimate(
                sat_to_msat(c),
                BalanceEstimate {
                    b_min_msat: sat_to_msat(lo),
                    b_max_msat: sat_to_msat(hi),
                },
            )
        };
        assert_eq!(
            flip(100, 30, 60),
            BalanceEstimate {
                b_min_msat: sat_to_msat(40),
                b_max_msat: sat_to_msat(70)
            }
        );
        assert_eq!(
            flip(100, 0, 100),
            BalanceEstimate {
                b_min_msat: 0,
                b_max_msat: sat_to_msat(100)
            }
        );
        assert_eq!(
            flip(50, 50, 50),
            BalanceEstimate {
                b_min_msat: 0,
                b_max_msat: 0
            }
        );
    }

    #[test]
    fn channel_rejects_bad_orientation_and_balance() {
        let res = Channel::new(
            ChannelId::new("ch"),
            NodeId::new("b"),
            NodeId::new("a"),
            1000,
            0,
            DirectionPolicy::default(),
            DirectionPolicy::default(),
        );
        assert!(matches!(res, Err(ModelError::BadOrientation { .. })));

        let res = Channel::new(
            ChannelId::new("ch"),
            NodeId::new("a"),
            NodeId::new("b"),
            1000,
            1001,
            DirectionPolicy::default(),
            DirectionPolicy::default(),
        );
        assert!(matches!(res, Err(ModelError::BalanceExceedsCapacity { .. })));
    }

    #[test]
    fn fee_is_base_plus_proportional() {
        let policy = DirectionPolicy {
            active: true,
            max_htlc_msat: u64::MAX,
            base_fee_msat: 1_000,
            fee_ppm: 100,
        };
        // 100 ppm of 2_000_000 msat is 200 msat.
        assert_eq!(policy.fee_msat(2_000_000), 1_200);
        assert_eq!(policy.fee_msat(0), 1_000);
        // Truncation, never rounding up.
        assert_eq!(policy.fee_msat(9_999), 1_000);
    }

    proptest! {
        #[test]
        fn flip_is_an_involution(cap in 1u64..=10_000_000, lo_frac in 0.0f64..=1.0, hi_frac in 0.0f64..=1.0) {
            let (lo, hi) = if lo_frac <= hi_frac { (lo_frac, hi_frac) } else { (hi_frac, lo_frac) };
            let est = BalanceEstimate {
                b_min_msat: (cap as f64 * lo) as u64,
                b_max_msat: (cap as f64 * hi) as u64,
            };
            prop_assert!(est.b_max_msat <= cap);
            let twice = flip_estimate(cap, flip_estimate(cap, est));
            prop_assert_eq!(twice, est);
        }

        #[test]
        fn fee_monotone_in_amount(a in 0u64..=u32::MAX as u64, b in 0u64..=u32::MAX as u64,
                                  base in 0u64..=10_000, ppm in 0u64..=100_000) {
            let policy = DirectionPolicy { active: true, max_htlc_msat: u64::MAX, base_fee_msat: base, fee_ppm: ppm };
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(policy.fee_msat(small) <= policy.fee_msat(large));
        }
    }
}
