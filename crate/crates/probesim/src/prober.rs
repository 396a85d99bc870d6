//! The attacker engine: liveness heuristics and channel selection, estimate
//! updates from probe outcomes, and the binary-search driver over all
//! selected channels.
//!
//! The prober reads only the [`PublicView`], its own [`EstimateTable`] and
//! the [`ProbeOutcome`]s the forwarding engine hands back. The ground-truth
//! network is touched exclusively through the sanctioned actions a real
//! attacker has: P2P connection attempts and payments.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forwarding::{
    send_probe, ErrorClass, FloodTracker, ForwardingConfig, HtlcLedger, ProbeOutcome, Route,
    SimClock,
};
use crate::model::{
    derive_public_view, flip_estimate, sat_to_msat, BalanceEstimate, Channel, ChannelId,
    Direction, DirectionPolicy, GroundTruthNetwork, NodeId, PublicView,
};
use crate::routing::{find_route_on, order_targets, RouteQuery, RoutingGraph};
use crate::topology::HTLC_PAYLOAD_MAX_MSAT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProberConfig {
    pub max_probings_per_channel: u32,
    pub attempts_per_probing: u32,
    /// Stop refining a channel once the interval width is at most this
    /// fraction of its capacity.
    pub precision_target: f64,
    pub preprobe_amount_sat: u64,
    pub max_htlc_payload_msat: u64,
    /// Largest amount actually probed with; the payload limit minus a
    /// safety margin for fees along the route.
    pub safe_htlc_msat: u64,
    pub timeout_ms: u64,
    pub max_hops: usize,
}

impl Default for ProberConfig {
    fn default() -> Self {
        ProberConfig {
            max_probings_per_channel: 7,
            attempts_per_probing: 5,
            precision_target: 1.0 / 128.0,
            preprobe_amount_sat: 1_000,
            max_htlc_payload_msat: HTLC_PAYLOAD_MAX_MSAT,
            safe_htlc_msat: 4_200_000_000,
            timeout_ms: 10_000,
            max_hops: 10,
        }
    }
}

impl ProberConfig {
    pub fn validate(&self) -> Result<(), crate::topology::ConfigError> {
        use crate::topology::ConfigError;
        if self.safe_htlc_msat > self.max_htlc_payload_msat {
            return Err(ConfigError::field(
                "safe_htlc_msat",
                "must not exceed max_htlc_payload_msat",
            ));
        }
        if !(self.precision_target > 0.0 && self.precision_target <= 1.0) {
            return Err(ConfigError::field("precision_target", "must be within (0, 1]"));
        }
        if self.max_probings_per_channel == 0 || self.attempts_per_probing == 0 {
            return Err(ConfigError::field(
                "max_probings_per_channel",
                "probing budgets must be positive",
            ));
        }
        if self.max_hops == 0 || self.max_hops > crate::forwarding::PROTOCOL_MAX_HOPS {
            return Err(ConfigError::field("max_hops", "must be within 1..=20"));
        }
        Ok(())
    }
}

/// Per-channel knowledge the prober accumulates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelKnowledge {
    pub estimate: BalanceEstimate,
    pub capacity_msat: u64,
    pub probes_sent: u32,
    pub live: bool,
    /// The attacker's own entry channels; their balances are known exactly
    /// and never updated from probe errors.
    pub owned: bool,
}

/// Map from channel to the prober's current balance interval, plus probe
/// counters and the liveness flags the heuristics maintain.
///
/// The table also remembers which channel directions the prober's own
/// hanging HTLCs may still occupy. A timed-out probe leaves in-flight HTLCs
/// somewhere along its route; the prober cannot know where exactly, so it
/// treats the full per-hop amounts as potentially committed. Balance
/// failures observed on such channels are then interpreted against the
/// occupied capacity, which keeps the bounds sound with respect to the
/// real balance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateTable {
    entries: BTreeMap<ChannelId, ChannelKnowledge>,
    suspected_in_flight: BTreeMap<(ChannelId, Direction), u64>,
}

impl EstimateTable {
    /// Initializes every channel of the view at the no-information interval.
    pub fn new(view: &PublicView) -> Self {
        let entries = view
            .channels()
            .map(|ch| {
                (
                    ch.id.clone(),
                    ChannelKnowledge {
                        estimate: BalanceEstimate::unknown(ch.capacity_msat),
                        capacity_msat: ch.capacity_msat,
                        probes_sent: 0,
                        live: false,
                        owned: false,
                    },
                )
            })
            .collect();
        EstimateTable {
            entries,
            suspected_in_flight: BTreeMap::new(),
        }
    }

    pub fn get(&self, channel: &ChannelId) -> Option<&ChannelKnowledge> {
        self.entries.get(channel)
    }

    pub fn estimate(&self, channel: &ChannelId) -> Option<BalanceEstimate> {
        self.entries.get(channel).map(|k| k.estimate)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ChannelId, &ChannelKnowledge)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers an attacker-owned channel with its exactly-known
    /// source-side balance.
    pub fn set_owned(&mut self, channel: &ChannelId, balance_source_msat: u64) {
        if let Some(k) = self.entries.get_mut(channel) {
            k.estimate = BalanceEstimate::exact(balance_source_msat);
            k.owned = true;
            k.live = true;
        }
    }

    pub fn mark_live(&mut self, channel: &ChannelId) {
        if let Some(k) = self.entries.get_mut(channel) {
            k.live = true;
        }
    }

    pub fn is_live(&self, channel: &ChannelId) -> bool {
        self.entries.get(channel).map(|k| k.live).unwrap_or(false)
    }

    pub fn is_owned(&self, channel: &ChannelId) -> bool {
        self.entries.get(channel).map(|k| k.owned).unwrap_or(false)
    }

    fn bump_probes(&mut self, channel: &ChannelId) {
        if let Some(k) = self.entries.get_mut(channel) {
            k.probes_sent += 1;
        }
    }

    /// Records a hung probe: each hop of its route may be left holding an
    /// in-flight HTLC of the per-hop amount.
    pub fn note_hanging_route(&mut self, route: &Route) {
        for hop in route.hops() {
            *self
                .suspected_in_flight
                .entry((hop.channel.clone(), hop.direction))
                .or_insert(0) += hop.amount_msat;
        }
    }

    /// Upper bound on capacity the prober's own hanging HTLCs may occupy
    /// on this channel direction.
    pub fn suspected_in_flight_msat(&self, channel: &ChannelId, dir: Direction) -> u64 {
        self.suspected_in_flight
            .get(&(channel.clone(), dir))
            .copied()
            .unwrap_or(0)
    }

    /// Upper bound on the amount that could traverse `channel` in `dir`
    /// according to the current interval. Routing filters against this.
    pub fn traversal_bound_msat(&self, channel: &ChannelId, dir: Direction) -> u64 {
        match self.entries.get(channel) {
            Some(k) => match dir {
                Direction::SrcToDst => k.estimate.b_max_msat,
                Direction::DstToSrc => k.capacity_msat - k.estimate.b_min_msat,
            },
            None => 0,
        }
    }

    /// The traversal-side balance cleared `amount`: raise the lower bound
    /// for that side. On contradicting evidence (possible under
    /// countermeasures) the fresher observation wins.
    fn raise_traversal_min(&mut self, channel: &ChannelId, dir: Direction, amount_msat: u64) {
        let Some(k) = self.entries.get_mut(channel) else {
            return;
        };
        match dir {
            Direction::SrcToDst => {
                if amount_msat > k.estimate.b_min_msat {
                    k.estimate.b_min_msat = amount_msat.min(k.capacity_msat);
                    if k.estimate.b_min_msat > k.estimate.b_max_msat {
                        k.estimate.b_max_msat = k.estimate.b_min_msat;
                    }
                }
            }
            Direction::DstToSrc => {
                let cap = k.capacity_msat;
                let bound = cap.saturating_sub(amount_msat);
                if bound < k.estimate.b_max_msat {
                    k.estimate.b_max_msat = bound;
                    if k.estimate.b_min_msat > k.estimate.b_max_msat {
                        k.estimate.b_min_msat = k.estimate.b_max_msat;
                    }
                }
            }
        }
    }

    /// The traversal-side balance could not carry `amount`: lower the upper
    /// bound for that side.
    fn lower_traversal_max(&mut self, channel: &ChannelId, dir: Direction, amount_msat: u64) {
        let Some(k) = self.entries.get_mut(channel) else {
            return;
        };
        match dir {
            Direction::SrcToDst => {
                if amount_msat < k.estimate.b_max_msat {
                    k.estimate.b_max_msat = amount_msat;
                    if k.estimate.b_min_msat > k.estimate.b_max_msat {
                        k.estimate.b_min_msat = k.estimate.b_max_msat;
                    }
                }
            }
            Direction::DstToSrc => {
                let cap = k.capacity_msat;
                let bound = cap.saturating_sub(amount_msat);
                if bound > k.estimate.b_min_msat {
                    k.estimate.b_min_msat = bound;
                    if k.estimate.b_min_msat > k.estimate.b_max_msat {
                        k.estimate.b_max_msat = k.estimate.b_min_msat;
                    }
                }
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, channel: &ChannelId, estimate: BalanceEstimate) {
        if let Some(k) = self.entries.get_mut(channel) {
            k.estimate = estimate;
        }
    }
}

/// Probing finished for this interval: the bounds have met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("estimate interval is closed; probing complete")]
pub struct IntervalClosed;

/// Binary-search amount for the next probe: the interval midpoint, clamped
/// to the largest safely sendable HTLC.
pub fn next_amount(estimate: &BalanceEstimate, cfg: &ProberConfig) -> Result<u64, IntervalClosed> {
    if estimate.b_min_msat >= estimate.b_max_msat {
        return Err(IntervalClosed);
    }
    let midpoint = (estimate.b_min_msat + estimate.b_max_msat) / 2;
    Ok(midpoint.min(cfg.safe_htlc_msat))
}

/// Applies one probe's outcome to the estimate table (the per-route update
/// rule): every hop strictly before the erring hop forwarded its amount, so
/// its traversal-side lower bound rises; the erring hop's bound moves
/// according to the error class. Timeouts and unexpected errors carry no
/// attributable information. Hops at nodes with parallel channels to the
/// next node are skipped under non-strict forwarding, where the true
/// traversed channel is ambiguous.
pub fn update_estimates(
    route: &Route,
    outcome: &ProbeOutcome,
    view: &PublicView,
    non_strict: bool,
    table: &mut EstimateTable,
) {
    let Some(error) = outcome.error else {
        return;
    };
    if !error.usable() {
        return;
    }
    let Some(erring) = outcome.erring_hop_index else {
        return;
    };
    let hops = route.hops();
    debug_assert!(erring >= 1 && erring <= hops.len());

    for (i, hop) in hops.iter().take(erring).enumerate() {
        // Liveness heuristic: an error from hop j proves every channel up
        // to and including j responded.
        table.mark_live(&hop.channel);

        if table.is_owned(&hop.channel) {
            continue;
        }
        if non_strict && view.channels_between(&hop.from, &hop.to).len() > 1 {
            // The forwarding node may have used any parallel channel.
            continue;
        }
        let k = i + 1;
        if k < erring {
            table.raise_traversal_min(&hop.channel, hop.direction, hop.amount_msat);
        } else {
            match error {
                ErrorClass::TemporaryChannelFailure => {
                    // The hop refused what may have been balance partly
                    // occupied by our own hanging HTLCs; only amounts above
                    // that occupation bound the true balance.
                    let occupied =
                        table.suspected_in_flight_msat(&hop.channel, hop.direction);
                    table.lower_traversal_max(
                        &hop.channel,
                        hop.direction,
                        hop.amount_msat.saturating_add(occupied),
                    )
                }
                ErrorClass::UnknownPaymentDetails => {
                    table.raise_traversal_min(&hop.channel, hop.direction, hop.amount_msat)
                }
                _ => unreachable!("usable() filtered the other classes"),
            }
        }
    }
}

/// Where to attach the attacker and how to size its entry channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackerConfig {
    pub node_id: String,
    pub entries: EntrySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySpec {
    /// Entry channels of the given sizes, attached to the best-connected
    /// live nodes.
    HighestDegree { capacities_sat: Vec<u64> },
    /// Explicit peer/capacity pairs for fixtures.
    Explicit { peers: Vec<(String, u64)> },
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            node_id: "attacker".to_owned(),
            entries: EntrySpec::HighestDegree {
                // Four channels at the soft capacity cap plus one at the
                // safe-HTLC scale.
                capacities_sat: vec![16_777_215, 16_777_215, 16_777_215, 16_777_215, 4_300_000],
            },
        }
    }
}

/// The attacker's footprint in the network after attachment.
#[derive(Debug, Clone, PartialEq)]
pub struct Attacker {
    pub node_id: NodeId,
    pub entry_channels: Vec<ChannelId>,
    pub entry_peers: Vec<NodeId>,
    /// Source-side balance of each entry channel; the attacker funded them
    /// and knows these exactly.
    pub entry_balances: Vec<(ChannelId, u64)>,
}

impl Attacker {
    pub fn committed_capital_msat(&self, net: &GroundTruthNetwork) -> u64 {
        self.entry_channels
            .iter()
            .filter_map(|id| net.channel(id))
            .map(|ch| ch.capacity_msat)
            .sum()
    }
}

/// Adds the attacker node and its entry channels to the network. The
/// attacker funds every channel, so its side starts with the full capacity.
pub fn attach_attacker(
    net: &mut GroundTruthNetwork,
    cfg: &AttackerConfig,
) -> Result<Attacker, crate::topology::ConfigError> {
    use crate::topology::ConfigError;
    let attacker_id = NodeId::new(cfg.node_id.clone());
    if net.node(&attacker_id).is_some() {
        return Err(ConfigError::field("node_id", "already present in the network"));
    }
    let peers: Vec<(NodeId, u64)> = match &cfg.entries {
        EntrySpec::Explicit { peers } => peers
            .iter()
            .map(|(id, cap)| (NodeId::new(id.clone()), *cap))
            .collect(),
        EntrySpec::HighestDegree { capacities_sat } => {
            let mut candidates: Vec<&NodeId> = net
                .nodes()
                .filter(|n| n.live && n.id != attacker_id)
                .map(|n| &n.id)
                .collect();
            candidates.sort_by(|a, b| {
                net.adjacent(b)
                    .len()
                    .cmp(&net.adjacent(a).len())
                    .then_with(|| a.cmp(b))
            });
            if candidates.is_empty() {
                return Err(ConfigError::field("entries", "no live nodes to attach to"));
            }
            capacities_sat
                .iter()
                .enumerate()
                .map(|(i, cap)| (candidates[i % candidates.len()].clone(), *cap))
                .collect()
        }
    };
    if peers.is_empty() {
        return Err(ConfigError::field("entries", "at least one entry channel required"));
    }

    net.add_node(crate::model::Node {
        id: attacker_id.clone(),
        live: true,
        latency: crate::model::LatencyParams::default(),
    })
    .map_err(|e| ConfigError::field("node_id", &e.to_string()))?;

    let mut attacker = Attacker {
        node_id: attacker_id.clone(),
        entry_channels: Vec::new(),
        entry_peers: Vec::new(),
        entry_balances: Vec::new(),
    };
    for (i, (peer, capacity_sat)) in peers.iter().enumerate() {
        if net.node(peer).is_none() {
            return Err(ConfigError::field("entries", "peer not present in the network"));
        }
        let capacity_msat = sat_to_msat(*capacity_sat);
        let id = ChannelId::new(format!("entry{i}"));
        let (source, destination, balance_source) = if attacker_id < *peer {
            (attacker_id.clone(), peer.clone(), capacity_msat)
        } else {
            (peer.clone(), attacker_id.clone(), 0)
        };
        let policy = DirectionPolicy {
            active: true,
            max_htlc_msat: capacity_msat.min(HTLC_PAYLOAD_MAX_MSAT),
            base_fee_msat: 0,
            fee_ppm: 0,
        };
        net.add_channel(
            Channel::new(
                id.clone(),
                source,
                destination,
                capacity_msat,
                balance_source,
                policy.clone(),
                policy,
            )
            .map_err(|e| ConfigError::field("entries", &e.to_string()))?,
        )
        .map_err(|e| ConfigError::field("entries", &e.to_string()))?;
        attacker.entry_channels.push(id.clone());
        attacker.entry_peers.push(peer.clone());
        attacker.entry_balances.push((id, balance_source));
    }
    Ok(attacker)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbePhase {
    PreProbe,
    Main,
    SecondPass,
}

/// One append-only log entry: a probe that was sent, or a route search that
/// came up empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub phase: ProbePhase,
    pub target: ChannelId,
    pub target_direction: Direction,
    pub amount_msat: u64,
    pub attempt: AttemptResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttemptResult {
    NoRoute,
    Sent {
        route: Route,
        outcome: ProbeOutcome,
        estimates_before: BalanceEstimate,
        estimates_after: BalanceEstimate,
    },
}

impl ProbeRecord {
    pub fn outcome(&self) -> Option<&ProbeOutcome> {
        match &self.attempt {
            AttemptResult::Sent { outcome, .. } => Some(outcome),
            AttemptResult::NoRoute => None,
        }
    }

    pub fn route(&self) -> Option<&Route> {
        match &self.attempt {
            AttemptResult::Sent { route, .. } => Some(route),
            AttemptResult::NoRoute => None,
        }
    }
}

/// Append-only record of every probe, for metrics and cost accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeLog {
    records: Vec<ProbeRecord>,
}

impl ProbeLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, record: ProbeRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Probes actually sent (routes found), i.e. onions on the wire.
    pub fn onions_sent(&self) -> usize {
        self.records.iter().filter(|r| r.outcome().is_some()).count()
    }

    pub fn usable_onions(&self) -> usize {
        self.records
            .iter()
            .filter_map(|r| r.outcome())
            .filter(|o| o.error.map(|e| e.usable()).unwrap_or(false))
            .count()
    }
}

/// Everything a finished probing run hands to metrics and reporting.
#[derive(Debug, Clone)]
pub struct ProbeRun {
    pub table: EstimateTable,
    pub log: ProbeLog,
    pub attacker: Attacker,
    pub selected_channels: BTreeSet<ChannelId>,
    pub probed_channels: Vec<ChannelId>,
    pub simulated_ms: u64,
    pub fees_collected_msat: u64,
    pub hanging_htlcs: usize,
}

/// A single probing run against one network: owns all mutable attacker and
/// simulation state. One probe is in flight at a time.
pub struct ProbeSession<'a> {
    net: &'a mut GroundTruthNetwork,
    view: PublicView,
    graph: RoutingGraph,
    attacker: Attacker,
    cfg: ProberConfig,
    fwd_cfg: ForwardingConfig,
    table: EstimateTable,
    log: ProbeLog,
    ledger: HtlcLedger,
    flood: FloodTracker,
    clock: SimClock,
    rng: ChaCha8Rng,
    fees_collected_msat: u64,
    next_seq: u64,
}

impl<'a> ProbeSession<'a> {
    pub fn new(
        net: &'a mut GroundTruthNetwork,
        attacker: Attacker,
        cfg: ProberConfig,
        fwd_cfg: ForwardingConfig,
        seed: u64,
    ) -> Self {
        let view = derive_public_view(net);
        let graph = RoutingGraph::new(&view);
        let mut table = EstimateTable::new(&view);
        for (id, balance) in &attacker.entry_balances {
            table.set_owned(id, *balance);
        }
        ProbeSession {
            net,
            view,
            graph,
            attacker,
            cfg,
            fwd_cfg,
            table,
            log: ProbeLog::new(),
            ledger: HtlcLedger::new(),
            flood: FloodTracker::new(),
            clock: SimClock::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            fees_collected_msat: 0,
            next_seq: 0,
        }
    }

    pub fn view(&self) -> &PublicView {
        &self.view
    }

    pub fn table(&self) -> &EstimateTable {
        &self.table
    }

    /// Channel selection: connect to every node and mark channels with both
    /// parties reachable as live, then pre-probe every gossip-active
    /// channel with a small amount and keep those that answer with a usable
    /// error. Pre-probe outcomes feed the estimates like any other probe.
    pub fn select_channels(&mut self) -> BTreeSet<ChannelId> {
        self.select_channels_observed(&mut |_, _| {})
    }

    fn select_channels_observed(
        &mut self,
        observer: &mut dyn FnMut(&ProbeRecord, &EstimateTable),
    ) -> BTreeSet<ChannelId> {
        let mut selected = BTreeSet::new();

        // Heuristic 1: P2P connection attempts to both endpoints.
        let connectable: BTreeSet<NodeId> = self
            .view
            .node_ids()
            .iter()
            .filter(|id| crate::forwarding::connect(self.net, id))
            .cloned()
            .collect();
        let channel_ids: Vec<ChannelId> = self.view.channels().map(|c| c.id.clone()).collect();
        for id in &channel_ids {
            let ch = self.view.channel(id).expect("listed channel");
            // Only gossip-active channels are suitable for probing; routing
            // never considers the rest.
            if ch.gossip_active()
                && connectable.contains(&ch.source)
                && connectable.contains(&ch.destination)
            {
                selected.insert(id.clone());
                self.table.mark_live(id);
            }
        }

        // Heuristic 2: a small pre-probe to every gossip-active channel.
        let preprobe_msat = sat_to_msat(self.cfg.preprobe_amount_sat);
        for id in &channel_ids {
            if self.table.is_owned(id) {
                continue;
            }
            let ch = self.view.channel(id).expect("listed channel");
            if !ch.gossip_active() {
                continue;
            }
            let mut directions = Vec::new();
            if ch.policy(Direction::SrcToDst).active {
                directions.push(Direction::SrcToDst);
            }
            if ch.policy(Direction::DstToSrc).active {
                directions.push(Direction::DstToSrc);
            }
            let mut usable = false;
            for dir in directions {
                let attempt = self.probe_target_once(
                    id,
                    dir,
                    preprobe_msat,
                    &BTreeSet::new(),
                    ProbePhase::PreProbe,
                    observer,
                );
                match attempt {
                    Some(outcome) => {
                        usable = outcome.error.map(|e| e.usable()).unwrap_or(false);
                        break;
                    }
                    None => continue,
                }
            }
            if usable {
                selected.insert(id.clone());
                self.table.mark_live(id);
            }
        }
        selected
    }

    /// Runs the full probing campaign and consumes the session.
    pub fn probe_all(self) -> ProbeRun {
        self.probe_all_observed(|_, _| {})
    }

    /// [`ProbeSession::probe_all`] with a callback invoked after every log
    /// append; evaluation harnesses use it to check estimates step by step.
    pub fn probe_all_observed(
        mut self,
        mut observer: impl FnMut(&ProbeRecord, &EstimateTable),
    ) -> ProbeRun {
        let selected = self.select_channels_observed(&mut observer);
        let order = order_targets(&self.view, &self.attacker.entry_peers);

        let mut probed = Vec::new();
        for id in &order {
            if !selected.contains(id) || self.table.is_owned(id) {
                continue;
            }
            self.probe_channel(id, ProbePhase::Main, &mut observer);
            probed.push(id.clone());
        }

        // Second pass over channels discovered live while probing.
        for id in &order {
            if selected.contains(id) || self.table.is_owned(id) || !self.table.is_live(id) {
                continue;
            }
            if self.at_precision(id) {
                continue;
            }
            self.probe_channel(id, ProbePhase::SecondPass, &mut observer);
            probed.push(id.clone());
        }

        ProbeRun {
            simulated_ms: self.clock.now_ms(),
            fees_collected_msat: self.fees_collected_msat,
            hanging_htlcs: self.ledger.in_flight_count(),
            table: self.table,
            log: self.log,
            attacker: self.attacker,
            selected_channels: selected,
            probed_channels: probed,
        }
    }

    fn at_precision(&self, channel: &ChannelId) -> bool {
        let Some(k) = self.table.get(channel) else {
            return true;
        };
        if k.capacity_msat == 0 {
            return true;
        }
        k.estimate.width_msat() as f64 / k.capacity_msat as f64 <= self.cfg.precision_target
    }

    /// Direction and amount for the next probing round. A direction whose
    /// midpoint fits under the HTLC clamp halves the interval exactly, so
    /// it wins over a clamped one; both sides sum to the capacity, so
    /// probing the small end yields the same information. Forward breaks
    /// ties. Returns `None` when no direction can make progress (the
    /// channel is done).
    fn choose_direction(&self, channel: &ChannelId) -> Option<(Direction, u64)> {
        let k = self.table.get(channel)?;
        let ch = self.view.channel(channel)?;
        let mut clamped_fallback = None;
        for dir in [Direction::SrcToDst, Direction::DstToSrc] {
            if !ch.policy(dir).active {
                continue;
            }
            let oriented = match dir {
                Direction::SrcToDst => k.estimate,
                Direction::DstToSrc => flip_estimate(k.capacity_msat, k.estimate),
            };
            let Ok(amount) = next_amount(&oriented, &self.cfg) else {
                continue;
            };
            // A clamped amount at or below the known lower bound can no
            // longer split the interval from this side.
            if amount <= oriented.b_min_msat {
                continue;
            }
            if amount == self.cfg.safe_htlc_msat
                && (oriented.b_min_msat + oriented.b_max_msat) / 2 > amount
            {
                if clamped_fallback.is_none() {
                    clamped_fallback = Some((dir, amount));
                }
                continue;
            }
            return Some((dir, amount));
        }
        clamped_fallback
    }

    fn probe_channel(
        &mut self,
        target: &ChannelId,
        phase: ProbePhase,
        observer: &mut impl FnMut(&ProbeRecord, &EstimateTable),
    ) {
        for _probing in 0..self.cfg.max_probings_per_channel {
            if self.at_precision(target) {
                break;
            }
            let Some((mut dir, mut amount)) = self.choose_direction(target) else {
                break;
            };
            let mut excluded: BTreeSet<ChannelId> = BTreeSet::new();
            let mut updated = false;
            let mut sent_in_round = 0u32;
            for _attempt in 0..self.cfg.attempts_per_probing {
                let before = self.table.estimate(target).expect("target in table");
                match self.probe_target_once(target, dir, amount, &excluded, phase, observer) {
                    None => {
                        // No admissible route in this direction; flip if
                        // the other side can make progress.
                        if let Some((d, a)) = self.flip_viable(target, dir) {
                            dir = d;
                            amount = a;
                        }
                    }
                    Some(outcome) => {
                        sent_in_round += 1;
                        let after = self.table.estimate(target).expect("target in table");
                        if after != before {
                            updated = true;
                            break;
                        }
                        // The target learned nothing; exclude the channel
                        // the failure was attributed to and try again.
                        if let Some(reported) = &outcome.reported_channel {
                            if reported != target {
                                excluded.insert(reported.clone());
                            }
                        }
                    }
                }
            }
            if !updated && sent_in_round == 0 {
                // Both directions are unroutable and nothing changed; more
                // rounds would repeat the same empty searches.
                break;
            }
        }
    }

    fn flip_viable(&self, channel: &ChannelId, current: Direction) -> Option<(Direction, u64)> {
        let other = current.flipped();
        let k = self.table.get(channel)?;
        let ch = self.view.channel(channel)?;
        if !ch.policy(other).active {
            return None;
        }
        let oriented = match other {
            Direction::SrcToDst => k.estimate,
            Direction::DstToSrc => flip_estimate(k.capacity_msat, k.estimate),
        };
        let amount = next_amount(&oriented, &self.cfg).ok()?;
        if amount <= oriented.b_min_msat {
            return None;
        }
        Some((other, amount))
    }

    /// One route search plus, if a route exists, one probe. Returns the
    /// outcome, or `None` for no-route (which is logged too).
    fn probe_target_once(
        &mut self,
        target: &ChannelId,
        dir: Direction,
        amount_msat: u64,
        excluded: &BTreeSet<ChannelId>,
        phase: ProbePhase,
        observer: &mut dyn FnMut(&ProbeRecord, &EstimateTable),
    ) -> Option<ProbeOutcome> {
        let query = RouteQuery {
            attacker: self.attacker.node_id.clone(),
            entry_channels: self.attacker.entry_channels.clone(),
            target_channel: target.clone(),
            target_direction: dir,
            amount_msat,
            excluded: excluded.clone(),
            max_hops: self.cfg.max_hops,
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        match find_route_on(&self.graph, &self.view, &self.table, &query) {
            None => {
                let record = ProbeRecord {
                    seq,
                    timestamp_ms: self.clock.now_ms(),
                    phase,
                    target: target.clone(),
                    target_direction: dir,
                    amount_msat,
                    attempt: AttemptResult::NoRoute,
                };
                observer(&record, &self.table);
                self.log.push(record);
                None
            }
            Some(route) => {
                let estimates_before = self.table.estimate(target).expect("target in table");
                let outcome = send_probe(
                    self.net,
                    &mut self.ledger,
                    &mut self.flood,
                    &route,
                    amount_msat,
                    false,
                    &self.fwd_cfg,
                    &mut self.clock,
                    &mut self.rng,
                )
                .expect("search produces well-formed routes");
                self.fees_collected_msat += outcome.fee_paid_msat;
                if outcome.hanging {
                    self.table.note_hanging_route(&route);
                }
                update_estimates(
                    &route,
                    &outcome,
                    &self.view,
                    self.fwd_cfg.non_strict_forwarding,
                    &mut self.table,
                );
                self.table.bump_probes(target);
                let estimates_after = self.table.estimate(target).expect("target in table");
                let record = ProbeRecord {
                    seq,
                    timestamp_ms: self.clock.now_ms(),
                    phase,
                    target: target.clone(),
                    target_direction: dir,
                    amount_msat,
                    attempt: AttemptResult::Sent {
                        route,
                        outcome: outcome.clone(),
                        estimates_before,
                        estimates_after,
                    },
                };
                observer(&record, &self.table);
                self.log.push(record);
                Some(outcome)
            }
        }
    }
}

/// Convenience driver: attach nothing, derive the view, run the campaign.
pub fn probe_all(
    net: &mut GroundTruthNetwork,
    attacker: Attacker,
    cfg: ProberConfig,
    fwd_cfg: ForwardingConfig,
    seed: u64,
) -> ProbeRun {
    ProbeSession::new(net, attacker, cfg, fwd_cfg, seed).probe_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sat_to_msat, LatencyParams, Node};

    fn node(id: &str, live: bool) -> Node {
        Node {
            id: NodeId::new(id),
            live,
            latency: LatencyParams::default(),
        }
    }

    fn zero_fee() -> DirectionPolicy {
        DirectionPolicy {
            active: true,
            max_htlc_msat: u64::MAX,
            base_fee_msat: 0,
            fee_ppm: 0,
        }
    }

    fn add_channel(
        net: &mut GroundTruthNetwork,
        id: &str,
        a: &str,
        b: &str,
        cap_sat: u64,
        bal_from_a_sat: u64,
    ) {
        let (src, dst, bal) = if a < b {
            (a, b, bal_from_a_sat)
        } else {
            (b, a, cap_sat - bal_from_a_sat)
        };
        net.add_channel(
            Channel::new(
                ChannelId::new(id),
                NodeId::new(src),
                NodeId::new(dst),
                sat_to_msat(cap_sat),
                sat_to_msat(bal),
                zero_fee(),
                zero_fee(),
            )
            .unwrap(),
        )
        .unwrap();
    }

    #[test]
    fn next_amount_examples() {
        let cfg = ProberConfig::default();
        let est = |lo: u64, hi: u64| BalanceEstimate {
            b_min_msat: sat_to_msat(lo),
            b_max_msat: sat_to_msat(hi),
        };
        assert_eq!(next_amount(&est(0, 100_000), &cfg), Ok(sat_to_msat(50_000)));
        // Midpoint above the safe HTLC limit clamps to it.
        assert_eq!(
            next_amount(&est(0, 16_777_215), &cfg),
            Ok(cfg.safe_htlc_msat)
        );
        assert_eq!(next_amount(&est(40, 60), &cfg), Ok(sat_to_msat(50)));
        assert_eq!(next_amount(&est(50, 50), &cfg), Err(IntervalClosed));
    }

    /// Three-hop line with a view, for direct update_estimates checks.
    fn three_hop() -> (GroundTruthNetwork, PublicView, Route) {
        let mut net = GroundTruthNetwork::new();
        for id in ["a", "b", "c", "d"] {
            net.add_node(node(id, true)).unwrap();
        }
        add_channel(&mut net, "ch1", "a", "b", 100, 100);
        add_channel(&mut net, "ch2", "b", "c", 100, 100);
        add_channel(&mut net, "ch3", "c", "d", 100, 100);
        let view = derive_public_view(&net);
        let route = Route::through_net(
            &net,
            &[
                (ChannelId::new("ch1"), Direction::SrcToDst),
                (ChannelId::new("ch2"), Direction::SrcToDst),
                (ChannelId::new("ch3"), Direction::SrcToDst),
            ],
            sat_to_msat(50),
        )
        .unwrap();
        (net, view, route)
    }

    fn outcome(erring: usize, error: ErrorClass) -> ProbeOutcome {
        ProbeOutcome {
            erring_hop_index: Some(erring),
            error: Some(error),
            reported_channel: None,
            elapsed_ms: 0,
            hanging: false,
            fee_paid_msat: 0,
        }
    }

    fn estimates_sat(table: &EstimateTable, id: &str) -> (u64, u64) {
        let e = table.estimate(&ChannelId::new(id)).unwrap();
        (e.b_min_msat / 1000, e.b_max_msat / 1000)
    }

    #[test]
    fn temporary_failure_midroute_updates_all_passed_hops() {
        let (_, view, route) = three_hop();
        let mut table = EstimateTable::new(&view);
        update_estimates(
            &route,
            &outcome(2, ErrorClass::TemporaryChannelFailure),
            &view,
            false,
            &mut table,
        );
        assert_eq!(estimates_sat(&table, "ch1"), (50, 100));
        assert_eq!(estimates_sat(&table, "ch2"), (0, 50));
        assert_eq!(estimates_sat(&table, "ch3"), (0, 100));
        // Liveness: channels up to the erring hop are proven live.
        assert!(table.is_live(&ChannelId::new("ch1")));
        assert!(table.is_live(&ChannelId::new("ch2")));
        assert!(!table.is_live(&ChannelId::new("ch3")));
    }

    #[test]
    fn unknown_details_at_final_hop_raises_all_lower_bounds() {
        let (_, view, route) = three_hop();
        let mut table = EstimateTable::new(&view);
        update_estimates(
            &route,
            &outcome(3, ErrorClass::UnknownPaymentDetails),
            &view,
            false,
            &mut table,
        );
        assert_eq!(estimates_sat(&table, "ch1"), (50, 100));
        assert_eq!(estimates_sat(&table, "ch2"), (50, 100));
        assert_eq!(estimates_sat(&table, "ch3"), (50, 100));
    }

    #[test]
    fn timeout_changes_nothing() {
        let (_, view, route) = three_hop();
        let mut table = EstimateTable::new(&view);
        let before = table.clone();
        update_estimates(
            &route,
            &ProbeOutcome {
                erring_hop_index: None,
                error: Some(ErrorClass::Timeout),
                reported_channel: None,
                elapsed_ms: 10_000,
                hanging: true,
                fee_paid_msat: 0,
            },
            &view,
            false,
            &mut table,
        );
        assert_eq!(table, before);
    }

    #[test]
    fn reverse_hop_updates_map_through_flip() {
        // Traverse ch1 from b to a: the traversal side is the destination.
        let mut net = GroundTruthNetwork::new();
        net.add_node(node("a", true)).unwrap();
        net.add_node(node("b", true)).unwrap();
        add_channel(&mut net, "ch1", "a", "b", 100, 20);
        let view = derive_public_view(&net);
        let route = Route::through_net(
            &net,
            &[(ChannelId::new("ch1"), Direction::DstToSrc)],
            sat_to_msat(50),
        )
        .unwrap();
        let mut table = EstimateTable::new(&view);
        // Unknown details at the only hop: destination-side balance >= 50,
        // so the source-side upper bound drops to 50.
        update_estimates(
            &route,
            &outcome(1, ErrorClass::UnknownPaymentDetails),
            &view,
            false,
            &mut table,
        );
        assert_eq!(estimates_sat(&table, "ch1"), (0, 50));
    }

    #[test]
    fn parallel_hops_are_skipped_under_non_strict_forwarding() {
        let mut net = GroundTruthNetwork::new();
        for id in ["a", "b", "c"] {
            net.add_node(node(id, true)).unwrap();
        }
        add_channel(&mut net, "ch1", "a", "b", 100, 100);
        add_channel(&mut net, "ch2", "b", "c", 100, 100);
        add_channel(&mut net, "ch2b", "b", "c", 100, 100);
        let view = derive_public_view(&net);
        let route = Route::through_net(
            &net,
            &[
                (ChannelId::new("ch1"), Direction::SrcToDst),
                (ChannelId::new("ch2"), Direction::SrcToDst),
            ],
            sat_to_msat(50),
        )
        .unwrap();
        let mut table = EstimateTable::new(&view);
        update_estimates(
            &route,
            &outcome(2, ErrorClass::TemporaryChannelFailure),
            &view,
            true,
            &mut table,
        );
        // ch1 updated normally, the ambiguous parallel hop untouched.
        assert_eq!(estimates_sat(&table, "ch1"), (50, 100));
        assert_eq!(estimates_sat(&table, "ch2"), (0, 100));
        assert_eq!(estimates_sat(&table, "ch2b"), (0, 100));
    }

    /// Attacker with one entry channel to `hub`, which links to the target.
    fn ideal_fixture(cap_sat: u64, bal_sat: u64) -> (GroundTruthNetwork, Attacker) {
        let mut net = GroundTruthNetwork::new();
        for id in ["hub", "tgt"] {
            net.add_node(node(id, true)).unwrap();
        }
        add_channel(&mut net, "t", "hub", "tgt", cap_sat, bal_sat);
        let attacker = attach_attacker(
            &mut net,
            &AttackerConfig {
                node_id: "attacker".into(),
                entries: EntrySpec::Explicit {
                    peers: vec![("hub".into(), 16_777_215)],
                },
            },
        )
        .unwrap();
        (net, attacker)
    }

    #[test]
    fn binary_search_converges_within_seven_probes() {
        let (mut net, attacker) = ideal_fixture(100_000, 37_000);
        let run = probe_all(
            &mut net,
            attacker,
            ProberConfig::default(),
            ForwardingConfig::default(),
            1,
        );
        let k = run.table.get(&ChannelId::new("t")).unwrap();
        // ceil(100_000 sat / 128) = 782 sat.
        assert!(
            k.estimate.width_msat() <= sat_to_msat(782),
            "width {} msat too wide",
            k.estimate.width_msat()
        );
        assert!(k.estimate.contains(sat_to_msat(37_000)));
        // Pre-probe plus at most seven probings, one route each here.
        assert!(k.probes_sent <= 8);
    }

    #[test]
    fn large_channel_plateaus_at_half_information() {
        let cfg = ProberConfig::default();
        let safe_sat = cfg.safe_htlc_msat / 1000;
        let cap = 4 * safe_sat;
        // Both sides hold more than the max probe amount.
        let (mut net, _) = {
            let mut net = GroundTruthNetwork::new();
            for id in ["hub", "tgt"] {
                net.add_node(node(id, true)).unwrap();
            }
            add_channel(&mut net, "t", "hub", "tgt", cap, 2 * safe_sat);
            (net, ())
        };
        // Entries to both endpoints so the reverse direction routes too.
        let attacker = attach_attacker(
            &mut net,
            &AttackerConfig {
                node_id: "attacker".into(),
                entries: EntrySpec::Explicit {
                    peers: vec![("hub".into(), 16_777_215), ("tgt".into(), 16_777_215)],
                },
            },
        )
        .unwrap();
        let run = probe_all(&mut net, attacker, cfg.clone(), ForwardingConfig::default(), 3);
        let k = run.table.get(&ChannelId::new("t")).unwrap();
        let info = 1.0 - k.estimate.width_msat() as f64 / k.capacity_msat as f64;
        assert!((info - 0.5).abs() < 0.01, "information coefficient {info}");
        // The plateau interval is [safe, 3*safe].
        assert_eq!(k.estimate.b_min_msat, cfg.safe_htlc_msat);
        assert_eq!(k.estimate.b_max_msat, 3 * cfg.safe_htlc_msat);
    }

    #[test]
    fn blocked_target_stays_unknown_with_noroute_log() {
        // attacker - A - m(10 sat) - B - t - C: the intermediary cannot
        // carry anything beyond the pre-probe bound.
        let mut net = GroundTruthNetwork::new();
        for id in ["ia", "ib", "ic"] {
            net.add_node(node(id, true)).unwrap();
        }
        add_channel(&mut net, "m", "ia", "ib", 10, 10);
        add_channel(&mut net, "t", "ib", "ic", 100_000, 40_000);
        let attacker = attach_attacker(
            &mut net,
            &AttackerConfig {
                node_id: "attacker".into(),
                entries: EntrySpec::Explicit {
                    peers: vec![("ia".into(), 16_777_215)],
                },
            },
        )
        .unwrap();
        let cfg = ProberConfig::default();
        let attempts = cfg.attempts_per_probing as usize;
        let run = probe_all(&mut net, attacker, cfg, ForwardingConfig::default(), 5);
        let k = run.table.get(&ChannelId::new("t")).unwrap();
        assert_eq!(k.estimate, BalanceEstimate::unknown(k.capacity_msat));
        let noroutes = run
            .log
            .records()
            .iter()
            .filter(|r| {
                r.target == ChannelId::new("t")
                    && r.phase == ProbePhase::Main
                    && matches!(r.attempt, AttemptResult::NoRoute)
            })
            .count();
        assert_eq!(noroutes, attempts);
    }

    #[test]
    fn select_channels_heuristics() {
        // attacker - ia - (low m) - ib - t1 - dead
        //                       \  - t2 - live
        let mut net = GroundTruthNetwork::new();
        net.add_node(node("ia", true)).unwrap();
        net.add_node(node("ib", true)).unwrap();
        net.add_node(node("xdead", false)).unwrap();
        net.add_node(node("ylive", true)).unwrap();
        // Low-balance intermediary: pre-probes through it fail early with a
        // usable error.
        add_channel(&mut net, "m", "ia", "ib", 100_000, 0);
        add_channel(&mut net, "t1", "ib", "xdead", 50_000, 25_000);
        add_channel(&mut net, "t2", "ib", "ylive", 50_000, 25_000);
        let attacker = attach_attacker(
            &mut net,
            &AttackerConfig {
                node_id: "attacker".into(),
                entries: EntrySpec::Explicit {
                    peers: vec![("ia".into(), 16_777_215)],
                },
            },
        )
        .unwrap();
        let mut session = ProbeSession::new(
            &mut net,
            attacker,
            ProberConfig::default(),
            ForwardingConfig::default(),
            9,
        );
        let selected = session.select_channels();
        // t2: both endpoints live (heuristic 1).
        assert!(selected.contains(&ChannelId::new("t2")));
        // t1: dead endpoint, but its pre-probe errs at the live low-balance
        // hop with a usable error, so heuristic 2 includes it.
        assert!(selected.contains(&ChannelId::new("t1")));
        // m: both endpoints live, included regardless of its zero balance.
        assert!(selected.contains(&ChannelId::new("m")));
    }

    #[test]
    fn dead_endpoint_and_failing_preprobe_is_excluded() {
        // Direct entry to the dead channel: pre-probe times out, heuristic
        // 1 fails on the dead endpoint.
        let mut net = GroundTruthNetwork::new();
        net.add_node(node("ia", true)).unwrap();
        net.add_node(node("xdead", false)).unwrap();
        add_channel(&mut net, "t", "ia", "xdead", 50_000, 25_000);
        let attacker = attach_attacker(
            &mut net,
            &AttackerConfig {
                node_id: "attacker".into(),
                entries: EntrySpec::Explicit {
                    peers: vec![("ia".into(), 16_777_215)],
                },
            },
        )
        .unwrap();
        let mut session = ProbeSession::new(
            &mut net,
            attacker,
            ProberConfig::default(),
            ForwardingConfig::default(),
            11,
        );
        let selected = session.select_channels();
        assert!(!selected.contains(&ChannelId::new("t")));
    }

    #[test]
    fn estimates_stay_sound_on_a_generated_network() {
        let mut cfg = crate::topology::TopologyConfig::new(60, 120, 21);
        cfg.balance_skew = 0.3;
        cfg.dead_node_fraction = 0.1;
        cfg.inactive_channel_fraction = 0.1;
        let mut net = crate::topology::generate_topology(&cfg).unwrap();
        let truth: BTreeMap<ChannelId, u64> = net
            .channels()
            .map(|c| (c.id.clone(), c.balance_source_msat()))
            .collect();
        let attacker = attach_attacker(&mut net, &AttackerConfig::default()).unwrap();
        let entry_set: BTreeSet<ChannelId> = attacker.entry_channels.iter().cloned().collect();
        let session = ProbeSession::new(
            &mut net,
            attacker,
            ProberConfig::default(),
            ForwardingConfig::default(),
            2,
        );
        let mut steps = 0usize;
        let run = session.probe_all_observed(|_, table| {
            steps += 1;
            for (id, k) in table.iter() {
                if entry_set.contains(id) {
                    continue;
                }
                let Some(&truth_balance) = truth.get(id) else {
                    continue;
                };
                assert!(
                    k.estimate.contains(truth_balance),
                    "estimate for {id} lost the true balance"
                );
                assert!(k.estimate.b_max_msat <= k.capacity_msat);
            }
        });
        assert!(steps > 0);
        assert_eq!(run.fees_collected_msat, 0, "failed probes pay no fees");
        // Budget: probes per channel bounded by the configured budget.
        let cfgp = ProberConfig::default();
        for (_, k) in run.table.iter() {
            assert!(
                k.probes_sent
                    <= cfgp.max_probings_per_channel * cfgp.attempts_per_probing + 2
            );
        }
    }
}
