//! Multi-hop payment execution against the ground truth.
//!
//! [`send_probe`] walks a route hop by hop the way a chain of forwarding
//! nodes would: dead nodes swallow the payment, policy violations and
//! missing balance fail it with the error a real sender would see, and the
//! final hop either settles (known preimage) or reports unknown payment
//! details. All tentative balance changes roll back on failure, so failed
//! payments are free; the only persistent traces are hanging HTLCs and
//! just-in-time rebalances.
//!
//! The module also hosts the countermeasure hooks: error merging, JIT
//! rebalancing and per-node flood detection.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Channel, ChannelId, Direction, DirectionPolicy, GroundTruthNetwork, LatencyParams, NodeId,
    PublicView,
};

/// BOLT route length limit.
pub const PROTOCOL_MAX_HOPS: usize = 20;

/// Simulated clock in milliseconds. One probe is in flight at a time, so a
/// plain counter advanced by each probe's elapsed time is sufficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    now_ms: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn advance(&mut self, ms: u64) {
        self.now_ms += ms;
    }
}

/// Error classes a sender can observe for a payment attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorClass {
    /// "channel temporary unavailable": inactive direction, HTLC limit, or
    /// insufficient balance at a forwarding hop.
    TemporaryChannelFailure,
    /// The payment reached the recipient, which does not know the preimage.
    UnknownPaymentDetails,
    /// No response within the sender timeout.
    Timeout,
    /// An error the sender cannot interpret.
    UnexpectedError,
}

impl ErrorClass {
    /// Whether the error carries balance information usable by a prober.
    pub fn usable(self) -> bool {
        matches!(
            self,
            ErrorClass::TemporaryChannelFailure | ErrorClass::UnknownPaymentDetails
        )
    }
}

/// One hop of a route: a channel traversed in a direction, carrying
/// `amount_msat` (the delivered amount plus all downstream fees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteHop {
    pub channel: ChannelId,
    pub direction: Direction,
    pub from: NodeId,
    pub to: NodeId,
    pub amount_msat: u64,
}

/// A sender-constructed route with per-hop amounts already worked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    hops: Vec<RouteHop>,
}

impl Route {
    pub fn from_hops(hops: Vec<RouteHop>) -> Result<Self, MalformedRoute> {
        if hops.is_empty() {
            return Err(MalformedRoute::Empty);
        }
        if hops.len() > PROTOCOL_MAX_HOPS {
            return Err(MalformedRoute::TooLong(hops.len()));
        }
        for pair in hops.windows(2) {
            if pair[0].to != pair[1].from {
                return Err(MalformedRoute::Discontiguous {
                    at: pair[1].from.clone(),
                    expected: pair[0].to.clone(),
                });
            }
        }
        if hops.iter().any(|h| h.amount_msat == 0) {
            return Err(MalformedRoute::ZeroAmount);
        }
        Ok(Route { hops })
    }

    /// Builds a route over the ground truth from `(channel, direction)`
    /// pairs, computing per-hop amounts backward from the delivered amount.
    pub fn through_net(
        net: &GroundTruthNetwork,
        hops: &[(ChannelId, Direction)],
        delivered_msat: u64,
    ) -> Result<Self, MalformedRoute> {
        Self::assemble(hops, delivered_msat, |id, dir| {
            net.channel(id).map(|ch| {
                (
                    ch.from_node(dir).clone(),
                    ch.to_node(dir).clone(),
                    ch.policy(dir).clone(),
                )
            })
        })
    }

    /// Same as [`Route::through_net`] but resolved against the public view;
    /// this is the constructor attacker-side code uses.
    pub fn through_view(
        view: &PublicView,
        hops: &[(ChannelId, Direction)],
        delivered_msat: u64,
    ) -> Result<Self, MalformedRoute> {
        Self::assemble(hops, delivered_msat, |id, dir| {
            view.channel(id).map(|ch| {
                (
                    ch.from_node(dir).clone(),
                    ch.to_node(dir).clone(),
                    ch.policy(dir).clone(),
                )
            })
        })
    }

    fn assemble(
        hops: &[(ChannelId, Direction)],
        delivered_msat: u64,
        resolve: impl Fn(&ChannelId, Direction) -> Option<(NodeId, NodeId, DirectionPolicy)>,
    ) -> Result<Self, MalformedRoute> {
        let mut resolved = Vec::with_capacity(hops.len());
        for (id, dir) in hops {
            let (from, to, policy) =
                resolve(id, *dir).ok_or_else(|| MalformedRoute::UnknownChannel(id.clone()))?;
            resolved.push((id.clone(), *dir, from, to, policy));
        }
        let amounts = amounts_along(
            resolved.iter().map(|(_, _, _, _, p)| p),
            delivered_msat,
        );
        let hops = resolved
            .into_iter()
            .zip(amounts)
            .map(|((channel, direction, from, to, _), amount_msat)| RouteHop {
                channel,
                direction,
                from,
                to,
                amount_msat,
            })
            .collect();
        Route::from_hops(hops)
    }

    pub fn hops(&self) -> &[RouteHop] {
        &self.hops
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn sender(&self) -> &NodeId {
        &self.hops[0].from
    }

    pub fn recipient(&self) -> &NodeId {
        &self.hops[self.hops.len() - 1].to
    }

    /// Amount delivered over the final hop.
    pub fn delivered_msat(&self) -> u64 {
        self.hops[self.hops.len() - 1].amount_msat
    }

    /// Amount the sender puts on the first hop (delivered plus all fees).
    pub fn sent_msat(&self) -> u64 {
        self.hops[0].amount_msat
    }
}

/// Per-hop amounts for a hop sequence, last to first: each forwarding node
/// keeps the fee of its outgoing hop, so the amount grows toward the sender.
pub fn amounts_along<'a>(
    policies: impl Iterator<Item = &'a DirectionPolicy>,
    delivered_msat: u64,
) -> Vec<u64> {
    let policies: Vec<&DirectionPolicy> = policies.collect();
    let mut amounts = vec![delivered_msat; policies.len()];
    for k in (0..policies.len().saturating_sub(1)).rev() {
        let downstream = amounts[k + 1];
        amounts[k] = downstream + policies[k + 1].fee_msat(downstream);
    }
    amounts
}

/// Result of one payment attempt as observed by the sender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    /// 1-based index of the erring hop as attributed to the sender, absent
    /// for timeouts (no error message to locate) and successes.
    pub erring_hop_index: Option<usize>,
    /// `None` means the payment settled.
    pub error: Option<ErrorClass>,
    /// Channel the sender attributes the failure to. Under countermeasures
    /// this may differ from the true erring channel.
    pub reported_channel: Option<ChannelId>,
    pub elapsed_ms: u64,
    /// The payment was swallowed by a dead node, leaving in-flight HTLCs.
    pub hanging: bool,
    /// Fees actually collected; nonzero only when the payment settled.
    pub fee_paid_msat: u64,
}

impl ProbeOutcome {
    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }
}

/// An in-flight HTLC committed on a channel direction.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlightHtlc {
    pub channel: ChannelId,
    pub direction: Direction,
    pub amount_msat: u64,
    pub created_at_ms: u64,
}

/// Tracks HTLCs that were committed but never resolved, and the capacity
/// they occupy per channel direction.
#[derive(Debug, Clone, Default)]
pub struct HtlcLedger {
    in_flight: Vec<InFlightHtlc>,
    committed: BTreeMap<(ChannelId, Direction), u64>,
}

impl HtlcLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn committed_msat(&self, channel: &ChannelId, direction: Direction) -> u64 {
        self.committed
            .get(&(channel.clone(), direction))
            .copied()
            .unwrap_or(0)
    }

    pub fn in_flight(&self) -> &[InFlightHtlc] {
        &self.in_flight
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    fn add(&mut self, htlc: InFlightHtlc) {
        *self
            .committed
            .entry((htlc.channel.clone(), htlc.direction))
            .or_insert(0) += htlc.amount_msat;
        self.in_flight.push(htlc);
    }

    /// Releases in-flight HTLCs older than `htlc_timeout_ms`, restoring the
    /// capacity they occupied. Returns the number of HTLCs released.
    pub fn release_hanging(&mut self, clock: &SimClock, htlc_timeout_ms: u64) -> usize {
        let now = clock.now_ms();
        let mut released = 0;
        let mut remaining = Vec::with_capacity(self.in_flight.len());
        for htlc in self.in_flight.drain(..) {
            if now.saturating_sub(htlc.created_at_ms) >= htlc_timeout_ms {
                let slot = self
                    .committed
                    .get_mut(&(htlc.channel.clone(), htlc.direction))
                    .expect("committed entry exists for in-flight htlc");
                *slot -= htlc.amount_msat;
                if *slot == 0 {
                    self.committed.remove(&(htlc.channel, htlc.direction));
                }
                released += 1;
            } else {
                remaining.push(htlc);
            }
        }
        self.in_flight = remaining;
        released
    }
}

/// Free-function form of [`HtlcLedger::release_hanging`].
pub fn release_hanging(ledger: &mut HtlcLedger, clock: &SimClock, htlc_timeout_ms: u64) -> usize {
    ledger.release_hanging(clock, htlc_timeout_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FloodDetectionConfig {
    pub enabled: bool,
    /// Sliding window over simulated time, in ms.
    pub window_ms: u64,
    /// Failed payments from the same upstream channel within the window
    /// before a node starts refusing.
    pub threshold: u32,
}

impl Default for FloodDetectionConfig {
    fn default() -> Self {
        FloodDetectionConfig {
            enabled: false,
            window_ms: 60_000,
            threshold: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardingConfig {
    pub merge_errors: bool,
    pub jit_rebalancing: bool,
    pub flood_detection: FloodDetectionConfig,
    pub sender_timeout_ms: u64,
    pub non_strict_forwarding: bool,
}

impl Default for ForwardingConfig {
    fn default() -> Self {
        ForwardingConfig {
            merge_errors: false,
            jit_rebalancing: false,
            flood_detection: FloodDetectionConfig::default(),
            sender_timeout_ms: 10_000,
            non_strict_forwarding: false,
        }
    }
}

/// Per-node record of failed payments keyed by the upstream channel they
/// arrived through. Nodes consult it to spot probing floods.
#[derive(Debug, Clone, Default)]
pub struct FloodTracker {
    failures: BTreeMap<(NodeId, ChannelId), Vec<u64>>,
}

impl FloodTracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn record_failure(&mut self, node: &NodeId, upstream: &ChannelId, at_ms: u64) {
        self.failures
            .entry((node.clone(), upstream.clone()))
            .or_default()
            .push(at_ms);
    }

    fn is_flagged(
        &mut self,
        node: &NodeId,
        upstream: &ChannelId,
        now_ms: u64,
        cfg: &FloodDetectionConfig,
    ) -> bool {
        let Some(times) = self.failures.get_mut(&(node.clone(), upstream.clone())) else {
            return false;
        };
        times.retain(|&t| now_ms.saturating_sub(t) <= cfg.window_ms);
        times.len() as u32 >= cfg.threshold
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MalformedRoute {
    #[error("route has no hops")]
    Empty,
    #[error("route has {0} hops, protocol limit is 20")]
    TooLong(usize),
    #[error("route is not contiguous at {at}, expected {expected}")]
    Discontiguous { at: NodeId, expected: NodeId },
    #[error("route references unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("hop endpoints do not match channel {0}")]
    EndpointMismatch(ChannelId),
    #[error("route carries a zero amount")]
    ZeroAmount,
    #[error("per-hop amounts are inconsistent with fees")]
    BadAmounts,
}

/// Simulates one payment attempt along `route`.
///
/// Per-hop semantics, in evaluation order: a dead forwarding node swallows
/// the payment (sender observes a timeout, committed HTLCs hang); an
/// inactive direction or exceeded `max_htlc` fails with a temporary channel
/// failure; insufficient spendable balance likewise, unless non-strict
/// forwarding substitutes a parallel channel or JIT rebalancing shifts
/// funds in. At the final hop the payment settles only if the recipient
/// knows the preimage. Failed attempts roll back every tentative balance
/// change and collect no fees.
#[allow(clippy::too_many_arguments)]
pub fn send_probe(
    net: &mut GroundTruthNetwork,
    ledger: &mut HtlcLedger,
    flood: &mut FloodTracker,
    route: &Route,
    amount_msat: u64,
    recipient_knows_preimage: bool,
    cfg: &ForwardingConfig,
    clock: &mut SimClock,
    rng: &mut impl Rng,
) -> Result<ProbeOutcome, MalformedRoute> {
    validate_route(net, route, amount_msat)?;
    let hops = route.hops();
    let n = hops.len();
    let started_at = clock.now_ms();

    // (channel, direction, amount) actually committed, in hop order.
    let mut committed: Vec<(ChannelId, Direction, u64)> = Vec::with_capacity(n);
    let mut failure: Option<(usize, ErrorClass, ChannelId)> = None;
    let mut swallowed = false;

    for (i, hop) in hops.iter().enumerate() {
        let k = i + 1;
        if k >= 2 {
            let forwarder = net.node(&hop.from).expect("validated endpoint");
            if !forwarder.live {
                swallowed = true;
                break;
            }
            if cfg.flood_detection.enabled {
                // Upstream channel as actually traversed, which can differ
                // from the route under non-strict substitution.
                let upstream = committed[i - 1].0.clone();
                if flood.is_flagged(&hop.from, &upstream, started_at, &cfg.flood_detection) {
                    // The node refuses the incoming HTLC outright; the
                    // sender sees an uninterpretable error for hop k-1.
                    failure = Some((k - 1, ErrorClass::UnexpectedError, hops[i - 1].channel.clone()));
                    break;
                }
            }
        }

        let channel = net.channel(&hop.channel).expect("validated channel");
        let policy = channel.policy(hop.direction);
        if !policy.active || hop.amount_msat > policy.max_htlc_msat {
            failure = Some((
                k,
                ErrorClass::TemporaryChannelFailure,
                hop.channel.clone(),
            ));
            break;
        }

        let mut commit_channel = hop.channel.clone();
        let mut commit_dir = hop.direction;
        if spendable_msat(net, ledger, &committed, &hop.channel, hop.direction) < hop.amount_msat {
            let mut satisfied = false;
            if cfg.non_strict_forwarding {
                if let Some((alt_id, alt_dir)) =
                    substitute_parallel(net, ledger, &committed, hop)
                {
                    commit_channel = alt_id;
                    commit_dir = alt_dir;
                    satisfied = true;
                }
            }
            if !satisfied && cfg.jit_rebalancing {
                satisfied = jit_rebalance(net, ledger, &committed, hop);
            }
            if !satisfied {
                failure = Some((
                    k,
                    ErrorClass::TemporaryChannelFailure,
                    hop.channel.clone(),
                ));
                break;
            }
        }
        committed.push((commit_channel, commit_dir, hop.amount_msat));
    }

    // Recipient processing once every hop is committed.
    let mut settled = false;
    if failure.is_none() && !swallowed {
        let recipient = net.node(route.recipient()).expect("validated endpoint");
        if !recipient.live {
            swallowed = true;
        } else if recipient_knows_preimage {
            settled = true;
        } else {
            failure = Some((
                n,
                ErrorClass::UnknownPaymentDetails,
                hops[n - 1].channel.clone(),
            ));
        }
    }

    if swallowed {
        for (channel, direction, amount_msat) in committed {
            ledger.add(InFlightHtlc {
                channel,
                direction,
                amount_msat,
                created_at_ms: started_at,
            });
        }
        clock.advance(cfg.sender_timeout_ms);
        return Ok(ProbeOutcome {
            erring_hop_index: None,
            error: Some(ErrorClass::Timeout),
            reported_channel: None,
            elapsed_ms: cfg.sender_timeout_ms,
            hanging: true,
            fee_paid_msat: 0,
        });
    }

    // Each committed hop cost one forward and one return sample of the
    // processing (downstream) node's latency.
    let mut elapsed = 0.0;
    for (i, _) in committed.iter().enumerate() {
        let processor = net.node(&hops[i].to).expect("validated endpoint");
        elapsed += latency_sample_ms(&processor.latency, rng);
        elapsed += latency_sample_ms(&processor.latency, rng);
    }
    let mut elapsed_ms = elapsed.round() as u64;

    if settled {
        let fee_paid_msat = route.sent_msat() - route.delivered_msat();
        for (channel, direction, amount) in &committed {
            net.channel_mut(channel)
                .expect("validated channel")
                .shift_balance(*direction, *amount);
        }
        clock.advance(elapsed_ms);
        debug_assert!(conservation_holds(net));
        return Ok(ProbeOutcome {
            erring_hop_index: None,
            error: None,
            reported_channel: None,
            elapsed_ms,
            hanging: false,
            fee_paid_msat,
        });
    }

    let (erring_hop, mut error, mut reported) = failure.expect("non-settled probe has a failure");
    let mut erring_hop_index = Some(erring_hop);

    // Every node that held the HTLC saw the payment fail; each records the
    // failure against the channel it actually arrived through.
    for (i, (actual_channel, _, _)) in committed.iter().enumerate() {
        flood.record_failure(&hops[i].to, actual_channel, started_at + elapsed_ms);
    }

    // Tentative commitments dissolve: rollback is dropping them.
    drop(committed);

    if elapsed_ms > cfg.sender_timeout_ms {
        // The error arrived after the sender gave up waiting.
        elapsed_ms = cfg.sender_timeout_ms;
        clock.advance(elapsed_ms);
        return Ok(ProbeOutcome {
            erring_hop_index: None,
            error: Some(ErrorClass::Timeout),
            reported_channel: None,
            elapsed_ms,
            hanging: false,
            fee_paid_msat: 0,
        });
    }

    if cfg.merge_errors {
        // Every node rewrites the error as if it originated from its own
        // channel, so what reaches the sender names the first hop and a
        // class it cannot interpret.
        error = ErrorClass::UnexpectedError;
        erring_hop_index = Some(1);
        reported = hops[0].channel.clone();
    }

    clock.advance(elapsed_ms);
    debug_assert!(conservation_holds(net));
    Ok(ProbeOutcome {
        erring_hop_index,
        error: Some(error),
        reported_channel: Some(reported),
        elapsed_ms,
        hanging: false,
        fee_paid_msat: 0,
    })
}

/// Spendable balance on a channel direction: ground-truth balance minus
/// capacity occupied by in-flight HTLCs (persistent and this-probe).
fn spendable_msat(
    net: &GroundTruthNetwork,
    ledger: &HtlcLedger,
    tentative: &[(ChannelId, Direction, u64)],
    channel: &ChannelId,
    direction: Direction,
) -> u64 {
    let ch = net.channel(channel).expect("validated channel");
    let held: u64 = tentative
        .iter()
        .filter(|(c, d, _)| c == channel && *d == direction)
        .map(|(_, _, a)| a)
        .sum();
    ch.balance_msat(direction)
        .saturating_sub(ledger.committed_msat(channel, direction))
        .saturating_sub(held)
}

/// Non-strict forwarding: the node picks any parallel channel to the same
/// peer that can carry the amount. Deterministic by channel id.
fn substitute_parallel(
    net: &GroundTruthNetwork,
    ledger: &HtlcLedger,
    tentative: &[(ChannelId, Direction, u64)],
    hop: &RouteHop,
) -> Option<(ChannelId, Direction)> {
    let candidates: Vec<(ChannelId, Direction)> = net
        .channels_between(&hop.from, &hop.to)
        .into_iter()
        .filter(|ch| ch.id != hop.channel)
        .map(|ch| (ch.id.clone(), direction_from(ch, &hop.from)))
        .collect();
    for (id, dir) in candidates {
        let ch = net.channel(&id).expect("listed channel");
        let policy = ch.policy(dir);
        if policy.active
            && hop.amount_msat <= policy.max_htlc_msat
            && spendable_msat(net, ledger, tentative, &id, dir) >= hop.amount_msat
        {
            return Some((id, dir));
        }
    }
    None
}

/// JIT rebalancing: shift the shortfall (plus a 1% buffer) from a parallel
/// channel to the same peer into the depleted channel, then keep
/// forwarding. The shift is a completed circular payment and does not roll
/// back when the triggering payment later fails.
fn jit_rebalance(
    net: &mut GroundTruthNetwork,
    ledger: &HtlcLedger,
    tentative: &[(ChannelId, Direction, u64)],
    hop: &RouteHop,
) -> bool {
    let spendable = spendable_msat(net, ledger, tentative, &hop.channel, hop.direction);
    let shortfall = hop.amount_msat - spendable;
    let shift = shortfall + (shortfall.div_ceil(100)).max(1);

    // The peer's side of the depleted channel must cover the inbound shift.
    let depleted = net.channel(&hop.channel).expect("validated channel");
    if depleted.balance_msat(hop.direction.flipped()) < shift {
        return false;
    }
    let donor: Option<(ChannelId, Direction)> = net
        .channels_between(&hop.from, &hop.to)
        .into_iter()
        .filter(|ch| ch.id != hop.channel)
        .map(|ch| (ch.id.clone(), direction_from(ch, &hop.from)))
        .find(|(id, dir)| spendable_msat(net, ledger, tentative, id, *dir) >= shift);
    let Some((donor_id, donor_dir)) = donor else {
        return false;
    };
    net.channel_mut(&donor_id)
        .expect("listed channel")
        .shift_balance(donor_dir, shift);
    net.channel_mut(&hop.channel)
        .expect("validated channel")
        .shift_balance(hop.direction.flipped(), shift);
    true
}

fn direction_from(channel: &Channel, from: &NodeId) -> Direction {
    if &channel.source == from {
        Direction::SrcToDst
    } else {
        Direction::DstToSrc
    }
}

fn validate_route(
    net: &GroundTruthNetwork,
    route: &Route,
    amount_msat: u64,
) -> Result<(), MalformedRoute> {
    let hops = route.hops();
    if amount_msat == 0 || route.delivered_msat() != amount_msat {
        return Err(MalformedRoute::BadAmounts);
    }
    for hop in hops {
        let ch = net
            .channel(&hop.channel)
            .ok_or_else(|| MalformedRoute::UnknownChannel(hop.channel.clone()))?;
        if ch.from_node(hop.direction) != &hop.from || ch.to_node(hop.direction) != &hop.to {
            return Err(MalformedRoute::EndpointMismatch(hop.channel.clone()));
        }
    }
    // Per-hop amounts must match the fee schedule of the hops they cross.
    let expected = amounts_along(
        hops.iter()
            .map(|h| net.channel(&h.channel).expect("checked").policy(h.direction)),
        amount_msat,
    );
    if hops
        .iter()
        .zip(&expected)
        .any(|(h, &a)| h.amount_msat != a)
    {
        return Err(MalformedRoute::BadAmounts);
    }
    Ok(())
}

/// One lognormal-shaped latency draw: median `mean/sqrt(1+j)`-ish with mean
/// exactly `mean_ms`, spread controlled by `jitter`.
fn latency_sample_ms(params: &LatencyParams, rng: &mut impl Rng) -> f64 {
    let sigma = (1.0 + params.jitter).ln();
    if sigma == 0.0 {
        return params.mean_ms;
    }
    // Box-Muller; one draw per sample keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    params.mean_ms * (sigma * z - sigma * sigma / 2.0).exp()
}

/// Checks b_s + b_d = c for every channel; balances are stored as the
/// source side only, so this verifies no arithmetic drifted out of range.
pub fn conservation_holds(net: &GroundTruthNetwork) -> bool {
    net.channels()
        .all(|ch| ch.balance_source_msat() <= ch.capacity_msat)
}

/// Simulated P2P connection attempt: succeeds iff the node exists and is
/// live. This is the only liveness signal attacker-side code may use.
pub fn connect(net: &GroundTruthNetwork, node: &NodeId) -> bool {
    net.node(node).map(|n| n.live).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sat_to_msat, Node};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: &str, live: bool) -> Node {
        Node {
            id: NodeId::new(id),
            live,
            latency: LatencyParams::default(),
        }
    }

    fn zero_fee_policy(max_htlc_msat: u64) -> DirectionPolicy {
        DirectionPolicy {
            active: true,
            max_htlc_msat,
            base_fee_msat: 0,
            fee_ppm: 0,
        }
    }

    /// Chain a-b-c-... with the given per-link source-side balances (sat).
    /// Channel `chXY` connects nodes X and Y, zero fees.
    fn chain(balances_sat: &[(u64, u64)]) -> (GroundTruthNetwork, Vec<(ChannelId, Direction)>) {
        let mut net = GroundTruthNetwork::new();
        let names: Vec<String> = (0..=balances_sat.len())
            .map(|i| format!("n{i}"))
            .collect();
        for name in &names {
            net.add_node(node(name, true)).unwrap();
        }
        let mut hops = Vec::new();
        for (i, &(cap, bal)) in balances_sat.iter().enumerate() {
            let id = ChannelId::new(format!("ch{i}"));
            net.add_channel(
                Channel::new(
                    id.clone(),
                    NodeId::new(names[i].clone()),
                    NodeId::new(names[i + 1].clone()),
                    sat_to_msat(cap),
                    sat_to_msat(bal),
                    zero_fee_policy(u64::MAX),
                    zero_fee_policy(u64::MAX),
                )
                .unwrap(),
            )
            .unwrap();
            hops.push((id, Direction::SrcToDst));
        }
        (net, hops)
    }

    fn run(
        net: &mut GroundTruthNetwork,
        hops: &[(ChannelId, Direction)],
        amount_sat: u64,
        preimage: bool,
        cfg: &ForwardingConfig,
    ) -> (ProbeOutcome, HtlcLedger) {
        let route = Route::through_net(net, hops, sat_to_msat(amount_sat)).unwrap();
        let mut ledger = HtlcLedger::new();
        let mut flood = FloodTracker::new();
        let mut clock = SimClock::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let outcome = send_probe(
            net,
            &mut ledger,
            &mut flood,
            &route,
            sat_to_msat(amount_sat),
            preimage,
            cfg,
            &mut clock,
            &mut rng,
        )
        .unwrap();
        (outcome, ledger)
    }

    #[test]
    fn insufficient_balance_fails_at_that_hop() {
        // Spendable balances [80, 40], amount 50: hop 2 cannot forward.
        let (mut net, hops) = chain(&[(100, 80), (100, 40)]);
        let (outcome, _) = run(&mut net, &hops, 50, false, &ForwardingConfig::default());
        assert_eq!(outcome.error, Some(ErrorClass::TemporaryChannelFailure));
        assert_eq!(outcome.erring_hop_index, Some(2));
        assert_eq!(outcome.reported_channel, Some(ChannelId::new("ch1")));
    }

    #[test]
    fn sufficient_balances_reach_recipient_and_roll_back() {
        let (mut net, hops) = chain(&[(100, 80), (100, 60)]);
        let before: Vec<u64> = net.channels().map(|c| c.balance_source_msat()).collect();
        let (outcome, ledger) = run(&mut net, &hops, 50, false, &ForwardingConfig::default());
        assert_eq!(outcome.error, Some(ErrorClass::UnknownPaymentDetails));
        assert_eq!(outcome.erring_hop_index, Some(2));
        let after: Vec<u64> = net.channels().map(|c| c.balance_source_msat()).collect();
        assert_eq!(before, after, "failed probe must roll back");
        assert_eq!(ledger.in_flight_count(), 0);
        assert_eq!(outcome.fee_paid_msat, 0);
    }

    #[test]
    fn dead_forwarding_node_times_out_and_hangs_upstream() {
        let (mut net, hops) = chain(&[(100, 80), (100, 60)]);
        // n1 forwards onto hop 2; kill it.
        net.set_live(&NodeId::new("n1"), false);
        let (outcome, ledger) = run(&mut net, &hops, 50, false, &ForwardingConfig::default());
        assert_eq!(outcome.error, Some(ErrorClass::Timeout));
        assert_eq!(outcome.elapsed_ms, 10_000);
        assert!(outcome.hanging);
        assert_eq!(outcome.erring_hop_index, None);
        assert_eq!(ledger.in_flight_count(), 1);
        assert_eq!(ledger.in_flight()[0].channel, ChannelId::new("ch0"));
    }

    #[test]
    fn merged_errors_point_at_the_first_hop() {
        let (mut net, hops) = chain(&[(100, 80), (100, 40)]);
        let cfg = ForwardingConfig {
            merge_errors: true,
            ..ForwardingConfig::default()
        };
        let (outcome, _) = run(&mut net, &hops, 50, false, &cfg);
        assert_eq!(outcome.error, Some(ErrorClass::UnexpectedError));
        assert_eq!(outcome.erring_hop_index, Some(1));
        assert_eq!(outcome.reported_channel, Some(ChannelId::new("ch0")));
    }

    #[test]
    fn settled_payment_moves_balances_and_collects_fees() {
        let mut net = GroundTruthNetwork::new();
        for name in ["n0", "n1", "n2"] {
            net.add_node(node(name, true)).unwrap();
        }
        let fee_policy = DirectionPolicy {
            active: true,
            max_htlc_msat: u64::MAX,
            base_fee_msat: 1_000,
            fee_ppm: 0,
        };
        for (i, bal) in [(0, 80u64), (1, 60u64)] {
            net.add_channel(
                Channel::new(
                    ChannelId::new(format!("ch{i}")),
                    NodeId::new(format!("n{i}")),
                    NodeId::new(format!("n{}", i + 1)),
                    sat_to_msat(100),
                    sat_to_msat(bal),
                    fee_policy.clone(),
                    fee_policy.clone(),
                )
                .unwrap(),
            )
            .unwrap();
        }
        let hops = vec![
            (ChannelId::new("ch0"), Direction::SrcToDst),
            (ChannelId::new("ch1"), Direction::SrcToDst),
        ];
        let (outcome, _) = run(&mut net, &hops, 50, true, &ForwardingConfig::default());
        assert!(outcome.is_success());
        // Hop 2 charges 1000 msat base fee, paid by the sender.
        assert_eq!(outcome.fee_paid_msat, 1_000);
        let ch0 = net.channel(&ChannelId::new("ch0")).unwrap();
        let ch1 = net.channel(&ChannelId::new("ch1")).unwrap();
        assert_eq!(ch0.balance_source_msat(), sat_to_msat(80) - sat_to_msat(50) - 1_000);
        assert_eq!(ch1.balance_source_msat(), sat_to_msat(60) - sat_to_msat(50));
    }

    #[test]
    fn inactive_direction_fails_before_balance() {
        let (mut net, hops) = chain(&[(100, 80), (100, 60)]);
        net.channel_mut(&ChannelId::new("ch1"))
            .unwrap()
            .policy_src_to_dst
            .active = false;
        let (outcome, _) = run(&mut net, &hops, 50, false, &ForwardingConfig::default());
        assert_eq!(outcome.error, Some(ErrorClass::TemporaryChannelFailure));
        assert_eq!(outcome.erring_hop_index, Some(2));
    }

    #[test]
    fn jit_rebalance_saves_the_forward_and_persists() {
        // n1 has two channels to n2; the routed one is short on balance.
        let (mut net, hops) = chain(&[(100, 80), (100, 40)]);
        net.add_channel(
            Channel::new(
                ChannelId::new("ch1b"),
                NodeId::new("n1"),
                NodeId::new("n2"),
                sat_to_msat(100),
                sat_to_msat(90),
                zero_fee_policy(u64::MAX),
                zero_fee_policy(u64::MAX),
            )
            .unwrap(),
        )
        .unwrap();
        let cfg = ForwardingConfig {
            jit_rebalancing: true,
            ..ForwardingConfig::default()
        };
        let (outcome, _) = run(&mut net, &hops, 50, false, &cfg);
        // Rebalance let the payment reach the recipient.
        assert_eq!(outcome.error, Some(ErrorClass::UnknownPaymentDetails));
        // The shift survives the failed probe's rollback.
        let ch1 = net.channel(&ChannelId::new("ch1")).unwrap();
        assert!(ch1.balance_source_msat() > sat_to_msat(40));
        let ch1b = net.channel(&ChannelId::new("ch1b")).unwrap();
        assert!(ch1b.balance_source_msat() < sat_to_msat(90));
        // Conservation per channel still holds.
        assert!(conservation_holds(&net));
    }

    #[test]
    fn non_strict_forwarding_substitutes_a_parallel_channel() {
        let (mut net, hops) = chain(&[(100, 80), (100, 40)]);
        net.add_channel(
            Channel::new(
                ChannelId::new("ch1b"),
                NodeId::new("n1"),
                NodeId::new("n2"),
                sat_to_msat(100),
                sat_to_msat(90),
                zero_fee_policy(u64::MAX),
                zero_fee_policy(u64::MAX),
            )
            .unwrap(),
        )
        .unwrap();
        let cfg = ForwardingConfig {
            non_strict_forwarding: true,
            ..ForwardingConfig::default()
        };
        let (outcome, _) = run(&mut net, &hops, 50, false, &cfg);
        // The substituted channel forwards, so the payment reaches the end.
        assert_eq!(outcome.error, Some(ErrorClass::UnknownPaymentDetails));
    }

    #[test]
    fn flood_detection_refuses_after_threshold() {
        let (mut net, hops) = chain(&[(100, 80), (100, 10)]);
        let cfg = ForwardingConfig {
            flood_detection: FloodDetectionConfig {
                enabled: true,
                window_ms: 60_000,
                threshold: 3,
            },
            ..ForwardingConfig::default()
        };
        let mut ledger = HtlcLedger::new();
        let mut flood = FloodTracker::new();
        let mut clock = SimClock::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let route = Route::through_net(&net, &hops, sat_to_msat(50)).unwrap();
        let mut last = None;
        for _ in 0..5 {
            last = Some(
                send_probe(
                    &mut net,
                    &mut ledger,
                    &mut flood,
                    &route,
                    sat_to_msat(50),
                    false,
                    &cfg,
                    &mut clock,
                    &mut rng,
                )
                .unwrap(),
            );
        }
        let outcome = last.unwrap();
        assert_eq!(outcome.error, Some(ErrorClass::UnexpectedError));
        assert_eq!(outcome.erring_hop_index, Some(1));
    }

    #[test]
    fn release_hanging_restores_capacity() {
        let mut ledger = HtlcLedger::new();
        let mut clock = SimClock::new();
        assert_eq!(ledger.release_hanging(&clock, 1_000), 0);

        ledger.add(InFlightHtlc {
            channel: ChannelId::new("ch"),
            direction: Direction::SrcToDst,
            amount_msat: 5_000,
            created_at_ms: 0,
        });
        assert_eq!(
            ledger.committed_msat(&ChannelId::new("ch"), Direction::SrcToDst),
            5_000
        );
        clock.advance(500);
        assert_eq!(ledger.release_hanging(&clock, 1_000), 0);
        clock.advance(600);
        assert_eq!(ledger.release_hanging(&clock, 1_000), 1);
        assert_eq!(
            ledger.committed_msat(&ChannelId::new("ch"), Direction::SrcToDst),
            0
        );
    }

    #[test]
    fn malformed_routes_are_contract_errors() {
        let (mut net, _) = chain(&[(100, 80), (100, 60)]);
        // Discontiguous: both hops start from n0.
        let bad = Route::from_hops(vec![
            RouteHop {
                channel: ChannelId::new("ch0"),
                direction: Direction::SrcToDst,
                from: NodeId::new("n0"),
                to: NodeId::new("n1"),
                amount_msat: 1,
            },
            RouteHop {
                channel: ChannelId::new("ch0"),
                direction: Direction::SrcToDst,
                from: NodeId::new("n0"),
                to: NodeId::new("n1"),
                amount_msat: 1,
            },
        ]);
        assert!(matches!(bad, Err(MalformedRoute::Discontiguous { .. })));

        let route = Route::through_net(
            &net,
            &[(ChannelId::new("ch0"), Direction::SrcToDst)],
            sat_to_msat(10),
        )
        .unwrap();
        let mut ledger = HtlcLedger::new();
        let mut flood = FloodTracker::new();
        let mut clock = SimClock::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = send_probe(
            &mut net,
            &mut ledger,
            &mut flood,
            &route,
            sat_to_msat(11),
            false,
            &ForwardingConfig::default(),
            &mut clock,
            &mut rng,
        );
        assert!(matches!(res, Err(MalformedRoute::BadAmounts)));
    }
}
