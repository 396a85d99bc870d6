//! Post-processing of probe logs into the coefficient and timing
//! distributions that quantify what the attack revealed, plus the attack
//! cost summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::forwarding::ErrorClass;
use crate::model::{BalanceEstimate, ChannelId, PublicView};
use crate::prober::{AttemptResult, EstimateTable, ProbeLog, ProberConfig};

/// How much of a channel's balance uncertainty probing removed:
/// `1 - (b_max - b_min) / c`, 0 = nothing beyond public knowledge,
/// 1 = the balance is known exactly.
pub fn information_coefficient(estimate: &BalanceEstimate, capacity_msat: u64) -> f64 {
    if capacity_msat == 0 {
        return 0.0;
    }
    1.0 - estimate.width_msat() as f64 / capacity_msat as f64
}

/// Normalized distance of a balance from the channel midpoint:
/// 1 = perfectly balanced, 0 = all funds on one side.
pub fn balance_coefficient(balance_msat: u64, capacity_msat: u64) -> f64 {
    if capacity_msat == 0 {
        return 0.0;
    }
    let b = balance_msat as f64;
    let c = capacity_msat as f64;
    1.0 - (2.0 * b - c).abs() / c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    /// Capacity at most twice the safe HTLC amount: fully probeable.
    Small,
    Large,
}

impl SizeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub onion_id: u64,
    pub hops: usize,
    pub erring_hop: Option<usize>,
    pub elapsed_ms: u64,
    pub error_class: Option<ErrorClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTimeRow {
    pub channel: ChannelId,
    pub total_ms: u64,
    pub probes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoCoeffRow {
    pub channel: ChannelId,
    pub capacity_msat: u64,
    pub b_min_msat: u64,
    pub b_max_msat: u64,
    pub coefficient: f64,
    pub size_class: SizeClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceCoeffRow {
    pub channel: ChannelId,
    pub capacity_msat: u64,
    /// Midpoint of the final interval; for fully probed channels this is
    /// the balance itself.
    pub balance_estimate_msat: u64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageRow {
    pub channel: ChannelId,
    pub used_in_routes: u64,
}

/// What the attack tied up and for how long. Since probes fail by design,
/// the capital is only ever locked, never spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub committed_capital_msat: u64,
    pub fees_paid_msat: u64,
    pub run_duration_ms: u64,
    /// Run duration plus the HTLC timeout when hanging HTLCs remain.
    pub lock_duration_ms: u64,
    pub hanging_probes: u64,
}

/// The full figure-family bundle computed from one probing run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub timings: Vec<TimingRow>,
    pub channel_times: Vec<ChannelTimeRow>,
    pub info_coeffs: Vec<InfoCoeffRow>,
    pub balance_coeffs: Vec<BalanceCoeffRow>,
    pub usage: Vec<UsageRow>,
    pub cost: CostReport,
}

impl MetricsReport {
    pub fn mean_info_coefficient(&self) -> f64 {
        if self.info_coeffs.is_empty() {
            return 0.0;
        }
        self.info_coeffs.iter().map(|r| r.coefficient).sum::<f64>()
            / self.info_coeffs.len() as f64
    }
}

/// Committed capital, fees, and lock duration for the run. Failure-only
/// runs pay nothing; hanging HTLCs extend the lock by the agreed timeout.
pub fn attack_cost(
    entry_channels: &[(ChannelId, u64)],
    log: &ProbeLog,
    htlc_timeout_ms: u64,
) -> CostReport {
    let committed_capital_msat = entry_channels.iter().map(|(_, cap)| cap).sum();
    let mut fees_paid_msat = 0;
    let mut hanging_probes = 0;
    let mut run_duration_ms = 0;
    for record in log.records() {
        run_duration_ms = run_duration_ms.max(record.timestamp_ms);
        if let Some(outcome) = record.outcome() {
            fees_paid_msat += outcome.fee_paid_msat;
            if outcome.hanging {
                hanging_probes += 1;
            }
        }
    }
    let lock_duration_ms = if hanging_probes > 0 {
        run_duration_ms + htlc_timeout_ms
    } else {
        run_duration_ms
    };
    CostReport {
        committed_capital_msat,
        fees_paid_msat,
        run_duration_ms,
        lock_duration_ms,
        hanging_probes,
    }
}

/// Builds the report families from a probe log and the final estimates:
/// timing rows per onion, cumulative probe time per target channel,
/// information coefficients for probed channels split by size class,
/// balance coefficients for accurately probed small channels, and channel
/// usage counts across all attempted routes.
pub fn summarize(
    log: &ProbeLog,
    table: &EstimateTable,
    _view: &PublicView,
    cfg: &ProberConfig,
    cost: CostReport,
) -> MetricsReport {
    let mut timings = Vec::new();
    let mut per_target: BTreeMap<ChannelId, (u64, u32)> = BTreeMap::new();
    let mut usage: BTreeMap<ChannelId, u64> = BTreeMap::new();
    let mut probed: BTreeMap<ChannelId, ()> = BTreeMap::new();

    for record in log.records() {
        let AttemptResult::Sent { route, outcome, .. } = &record.attempt else {
            continue;
        };
        timings.push(TimingRow {
            onion_id: record.seq,
            hops: route.len(),
            erring_hop: outcome.erring_hop_index,
            elapsed_ms: outcome.elapsed_ms,
            error_class: outcome.error,
        });
        let slot = per_target.entry(record.target.clone()).or_insert((0, 0));
        slot.0 += outcome.elapsed_ms;
        slot.1 += 1;
        for hop in route.hops() {
            *usage.entry(hop.channel.clone()).or_insert(0) += 1;
        }
        probed.insert(record.target.clone(), ());
    }

    let channel_times = per_target
        .iter()
        .map(|(channel, &(total_ms, probes))| ChannelTimeRow {
            channel: channel.clone(),
            total_ms,
            probes,
        })
        .collect();

    let small_threshold = 2 * cfg.safe_htlc_msat;
    let mut info_coeffs = Vec::new();
    let mut balance_coeffs = Vec::new();
    for channel in probed.keys() {
        let Some(k) = table.get(channel) else {
            continue;
        };
        if k.owned {
            continue;
        }
        let coefficient = information_coefficient(&k.estimate, k.capacity_msat);
        let size_class = if k.capacity_msat <= small_threshold {
            SizeClass::Small
        } else {
            SizeClass::Large
        };
        info_coeffs.push(InfoCoeffRow {
            channel: channel.clone(),
            capacity_msat: k.capacity_msat,
            b_min_msat: k.estimate.b_min_msat,
            b_max_msat: k.estimate.b_max_msat,
            coefficient,
            size_class,
        });
        if size_class == SizeClass::Small && coefficient > 0.9 {
            let midpoint = (k.estimate.b_min_msat + k.estimate.b_max_msat) / 2;
            balance_coeffs.push(BalanceCoeffRow {
                channel: channel.clone(),
                capacity_msat: k.capacity_msat,
                balance_estimate_msat: midpoint,
                coefficient: balance_coefficient(midpoint, k.capacity_msat),
            });
        }
    }

    let mut usage: Vec<UsageRow> = usage
        .into_iter()
        .map(|(channel, used_in_routes)| UsageRow {
            channel,
            used_in_routes,
        })
        .collect();
    usage.sort_by(|a, b| {
        b.used_in_routes
            .cmp(&a.used_in_routes)
            .then_with(|| a.channel.cmp(&b.channel))
    });

    MetricsReport {
        timings,
        channel_times,
        info_coeffs,
        balance_coeffs,
        usage,
        cost,
    }
}

/// Median of the values; the mean of the middle pair for even counts.
pub fn median(values: &[u64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    })
}

/// Median elapsed time per erring hop index over the timing rows; timeouts
/// carry no hop attribution and are skipped.
pub fn timing_medians_by_erring_hop(timings: &[TimingRow]) -> Vec<(usize, f64)> {
    let mut grouped: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for row in timings {
        if let Some(hop) = row.erring_hop {
            grouped.entry(hop).or_default().push(row.elapsed_ms);
        }
    }
    grouped
        .into_iter()
        .map(|(hop, values)| (hop, median(&values).expect("group is non-empty")))
        .collect()
}

pub fn error_class_label(error: Option<ErrorClass>) -> &'static str {
    match error {
        None => "success",
        Some(ErrorClass::TemporaryChannelFailure) => "temporary_channel_failure",
        Some(ErrorClass::UnknownPaymentDetails) => "unknown_payment_details",
        Some(ErrorClass::Timeout) => "timeout",
        Some(ErrorClass::UnexpectedError) => "unexpected_error",
    }
}
