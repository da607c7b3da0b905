//! Slot-by-slot Monte Carlo of the cooperation protocol.
//!
//! Each slot: a backlogged PU transmits (direct success, else overheard and
//! possibly admitted to the relay buffer, else retained); an idle PU leaves
//! the slot to the SU, which picks its own queue with probability
//! `select_own[i]` and the relay queue otherwise, wasting the slot if the
//! picked queue is empty. Bernoulli arrivals join at the end of the slot.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, Violation};
use crate::model::{ChannelModel, PolicyProfile};
use crate::optimize::{max_lambda_s, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub slots: u64,
    #[serde(default)]
    pub warmup: u64,
    #[serde(default)]
    pub seed: u64,
    pub lambda_p: f64,
    pub lambda_s: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Config("slots must be positive".into()));
        }
        if self.warmup >= self.slots {
            return Err(Error::Config(format!("warmup ({}) must be below slots ({})", self.warmup, self.slots)));
        }
        let mut v = Vec::new();
        for (field, p) in [("lambda_p", self.lambda_p), ("lambda_s", self.lambda_s)] {
            if !(0.0..=1.0).contains(&p) {
                v.push(Violation::ProbabilityOutOfRange { field: field.into(), value: p });
            }
        }
        if !v.is_empty() {
            return Err(ValidationError { violations: v }.into());
        }
        Ok(())
    }

    pub fn measured_slots(&self) -> u64 {
        self.slots - self.warmup
    }
}

/// Counters and estimates over the measured window (slots after warmup).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    /// PU packets decoded directly by the destination.
    pub delivered_p: u64,
    pub delivered_s: u64,
    /// Relayed PU packets decoded by the destination.
    pub delivered_relay: u64,
    /// PU departures (direct or admitted to the relay buffer) per busy slot.
    pub empirical_mu_p: f64,
    pub empirical_throughput_s: f64,
    /// Relay buffer occupancy sampled at the start of each measured slot.
    pub empirical_pi: Vec<f64>,
    pub final_qp_len: u64,
    pub final_qs_len: u64,
    pub final_qsp_len: u64,
    /// Idle-PU slots in which the SU picked an empty queue while the other
    /// one had packets.
    pub wasted_slots: u64,
    pub stability_flag_p: bool,
    pub stability_flag_s: bool,
    pub measured_slots: u64,
    pub pu_busy_slots: u64,
    pub arrivals_p: u64,
    pub arrivals_s: u64,
    pub warm_qp_len: u64,
    pub warm_qs_len: u64,
    pub warm_qsp_len: u64,
    /// Least-squares growth of each queue over the last half of the run,
    /// packets per slot.
    pub qp_slope: f64,
    pub qs_slope: f64,
    /// Standard error of the SU throughput from batch means, which accounts
    /// for correlation between slots.
    pub throughput_s_batch_se: f64,
}

impl SimReport {
    /// Every PU packet is delivered directly, delivered by the relay or still
    /// queued; every SU packet is delivered or still queued.
    pub fn conserves_packets(&self) -> bool {
        self.warm_qp_len + self.warm_qsp_len + self.arrivals_p
            == self.delivered_p + self.delivered_relay + self.final_qp_len + self.final_qsp_len
            && self.warm_qs_len + self.arrivals_s == self.delivered_s + self.final_qs_len
    }

    /// Binomial standard error of the SU throughput estimate.
    pub fn throughput_s_std_error(&self) -> f64 {
        let p = self.empirical_throughput_s;
        (p * (1.0 - p) / self.measured_slots as f64).sqrt()
    }
}

/// What happened in a slot, as written to the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotEvent {
    PuDelivered,
    PuRelayed,
    PuRetained,
    SuDelivered,
    SuFailed,
    RelayDelivered,
    RelayFailed,
    Wasted,
    Idle,
}

impl SlotEvent {
    pub fn label(self) -> &'static str {
        match self {
            SlotEvent::PuDelivered => "pu_delivered",
            SlotEvent::PuRelayed => "pu_relayed",
            SlotEvent::PuRetained => "pu_retained",
            SlotEvent::SuDelivered => "su_delivered",
            SlotEvent::SuFailed => "su_failed",
            SlotEvent::RelayDelivered => "relay_delivered",
            SlotEvent::RelayFailed => "relay_failed",
            SlotEvent::Wasted => "wasted",
            SlotEvent::Idle => "idle",
        }
    }
}

/// One random stream per kind of decision, all derived from the master seed.
struct Streams {
    pu_arrival: ChaCha8Rng,
    su_arrival: ChaCha8Rng,
    pu_link: ChaCha8Rng,
    su_decode: ChaCha8Rng,
    su_link: ChaCha8Rng,
    admission: ChaCha8Rng,
    selection: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self {
            pu_arrival: stream(1),
            su_arrival: stream(2),
            pu_link: stream(3),
            su_decode: stream(4),
            su_link: stream(5),
            admission: stream(6),
            selection: stream(7),
        }
    }
}

/// Running least-squares fit of queue length against slot index.
#[derive(Default)]
struct SlopeFit {
    n: f64,
    st: f64,
    sq: f64,
    stt: f64,
    stq: f64,
}

impl SlopeFit {
    fn push(&mut self, t: f64, q: f64) {
        self.n += 1.0;
        self.st += t;
        self.sq += q;
        self.stt += t * t;
        self.stq += t * q;
    }

    fn slope(&self) -> f64 {
        let den = self.n * self.stt - self.st * self.st;
        if den <= 0.0 {
            return 0.0;
        }
        (self.n * self.stq - self.st * self.sq) / den
    }
}

/// Batches used for the batch-means standard error.
pub const BATCHES: u64 = 50;

/// Growth rate above which a long queue counts as unstable.
pub const UNSTABLE_SLOPE: f64 = 1e-4;

/// Heuristic stability test: the queue ends longer than `10 sqrt(slots)`
/// and is still growing.
pub fn looks_unstable(final_len: u64, slope: f64, slots: u64) -> bool {
    final_len as f64 > 10.0 * (slots as f64).sqrt() && slope > UNSTABLE_SLOPE
}

fn check_inputs(policy: &PolicyProfile, channel: &ChannelModel, cfg: &SimConfig) -> Result<()> {
    channel.validate()?;
    policy.validate()?;
    cfg.validate()
}

pub fn simulate(policy: &PolicyProfile, channel: &ChannelModel, cfg: &SimConfig) -> Result<SimReport> {
    check_inputs(policy, channel, cfg)?;
    Ok(run(policy, channel, cfg, |_, _, _, _, _| Ok(()))?)
}

/// Like [`simulate`], also writing one `slot,qp,qs,qsp,event` CSV row per
/// slot (queue lengths at the start of the slot).
pub fn simulate_with_trace<W: Write>(
    policy: &PolicyProfile,
    channel: &ChannelModel,
    cfg: &SimConfig,
    out: &mut W,
) -> Result<SimReport> {
    check_inputs(policy, channel, cfg)?;
    writeln!(out, "slot,qp,qs,qsp,event")?;
    Ok(run(policy, channel, cfg, |slot, qp, qs, qsp, ev| writeln!(out, "{slot},{qp},{qs},{qsp},{}", ev.label()))?)
}

fn run<F>(policy: &PolicyProfile, channel: &ChannelModel, cfg: &SimConfig, mut trace: F) -> std::io::Result<SimReport>
where
    F: FnMut(u64, u64, u64, u64, SlotEvent) -> std::io::Result<()>,
{
    let k = policy.k as u64;
    let mut rng = Streams::new(cfg.seed);
    let (mut qp, mut qs, mut qsp) = (0u64, 0u64, 0u64);

    let mut occupancy = vec![0u64; policy.k + 1];
    let (mut delivered_p, mut delivered_s, mut delivered_relay) = (0u64, 0u64, 0u64);
    let (mut arrivals_p, mut arrivals_s) = (0u64, 0u64);
    let (mut busy, mut pu_departures, mut wasted) = (0u64, 0u64, 0u64);
    let (mut warm_qp, mut warm_qs, mut warm_qsp) = (0u64, 0u64, 0u64);
    let half = cfg.slots / 2;
    let mut fit_p = SlopeFit::default();
    let mut fit_s = SlopeFit::default();
    let measured = cfg.measured_slots();
    let mut batch_deliveries = vec![0u64; BATCHES as usize];

    for slot in 0..cfg.slots {
        let measuring = slot >= cfg.warmup;
        if slot == cfg.warmup {
            (warm_qp, warm_qs, warm_qsp) = (qp, qs, qsp);
        }
        let state = qsp as usize;
        if measuring {
            occupancy[state] += 1;
        }

        // One draw per stream per slot keeps the streams aligned across
        // policies.
        let u_pu_link: f64 = rng.pu_link.random();
        let u_decode: f64 = rng.su_decode.random();
        let u_admit: f64 = rng.admission.random();
        let u_select: f64 = rng.selection.random();
        let u_su_link: f64 = rng.su_link.random();
        let u_arr_p: f64 = rng.pu_arrival.random();
        let u_arr_s: f64 = rng.su_arrival.random();

        let (start_qp, start_qs, start_qsp) = (qp, qs, qsp);
        let event = if qp > 0 {
            if measuring {
                busy += 1;
            }
            if u_pu_link < channel.f_pd {
                qp -= 1;
                if measuring {
                    delivered_p += 1;
                    pu_departures += 1;
                }
                SlotEvent::PuDelivered
            } else if u_decode < channel.f_ps && u_admit < policy.admit[state] {
                qp -= 1;
                qsp += 1;
                if measuring {
                    pu_departures += 1;
                }
                SlotEvent::PuRelayed
            } else {
                SlotEvent::PuRetained
            }
        } else {
            let own = u_select < policy.select_own[state];
            let success = u_su_link < channel.f_sd;
            let (picked, other) = if own { (qs, qsp) } else { (qsp, qs) };
            if picked == 0 {
                if other > 0 {
                    if measuring {
                        wasted += 1;
                    }
                    SlotEvent::Wasted
                } else {
                    SlotEvent::Idle
                }
            } else if own {
                if success {
                    qs -= 1;
                    if measuring {
                        delivered_s += 1;
                        batch_deliveries[((slot - cfg.warmup) * BATCHES / measured) as usize] += 1;
                    }
                    SlotEvent::SuDelivered
                } else {
                    SlotEvent::SuFailed
                }
            } else if success {
                qsp -= 1;
                if measuring {
                    delivered_relay += 1;
                }
                SlotEvent::RelayDelivered
            } else {
                SlotEvent::RelayFailed
            }
        };
        debug_assert!(qsp <= k, "relay buffer overflow at slot {slot}");

        if u_arr_p < cfg.lambda_p {
            qp += 1;
            if measuring {
                arrivals_p += 1;
            }
        }
        if u_arr_s < cfg.lambda_s {
            qs += 1;
            if measuring {
                arrivals_s += 1;
            }
        }
        if slot >= half {
            let t = (slot - half) as f64;
            fit_p.push(t, qp as f64);
            fit_s.push(t, qs as f64);
        }
        trace(slot, start_qp, start_qs, start_qsp, event)?;
    }

    let empirical_pi: Vec<f64> = occupancy.iter().map(|&c| c as f64 / measured as f64).collect();
    let (qp_slope, qs_slope) = (fit_p.slope(), fit_s.slope());
    let report = SimReport {
        delivered_p,
        delivered_s,
        delivered_relay,
        empirical_mu_p: if busy > 0 { pu_departures as f64 / busy as f64 } else { f64::NAN },
        empirical_throughput_s: delivered_s as f64 / measured as f64,
        empirical_pi,
        final_qp_len: qp,
        final_qs_len: qs,
        final_qsp_len: qsp,
        wasted_slots: wasted,
        stability_flag_p: !looks_unstable(qp, qp_slope, cfg.slots),
        stability_flag_s: !looks_unstable(qs, qs_slope, cfg.slots),
        measured_slots: measured,
        pu_busy_slots: busy,
        arrivals_p,
        arrivals_s,
        warm_qp_len: warm_qp,
        warm_qs_len: warm_qs,
        warm_qsp_len: warm_qsp,
        qp_slope,
        qs_slope,
        throughput_s_batch_se: batch_se(&batch_deliveries, measured),
    };
    assert!(report.conserves_packets(), "packet conservation violated");
    Ok(report)
}

/// Standard error of the overall rate from per-batch counts; batch `b`
/// covers the slots `t` with `t * BATCHES / measured == b`.
fn batch_se(counts: &[u64], measured: u64) -> f64 {
    let b = counts.len() as u64;
    if measured < b {
        return f64::NAN;
    }
    let rates: Vec<f64> = (0..b)
        .map(|i| {
            let start = (i * measured).div_ceil(b);
            let end = ((i + 1) * measured).div_ceil(b);
            counts[i as usize] as f64 / (end - start) as f64
        })
        .collect();
    let mean = rates.iter().sum::<f64>() / b as f64;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Checks membership of `(lambda_p, lambda_s)` in the region empirically:
/// fetches the optimal policy for `k`, simulates it and reports whether both
/// queues look stable.
pub fn empirical_region_probe(
    channel: &ChannelModel,
    k: usize,
    lambda_p: f64,
    lambda_s: f64,
    sweep: &SweepConfig,
    sim: &SimConfig,
) -> Result<bool> {
    let point = max_lambda_s(channel, lambda_p, k, sweep)?;
    let cfg = SimConfig { lambda_p, lambda_s, ..sim.clone() };
    let report = simulate(&point.policy, channel, &cfg)?;
    Ok(report.stability_flag_p && report.stability_flag_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(slots: u64, lambda_p: f64, lambda_s: f64) -> SimConfig {
        SimConfig { slots, warmup: slots / 10, seed: 7, lambda_p, lambda_s }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { slots: 10, warmup: 10, seed: 0, lambda_p: 0.1, lambda_s: 0.1 }.validate().is_err());
        assert!(SimConfig { slots: 0, warmup: 0, seed: 0, lambda_p: 0.1, lambda_s: 0.1 }.validate().is_err());
        assert!(cfg(10, 1.5, 0.1).validate().is_err());
        assert!(cfg(10, 0.1, 0.1).validate().is_ok());
    }

    #[test]
    fn saturated_su_alone_gets_f_sd() {
        let c = ChannelModel::reference();
        let r = simulate(&PolicyProfile::full_cooperation(3), &c, &cfg(200_000, 0.0, 1.0)).unwrap();
        let se = (0.8f64 * 0.2 / r.measured_slots as f64).sqrt();
        assert!((r.empirical_throughput_s - 0.8).abs() < 4.0 * se);
        assert_eq!(r.empirical_pi[0], 1.0);
        assert_eq!(r.wasted_slots, 0);
    }

    #[test]
    fn relay_buffer_never_overflows() {
        let c = ChannelModel::reference();
        let p = PolicyProfile::full_cooperation(2);
        let mut buf = Vec::new();
        simulate_with_trace(&p, &c, &cfg(20_000, 0.4, 0.2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("slot,qp,qs,qsp,event"));
        let mut rows = 0;
        for line in lines {
            let qsp: u64 = line.split(',').nth(3).unwrap().parse().unwrap();
            assert!(qsp <= 2);
            rows += 1;
        }
        assert_eq!(rows, 20_000);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = ChannelModel::reference();
        let p = PolicyProfile::full_cooperation(3);
        let a = simulate(&p, &c, &cfg(50_000, 0.3, 0.2)).unwrap();
        let b = simulate(&p, &c, &cfg(50_000, 0.3, 0.2)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let other = simulate(&p, &c, &SimConfig { seed: 8, ..cfg(50_000, 0.3, 0.2) }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn overloaded_pu_flagged_unstable() {
        let c = ChannelModel::reference();
        let r = simulate(&PolicyProfile::full_cooperation(5), &c, &cfg(200_000, 0.9, 0.1)).unwrap();
        assert!(!r.stability_flag_p);
        assert!(r.qp_slope > 0.2);
        assert!(r.conserves_packets());
    }

    #[test]
    fn empty_relay_pick_wastes_slot() {
        // The SU always prefers the relay queue when it holds a packet and
        // its own queue otherwise; with the PU silent nothing is ever relayed.
        let c = ChannelModel::reference();
        let p = PolicyProfile { k: 1, admit: vec![1.0, 0.0], select_own: vec![1.0, 0.0] };
        let r = simulate(&p, &c, &cfg(10_000, 0.0, 0.5)).unwrap();
        assert_eq!(r.wasted_slots, 0);
        assert_eq!(r.delivered_relay, 0);

        // Always picking the own queue while relayed packets wait wastes the
        // slots in which Q_s is empty.
        let p = PolicyProfile { k: 3, admit: vec![1.0, 1.0, 1.0, 0.0], select_own: vec![1.0; 4] };
        let r = simulate(&p, &c, &cfg(50_000, 0.2, 0.05)).unwrap();
        assert!(r.wasted_slots > 0);
        assert_eq!(r.delivered_relay, 0);
        assert_eq!(r.final_qsp_len, 3);
    }

    #[test]
    fn batch_se_of_even_counts_is_zero() {
        assert_eq!(batch_se(&[5; 50], 500), 0.0);
        assert!(batch_se(&[5; 50], 10).is_nan());
        let mut uneven = [5u64; 50];
        uneven[0] = 0;
        assert!(batch_se(&uneven, 500) > 0.0);
    }

    #[test]
    fn slope_fit_recovers_line() {
        let mut f = SlopeFit::default();
        for t in 0..100 {
            f.push(t as f64, 3.0 + 0.25 * t as f64);
        }
        assert!((f.slope() - 0.25).abs() < 1e-12);
    }
}
