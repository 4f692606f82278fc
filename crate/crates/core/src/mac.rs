//! Proportional-fair PRB allocation and HARQ with chase combining.

use serde::{Deserialize, Serialize};

use crate::channel::{linear_to_db, mcs_threshold_db, Outcome, BITS_PER_PRB_PER_SE};
use crate::traffic::FlowId;

/// Floor on the PF average, bits per TTI.
pub const PF_AVG_FLOOR: f64 = 1.0;

/// Scheduler view of one flow for a single TTI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfFlow {
    pub queue_bits: u64,
    /// Estimated bits per PRB this TTI.
    pub rate_per_prb: f64,
    /// Exponentially averaged served bits per TTI.
    pub avg: f64,
}

/// Greedy per-PRB PF: each PRB goes to the flow with the highest
/// `rate / (avg + beta * granted)` among flows whose grant does not yet cover
/// their queue. Ties go to the lowest index. PRBs nobody needs stay idle.
/// Returns PRB counts per flow.
pub fn pf_schedule(flows: &[PfFlow], beta: f64, n_prb: u32) -> Vec<u32> {
    assert!(n_prb > 0, "pf_schedule needs at least one PRB");
    let mut alloc = vec![0u32; flows.len()];
    let mut granted = vec![0.0f64; flows.len()];
    for _ in 0..n_prb {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in flows.iter().enumerate() {
            if granted[i] >= f.queue_bits as f64 {
                continue;
            }
            let metric = f.rate_per_prb / (f.avg.max(PF_AVG_FLOOR) + beta * granted[i]);
            if best.is_none_or(|(_, m)| metric > m) {
                best = Some((i, metric));
            }
        }
        let Some((i, _)) = best else { break };
        alloc[i] += 1;
        granted[i] += flows[i].rate_per_prb.max(0.0);
        // a zero-rate estimate would otherwise hold the flow eligible forever
        if flows[i].rate_per_prb <= 0.0 {
            granted[i] = flows[i].queue_bits as f64;
        }
    }
    alloc
}

/// EWMA of served bits per TTI, floored at [`PF_AVG_FLOOR`].
pub fn update_pf_average(avg: f64, served_bits: u64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0 && beta < 1.0);
    ((1.0 - beta) * avg + beta * served_bits as f64).max(PF_AVG_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarqProcess {
    pub flow: FlowId,
    pub payload_bits: u64,
    pub attempts: u32,
    /// Sum of the linear effective SINRs of all attempts so far.
    pub accumulated_sinr: f64,
    pub threshold_db: f64,
    pub n_prb: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportBlock {
    New {
        flow: FlowId,
        payload_bits: u64,
        n_prb: u32,
    },
    Retransmission(HarqProcess),
}

impl TransportBlock {
    pub fn flow(&self) -> FlowId {
        match self {
            TransportBlock::New { flow, .. } => *flow,
            TransportBlock::Retransmission(h) => h.flow,
        }
    }

    pub fn n_prb(&self) -> u32 {
        match self {
            TransportBlock::New { n_prb, .. } => *n_prb,
            TransportBlock::Retransmission(h) => h.n_prb,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TxResult {
    Acked { flow: FlowId, bits: u64 },
    Nacked(HarqProcess),
    Dropped { flow: FlowId, bits: u64 },
}

/// MCS threshold for carrying `payload_bits` over `n_prb` PRBs.
pub fn payload_threshold_db(payload_bits: u64, n_prb: u32) -> f64 {
    let se = payload_bits as f64 / (f64::from(n_prb) * BITS_PER_PRB_PER_SE);
    mcs_threshold_db(se)
}

/// Resolve one transmission attempt.
///
/// New blocks get an MCS threshold sized for their payload. Retransmissions add
/// this attempt's SINR to the accumulated one before the decision. `decide`
/// receives `(sinr_db, threshold_db)`; after `max_attempts` NACKs the payload is dropped.
pub fn resolve_transmission(
    tb: TransportBlock,
    eff_sinr_linear: f64,
    max_attempts: u32,
    mut decide: impl FnMut(f64, f64) -> Outcome,
) -> TxResult {
    let mut proc = match tb {
        TransportBlock::New {
            flow,
            payload_bits,
            n_prb,
        } => HarqProcess {
            flow,
            payload_bits,
            attempts: 0,
            accumulated_sinr: 0.0,
            threshold_db: payload_threshold_db(payload_bits, n_prb),
            n_prb,
        },
        TransportBlock::Retransmission(h) => h,
    };
    assert!(proc.attempts < max_attempts, "HARQ attempt beyond the cap");
    proc.attempts += 1;
    proc.accumulated_sinr += eff_sinr_linear;
    match decide(linear_to_db(proc.accumulated_sinr), proc.threshold_db) {
        Outcome::Ack => TxResult::Acked {
            flow: proc.flow,
            bits: proc.payload_bits,
        },
        Outcome::Nack if proc.attempts >= max_attempts => TxResult::Dropped {
            flow: proc.flow,
            bits: proc.payload_bits,
        },
        Outcome::Nack => TxResult::Nacked(proc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::Slice;
    use approx::assert_abs_diff_eq;

    fn flow(rate: f64, avg: f64, queue: u64) -> PfFlow {
        PfFlow {
            queue_bits: queue,
            rate_per_prb: rate,
            avg,
        }
    }

    const F: FlowId = FlowId {
        vehicle: 4,
        slice: Slice::Autonomous,
    };

    #[test]
    fn equal_flows_split_evenly() {
        let a = pf_schedule(
            &[flow(500.0, 300.0, u64::MAX), flow(500.0, 300.0, u64::MAX)],
            0.01,
            10,
        );
        assert_eq!(a, vec![5, 5]);
    }

    #[test]
    fn single_flow_takes_what_it_can_use() {
        assert_eq!(
            pf_schedule(&[flow(100.0, 10.0, 1_000_000)], 0.01, 50),
            vec![50]
        );
        assert_eq!(pf_schedule(&[flow(100.0, 10.0, 250)], 0.01, 50), vec![3]);
    }

    #[test]
    fn empty_queues_get_nothing() {
        assert_eq!(
            pf_schedule(&[flow(100.0, 10.0, 0), flow(1.0, 1.0, 0)], 0.01, 50),
            vec![0, 0]
        );
        assert!(pf_schedule(&[], 0.01, 50).is_empty());
    }

    #[test]
    fn covered_flows_leave_prbs_to_others() {
        let a = pf_schedule(
            &[flow(100.0, 1000.0, 300), flow(100.0, 1.0, 4000)],
            0.01,
            50,
        );
        assert_eq!(a, vec![3, 40]);
        assert_eq!(
            pf_schedule(&[flow(0.0, 1.0, 500), flow(0.0, 1.0, 0)], 0.01, 4),
            vec![1, 0]
        );
    }

    #[test]
    fn ewma_reference_points() {
        assert_abs_diff_eq!(update_pf_average(100.0, 200, 0.01), 101.0, epsilon = 1e-12);
        assert_abs_diff_eq!(update_pf_average(250.0, 250, 0.01), 250.0, epsilon = 1e-12);
        let mut avg = 1e6;
        for _ in 0..10_000 {
            avg = update_pf_average(avg, 0, 0.01);
        }
        assert_eq!(avg, PF_AVG_FLOOR);
    }

    #[test]
    fn first_attempt_ack_serves_payload() {
        let r = resolve_transmission(
            TransportBlock::New {
                flow: F,
                payload_bits: 900,
                n_prb: 2,
            },
            10.0,
            4,
            |_, _| Outcome::Ack,
        );
        assert_eq!(r, TxResult::Acked { flow: F, bits: 900 });
    }

    #[test]
    fn chase_combining_accumulates_linear_sinr() {
        let x = 3.0;
        let first = resolve_transmission(
            TransportBlock::New {
                flow: F,
                payload_bits: 500,
                n_prb: 1,
            },
            x,
            4,
            |_, _| Outcome::Nack,
        );
        let TxResult::Nacked(h) = first else {
            panic!("{first:?}")
        };
        let mut seen = 0.0;
        resolve_transmission(TransportBlock::Retransmission(h), x, 4, |s, _| {
            seen = s;
            Outcome::Ack
        });
        assert_abs_diff_eq!(seen, linear_to_db(2.0 * x), epsilon = 1e-12);
    }

    #[test]
    fn four_nacks_drop_the_block() {
        let mut tb = TransportBlock::New {
            flow: F,
            payload_bits: 1280,
            n_prb: 3,
        };
        for attempt in 1..=4 {
            match resolve_transmission(tb.clone(), 1.0, 4, |_, _| Outcome::Nack) {
                TxResult::Nacked(h) => {
                    assert!(attempt < 4);
                    assert_eq!(h.attempts, attempt);
                    tb = TransportBlock::Retransmission(h);
                }
                TxResult::Dropped { bits, .. } => {
                    assert_eq!(attempt, 4);
                    assert_eq!(bits, 1280);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn threshold_matches_payload_efficiency() {
        // 360 bits on 2 PRBs is 1 bit/s/Hz, decodable from 0 dB
        assert_abs_diff_eq!(payload_threshold_db(360, 2), 0.0, epsilon = 1e-12);
    }
}
