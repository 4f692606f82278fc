//! Periodic packet sources and FIFO bit queues.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VIDEO_PACKET_BITS: u64 = 1000;
pub const SAFETY_PACKET_BITS: u64 = 1280;
pub const SAFETY_PERIOD_TTI: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    /// Safety messages (URLLC).
    Autonomous,
    /// Video streaming (eMBB).
    Infotainment,
}

impl Slice {
    pub const ALL: [Slice; 2] = [Slice::Autonomous, Slice::Infotainment];

    pub fn as_str(self) -> &'static str {
        match self {
            Slice::Autonomous => "autonomous",
            Slice::Infotainment => "infotainment",
        }
    }

    pub fn packet_bits(self) -> u64 {
        match self {
            Slice::Autonomous => SAFETY_PACKET_BITS,
            Slice::Infotainment => VIDEO_PACKET_BITS,
        }
    }

    /// Offered load in bit/s.
    pub fn offered_bps(self) -> f64 {
        match self {
            Slice::Autonomous => (SAFETY_PACKET_BITS * 1000 / SAFETY_PERIOD_TTI) as f64,
            Slice::Infotainment => (VIDEO_PACKET_BITS * 1000) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId {
    pub vehicle: u32,
    pub slice: Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub flow: FlowId,
    pub size_bits: u64,
    pub arrival_tti: u64,
    pub bits_remaining: u64,
    pub departure_tti: Option<u64>,
    /// Lost part of its payload to a HARQ drop; counts as a failure, not a latency sample.
    pub corrupted: bool,
}

impl Packet {
    pub fn new(flow: FlowId, size_bits: u64, arrival_tti: u64) -> Self {
        Packet {
            flow,
            size_bits,
            arrival_tti,
            bits_remaining: size_bits,
            departure_tti: None,
            corrupted: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("packet arriving at TTI {arrival_tti} has not departed")]
    NotDeparted { arrival_tti: u64 },
    #[error("packet arriving at TTI {arrival_tti} was dropped")]
    Dropped { arrival_tti: u64 },
}

/// Packets produced by one flow at TTI `t`.
///
/// Video emits every TTI. Safety emits when `t mod 10` equals the vehicle's
/// phase, `vehicle mod 10`.
pub fn generate_arrivals(t: u64, flow: FlowId) -> Vec<Packet> {
    match flow.slice {
        Slice::Infotainment => vec![Packet::new(flow, VIDEO_PACKET_BITS, t)],
        Slice::Autonomous => {
            if t % SAFETY_PERIOD_TTI == u64::from(flow.vehicle) % SAFETY_PERIOD_TTI {
                vec![Packet::new(flow, SAFETY_PACKET_BITS, t)]
            } else {
                Vec::new()
            }
        }
    }
}

/// TTIs spent queued; a packet served in its arrival TTI counts as 1.
pub fn packet_latency(packet: &Packet) -> Result<u64, TrafficError> {
    if packet.corrupted {
        return Err(TrafficError::Dropped {
            arrival_tti: packet.arrival_tti,
        });
    }
    match packet.departure_tti {
        Some(d) => Ok(d - packet.arrival_tti + 1),
        None => Err(TrafficError::NotDeparted {
            arrival_tti: packet.arrival_tti,
        }),
    }
}

/// FIFO of partially servable packets with running bit counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketQueue {
    packets: VecDeque<Packet>,
    total_bits: u64,
    pub arrived_bits: u64,
    pub departed_bits: u64,
    pub dropped_bits: u64,
}

impl PacketQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total_bits(&self) -> u64 {
        self.total_bits
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    pub fn enqueue(&mut self, packet: Packet) {
        debug_assert!(packet.bits_remaining <= packet.size_bits);
        self.total_bits += packet.bits_remaining;
        self.arrived_bits += packet.bits_remaining;
        self.packets.push_back(packet);
    }

    /// Drain `bits` from the head; returns packets whose last bit left at `tti`.
    pub fn serve(&mut self, bits: u64, tti: u64) -> Vec<Packet> {
        assert!(
            bits <= self.total_bits,
            "serving {bits} bits from a queue holding {}",
            self.total_bits
        );
        self.total_bits -= bits;
        self.departed_bits += bits;
        self.drain(bits, |p| p.departure_tti = Some(tti))
    }

    /// Discard `bits` from the head; returns packets that lost their last bit.
    /// A packet losing only part of its bits stays queued, marked corrupted.
    pub fn drop_bits(&mut self, bits: u64) -> Vec<Packet> {
        assert!(
            bits <= self.total_bits,
            "dropping {bits} bits from a queue holding {}",
            self.total_bits
        );
        self.total_bits -= bits;
        self.dropped_bits += bits;
        let done = self.drain(bits, |p| p.corrupted = true);
        if bits > 0 {
            if let Some(head) = self.packets.front_mut() {
                if head.bits_remaining < head.size_bits {
                    head.corrupted = true;
                }
            }
        }
        done
    }

    fn drain(&mut self, mut bits: u64, mut finish: impl FnMut(&mut Packet)) -> Vec<Packet> {
        let mut done = Vec::new();
        while bits > 0 {
            let head = self.packets.front_mut().expect("bit counter out of sync");
            let take = bits.min(head.bits_remaining);
            head.bits_remaining -= take;
            bits -= take;
            if head.bits_remaining == 0 {
                let mut p = self.packets.pop_front().expect("head exists");
                finish(&mut p);
                done.push(p);
            }
        }
        done
    }
}

/// One queue recursion step: enqueue `arrivals`, then serve `served_bits`.
pub fn update_queue(
    queue: &mut PacketQueue,
    served_bits: u64,
    arrivals: Vec<Packet>,
    tti: u64,
) -> Vec<Packet> {
    for p in arrivals {
        queue.enqueue(p);
    }
    queue.serve(served_bits, tti)
}
