//! Six-lane highway layout, RSU placement and vehicle motion with wrap-around.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Scenario;

pub const LANE_COUNT: u8 = 6;
pub const LANE_WIDTH_M: f64 = 4.0;
/// RSUs sit this far from the first lane, on the opposite side of the road.
pub const RSU_LATERAL_M: f64 = -35.0;
pub const INTER_RSU_DISTANCE_M: f64 = 1732.0;
pub const VEHICLE_SPEED_KMH: f64 = 140.0;

/// Any transmitter or receiver in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Rsu(u32),
    Vehicle(u32),
}

impl NodeId {
    /// Stable integer key, used for keyed random draws.
    pub fn key(self) -> u64 {
        match self {
            NodeId::Rsu(id) => u64::from(id),
            NodeId::Vehicle(id) => (1 << 32) | u64::from(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceClass {
    /// Streams video from the RSU and may be elected slice leader.
    VideoCapable,
    SafetyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub lane: u8,
    pub x_m: f64,
    pub y_m: f64,
    /// Signed velocity along the highway: positive for lanes 0-2.
    pub speed_mps: f64,
    pub service_class: ServiceClass,
}

impl Vehicle {
    pub fn position(&self) -> Point {
        Point::new(self.x_m, self.y_m)
    }

    pub fn is_video_capable(&self) -> bool {
        self.service_class == ServiceClass::VideoCapable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rsu {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub tx_power_dbm: f64,
    pub n_prb: u32,
}

impl Rsu {
    pub fn position(&self) -> Point {
        Point::new(self.x_m, self.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn lane_center_y(lane: u8) -> f64 {
    LANE_WIDTH_M * (f64::from(lane) + 0.5)
}

/// +1 for lanes 0-2, -1 for lanes 3-5.
pub fn lane_direction(lane: u8) -> f64 {
    if lane < LANE_COUNT / 2 {
        1.0
    } else {
        -1.0
    }
}

pub fn vehicle_speed_mps() -> f64 {
    VEHICLE_SPEED_KMH / 3.6
}

/// Signed shortest displacement from `from` to `to` on a ring of length `length`.
pub fn wrapped_dx(from: f64, to: f64, length: f64) -> f64 {
    let mut dx = (to - from).rem_euclid(length);
    if dx > length / 2.0 {
        dx -= length;
    }
    dx
}

/// Euclidean distance with the highway axis treated as a ring.
pub fn wrapped_distance(a: Point, b: Point, length: f64) -> f64 {
    wrapped_dx(a.x, b.x, length).hypot(b.y - a.y)
}

/// RSUs at the middle of consecutive 1732 m segments.
pub fn place_rsus(n_rsu: u32, tx_power_dbm: f64, n_prb: u32) -> Vec<Rsu> {
    (0..n_rsu)
        .map(|id| Rsu {
            id,
            x_m: (f64::from(id) + 0.5) * INTER_RSU_DISTANCE_M,
            y_m: RSU_LATERAL_M,
            tx_power_dbm,
            n_prb,
        })
        .collect()
}

/// Place vehicles lane by lane with gaps drawn uniformly from the scenario's interval.
///
/// A lane always receives its first vehicle, uniformly placed within the first
/// maximal gap (clipped to the highway). Each vehicle streams video with
/// probability `video_fraction`.
pub fn spawn_vehicles<R: Rng + ?Sized>(
    scenario: Scenario,
    highway_length_m: f64,
    video_fraction: f64,
    rng: &mut R,
) -> Vec<Vehicle> {
    let (gap_lo, gap_hi) = scenario.spacing_m();
    let speed = vehicle_speed_mps();
    let mut vehicles = Vec::new();
    for lane in 0..LANE_COUNT {
        let mut x = rng.random_range(0.0..gap_hi.min(highway_length_m));
        while x < highway_length_m {
            let service_class = if rng.random::<f64>() < video_fraction {
                ServiceClass::VideoCapable
            } else {
                ServiceClass::SafetyOnly
            };
            vehicles.push(Vehicle {
                id: vehicles.len() as u32,
                lane,
                x_m: x,
                y_m: lane_center_y(lane),
                speed_mps: lane_direction(lane) * speed,
                service_class,
            });
            x += rng.random_range(gap_lo..=gap_hi);
        }
    }
    vehicles
}

/// Move every vehicle by `speed * dt_s`, wrapping into `[0, highway_length_m)`.
pub fn advance_positions(vehicles: &mut [Vehicle], dt_s: f64, highway_length_m: f64) {
    assert!(dt_s > 0.0, "advance_positions needs dt_s > 0, got {dt_s}");
    for v in vehicles.iter_mut() {
        let mut x = (v.x_m + v.speed_mps * dt_s).rem_euclid(highway_length_m);
        // rem_euclid can round up to exactly the modulus for tiny negatives
        if x >= highway_length_m {
            x = 0.0;
        }
        v.x_m = x;
    }
}

/// Id of the RSU closest to `vehicle`; ties go to the lowest id.
pub fn nearest_rsu(vehicle: &Vehicle, rsus: &[Rsu], highway_length_m: f64) -> u32 {
    assert!(!rsus.is_empty(), "nearest_rsu needs at least one RSU");
    let p = vehicle.position();
    let mut best = (f64::INFINITY, u32::MAX);
    for rsu in rsus {
        let d = wrapped_distance(p, rsu.position(), highway_length_m);
        if d < best.0 || (d == best.0 && rsu.id < best.1) {
            best = (d, rsu.id);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    fn vehicle_at(x: f64, lane: u8) -> Vehicle {
        Vehicle {
            id: 0,
            lane,
            x_m: x,
            y_m: lane_center_y(lane),
            speed_mps: lane_direction(lane) * vehicle_speed_mps(),
            service_class: ServiceClass::SafetyOnly,
        }
    }

    #[test]
    fn sparse_lane_gaps_stay_in_interval() {
        let mut rng = stream(11, StreamKind::Placement);
        let vehicles = spawn_vehicles(Scenario::Sparse, 10_000.0, 0.2, &mut rng);
        let lane0: Vec<f64> = vehicles
            .iter()
            .filter(|v| v.lane == 0)
            .map(|v| v.x_m)
            .collect();
        assert!(lane0.len() > 30);
        for w in lane0.windows(2) {
            let gap = w[1] - w[0];
            assert!((200.0..=300.0).contains(&gap), "gap {gap}");
        }
    }

    #[test]
    fn dense_vehicle_count_matches_mean_gap() {
        // Expected count is 6 * L / E[gap] = 6 * 10000 / 50.5 ~ 1188, plus the
        // first-placement offset (~ +3 per run).
        let mut total = 0usize;
        for seed in 0..100 {
            let mut rng = stream(seed, StreamKind::Placement);
            let n = spawn_vehicles(Scenario::Dense, 10_000.0, 1.0, &mut rng).len();
            assert!((600..=60_000).contains(&n));
            total += n;
        }
        let mean = total as f64 / 100.0;
        assert!((1170.0..1210.0).contains(&mean), "mean count {mean}");
    }

    #[test]
    fn short_highway_still_gets_one_vehicle_per_lane() {
        let mut rng = stream(5, StreamKind::Placement);
        let vehicles = spawn_vehicles(Scenario::Sparse, 300.0, 0.5, &mut rng);
        for lane in 0..LANE_COUNT {
            assert!(vehicles.iter().any(|v| v.lane == lane));
        }
    }

    #[test]
    fn one_millisecond_at_140_kmh() {
        let mut v = [vehicle_at(0.0, 0)];
        advance_positions(&mut v, 1e-3, 1000.0);
        assert!((v[0].x_m - 140.0 / 3.6 / 1000.0).abs() < 1e-12);
        assert!((v[0].x_m - 0.038_888_888).abs() < 1e-8);
    }

    #[test]
    fn crossing_the_end_wraps() {
        let length = 500.0;
        let mut v = [vehicle_at(length - 0.01, 1), vehicle_at(0.005, 4)];
        advance_positions(&mut v, 0.1, length);
        for veh in &v {
            assert!((0.0..length).contains(&veh.x_m), "{}", veh.x_m);
        }
        assert!(v[0].x_m < 5.0);
        assert!(v[1].x_m > length - 5.0);
    }

    #[test]
    #[should_panic]
    fn zero_step_is_a_precondition_violation() {
        let mut v = [vehicle_at(1.0, 0)];
        advance_positions(&mut v, 0.0, 100.0);
    }

    #[test]
    fn nearest_rsu_picks_closer_and_breaks_ties_low() {
        let rsus = place_rsus(2, 46.0, 50);
        assert_eq!(rsus[0].x_m, 866.0);
        assert_eq!(rsus[1].x_m, 2598.0);
        // without wrap the first RSU is closer
        assert_eq!(nearest_rsu(&vehicle_at(0.0, 0), &rsus, 10_000.0), 0);
        // on a 3464 m ring, x = 0 is equidistant from both
        assert_eq!(nearest_rsu(&vehicle_at(0.0, 0), &rsus, 3464.0), 0);
        let mid = vehicle_at(1732.0, 2);
        assert_eq!(nearest_rsu(&mid, &rsus, 3464.0), 0);
        assert_eq!(nearest_rsu(&vehicle_at(2000.0, 0), &rsus, 3464.0), 1);
        assert_eq!(nearest_rsu(&mid, &rsus[1..], 3464.0), 1);
    }

    #[test]
    fn wrapped_dx_is_shortest() {
        assert_eq!(wrapped_dx(10.0, 20.0, 100.0), 10.0);
        assert_eq!(wrapped_dx(95.0, 5.0, 100.0), 10.0);
        assert_eq!(wrapped_dx(5.0, 95.0, 100.0), -10.0);
    }
}
