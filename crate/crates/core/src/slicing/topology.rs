//! Serving maps produced by each policy.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::leaders::{select_slice_leaders, Member};
use super::spectral::cluster_vehicles;
use super::SlicingError;
use crate::mobility::{nearest_rsu, wrapped_distance, wrapped_dx, NodeId, Point, Rsu, Vehicle};
use crate::traffic::{FlowId, Slice};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyWarnings {
    /// Clusters merged into a neighbour because no leader candidate was left.
    pub leader_merges: u64,
    /// Offloaded vehicles with no relay in range, kept on the RSU.
    pub unserved_offloads: u64,
    /// Clustered vehicles beyond sidelink range of their leader, kept on the RSU.
    #[serde(default)]
    pub out_of_range: u64,
    pub eigensolver_fallbacks: u64,
}

impl TopologyWarnings {
    pub fn add(&mut self, other: &TopologyWarnings) {
        self.leader_merges += other.leader_merges;
        self.unserved_offloads += other.unserved_offloads;
        self.out_of_range += other.out_of_range;
        self.eigensolver_fallbacks += other.eigensolver_fallbacks;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopologyAssignment {
    pub epoch_tti: u64,
    /// Safety-only vehicles grouped under one leader each.
    pub clusters: Vec<Vec<u32>>,
    /// `leaders[i]` serves `clusters[i]`.
    pub leaders: Vec<u32>,
    /// Safety-only vehicles left on the RSU, for lack of a leader in range.
    pub direct: Vec<u32>,
    /// Offloaded vehicle to relay vehicle.
    pub relays: BTreeMap<u32, u32>,
    pub serving: BTreeMap<FlowId, NodeId>,
    pub warnings: TopologyWarnings,
}

/// Flows a vehicle sources: safety always, video when capable.
pub fn flows_of(v: &Vehicle) -> impl Iterator<Item = FlowId> {
    let id = v.id;
    let video = v.is_video_capable();
    std::iter::once(FlowId {
        vehicle: id,
        slice: Slice::Autonomous,
    })
    .chain(video.then_some(FlowId {
        vehicle: id,
        slice: Slice::Infotainment,
    }))
}

impl TopologyAssignment {
    pub fn leader_count(&self) -> usize {
        self.leaders.len()
    }

    /// Check partition and serving-map consistency against the live network.
    pub fn validate(&self, vehicles: &[Vehicle], rsus: &[Rsu]) -> Result<(), SlicingError> {
        let bad = |msg: String| Err(SlicingError::InvalidTopology(msg));
        let live: BTreeSet<u32> = vehicles.iter().map(|v| v.id).collect();
        let rsu_ids: BTreeSet<u32> = rsus.iter().map(|r| r.id).collect();
        if self.clusters.len() != self.leaders.len() {
            return bad(format!(
                "{} clusters but {} leaders",
                self.clusters.len(),
                self.leaders.len()
            ));
        }
        let mut clustered = BTreeSet::new();
        for c in &self.clusters {
            if c.is_empty() {
                return bad("empty cluster".into());
            }
            for &v in c {
                if !clustered.insert(v) {
                    return bad(format!("vehicle {v} in two clusters"));
                }
            }
        }
        let leaders: BTreeSet<u32> = self.leaders.iter().copied().collect();
        if leaders.len() != self.leaders.len() {
            return bad("a vehicle leads two clusters".into());
        }
        if let Some(v) = leaders.intersection(&clustered).next() {
            return bad(format!("leader {v} is also a cluster member"));
        }
        for v in clustered.iter().chain(&leaders).chain(&self.direct) {
            if !live.contains(v) {
                return bad(format!("unknown vehicle {v}"));
            }
        }
        for (c, &l) in self.clusters.iter().zip(&self.leaders) {
            for &v in c {
                let f = FlowId {
                    vehicle: v,
                    slice: Slice::Autonomous,
                };
                if self.serving.get(&f) != Some(&NodeId::Vehicle(l)) {
                    return bad(format!("member {v} not served by its leader {l}"));
                }
            }
        }
        let mut expected = 0;
        for v in vehicles {
            for f in flows_of(v) {
                expected += 1;
                match self.serving.get(&f) {
                    None => return bad(format!("flow {f:?} has no serving node")),
                    Some(NodeId::Rsu(r)) if !rsu_ids.contains(r) => {
                        return bad(format!("flow {f:?} served by unknown RSU {r}"))
                    }
                    Some(NodeId::Vehicle(s)) if !live.contains(s) || *s == v.id => {
                        return bad(format!("flow {f:?} served by vehicle {s}"))
                    }
                    _ => {}
                }
            }
        }
        if expected != self.serving.len() {
            return bad("serving map holds flows of unknown vehicles".into());
        }
        Ok(())
    }

    /// One row per vehicle for the debug dump.
    pub fn rows(&self, vehicles: &[Vehicle]) -> Vec<TopologyRow> {
        let mut cluster_of = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            for &v in c {
                cluster_of.insert(v, (i as i64, i64::from(self.leaders[i])));
            }
        }
        for (i, &l) in self.leaders.iter().enumerate() {
            cluster_of.insert(l, (i as i64, i64::from(l)));
        }
        vehicles
            .iter()
            .map(|v| {
                let (cluster_id, leader_id) = cluster_of.get(&v.id).copied().unwrap_or((-1, -1));
                TopologyRow {
                    epoch_tti: self.epoch_tti,
                    vehicle_id: v.id,
                    cluster_id,
                    leader_id,
                    x_m: v.x_m,
                    y_m: v.y_m,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyRow {
    pub epoch_tti: u64,
    pub vehicle_id: u32,
    pub cluster_id: i64,
    pub leader_id: i64,
    pub x_m: f64,
    pub y_m: f64,
}

/// Every flow to the nearest RSU, one shared pool, no leaders.
pub fn baseline1_topology(
    vehicles: &[Vehicle],
    rsus: &[Rsu],
    highway_length_m: f64,
    epoch_tti: u64,
) -> TopologyAssignment {
    let mut serving = BTreeMap::new();
    for v in vehicles {
        let r = NodeId::Rsu(nearest_rsu(v, rsus, highway_length_m));
        for f in flows_of(v) {
            serving.insert(f, r);
        }
    }
    TopologyAssignment {
        epoch_tti,
        serving,
        ..Default::default()
    }
}

/// Vehicles whose wideband V2I SINR (dB, indexed like `vehicles`) falls below
/// the threshold hand both flows to the closest non-offloaded vehicle within
/// `relay_range_m`.
pub fn baseline2_topology(
    vehicles: &[Vehicle],
    rsus: &[Rsu],
    v2i_sinr_db: &[f64],
    offload_threshold_db: f64,
    relay_range_m: f64,
    highway_length_m: f64,
    epoch_tti: u64,
) -> TopologyAssignment {
    assert_eq!(vehicles.len(), v2i_sinr_db.len());
    let mut topo = baseline1_topology(vehicles, rsus, highway_length_m, epoch_tti);
    let offloaded: Vec<bool> = v2i_sinr_db
        .iter()
        .map(|&s| s < offload_threshold_db)
        .collect();
    for (i, v) in vehicles.iter().enumerate() {
        if !offloaded[i] {
            continue;
        }
        let mut best: Option<(f64, u32)> = None;
        for (j, r) in vehicles.iter().enumerate() {
            if offloaded[j] {
                continue;
            }
            let d = wrapped_distance(v.position(), r.position(), highway_length_m);
            if d > relay_range_m {
                continue;
            }
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && r.id < bid)) {
                best = Some((d, r.id));
            }
        }
        match best {
            Some((_, relay)) => {
                topo.relays.insert(v.id, relay);
                for f in flows_of(v) {
                    topo.serving.insert(f, NodeId::Vehicle(relay));
                }
            }
            None => topo.warnings.unserved_offloads += 1,
        }
    }
    topo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposedParams {
    pub sigma_m: f64,
    pub squared_similarity: bool,
    pub highway_length_m: f64,
    /// Farthest leader a video vehicle may use for its own safety traffic.
    pub relay_range_m: f64,
}

/// Per RSU scope: cluster the safety-only vehicles, elect leaders among the
/// video-capable ones. Video goes over the RSU, clustered safety over the leader.
pub fn proposed_topology<R: Rng + ?Sized>(
    vehicles: &[Vehicle],
    rsus: &[Rsu],
    params: &ProposedParams,
    rng: &mut R,
    epoch_tti: u64,
) -> TopologyAssignment {
    let length = params.highway_length_m;
    let home: Vec<u32> = vehicles
        .iter()
        .map(|v| nearest_rsu(v, rsus, length))
        .collect();
    let mut topo = TopologyAssignment {
        epoch_tti,
        ..Default::default()
    };

    for rsu in rsus {
        let local = |v: &Vehicle| Member {
            id: v.id,
            pos: Point::new(wrapped_dx(rsu.x_m, v.x_m, length), v.y_m),
        };
        let in_scope = || {
            vehicles
                .iter()
                .zip(&home)
                .filter(|(_, &h)| h == rsu.id)
                .map(|(v, _)| v)
        };
        let members: Vec<Member> = in_scope()
            .filter(|v| !v.is_video_capable())
            .map(local)
            .collect();
        let candidates: Vec<Member> = in_scope()
            .filter(|v| v.is_video_capable())
            .map(local)
            .collect();
        if members.is_empty() {
            continue;
        }
        let positions: Vec<Point> = members.iter().map(|m| m.pos).collect();
        let outcome = cluster_vehicles(&positions, params.sigma_m, params.squared_similarity, rng);
        if outcome.fallback {
            topo.warnings.eigensolver_fallbacks += 1;
        }
        let groups: Vec<Vec<Member>> = outcome
            .clusters
            .iter()
            .map(|c| c.iter().map(|&i| members[i]).collect())
            .collect();
        let elected = select_slice_leaders(&groups, &candidates);
        topo.warnings.leader_merges += u64::from(elected.merges);
        topo.direct.extend(elected.orphans);
        let pos_of: BTreeMap<u32, Point> = members
            .iter()
            .chain(&candidates)
            .map(|m| (m.id, m.pos))
            .collect();
        for (cluster, leader) in elected.clusters.into_iter().zip(elected.leaders) {
            let (near, far): (Vec<u32>, Vec<u32>) = cluster
                .into_iter()
                .partition(|v| pos_of[v].distance(pos_of[&leader]) <= params.relay_range_m);
            topo.warnings.out_of_range += far.len() as u64;
            topo.direct.extend(far);
            if !near.is_empty() {
                topo.clusters.push(near);
                topo.leaders.push(leader);
            }
        }
    }

    let leader_of: BTreeMap<u32, u32> = topo
        .clusters
        .iter()
        .zip(&topo.leaders)
        .flat_map(|(c, &l)| c.iter().map(move |&v| (v, l)))
        .collect();
    let by_id: BTreeMap<u32, &Vehicle> = vehicles.iter().map(|v| (v.id, v)).collect();
    for (v, &h) in vehicles.iter().zip(&home) {
        let rsu = NodeId::Rsu(h);
        if v.is_video_capable() {
            topo.serving.insert(
                FlowId {
                    vehicle: v.id,
                    slice: Slice::Infotainment,
                },
                rsu,
            );
        }
        let safety_node = if let Some(&l) = leader_of.get(&v.id) {
            NodeId::Vehicle(l)
        } else if v.is_video_capable() {
            let mut best: Option<(f64, u32)> = None;
            for &l in &topo.leaders {
                if l == v.id {
                    continue;
                }
                let d = wrapped_distance(v.position(), by_id[&l].position(), length);
                if d <= params.relay_range_m
                    && best.is_none_or(|(bd, bid)| d < bd || (d == bd && l < bid))
                {
                    best = Some((d, l));
                }
            }
            best.map_or(rsu, |(_, l)| NodeId::Vehicle(l))
        } else {
            rsu
        };
        topo.serving.insert(
            FlowId {
                vehicle: v.id,
                slice: Slice::Autonomous,
            },
            safety_node,
        );
    }
    topo
}
