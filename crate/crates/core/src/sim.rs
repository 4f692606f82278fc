//! Network state and the per-TTI step.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::channel::{
    combine_prb_sinr, db_to_linear, effective_sinr, linear_to_db, noise_power_dbm, rate_from_sinr,
    spectral_efficiency, transmission_outcome, Band, BITS_PER_PRB_PER_SE, RX_BRANCHES, TTI_S,
};
use crate::config::{ConfigError, Mode, SimConfig};
use crate::mac::{
    pf_schedule, resolve_transmission, update_pf_average, HarqProcess, PfFlow, TransportBlock,
    TxResult,
};
use crate::metrics::{Collector, FlowTotals, MetricsReport};
use crate::mobility::{
    advance_positions, place_rsus, spawn_vehicles, wrapped_distance, NodeId, Point, Rsu, Vehicle,
};
use crate::rng::{keyed, RngStreams, StreamKind};
use crate::slicing::topology::flows_of;
use crate::slicing::{
    baseline1_topology, baseline2_topology, proposed_topology, ProposedParams, TopologyAssignment,
    TopologyRow,
};
use crate::traffic::{generate_arrivals, FlowId, PacketQueue};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One traffic flow and the state that travels with it.
#[derive(Debug, Clone)]
pub struct Flow {
    pub id: FlowId,
    pub queue: PacketQueue,
    pub pf_avg: f64,
    pub harq: Option<HarqProcess>,
    pub serving: NodeId,
}

fn band_of(node: NodeId) -> Band {
    match node {
        NodeId::Rsu(_) => Band::V2i2Ghz,
        NodeId::Vehicle(_) => Band::V2v5_9Ghz,
    }
}

/// exp(E[ln g]) for the MRC gain of `branches` unit-mean Rayleigh branches,
/// i.e. the geometric-mean gain the effective SINR sees on average.
fn mrc_geometric_gain(branches: usize) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let digamma = -EULER_GAMMA + (1..branches).map(|k| 1.0 / k as f64).sum::<f64>();
    digamma.exp()
}

/// What one step did; used by tests and tracing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub tti: u64,
    pub resliced: bool,
    pub arrived_bits: u64,
    /// Acknowledged bits per flow this TTI.
    pub served: Vec<(FlowId, u64)>,
    /// PRBs used per serving node this TTI.
    pub prbs_used: Vec<(NodeId, u32)>,
}

struct Scheduled {
    node: NodeId,
    flow: usize,
    prbs: Vec<usize>,
    tb: TransportBlock,
}

pub struct NetworkState {
    pub clock_tti: u64,
    pub vehicles: Vec<Vehicle>,
    pub rsus: Vec<Rsu>,
    pub topology: TopologyAssignment,
    pub flows: Vec<Flow>,
    flow_index: BTreeMap<FlowId, usize>,
    node_flows: BTreeMap<NodeId, Vec<usize>>,
    /// PRB utilisation of each serving node in the previous TTI.
    utilisation: BTreeMap<NodeId, f64>,
    shadowing: HashMap<(u64, u64), f64>,
    epoch: u64,
    rng: RngStreams,
    config: SimConfig,
    collector: Collector,
    noise_mw: f64,
    antenna_gain: f64,
    topology_log: Vec<TopologyRow>,
}

impl NetworkState {
    /// Fresh network with vehicles spawned from the placement stream.
    pub fn from_config(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = RngStreams::new(config.seed);
        let vehicles = spawn_vehicles(
            config.scenario,
            config.highway_length_m,
            config.video_fraction,
            &mut rng.placement,
        );
        let rsus = place_rsus(config.n_rsu, config.rsu_tx_power_dbm, config.n_prb);
        Ok(Self::with_network(config, vehicles, rsus, rng))
    }

    /// Network with caller-supplied vehicles (ids must be `0..n`) and RSUs.
    pub fn new(
        config: &SimConfig,
        vehicles: Vec<Vehicle>,
        rsus: Vec<Rsu>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self::with_network(
            config,
            vehicles,
            rsus,
            RngStreams::new(config.seed),
        ))
    }

    fn with_network(
        config: &SimConfig,
        vehicles: Vec<Vehicle>,
        rsus: Vec<Rsu>,
        rng: RngStreams,
    ) -> Self {
        assert!(
            vehicles.iter().enumerate().all(|(i, v)| v.id as usize == i),
            "vehicle ids must be their indices"
        );
        assert!(!rsus.is_empty(), "at least one RSU");
        let mut flows: Vec<Flow> = vehicles
            .iter()
            .flat_map(flows_of)
            .map(|id| Flow {
                id,
                queue: PacketQueue::new(),
                pf_avg: 1.0,
                harq: None,
                serving: NodeId::Rsu(rsus[0].id),
            })
            .collect();
        flows.sort_by_key(|f| f.id);
        let flow_index = flows.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
        let n = vehicles.len();
        NetworkState {
            clock_tti: 0,
            vehicles,
            rsus,
            topology: TopologyAssignment::default(),
            flows,
            flow_index,
            node_flows: BTreeMap::new(),
            utilisation: BTreeMap::new(),
            shadowing: HashMap::new(),
            epoch: 0,
            rng,
            config: config.clone(),
            collector: Collector::new(config.warmup_tti, n),
            noise_mw: db_to_linear(noise_power_dbm(config.noise_figure_db)),
            antenna_gain: db_to_linear(config.antenna_gain_db),
            topology_log: Vec::new(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flow_index.get(&id).map(|&i| &self.flows[i])
    }

    /// Per-PRB power with the total spread over the whole pool.
    fn prb_power_mw(&self, node: NodeId) -> f64 {
        self.tx_power_mw(node, f64::from(self.config.n_prb))
    }

    /// Per-PRB transmit power when `used_prbs` PRBs are in use. RSUs hold a fixed
    /// power per PRB; a vehicle splits its total power over the PRBs it uses.
    fn tx_power_mw(&self, node: NodeId, used_prbs: f64) -> f64 {
        let pool = f64::from(self.config.n_prb);
        match node {
            NodeId::Rsu(_) => db_to_linear(self.config.rsu_tx_power_dbm) / pool,
            NodeId::Vehicle(_) => {
                db_to_linear(self.config.sl_tx_power_dbm) / used_prbs.clamp(1.0, pool)
            }
        }
    }

    fn position(&self, node: NodeId) -> Point {
        match node {
            NodeId::Rsu(id) => self
                .rsus
                .iter()
                .find(|r| r.id == id)
                .expect("live RSU")
                .position(),
            NodeId::Vehicle(id) => self.vehicles[id as usize].position(),
        }
    }

    /// Log-normal shadowing of a directed link, fixed for the current epoch.
    fn shadowing_db(&mut self, tx: NodeId, rx: NodeId) -> f64 {
        let key = (tx.key(), rx.key());
        let (seed, epoch) = (self.config.seed, self.epoch);
        let std_db = match band_of(tx) {
            Band::V2i2Ghz => self.config.shadowing_v2i_db,
            Band::V2v5_9Ghz => self.config.shadowing_v2v_db,
        };
        *self.shadowing.entry(key).or_insert_with(|| {
            let z: f64 =
                keyed(seed, StreamKind::Shadowing, &[epoch, key.0, key.1]).sample(StandardNormal);
            std_db * z
        })
    }

    /// Path loss, shadowing and antenna gain as a linear power gain.
    fn large_scale_gain(&mut self, tx: NodeId, rx: NodeId) -> f64 {
        let d = wrapped_distance(
            self.position(tx),
            self.position(rx),
            self.config.highway_length_m,
        );
        let loss_db = band_of(tx).path_loss_db(d) + self.shadowing_db(tx, rx);
        self.antenna_gain * db_to_linear(-loss_db)
    }

    /// Per-branch wideband V2I SINR (dB) of every vehicle from its nearest RSU,
    /// with every other RSU interfering at full load.
    pub fn wideband_v2i_sinr_db(&mut self) -> Vec<f64> {
        let rsu_ids: Vec<NodeId> = self.rsus.iter().map(|r| NodeId::Rsu(r.id)).collect();
        let power = self.prb_power_mw(NodeId::Rsu(0));
        (0..self.vehicles.len())
            .map(|i| {
                let v = NodeId::Vehicle(i as u32);
                let home = NodeId::Rsu(crate::mobility::nearest_rsu(
                    &self.vehicles[i],
                    &self.rsus,
                    self.config.highway_length_m,
                ));
                let mut signal = 0.0;
                let mut interference = 0.0;
                for &r in &rsu_ids {
                    let rx = power * self.large_scale_gain(r, v);
                    if r == home {
                        signal = rx;
                    } else {
                        interference += rx;
                    }
                }
                linear_to_db(signal / (self.noise_mw + interference))
            })
            .collect()
    }

    fn reslice(&mut self) {
        let t = self.clock_tti;
        self.epoch = t / self.config.reslice_period_tti;
        self.shadowing.clear();
        let length = self.config.highway_length_m;
        let topo = match self.config.mode {
            Mode::Proposed => {
                let params = ProposedParams {
                    sigma_m: self.config.sigma_m,
                    squared_similarity: self.config.squared_similarity,
                    highway_length_m: length,
                    relay_range_m: self.config.relay_range_m,
                };
                proposed_topology(&self.vehicles, &self.rsus, &params, &mut self.rng.kmeans, t)
            }
            Mode::Baseline1 => baseline1_topology(&self.vehicles, &self.rsus, length, t),
            Mode::Baseline2 => {
                let sinr = self.wideband_v2i_sinr_db();
                baseline2_topology(
                    &self.vehicles,
                    &self.rsus,
                    &sinr,
                    self.config.offload_threshold_db,
                    self.config.relay_range_m,
                    length,
                    t,
                )
            }
        };
        if let Err(e) = topo.validate(&self.vehicles, &self.rsus) {
            panic!("policy produced an inconsistent topology: {e}");
        }
        self.node_flows.clear();
        for (i, f) in self.flows.iter_mut().enumerate() {
            let node = topo.serving[&f.id];
            if node != f.serving {
                // a new transmitter cannot chase-combine with the old one
                f.harq = None;
                f.serving = node;
            }
            self.node_flows.entry(node).or_default().push(i);
        }
        let clustered: Vec<u32> = topo.clusters.iter().flatten().copied().collect();
        let per_km = topo.leader_count() as f64 / (length / 1000.0);
        self.collector.record_epoch(t, per_km, &clustered);
        if self.collector.measuring(t) {
            self.collector.warnings.add(&topo.warnings);
        }
        if self.config.dump_topology {
            self.topology_log.extend(topo.rows(&self.vehicles));
        }
        self.topology = topo;
    }

    /// Scheduling view of a link: large-scale signal gain and the expected
    /// noise plus interference per PRB, with interferers weighted by their
    /// last-TTI utilisation.
    fn link_estimate(&mut self, node: NodeId, rx: NodeId) -> (f64, f64) {
        let gain = self.large_scale_gain(node, rx);
        let pool = f64::from(self.config.n_prb);
        let band = band_of(node);
        let active: Vec<(NodeId, f64)> = self
            .utilisation
            .iter()
            .filter(|(&j, &u)| j != node && j != rx && u > 0.0 && band_of(j) == band)
            .map(|(&j, &u)| (j, u))
            .collect();
        let mut interference = 0.0;
        for (j, u) in active {
            interference += u * self.tx_power_mw(j, u * pool) * self.large_scale_gain(j, rx);
        }
        (gain, self.noise_mw + interference)
    }

    /// Advance the network by one TTI.
    pub fn step(&mut self) -> StepTrace {
        let t = self.clock_tti;
        let n_prb = self.config.n_prb as usize;
        let mut trace = StepTrace {
            tti: t,
            ..Default::default()
        };

        // (1) mobility
        advance_positions(&mut self.vehicles, TTI_S, self.config.highway_length_m);

        // (2) arrivals, enqueued before service
        for f in &mut self.flows {
            for p in generate_arrivals(t, f.id) {
                trace.arrived_bits += p.size_bits;
                f.queue.enqueue(p);
            }
        }

        // (3) fast fading is drawn on demand, per PRB actually transmitted
        // (4) topology
        if t.is_multiple_of(self.config.reslice_period_tti) {
            self.reslice();
            trace.resliced = true;
        }

        // (5) PF per serving node, retransmissions first
        let mut scheduled: Vec<Scheduled> = Vec::new();
        let mut occupancy: [Vec<Vec<NodeId>>; 2] =
            [vec![Vec::new(); n_prb], vec![Vec::new(); n_prb]];
        let mut used_by_node: Vec<(NodeId, u32)> = Vec::new();
        let nodes: Vec<(NodeId, Vec<usize>)> = self
            .node_flows
            .iter()
            .map(|(&n, f)| (n, f.clone()))
            .collect();
        for (node, members) in nodes {
            let mut remaining = self.config.n_prb;
            let mut node_tbs: Vec<(usize, TransportBlock)> = Vec::new();
            for &fi in &members {
                if let Some(h) = &self.flows[fi].harq {
                    if h.n_prb <= remaining {
                        remaining -= h.n_prb;
                        node_tbs.push((fi, TransportBlock::Retransmission(h.clone())));
                    }
                }
            }
            let candidates: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&fi| {
                    self.flows[fi].harq.is_none() && self.flows[fi].queue.total_bits() > 0
                })
                .collect();
            if remaining > 0 && !candidates.is_empty() {
                let links: Vec<(f64, f64)> = candidates
                    .iter()
                    .map(|&fi| self.link_estimate(node, NodeId::Vehicle(self.flows[fi].id.vehicle)))
                    .collect();
                // A vehicle's power per PRB depends on how many PRBs it ends up
                // using, so grow the assumed count until the grant fits in it.
                let busy = self.config.n_prb - remaining;
                let mut assumed = match node {
                    NodeId::Rsu(_) => self.config.n_prb,
                    NodeId::Vehicle(_) => busy + 1,
                };
                let alloc = loop {
                    let power = self.tx_power_mw(node, f64::from(assumed));
                    let pf: Vec<PfFlow> = candidates
                        .iter()
                        .zip(&links)
                        .map(|(&fi, &(gain, denom))| PfFlow {
                            queue_bits: self.flows[fi].queue.total_bits(),
                            rate_per_prb: BITS_PER_PRB_PER_SE
                                * spectral_efficiency(
                                    mrc_geometric_gain(RX_BRANCHES) * power * gain / denom,
                                ),
                            avg: self.flows[fi].pf_avg,
                        })
                        .collect();
                    let alloc = pf_schedule(&pf, self.config.pf_beta, remaining);
                    let total = busy + alloc.iter().sum::<u32>();
                    if total <= assumed {
                        break alloc;
                    }
                    assumed = total;
                };
                for (&fi, &n) in candidates.iter().zip(&alloc) {
                    if n > 0 {
                        remaining -= n;
                        node_tbs.push((
                            fi,
                            TransportBlock::New {
                                flow: self.flows[fi].id,
                                payload_bits: 0,
                                n_prb: n,
                            },
                        ));
                    }
                }
            }
            let used = self.config.n_prb - remaining;
            used_by_node.push((node, used));
            if used == 0 {
                continue;
            }
            // contiguous block at a node-specific random offset
            let mut next = self.rng.prb.random_range(0..n_prb);
            let band_slot = usize::from(band_of(node) == Band::V2v5_9Ghz);
            for (fi, tb) in node_tbs {
                let prbs: Vec<usize> = (0..tb.n_prb() as usize)
                    .map(|k| (next + k) % n_prb)
                    .collect();
                next = (next + prbs.len()) % n_prb;
                for &p in &prbs {
                    occupancy[band_slot][p].push(node);
                }
                scheduled.push(Scheduled {
                    node,
                    flow: fi,
                    prbs,
                    tb,
                });
            }
        }

        // (6) transmission and HARQ
        let used_prbs: HashMap<NodeId, f64> = used_by_node
            .iter()
            .map(|&(n, u)| (n, f64::from(u)))
            .collect();
        let mut served = vec![0u64; self.flows.len()];
        let max_attempts = self.config.harq_max_attempts;
        for s in scheduled {
            let rx = NodeId::Vehicle(self.flows[s.flow].id.vehicle);
            let band_slot = usize::from(band_of(s.node) == Band::V2v5_9Ghz);
            let signal_mw =
                self.tx_power_mw(s.node, used_prbs[&s.node]) * self.large_scale_gain(s.node, rx);
            let mut interferer_gain: Vec<(NodeId, f64)> = Vec::new();
            let mut per_prb = Vec::with_capacity(s.prbs.len());
            let mut sig = [0.0; RX_BRANCHES];
            let mut intf = [0.0; RX_BRANCHES];
            for &p in &s.prbs {
                for b in 0..RX_BRANCHES {
                    sig[b] = signal_mw * self.rng.fading.sample::<f64, _>(Exp1);
                    intf[b] = 0.0;
                }
                for &j in &occupancy[band_slot][p] {
                    // half duplex: a transmitting receiver does not hear itself
                    if j == s.node || j == rx {
                        continue;
                    }
                    let g = match interferer_gain.iter().find(|(n, _)| *n == j) {
                        Some(&(_, g)) => g,
                        None => {
                            let g =
                                self.tx_power_mw(j, used_prbs[&j]) * self.large_scale_gain(j, rx);
                            interferer_gain.push((j, g));
                            g
                        }
                    };
                    for slot in intf.iter_mut() {
                        *slot += g * self.rng.fading.sample::<f64, _>(Exp1);
                    }
                }
                per_prb.push(combine_prb_sinr(&sig, &intf, self.noise_mw).expect("two branches"));
            }
            let eff = effective_sinr(&per_prb).expect("allocation has PRBs");
            let flow = &mut self.flows[s.flow];
            let tb = match s.tb {
                TransportBlock::New {
                    flow: id, n_prb, ..
                } => {
                    let payload = flow.queue.total_bits().min(rate_from_sinr(eff, n_prb));
                    if payload == 0 {
                        continue;
                    }
                    TransportBlock::New {
                        flow: id,
                        payload_bits: payload,
                        n_prb,
                    }
                }
                retx => retx,
            };
            let harq_rng = &mut self.rng.harq;
            let result = resolve_transmission(tb, eff, max_attempts, |sinr_db, thr_db| {
                transmission_outcome(sinr_db, thr_db, harq_rng)
            });
            let measuring = self.collector.measuring(t);
            if measuring {
                self.collector.transmissions += 1;
            }
            match result {
                TxResult::Acked { bits, .. } => {
                    flow.harq = None;
                    served[s.flow] += bits;
                }
                TxResult::Nacked(h) => {
                    flow.harq = Some(h);
                    if measuring {
                        self.collector.nacks += 1;
                    }
                }
                TxResult::Dropped { bits, .. } => {
                    flow.harq = None;
                    if measuring {
                        self.collector.nacks += 1;
                    }
                    for p in flow.queue.drop_bits(bits) {
                        self.collector.record_packet_end(&p);
                    }
                }
            }
        }

        // (7) departures, PF averages and samples at the end of the TTI
        let beta = self.config.pf_beta;
        for (fi, f) in self.flows.iter_mut().enumerate() {
            let bits = served[fi];
            if bits > 0 {
                for p in f.queue.serve(bits, t) {
                    self.collector.record_packet_end(&p);
                }
                self.collector
                    .record_served(t, f.id.vehicle, f.id.slice, bits);
                trace.served.push((f.id, bits));
            }
            f.pf_avg = update_pf_average(f.pf_avg, bits, beta);
            self.collector
                .sample_queue(t, f.id.slice, f.queue.total_bits());
        }
        self.utilisation = used_by_node
            .iter()
            .map(|&(n, u)| (n, f64::from(u) / n_prb as f64))
            .collect();
        trace.prbs_used = used_by_node;

        // (8) clock
        self.clock_tti += 1;
        trace
    }

    /// Close the run and produce its report.
    pub fn finish(self) -> (MetricsReport, Vec<TopologyRow>) {
        let end = self.clock_tti;
        let totals: Vec<FlowTotals> = self
            .flows
            .iter()
            .map(|f| FlowTotals {
                vehicle: f.id.vehicle,
                slice: f.id.slice,
                arrived_bits: f.queue.arrived_bits,
                departed_bits: f.queue.departed_bits,
                dropped_bits: f.queue.dropped_bits,
                residual_bits: f.queue.total_bits(),
                residual_arrivals: f.queue.packets().map(|p| p.arrival_tti).collect(),
            })
            .collect();
        (
            self.collector.finish(&self.config, end, totals),
            self.topology_log,
        )
    }
}

/// Run warm-up plus measured TTIs and return the report and any topology dump.
pub fn run_with_topology(
    config: &SimConfig,
) -> Result<(MetricsReport, Vec<TopologyRow>), SimError> {
    let mut state = NetworkState::from_config(config)?;
    for _ in 0..config.total_tti() {
        state.step();
    }
    Ok(state.finish())
}

pub fn run_simulation(config: &SimConfig) -> Result<MetricsReport, SimError> {
    run_with_topology(config).map(|(report, _)| report)
}
