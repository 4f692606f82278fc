//! Per-slice samples, empirical distributions, summaries and CSV export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::slicing::TopologyWarnings;
use crate::traffic::{packet_latency, Packet, Slice};

/// Safety delivery budget.
pub const LATENCY_BUDGET_MS: u64 = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("distribution of an empty sample set")]
    Empty,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Empirical CDF at each distinct sample value; the last probability is 1.
pub fn cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => out.push((v, p)),
        }
    }
    Ok(out)
}

/// Exceedance probability `P(X > v)` at each distinct sample value.
pub fn ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    Ok(cdf(samples)?
        .into_iter()
        .map(|(v, p)| (v, 1.0 - p))
        .collect())
}

/// CDF of an integer histogram (value to count).
pub fn cdf_from_histogram(hist: &BTreeMap<u64, u64>) -> Result<Vec<(f64, f64)>, MetricsError> {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let mut acc = 0;
    Ok(hist
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&v, &c)| {
            acc += c;
            (v as f64, acc as f64 / total as f64)
        })
        .collect())
}

fn histogram_mean(hist: &BTreeMap<u64, u64>) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return f64::NAN;
    }
    hist.iter().map(|(&v, &c)| v as f64 * c as f64).sum::<f64>() / total as f64
}

/// Smallest value whose cumulative probability reaches `q`.
fn histogram_quantile(hist: &BTreeMap<u64, u64>, q: f64) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return f64::NAN;
    }
    let need = (q * total as f64).ceil().max(1.0) as u64;
    let mut acc = 0;
    for (&v, &c) in hist {
        acc += c;
        if acc >= need {
            return v as f64;
        }
    }
    unreachable!("cumulative count reaches the total")
}

fn histogram_fraction_at_most(hist: &BTreeMap<u64, u64>, limit: u64) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return f64::NAN;
    }
    hist.range(..=limit).map(|(_, &c)| c).sum::<u64>() as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleThroughput {
    pub vehicle: u32,
    /// Bits delivered inside the measurement window.
    pub served_bits: u64,
    pub bps: f64,
    /// Safety-only vehicle that sat in a cluster for most measured epochs.
    pub clustered: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub latency_hist_ms: BTreeMap<u64, u64>,
    pub delivered_packets: u64,
    pub failed_packets: u64,
    /// Packets still queued at the end and already past the latency budget.
    pub late_undelivered: u64,
    pub queue_hist_packets: BTreeMap<u64, u64>,
    pub queue_hist_bits: BTreeMap<u64, u64>,
    pub throughput: Vec<VehicleThroughput>,
    pub arrived_bits: u64,
    pub departed_bits: u64,
    pub dropped_bits: u64,
    pub residual_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: SimConfig,
    pub measured_seconds: f64,
    pub autonomous: SliceMetrics,
    pub infotainment: SliceMetrics,
    /// Leaders per km at each re-slice inside the measurement window.
    pub leaders_per_km: Vec<f64>,
    pub warnings: TopologyWarnings,
    pub transmissions: u64,
    pub nacks: u64,
}

impl MetricsReport {
    pub fn slice(&self, slice: Slice) -> &SliceMetrics {
        match slice {
            Slice::Autonomous => &self.autonomous,
            Slice::Infotainment => &self.infotainment,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Accumulates samples during a run; only the measurement window counts.
#[derive(Debug, Clone)]
pub struct Collector {
    warmup_tti: u64,
    autonomous: SliceMetrics,
    infotainment: SliceMetrics,
    served: [Vec<u64>; 2],
    clustered_epochs: Vec<u32>,
    measured_epochs: u32,
    leaders_per_km: Vec<f64>,
    pub warnings: TopologyWarnings,
    pub transmissions: u64,
    pub nacks: u64,
}

fn slot(slice: Slice) -> usize {
    match slice {
        Slice::Autonomous => 0,
        Slice::Infotainment => 1,
    }
}

impl Collector {
    pub fn new(warmup_tti: u64, n_vehicles: usize) -> Self {
        Collector {
            warmup_tti,
            autonomous: SliceMetrics::default(),
            infotainment: SliceMetrics::default(),
            served: [vec![0; n_vehicles], vec![0; n_vehicles]],
            clustered_epochs: vec![0; n_vehicles],
            measured_epochs: 0,
            leaders_per_km: Vec::new(),
            warnings: TopologyWarnings::default(),
            transmissions: 0,
            nacks: 0,
        }
    }

    pub fn measuring(&self, tti: u64) -> bool {
        tti >= self.warmup_tti
    }

    fn slice_mut(&mut self, slice: Slice) -> &mut SliceMetrics {
        match slice {
            Slice::Autonomous => &mut self.autonomous,
            Slice::Infotainment => &mut self.infotainment,
        }
    }

    /// A packet whose last bit left the queue, or that was lost to a HARQ drop.
    pub fn record_packet_end(&mut self, packet: &Packet) {
        if packet.arrival_tti < self.warmup_tti {
            return;
        }
        let m = self.slice_mut(packet.flow.slice);
        match packet_latency(packet) {
            Ok(l) => {
                m.delivered_packets += 1;
                *m.latency_hist_ms.entry(l).or_insert(0) += 1;
            }
            Err(_) => m.failed_packets += 1,
        }
    }

    pub fn record_served(&mut self, tti: u64, vehicle: u32, slice: Slice, bits: u64) {
        if self.measuring(tti) {
            self.served[slot(slice)][vehicle as usize] += bits;
        }
    }

    pub fn sample_queue(&mut self, tti: u64, slice: Slice, bits: u64) {
        if !self.measuring(tti) {
            return;
        }
        let packets = bits.div_ceil(slice.packet_bits());
        let m = self.slice_mut(slice);
        *m.queue_hist_packets.entry(packets).or_insert(0) += 1;
        *m.queue_hist_bits.entry(bits).or_insert(0) += 1;
    }

    pub fn record_epoch(&mut self, tti: u64, leaders_per_km: f64, clustered: &[u32]) {
        if !self.measuring(tti) {
            return;
        }
        self.leaders_per_km.push(leaders_per_km);
        self.measured_epochs += 1;
        for &v in clustered {
            self.clustered_epochs[v as usize] += 1;
        }
    }

    /// Close the run. `flows` lists `(vehicle, slice, arrived, departed, dropped,
    /// residual bits, residual packet arrival TTIs)` per flow.
    pub fn finish(
        mut self,
        config: &SimConfig,
        end_tti: u64,
        flows: impl IntoIterator<Item = FlowTotals>,
    ) -> MetricsReport {
        let seconds = config.measured_seconds();
        for f in flows {
            let clustered = f.slice == Slice::Autonomous
                && self.measured_epochs > 0
                && 2 * self.clustered_epochs[f.vehicle as usize] >= self.measured_epochs;
            let served_bits = self.served[slot(f.slice)][f.vehicle as usize];
            let warmup = self.warmup_tti;
            let m = self.slice_mut(f.slice);
            m.arrived_bits += f.arrived_bits;
            m.departed_bits += f.departed_bits;
            m.dropped_bits += f.dropped_bits;
            m.residual_bits += f.residual_bits;
            m.late_undelivered += f
                .residual_arrivals
                .iter()
                .filter(|&&a| a >= warmup && end_tti - a > LATENCY_BUDGET_MS)
                .count() as u64;
            m.throughput.push(VehicleThroughput {
                vehicle: f.vehicle,
                served_bits,
                bps: served_bits as f64 / seconds,
                clustered,
            });
        }
        for m in [&mut self.autonomous, &mut self.infotainment] {
            m.throughput.sort_by_key(|t| t.vehicle);
        }
        MetricsReport {
            config: config.clone(),
            measured_seconds: seconds,
            autonomous: self.autonomous,
            infotainment: self.infotainment,
            leaders_per_km: self.leaders_per_km,
            warnings: self.warnings,
            transmissions: self.transmissions,
            nacks: self.nacks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTotals {
    pub vehicle: u32,
    pub slice: Slice,
    pub arrived_bits: u64,
    pub departed_bits: u64,
    pub dropped_bits: u64,
    pub residual_bits: u64,
    pub residual_arrivals: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub mean_queue_packets: f64,
    pub frac_queue_le_1_packet: f64,
    pub mean_throughput_bps: f64,
    /// Vehicles delivering the slice's offered rate (128 kbps safety, 1 Mbps video).
    pub frac_target_throughput: f64,
    pub frac_target_throughput_clustered: f64,
    pub frac_within_100ms: f64,
    pub failure_ratio: f64,
    pub reliability: f64,
}

pub const SLICE_SUMMARY_COLUMNS: [&str; 10] = [
    "mean_latency_ms",
    "p99_latency_ms",
    "mean_queue_packets",
    "frac_queue_le_1_packet",
    "mean_throughput_bps",
    "frac_target_throughput",
    "frac_target_throughput_clustered",
    "frac_within_100ms",
    "failure_ratio",
    "reliability",
];

impl SliceSummary {
    fn values(&self) -> [f64; 10] {
        [
            self.mean_latency_ms,
            self.p99_latency_ms,
            self.mean_queue_packets,
            self.frac_queue_le_1_packet,
            self.mean_throughput_bps,
            self.frac_target_throughput,
            self.frac_target_throughput_clustered,
            self.frac_within_100ms,
            self.failure_ratio,
            self.reliability,
        ]
    }
}

pub fn summarize_slice(m: &SliceMetrics, slice: Slice, seconds: f64) -> SliceSummary {
    // one packet of slack: a packet arriving in the closing TTIs cannot leave in time
    let meets = |t: &&VehicleThroughput| {
        (t.served_bits + slice.packet_bits()) as f64 >= slice.offered_bps() * seconds
    };
    let frac = |pred: &dyn Fn(&&VehicleThroughput) -> bool| {
        let pool: Vec<&VehicleThroughput> = m.throughput.iter().filter(pred).collect();
        if pool.is_empty() {
            f64::NAN
        } else {
            pool.iter().filter(|t| meets(t)).count() as f64 / pool.len() as f64
        }
    };
    let mean_tp = if m.throughput.is_empty() {
        f64::NAN
    } else {
        m.throughput.iter().map(|t| t.bps).sum::<f64>() / m.throughput.len() as f64
    };
    let finished = m.delivered_packets + m.failed_packets;
    let failure_ratio = if finished == 0 {
        0.0
    } else {
        m.failed_packets as f64 / finished as f64
    };
    let judged = finished + m.late_undelivered;
    let within: u64 = m
        .latency_hist_ms
        .range(..=LATENCY_BUDGET_MS)
        .map(|(_, &c)| c)
        .sum();
    SliceSummary {
        mean_latency_ms: histogram_mean(&m.latency_hist_ms),
        p99_latency_ms: histogram_quantile(&m.latency_hist_ms, 0.99),
        mean_queue_packets: histogram_mean(&m.queue_hist_packets),
        frac_queue_le_1_packet: histogram_fraction_at_most(&m.queue_hist_packets, 1),
        mean_throughput_bps: mean_tp,
        frac_target_throughput: frac(&|_| true),
        frac_target_throughput_clustered: frac(&|t| t.clustered),
        frac_within_100ms: if judged == 0 {
            f64::NAN
        } else {
            within as f64 / judged as f64
        },
        failure_ratio,
        reliability: 1.0 - failure_ratio,
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario_id: u8,
    pub mode: String,
    pub sigma_m: f64,
    pub seed: u64,
    pub leaders_per_km: f64,
    pub autonomous: SliceSummary,
    pub infotainment: SliceSummary,
}

impl Summary {
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["scenario_id", "mode", "sigma_m", "seed", "leaders_per_km"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for slice in Slice::ALL {
            h.extend(
                SLICE_SUMMARY_COLUMNS
                    .iter()
                    .map(|c| format!("{}_{c}", slice.as_str())),
            );
        }
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.scenario_id.to_string(),
            self.mode.clone(),
            self.sigma_m.to_string(),
            self.seed.to_string(),
            self.leaders_per_km.to_string(),
        ];
        for s in [&self.autonomous, &self.infotainment] {
            r.extend(s.values().iter().map(|v| v.to_string()));
        }
        r
    }

    pub fn slice(&self, slice: Slice) -> &SliceSummary {
        match slice {
            Slice::Autonomous => &self.autonomous,
            Slice::Infotainment => &self.infotainment,
        }
    }
}

pub fn summarize(report: &MetricsReport) -> Summary {
    let leaders = if report.leaders_per_km.is_empty() {
        0.0
    } else {
        report.leaders_per_km.iter().sum::<f64>() / report.leaders_per_km.len() as f64
    };
    Summary {
        scenario_id: report.config.scenario.id(),
        mode: report.config.mode.as_str().to_string(),
        sigma_m: report.config.sigma_m,
        seed: report.config.seed,
        leaders_per_km: leaders,
        autonomous: summarize_slice(
            &report.autonomous,
            Slice::Autonomous,
            report.measured_seconds,
        ),
        infotainment: summarize_slice(
            &report.infotainment,
            Slice::Infotainment,
            report.measured_seconds,
        ),
    }
}

fn write_pairs(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path).map_err(|source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(header).map_err(csv_err)?;
    for (v, p) in rows {
        w.write_record([v.to_string(), p.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `summaries` as `summary.csv` at `path`.
pub fn write_summary_csv(path: &Path, summaries: &[Summary]) -> Result<(), MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(Summary::csv_header()).map_err(csv_err)?;
    for s in summaries {
        w.write_record(s.csv_record()).map_err(csv_err)?;
    }
    w.flush().map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Distribution CSVs for both slices plus `summary.csv` and `report.json`.
pub fn write_outputs(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let or_empty = |r: Result<Vec<(f64, f64)>, MetricsError>| r.unwrap_or_default();
    for slice in Slice::ALL {
        let m = report.slice(slice);
        let name = slice.as_str();
        let bps: Vec<f64> = m.throughput.iter().map(|t| t.bps).collect();
        let files: [(String, [&str; 2], Vec<(f64, f64)>); 4] = [
            (
                format!("cdf_throughput_{name}.csv"),
                ["value_bps", "prob"],
                or_empty(cdf(&bps)),
            ),
            (
                format!("ccdf_latency_{name}.csv"),
                ["latency_ms", "exceed_prob"],
                or_empty(cdf_from_histogram(&m.latency_hist_ms))
                    .into_iter()
                    .map(|(v, p)| (v, 1.0 - p))
                    .collect(),
            ),
            (
                format!("cdf_queuelen_{name}.csv"),
                ["queue_packets", "prob"],
                or_empty(cdf_from_histogram(&m.queue_hist_packets)),
            ),
            (
                format!("cdf_queuelen_bits_{name}.csv"),
                ["queue_bits", "prob"],
                or_empty(cdf_from_histogram(&m.queue_hist_bits)),
            ),
        ];
        for (file, header, rows) in files {
            let path = dir.join(file);
            write_pairs(&path, header, &rows)?;
            written.push(path);
        }
    }
    let path = dir.join("summary.csv");
    write_summary_csv(&path, &[summarize(report)])?;
    written.push(path);
    let path = dir.join("report.json");
    File::create(&path)
        .and_then(|mut f| f.write_all(report.to_json().as_bytes()))
        .map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}
