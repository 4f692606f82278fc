//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 even when a criterion fails so the measured values stay visible in
//! `cargo test`; set `V2XSIM_ACCEPTANCE_STRICT=1` to turn any failure into a
//! non-zero exit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use v2xsim::mac::{pf_schedule, update_pf_average, PfFlow};
use v2xsim::mobility::Point;
use v2xsim::slicing::spectral::threshold_components;
use v2xsim::slicing::{cluster_vehicles, laplacian, similarity_matrix, spectrum, SimilarityMatrix};
use v2xsim::traffic::{generate_arrivals, update_queue, PacketQueue};
use v2xsim::{
    run_simulation, summarize, write_outputs, FlowId, Mode, Scenario, SimConfig, Slice, Summary,
};

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(id: u32, title: &str, v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {tag}  {title}: {}", v.detail);
}

// ---------------------------------------------------------------- clustering

fn union_find(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if edge(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Groups of member indices, each sorted, ordered by first member.
fn groups_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    let mut g: Vec<Vec<usize>> = by.into_values().collect();
    g.sort();
    g
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut ok = 0;
    let mut misses = Vec::new();
    for inst in 0..50 {
        let k = rng.random_range(2..=4usize);
        let spread = rng.random_range(0.5..2.0);
        let sigma = 4.0 * spread;
        // nearest points of two groups are at least 20 spreads apart
        let gap = rng.random_range(20.0..60.0) * spread + 2.0 * spread;
        // equal group sizes: the eigengap rule presumes evenly sized clusters
        let size = rng.random_range(3..=10);
        let mut pts = Vec::new();
        for g in 0..k {
            let cx = g as f64 * gap;
            let cy = rng.random_range(0.0..24.0);
            for _ in 0..size {
                let r = spread * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                pts.push(Point::new(cx + r * a.cos(), cy + r * a.sin()));
            }
        }
        let a = similarity_matrix(&pts, sigma, true);
        // brute force: components of the graph of pairs within one spread-diameter
        let labels = union_find(pts.len(), |i, j| pts[i].distance(pts[j]) <= 2.0 * spread);
        let brute = groups_of(&labels);
        let out = cluster_vehicles(&pts, sigma, true, &mut ChaCha8Rng::seed_from_u64(inst));
        let thresholded = threshold_components(&a, (-1.0f64).exp());
        let sorted = |c: &[Vec<usize>]| {
            let mut c = c.to_vec();
            c.sort();
            c
        };
        if out.k == k
            && brute.len() == k
            && sorted(&out.clusters) == brute
            && sorted(&thresholded) == brute
        {
            ok += 1;
        } else {
            misses.push(inst);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        ok == 50 && secs < 10.0,
        format!("{ok}/50 instances exact, {secs:.2} s (misses {misses:?})"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let (mut worst_row, mut min_eig) = (0.0f64, f64::INFINITY);
    let mut count_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=40);
        // sparse symmetric weights in (0, 1], unit diagonal
        let density = rng.random_range(0.0..0.3);
        let mut w = DMatrix::identity(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < density {
                    let v = 1.0 - rng.random::<f64>();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        let a = SimilarityMatrix::from_matrix(w);
        let l = laplacian(&a);
        for r in 0..n {
            worst_row = worst_row.max(l.row(r).sum().abs());
        }
        let eig = spectrum(&l).expect("eigensolver converges");
        min_eig = min_eig.min(eig.values[0]);
        let zeros = eig.values.iter().filter(|&&v| v < 1e-8).count();
        let comps = {
            let labels = union_find(n, |i, j| a.get(i, j) > 0.0);
            groups_of(&labels).len()
        };
        if zeros != comps {
            count_mismatch += 1;
        }
    }
    verdict(
        worst_row < 1e-9 && min_eig > -1e-8 && count_mismatch == 0,
        format!(
            "max |row sum| {worst_row:.2e}, min eigenvalue {min_eig:.2e}, {count_mismatch}/1000 zero-count mismatches"
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut exact = 0;
    for _ in 0..100 {
        let flow = FlowId {
            vehicle: rng.random_range(0..100),
            slice: if rng.random::<bool>() {
                Slice::Infotainment
            } else {
                Slice::Autonomous
            },
        };
        let len = rng.random_range(100..2000u64);
        let max_cap = rng.random_range(1..3000u64);
        let mut q = PacketQueue::new();
        let mut scalar: i64 = 0;
        let mut same = true;
        for t in 0..len {
            let arrivals = generate_arrivals(t, flow);
            let a: i64 = arrivals.iter().map(|p| p.size_bits as i64).sum();
            let r = rng.random_range(0..=max_cap) as i64;
            // arrivals join before service within the TTI
            let served = r.min(scalar + a);
            update_queue(&mut q, served as u64, arrivals, t);
            scalar = (scalar + a - r).max(0);
            same &= q.total_bits() as i64 == scalar;
        }
        if same {
            exact += 1;
        }
    }
    verdict(exact == 100, format!("{exact}/100 traces bit-exact"))
}

// --------------------------------------------------------------- simulations

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Arm {
    Proposed5,
    Proposed50,
    Baseline2,
    Baseline1,
}

impl Arm {
    const ALL: [Arm; 4] = [
        Arm::Proposed5,
        Arm::Proposed50,
        Arm::Baseline2,
        Arm::Baseline1,
    ];

    fn config(self, scenario: Scenario, seed: u64) -> SimConfig {
        let (mode, sigma) = match self {
            Arm::Proposed5 => (Mode::Proposed, 5.0),
            Arm::Proposed50 => (Mode::Proposed, 50.0),
            Arm::Baseline2 => (Mode::Baseline2, 5.0),
            Arm::Baseline1 => (Mode::Baseline1, 5.0),
        };
        SimConfig {
            scenario,
            mode,
            sigma_m: sigma,
            seed,
            ..SimConfig::default()
        }
    }
}

type Runs = BTreeMap<(Scenario, Arm, u64), Summary>;

fn run_grid() -> (Runs, f64) {
    let mut cells = Vec::new();
    for sc in Scenario::ALL {
        for arm in Arm::ALL {
            for seed in 1..=SEEDS {
                cells.push((sc, arm, seed));
            }
        }
    }
    let started = Instant::now();
    let dense_secs = std::sync::Mutex::new(0.0f64);
    let runs: Runs = cells
        .par_iter()
        .map(|&(sc, arm, seed)| {
            let t = Instant::now();
            let report = run_simulation(&arm.config(sc, seed)).expect("default config is valid");
            if sc == Scenario::Dense && matches!(arm, Arm::Proposed5 | Arm::Proposed50) {
                *dense_secs.lock().unwrap() += t.elapsed().as_secs_f64();
            }
            ((sc, arm, seed), summarize(&report))
        })
        .collect();
    eprintln!(
        "simulation grid: {} runs in {:.0} s",
        runs.len(),
        started.elapsed().as_secs_f64()
    );
    (runs, dense_secs.into_inner().unwrap())
}

fn get(runs: &Runs, sc: Scenario, arm: Arm, seed: u64) -> &Summary {
    &runs[&(sc, arm, seed)]
}

fn mean_over_seeds(runs: &Runs, sc: Scenario, arm: Arm, f: impl Fn(&Summary) -> f64) -> f64 {
    (1..=SEEDS).map(|s| f(get(runs, sc, arm, s))).sum::<f64>() / SEEDS as f64
}

fn criterion_4(runs: &Runs, dense_secs: f64) -> Verdict {
    let sc = Scenario::Dense;
    let narrow = mean_over_seeds(runs, sc, Arm::Proposed5, |s| s.leaders_per_km);
    let wide = mean_over_seeds(runs, sc, Arm::Proposed50, |s| s.leaders_per_km);
    let ordered = (1..=SEEDS)
        .filter(|&s| {
            get(runs, sc, Arm::Proposed5, s).leaders_per_km
                >= get(runs, sc, Arm::Proposed50, s).leaders_per_km
        })
        .count();
    verdict(
        (15.0..=29.0).contains(&narrow)
            && (3.0..=9.0).contains(&wide)
            && ordered == SEEDS as usize
            && dense_secs < 600.0,
        format!(
            "σ=5 {narrow:.2}/km, σ=50 {wide:.2}/km, σ5 ≥ σ50 in {ordered}/{SEEDS} seeds, {dense_secs:.0} s of runs"
        ),
    )
}

fn criterion_5(runs: &Runs) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for sc in Scenario::ALL {
        let lat = |arm, seed| get(runs, sc, arm, seed).autonomous.mean_latency_ms;
        let held = (1..=SEEDS)
            .filter(|&s| {
                let (p5, p50, b2, b1) = (
                    lat(Arm::Proposed5, s),
                    lat(Arm::Proposed50, s),
                    lat(Arm::Baseline2, s),
                    lat(Arm::Baseline1, s),
                );
                p5 <= p50 && p50 < b2 && b2 <= b1
            })
            .count();
        pass &= held >= 9;
        let m = |arm| mean_over_seeds(runs, sc, arm, |s| s.autonomous.mean_latency_ms);
        parts.push(format!(
            "{sc:?} {held}/{SEEDS} (means ms p5 {:.3} p50 {:.3} b2 {:.3} b1 {:.3})",
            m(Arm::Proposed5),
            m(Arm::Proposed50),
            m(Arm::Baseline2),
            m(Arm::Baseline1)
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_6(runs: &Runs) -> Verdict {
    let sc = Scenario::Sparse;
    let lat = mean_over_seeds(runs, sc, Arm::Proposed5, |s| s.autonomous.mean_latency_ms);
    let worst = (1..=SEEDS)
        .map(|s| {
            get(runs, sc, Arm::Proposed5, s)
                .autonomous
                .frac_within_100ms
        })
        .fold(f64::INFINITY, f64::min);
    verdict(
        lat <= 2.0 && worst >= 0.95,
        format!(
            "mean latency {lat:.3} ms, worst-seed fraction within 100 ms {:.4}",
            worst
        ),
    )
}

fn criterion_7(runs: &Runs) -> Verdict {
    let sparse = mean_over_seeds(runs, Scenario::Sparse, Arm::Proposed5, |s| {
        s.autonomous.frac_target_throughput_clustered
    });
    let dense_p = mean_over_seeds(runs, Scenario::Dense, Arm::Proposed5, |s| {
        s.autonomous.frac_target_throughput
    });
    let dense_b1 = mean_over_seeds(runs, Scenario::Dense, Arm::Baseline1, |s| {
        s.autonomous.frac_target_throughput
    });
    let gap = 100.0 * (dense_p - dense_b1);
    verdict(
        sparse >= 0.97 && gap >= 40.0,
        format!(
            "sparse clustered at 128 kbps {:.2}%; dense proposed {:.2}% vs baseline1 {:.2}% (gap {gap:.1} pp)",
            100.0 * sparse,
            100.0 * dense_p,
            100.0 * dense_b1
        ),
    )
}

fn criterion_8(runs: &Runs) -> Verdict {
    let frac = mean_over_seeds(runs, Scenario::Sparse, Arm::Proposed5, |s| {
        s.autonomous.frac_queue_le_1_packet
    });
    verdict(
        frac >= 0.95,
        format!("{:.3}% of safety queue samples ≤ 1 packet", 100.0 * frac),
    )
}

fn criterion_9(runs: &Runs) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for sc in Scenario::ALL {
        let info = |arm, seed| {
            let s = &get(runs, sc, arm, seed).infotainment;
            (s.mean_throughput_bps, s.mean_latency_ms)
        };
        let held = (1..=SEEDS)
            .filter(|&s| {
                let (tp_p, lat_p) = info(Arm::Proposed5, s);
                let (tp_b1, lat_b1) = info(Arm::Baseline1, s);
                let (tp_b2, lat_b2) = info(Arm::Baseline2, s);
                tp_b2 >= tp_p && tp_p >= tp_b1 && lat_b1 >= lat_p && lat_p >= lat_b2
            })
            .count();
        let rel = |f: fn(&Summary) -> f64| {
            let a = mean_over_seeds(runs, sc, Arm::Proposed5, f);
            let b = mean_over_seeds(runs, sc, Arm::Proposed50, f);
            (a - b).abs() / a.abs().max(b.abs())
        };
        let d_tp = rel(|s| s.infotainment.mean_throughput_bps);
        let d_lat = rel(|s| s.infotainment.mean_latency_ms);
        pass &= held >= 8 && d_tp < 0.10 && d_lat < 0.10;
        let m = |arm, f: fn(&Summary) -> f64| mean_over_seeds(runs, sc, arm, f);
        let tp = |s: &Summary| s.infotainment.mean_throughput_bps / 1e3;
        let lat = |s: &Summary| s.infotainment.mean_latency_ms;
        parts.push(format!(
            "{sc:?} ordering {held}/{SEEDS}, σ spread tp {:.1}% lat {:.1}% (kbps b2 {:.0} p {:.0} b1 {:.0}; ms b1 {:.1} p {:.1} b2 {:.1})",
            100.0 * d_tp,
            100.0 * d_lat,
            m(Arm::Baseline2, tp),
            m(Arm::Proposed5, tp),
            m(Arm::Baseline1, tp),
            m(Arm::Baseline1, lat),
            m(Arm::Proposed5, lat),
            m(Arm::Baseline2, lat)
        ));
    }
    verdict(pass, parts.join("; "))
}

// ----------------------------------------------------------------- fairness

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir readable") {
        let path = entry.expect("dir entry").path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, fs::read(&path).expect("output file readable"));
    }
    out
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let beta = 0.01;
    let mut avg = [1.0f64; 2];
    let mut prbs = [0u64; 2];
    for _ in 0..5000 {
        // identical statistics: unit-mean exponential fading on a common mean rate
        let rates: Vec<f64> = (0..2)
            .map(|_| (600.0 * -(1.0 - rng.random::<f64>()).ln()).min(1080.0))
            .collect();
        let flows: Vec<PfFlow> = (0..2)
            .map(|i| PfFlow {
                queue_bits: u64::MAX,
                rate_per_prb: rates[i],
                avg: avg[i],
            })
            .collect();
        let alloc = pf_schedule(&flows, beta, 50);
        for i in 0..2 {
            prbs[i] += u64::from(alloc[i]);
            avg[i] = update_pf_average(avg[i], (f64::from(alloc[i]) * rates[i]) as u64, beta);
        }
    }
    let share = prbs[0] as f64 / (prbs[0] + prbs[1]) as f64;
    let fair = (share - 0.5).abs() <= 0.05 * 0.5;

    let cfg = SimConfig {
        scenario: Scenario::Sparse,
        seed: 7,
        duration_tti: 1000,
        ..SimConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let trees: Vec<_> = dirs
        .iter()
        .map(|d| {
            let report = run_simulation(&cfg).expect("valid config");
            write_outputs(&report, d.path()).expect("outputs written");
            read_tree(d.path())
        })
        .collect();
    let identical = !trees[0].is_empty() && trees[0] == trees[1];
    verdict(
        fair && identical,
        format!(
            "PRB shares {:.4}/{:.4} over 5000 TTIs; repeated run {} ({} files)",
            share,
            1.0 - share,
            if identical {
                "byte-identical"
            } else {
                "DIFFERS"
            },
            trees[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts: Vec<(u32, &str, Verdict)> = vec![
        (1, "clustering oracle", criterion_1()),
        (2, "spectral invariants", criterion_2()),
        (3, "queue recursion oracle", criterion_3()),
    ];
    for (id, title, v) in &verdicts {
        report(*id, title, v);
    }
    let (runs, dense_secs) = run_grid();
    let sim = [
        (4, "leader density", criterion_4(&runs, dense_secs)),
        (5, "safety latency ordering", criterion_5(&runs)),
        (6, "sparse latency level", criterion_6(&runs)),
        (7, "safety throughput", criterion_7(&runs)),
        (8, "sparse queue length", criterion_8(&runs)),
        (9, "infotainment ordering", criterion_9(&runs)),
        (10, "scheduler fairness and determinism", criterion_10()),
    ];
    for (id, title, v) in sim {
        report(id, title, &v);
        verdicts.push((id, title, v));
    }
    let passed = verdicts.iter().filter(|(_, _, v)| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    let strict = std::env::var("V2XSIM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < verdicts.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
