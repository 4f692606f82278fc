//! Slice-leader election: one candidate per cluster, closest to its centroid.

use crate::mobility::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub id: u32,
    pub pos: Point,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeaderOutcome {
    /// Member ids per led cluster, after merging.
    pub clusters: Vec<Vec<u32>>,
    /// `leaders[i]` leads `clusters[i]`.
    pub leaders: Vec<u32>,
    /// Members that found no leader at all (no candidates in scope).
    pub orphans: Vec<u32>,
    /// Clusters folded into a neighbour for lack of candidates.
    pub merges: u32,
}

pub fn centroid(members: &[Member]) -> Point {
    let n = members.len() as f64;
    let (sx, sy) = members
        .iter()
        .fold((0.0, 0.0), |(x, y), m| (x + m.pos.x, y + m.pos.y));
    Point::new(sx / n, sy / n)
}

/// Clusters are visited largest first (ties keep input order). Each takes the
/// closest unused candidate to its centroid, ties to the lowest id. Members of
/// clusters left without a candidate join the nearest elected leader.
pub fn select_slice_leaders(clusters: &[Vec<Member>], candidates: &[Member]) -> LeaderOutcome {
    let mut order: Vec<usize> = (0..clusters.len())
        .filter(|&i| !clusters[i].is_empty())
        .collect();
    order.sort_by_key(|&i| std::cmp::Reverse(clusters[i].len()));
    let centroids: Vec<Point> = clusters
        .iter()
        .map(|c| {
            if c.is_empty() {
                Point::new(0.0, 0.0)
            } else {
                centroid(c)
            }
        })
        .collect();

    let mut used = vec![false; candidates.len()];
    let mut led: Vec<(usize, u32, usize)> = Vec::new();
    let mut unled: Vec<usize> = Vec::new();
    for &ci in &order {
        let mut best: Option<(f64, u32, usize)> = None;
        for (k, cand) in candidates.iter().enumerate() {
            if used[k] {
                continue;
            }
            let d = cand.pos.distance(centroids[ci]);
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d < bd || (d == bd && cand.id < bid),
            };
            if better {
                best = Some((d, cand.id, k));
            }
        }
        match best {
            Some((_, id, k)) => {
                used[k] = true;
                led.push((ci, id, k));
            }
            None => unled.push(ci),
        }
    }

    let mut out = LeaderOutcome::default();
    let mut groups: Vec<Vec<u32>> = led
        .iter()
        .map(|&(ci, _, _)| clusters[ci].iter().map(|m| m.id).collect())
        .collect();
    for ci in unled {
        if led.is_empty() {
            out.orphans.extend(clusters[ci].iter().map(|m| m.id));
            continue;
        }
        // members of a leaderless cluster each join the nearest elected leader
        for m in &clusters[ci] {
            let target = (0..led.len())
                .min_by(|&a, &b| {
                    let da = candidates[led[a].2].pos.distance(m.pos);
                    let db = candidates[led[b].2].pos.distance(m.pos);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("led clusters exist");
            groups[target].push(m.id);
        }
        out.merges += 1;
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    out.orphans.sort_unstable();
    out.leaders = led.iter().map(|&(_, id, _)| id).collect();
    out.clusters = groups;
    out
}
