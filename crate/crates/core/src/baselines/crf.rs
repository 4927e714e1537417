use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ate;
use crate::geom::Point2;
use crate::map::OccupancyMap;
use crate::sim::{OdometrySample, Pose, Trajectory};

/// Free-space nodes on a regular grid, connected to their 8 neighbours when
/// the straight segment between them is obstacle-free.
#[derive(Clone, Debug)]
pub struct LocationGraph {
    pub nodes: Vec<Point2>,
    /// Sorted neighbour lists, excluding the node itself.
    pub neighbors: Vec<Vec<usize>>,
    pub edge_length: f64,
}

impl LocationGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nearest(&self, p: Point2) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.dist_sq(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Allowed predecessors of `j`: its neighbours and itself, ascending.
    fn predecessors(&self) -> Vec<Vec<usize>> {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(j, nb)| {
                let mut p = nb.clone();
                p.push(j);
                p.sort_unstable();
                p
            })
            .collect()
    }
}

/// Builds the location graph and keeps its largest connected component.
pub fn build_graph(map: &OccupancyMap, edge_length: f64) -> Result<LocationGraph> {
    if !(edge_length >= map.resolution()) {
        return Err(Error::Config(format!(
            "edge length {edge_length} is below the map resolution {}",
            map.resolution()
        )));
    }
    let o = map.origin();
    let nx = ((map.width() as f64 * map.resolution()) / edge_length).floor() as usize;
    let ny = ((map.height() as f64 * map.resolution()) / edge_length).floor() as usize;
    let mut id = vec![None; nx * ny];
    let mut nodes = Vec::new();
    for gy in 0..ny {
        for gx in 0..nx {
            let p = Point2::new(o.x + (gx as f64 + 0.5) * edge_length, o.y + (gy as f64 + 0.5) * edge_length);
            if map.is_free(p) {
                id[gy * nx + gx] = Some(nodes.len());
                nodes.push(p);
            }
        }
    }
    if nodes.is_empty() {
        return Err(Error::NoFreeSpace(format!("no graph nodes at edge length {edge_length}")));
    }
    let mut neighbors = vec![Vec::new(); nodes.len()];
    for gy in 0..ny as i64 {
        for gx in 0..nx as i64 {
            let Some(a) = id[(gy as usize) * nx + gx as usize] else { continue };
            for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (qx, qy) = (gx + dx, gy + dy);
                if qx < 0 || qy < 0 || qx >= nx as i64 || qy >= ny as i64 {
                    continue;
                }
                let Some(b) = id[qy as usize * nx + qx as usize] else { continue };
                if nodes[a].dist(nodes[b]) <= 1.5 * edge_length && map.segment_is_free(nodes[a], nodes[b]) {
                    neighbors[a].push(b);
                }
            }
        }
    }
    // largest component, lowest node index on ties
    let mut comp = vec![usize::MAX; nodes.len()];
    let mut sizes = Vec::new();
    for s in 0..nodes.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        let mut q = VecDeque::from([s]);
        comp[s] = c;
        let mut n = 0;
        while let Some(u) = q.pop_front() {
            n += 1;
            for &v in &neighbors[u] {
                if comp[v] == usize::MAX {
                    comp[v] = c;
                    q.push_back(v);
                }
            }
        }
        sizes.push(n);
    }
    let best = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).expect("nonempty");
    let mut remap = vec![usize::MAX; nodes.len()];
    let mut kept = Vec::new();
    for (i, &c) in comp.iter().enumerate() {
        if c == best {
            remap[i] = kept.len();
            kept.push(i);
        }
    }
    let neighbors = kept
        .iter()
        .map(|&i| {
            let mut nb: Vec<usize> = neighbors[i].iter().map(|&j| remap[j]).collect();
            nb.sort_unstable();
            nb
        })
        .collect();
    Ok(LocationGraph {
        nodes: kept.iter().map(|&i| nodes[i]).collect(),
        neighbors,
        edge_length,
    })
}

/// Exact MAP state sequence of a linear chain over `steps` time points.
///
/// `preds[j]` lists the states allowed before `j` (ascending). With
/// `start = Some(s)` the first state is fixed. Ties resolve to the lowest
/// index. Returns the path and its total score.
pub fn viterbi(
    preds: &[Vec<usize>],
    steps: usize,
    start: Option<usize>,
    unary: impl Fn(usize, usize) -> f64,
    pairwise: impl Fn(usize, usize, usize) -> f64,
) -> Result<(Vec<usize>, f64)> {
    let n = preds.len();
    if n == 0 || steps == 0 {
        return Err(Error::DisconnectedStart);
    }
    let mut score: Vec<f64> = (0..n)
        .map(|j| match start {
            Some(s) if s != j => f64::NEG_INFINITY,
            _ => unary(0, j),
        })
        .collect();
    let mut back = vec![0u32; n * (steps - 1)];
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..steps {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = u32::MAX;
            for &i in &preds[j] {
                if score[i] == f64::NEG_INFINITY {
                    continue;
                }
                let v = score[i] + pairwise(t, i, j);
                if v > best {
                    best = v;
                    arg = i as u32;
                }
            }
            next[j] = if arg == u32::MAX { f64::NEG_INFINITY } else { best + unary(t, j) };
            back[(t - 1) * n + j] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = None;
    for (j, &s) in score.iter().enumerate() {
        if s > f64::NEG_INFINITY && last.is_none_or(|(_, b)| s > b) {
            last = Some((j, s));
        }
    }
    let (mut j, total) = last.ok_or(Error::DisconnectedStart)?;
    let mut path = vec![0; steps];
    path[steps - 1] = j;
    for t in (1..steps).rev() {
        j = back[(t - 1) * n + j] as usize;
        path[t - 1] = j;
    }
    Ok((path, total))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CrfParams {
    pub unary_weight: f64,
    pub pairwise_weight: f64,
    pub edge_length: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            unary_weight: 1.0,
            pairwise_weight: 1.0,
            edge_length: 1.0,
        }
    }
}

/// Values searched for each weight and for the edge length.
pub const CRF_GRID: ([f64; 3], [f64; 3]) = ([0.1, 1.0, 10.0], [0.5, 1.0, 2.0]);

/// Map-matches an odometry stream onto `graph`. The first node is the one
/// nearest `start`.
pub fn crf_match(graph: &LocationGraph, start: &Pose, odom: &[OdometrySample], params: &CrfParams) -> Result<Trajectory> {
    let s = graph.nearest(start.position()).ok_or(Error::DisconnectedStart)?;
    if graph.nodes[s].dist(start.position()) > 1.5 * graph.edge_length {
        return Err(Error::DisconnectedStart);
    }
    let mut dr = Vec::with_capacity(odom.len() + 1);
    dr.push(start.position());
    for o in odom {
        let last = *dr.last().expect("nonempty");
        dr.push(last + o.displacement());
    }
    let nodes = &graph.nodes;
    let (wu, wp) = (params.unary_weight, params.pairwise_weight);
    let (path, _) = viterbi(
        &graph.predecessors(),
        dr.len(),
        Some(s),
        |t, j| -wu * nodes[j].dist_sq(dr[t]),
        |t, i, j| -wp * (nodes[j] - nodes[i]).dist_sq(odom[t - 1].displacement()),
    )?;
    let poses = path
        .iter()
        .enumerate()
        .map(|(t, &j)| {
            let time = if t == 0 { start.t } else { odom[t - 1].t };
            Pose::new(time, nodes[j].x, nodes[j].y, 0.0)
        })
        .collect();
    Ok(Trajectory { poses })
}

/// Picks CRF parameters by ATE on a validation run.
pub fn crf_grid_search(map: &OccupancyMap, start: &Pose, odom: &[OdometrySample], gt: &Trajectory) -> Result<(CrfParams, f64)> {
    let mut best: Option<(CrfParams, f64)> = None;
    for &edge_length in &CRF_GRID.1 {
        let graph = match build_graph(map, edge_length) {
            Ok(g) => g,
            Err(Error::NoFreeSpace(_)) => continue,
            Err(e) => return Err(e),
        };
        for &unary_weight in &CRF_GRID.0 {
            for &pairwise_weight in &CRF_GRID.0 {
                let params = CrfParams {
                    unary_weight,
                    pairwise_weight,
                    edge_length,
                };
                let est = match crf_match(&graph, start, odom, &params) {
                    Ok(t) => t,
                    Err(Error::DisconnectedStart) => continue,
                    Err(e) => return Err(e),
                };
                let e = ate(&est, gt)?;
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((params, e));
                }
            }
        }
    }
    best.ok_or(Error::DisconnectedStart)
}
