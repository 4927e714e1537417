use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::grid::Grid;
use crate::map::OccupancyMap;

/// Chessboard distance (in cells) from every cell to the nearest occupied
/// cell or map border. Occupied cells have clearance 0.
pub fn clearance_map(map: &OccupancyMap) -> Grid<u32> {
    let (w, h) = (map.width(), map.height());
    let mut dist = Grid::filled(w, h, u32::MAX);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !map.cell(x, y).is_free() {
                *dist.get_mut(x, y) = 0;
                queue.push_back((x, y));
            } else if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                *dist.get_mut(x, y) = 1;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = *dist.get(x, y) + 1;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let slot = dist.get_mut(nx as usize, ny as usize);
                if *slot > d {
                    *slot = d;
                    queue.push_back((nx as usize, ny as usize));
                }
            }
        }
    }
    dist
}

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, ties broken on index for determinism
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* over cells whose clearance is at least `min_clearance`.
/// Steps are penalised near walls so paths prefer corridor centres. Diagonal
/// moves never cut a blocked corner.
pub fn plan_path(
    clearance: &Grid<u32>,
    min_clearance: u32,
    start: (usize, usize),
    goal: (usize, usize),
) -> Option<Vec<(usize, usize)>> {
    let (w, h) = (clearance.width, clearance.height);
    let ok = |x: i64, y: i64| -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && *clearance.get(x as usize, y as usize) >= min_clearance
    };
    if !ok(start.0 as i64, start.1 as i64) || !ok(goal.0 as i64, goal.1 as i64) {
        return None;
    }
    let heuristic = |i: usize| -> f64 {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let dx = (x - goal.0 as f64).abs();
        let dy = (y - goal.1 as f64).abs();
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let start_idx = start.1 * w + start.0;
    let goal_idx = goal.1 * w + goal.0;
    let mut g_score = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    g_score[start_idx] = 0.0;
    open.push(Open {
        f: heuristic(start_idx),
        g: 0.0,
        idx: start_idx,
    });
    while let Some(Open { g, idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if idx == goal_idx {
            let mut path = vec![(idx % w, idx / w)];
            let mut cur = idx;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push((cur % w, cur / w));
            }
            path.reverse();
            return Some(path);
        }
        let (x, y) = ((idx % w) as i64, (idx / w) as i64);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if !ok(nx, ny) {
                    continue;
                }
                if dx != 0 && dy != 0 && (!ok(x + dx, y) || !ok(x, y + dy)) {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if closed[nidx] {
                    continue;
                }
                let c = *clearance.get(nx as usize, ny as usize) as f64;
                let base = if dx != 0 && dy != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let ng = g + base * (1.0 + 2.0 / c);
                if ng < g_score[nidx] {
                    g_score[nidx] = ng;
                    parent[nidx] = idx;
                    open.push(Open {
                        f: ng + heuristic(nidx),
                        g: ng,
                        idx: nidx,
                    });
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clearance_counts_from_walls_and_border() {
        let map = OccupancyMap::from_ascii(&[".....", ".....", "....."], 1.0).unwrap();
        let c = clearance_map(&map);
        assert_eq!(*c.get(0, 0), 1);
        assert_eq!(*c.get(2, 1), 2);
    }

    #[test]
    fn astar_routes_around_a_wall() {
        let map = OccupancyMap::from_ascii(
            &[
                "..........",
                "....#.....",
                "....#.....",
                "....#.....",
                "..........",
            ],
            1.0,
        )
        .unwrap();
        let c = clearance_map(&map);
        let path = plan_path(&c, 1, (0, 2), (9, 2)).unwrap();
        assert_eq!(path.first(), Some(&(0, 2)));
        assert_eq!(path.last(), Some(&(9, 2)));
        for &(x, y) in &path {
            assert!(map.cell(x, y).is_free());
        }
        for pair in path.windows(2) {
            let dx = pair[0].0.abs_diff(pair[1].0);
            let dy = pair[0].1.abs_diff(pair[1].1);
            assert!(dx <= 1 && dy <= 1);
        }
        assert!(plan_path(&c, 1, (0, 2), (4, 2)).is_none());
    }
}
