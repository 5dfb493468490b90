//! Windowed maximin connectivity loss on cable distance predictions.
//!
//! Within a window, cells whose ground truth is background (value > 0) form a
//! 4-connected graph; ground-truth cable cells (value 0) are left out. The
//! maximin affinity of two cells is the best achievable minimum predicted
//! value over all paths joining them, endpoints included. Pairs that share a
//! ground-truth background component are pulled towards affinity 1; pairs
//! from different components are pushed towards 0. Pairs with no path have
//! affinity 0.
//!
//! The sum over all pairs is evaluated with a single Kruskal pass: edges are
//! merged in order of decreasing affinity, and the edge that joins two
//! clusters is the bottleneck of every pair it connects.

use std::collections::{BTreeMap, VecDeque};

use crate::error::Result;
use crate::grid::{DistanceMask, Grid};

use super::{LossConfig, TermValue};

/// Loss of one window, normalized by its number of background pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLoss {
    pub scalar: f64,
    pub grad: Grid<f64>,
    /// Number of unordered background cell pairs, `n (n - 1) / 2`.
    pub pairs: u64,
    /// Pairs whose cells share a ground-truth background component.
    pub same_pairs: u64,
    pub diff_pairs: u64,
}

/// 4-connected component labels of ground-truth background cells; cable cells
/// (value 0) get `None`. Labels are assigned in row-major order of first visit.
pub fn gt_background_components(gt: &Grid<f64>) -> Grid<Option<u32>> {
    let (w, h) = gt.dims();
    let mut labels = Grid::new(w, h, None);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for row in 0..h {
        for col in 0..w {
            if gt[(row, col)] <= 0.0 || labels[(row, col)].is_some() {
                continue;
            }
            labels[(row, col)] = Some(next);
            queue.push_back((row, col));
            while let Some((r, c)) = queue.pop_front() {
                for (nr, nc) in neighbors4(r, c, w, h) {
                    if gt[(nr, nc)] > 0.0 && labels[(nr, nc)].is_none() {
                        labels[(nr, nc)] = Some(next);
                        queue.push_back((nr, nc));
                    }
                }
            }
            next += 1;
        }
    }
    labels
}

fn neighbors4(r: usize, c: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (r > 0).then(|| (r - 1, c));
    let down = (r + 1 < h).then(|| (r + 1, c));
    let left = (c > 0).then(|| (r, c - 1));
    let right = (c + 1 < w).then(|| (r, c + 1));
    [up, down, left, right].into_iter().flatten()
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    u: usize,
    v: usize,
    affinity: f64,
}

/// Background-to-background edges sorted by decreasing affinity; ties keep
/// row-major edge order so the pass is deterministic.
fn sorted_edges(pred: &Grid<f64>, labels: &Grid<Option<u32>>) -> Vec<Edge> {
    let (w, h) = pred.dims();
    let p = pred.as_slice();
    let l = labels.as_slice();
    let mut edges = Vec::with_capacity(2 * w * h);
    for row in 0..h {
        for col in 0..w {
            let u = row * w + col;
            if l[u].is_none() {
                continue;
            }
            if col + 1 < w && l[u + 1].is_some() {
                edges.push(Edge {
                    u,
                    v: u + 1,
                    affinity: p[u].min(p[u + 1]),
                });
            }
            if row + 1 < h && l[u + w].is_some() {
                edges.push(Edge {
                    u,
                    v: u + w,
                    affinity: p[u].min(p[u + w]),
                });
            }
        }
    }
    edges.sort_by(|a, b| b.affinity.total_cmp(&a.affinity));
    edges
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<u64>,
    /// Per-root ground-truth label histogram.
    labels: Vec<BTreeMap<u32, u64>>,
}

impl DisjointSet {
    fn new(labels: &Grid<Option<u32>>) -> Self {
        let n = labels.len();
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
            labels: labels
                .as_slice()
                .iter()
                .map(|l| l.map(|l| BTreeMap::from([(l, 1)])).unwrap_or_default())
                .collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Pair counts `(same, diff)` across two roots.
    fn cross_counts(&self, a: usize, b: usize) -> (u64, u64) {
        let (small, large) = if self.labels[a].len() <= self.labels[b].len() {
            (&self.labels[a], &self.labels[b])
        } else {
            (&self.labels[b], &self.labels[a])
        };
        let same: u64 = small
            .iter()
            .map(|(l, n)| n * large.get(l).copied().unwrap_or(0))
            .sum();
        (same, self.size[a] * self.size[b] - same)
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (keep, gone) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[gone] = keep;
        self.size[keep] += self.size[gone];
        let moved = std::mem::take(&mut self.labels[gone]);
        for (l, n) in moved {
            *self.labels[keep].entry(l).or_insert(0) += n;
        }
        keep
    }
}

/// Loss and subgradient of one window. `pred` and `gt` must have the same shape.
pub fn malis_window_loss(pred: &Grid<f64>, gt: &Grid<f64>) -> Result<WindowLoss> {
    pred.ensure_same_dims(gt)?;
    let labels = gt_background_components(gt);
    let (w, h) = pred.dims();
    let mut grad = Grid::new(w, h, 0.0);

    let n = labels.as_slice().iter().filter(|l| l.is_some()).count() as u64;
    let pairs = n * n.saturating_sub(1) / 2;
    let mut per_label: BTreeMap<u32, u64> = BTreeMap::new();
    for l in labels.as_slice().iter().flatten() {
        *per_label.entry(*l).or_insert(0) += 1;
    }
    let same_pairs: u64 = per_label.values().map(|&k| k * (k - 1) / 2).sum();
    let diff_pairs = pairs - same_pairs;
    if pairs == 0 {
        return Ok(WindowLoss {
            scalar: 0.0,
            grad,
            pairs,
            same_pairs,
            diff_pairs,
        });
    }

    let p = pred.as_slice();
    let mut dsu = DisjointSet::new(&labels);
    let mut total = 0.0;
    let mut merged_same = 0u64;
    let g = grad.as_mut_slice();
    for e in sorted_edges(pred, &labels) {
        let (ra, rb) = (dsu.find(e.u), dsu.find(e.v));
        if ra == rb {
            continue;
        }
        let (n_same, n_diff) = dsu.cross_counts(ra, rb);
        let a = e.affinity;
        let (ns, nd) = (n_same as f64, n_diff as f64);
        total += nd * a * a + ns * (1.0 - a) * (1.0 - a);
        let d = 2.0 * a * nd - 2.0 * (1.0 - a) * ns;
        if p[e.u] < p[e.v] {
            g[e.u] += d;
        } else if p[e.v] < p[e.u] {
            g[e.v] += d;
        } else {
            g[e.u] += 0.5 * d;
            g[e.v] += 0.5 * d;
        }
        merged_same += n_same;
        dsu.union(ra, rb);
    }
    // Same-label pairs never joined by a path sit at affinity 0. They only
    // arise if the graph support is wider than the labelling, so this is
    // normally zero.
    total += (same_pairs - merged_same) as f64;

    let norm = pairs as f64;
    for v in g.iter_mut() {
        *v /= norm;
    }
    Ok(WindowLoss {
        scalar: total / norm,
        grad,
        pairs,
        same_pairs,
        diff_pairs,
    })
}

/// Maximin affinity of one background cell pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairAffinity {
    /// Row-major cell indices, `first < second`.
    pub first: usize,
    pub second: usize,
    pub maximin: f64,
    pub same_component: bool,
}

/// Every background pair's maximin affinity as assigned by the Kruskal pass.
/// Quadratic in the window size; meant for small windows and diagnostics.
pub fn pair_maximin(pred: &Grid<f64>, gt: &Grid<f64>) -> Result<Vec<PairAffinity>> {
    pred.ensure_same_dims(gt)?;
    let labels = gt_background_components(gt);
    let l = labels.as_slice();
    let n = l.len();
    let mut members: Vec<Vec<usize>> = (0..n)
        .map(|i| if l[i].is_some() { vec![i] } else { Vec::new() })
        .collect();
    let mut dsu = DisjointSet::new(&labels);
    let mut maximin = BTreeMap::new();
    for e in sorted_edges(pred, &labels) {
        let (ra, rb) = (dsu.find(e.u), dsu.find(e.v));
        if ra == rb {
            continue;
        }
        for &x in &members[ra] {
            for &y in &members[rb] {
                maximin.insert((x.min(y), x.max(y)), e.affinity);
            }
        }
        let keep = dsu.union(ra, rb);
        let gone = if keep == ra { rb } else { ra };
        let moved = std::mem::take(&mut members[gone]);
        members[keep].extend(moved);
    }
    let bg: Vec<usize> = (0..n).filter(|&i| l[i].is_some()).collect();
    let mut out = Vec::with_capacity(bg.len() * bg.len().saturating_sub(1) / 2);
    for (i, &x) in bg.iter().enumerate() {
        for &y in &bg[i + 1..] {
            out.push(PairAffinity {
                first: x,
                second: y,
                maximin: maximin.get(&(x, y)).copied().unwrap_or(0.0),
                same_component: l[x] == l[y],
            });
        }
    }
    Ok(out)
}

/// Non-overlapping `size x size` tiles covering a `w x h` grid, row-major;
/// right and bottom tiles may be smaller. Yields `(x0, y0, width, height)`.
pub fn window_tiles(
    w: usize,
    h: usize,
    size: usize,
) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let size = size.max(1);
    (0..h).step_by(size).flat_map(move |y0| {
        (0..w)
            .step_by(size)
            .map(move |x0| (x0, y0, size.min(w - x0), size.min(h - y0)))
    })
}

/// Mean of window losses over windows that contain at least one background pair.
pub fn malis_loss(pred: &DistanceMask, gt: &DistanceMask, cfg: &LossConfig) -> Result<TermValue> {
    cfg.validate()?;
    pred.values().ensure_same_dims(gt.values())?;
    let (w, h) = pred.dims();
    let mut grad = Grid::new(w, h, 0.0);
    let mut sum = 0.0;
    let mut active = 0usize;
    let mut window_grads = Vec::new();
    for (x0, y0, ww, wh) in window_tiles(w, h, cfg.malis_window) {
        let pw = pred.values().crop(x0, y0, ww, wh)?;
        let gw = gt.values().crop(x0, y0, ww, wh)?;
        let wl = malis_window_loss(&pw, &gw)?;
        if wl.pairs == 0 {
            continue;
        }
        active += 1;
        sum += wl.scalar;
        window_grads.push((x0, y0, wl.grad));
    }
    if active == 0 {
        return Ok(TermValue { scalar: 0.0, grad });
    }
    let scale = 1.0 / active as f64;
    for (x0, y0, wg) in window_grads {
        for (r, c, v) in wg.indexed() {
            grad[(y0 + r, x0 + c)] = v * scale;
        }
    }
    Ok(TermValue {
        scalar: sum / active as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(w: usize, h: usize, v: &[f64]) -> Grid<f64> {
        Grid::from_vec(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn components_examples() {
        let open = Grid::new(4, 4, 0.5);
        let l = gt_background_components(&open);
        assert!(l.as_slice().iter().all(|&x| x == Some(0)));

        let wall = Grid::from_fn(5, 4, |_, c| if c == 2 { 0.0 } else { 0.3 });
        let l = gt_background_components(&wall);
        assert_eq!(l[(0, 0)], Some(0));
        assert_eq!(l[(3, 4)], Some(1));
        assert_eq!(l[(1, 2)], None);

        // Cable entering from the top and stopping half way.
        let stub = Grid::from_fn(5, 5, |r, c| if c == 2 && r < 3 { 0.0 } else { 0.3 });
        let l = gt_background_components(&stub);
        assert!(l.as_slice().iter().flatten().all(|&x| x == 0));
        assert_eq!(l.as_slice().iter().filter(|x| x.is_none()).count(), 3);
    }

    #[test]
    fn constant_one_prediction_is_free() {
        let wl = malis_window_loss(&Grid::new(4, 4, 1.0), &Grid::new(4, 4, 0.7)).unwrap();
        assert_eq!(wl.scalar, 0.0);
        assert_eq!(wl.pairs, 120);
        assert!(wl.grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separated_pair_without_path_is_free() {
        let wl = malis_window_loss(&g(3, 1, &[1.0, 0.8, 1.0]), &g(3, 1, &[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(wl.pairs, 1);
        assert_eq!(wl.diff_pairs, 1);
        assert_eq!(wl.scalar, 0.0);
        assert!(wl.grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_cell_bottleneck() {
        let wl =
            malis_window_loss(&g(3, 1, &[1.0, 0.2, 1.0]), &g(3, 1, &[0.1, 0.05, 0.1])).unwrap();
        assert_eq!(wl.pairs, 3);
        assert!((wl.scalar - 0.64).abs() < 1e-15);
        // All three pairs bottleneck on the middle cell: -2 (1 - 0.2) * 3 / 3.
        assert!((wl.grad[(0, 1)] + 1.6).abs() < 1e-15);
        assert_eq!(wl.grad[(0, 0)], 0.0);
        assert_eq!(wl.grad[(0, 2)], 0.0);
    }

    #[test]
    fn tied_endpoints_split_gradient() {
        let wl = malis_window_loss(&g(2, 1, &[0.5, 0.5]), &g(2, 1, &[0.3, 0.3])).unwrap();
        assert!((wl.scalar - 0.25).abs() < 1e-15);
        assert_eq!(wl.grad[(0, 0)], wl.grad[(0, 1)]);
        assert!((wl.grad[(0, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_windows_have_no_pairs() {
        let wl = malis_window_loss(&g(2, 1, &[0.5, 0.5]), &g(2, 1, &[0.0, 0.3])).unwrap();
        assert_eq!(wl.pairs, 0);
        assert_eq!(wl.scalar, 0.0);
    }

    #[test]
    fn tiles_cover_with_remainders() {
        let tiles: Vec<_> = window_tiles(5, 3, 2).collect();
        assert_eq!(tiles.len(), 6);
        assert_eq!(tiles[2], (4, 0, 1, 2));
        assert_eq!(tiles[5], (4, 2, 1, 1));
        let area: usize = tiles.iter().map(|t| t.2 * t.3).sum();
        assert_eq!(area, 15);
    }

    #[test]
    fn empty_window_excluded_from_mean() {
        let cfg = LossConfig {
            malis_window: 2,
            ..LossConfig::default()
        };
        // Left window all cable (no pairs), right window background.
        let gt =
            DistanceMask::new(g(4, 2, &[0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5]), 128).unwrap();
        let pred =
            DistanceMask::new(g(4, 2, &[0.3, 0.3, 0.9, 0.6, 0.3, 0.3, 0.8, 0.7]), 128).unwrap();
        let total = malis_loss(&pred, &gt, &cfg).unwrap();
        let right = malis_window_loss(
            &pred.values().crop(2, 0, 2, 2).unwrap(),
            &gt.values().crop(2, 0, 2, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(total.scalar, right.scalar);
    }

    #[test]
    fn pair_maximin_matches_loss() {
        let pred = g(3, 2, &[0.9, 0.2, 0.7, 0.4, 0.6, 0.8]);
        let gt = g(3, 2, &[0.5, 0.0, 0.5, 0.5, 0.5, 0.5]);
        let pairs = pair_maximin(&pred, &gt).unwrap();
        let wl = malis_window_loss(&pred, &gt).unwrap();
        assert_eq!(pairs.len() as u64, wl.pairs);
        let sum: f64 = pairs
            .iter()
            .map(|p| {
                if p.same_component {
                    (1.0 - p.maximin).powi(2)
                } else {
                    p.maximin.powi(2)
                }
            })
            .sum();
        assert!((sum / wl.pairs as f64 - wl.scalar).abs() < 1e-15);
    }
}
