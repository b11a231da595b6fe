//! Small deterministic path utilities over link indices. All tie-breaks are
//! fixed (lowest node index, lowest link index) so solver output is stable.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::Topology;

/// Outgoing link indices per node, ascending.
pub(crate) fn out_adjacency(topo: &Topology) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); topo.num_nodes()];
    for l in 0..topo.num_links() {
        let (from, _) = topo.endpoints(l);
        out[from].push(l);
    }
    out
}

/// Fewest-hop path from `src` to `dst` over links passing `allowed`.
/// Returns the link sequence, or `None` when unreachable. BFS visits links in
/// index order, so equal-length paths resolve to the lexicographically
/// smallest link choice.
pub(crate) fn shortest_hop_path(
    topo: &Topology,
    src: usize,
    dst: usize,
    allowed: impl Fn(usize) -> bool,
) -> Option<Vec<usize>> {
    if src == dst {
        return Some(Vec::new());
    }
    let adj = out_adjacency(topo);
    let mut parent: Vec<Option<usize>> = vec![None; topo.num_nodes()];
    let mut seen = vec![false; topo.num_nodes()];
    seen[src] = true;
    let mut frontier = vec![src];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &v in &frontier {
            for &l in &adj[v] {
                if !allowed(l) {
                    continue;
                }
                let (_, to) = topo.endpoints(l);
                if !seen[to] {
                    seen[to] = true;
                    parent[to] = Some(l);
                    if to == dst {
                        return Some(rebuild(topo, &parent, src, dst));
                    }
                    next.push(to);
                }
            }
        }
        frontier = next;
    }
    None
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for smallest-cost-first, then
        // smallest node id for determinism.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-cost path under non-negative link weights (Dijkstra). Relaxation is
/// strict, so among equal-cost paths the first one discovered in link-index
/// order wins.
pub(crate) fn cheapest_path(
    topo: &Topology,
    src: usize,
    dst: usize,
    allowed: impl Fn(usize) -> bool,
    weight: impl Fn(usize) -> f64,
) -> Option<Vec<usize>> {
    if src == dst {
        return Some(Vec::new());
    }
    let adj = out_adjacency(topo);
    let mut dist = vec![f64::INFINITY; topo.num_nodes()];
    let mut parent: Vec<Option<usize>> = vec![None; topo.num_nodes()];
    let mut done = vec![false; topo.num_nodes()];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        cost: 0.0,
        node: src,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if done[node] || cost > dist[node] {
            continue;
        }
        done[node] = true;
        if node == dst {
            break;
        }
        for &l in &adj[node] {
            if !allowed(l) {
                continue;
            }
            let w = weight(l);
            debug_assert!(w >= 0.0 && w.is_finite());
            let (_, to) = topo.endpoints(l);
            let nd = cost + w;
            if nd < dist[to] {
                dist[to] = nd;
                parent[to] = Some(l);
                heap.push(HeapEntry { cost: nd, node: to });
            }
        }
    }
    if dist[dst].is_finite() {
        Some(rebuild(topo, &parent, src, dst))
    } else {
        None
    }
}

/// Maximum-bottleneck path over links passing `allowed`, where the bottleneck
/// of a path is the minimum `width` along it. Used to pick a representative
/// path out of a (possibly split) flow.
pub(crate) fn widest_path(
    topo: &Topology,
    src: usize,
    dst: usize,
    allowed: impl Fn(usize) -> bool,
    width: impl Fn(usize) -> f64,
) -> Option<Vec<usize>> {
    if src == dst {
        return Some(Vec::new());
    }
    let adj = out_adjacency(topo);
    let mut best = vec![0.0_f64; topo.num_nodes()];
    let mut parent: Vec<Option<usize>> = vec![None; topo.num_nodes()];
    let mut done = vec![false; topo.num_nodes()];
    best[src] = f64::INFINITY;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        cost: -f64::INFINITY, // negated width: the heap pops largest width first
        node: src,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        let width_here = -cost;
        if done[node] || width_here < best[node] {
            continue;
        }
        done[node] = true;
        if node == dst {
            break;
        }
        for &l in &adj[node] {
            if !allowed(l) {
                continue;
            }
            let (_, to) = topo.endpoints(l);
            let w = width_here.min(width(l));
            if w > best[to] {
                best[to] = w;
                parent[to] = Some(l);
                heap.push(HeapEntry { cost: -w, node: to });
            }
        }
    }
    if best[dst] > 0.0 {
        Some(rebuild(topo, &parent, src, dst))
    } else {
        None
    }
}

fn rebuild(topo: &Topology, parent: &[Option<usize>], src: usize, dst: usize) -> Vec<usize> {
    let mut path = Vec::new();
    let mut node = dst;
    while node != src {
        let l = parent[node].expect("parent chain reaches the source");
        path.push(l);
        node = topo.endpoints(l).0;
    }
    path.reverse();
    path
}
