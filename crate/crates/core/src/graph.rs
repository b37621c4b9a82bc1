//! Topologies, paths and source/destination routing schemes.
//!
//! Links are directed: an undirected edge of a physical topology becomes two
//! links, one per egress direction, each with its own output queue. A routing
//! scheme assigns exactly one loop-free path to every ordered node pair and
//! stores them in lexicographic `(src, dst)` order, which is also the order of
//! traffic-matrix entries and labels everywhere else in the crate.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("link {src}->{dst} references a node outside 0..{node_count}")]
    DanglingEndpoint { src: usize, dst: usize, node_count: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate link {src}->{dst}")]
    DuplicateLink { src: usize, dst: usize },
    #[error("link capacity must be positive and uniform, got {0}")]
    BadCapacity(f64),
    #[error("link ids must be 0..n in order; found id {found} at position {position}")]
    BadLinkId { position: usize, found: usize },
    #[error("topology is not strongly connected")]
    Disconnected,
    #[error("node {dst} is unreachable from node {src}")]
    Unreachable { src: usize, dst: usize },
    #[error("expected {expected} link weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("link weights must be finite and positive")]
    BadWeight,
    #[error("invalid path {src}->{dst}: {reason}")]
    InvalidPath { src: usize, dst: usize, reason: String },
    #[error("routing scheme must hold {expected} paths, got {got}")]
    PathCount { expected: usize, got: usize },
    #[error("unknown link id {0}")]
    UnknownLink(usize),
    #[error("could only find {found} distinct routing schemes out of {requested} requested")]
    NotEnoughVariants { requested: usize, found: usize },
    #[error("cannot fail {requested} edges of a topology with {available}")]
    TooManyFailures { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Number of ordered pairs `(s, d)` with `s != d`.
pub fn pair_count(nodes: usize) -> usize {
    nodes * nodes.saturating_sub(1)
}

/// Position of the ordered pair `(src, dst)` in lexicographic pair order.
pub fn pair_index(nodes: usize, src: usize, dst: usize) -> usize {
    debug_assert!(src != dst && src < nodes && dst < nodes);
    src * (nodes - 1) + if dst < src { dst } else { dst - 1 }
}

/// All ordered pairs in lexicographic order.
pub fn pairs(nodes: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..nodes).flat_map(move |s| (0..nodes).filter(move |&d| d != s).map(move |d| (s, d)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyWire", into = "TopologyWire")]
pub struct Topology {
    node_count: usize,
    links: Vec<Link>,
    by_pair: HashMap<(usize, usize), usize>,
}

#[derive(Serialize, Deserialize)]
struct TopologyWire {
    nodes: usize,
    links: Vec<Link>,
}

impl TryFrom<TopologyWire> for Topology {
    type Error = GraphError;

    fn try_from(wire: TopologyWire) -> Result<Self> {
        for (position, link) in wire.links.iter().enumerate() {
            if link.id != position {
                return Err(GraphError::BadLinkId {
                    position,
                    found: link.id,
                });
            }
        }
        let capacity = wire.links.first().map_or(1.0, |l| l.capacity);
        let edges: Vec<_> = wire.links.iter().map(|l| (l.src, l.dst)).collect();
        let topo = Topology::new(wire.nodes, &edges, capacity)?;
        if wire.links.iter().any(|l| l.capacity != capacity) {
            return Err(GraphError::BadCapacity(capacity));
        }
        Ok(topo)
    }
}

impl From<Topology> for TopologyWire {
    fn from(topo: Topology) -> Self {
        TopologyWire {
            nodes: topo.node_count,
            links: topo.links,
        }
    }
}

impl Topology {
    /// Builds a topology from directed edges; link ids follow input order.
    pub fn new(node_count: usize, edges: &[(usize, usize)], capacity: f64) -> Result<Self> {
        if node_count < 2 {
            return Err(GraphError::TooFewNodes(node_count));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(GraphError::BadCapacity(capacity));
        }
        let mut by_pair = HashMap::with_capacity(edges.len());
        let mut links = Vec::with_capacity(edges.len());
        for (id, &(src, dst)) in edges.iter().enumerate() {
            if src >= node_count || dst >= node_count {
                return Err(GraphError::DanglingEndpoint { src, dst, node_count });
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if by_pair.insert((src, dst), id).is_some() {
                return Err(GraphError::DuplicateLink { src, dst });
            }
            links.push(Link { id, src, dst, capacity });
        }
        Ok(Topology {
            node_count,
            links,
            by_pair,
        })
    }

    /// Expands every undirected edge `(a, b)` into links `a->b` and `b->a`.
    pub fn from_undirected(node_count: usize, edges: &[(usize, usize)], capacity: f64) -> Result<Self> {
        let directed: Vec<_> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        Self::new(node_count, &directed, capacity)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, id: usize) -> Option<&Link> {
        self.links.get(id)
    }

    pub fn link_between(&self, src: usize, dst: usize) -> Option<usize> {
        self.by_pair.get(&(src, dst)).copied()
    }

    /// The common link capacity.
    pub fn capacity(&self) -> f64 {
        self.links.first().map_or(1.0, |l| l.capacity)
    }

    /// Outgoing links per node, in link-id order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.node_count];
        for link in &self.links {
            out[link.src].push(link.id);
        }
        out
    }

    /// Strong connectivity: every node reaches every other node.
    pub fn is_connected(&self) -> bool {
        let forward = self.adjacency();
        let mut backward = vec![Vec::new(); self.node_count];
        for link in &self.links {
            backward[link.dst].push(link.src);
        }
        let reach = |next: &dyn Fn(usize) -> Vec<usize>| {
            let mut seen = vec![false; self.node_count];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for v in next(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(&|u| forward[u].iter().map(|&l| self.links[l].dst).collect()) && reach(&|u| backward[u].clone())
    }

    pub fn ensure_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(GraphError::Disconnected)
        }
    }

    /// Undirected edges `(a, b)` with `a < b` that have links in both directions,
    /// each with its pair of link ids.
    pub fn bidirectional_edges(&self) -> Vec<((usize, usize), [usize; 2])> {
        let mut edges: Vec<_> = self
            .links
            .iter()
            .filter(|l| l.src < l.dst)
            .filter_map(|l| {
                self.link_between(l.dst, l.src)
                    .map(|back| ((l.src, l.dst), [l.id, back]))
            })
            .collect();
        edges.sort();
        edges
    }

    /// A copy of this topology with an extra bidirectional edge at the common capacity.
    pub fn with_edge(&self, a: usize, b: usize) -> Result<Topology> {
        let mut edges: Vec<_> = self.links.iter().map(|l| (l.src, l.dst)).collect();
        edges.push((a, b));
        edges.push((b, a));
        Topology::new(self.node_count, &edges, self.capacity())
    }
}

/// An ordered, loop-free sequence of links from `src` to `dst`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub src: usize,
    pub dst: usize,
    pub links: Vec<usize>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        let fail = |reason: &str| GraphError::InvalidPath {
            src: self.src,
            dst: self.dst,
            reason: reason.to_string(),
        };
        if self.src == self.dst {
            return Err(fail("source equals destination"));
        }
        if self.links.is_empty() {
            return Err(fail("empty link sequence"));
        }
        let mut at = self.src;
        let mut visited = HashSet::from([self.src]);
        for &id in &self.links {
            let link = topo.link(id).ok_or(GraphError::UnknownLink(id))?;
            if link.src != at {
                return Err(fail("consecutive links are not adjacent"));
            }
            at = link.dst;
            if !visited.insert(at) {
                return Err(fail("path revisits a node"));
            }
        }
        if at != self.dst {
            return Err(fail("path does not end at its destination"));
        }
        Ok(())
    }

    /// Node sequence visited by the path, starting at `src`.
    pub fn nodes(&self, topo: &Topology) -> Vec<usize> {
        std::iter::once(self.src)
            .chain(self.links.iter().map(|&l| topo.links[l].dst))
            .collect()
    }
}

/// One path per ordered node pair, stored in lexicographic pair order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoutingScheme {
    paths: Vec<Path>,
}

impl RoutingScheme {
    /// Accepts paths in any order; they are sorted into pair order and validated.
    pub fn new(topo: &Topology, mut paths: Vec<Path>) -> Result<Self> {
        let n = topo.node_count();
        if paths.len() != pair_count(n) {
            return Err(GraphError::PathCount {
                expected: pair_count(n),
                got: paths.len(),
            });
        }
        paths.sort_by_key(|p| (p.src, p.dst));
        for (p, (s, d)) in paths.iter().zip(pairs(n)) {
            if (p.src, p.dst) != (s, d) {
                return Err(GraphError::InvalidPath {
                    src: p.src,
                    dst: p.dst,
                    reason: "pair missing or duplicated".into(),
                });
            }
            p.validate(topo)?;
        }
        Ok(RoutingScheme { paths })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, nodes: usize, src: usize, dst: usize) -> &Path {
        &self.paths[pair_index(nodes, src, dst)]
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        Self::new(topo, self.paths.clone()).map(|_| ())
    }

    pub fn uses_link(&self, link: usize) -> bool {
        self.paths.iter().any(|p| p.links.contains(&link))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const TIE_EPS: f64 = 1e-12;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Single-source Dijkstra returning, for every node, the link sequence of the
/// minimum-weight path; equal-weight paths are resolved towards the
/// lexicographically smallest node sequence.
fn dijkstra_tree(topo: &Topology, adj: &[Vec<usize>], weights: &[f64], src: usize) -> Vec<Option<Vec<usize>>> {
    let n = topo.node_count();
    let mut dist = vec![f64::INFINITY; n];
    // Node sequence of the current best path; used only for tie-breaking.
    let mut seq: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    seq[src] = vec![src];
    heap.push(HeapEntry { dist: 0.0, node: src });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if done[u] || d > dist[u] {
            continue;
        }
        done[u] = true;
        for &lid in &adj[u] {
            let v = topo.links[lid].dst;
            if done[v] {
                continue;
            }
            let cand = d + weights[lid];
            let better = if dist[v].is_infinite() {
                true
            } else if ties(cand, dist[v]) {
                let mut alt = seq[u].clone();
                alt.push(v);
                alt < seq[v]
            } else {
                cand < dist[v]
            };
            if better {
                dist[v] = cand;
                seq[v] = seq[u].clone();
                seq[v].push(v);
                via[v] = Some(lid);
                heap.push(HeapEntry { dist: cand, node: v });
            }
        }
    }
    (0..n)
        .map(|d| {
            if d == src || !done[d] {
                return None;
            }
            let mut links = Vec::new();
            let mut at = d;
            while at != src {
                let lid = via[at].expect("finalized node has a predecessor");
                links.push(lid);
                at = topo.links[lid].src;
            }
            links.reverse();
            Some(links)
        })
        .collect()
}

/// Minimum-weight routing for every ordered pair.
pub fn shortest_path_routing(topo: &Topology, weights: &[f64]) -> Result<RoutingScheme> {
    if weights.len() != topo.link_count() {
        return Err(GraphError::WeightCount {
            expected: topo.link_count(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(GraphError::BadWeight);
    }
    let n = topo.node_count();
    let adj = topo.adjacency();
    let mut paths = Vec::with_capacity(pair_count(n));
    for s in 0..n {
        let tree = dijkstra_tree(topo, &adj, weights, s);
        for (d, links) in tree.into_iter().enumerate() {
            if d == s {
                continue;
            }
            let links = links.ok_or(GraphError::Unreachable { src: s, dst: d })?;
            paths.push(Path { src: s, dst: d, links });
        }
    }
    Ok(RoutingScheme { paths })
}

/// Hop-count shortest paths.
pub fn hop_count_routing(topo: &Topology) -> Result<RoutingScheme> {
    shortest_path_routing(topo, &vec![1.0; topo.link_count()])
}

/// Draws i.i.d. link weights uniformly from `[1, 10]` and routes on them until
/// `count` distinct schemes are found.
pub fn random_routing_variants(topo: &Topology, count: usize, seed: u64) -> Result<Vec<RoutingScheme>> {
    let out = routing_variants_up_to(topo, count, seed)?;
    if out.len() < count {
        return Err(GraphError::NotEnoughVariants {
            requested: count,
            found: out.len(),
        });
    }
    Ok(out)
}

/// Like [`random_routing_variants`] but settles for fewer schemes when a small
/// topology does not admit `count` distinct ones.
pub fn routing_variants_up_to(topo: &Topology, count: usize, seed: u64) -> Result<Vec<RoutingScheme>> {
    weighted_variants_up_to(topo, count, 10.0, seed)
}

/// Up to `count` distinct schemes routed on i.i.d. weights from `[1, max_weight]`.
/// Small `max_weight` keeps every path at or near minimum hop length and only
/// varies which of the equally short paths gets used.
pub fn weighted_variants_up_to(
    topo: &Topology,
    count: usize,
    max_weight: f64,
    seed: u64,
) -> Result<Vec<RoutingScheme>> {
    if !(max_weight.is_finite() && max_weight > 1.0) {
        return Err(GraphError::BadWeight);
    }
    topo.ensure_connected()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let max_attempts = 20 * count + 50;
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let weights: Vec<f64> = (0..topo.link_count())
            .map(|_| rng.random_range(1.0..=max_weight))
            .collect();
        let scheme = shortest_path_routing(topo, &weights)?;
        if seen.insert(scheme.clone()) {
            out.push(scheme);
        }
    }
    Ok(out)
}

/// A topology with some links removed, plus the hop-count routing on what survives.
#[derive(Debug, Clone)]
pub struct FailureOutcome {
    pub topology: Topology,
    pub routing: RoutingScheme,
    /// `original_ids[new_id]` is the id the surviving link had before the failure.
    pub original_ids: Vec<usize>,
}

/// Removes `failed` links, re-indexes the survivors in their original order and
/// reroutes with hop-count shortest paths.
pub fn apply_link_failures(topo: &Topology, failed: &[usize]) -> Result<FailureOutcome> {
    for &id in failed {
        if id >= topo.link_count() {
            return Err(GraphError::UnknownLink(id));
        }
    }
    let failed: HashSet<usize> = failed.iter().copied().collect();
    let survivors: Vec<&Link> = topo.links.iter().filter(|l| !failed.contains(&l.id)).collect();
    let edges: Vec<_> = survivors.iter().map(|l| (l.src, l.dst)).collect();
    let reduced = Topology::new(topo.node_count(), &edges, topo.capacity())?;
    reduced.ensure_connected()?;
    let routing = hop_count_routing(&reduced)?;
    Ok(FailureOutcome {
        topology: reduced,
        routing,
        original_ids: survivors.iter().map(|l| l.id).collect(),
    })
}

/// Samples `count` distinct bidirectional edges whose removal keeps the
/// topology connected; returns the link ids of both directions of each edge.
pub fn sample_edge_failures<R: Rng>(topo: &Topology, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let edges = topo.bidirectional_edges();
    if count > edges.len() {
        return Err(GraphError::TooManyFailures {
            requested: count,
            available: edges.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    for _ in 0..1000 {
        let picked: Vec<usize> = edges
            .choose_multiple(rng, count)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        if apply_link_failures(topo, &picked).is_ok() {
            let mut picked = picked;
            picked.sort_unstable();
            return Ok(picked);
        }
    }
    Err(GraphError::Disconnected)
}

/// The 14-node, 21-edge NSFNET backbone.
pub fn nsfnet(capacity: f64) -> Topology {
    const EDGES: [(usize, usize); 21] = [
        (0, 1),
        (0, 2),
        (0, 3),
        (1, 2),
        (1, 7),
        (2, 5),
        (3, 4),
        (3, 8),
        (4, 5),
        (4, 6),
        (5, 12),
        (5, 13),
        (6, 7),
        (7, 10),
        (8, 9),
        (8, 11),
        (9, 10),
        (9, 12),
        (10, 11),
        (10, 13),
        (11, 12),
    ];
    Topology::from_undirected(14, &EDGES, capacity).expect("static topology is valid")
}

/// Bidirectional ring `0-1-...-(n-1)-0`.
pub fn ring(nodes: usize, capacity: f64) -> Result<Topology> {
    let edges: Vec<_> = (0..nodes).map(|i| (i, (i + 1) % nodes)).collect();
    if nodes == 2 {
        return Topology::from_undirected(2, &[(0, 1)], capacity);
    }
    Topology::from_undirected(nodes, &edges, capacity)
}

/// A ring with `chords` extra random undirected edges, so every node has
/// degree at least two and single edge failures never disconnect it.
pub fn random_topology(nodes: usize, chords: usize, capacity: f64, seed: u64) -> Result<Topology> {
    if nodes < 3 {
        return ring(nodes, capacity);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..nodes)
        .map(|i| (i.min((i + 1) % nodes), i.max((i + 1) % nodes)))
        .collect();
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let mut candidates: Vec<(usize, usize)> = (0..nodes)
        .flat_map(|a| (a + 1..nodes).map(move |b| (a, b)))
        .filter(|e| !present.contains(e))
        .collect();
    candidates.shuffle(&mut rng);
    for e in candidates.into_iter().take(chords) {
        present.insert(e);
        edges.push(e);
    }
    Topology::from_undirected(nodes, &edges, capacity)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All simple paths from `s` to `d` as link sequences.
    fn all_simple_paths(topo: &Topology, s: usize, d: usize) -> Vec<Vec<usize>> {
        fn walk(
            topo: &Topology,
            at: usize,
            d: usize,
            seen: &mut Vec<bool>,
            cur: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if at == d {
                out.push(cur.clone());
                return;
            }
            for l in topo.links() {
                if l.src == at && !seen[l.dst] {
                    seen[l.dst] = true;
                    cur.push(l.id);
                    walk(topo, l.dst, d, seen, cur, out);
                    cur.pop();
                    seen[l.dst] = false;
                }
            }
        }
        let mut seen = vec![false; topo.node_count()];
        seen[s] = true;
        let mut out = Vec::new();
        walk(topo, s, d, &mut seen, &mut Vec::new(), &mut out);
        out
    }

    fn brute_force_min(topo: &Topology, w: &[f64], s: usize, d: usize) -> f64 {
        all_simple_paths(topo, s, d)
            .iter()
            .map(|p| p.iter().map(|&l| w[l]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn nsf_has_42_directed_links() {
        let t = nsfnet(1.0);
        assert_eq!(t.node_count(), 14);
        assert_eq!(t.link_count(), 42);
        assert!(t.is_connected());
    }

    #[test]
    fn minimal_and_duplicate() {
        let t = Topology::new(2, &[(0, 1), (1, 0)], 1.0).unwrap();
        assert_eq!(t.link_count(), 2);
        assert_eq!(
            Topology::new(3, &[(0, 1), (0, 1)], 1.0),
            Err(GraphError::DuplicateLink { src: 0, dst: 1 })
        );
        assert!(matches!(
            Topology::new(3, &[(0, 3)], 1.0),
            Err(GraphError::DanglingEndpoint { .. })
        ));
    }

    #[test]
    fn disconnected_is_flagged_on_demand() {
        let t = Topology::new(3, &[(0, 1), (1, 0)], 1.0).unwrap();
        assert_eq!(t.ensure_connected(), Err(GraphError::Disconnected));
        assert!(matches!(hop_count_routing(&t), Err(GraphError::Unreachable { .. })));
    }

    #[test]
    fn single_hop_line() {
        let t = Topology::new(2, &[(0, 1), (1, 0)], 1.0).unwrap();
        let r = hop_count_routing(&t).unwrap();
        assert_eq!(r.path(2, 0, 1).links, vec![0]);
        assert_eq!(r.path(2, 1, 0).links, vec![1]);
    }

    #[test]
    fn ring_opposite_pair_takes_two_hops() {
        let t = ring(4, 1.0).unwrap();
        let r = hop_count_routing(&t).unwrap();
        let p = r.path(4, 0, 2);
        assert_eq!(p.len(), 2);
        let best = brute_force_min(&t, &[1.0; 8], 0, 2);
        assert_eq!(best, 2.0);
        // lexicographic tie-break picks 0-1-2 over 0-3-2
        assert_eq!(p.nodes(&t), vec![0, 1, 2]);
    }

    #[test]
    fn weighted_detour_matches_exhaustive_minimum() {
        // direct 0->4 is expensive; 0->1->2->3->4 cheaper
        let edges = [(0, 4), (0, 1), (1, 2), (2, 3), (3, 4), (1, 4)];
        let t = Topology::from_undirected(5, &edges, 1.0).unwrap();
        let mut w = vec![1.0; t.link_count()];
        w[0] = 9.0;
        w[1] = 9.0;
        w[10] = 5.0;
        w[11] = 5.0;
        let r = shortest_path_routing(&t, &w).unwrap();
        for (s, d) in pairs(5) {
            let p = r.path(5, s, d);
            let cost: f64 = p.links.iter().map(|&l| w[l]).sum();
            assert!((cost - brute_force_min(&t, &w, s, d)).abs() < 1e-9, "{s}->{d}");
        }
        assert_eq!(r.path(5, 0, 4).nodes(&t), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn variants_on_ring_are_valid_and_distinct() {
        let t = ring(4, 1.0).unwrap();
        let v = random_routing_variants(&t, 3, 7).unwrap();
        assert_eq!(v.len(), 3);
        for r in &v {
            r.validate(&t).unwrap();
        }
        assert_ne!(v[0], v[1]);
        assert_ne!(v[1], v[2]);
    }

    #[test]
    fn narrow_weights_stay_near_minimum_hops() {
        let t = random_topology(10, 5, 1.0, 4).unwrap();
        let hops = hop_count_routing(&t).unwrap();
        let v = weighted_variants_up_to(&t, 40, 1.5, 9).unwrap();
        assert_eq!(v.len(), 40);
        for r in &v {
            r.validate(&t).unwrap();
            for (p, q) in r.paths().iter().zip(hops.paths()) {
                assert!(p.links.len() as f64 <= 1.5 * q.links.len() as f64, "{p:?} vs {q:?}");
            }
        }
        assert!(weighted_variants_up_to(&t, 3, 1.0, 9).is_err());
    }

    #[test]
    fn two_node_line_has_one_scheme() {
        let t = ring(2, 1.0).unwrap();
        assert_eq!(random_routing_variants(&t, 1, 3).unwrap().len(), 1);
        assert!(matches!(
            random_routing_variants(&t, 2, 3),
            Err(GraphError::NotEnoughVariants { found: 1, .. })
        ));
    }

    #[test]
    fn nsf_hundred_variants() {
        let t = nsfnet(1.0);
        let v = random_routing_variants(&t, 100, 42).unwrap();
        assert_eq!(v.len(), 100);
        let distinct: HashSet<_> = v.iter().collect();
        assert_eq!(distinct.len(), 100);
        for r in &v {
            assert_eq!(r.len(), 182);
            r.validate(&t).unwrap();
        }
    }

    #[test]
    fn ring_failure_reroutes_long_way() {
        let t = ring(4, 1.0).unwrap();
        let failed = t.link_between(0, 1).unwrap();
        let out = apply_link_failures(&t, &[failed]).unwrap();
        let p = out.routing.path(4, 0, 1);
        assert_eq!(p.len(), 3);
        assert_eq!(p.nodes(&out.topology), vec![0, 3, 2, 1]);
        assert!(!out.original_ids.contains(&failed));
    }

    #[test]
    fn empty_failure_set_is_identity() {
        let t = nsfnet(1.0);
        let out = apply_link_failures(&t, &[]).unwrap();
        assert_eq!(out.topology, t);
        assert_eq!(out.routing, hop_count_routing(&t).unwrap());
    }

    #[test]
    fn partition_is_an_error() {
        let t = ring(2, 1.0).unwrap();
        assert_eq!(apply_link_failures(&t, &[0]).unwrap_err(), GraphError::Disconnected);
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let t = nsfnet(10.0);
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.starts_with("{\"nodes\":14,\"links\":[{\"id\":0,\"src\":0,\"dst\":1,\"capacity\":10.0}"));
        let back: Topology = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        let dup =
            r#"{"nodes":3,"links":[{"id":0,"src":0,"dst":1,"capacity":1.0},{"id":1,"src":0,"dst":1,"capacity":1.0}]}"#;
        assert!(serde_json::from_str::<Topology>(dup).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_topology() -> impl Strategy<Value = (Topology, Vec<f64>)> {
            (3usize..=6, 0usize..6, any::<u64>()).prop_flat_map(|(n, chords, seed)| {
                let t = random_topology(n, chords, 1.0, seed).unwrap();
                let links = t.link_count();
                (Just(t), proptest::collection::vec(1.0f64..10.0, links))
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dijkstra_matches_exhaustive((t, w) in small_topology()) {
                let r = shortest_path_routing(&t, &w).unwrap();
                r.validate(&t).unwrap();
                let n = t.node_count();
                for (s, d) in pairs(n) {
                    let cost: f64 = r.path(n, s, d).links.iter().map(|&l| w[l]).sum();
                    prop_assert!((cost - brute_force_min(&t, &w, s, d)).abs() < 1e-9);
                }
            }

            #[test]
            fn generators_emit_valid_schemes(n in 3usize..8, chords in 0usize..5, seed in any::<u64>()) {
                let t = random_topology(n, chords, 1.0, seed).unwrap();
                for r in random_routing_variants(&t, 2, seed).unwrap_or_default() {
                    prop_assert!(r.validate(&t).is_ok());
                }
            }

            #[test]
            fn failures_never_use_failed_links(n in 4usize..9, chords in 1usize..5, seed in any::<u64>()) {
                let t = random_topology(n, chords, 1.0, seed).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let failed = sample_edge_failures(&t, 1, &mut rng).unwrap();
                let out = apply_link_failures(&t, &failed).unwrap();
                for p in out.routing.paths() {
                    for &l in &p.links {
                        prop_assert!(!failed.contains(&out.original_ids[l]));
                    }
                }
            }
        }
    }
}
