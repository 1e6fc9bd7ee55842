//! From converged replicas to clusters.
//!
//! 1. A similarity graph over replicas in the augmented space (y_i, V(y_i)),
//!    symmetric m-nearest-neighbour edges with Gaussian weights.
//! 2. Louvain modularity maximization gives preliminary clusters (wells).
//! 3. Centroids are the mean replica position of each well.
//! 4. Energy barriers between wells on a network of observations, replicas
//!    and centroids, each linked to its m nearest observations and its m
//!    nearest replicas: ΔV[i→j] is the lowest achievable maximum potential
//!    along a path from centroid i to j (nodes and points probed on the
//!    edges), minus V at centroid i.
//! 5. Wells whose cheaper directed barrier is ≤ E_th are merged (union-find).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::descent::DescentResult;
use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::potential::PotentialField;

/// Default neighbour count for both the similarity graph and the path network.
pub const DEFAULT_GRAPH_NEIGHBOURS: usize = 10;

/// Undirected weighted graph as adjacency lists (each edge stored twice).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
        }
    }

    /// Adds (or overwrites) the undirected edge a–b.
    pub fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        for (u, v) in [(a, b), (b, a)] {
            match self.adj[u].iter_mut().find(|e| e.0 == v) {
                Some(e) => e.1 = w,
                None => self.adj[u].push((v, w)),
            }
            if a == b {
                break;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbours(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.adj[a].iter().find(|e| e.0 == b).map(|e| e.1)
    }

    fn sort(&mut self) {
        for l in &mut self.adj {
            l.sort_by_key(|e| e.0);
        }
    }

    /// Connected component id of every node.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.len()];
        let mut next = 0;
        for s in 0..self.len() {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Symmetric m-NN pairs of the rows of `points` (ties by lower index), with
/// the squared distance of each pair.
fn knn_pairs(points: &Matrix, m: usize) -> Vec<(usize, usize, f64)> {
    knn_pairs_within(points, 0..points.nrows(), m)
}

/// Like [`knn_pairs`], but neighbours are drawn only from the rows in `pool`.
fn knn_pairs_within(
    points: &Matrix,
    pool: std::ops::Range<usize>,
    m: usize,
) -> Vec<(usize, usize, f64)> {
    let n = points.nrows();
    let m = m.min(pool.len().saturating_sub(1));
    let mut pairs = Vec::with_capacity(n * m);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for i in 0..n {
        cand.clear();
        cand.extend(
            pool.clone()
                .filter(|&j| j != i)
                .map(|j| (sq_dist(points.row(i), points.row(j)), j)),
        );
        if m < cand.len() {
            cand.select_nth_unstable_by(m, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        for &(d2, j) in cand.iter().take(m) {
            pairs.push((i, j, d2));
        }
    }
    pairs
}

/// Similarity graph on replicas in the augmented (y, V) space.
pub fn build_similarity_graph(result: &DescentResult, m: usize) -> Result<WeightedGraph> {
    let n = result.final_points.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "similarity graph needs at least two replicas".into(),
        ));
    }
    let d = result.final_points.ncols();
    let mut aug = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        aug.extend_from_slice(result.final_points.row(i));
        aug.push(result.final_potentials[i]);
    }
    let aug = Matrix::from_vec(n, d + 1, aug)?;
    let pairs = knn_pairs(&aug, m);
    let h = pairs.iter().map(|p| p.2.sqrt()).sum::<f64>() / pairs.len() as f64;
    let mut g = WeightedGraph::new(n);
    for (i, j, d2) in pairs {
        let w = if d2 == 0.0 {
            1.0
        } else {
            (-d2 / (2.0 * h * h)).exp()
        };
        g.add_edge(i, j, w);
    }
    g.sort();
    Ok(g)
}

/// Deterministic Louvain: nodes are swept in ascending id order; a node moves
/// only for a strictly positive modularity gain, ties going to the lower
/// community id. Returns contiguous ids numbered by lowest member.
pub fn detect_communities(graph: &WeightedGraph) -> Vec<usize> {
    let n = graph.len();
    // current level graph: adjacency with self loops
    let mut level: Vec<Vec<(usize, f64)>> = graph.adj.clone();
    let mut membership: Vec<usize> = (0..n).collect();
    loop {
        let (comm, moved) = louvain_level(&level);
        let relabel = contiguous(&comm);
        let k = relabel.iter().copied().max().map_or(0, |m| m + 1);
        for c in membership.iter_mut() {
            *c = relabel[*c];
        }
        if !moved || k == level.len() {
            break;
        }
        let mut next: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
        for (u, list) in level.iter().enumerate() {
            let cu = relabel[u];
            for &(v, w) in list {
                let cv = relabel[v];
                match next[cu].iter_mut().find(|e| e.0 == cv) {
                    Some(e) => e.1 += w,
                    None => next[cu].push((cv, w)),
                }
            }
        }
        for l in &mut next {
            l.sort_by_key(|e| e.0);
        }
        level = next;
    }
    contiguous(&membership)
}

fn contiguous(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// One local-moving phase. A self loop holds the internal weight of an
/// aggregated community already counted from both ends, so it enters the
/// degree once.
fn louvain_level(adj: &[Vec<(usize, f64)>]) -> (Vec<usize>, bool) {
    let n = adj.len();
    let degree: Vec<f64> = adj
        .iter()
        .map(|l| l.iter().map(|&(_, w)| w).sum())
        .collect();
    let two_m: f64 = degree.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    if two_m <= 0.0 {
        return (comm, false);
    }
    let mut tot = degree.clone();
    let mut moved_any = false;
    let mut links: Vec<f64> = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        let mut moved = false;
        for u in 0..n {
            let old = comm[u];
            touched.clear();
            for &(v, w) in &adj[u] {
                if v == u {
                    continue;
                }
                let c = comm[v];
                if links[c] == 0.0 && !touched.contains(&c) {
                    touched.push(c);
                }
                links[c] += w;
            }
            tot[old] -= degree[u];
            let gain = |c: usize, link: f64| link - tot[c] * degree[u] / two_m;
            let mut best = old;
            let mut best_gain = gain(old, links[old]);
            touched.sort_unstable();
            for &c in touched.iter().filter(|&&c| c != old) {
                let g = gain(c, links[c]);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += degree[u];
            if best != old {
                comm[u] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                links[c] = 0.0;
            }
            links[old] = 0.0;
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

/// Mean replica position per cluster.
pub fn compute_centroids(assignment: &[usize], points: &Matrix) -> Result<Matrix> {
    if assignment.len() != points.nrows() {
        return Err(Error::LengthMismatch {
            left: assignment.len(),
            right: points.nrows(),
        });
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let d = points.ncols();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    for (c, &cnt) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|s| *s /= cnt as f64);
    }
    Ok(sums)
}

#[derive(Copy, Clone, PartialEq)]
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

/// Barriers between `sources` on a network: for every ordered pair, the
/// lowest possible value of the highest potential met along a path, minus
/// the potential of the start. Nodes carry `potentials`; each edge weight is
/// the highest potential on the edge's interior (−∞ when only the endpoints
/// count). Computed by a bottleneck variant of Dijkstra. Unreachable targets
/// give +∞.
pub fn barriers_on_graph(graph: &WeightedGraph, potentials: &[f64], sources: &[usize]) -> Matrix {
    let k = sources.len();
    let n = graph.len();
    let mut out = Matrix::zeros(k, k);
    let mut level = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    for (a, &s) in sources.iter().enumerate() {
        level.iter_mut().for_each(|v| *v = f64::INFINITY);
        done.iter_mut().for_each(|v| *v = false);
        level[s] = potentials[s];
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist: level[s],
            node: s,
        });
        while let Some(HeapEntry { dist: lu, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &(v, peak) in graph.neighbours(u) {
                let alt = lu.max(potentials[v]).max(peak);
                if alt < level[v] {
                    level[v] = alt;
                    heap.push(HeapEntry { dist: alt, node: v });
                }
            }
        }
        for (b, &t) in sources.iter().enumerate() {
            let v = if a == b {
                0.0
            } else if level[t].is_finite() {
                (level[t] - potentials[s]).max(0.0)
            } else {
                f64::INFINITY
            };
            out.set(a, b, v);
        }
    }
    out
}

/// Interior points at which an edge of the path network is probed.
pub const EDGE_SAMPLES: usize = 3;

/// ΔV between centroids on the m-NN network whose nodes are the observations
/// (potentials `observation_v`), the converged replicas and the centroids.
pub fn energy_barriers(
    observations: &Matrix,
    observation_v: &[f64],
    result: &DescentResult,
    centroids: &Matrix,
    field: &PotentialField<'_>,
    m: usize,
) -> Result<Matrix> {
    if centroids.nrows() == 0 {
        return Err(Error::InvalidInput("no centroids".into()));
    }
    let n = observations.nrows();
    let r = result.final_points.nrows();
    let k = centroids.nrows();
    let d = observations.ncols();
    let mut all = observations.as_slice().to_vec();
    all.extend_from_slice(result.final_points.as_slice());
    all.extend_from_slice(centroids.as_slice());
    let nodes = Matrix::from_vec(n + r + k, d, all)?;
    let mut pots = observation_v.to_vec();
    pots.extend_from_slice(&result.final_potentials);
    pots.extend(centroids.rows_iter().map(|c| field.potential(c)));
    let mut g = WeightedGraph::new(n + r + k);
    // replicas pile up at minima and would crowd out the observations, so
    // each node links to its m nearest of both kinds separately
    let mut probe = vec![0.0; d];
    let mut pairs = knn_pairs_within(&nodes, 0..n, m);
    pairs.extend(knn_pairs_within(&nodes, n..n + r, m));
    for (i, j, _) in pairs {
        let (a, b) = (nodes.row(i), nodes.row(j));
        let mut peak = f64::NEG_INFINITY;
        for s in 1..=EDGE_SAMPLES {
            let t = s as f64 / (EDGE_SAMPLES + 1) as f64;
            for (p, (x, y)) in probe.iter_mut().zip(a.iter().zip(b)) {
                *p = x + t * (y - x);
            }
            peak = peak.max(field.potential(&probe));
        }
        g.add_edge(i, j, peak);
    }
    g.sort();
    let sources: Vec<usize> = (n + r..n + r + k).collect();
    Ok(barriers_on_graph(&g, &pots, &sources))
}

/// Cluster structure over the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster id of every observation, contiguous 0..k.
    pub assignment: Vec<usize>,
    pub centroids: Matrix,
    pub member_sets: Vec<Vec<usize>>,
    /// k×k directed barriers; row = from, column = to.
    pub energy_matrix: Matrix,
    pub e_th_used: f64,
    /// Well (pre-merge community) of every observation.
    pub wells: Vec<usize>,
    /// Barriers between wells before any merging.
    pub well_energy: Matrix,
    /// Cluster id of every well.
    pub well_cluster: Vec<usize>,
    /// Well each well drains into; itself for wells at a local minimum.
    pub well_sink: Vec<usize>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.member_sets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    /// m of the augmented-space similarity graph.
    pub similarity_neighbours: usize,
    /// m of the barrier path network.
    pub path_neighbours: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            similarity_neighbours: DEFAULT_GRAPH_NEIGHBOURS,
            path_neighbours: DEFAULT_GRAPH_NEIGHBOURS,
        }
    }
}

/// Communities, centroids and barriers of a descent result; nothing merged yet.
pub fn allocate_wells(
    observations: &Matrix,
    result: &DescentResult,
    field: &PotentialField<'_>,
    params: &GraphParams,
) -> Result<Clustering> {
    let n = observations.nrows();
    let wells = if n < 2 {
        vec![0; n]
    } else {
        let g = build_similarity_graph(result, params.similarity_neighbours)?;
        detect_communities(&g)
    };
    let centroids = compute_centroids(&wells, &result.final_points)?;
    let energy = energy_barriers(
        observations,
        &result.initial_potentials,
        result,
        &centroids,
        field,
        params.path_neighbours,
    )?;
    let k = centroids.nrows();
    let well_v: Vec<f64> = centroids.rows_iter().map(|c| field.potential(c)).collect();
    let well_sink = drain_targets(&energy, &well_v, &centroids);
    Ok(Clustering {
        assignment: wells.clone(),
        member_sets: member_sets(&wells, k),
        centroids,
        energy_matrix: energy.clone(),
        e_th_used: 0.0,
        wells,
        well_energy: energy,
        well_cluster: (0..k).collect(),
        well_sink,
    })
}

/// Resolves wells whose centroid is not a local minimum.
///
/// A well with a zero barrier towards a well of strictly lower centroid
/// potential lies on a slope (typically replicas that stalled in a flat
/// region). It drains into the nearest such well, following chains down to a
/// minimum. Such wells never link two clusters during merging.
pub fn drain_targets(energy: &Matrix, well_v: &[f64], centroids: &Matrix) -> Vec<usize> {
    let k = well_v.len();
    let mut next: Vec<usize> = (0..k).collect();
    for j in 0..k {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..k {
            if i != j && energy.get(j, i) == 0.0 && well_v[i] < well_v[j] {
                let d = sq_dist(centroids.row(j), centroids.row(i));
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        if let Some((_, i)) = best {
            next[j] = i;
        }
    }
    (0..k)
        .map(|mut j| {
            while next[j] != j {
                j = next[j];
            }
            j
        })
        .collect()
}

fn member_sets(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        sets[c].push(i);
    }
    sets
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges wells connected by a barrier ≤ `e_th` in either direction.
///
/// Merging always starts from the wells, so the result depends only on
/// `e_th`: idempotent, and never more clusters for a larger threshold. The
/// barrier between merged clusters is the cheapest barrier between any of
/// their wells; centroids are the mean replica position of the members.
pub fn merge_by_threshold(
    clustering: &Clustering,
    replicas: &Matrix,
    e_th: f64,
) -> Result<Clustering> {
    let kw = clustering.well_energy.nrows();
    let sink = &clustering.well_sink;
    let mut parent: Vec<usize> = (0..kw).collect();
    for a in (0..kw).filter(|&a| sink[a] == a) {
        for b in (a + 1..kw).filter(|&b| sink[b] == b) {
            let e = clustering
                .well_energy
                .get(a, b)
                .min(clustering.well_energy.get(b, a));
            if e <= e_th {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi] = lo;
                }
            }
        }
    }
    for w in 0..kw {
        parent[w] = find(&mut parent, sink[w]);
    }
    let roots: Vec<usize> = (0..kw).map(|w| find(&mut parent, w)).collect();
    let well_cluster = contiguous(&roots);
    let k = well_cluster.iter().copied().max().map_or(0, |m| m + 1);
    let assignment: Vec<usize> = clustering.wells.iter().map(|&w| well_cluster[w]).collect();
    let centroids = compute_centroids(&assignment, replicas)?;
    let mut energy = Matrix::from_vec(k, k, vec![f64::INFINITY; k * k])?;
    for a in (0..kw).filter(|&a| sink[a] == a) {
        for b in (0..kw).filter(|&b| sink[b] == b) {
            let (ca, cb) = (well_cluster[a], well_cluster[b]);
            if ca != cb {
                let e = clustering.well_energy.get(a, b);
                if e < energy.get(ca, cb) {
                    energy.set(ca, cb, e);
                }
            }
        }
    }
    for c in 0..k {
        energy.set(c, c, 0.0);
    }
    Ok(Clustering {
        member_sets: member_sets(&assignment, k),
        assignment,
        centroids,
        energy_matrix: energy,
        e_th_used: e_th,
        wells: clustering.wells.clone(),
        well_energy: clustering.well_energy.clone(),
        well_cluster,
        well_sink: clustering.well_sink.clone(),
    })
}
