//! Construction of the weight graph and per-instance subgraphs.
//!
//! Nodes are laid out modality-major: for a graph over `m` segments, node
//! `mod.index() * m + t` is modality `mod` at the graph's `t`-th segment.
//! Edges are undirected and stored once with `a < b`.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::modality::Modality;
use crate::segment::InstancePartition;

/// Default cosine-distance threshold for similarity edges.
pub const DEFAULT_EPSILON: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Temporal,
    Epsilon,
    Intermodal,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Temporal => "temporal",
            EdgeKind::Epsilon => "epsilon",
            EdgeKind::Intermodal => "intermodal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub modality: Modality,
    pub segment_index: usize,
    pub representation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Number of node pairs whose distance fell back to 1 because a vector had zero norm.
    pub zero_norm_pairs: usize,
}

/// Cosine distance plus whether the zero-norm fallback was used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineDistance {
    pub value: f64,
    pub zero_norm: bool,
}

/// `1 - u.v / (|u| |v|)`, or 1 when either vector has zero norm.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> CosineDistance {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return CosineDistance {
            value: 1.0,
            zero_norm: true,
        };
    }
    let cos = (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0);
    CosineDistance {
        value: 1.0 - cos,
        zero_norm: false,
    }
}

/// Same-modality edges over `rows` (one row per segment, in time order):
/// temporal neighbours plus every pair closer than `epsilon`. Indices are
/// row positions; a pair that is both temporal and similar is tagged temporal.
pub fn build_modality_edges<T: Scalar>(rows: &[&[T]], epsilon: f64) -> (Vec<Edge>, usize) {
    let n = rows.len();
    let mut edges: BTreeMap<(usize, usize), EdgeKind> = BTreeMap::new();
    let mut zero_norm = 0;
    for i in 0..n.saturating_sub(1) {
        edges.insert((i, i + 1), EdgeKind::Temporal);
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(rows[i], rows[j]);
            zero_norm += usize::from(d.zero_norm);
            if d.value < epsilon {
                edges.entry((i, j)).or_insert(EdgeKind::Epsilon);
            }
        }
    }
    let edges = edges.into_iter().map(|((a, b), kind)| Edge { a, b, kind }).collect();
    (edges, zero_norm)
}

/// The three pairwise cross-modality edges at each of `n` timestamps, using
/// modality-major node ids.
pub fn build_intermodal_edges(n: usize) -> Vec<Edge> {
    let id = |m: Modality, t: usize| m.index() * n + t;
    let mut edges = Vec::with_capacity(3 * n);
    for t in 0..n {
        for (x, y) in [
            (Modality::Visual, Modality::Audio),
            (Modality::Visual, Modality::Text),
            (Modality::Audio, Modality::Text),
        ] {
            edges.push(Edge {
                a: id(x, t),
                b: id(y, t),
                kind: EdgeKind::Intermodal,
            });
        }
    }
    edges
}

fn build_graph<T: Scalar>(projected: [&Tensor<T>; 3], segments: std::ops::Range<usize>, epsilon: f64) -> VideoGraph {
    let m = segments.len();
    let mut nodes = Vec::with_capacity(3 * m);
    let mut edges = Vec::new();
    let mut zero_norm_pairs = 0;
    for modality in Modality::ALL {
        let feats = projected[modality.index()];
        let rows: Vec<&[T]> = segments.clone().map(|s| feats.row(s)).collect();
        let offset = modality.index() * m;
        let (local, zn) = build_modality_edges(&rows, epsilon);
        zero_norm_pairs += zn;
        edges.extend(local.into_iter().map(|e| Edge {
            a: e.a + offset,
            b: e.b + offset,
            kind: e.kind,
        }));
        for (row, s) in rows.iter().zip(segments.clone()) {
            nodes.push(Node {
                modality,
                segment_index: s,
                representation: row.iter().map(|x| x.as_f64()).collect(),
            });
        }
    }
    edges.extend(build_intermodal_edges(m));
    edges.sort();
    VideoGraph {
        nodes,
        edges,
        zero_norm_pairs,
    }
}

fn check_blocks<T: Scalar>(projected: [&Tensor<T>; 3]) -> (usize, usize) {
    let (n, d) = (projected[0].rows(), projected[0].cols());
    for p in projected {
        assert_eq!(p.rows(), n, "all modalities must share the segment count");
        assert_eq!(p.cols(), d, "all modalities must share the representation width");
    }
    (n, d)
}

/// Graph over all `3N` modality-segment nodes.
pub fn build_weight_graph<T: Scalar>(projected: [&Tensor<T>; 3], epsilon: f64) -> VideoGraph {
    let (n, _) = check_blocks(projected);
    build_graph(projected, 0..n, epsilon)
}

/// One subgraph per instance, each built from that instance's segments only.
pub fn build_instance_subgraphs<T: Scalar>(
    projected: [&Tensor<T>; 3],
    partition: &InstancePartition,
    epsilon: f64,
) -> Vec<VideoGraph> {
    let (n, _) = check_blocks(projected);
    assert_eq!(n, partition.n_segments(), "partition does not match the segment count");
    (0..partition.k())
        .map(|i| build_graph(projected, partition.segments(i), epsilon))
        .collect()
}

/// Directed message lists for message passing: every undirected edge in both
/// directions plus one self-loop per node, ordered by target node.
#[derive(Clone, Debug)]
pub struct MessageIndex {
    pub n_nodes: usize,
    pub targets: Arc<[usize]>,
    pub sources: Arc<[usize]>,
}

impl MessageIndex {
    /// Degree of each node counting its self-loop.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &t in self.targets.iter() {
            deg[t] += 1;
        }
        deg
    }
}

impl VideoGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn message_index(&self) -> MessageIndex {
        let n = self.nodes.len();
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n + 2 * self.edges.len());
        pairs.extend((0..n).map(|i| (i, i)));
        for e in &self.edges {
            pairs.push((e.a, e.b));
            pairs.push((e.b, e.a));
        }
        pairs.sort_unstable();
        let (targets, sources): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        MessageIndex {
            n_nodes: n,
            targets: targets.into(),
            sources: sources.into(),
        }
    }

    /// Writes `src dst kind` lines for external visualization.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.a, e.b, e.kind.name())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::instance_partition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn cosine_distance_cases() {
        let v = [0.3, -1.2, 4.0];
        assert!(cosine_distance(&v, &v).value.abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).value - 1.0).abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_maps_to_one() {
        let d = cosine_distance(&[0.0f32, 0.0], &[1.0, 2.0]);
        assert_eq!(d.value, 1.0);
        assert!(d.zero_norm);
    }

    #[test]
    fn epsilon_zero_gives_temporal_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(4, 5, &mut rng);
        let rows: Vec<&[f64]> = (0..4).map(|i| x.row(i)).collect();
        let (edges, _) = build_modality_edges(&rows, 0.0);
        assert_eq!(edges.len(), 3);
        assert!(edges.iter().all(|e| e.kind == EdgeKind::Temporal && e.b == e.a + 1));
    }

    #[test]
    fn identical_rows_add_one_epsilon_edge() {
        let row = [1.0, 2.0, -0.5];
        let rows: Vec<&[f64]> = vec![&row, &row, &row];
        let (edges, _) = build_modality_edges(&rows, 0.5);
        assert_eq!(
            edges,
            vec![
                Edge { a: 0, b: 1, kind: EdgeKind::Temporal },
                Edge { a: 0, b: 2, kind: EdgeKind::Epsilon },
                Edge { a: 1, b: 2, kind: EdgeKind::Temporal },
            ]
        );
    }

    #[test]
    fn intermodal_counts() {
        assert_eq!(build_intermodal_edges(1).len(), 3);
        assert_eq!(build_intermodal_edges(10).len(), 30);
    }

    #[test]
    fn weight_graph_small_counts() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let g = build_weight_graph([&a, &a, &a], 0.0);
        assert_eq!(g.n_nodes(), 6);
        assert_eq!(g.count(EdgeKind::Temporal), 3);
        assert_eq!(g.count(EdgeKind::Intermodal), 6);
        assert_eq!(g.edges.len(), 9);

        let one = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        let g1 = build_weight_graph([&one, &one, &one], 0.4);
        assert_eq!((g1.n_nodes(), g1.edges.len()), (3, 3));
    }

    #[test]
    fn singleton_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(10, 4, &mut rng);
        let subs = build_instance_subgraphs([&x, &x, &x], &instance_partition(10, 10).unwrap(), 0.4);
        assert_eq!(subs.len(), 10);
        for g in &subs {
            assert_eq!(g.n_nodes(), 3);
            assert_eq!(g.count(EdgeKind::Intermodal), 3);
            assert_eq!(g.count(EdgeKind::Temporal), 0);
        }
    }

    #[test]
    fn twelve_by_four_subgraph_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(12, 8, &mut rng);
        let subs = build_instance_subgraphs([&x, &x, &x], &instance_partition(12, 4).unwrap(), 0.0);
        for (i, g) in subs.iter().enumerate() {
            assert_eq!(g.n_nodes(), 9);
            assert_eq!(g.edges.len(), 15);
            assert!(g.nodes.iter().all(|n| n.segment_index / 3 == i));
        }
        let mut all: Vec<(Modality, usize)> = subs
            .iter()
            .flat_map(|g| g.nodes.iter().map(|n| (n.modality, n.segment_index)))
            .collect();
        all.sort();
        let w = build_weight_graph([&x, &x, &x], 0.0);
        let mut expected: Vec<(Modality, usize)> = w.nodes.iter().map(|n| (n.modality, n.segment_index)).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn message_index_degrees_match_dense_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(6, 3, &mut rng);
        let g = build_weight_graph([&x, &x, &x], 0.6);
        let n = g.n_nodes();
        let mut adj = vec![vec![false; n]; n];
        for e in &g.edges {
            assert_ne!(e.a, e.b);
            adj[e.a][e.b] = true;
            adj[e.b][e.a] = true;
        }
        let deg = g.message_index().degrees();
        for i in 0..n {
            assert!((0..n).all(|j| adj[i][j] == adj[j][i]));
            assert_eq!(deg[i], 1 + adj[i].iter().filter(|&&b| b).count());
        }
    }

    #[test]
    fn edge_list_export() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let g = build_weight_graph([&a, &a, &a], 0.4);
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 1 intermodal\n0 2 intermodal\n1 2 intermodal\n");
    }
}
