//! Interval arithmetic over a video timeline: equal segments, sentence
//! assignment and the grouping of consecutive segments into instances.
//!
//! All intervals are half-open `[start, end)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
    #[error("segment count must be at least 1")]
    ZeroSegments,
    #[error("instance count must be at least 1")]
    ZeroInstances,
    #[error("{k} instances do not evenly divide {n} segments")]
    Indivisible { n: usize, k: usize },
}

/// Half-open time interval in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Positive-measure overlap. Spans that only touch at an endpoint do not overlap.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start.max(other.start) < self.end.min(other.end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentLayout {
    pub duration: f64,
    pub boundaries: Vec<Span>,
}

impl SegmentLayout {
    pub fn n_segments(&self) -> usize {
        self.boundaries.len()
    }
}

/// Cuts `[0, duration)` into `n` equal contiguous segments.
pub fn segment_boundaries(duration: f64, n: usize) -> Result<SegmentLayout, SegmentError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(SegmentError::Duration(duration));
    }
    if n == 0 {
        return Err(SegmentError::ZeroSegments);
    }
    let step = duration / n as f64;
    let boundaries = (0..n)
        .map(|i| {
            let start = if i == 0 { 0.0 } else { i as f64 * step };
            // last edge is pinned so the layout tiles exactly [0, duration)
            let end = if i + 1 == n { duration } else { (i + 1) as f64 * step };
            Span::new(start, end)
        })
        .collect();
    Ok(SegmentLayout { duration, boundaries })
}

/// For each segment, the indices of sentences whose span overlaps it.
///
/// A sentence straddling a boundary lands in every segment it overlaps.
pub fn assign_sentences(sentences: &[Span], layout: &SegmentLayout) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); layout.n_segments()];
    for (j, s) in sentences.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        // segments are sorted; skip straight to the first candidate
        let first = layout.boundaries.partition_point(|seg| seg.end <= s.start);
        for (i, seg) in layout.boundaries.iter().enumerate().skip(first) {
            if seg.start >= s.end {
                break;
            }
            if seg.overlaps(s) {
                out[i].push(j);
            }
        }
    }
    out
}

/// `K` equal groups of consecutive segment indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePartition {
    n_segments: usize,
    k: usize,
}

impl InstancePartition {
    pub fn new(n: usize, k: usize) -> Result<Self, SegmentError> {
        if n == 0 {
            return Err(SegmentError::ZeroSegments);
        }
        if k == 0 {
            return Err(SegmentError::ZeroInstances);
        }
        if !n.is_multiple_of(k) {
            return Err(SegmentError::Indivisible { n, k });
        }
        Ok(Self { n_segments: n, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    /// Segments per instance.
    pub fn instance_len(&self) -> usize {
        self.n_segments / self.k
    }

    /// Segment indices covered by instance `i`.
    pub fn segments(&self, i: usize) -> std::ops::Range<usize> {
        let m = self.instance_len();
        i * m..(i + 1) * m
    }

    pub fn omega(&self) -> Vec<Vec<usize>> {
        (0..self.k).map(|i| self.segments(i).collect()).collect()
    }

    /// Instance owning each segment.
    pub fn instance_of(&self) -> Vec<usize> {
        let m = self.instance_len();
        (0..self.n_segments).map(|s| s / m).collect()
    }
}

pub fn instance_partition(n: usize, k: usize) -> Result<InstancePartition, SegmentError> {
    InstancePartition::new(n, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_split_of_ten_seconds() {
        let layout = segment_boundaries(10.0, 5).unwrap();
        let expected: Vec<Span> = (0..5).map(|i| Span::new(2.0 * i as f64, 2.0 * (i + 1) as f64)).collect();
        assert_eq!(layout.boundaries, expected);
    }

    #[test]
    fn single_segment() {
        assert_eq!(segment_boundaries(1.0, 1).unwrap().boundaries, vec![Span::new(0.0, 1.0)]);
    }

    #[test]
    fn uneven_duration_tiles_exactly() {
        let layout = segment_boundaries(7.3, 4).unwrap();
        let total: f64 = layout.boundaries.iter().map(Span::len).sum();
        assert!((total - 7.3).abs() < 1e-12);
        for s in &layout.boundaries {
            assert!((s.len() - 1.825).abs() < 1e-12);
        }
        for w in layout.boundaries.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(layout.boundaries[3].end, 7.3);
    }

    #[test]
    fn rejects_bad_layout_inputs() {
        assert_eq!(segment_boundaries(0.0, 3), Err(SegmentError::Duration(0.0)));
        assert!(segment_boundaries(-1.0, 3).is_err());
        assert_eq!(segment_boundaries(5.0, 0), Err(SegmentError::ZeroSegments));
    }

    #[test]
    fn straddling_sentence_goes_to_both() {
        let layout = segment_boundaries(4.0, 2).unwrap();
        assert_eq!(assign_sentences(&[Span::new(1.5, 2.5)], &layout), vec![vec![0], vec![0]]);
    }

    #[test]
    fn exact_segment_span_only_assigned_once() {
        let layout = segment_boundaries(4.0, 2).unwrap();
        assert_eq!(assign_sentences(&[Span::new(0.0, 2.0)], &layout), vec![vec![0], vec![]]);
    }

    #[test]
    fn empty_transcript() {
        let layout = segment_boundaries(4.0, 4).unwrap();
        assert!(assign_sentences(&[], &layout).iter().all(Vec::is_empty));
    }

    #[test]
    fn matches_pairwise_overlap_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layout = segment_boundaries(30.0, 10).unwrap();
        let sentences: Vec<Span> = (0..50)
            .map(|_| {
                let a = rng.random_range(-2.0..32.0);
                let len = rng.random_range(0.0..6.0);
                Span::new(a, a + len)
            })
            .collect();
        let mut brute = vec![Vec::new(); 10];
        for (j, s) in sentences.iter().enumerate() {
            for (i, seg) in layout.boundaries.iter().enumerate() {
                if s.start.max(seg.start) < s.end.min(seg.end) {
                    brute[i].push(j);
                }
            }
        }
        assert_eq!(assign_sentences(&sentences, &layout), brute);
    }

    #[test]
    fn ten_singleton_instances() {
        let p = instance_partition(10, 10).unwrap();
        assert_eq!(p.omega(), (0..10).map(|i| vec![i]).collect::<Vec<_>>());
    }

    #[test]
    fn twelve_by_four() {
        let p = instance_partition(12, 4).unwrap();
        assert_eq!(
            p.omega(),
            vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9, 10, 11]]
        );
    }

    #[test]
    fn single_instance_covers_all() {
        assert_eq!(instance_partition(7, 1).unwrap().omega(), vec![(0..7).collect::<Vec<_>>()]);
    }

    #[test]
    fn indivisible_rejected() {
        assert_eq!(instance_partition(10, 4), Err(SegmentError::Indivisible { n: 10, k: 4 }));
        assert_eq!(instance_partition(10, 0), Err(SegmentError::ZeroInstances));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_cover(m in 1usize..8, k in 1usize..8) {
            let p = instance_partition(m * k, k).unwrap();
            let mut seen = vec![false; m * k];
            for set in p.omega() {
                prop_assert_eq!(set.len(), m);
                for w in set.windows(2) {
                    prop_assert_eq!(w[1], w[0] + 1);
                }
                for s in set {
                    prop_assert!(!seen[s]);
                    seen[s] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|b| b));
        }

        #[test]
        fn extending_a_sentence_never_drops_segments(
            start in 0.0f64..20.0, len in 0.0f64..5.0, extra in 0.0f64..5.0, before in 0.0f64..5.0
        ) {
            let layout = segment_boundaries(20.0, 8).unwrap();
            let short = assign_sentences(&[Span::new(start, start + len)], &layout);
            let long = assign_sentences(&[Span::new(start - before, start + len + extra)], &layout);
            for (a, b) in short.iter().zip(&long) {
                if !a.is_empty() {
                    prop_assert!(!b.is_empty());
                }
            }
        }
    }
}
