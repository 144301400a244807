//! Sliding-window video graph.
//!
//! A window anchored at frame `t` spans frames `t..=t+w`. Inside a window, a
//! pair `(a, b)` is kept when its temporal gap `|b - a|` belongs to the
//! strided offset set
//!
//! ```text
//! G(w, s) = { 1, 1 + s, 1 + 2s, ... } ∩ [1, w]
//! ```
//!
//! so `stride = 1` keeps every pair of the window, and larger strides thin out
//! the long-range pairs while always keeping adjacent frames. Windows slide by
//! one frame over `t = 0..=N-w`; a pair with gap `g ≤ w` fits in at least one
//! window, so the union over all windows (which is what the graph stores) is
//! exactly the set of pairs whose gap is in `G`. With `F = N + 1` frames the
//! number of canonical edges is therefore
//!
//! ```text
//! |E| = Σ_{g ∈ G(w, s)} (F - g)
//! ```
//!
//! and `2|E|` ordered pairs when reverse edges are requested. For `F = 60`,
//! `w = 9`, `s = 2` that is `G = {1, 3, 5, 7, 9}`, 275 canonical edges and
//! 550 ordered pairs.
//!
//! Canonical edges are emitted once per unordered pair as `(min, max)`, sorted
//! lexicographically.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("window {window} must satisfy 1 <= window < num_frames ({num_frames})")]
    InvalidWindow { window: usize, num_frames: usize },
    #[error("stride must be at least 1")]
    InvalidStride,
}

/// Directed frame pair. Pairwise pointmaps of an edge are expressed in the
/// camera frame of `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl Edge {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    pub fn reversed(&self) -> Self {
        Self {
            from: self.to,
            to: self.from,
        }
    }

    pub fn gap(&self) -> usize {
        self.from.abs_diff(self.to)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoGraph {
    pub num_frames: usize,
    pub window: usize,
    pub stride: usize,
    pub edges: Vec<Edge>,
}

/// Temporal gaps kept inside a window of size `window` with the given stride.
pub fn window_offsets(window: usize, stride: usize) -> Vec<usize> {
    (1..=window).step_by(stride.max(1)).collect()
}

/// Closed-form canonical edge count of [`build_window_graph`].
pub fn window_edge_count(num_frames: usize, window: usize, stride: usize) -> usize {
    window_offsets(window, stride)
        .into_iter()
        .map(|g| num_frames - g)
        .sum()
}

pub fn build_window_graph(
    num_frames: usize,
    window: usize,
    stride: usize,
) -> Result<VideoGraph, GraphError> {
    if num_frames < 2 {
        return Err(GraphError::TooFewFrames(num_frames));
    }
    if window < 1 || window >= num_frames {
        return Err(GraphError::InvalidWindow { window, num_frames });
    }
    if stride < 1 {
        return Err(GraphError::InvalidStride);
    }
    let offsets = window_offsets(window, stride);
    let mut edges = Vec::with_capacity(window_edge_count(num_frames, window, stride));
    for a in 0..num_frames {
        for &g in &offsets {
            if a + g < num_frames {
                edges.push(Edge::new(a, a + g));
            }
        }
    }
    Ok(VideoGraph {
        num_frames,
        window,
        stride,
        edges,
    })
}

impl VideoGraph {
    /// Adds the reverse of every canonical edge, giving the ordered-pair set.
    pub fn with_reverse_edges(mut self) -> Self {
        let reversed: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| e.from < e.to)
            .map(Edge::reversed)
            .collect();
        for e in reversed {
            if !self.edges.contains(&e) {
                self.edges.push(e);
            }
        }
        self.edges.sort();
        self
    }

    pub fn contains(&self, edge: &Edge) -> bool {
        self.edges.binary_search(edge).is_ok()
    }

    pub fn missing_adjacent_edges(&self) -> Vec<usize> {
        (0..self.num_frames.saturating_sub(1))
            .filter(|&t| !self.contains(&Edge::new(t, t + 1)))
            .collect()
    }

    /// Whether the undirected graph connects every frame.
    pub fn is_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.num_frames).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.from), find(&mut parent, e.to));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..self.num_frames).all(|t| find(&mut parent, t) == root)
    }
}
