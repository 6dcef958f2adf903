//! COP-K-means clustering of chunk attractors, the unsupervised baseline
//! for linking speakers across chunks.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::stitch;
use crate::error::{Error, Result};
use crate::losses::Permutation;
use crate::model::ChunkResult;
use crate::scoring::DiarizationHypothesis;

/// Unordered pairs of points that must land in different clusters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CannotLinkSet {
    pairs: BTreeSet<(usize, usize)>,
    partners: Vec<Vec<usize>>,
}

impl CannotLinkSet {
    pub fn new(num_points: usize) -> Self {
        Self {
            pairs: BTreeSet::new(),
            partners: vec![Vec::new(); num_points],
        }
    }

    pub fn add(&mut self, a: usize, b: usize) -> Result<()> {
        let n = self.partners.len();
        if a == b || a >= n || b >= n {
            return Err(Error::InvalidInput(format!(
                "bad cannot-link pair ({a}, {b}) for {n} points"
            )));
        }
        if self.pairs.insert((a.min(b), a.max(b))) {
            self.partners[a].push(b);
            self.partners[b].push(a);
        }
        Ok(())
    }

    /// Links every pair within each group of consecutive indices.
    pub fn from_groups(sizes: &[usize]) -> Self {
        let mut set = Self::new(sizes.iter().sum());
        let mut base = 0;
        for &size in sizes {
            for i in base..base + size {
                for j in i + 1..base + size {
                    set.add(i, j).expect("in range");
                }
            }
            base += size;
        }
        set
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.partners.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn satisfied_by(&self, assignments: &[usize]) -> bool {
        self.pairs.iter().all(|&(a, b)| assignments[a] != assignments[b])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopKmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid after each pass.
    pub distortions: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(pick)));
        }
    }
    points.select(ndarray::Axis(0), &chosen)
}

/// Constrained K-means: points are assigned in index order to the nearest
/// centroid not already holding one of their cannot-link partners; centroids
/// are then re-estimated. Fails when a point has no admissible cluster.
pub fn cop_kmeans(
    points: &Array2<f64>,
    k: usize,
    cannot_links: &CannotLinkSet,
    max_iters: usize,
    seed: u64,
) -> Result<CopKmeansResult> {
    run_cop_kmeans(points, k, cannot_links, max_iters, seed).map_err(|e| match e {
        Failure::Error(e) => e,
        Failure::Blocked(i) => Error::ConstraintViolation(format!(
            "point {i} cannot join any of the {k} clusters without breaking a cannot-link"
        )),
    })
}

enum Failure {
    Error(Error),
    Blocked(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn run_cop_kmeans(
    points: &Array2<f64>,
    k: usize,
    cannot_links: &CannotLinkSet,
    max_iters: usize,
    seed: u64,
) -> std::result::Result<CopKmeansResult, Failure> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no points to cluster".into()).into());
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k must be in 1..={n}, got {k}")).into());
    }
    if cannot_links.num_points() != n {
        return Err(Error::InvalidInput(format!(
            "cannot-links cover {} points, got {n}",
            cannot_links.num_points()
        ))
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut distortions = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut next = vec![usize::MAX; n];
        for i in 0..n {
            let mut order: Vec<(f64, usize)> = (0..k).map(|c| (sq_dist(points.row(i), centroids.row(c)), c)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let admissible = order
                .into_iter()
                .find(|&(_, c)| cannot_links.partners[i].iter().all(|&j| next[j] != c));
            let (_, c) = admissible.ok_or(Failure::Blocked(i))?;
            next[i] = c;
        }
        let converged = next == assignments;
        assignments = next;
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &points.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        distortions.push(
            assignments
                .iter()
                .enumerate()
                .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
                .sum::<f64>(),
        );
        if converged {
            break;
        }
    }
    Ok(CopKmeansResult {
        assignments,
        centroids,
        distortions,
    })
}

/// Number of clusters: the largest per-chunk speaker count.
pub fn estimate_global_k(chunk_counts: &[usize]) -> usize {
    chunk_counts.iter().copied().max().unwrap_or(0)
}

/// Clusters all converted attractors with cannot-links inside each chunk and
/// stitches chunk activities by cluster id. `k` defaults to
/// [`estimate_global_k`].
pub fn baseline_decode(
    chunks: &[ChunkResult],
    k_override: Option<usize>,
    seed: u64,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    let counts: Vec<usize> = chunks.iter().map(ChunkResult::num_speakers).collect();
    let k = k_override.unwrap_or_else(|| estimate_global_k(&counts));
    let acts: Vec<Array2<f64>> = chunks.iter().map(|c| c.activities.clone()).collect();
    let total: usize = counts.iter().sum();
    if total == 0 || k == 0 {
        let perms = vec![Permutation { mapping: vec![] }; chunks.len()];
        let acts: Vec<Array2<f64>> = acts.iter().map(|a| Array2::zeros((a.nrows(), 0))).collect();
        return stitch(&acts, &perms, 0, frame_shift_s);
    }
    let dim = chunks
        .iter()
        .find(|c| c.num_speakers() > 0)
        .map(|c| c.converted_attractors.ncols())
        .expect("some attractor");
    let mut points = Array2::zeros((total, dim));
    let mut row = 0;
    for c in chunks {
        for a in c.converted_attractors.rows() {
            points.row_mut(row).assign(&a);
            row += 1;
        }
    }
    let links = CannotLinkSet::from_groups(&counts);
    let result = run_cop_kmeans(&points, k.min(total), &links, 100, seed).map_err(|e| match e {
        Failure::Error(e) => e,
        Failure::Blocked(point) => {
            let mut chunk = 0;
            let mut seen = 0;
            for (n, &c) in counts.iter().enumerate() {
                if point < seen + c {
                    chunk = n;
                    break;
                }
                seen += c;
            }
            Error::ConstraintViolation(format!(
                "chunk {chunk} has {} speakers but only {k} clusters are available",
                counts[chunk]
            ))
        }
    })?;
    let mut perms = Vec::with_capacity(chunks.len());
    let mut it = result.assignments.into_iter();
    for &c in &counts {
        perms.push(Permutation {
            mapping: it.by_ref().take(c).collect(),
        });
    }
    stitch(&acts, &perms, k.min(total), frame_shift_s)
}
