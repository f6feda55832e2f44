//! Minimal UMAP: exact k-nearest-neighbour graph, fuzzy simplicial set,
//! and a sequential SGD layout into 2D.
//!
//! The embedding runs per age bracket on the dense report features with
//! the Canberra distance. Cohorts are a few hundred points, so the kNN
//! search is brute force and the layout is single threaded; determinism
//! is part of the contract (same seed, same coordinates).

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rngs;

#[derive(Debug, Clone)]
pub struct UmapConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub repulsion_strength: f64,
}

impl Default for UmapConfig {
    fn default() -> Self {
        UmapConfig {
            n_neighbors: 15,
            min_dist: 0.0,
            n_epochs: 500,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            repulsion_strength: 1.0,
        }
    }
}

impl UmapConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(Error::InvalidArgument(
                "n_neighbors must be at least 2".into(),
            ));
        }
        if n_points <= self.n_neighbors {
            return Err(Error::TooFewPoints {
                needed: self.n_neighbors,
                got: n_points,
            });
        }
        if self.n_epochs == 0 {
            return Err(Error::InvalidArgument("n_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Exact k-nearest neighbours per point. `neighbors[i]` is sorted by
/// ascending distance with ties broken by the lower point index; a point
/// is never its own neighbour.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

pub fn knn_graph<F>(points: &[Vec<f64>], k: usize, metric: F) -> Result<KnnGraph>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let n = points.len();
    if n <= k {
        return Err(Error::TooFewPoints { needed: k, got: n });
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (metric(&points[i], &points[j]), j))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            dists.truncate(k);
            (
                dists.iter().map(|&(_, j)| j).collect(),
                dists.iter().map(|&(d, _)| d).collect(),
            )
        })
        .collect();
    let (neighbors, distances) = rows.into_iter().unzip();
    Ok(KnnGraph {
        neighbors,
        distances,
    })
}

/// Symmetric fuzzy graph over the kNN structure.
#[derive(Debug, Clone)]
pub struct FuzzyGraph {
    pub n_points: usize,
    /// Undirected edges (i, j, weight) with i < j and weight in (0, 1].
    pub edges: Vec<(usize, usize, f64)>,
    pub rhos: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Points whose bandwidth bisection did not converge and fell back to
    /// the mean neighbour distance.
    pub sigma_fallbacks: usize,
}

const SIGMA_ITERATIONS: usize = 64;
const SIGMA_TOLERANCE: f64 = 1e-5;

fn smooth_knn_sigma(dists: &[f64], rho: f64, target: f64) -> (f64, bool) {
    let sum_at = |sigma: f64| -> f64 {
        dists
            .iter()
            .map(|&d| (-((d - rho).max(0.0)) / sigma).exp())
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while sum_at(hi) < target && expansions < SIGMA_ITERATIONS {
        hi *= 2.0;
        expansions += 1;
    }
    let mut mid = hi;
    for _ in 0..SIGMA_ITERATIONS {
        mid = 0.5 * (lo + hi);
        let s = sum_at(mid);
        if (s - target).abs() < SIGMA_TOLERANCE {
            return (mid, false);
        }
        if s > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if (sum_at(mid) - target).abs() < SIGMA_TOLERANCE {
        (mid, false)
    } else {
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        (mean.max(1e-8), true)
    }
}

/// Converts kNN distances into a symmetric fuzzy graph.
///
/// Per point, rho is the nearest-neighbour distance and sigma solves
/// sum_j exp(-max(0, d_ij - rho) / sigma) = log2(k) by bisection; rows
/// that cannot reach the target within 64 iterations fall back to the
/// mean neighbour distance (counted and logged). Directed memberships are
/// combined by fuzzy union: w = a + b - a*b.
pub fn fuzzy_simplicial_set(knn: &KnnGraph) -> Result<FuzzyGraph> {
    let n = knn.neighbors.len();
    let k = knn.neighbors.first().map(|r| r.len()).unwrap_or(0);
    if k < 2 {
        return Err(Error::InvalidArgument(
            "fuzzy graph needs at least 2 neighbours per point".into(),
        ));
    }
    let target = (k as f64).log2();
    let mut rhos = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut fallbacks = 0;
    for i in 0..n {
        let rho = knn.distances[i][0];
        let (sigma, fell_back) = smooth_knn_sigma(&knn.distances[i], rho, target);
        if fell_back {
            fallbacks += 1;
        }
        rhos.push(rho);
        sigmas.push(sigma);
    }
    if fallbacks > 0 {
        log::warn!(
            "fuzzy graph: {fallbacks}/{n} bandwidths fell back to the mean neighbour distance"
        );
    }

    // Directed memberships, then fuzzy union of (i->j) and (j->i).
    let mut directed: std::collections::HashMap<(usize, usize), f64> =
        std::collections::HashMap::new();
    for i in 0..n {
        for (nbr, &d) in knn.neighbors[i].iter().zip(&knn.distances[i]) {
            let w = (-((d - rhos[i]).max(0.0)) / sigmas[i]).exp();
            directed.insert((i, *nbr), w);
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &w_ij) in &directed {
        if i > j && directed.contains_key(&(j, i)) {
            continue; // handled from the (j, i) side
        }
        let (a, b) = (w_ij, directed.get(&(j, i)).copied().unwrap_or(0.0));
        let w = a + b - a * b;
        if w > 0.0 {
            edges.push((i.min(j), i.max(j), w));
        }
    }
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    Ok(FuzzyGraph {
        n_points: n,
        edges,
        rhos,
        sigmas,
        sigma_fallbacks: fallbacks,
    })
}

/// Directed membership of `nbr` as seen from `i`, for inspection in tests.
pub fn directed_membership(knn: &KnnGraph, graph: &FuzzyGraph, i: usize, nbr: usize) -> Option<f64> {
    let pos = knn.neighbors[i].iter().position(|&j| j == nbr)?;
    let d = knn.distances[i][pos];
    Some((-((d - graph.rhos[i]).max(0.0)) / graph.sigmas[i]).exp())
}

/// Least-squares fit of the embedding kernel 1 / (1 + a d^(2b)) to the
/// target curve (1 below min_dist, exponential decay past it). A
/// min_dist of zero is clamped to 1e-3 so the curve stays well posed.
pub fn fit_ab(min_dist: f64) -> (f64, f64) {
    let min_dist = if min_dist < 1e-3 { 1e-3 } else { min_dist };
    let spread = 1.0;
    let n_grid = 300;
    let xs: Vec<f64> = (0..n_grid)
        .map(|i| 3.0 * spread * (i as f64 + 1.0) / n_grid as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();

    // Levenberg-Marquardt on (a, b).
    let mut a = 1.0_f64;
    let mut b = 1.0_f64;
    let residuals = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (f - y) * (f - y)
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut err = residuals(a, b);
    for _ in 0..200 {
        let (mut jtj_aa, mut jtj_ab, mut jtj_bb) = (0.0, 0.0, 0.0);
        let (mut jtr_a, mut jtr_b) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = x.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let f = 1.0 / denom;
            let r = f - y;
            let df_da = -p / (denom * denom);
            let df_db = -a * p * 2.0 * x.ln() / (denom * denom);
            jtj_aa += df_da * df_da;
            jtj_ab += df_da * df_db;
            jtj_bb += df_db * df_db;
            jtr_a += df_da * r;
            jtr_b += df_db * r;
        }
        // Solve (JtJ + lambda I) step = -Jtr.
        let m00 = jtj_aa + lambda;
        let m11 = jtj_bb + lambda;
        let det = m00 * m11 - jtj_ab * jtj_ab;
        if det.abs() < 1e-30 {
            break;
        }
        let da = (-jtr_a * m11 + jtr_b * jtj_ab) / det;
        let db = (-jtr_b * m00 + jtr_a * jtj_ab) / det;
        let (na, nb) = ((a + da).max(1e-6), (b + db).max(1e-6));
        let new_err = residuals(na, nb);
        if new_err < err {
            a = na;
            b = nb;
            err = new_err;
            lambda = (lambda * 0.5).max(1e-12);
            if da.abs() < 1e-12 && db.abs() < 1e-12 {
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

/// 2D coordinates, row i for input point i.
#[derive(Debug, Clone)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
}

const GRAD_CLIP: f64 = 4.0;

fn clip(x: f64) -> f64 {
    x.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Stochastic layout of the fuzzy graph into 2D.
///
/// Edges are sampled in proportion to membership weight (epochs per
/// sample), with `negative_sample_rate` uniform negatives per positive
/// move, clipped gradients, and a linearly decaying learning rate. The
/// walk is sequential and driven by one seeded stream, so results are
/// reproducible bit for bit.
pub fn optimize_layout(graph: &FuzzyGraph, config: &UmapConfig, seed: u64) -> Embedding2D {
    let n = graph.n_points;
    let mut rng = rngs::rng_for(seed, rngs::domain::UMAP, 0);
    let mut coords: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)])
        .collect();
    if graph.edges.is_empty() {
        return Embedding2D { coords };
    }

    let (a, b) = fit_ab(config.min_dist);
    let n_epochs = config.n_epochs;
    let max_w = graph
        .edges
        .iter()
        .map(|e| e.2)
        .fold(f64::NEG_INFINITY, f64::max);

    // Edges lighter than one sample over the whole schedule are dropped.
    let kept: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| e.2 >= max_w / n_epochs as f64)
        .collect();
    let epochs_per_sample: Vec<f64> = kept.iter().map(|e| max_w / e.2).collect();
    let mut next_sample = epochs_per_sample.clone();
    let eps_per_negative: Vec<f64> = epochs_per_sample
        .iter()
        .map(|e| e / config.negative_sample_rate as f64)
        .collect();
    let mut next_negative = eps_per_negative.clone();

    for epoch in 0..n_epochs {
        let alpha = config.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let epoch_f = (epoch + 1) as f64;
        for (e, &(i, j, _)) in kept.iter().enumerate() {
            if next_sample[e] > epoch_f {
                continue;
            }
            next_sample[e] += epochs_per_sample[e];

            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 {
                let coeff = (-2.0 * a * b * d2.powf(b - 1.0)) / (a * d2.powf(b) + 1.0);
                let gx = clip(coeff * dx) * alpha;
                let gy = clip(coeff * dy) * alpha;
                coords[i][0] += gx;
                coords[i][1] += gy;
                coords[j][0] -= gx;
                coords[j][1] -= gy;
            }

            let n_neg = ((epoch_f - next_negative[e]) / eps_per_negative[e]).max(0.0) as usize;
            for _ in 0..n_neg {
                let k = rng.gen_range(0..n);
                if k == i || k == j {
                    continue;
                }
                let dx = coords[i][0] - coords[k][0];
                let dy = coords[i][1] - coords[k][1];
                let d2 = dx * dx + dy * dy;
                let coeff =
                    2.0 * config.repulsion_strength * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                coords[i][0] += clip(coeff * dx) * alpha;
                coords[i][1] += clip(coeff * dy) * alpha;
            }
            next_negative[e] += n_neg as f64 * eps_per_negative[e];
        }
    }
    Embedding2D { coords }
}

/// Full pipeline: kNN, fuzzy graph, layout.
pub fn embed<F>(
    points: &[Vec<f64>],
    config: &UmapConfig,
    seed: u64,
    metric: F,
) -> Result<(FuzzyGraph, Embedding2D)>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    config.validate(points.len())?;
    let knn = knn_graph(points, config.n_neighbors, metric)?;
    let graph = fuzzy_simplicial_set(&knn)?;
    let embedding = optimize_layout(&graph, config, seed);
    Ok((graph, embedding))
}
