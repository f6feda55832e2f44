//! HDBSCAN over 2D embeddings: mutual-reachability MST, single-linkage
//! hierarchy, condensed tree, excess-of-mass cluster selection with an
//! epsilon merge step, and the population-share rule that turns clusters
//! into Normal/Abnormal verdicts.

use crate::error::{Error, Result};
use crate::report::{dense_cell_name, DenseFeatures, DENSE_LEN};

#[derive(Debug, Clone)]
pub struct HdbscanConfig {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub cluster_selection_epsilon: f64,
}

/// Share of the bracket population a cluster must exceed (strictly) to be
/// called Normal.
pub const NORMAL_POPULATION_SHARE: f64 = 0.15;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone)]
pub struct ClusterInfo {
    pub size: usize,
    pub verdict: Option<Verdict>,
    /// Top dense cells by mean count over members, e.g. "lumbar disc_bulge mild (2.1)".
    pub dominant: Vec<String>,
}

/// Labels per point (`NOISE` for unclustered) plus per-cluster metadata.
/// Cluster ids are consecutive from 0.
#[derive(Debug, Clone)]
pub struct ClusterLabeling {
    pub labels: Vec<i64>,
    pub clusters: Vec<ClusterInfo>,
}

/// One merge of the single-linkage dendrogram.
#[derive(Debug, Clone, Copy)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Single-linkage dendrogram over mutual reachability. Leaves are
/// 0..n, merge t creates node n + t.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub n_points: usize,
    pub merges: Vec<Merge>,
}

impl Hierarchy {
    /// Merge heights in ascending order.
    pub fn heights(&self) -> Vec<f64> {
        let mut h: Vec<f64> = self.merges.iter().map(|m| m.distance).collect();
        h.sort_by(f64::total_cmp);
        h
    }
}

fn euclid2(p: [f64; 2], q: [f64; 2]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    (dx * dx + dy * dy).sqrt()
}

/// Distance to the `min_samples`-th nearest neighbour (self excluded).
pub fn core_distances(points: &[[f64; 2]], min_samples: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if min_samples == 0 {
        return Err(Error::InvalidArgument("min_samples must be positive".into()));
    }
    if n <= min_samples {
        return Err(Error::TooFewPoints {
            needed: min_samples,
            got: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclid2(points[i], points[j]))
                .collect();
            d.sort_by(f64::total_cmp);
            d[min_samples - 1]
        })
        .collect())
}

/// Mutual reachability: max(core_i, core_j, d(i, j)).
pub fn mutual_reachability(points: &[[f64; 2]], core: &[f64], i: usize, j: usize) -> f64 {
    euclid2(points[i], points[j]).max(core[i]).max(core[j])
}

/// Exact MST of the complete mutual-reachability graph (Prim). Returns
/// n - 1 edges; ties resolve to the lowest vertex index, so the result is
/// deterministic.
pub fn mst_mutual_reachability(points: &[[f64; 2]], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    in_tree[0] = true;
    for j in 1..n {
        best[j] = mutual_reachability(points, core, 0, j);
    }
    for _ in 1..n {
        let mut pick = usize::MAX;
        let mut pick_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best[j] < pick_d {
                pick = j;
                pick_d = best[j];
            }
        }
        in_tree[pick] = true;
        edges.push((from[pick], pick, pick_d));
        for j in 0..n {
            if !in_tree[j] {
                let d = mutual_reachability(points, core, pick, j);
                if d < best[j] {
                    best[j] = d;
                    from[j] = pick;
                }
            }
        }
    }
    edges
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    /// Dendrogram node currently representing each set root.
    node: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
            node: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Agglomerates sorted MST edges into the single-linkage dendrogram.
pub fn single_linkage(n_points: usize, mst: &[(usize, usize, f64)]) -> Hierarchy {
    let mut edges: Vec<(usize, usize, f64)> = mst.to_vec();
    edges.sort_by(|a, b| {
        a.2.total_cmp(&b.2)
            .then(a.0.min(a.1).cmp(&b.0.min(b.1)))
            .then(a.0.max(a.1).cmp(&b.0.max(b.1)))
    });
    let mut uf = UnionFind::new(n_points);
    let mut merges = Vec::with_capacity(edges.len());
    for (t, &(a, b, d)) in edges.iter().enumerate() {
        let (ra, rb) = (uf.find(a), uf.find(b));
        debug_assert_ne!(ra, rb, "MST edges never close a cycle");
        let size = uf.size[ra] + uf.size[rb];
        merges.push(Merge {
            left: uf.node[ra],
            right: uf.node[rb],
            distance: d,
            size,
        });
        uf.parent[ra] = rb;
        uf.size[rb] = size;
        uf.node[rb] = n_points + t;
    }
    Hierarchy { n_points, merges }
}

/// Condensed-tree row: `child` is a point (< n) or a cluster id (>= n).
#[derive(Debug, Clone, Copy)]
struct CondensedRow {
    parent: usize,
    child: usize,
    lambda: f64,
    child_size: usize,
}

fn condense_tree(hierarchy: &Hierarchy, min_cluster_size: usize) -> Vec<CondensedRow> {
    let n = hierarchy.n_points;
    if hierarchy.merges.is_empty() {
        return Vec::new();
    }
    let node_children = |node: usize| -> (usize, usize, f64) {
        let m = &hierarchy.merges[node - n];
        (m.left, m.right, m.distance)
    };
    let node_size = |node: usize| -> usize {
        if node < n {
            1
        } else {
            hierarchy.merges[node - n].size
        }
    };
    // Leaf points below a dendrogram node.
    fn collect_points(hierarchy: &Hierarchy, node: usize, out: &mut Vec<usize>) {
        let n = hierarchy.n_points;
        if node < n {
            out.push(node);
        } else {
            let m = &hierarchy.merges[node - n];
            collect_points(hierarchy, m.left, out);
            collect_points(hierarchy, m.right, out);
        }
    }

    let root = n + hierarchy.merges.len() - 1;
    let mut rows = Vec::new();
    let mut next_label = n + 1;
    // (dendrogram node, condensed cluster id it belongs to)
    let mut stack = vec![(root, n)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            continue;
        }
        let (left, right, dist) = node_children(node);
        let lambda = if dist > 0.0 { 1.0 / dist } else { f64::MAX };
        let (ls, rs) = (node_size(left), node_size(right));
        let left_big = ls >= min_cluster_size;
        let right_big = rs >= min_cluster_size;
        if left_big && right_big {
            // A true split: two new condensed clusters are born.
            for &(child, size) in &[(left, ls), (right, rs)] {
                let id = next_label;
                next_label += 1;
                rows.push(CondensedRow {
                    parent: cluster,
                    child: id,
                    lambda,
                    child_size: size,
                });
                stack.push((child, id));
            }
        } else if !left_big && !right_big {
            // The cluster dissolves; all remaining points fall out here.
            let mut pts = Vec::new();
            collect_points(hierarchy, node, &mut pts);
            pts.sort_unstable();
            for p in pts {
                rows.push(CondensedRow {
                    parent: cluster,
                    child: p,
                    lambda,
                    child_size: 1,
                });
            }
        } else {
            // The big side continues as the same cluster, the small side
            // sheds its points.
            let (big, small) = if left_big { (left, right) } else { (right, left) };
            let mut pts = Vec::new();
            collect_points(hierarchy, small, &mut pts);
            pts.sort_unstable();
            for p in pts {
                rows.push(CondensedRow {
                    parent: cluster,
                    child: p,
                    lambda,
                    child_size: 1,
                });
            }
            stack.push((big, cluster));
        }
    }
    rows
}

/// Excess-of-mass selection with the epsilon merge step, then labelling.
/// The hierarchy root is never selectable, so `min_cluster_size == n`
/// leaves everything as noise.
pub fn condense_and_select(
    hierarchy: &Hierarchy,
    config: &HdbscanConfig,
) -> ClusterLabeling {
    let n = hierarchy.n_points;
    let rows = condense_tree(hierarchy, config.min_cluster_size.max(2));
    if rows.is_empty() {
        return ClusterLabeling {
            labels: vec![NOISE; n],
            clusters: Vec::new(),
        };
    }

    let max_cluster = rows
        .iter()
        .map(|r| r.parent.max(if r.child >= n { r.child } else { 0 }))
        .max()
        .unwrap()
        .max(n);
    // Birth lambda per cluster: the lambda at which it appeared as a child.
    let mut birth = vec![0.0f64; max_cluster + 1];
    for r in &rows {
        if r.child >= n {
            birth[r.child] = r.lambda;
        }
    }
    // Stability: sum over children of (lambda - birth(parent)) * size.
    let mut stability = vec![0.0f64; max_cluster + 1];
    for r in &rows {
        stability[r.parent] += (r.lambda - birth[r.parent]) * r.child_size as f64;
    }

    let mut cluster_children: Vec<Vec<usize>> = vec![Vec::new(); max_cluster + 1];
    for r in &rows {
        if r.child >= n {
            cluster_children[r.parent].push(r.child);
        }
    }
    let descendants = |c: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            for &ch in &cluster_children[x] {
                out.push(ch);
                stack.push(ch);
            }
        }
        out
    };

    // Excess of mass, children before parents, root (id n) excluded.
    let mut selected = vec![false; max_cluster + 1];
    let mut subtree_stab = stability.clone();
    for c in (n + 1..=max_cluster).rev() {
        let child_sum: f64 = cluster_children[c].iter().map(|&ch| subtree_stab[ch]).sum();
        if cluster_children[c].is_empty() {
            selected[c] = true;
            subtree_stab[c] = stability[c];
        } else if child_sum > stability[c] {
            selected[c] = false;
            subtree_stab[c] = child_sum;
        } else {
            selected[c] = true;
            subtree_stab[c] = stability[c];
            for d in descendants(c) {
                selected[d] = false;
            }
        }
    }

    // Epsilon merge: selected clusters born below the threshold distance
    // are replaced by their shallowest ancestor still below it.
    if config.cluster_selection_epsilon > 0.0 {
        let eps = config.cluster_selection_epsilon;
        let mut parent_of = vec![usize::MAX; max_cluster + 1];
        for r in &rows {
            if r.child >= n {
                parent_of[r.child] = r.parent;
            }
        }
        let birth_eps = |c: usize| -> f64 {
            if birth[c] > 0.0 {
                1.0 / birth[c]
            } else {
                f64::INFINITY
            }
        };
        let chosen: Vec<usize> = (n + 1..=max_cluster).filter(|&c| selected[c]).collect();
        let mut processed = vec![false; max_cluster + 1];
        for c in chosen {
            if processed[c] {
                continue;
            }
            if birth_eps(c) >= eps {
                continue;
            }
            // Walk upwards until the merge distance reaches the threshold.
            let mut keep = c;
            loop {
                let parent = parent_of[keep];
                if parent == n || parent == usize::MAX {
                    break; // never merge into the root
                }
                keep = parent;
                if birth_eps(keep) >= eps {
                    break;
                }
            }
            selected[c] = false;
            for d in descendants(keep) {
                selected[d] = false;
                processed[d] = true;
            }
            selected[keep] = true;
            processed[keep] = true;
        }
    }

    // Deepest selected ancestor-or-self of the cluster each point fell
    // out of; none means noise.
    let mut parent_of = vec![usize::MAX; max_cluster + 1];
    for r in &rows {
        if r.child >= n {
            parent_of[r.child] = r.parent;
        }
    }
    let selected_ids: Vec<usize> = (n..=max_cluster).filter(|&c| selected[c]).collect();
    let relabel: std::collections::HashMap<usize, i64> = selected_ids
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as i64))
        .collect();

    let mut labels = vec![NOISE; n];
    for r in &rows {
        if r.child < n {
            let mut c = r.parent;
            while c != usize::MAX {
                if selected[c] {
                    labels[r.child] = relabel[&c];
                    break;
                }
                c = if c == n { usize::MAX } else { parent_of[c] };
            }
        }
    }

    let mut clusters: Vec<ClusterInfo> = selected_ids
        .iter()
        .map(|_| ClusterInfo {
            size: 0,
            verdict: None,
            dominant: Vec::new(),
        })
        .collect();
    for &l in &labels {
        if l >= 0 {
            clusters[l as usize].size += 1;
        }
    }
    ClusterLabeling { labels, clusters }
}

/// Runs the full HDBSCAN stack on 2D points.
pub fn hdbscan(points: &[[f64; 2]], config: &HdbscanConfig) -> Result<ClusterLabeling> {
    let core = core_distances(points, config.min_samples)?;
    let mst = mst_mutual_reachability(points, &core);
    let hierarchy = single_linkage(points.len(), &mst);
    Ok(condense_and_select(&hierarchy, config))
}

impl ClusterLabeling {
    /// Applies the population-share rule: a cluster is Normal iff its
    /// size exceeds `NORMAL_POPULATION_SHARE` of the bracket population
    /// (noise included in the denominator), strictly.
    pub fn assign_normality(&mut self, bracket_population: usize) {
        for c in &mut self.clusters {
            let share = c.size as f64 / bracket_population as f64;
            c.verdict = Some(if share > NORMAL_POPULATION_SHARE {
                Verdict::Normal
            } else {
                Verdict::Abnormal
            });
        }
    }

    /// Per-point verdict: members of Normal clusters are Normal, noise
    /// and members of small clusters are Abnormal.
    pub fn point_verdicts(&self) -> Vec<Verdict> {
        self.labels
            .iter()
            .map(|&l| {
                if l >= 0 && self.clusters[l as usize].verdict == Some(Verdict::Normal) {
                    Verdict::Normal
                } else {
                    Verdict::Abnormal
                }
            })
            .collect()
    }

    /// Fills the dominant-condition summary: the three dense cells with
    /// the highest mean count over each cluster's members.
    pub fn summarize_conditions(&mut self, features: &[DenseFeatures]) {
        assert_eq!(features.len(), self.labels.len());
        for (id, info) in self.clusters.iter_mut().enumerate() {
            let members: Vec<&DenseFeatures> = self
                .labels
                .iter()
                .zip(features)
                .filter(|(&l, _)| l == id as i64)
                .map(|(_, f)| f)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut means = vec![0.0f64; DENSE_LEN];
            for f in &members {
                for (m, &c) in means.iter_mut().zip(&f.counts) {
                    *m += c as f64;
                }
            }
            for m in &mut means {
                *m /= members.len() as f64;
            }
            let mut order: Vec<usize> = (0..DENSE_LEN).collect();
            order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
            info.dominant = order
                .into_iter()
                .take(3)
                .filter(|&i| means[i] > 0.0)
                .map(|i| format!("{} ({:.2})", dense_cell_name(i), means[i]))
                .collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn core_distance_worked_examples() {
        // Six points on a unit-spaced line: the nearest neighbour of every
        // point sits one step away.
        let line: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let core = core_distances(&line, 1).unwrap();
        assert_eq!(core, vec![1.0; 6]);

        // A duplicated point has core distance zero.
        let mut with_dup = line.clone();
        with_dup.push([3.0, 0.0]);
        let core = core_distances(&with_dup, 1).unwrap();
        assert_eq!(core[3], 0.0);
        assert_eq!(core[6], 0.0);

        assert!(matches!(
            core_distances(&line, 6),
            Err(Error::TooFewPoints { .. })
        ));
    }

    fn random_points(n: usize, seed: u64, span: f64) -> Vec<[f64; 2]> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.gen_range(0.0..span), rng.gen_range(0.0..span)])
            .collect()
    }

    #[test]
    fn mutual_reachability_dominates_its_inputs() {
        let pts = random_points(30, 5, 10.0);
        let core = core_distances(&pts, 4).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i == j {
                    continue;
                }
                let m = mutual_reachability(&pts, &core, i, j);
                assert!(m >= core[i] && m >= core[j]);
                assert!(m >= euclid2(pts[i], pts[j]));
                assert_eq!(m, mutual_reachability(&pts, &core, j, i));
            }
        }
    }

    /// Kruskal oracle for the MST total weight.
    fn kruskal_weight(pts: &[[f64; 2]], core: &[f64]) -> f64 {
        let n = pts.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((mutual_reachability(pts, core, i, j), i, j));
            }
        }
        edges.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut uf = UnionFind::new(n);
        let mut total = 0.0;
        for (w, a, b) in edges {
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra != rb {
                uf.parent[ra] = rb;
                total += w;
            }
        }
        total
    }

    #[test]
    fn prim_matches_kruskal_oracle() {
        for seed in 0..6 {
            let pts = random_points(24, seed, 8.0);
            let core = core_distances(&pts, 3).unwrap();
            let mst = mst_mutual_reachability(&pts, &core);
            assert_eq!(mst.len(), pts.len() - 1);
            let prim_total: f64 = mst.iter().map(|e| e.2).sum();
            let kruskal_total = kruskal_weight(&pts, &core);
            assert!(
                (prim_total - kruskal_total).abs() < 1e-9,
                "seed {seed}: prim {prim_total} kruskal {kruskal_total}"
            );
        }
    }

    /// Naive O(n^3) agglomerative single linkage over the mutual
    /// reachability matrix; returns merge heights in merge order.
    fn brute_force_single_linkage(pts: &[[f64; 2]], core: &[f64]) -> Vec<f64> {
        let n = pts.len();
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut heights = Vec::new();
        while clusters.len() > 1 {
            let mut best = f64::INFINITY;
            let mut pick = (0, 1);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut link = f64::INFINITY;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            link = link.min(mutual_reachability(pts, core, i, j));
                        }
                    }
                    if link < best {
                        best = link;
                        pick = (a, b);
                    }
                }
            }
            heights.push(best);
            let merged = clusters.remove(pick.1);
            clusters[pick.0].extend(merged);
        }
        heights
    }

    #[test]
    fn hierarchy_heights_match_brute_force_single_linkage() {
        for seed in 0..8 {
            let n = 8 + (seed as usize) % 5; // 8..=12 points
            let pts = random_points(n, seed, 6.0);
            let core = core_distances(&pts, 2).unwrap();
            let mst = mst_mutual_reachability(&pts, &core);
            let hierarchy = single_linkage(n, &mst);
            let mut oracle = brute_force_single_linkage(&pts, &core);
            oracle.sort_by(f64::total_cmp);
            assert_eq!(hierarchy.heights(), oracle, "seed {seed}");
        }
    }

    fn two_blobs(seed: u64) -> (Vec<[f64; 2]>, Vec<usize>) {
        // Blob diameter ~1, separation 10x that.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..2 {
            let cx = if c == 0 { 0.0 } else { 10.0 };
            for _ in 0..20 {
                pts.push([cx + rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn two_planted_blobs_recovered_exactly() {
        for seed in 0..10 {
            let (pts, truth) = two_blobs(seed);
            let config = HdbscanConfig {
                min_cluster_size: 5,
                min_samples: 5,
                cluster_selection_epsilon: 0.0,
            };
            let labeling = hdbscan(&pts, &config).unwrap();
            assert_eq!(labeling.clusters.len(), 2, "seed {seed}");
            assert!(
                labeling.labels.iter().all(|&l| l >= 0),
                "seed {seed}: unexpected noise"
            );
            // Labels must be a pure relabelling of the planted truth.
            let mut mapping = [None::<i64>; 2];
            for (l, &t) in labeling.labels.iter().zip(&truth) {
                match mapping[t] {
                    None => mapping[t] = Some(*l),
                    Some(m) => assert_eq!(m, *l, "seed {seed}: mislabeled point"),
                }
            }
            assert_ne!(mapping[0], mapping[1], "seed {seed}");
        }
    }

    #[test]
    fn min_cluster_size_n_yields_all_noise() {
        let pts = random_points(30, 3, 10.0);
        let config = HdbscanConfig {
            min_cluster_size: 30,
            min_samples: 3,
            cluster_selection_epsilon: 0.0,
        };
        let labeling = hdbscan(&pts, &config).unwrap();
        assert!(labeling.labels.iter().all(|&l| l == NOISE));
        assert!(labeling.clusters.is_empty());
    }

    #[test]
    fn epsilon_merges_nearby_subclusters() {
        // Two tight sub-blobs 0.6 apart plus one far blob. Without the
        // merge step the sub-blobs are separate clusters; with epsilon 1.0
        // they collapse into one.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        for cx in [0.0, 0.6, 20.0] {
            for _ in 0..12 {
                pts.push([
                    cx + rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ]);
            }
        }
        let base = HdbscanConfig {
            min_cluster_size: 4,
            min_samples: 3,
            cluster_selection_epsilon: 0.0,
        };
        let plain = hdbscan(&pts, &base).unwrap();
        assert_eq!(plain.clusters.len(), 3);

        let merged = hdbscan(
            &pts,
            &HdbscanConfig {
                cluster_selection_epsilon: 1.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(merged.clusters.len(), 2);
        // The two near sub-blobs share a label, the far blob keeps its own.
        assert_eq!(merged.labels[0], merged.labels[12]);
        assert_ne!(merged.labels[0], merged.labels[24]);
    }

    #[test]
    fn labeling_is_deterministic() {
        let pts = random_points(60, 9, 12.0);
        let config = HdbscanConfig {
            min_cluster_size: 5,
            min_samples: 4,
            cluster_selection_epsilon: 0.0,
        };
        let a = hdbscan(&pts, &config).unwrap();
        let b = hdbscan(&pts, &config).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn normality_share_is_strict() {
        let mut labeling = ClusterLabeling {
            labels: Vec::new(),
            clusters: vec![
                ClusterInfo { size: 30, verdict: None, dominant: Vec::new() },
                ClusterInfo { size: 15, verdict: None, dominant: Vec::new() },
                ClusterInfo { size: 16, verdict: None, dominant: Vec::new() },
            ],
        };
        labeling.assign_normality(100);
        assert_eq!(labeling.clusters[0].verdict, Some(Verdict::Normal));
        // Exactly 15% does not pass a strict threshold.
        assert_eq!(labeling.clusters[1].verdict, Some(Verdict::Abnormal));
        assert_eq!(labeling.clusters[2].verdict, Some(Verdict::Normal));
    }

    #[test]
    fn dominant_conditions_rank_by_mean_count() {
        use crate::report::{aggregate, ConditionRecord, DegenerativeKind, Region, Severity, Vertebra};
        let bulge = |n: usize| -> DenseFeatures {
            let v = Vertebra::new(Region::Lumbar, 4).unwrap();
            let recs: Vec<ConditionRecord> = (0..n)
                .map(|_| ConditionRecord::degenerative(v, DegenerativeKind::DiscBulge, Severity::Mild))
                .collect();
            aggregate(&recs).unwrap()
        };
        let mut labeling = ClusterLabeling {
            labels: vec![0, 0, NOISE],
            clusters: vec![ClusterInfo { size: 2, verdict: None, dominant: Vec::new() }],
        };
        let features = vec![bulge(2), bulge(4), bulge(9)];
        labeling.summarize_conditions(&features);
        assert_eq!(labeling.clusters[0].dominant.len(), 1);
        assert!(
            labeling.clusters[0].dominant[0].starts_with("lumbar disc_bulge mild (3.00)"),
            "got {:?}",
            labeling.clusters[0].dominant
        );
    }
}
