//! Retrieval evaluation: the full query-gallery hyperbolic distance matrix
//! and CMC recall@k.
//!
//! A query scores at rank k if any of its top-k ranked gallery entries share
//! its label. Ranking ties break by gallery index, so reports are
//! deterministic. In the same-set protocol each sample queries the remaining
//! set with its self-match excluded.

use crate::ball::hyp_distance;
use crate::error::{Error, Result};
use crate::BallPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    SameSet,
    QueryGallery,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SameSet => "same-set",
            Protocol::QueryGallery => "query-gallery",
        }
    }
}

/// CMC curve over the configured k list. `recall[i]` pairs with `k_list[i]`;
/// queries without any same-label gallery entry are excluded from the mean
/// and counted in `degenerate_queries`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub k_list: Vec<usize>,
    pub recall: Vec<f64>,
    pub num_queries: usize,
    pub num_gallery: usize,
    pub degenerate_queries: usize,
    pub protocol: Protocol,
}

impl RetrievalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.k_list
            .iter()
            .position(|&kk| kk == k)
            .map(|i| self.recall[i])
    }

    /// Aligned text rendering.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "protocol: {}\nqueries:  {} ({} degenerate)\ngallery:  {}\n{:>6}  {:>9}\n",
            self.protocol.name(),
            self.num_queries,
            self.degenerate_queries,
            self.num_gallery,
            "k",
            "recall@k"
        );
        for (k, r) in self.k_list.iter().zip(&self.recall) {
            out.push_str(&format!("{k:>6}  {r:>9.4}\n"));
        }
        out
    }

    /// Machine-readable record lines.
    pub fn render_records(&self) -> String {
        let mut out = String::from("k,recall\n");
        for (k, r) in self.k_list.iter().zip(&self.recall) {
            out.push_str(&format!("{k},{r}\n"));
        }
        out
    }
}

/// `M[i][j] = d(query_i, gallery_j)`; symmetric (to rounding) when the two
/// sets coincide.
pub fn distance_matrix(queries: &[BallPoint], gallery: &[BallPoint]) -> Result<Vec<Vec<f64>>> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::EmptyBatch);
    }
    queries
        .iter()
        .map(|q| gallery.iter().map(|g| hyp_distance(q, g)).collect())
        .collect()
}

/// CMC recall@k from a precomputed distance matrix.
pub fn cmc(
    dist: &[Vec<f64>],
    query_labels: &[u32],
    gallery_labels: &[u32],
    k_list: &[usize],
    protocol: Protocol,
) -> Result<RetrievalReport> {
    if dist.len() != query_labels.len() {
        return Err(Error::LabelLengthMismatch(format!(
            "{} query labels for {} matrix rows",
            query_labels.len(),
            dist.len()
        )));
    }
    for row in dist {
        if row.len() != gallery_labels.len() {
            return Err(Error::LabelLengthMismatch(format!(
                "{} gallery labels for a {}-wide matrix row",
                gallery_labels.len(),
                row.len()
            )));
        }
    }
    if protocol == Protocol::SameSet && dist.len() != gallery_labels.len() {
        return Err(Error::LabelLengthMismatch(
            "same-set protocol requires queries == gallery".into(),
        ));
    }
    let mut k_list: Vec<usize> = k_list.iter().copied().filter(|&k| k >= 1).collect();
    k_list.sort_unstable();
    k_list.dedup();
    if k_list.is_empty() {
        return Err(Error::InvalidConfig("k list must contain a k >= 1".into()));
    }

    let mut degenerate = 0usize;
    let mut hits = vec![0usize; k_list.len()];
    let mut included = 0usize;
    for (i, row) in dist.iter().enumerate() {
        let skip_self = protocol == Protocol::SameSet;
        // Best-ranked same-label entry under the (distance, index) order.
        let mut best: Option<(f64, usize)> = None;
        for (j, &d) in row.iter().enumerate() {
            if skip_self && j == i {
                continue;
            }
            if gallery_labels[j] == query_labels[i] {
                let key = (d, j);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        let Some(best) = best else {
            degenerate += 1;
            continue;
        };
        included += 1;
        // Rank = 1 + number of candidates strictly ahead in the tie-broken
        // order.
        let mut rank = 1usize;
        for (j, &d) in row.iter().enumerate() {
            if skip_self && j == i {
                continue;
            }
            if (d, j) < best {
                rank += 1;
            }
        }
        for (slot, &k) in k_list.iter().enumerate() {
            if rank <= k {
                hits[slot] += 1;
            }
        }
    }

    let recall = hits
        .iter()
        .map(|&h| {
            if included == 0 {
                0.0
            } else {
                h as f64 / included as f64
            }
        })
        .collect();
    Ok(RetrievalReport {
        k_list,
        recall,
        num_queries: dist.len(),
        num_gallery: gallery_labels.len(),
        degenerate_queries: degenerate,
        protocol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::{exp_map_0, Curvature as GenCurvature};
    use crate::EuclideanVec;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn from_tangent(coords: &[f64], c: f64) -> BallPoint {
        exp_map_0(
            &EuclideanVec::new(coords.to_vec()).unwrap(),
            GenCurvature::new(c).unwrap(),
        )
    }

    fn random_points(seed: u64, count: usize, dim: usize, c: f64) -> Vec<BallPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                from_tangent(&v, c)
            })
            .collect()
    }

    #[test]
    fn same_set_matrix_has_zero_diagonal_and_is_symmetric() {
        let pts = random_points(1, 8, 3, 0.1);
        let m = distance_matrix(&pts, &pts).unwrap();
        for i in 0..8 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..8 {
                assert!((m[i][j] - m[j][i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn origin_query_row_orders_by_radius() {
        let q = vec![from_tangent(&[0.0, 0.0], 0.1)];
        let gallery = vec![
            from_tangent(&[0.1, 0.0], 0.1),
            from_tangent(&[0.3, 0.0], 0.1),
            from_tangent(&[0.7, 0.0], 0.1),
        ];
        let m = distance_matrix(&q, &gallery).unwrap();
        assert!(m[0][0] < m[0][1] && m[0][1] < m[0][2]);
    }

    #[test]
    fn matrix_matches_scalar_distance_calls() {
        let q = random_points(2, 3, 4, 0.3);
        let g = random_points(3, 3, 4, 0.3);
        let m = distance_matrix(&q, &g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j], hyp_distance(&q[i], &g[j]).unwrap());
            }
        }
    }

    #[test]
    fn matrix_rejects_mixed_frames() {
        let q = random_points(4, 2, 3, 0.1);
        let g = random_points(5, 2, 3, 0.3);
        assert!(matches!(
            distance_matrix(&q, &g),
            Err(Error::CurvatureMismatch { .. })
        ));
    }

    #[test]
    fn perfect_clusters_have_full_recall_at_one() {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for class in 0..4u32 {
            for s in 0..3 {
                let x = class as f64 * 2.0;
                points.push(from_tangent(&[x, s as f64 * 0.01], 0.1));
                labels.push(class);
            }
        }
        let m = distance_matrix(&points, &points).unwrap();
        let report = cmc(&m, &labels, &labels, &[1, 2, 4, 8], Protocol::SameSet).unwrap();
        assert_eq!(report.recall_at(1), Some(1.0));
        assert_eq!(report.degenerate_queries, 0);
    }

    #[test]
    fn first_match_at_rank_three_counts_only_for_k_ge_three() {
        // One query; matches sit at ranks 3 and 5.
        let dist = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5]];
        let report = cmc(
            &dist,
            &[7],
            &[1, 2, 7, 3, 7],
            &[1, 2, 3, 4, 5],
            Protocol::QueryGallery,
        )
        .unwrap();
        assert_eq!(report.recall, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn ranking_ties_break_by_gallery_index() {
        // Gallery 0 and 1 are equidistant; index order puts the non-match
        // first, so the match lands at rank 2.
        let dist = vec![vec![0.5, 0.5, 0.9]];
        let report = cmc(&dist, &[1], &[0, 1, 1], &[1, 2], Protocol::QueryGallery).unwrap();
        assert_eq!(report.recall, vec![0.0, 1.0]);
        // Swap labels: now the match is at index 0, rank 1.
        let report = cmc(&dist, &[1], &[1, 0, 0], &[1, 2], Protocol::QueryGallery).unwrap();
        assert_eq!(report.recall, vec![1.0, 1.0]);
    }

    #[test]
    fn degenerate_queries_are_counted_not_scored() {
        let dist = vec![vec![0.1, 0.2], vec![0.3, 0.1]];
        // Query 1's label never appears in the gallery.
        let report = cmc(&dist, &[0, 9], &[0, 0], &[1], Protocol::QueryGallery).unwrap();
        assert_eq!(report.degenerate_queries, 1);
        assert_eq!(report.recall, vec![1.0]);
        assert_eq!(report.num_queries, 2);
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let dist = vec![vec![0.1, 0.2]];
        assert!(matches!(
            cmc(&dist, &[0, 1], &[0, 0], &[1], Protocol::QueryGallery),
            Err(Error::LabelLengthMismatch(_))
        ));
        assert!(matches!(
            cmc(&dist, &[0], &[0], &[1], Protocol::QueryGallery),
            Err(Error::LabelLengthMismatch(_))
        ));
    }

    #[test]
    fn recall_is_monotone_and_saturates() {
        let pts = random_points(6, 20, 4, 0.1);
        let labels: Vec<u32> = (0..20).map(|i| (i % 5) as u32).collect();
        let m = distance_matrix(&pts, &pts).unwrap();
        let ks: Vec<usize> = (1..=20).collect();
        let report = cmc(&m, &labels, &labels, &ks, Protocol::SameSet).unwrap();
        for pair in report.recall.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert_eq!(*report.recall.last().unwrap(), 1.0);
    }

    #[test]
    fn cmc_is_invariant_under_monotone_transforms() {
        let pts = random_points(7, 12, 3, 0.3);
        let labels: Vec<u32> = (0..12).map(|i| (i % 4) as u32).collect();
        let m = distance_matrix(&pts, &pts).unwrap();
        let transformed: Vec<Vec<f64>> = m
            .iter()
            .map(|row| row.iter().map(|d| d.exp() * 3.0 + 1.0).collect())
            .collect();
        let ks = [1, 2, 4, 8];
        let a = cmc(&m, &labels, &labels, &ks, Protocol::SameSet).unwrap();
        let b = cmc(&transformed, &labels, &labels, &ks, Protocol::SameSet).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_renders_text_and_records() {
        let report = RetrievalReport {
            k_list: vec![1, 2],
            recall: vec![0.5, 0.75],
            num_queries: 4,
            num_gallery: 4,
            degenerate_queries: 0,
            protocol: Protocol::SameSet,
        };
        let text = report.render_text();
        assert!(text.contains("same-set") && text.contains("0.5000"));
        assert_eq!(report.render_records(), "k,recall\n1,0.5\n2,0.75\n");
    }
}
