//! Retrieval evaluation: CMC and mAP over query/gallery sets with the
//! standard same-identity same-camera exclusion.
//!
//! Gallery items carrying a distractor flag are rankable but never count as
//! positives. Ties in distance are broken by the original gallery index, so
//! reports are deterministic; under exact ties a gallery permutation can
//! therefore reorder tied items.

use crate::gaussian::{wasserstein_sq, DiagGaussian};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    EmptyInput { detail: String },
    DimensionMismatch { detail: String },
    ModeMismatch { detail: String },
    RankOutOfRange { rank: usize, gallery: usize },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyInput { detail } => write!(f, "empty input: {detail}"),
            EvalError::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            EvalError::ModeMismatch { detail } => write!(f, "mode mismatch: {detail}"),
            EvalError::RankOutOfRange { rank, gallery } => {
                write!(f, "rank {rank} out of range for gallery of {gallery}")
            }
        }
    }
}

impl std::error::Error for EvalError {}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    Euclidean,
    Cosine,
    Wasserstein,
}

impl DistanceMode {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMode::Euclidean => "euclidean",
            DistanceMode::Cosine => "cosine",
            DistanceMode::Wasserstein => "wasserstein",
        }
    }
}

/// Embeddings with identity and camera labels for one side of a retrieval
/// run. `posteriors` is present when the set was built in distribution mode.
#[derive(Debug, Clone)]
pub struct RetrievalSet {
    features: Vec<Vec<f64>>,
    posteriors: Option<Vec<DiagGaussian>>,
    ids: Vec<i64>,
    cams: Vec<u32>,
    distractor: Vec<bool>,
}

impl RetrievalSet {
    pub fn from_features(features: Vec<Vec<f64>>, ids: Vec<i64>, cams: Vec<u32>) -> Result<Self> {
        Self::build(features, None, ids, cams, None)
    }

    pub fn from_posteriors(posteriors: Vec<DiagGaussian>, ids: Vec<i64>, cams: Vec<u32>) -> Result<Self> {
        let features = posteriors.iter().map(|p| p.mean().to_vec()).collect();
        Self::build(features, Some(posteriors), ids, cams, None)
    }

    pub fn with_distractors(mut self, distractor: Vec<bool>) -> Result<Self> {
        if distractor.len() != self.len() {
            return Err(EvalError::DimensionMismatch {
                detail: format!("{} distractor flags for {} entries", distractor.len(), self.len()),
            });
        }
        self.distractor = distractor;
        Ok(self)
    }

    fn build(
        features: Vec<Vec<f64>>,
        posteriors: Option<Vec<DiagGaussian>>,
        ids: Vec<i64>,
        cams: Vec<u32>,
        distractor: Option<Vec<bool>>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(EvalError::EmptyInput {
                detail: "no entries".into(),
            });
        }
        if features.len() != ids.len() || features.len() != cams.len() {
            return Err(EvalError::DimensionMismatch {
                detail: format!(
                    "{} features, {} ids, {} cams",
                    features.len(),
                    ids.len(),
                    cams.len()
                ),
            });
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(EvalError::DimensionMismatch {
                detail: "ragged feature dimensions".into(),
            });
        }
        let n = features.len();
        Ok(RetrievalSet {
            features,
            posteriors,
            ids,
            cams,
            distractor: distractor.unwrap_or_else(|| vec![false; n]),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn cams(&self) -> &[u32] {
        &self.cams
    }

    pub fn distractors(&self) -> &[bool] {
        &self.distractor
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// Q x G distance matrix.
pub fn pairwise_distance(
    queries: &RetrievalSet,
    gallery: &RetrievalSet,
    mode: DistanceMode,
) -> Result<Vec<Vec<f64>>> {
    if queries.dim() != gallery.dim() {
        return Err(EvalError::DimensionMismatch {
            detail: format!("query dim {} vs gallery dim {}", queries.dim(), gallery.dim()),
        });
    }
    match mode {
        DistanceMode::Euclidean => Ok(queries
            .features
            .iter()
            .map(|q| gallery.features.iter().map(|g| euclidean(q, g)).collect())
            .collect()),
        DistanceMode::Cosine => Ok(queries
            .features
            .iter()
            .map(|q| gallery.features.iter().map(|g| cosine_distance(q, g)).collect())
            .collect()),
        DistanceMode::Wasserstein => {
            let (Some(qp), Some(gp)) = (&queries.posteriors, &gallery.posteriors) else {
                return Err(EvalError::ModeMismatch {
                    detail: "wasserstein distance needs posterior sets on both sides".into(),
                });
            };
            qp.iter()
                .map(|q| {
                    gp.iter()
                        .map(|g| {
                            wasserstein_sq(q, g).map_err(|e| EvalError::DimensionMismatch {
                                detail: e.to_string(),
                            })
                        })
                        .collect()
                })
                .collect()
        }
    }
}

/// CMC curve, mAP, and per-query average precision.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    /// cmc[r-1] is the rank-r match rate; length equals the gallery size.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub distance_mode: String,
    /// Queries with no valid positive after exclusion; skipped from rates.
    pub skipped_queries: usize,
    pub evaluated_queries: usize,
}

impl EvalReport {
    /// Rank-r match rate, clamped to the curve length.
    pub fn rank(&self, r: usize) -> f64 {
        assert!(r >= 1, "ranks are 1-based");
        self.cmc[(r - 1).min(self.cmc.len() - 1)]
    }

    /// One-line summary: rank1, rank5, rank10, map.
    pub fn csv_summary(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6}",
            self.rank(1),
            self.rank(5),
            self.rank(10),
            self.map
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores a precomputed distance matrix. Per query: sort gallery ascending
/// by (distance, original index), drop same-id same-camera entries, then a
/// hit at 1-based rank r credits cmc[r..] and every positive at rank k
/// contributes (positives in top k) / k to that query's AP.
pub fn evaluate_distances(
    distances: &[Vec<f64>],
    query_ids: &[i64],
    query_cams: &[u32],
    gallery: &RetrievalSet,
    mode_name: &str,
) -> Result<EvalReport> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyInput {
            detail: "empty gallery".into(),
        });
    }
    if distances.len() != query_ids.len() || distances.len() != query_cams.len() {
        return Err(EvalError::DimensionMismatch {
            detail: "distance rows vs query labels".into(),
        });
    }
    let g = gallery.len();
    let mut cmc_hits = vec![0usize; g];
    let mut aps = Vec::new();
    let mut skipped = 0usize;

    for ((row, &qid), &qcam) in distances.iter().zip(query_ids).zip(query_cams) {
        if row.len() != g {
            return Err(EvalError::DimensionMismatch {
                detail: format!("distance row of {} for gallery of {g}", row.len()),
            });
        }
        let mut order: Vec<usize> = (0..g).collect();
        order.sort_by(|&a, &b| {
            row[a]
                .partial_cmp(&row[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut first_hit: Option<usize> = None;
        let mut positives_seen = 0usize;
        let mut precision_sum = 0.0;
        let mut rank = 0usize;
        for &gi in &order {
            // protocol exclusion: same identity seen by the same camera
            if gallery.ids[gi] == qid && gallery.cams[gi] == qcam {
                continue;
            }
            rank += 1;
            let positive = gallery.ids[gi] == qid && !gallery.distractor[gi];
            if positive {
                positives_seen += 1;
                precision_sum += positives_seen as f64 / rank as f64;
                if first_hit.is_none() {
                    first_hit = Some(rank);
                }
            }
        }
        if positives_seen == 0 {
            skipped += 1;
            continue;
        }
        cmc_hits[first_hit.unwrap() - 1] += 1;
        aps.push(precision_sum / positives_seen as f64);
    }

    let evaluated = aps.len();
    if evaluated == 0 {
        return Err(EvalError::EmptyInput {
            detail: "no query had a valid positive".into(),
        });
    }
    let mut cmc = Vec::with_capacity(g);
    let mut acc = 0usize;
    for hits in cmc_hits {
        acc += hits;
        cmc.push(acc as f64 / evaluated as f64);
    }
    let map = aps.iter().sum::<f64>() / evaluated as f64;
    Ok(EvalReport {
        cmc,
        map,
        per_query_ap: aps,
        distance_mode: mode_name.to_string(),
        skipped_queries: skipped,
        evaluated_queries: evaluated,
    })
}

pub fn evaluate(queries: &RetrievalSet, gallery: &RetrievalSet, mode: DistanceMode) -> Result<EvalReport> {
    let distances = pairwise_distance(queries, gallery, mode)?;
    evaluate_distances(&distances, &queries.ids, &queries.cams, gallery, mode.name())
}

/// Extracts (rank, rate) pairs; errors when a rank exceeds the curve.
pub fn cmc_curve(report: &EvalReport, ranks: &[usize]) -> Result<Vec<(usize, f64)>> {
    ranks
        .iter()
        .map(|&r| {
            if r == 0 || r > report.cmc.len() {
                return Err(EvalError::RankOutOfRange {
                    rank: r,
                    gallery: report.cmc.len(),
                });
            }
            Ok((r, report.cmc[r - 1]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn set(features: Vec<Vec<f64>>, ids: Vec<i64>, cams: Vec<u32>) -> RetrievalSet {
        RetrievalSet::from_features(features, ids, cams).unwrap()
    }

    #[test]
    fn euclidean_of_identical_vectors_is_zero() {
        let q = set(vec![vec![1.0, 2.0]], vec![1], vec![1]);
        let g = set(vec![vec![1.0, 2.0], vec![3.0, 0.0]], vec![1, 2], vec![2, 2]);
        let d = pairwise_distance(&q, &g, DistanceMode::Euclidean).unwrap();
        assert_eq!(d[0][0], 0.0);
        assert!(d[0][1] > 0.0);
    }

    #[test]
    fn cosine_of_orthogonal_unit_vectors_is_one() {
        let q = set(vec![vec![1.0, 0.0]], vec![1], vec![1]);
        let g = set(vec![vec![0.0, 1.0]], vec![1], vec![2]);
        let d = pairwise_distance(&q, &g, DistanceMode::Cosine).unwrap();
        assert!((d[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_mode_reproduces_closed_form_case() {
        let q = RetrievalSet::from_posteriors(
            vec![DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 4.0]).unwrap()],
            vec![1],
            vec![1],
        )
        .unwrap();
        let g = RetrievalSet::from_posteriors(
            vec![DiagGaussian::new(vec![3.0, 0.0], vec![4.0, 1.0]).unwrap()],
            vec![1],
            vec![2],
        )
        .unwrap();
        let d = pairwise_distance(&q, &g, DistanceMode::Wasserstein).unwrap();
        assert!((d[0][0] - 11.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_needs_posteriors() {
        let q = set(vec![vec![0.0]], vec![1], vec![1]);
        let g = set(vec![vec![1.0]], vec![1], vec![2]);
        assert!(matches!(
            pairwise_distance(&q, &g, DistanceMode::Wasserstein),
            Err(EvalError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn perfect_retrieval_scores_one() {
        // every query's single positive ranks first
        let q = set(vec![vec![0.0, 0.0], vec![10.0, 10.0]], vec![1, 2], vec![1, 1]);
        let g = set(
            vec![vec![0.1, 0.0], vec![10.1, 10.0], vec![5.0, 5.0]],
            vec![1, 2, 3],
            vec![2, 2, 2],
        );
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        assert_eq!(report.rank(1), 1.0);
        assert_eq!(report.map, 1.0);
        assert_eq!(report.skipped_queries, 0);
    }

    #[test]
    fn hand_ap_case() {
        // one query, ranked gallery relevance [+, -, +]
        let q = set(vec![vec![0.0]], vec![7], vec![1]);
        let g = set(
            vec![vec![1.0], vec![2.0], vec![3.0]],
            vec![7, 8, 7],
            vec![2, 2, 2],
        );
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        let expected = (1.0 + 2.0 / 3.0) / 2.0;
        assert!((report.map - expected).abs() < 1e-12);
        assert!((report.map - 0.8333).abs() < 5e-5);
        assert_eq!(report.rank(1), 1.0);
    }

    #[test]
    fn same_camera_positive_is_excluded() {
        // rank-1 item shares id AND camera with the query, so it is dropped
        // and the cross-camera positive decides the score
        let q = set(vec![vec![0.0]], vec![3], vec![1]);
        let g = set(
            vec![vec![0.1], vec![0.5], vec![0.2]],
            vec![3, 3, 9],
            vec![1, 2, 1],
        );
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        // after exclusion the list is [id 9 at 0.2, id 3 at 0.5]
        assert_eq!(report.rank(1), 0.0);
        assert_eq!(report.rank(2), 1.0);
        assert!((report.map - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distractors_rank_but_never_match() {
        let q = set(vec![vec![0.0]], vec![4], vec![1]);
        let g = set(
            vec![vec![0.1], vec![0.2]],
            vec![-1, 4],
            vec![2, 2],
        )
        .with_distractors(vec![true, false])
        .unwrap();
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        // distractor occupies rank 1
        assert_eq!(report.rank(1), 0.0);
        assert_eq!(report.rank(2), 1.0);
    }

    #[test]
    fn query_without_positives_is_skipped_and_counted() {
        let q = set(vec![vec![0.0], vec![5.0]], vec![1, 99], vec![1, 1]);
        let g = set(vec![vec![0.1], vec![4.9]], vec![1, 2], vec![2, 2]);
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        assert_eq!(report.skipped_queries, 1);
        assert_eq!(report.evaluated_queries, 1);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn empty_gallery_is_error() {
        let empty = RetrievalSet::from_features(vec![], vec![], vec![]);
        assert!(empty.is_err());
    }

    #[test]
    fn cmc_is_monotone_and_curve_extraction_checks_range() {
        let mut rng = Rng::new(5);
        let q = set(
            (0..6).map(|_| vec![rng.normal(), rng.normal()]).collect(),
            vec![1, 2, 3, 1, 2, 3],
            vec![1, 1, 1, 2, 2, 2],
        );
        let g = set(
            (0..12).map(|_| vec![rng.normal(), rng.normal()]).collect(),
            vec![1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4],
            vec![3, 3, 3, 3, 4, 4, 4, 4, 3, 3, 4, 4],
        );
        let report = evaluate(&q, &g, DistanceMode::Euclidean).unwrap();
        for pair in report.cmc.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert_eq!(*report.cmc.last().unwrap(), 1.0);
        let curve = cmc_curve(&report, &[1, 5, 12]).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(cmc_curve(&report, &[13]).is_err());
        assert!(cmc_curve(&report, &[0]).is_err());
    }

    // independent naive implementation used as an oracle
    pub(crate) fn brute_force(
        distances: &[Vec<f64>],
        query_ids: &[i64],
        query_cams: &[u32],
        gallery_ids: &[i64],
        gallery_cams: &[u32],
        gallery_distractor: &[bool],
    ) -> (Vec<f64>, f64, usize) {
        let g = gallery_ids.len();
        let mut per_query_cmc: Vec<Vec<f64>> = Vec::new();
        let mut aps = Vec::new();
        let mut skipped = 0;
        for qi in 0..query_ids.len() {
            let mut items: Vec<(f64, usize)> = (0..g).map(|gi| (distances[qi][gi], gi)).collect();
            items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let kept: Vec<usize> = items
                .iter()
                .map(|&(_, gi)| gi)
                .filter(|&gi| !(gallery_ids[gi] == query_ids[qi] && gallery_cams[gi] == query_cams[qi]))
                .collect();
            let good: Vec<bool> = kept
                .iter()
                .map(|&gi| gallery_ids[gi] == query_ids[qi] && !gallery_distractor[gi])
                .collect();
            let total_pos = good.iter().filter(|&&b| b).count();
            if total_pos == 0 {
                skipped += 1;
                continue;
            }
            let mut cmc_row = vec![0.0; g];
            let first = good.iter().position(|&b| b).unwrap();
            for slot in cmc_row.iter_mut().skip(first) {
                *slot = 1.0;
            }
            per_query_cmc.push(cmc_row);
            let mut seen = 0;
            let mut ap = 0.0;
            for (pos, &is_good) in good.iter().enumerate() {
                if is_good {
                    seen += 1;
                    ap += seen as f64 / (pos + 1) as f64;
                }
            }
            aps.push(ap / total_pos as f64);
        }
        let n = per_query_cmc.len() as f64;
        let mut cmc = vec![0.0; g];
        for row in &per_query_cmc {
            for (c, v) in cmc.iter_mut().zip(row) {
                *c += v;
            }
        }
        for c in &mut cmc {
            *c /= n;
        }
        (cmc, aps.iter().sum::<f64>() / n.max(1.0), skipped)
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = Rng::new(99);
        for _ in 0..50 {
            let q_n = 1 + rng.below(10);
            let g_n = 2 + rng.below(49);
            let q_ids: Vec<i64> = (0..q_n).map(|_| rng.below(5) as i64).collect();
            let q_cams: Vec<u32> = (0..q_n).map(|_| rng.below(3) as u32).collect();
            let g_ids: Vec<i64> = (0..g_n).map(|_| rng.below(5) as i64).collect();
            let g_cams: Vec<u32> = (0..g_n).map(|_| rng.below(3) as u32).collect();
            let g_distractor: Vec<bool> = (0..g_n).map(|_| rng.below(10) == 0).collect();
            let distances: Vec<Vec<f64>> = (0..q_n)
                .map(|_| (0..g_n).map(|_| rng.next_f64()).collect())
                .collect();
            let gallery = RetrievalSet::from_features(
                (0..g_n).map(|_| vec![0.0]).collect(),
                g_ids.clone(),
                g_cams.clone(),
            )
            .unwrap()
            .with_distractors(g_distractor.clone())
            .unwrap();
            let ours = evaluate_distances(&distances, &q_ids, &q_cams, &gallery, "test");
            let (cmc, map, skipped) =
                brute_force(&distances, &q_ids, &q_cams, &g_ids, &g_cams, &g_distractor);
            match ours {
                Ok(report) => {
                    assert_eq!(report.skipped_queries, skipped);
                    assert!((report.map - map).abs() < 1e-12);
                    for (a, b) in report.cmc.iter().zip(&cmc) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
                Err(_) => {
                    // evaluate errors only when no query at all has a positive
                    assert_eq!(skipped, q_ids.len());
                }
            }
        }
    }

    #[test]
    fn monotone_distance_transform_preserves_report() {
        let mut rng = Rng::new(7);
        let q_ids = vec![1, 2, 3];
        let q_cams = vec![1, 1, 1];
        let gallery = set(
            (0..9).map(|_| vec![rng.normal()]).collect(),
            vec![1, 2, 3, 1, 2, 3, 4, 4, 4],
            vec![2, 2, 2, 3, 3, 3, 2, 3, 2],
        );
        let distances: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..9).map(|_| rng.next_f64() * 4.0).collect())
            .collect();
        let base = evaluate_distances(&distances, &q_ids, &q_cams, &gallery, "base").unwrap();
        let squashed: Vec<Vec<f64>> = distances
            .iter()
            .map(|row| row.iter().map(|&d| (d + 1.0).ln()).collect())
            .collect();
        let transformed =
            evaluate_distances(&squashed, &q_ids, &q_cams, &gallery, "base").unwrap();
        assert_eq!(base, transformed);
    }

    #[test]
    fn gallery_permutation_preserves_report() {
        let mut rng = Rng::new(11);
        let q = set(
            (0..4).map(|_| vec![rng.normal(), rng.normal()]).collect(),
            vec![1, 2, 1, 2],
            vec![1, 1, 2, 2],
        );
        let g_feats: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let g_ids = vec![1, 2, 1, 2, 1, 2, 3, 3, 3, 3];
        let g_cams = vec![3, 3, 4, 4, 3, 4, 3, 4, 3, 4];
        let gallery = set(g_feats.clone(), g_ids.clone(), g_cams.clone());
        let base = evaluate(&q, &gallery, DistanceMode::Euclidean).unwrap();

        let mut perm: Vec<usize> = (0..10).collect();
        rng.shuffle(&mut perm);
        let gallery_perm = set(
            perm.iter().map(|&i| g_feats[i].clone()).collect(),
            perm.iter().map(|&i| g_ids[i]).collect(),
            perm.iter().map(|&i| g_cams[i]).collect(),
        );
        let permuted = evaluate(&q, &gallery_perm, DistanceMode::Euclidean).unwrap();
        assert_eq!(base.cmc, permuted.cmc);
        assert!((base.map - permuted.map).abs() < 1e-12);
    }
}
