//! Retrieval and distribution-separation metrics: ROC/AuC, TPR@5%,
//! Bhattacharyya coefficient, MAP, MT@10, MR1 and its percentile, and the
//! Bayes posterior curve P(cover | distance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Histogram domain: squared distances between unit vectors.
pub const DISTANCE_RANGE: (f64, f64) = (0.0, 4.0);
pub const DEFAULT_HISTOGRAM_BINS: usize = 200;

/// Paired cover / non-cover distance histograms over `[0, 4]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DistanceHistogramPair {
    pub bin_edges: Vec<f64>,
    pub cover_counts: Vec<u64>,
    pub noncover_counts: Vec<u64>,
    /// Whether +1 Laplace smoothing was applied per bin and class.
    pub laplace_smoothed: bool,
}

impl DistanceHistogramPair {
    pub fn from_samples(cover: &[f32], noncover: &[f32], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let (lo, hi) = DISTANCE_RANGE;
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let fill = |samples: &[f32]| -> Result<Vec<u64>> {
            let mut counts = vec![0u64; bins];
            for &d in samples {
                let d = f64::from(d);
                if !d.is_finite() {
                    return Err(Error::Numeric("non-finite distance in histogram input".into()));
                }
                let idx = (((d - lo) / width).floor() as isize).clamp(0, bins as isize - 1);
                counts[idx as usize] += 1;
            }
            Ok(counts)
        };
        Ok(DistanceHistogramPair {
            bin_edges: edges,
            cover_counts: fill(cover)?,
            noncover_counts: fill(noncover)?,
            laplace_smoothed: false,
        })
    }

    pub fn bins(&self) -> usize {
        self.cover_counts.len()
    }

    /// Add one count per bin and class; smooths away empty-bin artifacts in
    /// the posterior at the cost of slightly flattening the densities.
    pub fn with_laplace_smoothing(mut self) -> Self {
        for c in self.cover_counts.iter_mut() {
            *c += 1;
        }
        for c in self.noncover_counts.iter_mut() {
            *c += 1;
        }
        self.laplace_smoothed = true;
        self
    }

    pub fn cover_total(&self) -> u64 {
        self.cover_counts.iter().sum()
    }

    pub fn noncover_total(&self) -> u64 {
        self.noncover_counts.iter().sum()
    }

    /// Per-class probability mass per bin.
    pub fn densities(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (ct, nt) = (self.cover_total(), self.noncover_total());
        if ct == 0 || nt == 0 {
            return Err(Error::InvalidInput(
                "histogram has an empty class; densities cannot be normalized".into(),
            ));
        }
        let c = self.cover_counts.iter().map(|&x| x as f64 / ct as f64).collect();
        let n = self.noncover_counts.iter().map(|&x| x as f64 / nt as f64).collect();
        Ok((c, n))
    }
}

/// Area under the ROC and the interpolated TPR at 5% FPR. Lower distance
/// means "predicted cover".
pub fn roc(cover_dists: &[f32], noncover_dists: &[f32]) -> Result<(f64, f64)> {
    roc_with_points(cover_dists, noncover_dists).map(|(auc, tpr, _)| (auc, tpr))
}

/// ROC vertices as (fpr, tpr) pairs for export, plus AuC and TPR@5%.
pub fn roc_with_points(
    cover_dists: &[f32],
    noncover_dists: &[f32],
) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    if cover_dists.is_empty() || noncover_dists.is_empty() {
        return Err(Error::InvalidInput("roc: both classes must be non-empty".into()));
    }
    if cover_dists.iter().chain(noncover_dists).any(|d| !d.is_finite()) {
        return Err(Error::Numeric("roc: non-finite distance".into()));
    }

    // Merge both classes ascending; sweep the threshold through tie groups.
    let mut all: Vec<(f32, bool)> = cover_dists
        .iter()
        .map(|&d| (d, true))
        .chain(noncover_dists.iter().map(|&d| (d, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let np = cover_dists.len() as f64;
    let nn = noncover_dists.len() as f64;
    let mut points = vec![(0.0f64, 0.0f64)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < all.len() {
        let d = all[i].0;
        while i < all.len() && all[i].0 == d {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }

    let mut auc = 0.0f64;
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }

    let tpr_at = |target: f64| -> f64 {
        for w in points.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if target <= x1 {
                if x1 == x0 {
                    return y1.max(y0);
                }
                return y0 + (y1 - y0) * (target - x0) / (x1 - x0);
            }
        }
        1.0
    };

    Ok((auc, tpr_at(0.05), points))
}

/// Bhattacharyya coefficient between the normalized class densities;
/// 1 for identical distributions, 0 for disjoint supports.
pub fn bhattacharyya(hist: &DistanceHistogramPair) -> Result<f64> {
    let (pc, pnc) = hist.densities()?;
    Ok(bhattacharyya_from_densities(&pc, &pnc)?)
}

/// BC over explicit densities; each must sum to 1 within 1e-6.
pub fn bhattacharyya_from_densities(pc: &[f64], pnc: &[f64]) -> Result<f64> {
    if pc.len() != pnc.len() {
        return Err(Error::Shape("density vectors differ in length".into()));
    }
    for (name, p) in [("cover", pc), ("non-cover", pnc)] {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "{name} density sums to {sum}, expected 1"
            )));
        }
    }
    Ok(pc.iter().zip(pnc).map(|(&a, &b)| (a * b).sqrt()).sum())
}

/// One query's reference ranking, ascending by squared distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingResult {
    pub query_id: String,
    /// `(reference_id, sq_distance, is_cover)`, non-decreasing distances.
    pub entries: Vec<(String, f32, bool)>,
}

impl RankingResult {
    pub fn new(query_id: String, entries: Vec<(String, f32, bool)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].1 > w[1].1) {
            return Err(Error::Data(format!(
                "ranking for query {query_id:?} has decreasing distances"
            )));
        }
        Ok(RankingResult { query_id, entries })
    }

    pub fn cover_count(&self) -> usize {
        self.entries.iter().filter(|e| e.2).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankingMetrics {
    pub map: f64,
    pub mt_at_10: f64,
    pub mr1: f64,
    pub mr1_percentile: f64,
    /// Queries that had at least one cover and entered the means.
    pub eligible_queries: usize,
    /// Queries excluded because no cover exists in the reference.
    pub excluded_queries: usize,
}

/// MAP, MT@10, MR1 and the MR1 percentile over a set of rankings. Queries
/// without any cover in the reference are excluded and counted.
pub fn ranking_metrics(results: &[RankingResult]) -> Result<RankingMetrics> {
    let eligible: Vec<&RankingResult> = results.iter().filter(|r| r.cover_count() > 0).collect();
    let excluded = results.len() - eligible.len();
    if eligible.is_empty() {
        return Err(Error::InvalidInput(
            "ranking_metrics: no query has a cover in the reference".into(),
        ));
    }

    let per_query: Vec<(f64, u64, u64)> = par::map_indexed(eligible.len(), |qi| {
        let r = eligible[qi];
        let total_covers = r.cover_count() as f64;
        let mut hits = 0u64;
        let mut precision_sum = 0.0f64;
        let mut first_rank = 0u64;
        let mut top10 = 0u64;
        for (rank0, entry) in r.entries.iter().enumerate() {
            if entry.2 {
                hits += 1;
                precision_sum += hits as f64 / (rank0 as f64 + 1.0);
                if first_rank == 0 {
                    first_rank = rank0 as u64 + 1;
                }
                if rank0 < 10 {
                    top10 += 1;
                }
            }
        }
        (precision_sum / total_covers, first_rank, top10)
    });

    let q = eligible.len() as f64;
    let map = per_query.iter().map(|x| x.0).sum::<f64>() / q;
    let mr1 = per_query.iter().map(|x| x.1 as f64).sum::<f64>() / q;
    let mt10 = per_query.iter().map(|x| x.2 as f64).sum::<f64>() / q;
    let mean_ref = eligible.iter().map(|r| r.entries.len() as f64).sum::<f64>() / q;

    Ok(RankingMetrics {
        map,
        mt_at_10: mt10,
        mr1,
        mr1_percentile: 100.0 * mr1 / mean_ref,
        eligible_queries: eligible.len(),
        excluded_queries: excluded,
    })
}

/// Bayes posterior P(cover | distance) per histogram bin.
///
/// `prior_cover` defaults to the empirical pair-count fraction. Bins with
/// zero total density are `None`.
pub fn posterior_curve(
    hist: &DistanceHistogramPair,
    prior_cover: Option<f64>,
) -> Result<Vec<Option<f64>>> {
    let (pc, pnc) = hist.densities()?;
    let prior = match prior_cover {
        Some(p) => {
            if !(0.0 < p && p < 1.0) {
                return Err(Error::Config(format!("prior must be in (0,1), got {p}")));
            }
            p
        }
        None => {
            let ct = hist.cover_total() as f64;
            let nt = hist.noncover_total() as f64;
            ct / (ct + nt)
        }
    };
    Ok(pc
        .iter()
        .zip(&pnc)
        .map(|(&c, &n)| {
            let num = prior * c;
            let den = prior * c + (1.0 - prior) * n;
            (den > 0.0).then(|| num / den)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_has_full_auc() {
        let covers = vec![0.1f32; 20];
        let noncovers = vec![3.0f32; 50];
        let (auc, tpr5) = roc(&covers, &noncovers).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(tpr5, 1.0);
    }

    #[test]
    fn identical_distributions_have_half_auc() {
        let d: Vec<f32> = (0..100).map(|i| i as f32 / 25.0).collect();
        let (auc, _) = roc(&d, &d).unwrap();
        assert!((auc - 0.5).abs() < 1e-9, "auc {auc}");
    }

    #[test]
    fn small_case_auc_is_three_quarters() {
        // covers {0.2, 1.1}, non-covers {0.8, 2.0}: 3 of 4 pairs ordered.
        let (auc, _) = roc(&[0.2, 1.1], &[0.8, 2.0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_error() {
        assert!(roc(&[], &[1.0]).is_err());
        assert!(roc(&[1.0], &[]).is_err());
    }

    #[test]
    fn bc_identical_is_one_disjoint_is_zero() {
        let a = DistanceHistogramPair::from_samples(&[0.5, 1.5, 2.5], &[0.5, 1.5, 2.5], 16).unwrap();
        assert!((bhattacharyya(&a).unwrap() - 1.0).abs() < 1e-12);
        let b = DistanceHistogramPair::from_samples(&[0.1, 0.2], &[3.0, 3.5], 16).unwrap();
        assert_eq!(bhattacharyya(&b).unwrap(), 0.0);
    }

    #[test]
    fn bc_half_overlap_is_sqrt_half() {
        // Cover mass uniform on the first half of the bins, non-cover
        // uniform everywhere: sum of sqrt(p*q) = sqrt(0.5).
        let bins = 200;
        let pc: Vec<f64> = (0..bins).map(|i| if i < bins / 2 { 2.0 / bins as f64 } else { 0.0 }).collect();
        let pnc = vec![1.0 / bins as f64; bins];
        let bc = bhattacharyya_from_densities(&pc, &pnc).unwrap();
        assert!((bc - 0.5f64.sqrt()).abs() < 1e-12, "bc {bc}");
    }

    #[test]
    fn unnormalized_densities_are_rejected() {
        let pc = vec![0.7, 0.7];
        let pnc = vec![0.5, 0.5];
        assert!(bhattacharyya_from_densities(&pc, &pnc).is_err());
    }

    fn ranking(query: &str, flags: &[bool]) -> RankingResult {
        RankingResult::new(
            query.to_string(),
            flags
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("r{i}"), i as f32 * 0.01, c))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_single_cover_rankings() {
        let results: Vec<RankingResult> = (0..4)
            .map(|q| {
                let mut flags = vec![false; 20];
                flags[0] = true;
                ranking(&format!("q{q}"), &flags)
            })
            .collect();
        let m = ranking_metrics(&results).unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!(m.mr1, 1.0);
        assert_eq!(m.mt_at_10, 1.0);
        assert_eq!(m.mr1_percentile, 100.0 / 20.0);
    }

    #[test]
    fn worked_example_mt10_two_mr1_eighty_point_two() {
        // One query ranks ten covers at positions 1-10; four queries have
        // their first cover at rank 100.
        let mut results = Vec::new();
        let mut flags = vec![false; 110];
        flags[..10].iter_mut().for_each(|f| *f = true);
        results.push(ranking("easy", &flags));
        for q in 0..4 {
            let mut flags = vec![false; 110];
            flags[99] = true;
            results.push(ranking(&format!("hard{q}"), &flags));
        }
        let m = ranking_metrics(&results).unwrap();
        assert_eq!(m.mt_at_10, 2.0);
        assert_eq!(m.mr1, 80.2);
    }

    #[test]
    fn queries_without_covers_are_excluded_and_reported() {
        let with = ranking("a", &[true, false]);
        let without = ranking("b", &[false, false]);
        let m = ranking_metrics(&[with, without]).unwrap();
        assert_eq!(m.eligible_queries, 1);
        assert_eq!(m.excluded_queries, 1);
        assert!(matches!(
            ranking_metrics(&[ranking("c", &[false])]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn decreasing_distances_are_rejected() {
        let r = RankingResult::new(
            "q".into(),
            vec![("a".into(), 1.0, false), ("b".into(), 0.5, true)],
        );
        assert!(r.is_err());
    }

    #[test]
    fn posterior_special_cases() {
        let mut hist = DistanceHistogramPair::from_samples(&[0.5], &[1.5], 4).unwrap();
        hist.cover_counts = vec![3, 3, 0, 0];
        hist.noncover_counts = vec![3, 3, 0, 0];
        let post = posterior_curve(&hist, Some(0.5)).unwrap();
        assert!((post[0].unwrap() - 0.5).abs() < 1e-12); // p_c = p_nc, prior half
        assert_eq!(post[2], None); // zero density in both classes
        // p_nc = 0, p_c > 0 -> 1.0
        hist.cover_counts = vec![6, 0, 0, 0];
        hist.noncover_counts = vec![0, 6, 0, 0];
        let post = posterior_curve(&hist, Some(0.5)).unwrap();
        assert_eq!(post[0], Some(1.0));
    }

    #[test]
    fn posterior_direct_arithmetic_case() {
        // p_c = 0.3, p_nc = 0.1, prior 0.2 -> 0.06 / 0.14.
        let mut hist = DistanceHistogramPair::from_samples(&[0.5], &[0.5], 10).unwrap();
        hist.cover_counts = vec![3, 7, 0, 0, 0, 0, 0, 0, 0, 0];
        hist.noncover_counts = vec![1, 9, 0, 0, 0, 0, 0, 0, 0, 0];
        let post = posterior_curve(&hist, Some(0.2)).unwrap();
        let expected = 0.2 * 0.3 / (0.2 * 0.3 + 0.8 * 0.1);
        assert!((post[0].unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.428_571_428_571).abs() < 1e-9);
    }
}
