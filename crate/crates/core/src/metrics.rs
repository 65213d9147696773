//! Accuracy, admittance, group and latent discrimination, and kNN consistency.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Everything the metrics need about one evaluated classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub labels: Vec<u8>,
    pub predictions: Vec<u8>,
    /// Unmasked scores of the unconstrained reference model h*.
    pub reference_scores: Vec<f64>,
    /// Scores of the classifier under evaluation.
    pub candidate_scores: Vec<f64>,
    pub group: Vec<usize>,
    pub protected: Vec<bool>,
}

impl EvalFrame {
    pub fn new(
        labels: Vec<u8>,
        predictions: Vec<u8>,
        reference_scores: Vec<f64>,
        candidate_scores: Vec<f64>,
        group: Vec<usize>,
        protected: Vec<bool>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("evaluation frame has no rows".into()));
        }
        let lens = [
            predictions.len(),
            reference_scores.len(),
            candidate_scores.len(),
            group.len(),
            protected.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidArgument(format!(
                "evaluation frame columns have lengths {n} and {lens:?}"
            )));
        }
        if reference_scores.iter().chain(&candidate_scores).any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("NaN score in evaluation frame".into()));
        }
        Ok(EvalFrame {
            labels,
            predictions,
            reference_scores,
            candidate_scores,
            group,
            protected,
        })
    }

    /// Frame for predictions only; score columns are zero.
    pub fn from_predictions(labels: Vec<u8>, predictions: Vec<u8>, protected: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        let group = protected.iter().map(|&p| usize::from(p)).collect();
        Self::new(labels, predictions, vec![0.0; n], vec![0.0; n], group, protected)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn accuracy(f: &EvalFrame) -> f64 {
    let wrong = f
        .labels
        .iter()
        .zip(&f.predictions)
        .filter(|(y, p)| y != p)
        .count();
    1.0 - wrong as f64 / f.len() as f64
}

/// Positive-prediction rate in the protected and unprotected groups.
pub fn admittance(f: &EvalFrame) -> Result<(f64, f64)> {
    let mut counts = [(0usize, 0usize); 2];
    for (&p, &yhat) in f.protected.iter().zip(&f.predictions) {
        let c = &mut counts[usize::from(p)];
        c.0 += yhat as usize;
        c.1 += 1;
    }
    let rate = |(pos, n): (usize, usize), name: &str| {
        if n == 0 {
            Err(Error::GroupUndefined(format!("{name} group is empty")))
        } else {
            Ok(pos as f64 / n as f64)
        }
    };
    Ok((rate(counts[1], "protected")?, rate(counts[0], "unprotected")?))
}

pub fn group_discrimination(f: &EvalFrame) -> Result<f64> {
    let (a1, a0) = admittance(f)?;
    Ok((a1 - a0).abs())
}

fn groups(f: &EvalFrame) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &gid) in f.group.iter().enumerate() {
        g.entry(gid).or_default().push(i);
    }
    g
}

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Σ over groups of C(n_g, 2).
pub fn within_group_pairs(f: &EvalFrame) -> u64 {
    groups(f).values().map(|rows| pairs(rows.len())).sum()
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("scores are not NaN")
}

/// Violating pairs inside one group.
///
/// Rows are sorted by reference score ascending. For the non-strict count,
/// ties in the reference score are ordered by candidate ascending and the
/// count is the number of strict inversions of the candidate sequence. For
/// the strict count, ties are ordered by candidate descending and the count
/// is (pairs with distinct reference scores) minus (strict ascents).
fn group_violations(reference: &[f64], candidate: &[f64], strict: bool) -> u64 {
    let n = reference.len();
    if n < 2 {
        return 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let c = cmp(candidate[a], candidate[b]);
        cmp(reference[a], reference[b]).then(if strict { c.reverse() } else { c })
    });
    // dense ranks of candidate scores
    let mut sorted: Vec<f64> = candidate.to_vec();
    sorted.sort_by(|a, b| cmp(*a, *b));
    sorted.dedup_by(|a, b| a == b);
    let rank = |v: f64| sorted.partition_point(|&s| s < v);

    let mut tree = Fenwick::new(sorted.len());
    let mut count = 0u64;
    for (seen, &i) in order.iter().enumerate() {
        let r = rank(candidate[i]);
        if strict {
            count += tree.prefix(r); // earlier rows with smaller candidate
        } else {
            count += seen as u64 - tree.prefix(r + 1); // earlier rows with larger candidate
        }
        tree.add(r);
    }
    if strict {
        let mut tied = 0u64;
        let mut start = 0;
        for k in 1..=n {
            if k == n || reference[order[k]] != reference[order[start]] {
                tied += pairs(k - start);
                start = k;
            }
        }
        pairs(n) - tied - count
    } else {
        count
    }
}

fn latent(f: &EvalFrame, strict: bool) -> Result<f64> {
    let gs = groups(f);
    let denom: u64 = gs.values().map(|rows| pairs(rows.len())).sum();
    if denom == 0 {
        return Err(Error::NoWithinGroupPairs);
    }
    let num: u64 = gs
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|rows| {
            let r: Vec<f64> = rows.iter().map(|&i| f.reference_scores[i]).collect();
            let c: Vec<f64> = rows.iter().map(|&i| f.candidate_scores[i]).collect();
            group_violations(&r, &c, strict)
        })
        .sum();
    Ok(num as f64 / denom as f64)
}

/// Fraction of within-group pairs whose reference order is strictly reversed
/// by the candidate: `h*(i) > h*(j)` and `h(i) < h(j)`.
pub fn latent_discrimination(f: &EvalFrame) -> Result<f64> {
    latent(f, false)
}

/// As [`latent_discrimination`], but candidate ties also violate:
/// `h*(i) > h*(j)` and `h(i) <= h(j)`.
pub fn strict_latent_discrimination(f: &EvalFrame) -> Result<f64> {
    latent(f, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub pairs: u64,
}

/// Monte-Carlo estimate of [`latent_discrimination`] from `pairs` uniformly
/// sampled within-group pairs.
pub fn pair_subsample_ld(f: &EvalFrame, pairs_wanted: u64, seed: u64) -> Result<PairEstimate> {
    if pairs_wanted == 0 {
        return Err(Error::InvalidArgument("pairs must be at least 1".into()));
    }
    let gs: Vec<Vec<usize>> = groups(f).into_values().filter(|r| r.len() >= 2).collect();
    let weights: Vec<u64> = gs.iter().map(|r| pairs(r.len())).collect();
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return Err(Error::NoWithinGroupPairs);
    }
    let cumulative: Vec<u64> = weights
        .iter()
        .scan(0u64, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, hs) = (&f.candidate_scores, &f.reference_scores);
    let mut hits = 0u64;
    for _ in 0..pairs_wanted {
        let t = rng.random_range(0..total);
        let g = cumulative.partition_point(|&c| c <= t);
        let rows = &gs[g];
        let a = rng.random_range(0..rows.len());
        let mut b = rng.random_range(0..rows.len() - 1);
        if b >= a {
            b += 1;
        }
        let (i, j) = (rows[a], rows[b]);
        let violates = (hs[i] > hs[j] && h[i] < h[j]) || (hs[j] > hs[i] && h[j] < h[i]);
        hits += u64::from(violates);
    }
    let p = hits as f64 / pairs_wanted as f64;
    Ok(PairEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / pairs_wanted as f64).sqrt(),
        pairs: pairs_wanted,
    })
}

/// For each row, `(values[i], mean of values over its k nearest neighbours)`.
///
/// Distance is Euclidean over the non-sensitive columns of `features`; the
/// row itself is excluded and distance ties go to the lower row index.
pub fn knn_consistency(values: &[f64], features: &Dataset, k: usize) -> Result<Vec<(f64, f64)>> {
    let n = features.len();
    if values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} values for {n} rows",
            values.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::KTooLarge { k, n });
    }
    let cols = features.non_sensitive_columns();
    let packed: Vec<f64> = features
        .rows()
        .flat_map(|r| cols.iter().map(move |&j| r[j]))
        .collect();
    let d = cols.len();
    let row = |i: usize| &packed[i * d..(i + 1) * d];

    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let xi = row(i);
            let mut dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = xi.iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (s, j)
                })
                .collect();
            let by_key = |a: &(f64, usize), b: &(f64, usize)| cmp(a.0, b.0).then(a.1.cmp(&b.1));
            dist.select_nth_unstable_by(k - 1, by_key);
            let mut nearest = dist[..k].to_vec();
            nearest.sort_by(by_key);
            let mean = nearest.iter().map(|&(_, j)| values[j]).sum::<f64>() / k as f64;
            (values[i], mean)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(h_star: &[f64], h: &[f64], group: &[usize]) -> EvalFrame {
        let n = h.len();
        EvalFrame::new(
            vec![0; n],
            vec![0; n],
            h_star.to_vec(),
            h.to_vec(),
            group.to_vec(),
            group.iter().map(|&g| g == 1).collect(),
        )
        .unwrap()
    }

    /// Exhaustive enumeration of unordered within-group pairs.
    fn oracle(f: &EvalFrame, strict: bool) -> (u64, u64) {
        let (hs, h) = (&f.reference_scores, &f.candidate_scores);
        let mut num = 0;
        let mut den = 0;
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                if f.group[i] != f.group[j] {
                    continue;
                }
                den += 1;
                let v = |a: usize, b: usize| {
                    hs[a] > hs[b] && if strict { h[a] <= h[b] } else { h[a] < h[b] }
                };
                num += u64::from(v(i, j) || v(j, i));
            }
        }
        (num, den)
    }

    #[test]
    fn accuracy_examples() {
        let f = EvalFrame::from_predictions(vec![0, 0, 0, 1], vec![0, 0, 1, 1], vec![true, false, true, false]).unwrap();
        assert_eq!(accuracy(&f), 0.75);
        let f = EvalFrame::from_predictions(vec![0, 1], vec![1, 0], vec![true, false]).unwrap();
        assert_eq!(accuracy(&f), 0.0);
        let f = EvalFrame::from_predictions(vec![0, 1], vec![0, 1], vec![true, false]).unwrap();
        assert_eq!(accuracy(&f), 1.0);
    }

    #[test]
    fn admittance_examples() {
        let f = EvalFrame::from_predictions(vec![0; 4], vec![1, 0, 0, 0], vec![true, true, false, false]).unwrap();
        assert_eq!(admittance(&f).unwrap(), (0.5, 0.0));
        assert_eq!(group_discrimination(&f).unwrap(), 0.5);
        let f = EvalFrame::from_predictions(vec![0; 4], vec![1; 4], vec![true, true, false, false]).unwrap();
        assert_eq!(admittance(&f).unwrap(), (1.0, 1.0));
        assert_eq!(group_discrimination(&f).unwrap(), 0.0);
        let f = EvalFrame::from_predictions(vec![0; 2], vec![1, 0], vec![true, false]).unwrap();
        assert_eq!(group_discrimination(&f).unwrap(), 1.0);
    }

    #[test]
    fn admittance_needs_both_groups() {
        let f = EvalFrame::from_predictions(vec![0; 3], vec![1, 0, 1], vec![true; 3]).unwrap();
        assert!(matches!(admittance(&f), Err(Error::GroupUndefined(_))));
    }

    #[test]
    fn full_reversal_is_one() {
        let f = frame(&[0.9, 0.5, 0.1], &[0.1, 0.5, 0.9], &[0, 0, 0]);
        assert_eq!(oracle(&f, false), (3, 3));
        assert_eq!(latent_discrimination(&f).unwrap(), 1.0);
    }

    #[test]
    fn flips_only_in_small_group() {
        // group 0 (size 3) keeps order, group 1 (size 2) flips its single pair
        let f = frame(&[0.1, 0.2, 0.3, 0.4, 0.6], &[0.1, 0.2, 0.3, 0.6, 0.4], &[0, 0, 0, 1, 1]);
        assert_eq!(oracle(&f, false), (1, 4));
        assert_eq!(latent_discrimination(&f).unwrap(), 0.25);
    }

    #[test]
    fn ties_violate_only_strictly() {
        let f = frame(&[0.9, 0.5], &[0.7, 0.7], &[0, 0]);
        assert_eq!(latent_discrimination(&f).unwrap(), 0.0);
        assert_eq!(strict_latent_discrimination(&f).unwrap(), 1.0);

        let f = frame(&[0.9, 0.5, 0.2, 0.4], &[0.3; 4], &[0, 0, 1, 1]);
        assert_eq!(latent_discrimination(&f).unwrap(), 0.0);
        assert!(strict_latent_discrimination(&f).unwrap() > 0.0);

        let f = frame(&[0.9, 0.5, 0.2], &[0.9, 0.5, 0.2], &[0, 0, 0]);
        assert_eq!(strict_latent_discrimination(&f).unwrap(), 0.0);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let f = frame(&[0.9, 0.5], &[0.7, 0.7], &[0, 1]);
        assert!(matches!(latent_discrimination(&f), Err(Error::NoWithinGroupPairs)));
    }

    #[test]
    fn subsample_zero_population_is_zero() {
        let f = frame(&[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]);
        let e = pair_subsample_ld(&f, 1000, 3).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(pair_subsample_ld(&f, 1000, 3).unwrap(), e);
    }

    #[test]
    fn knn_duplicate_rows() {
        let d = Dataset::new(vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 9.0]], vec![0, 0, 0], vec![0]).unwrap();
        let out = knn_consistency(&[1.0, 0.0, 0.5], &d, 1).unwrap();
        assert_eq!(out[0], (1.0, 0.0));
        assert_eq!(out[1], (0.0, 1.0));
    }

    #[test]
    fn knn_tie_goes_to_lower_index() {
        let d = Dataset::new(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]], vec![0, 0, 0], vec![0]).unwrap();
        let out = knn_consistency(&[0.0, 1.0, 2.0], &d, 1).unwrap();
        assert_eq!(out[0], (0.0, 1.0));
    }

    #[test]
    fn knn_k_too_large() {
        let d = Dataset::new(vec![vec![0.0, 0.0], vec![0.0, 1.0]], vec![0, 0], vec![0]).unwrap();
        assert!(matches!(knn_consistency(&[0.0, 1.0], &d, 2), Err(Error::KTooLarge { k: 2, n: 2 })));
    }

    #[test]
    fn knn_constant_predictor() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i % 2) as f64, i as f64, (i * i) as f64]).collect();
        let d = Dataset::new(rows, vec![0; 12], vec![0]).unwrap();
        for (own, mean) in knn_consistency(&[0.3; 12], &d, 4).unwrap() {
            assert_eq!(own, 0.3);
            assert!((mean - 0.3).abs() < 1e-15);
        }
    }

    fn scores() -> impl Strategy<Value = Vec<(f64, f64, usize)>> {
        // coarse values so ties occur often
        proptest::collection::vec(((0u8..8), (0u8..8), (0usize..3)), 1..60).prop_map(|v| {
            v.into_iter()
                .map(|(a, b, g)| (a as f64 / 8.0, b as f64 / 8.0, g))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn latent_matches_pair_enumeration(rows in scores()) {
            let hs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let h: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let g: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let f = frame(&hs, &h, &g);
            let (num, den) = oracle(&f, false);
            let (snum, _) = oracle(&f, true);
            if den == 0 {
                prop_assert!(latent_discrimination(&f).is_err());
            } else {
                prop_assert_eq!(latent_discrimination(&f).unwrap(), num as f64 / den as f64);
                prop_assert_eq!(strict_latent_discrimination(&f).unwrap(), snum as f64 / den as f64);
                prop_assert!(strict_latent_discrimination(&f).unwrap() >= latent_discrimination(&f).unwrap());
            }
        }

        #[test]
        fn monotone_transform_has_no_latent_discrimination(
            hs in proptest::collection::vec(-5.0f64..5.0, 2..80),
            a in 0.1f64..4.0,
            b in -2.0f64..2.0,
        ) {
            let h: Vec<f64> = hs.iter().map(|x| (a * x + b).tanh() + x.powi(3) * 1e-3).collect();
            let g: Vec<usize> = (0..hs.len()).map(|i| i % 2).collect();
            let mut g = g;
            g[0] = 1;
            g[1] = 1;
            let f = frame(&hs, &h, &g);
            prop_assert_eq!(latent_discrimination(&f).unwrap(), 0.0);
        }

        #[test]
        fn permutation_invariance(
            rows in proptest::collection::vec((0u8..2, 0u8..2, any::<bool>()), 2..50),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut rows = rows;
            rows[0].2 = true;
            rows[1].2 = false;
            let build = |r: &[(u8, u8, bool)]| EvalFrame::from_predictions(
                r.iter().map(|x| x.0).collect(),
                r.iter().map(|x| x.1).collect(),
                r.iter().map(|x| x.2).collect(),
            ).unwrap();
            let f = build(&rows);
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let g = build(&shuffled);
            prop_assert_eq!(accuracy(&f), accuracy(&g));
            prop_assert_eq!(admittance(&f).unwrap(), admittance(&g).unwrap());
            prop_assert_eq!(group_discrimination(&f).unwrap(), group_discrimination(&g).unwrap());

            // recompute from raw counts
            let p1 = rows.iter().filter(|r| r.2).count() as f64;
            let p0 = rows.iter().filter(|r| !r.2).count() as f64;
            let a1 = rows.iter().filter(|r| r.2 && r.1 == 1).count() as f64 / p1;
            let a0 = rows.iter().filter(|r| !r.2 && r.1 == 1).count() as f64 / p0;
            prop_assert_eq!(group_discrimination(&f).unwrap(), (a1 - a0).abs());
        }
    }
}
