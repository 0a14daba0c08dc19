//! Exponential-mechanism perturbation over a voiceprint database.
//!
//! For an input `x0` the mechanism releases record `x` of the database with
//! probability proportional to `exp(-eps * d(x0, x))`, where `d` is the
//! angular distance. The output is always a database member.

use crate::embedding::{Voiceprint, VoiceprintDatabase};
use crate::error::{Error, Result};
use crate::metric::distances_to;
use crate::rng::SeededRng;

/// Privacy budget: finite and non-negative. Smaller is more private; zero
/// releases uniformly.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyBudget {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

/// Release distribution for one input voiceprint.
///
/// Probabilities are computed with the minimum distance shifted out of the
/// exponent, so the largest weight is exactly 1 and nothing overflows. For
/// very large `eps * distance` gaps individual probabilities can underflow
/// to 0; `log_probabilities` keeps the exact values in that regime.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationDistribution {
    candidate_ids: Vec<String>,
    center_distance: Vec<f64>,
    probabilities: Vec<f64>,
    log_probabilities: Vec<f64>,
    // Running sum of the shifted weights; last entry is the normalizer.
    cumulative: Vec<f64>,
    epsilon: PrivacyBudget,
}

impl PerturbationDistribution {
    /// Builds the distribution from precomputed distances (database order).
    pub fn from_distances(candidate_ids: Vec<String>, distances: Vec<f64>, epsilon: PrivacyBudget) -> Self {
        assert_eq!(candidate_ids.len(), distances.len());
        assert!(!distances.is_empty(), "distribution needs at least one candidate");
        let eps = epsilon.epsilon();
        let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let exponents: Vec<f64> = distances.iter().map(|d| -eps * (d - d_min)).collect();
        let weights: Vec<f64> = exponents.iter().map(|e| e.exp()).collect();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut total = 0.0;
        for w in &weights {
            total += w;
            cumulative.push(total);
        }
        let log_total = total.ln();
        let probabilities = weights.iter().map(|w| w / total).collect();
        let log_probabilities = exponents.iter().map(|e| e - log_total).collect();
        Self {
            candidate_ids,
            center_distance: distances,
            probabilities,
            log_probabilities,
            cumulative,
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Natural log of each probability, exact even where the probability
    /// itself underflows.
    pub fn log_probabilities(&self) -> &[f64] {
        &self.log_probabilities
    }

    pub fn center_distance(&self) -> &[f64] {
        &self.center_distance
    }

    pub fn epsilon(&self) -> PrivacyBudget {
        self.epsilon
    }

    /// Inverse-CDF selection for a uniform `u` in `[0, 1)`. Boundary ties go
    /// to the lower index.
    pub fn index_for_uniform(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let target = u * total;
        let i = self.cumulative.partition_point(|&c| c <= target);
        if i < self.len() {
            return i;
        }
        // u * total rounded up to total: fall back to the last candidate
        // with non-zero weight.
        self.probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.len() - 1)
    }

    /// Draws a candidate index with one uniform from `rng`.
    pub fn sample_index(&self, rng: &mut SeededRng) -> usize {
        self.index_for_uniform(rng.uniform())
    }
}

/// The release distribution of `x0` over `db`. `x0` does not need to be a
/// database member.
pub fn build_distribution(
    x0: &Voiceprint,
    db: &VoiceprintDatabase,
    eps: PrivacyBudget,
) -> Result<PerturbationDistribution> {
    let distances = distances_to(x0, db)?;
    Ok(PerturbationDistribution::from_distances(
        db.ids().map(str::to_string).collect(),
        distances,
        eps,
    ))
}

/// Draws one candidate id.
pub fn sample<'a>(dist: &'a PerturbationDistribution, rng: &mut SeededRng) -> &'a str {
    &dist.candidate_ids[dist.sample_index(rng)]
}

/// Perturbs `x0` by releasing a database record drawn from its distribution.
pub fn perturb(
    x0: &Voiceprint,
    db: &VoiceprintDatabase,
    eps: PrivacyBudget,
    rng: &mut SeededRng,
) -> Result<Voiceprint> {
    let dist = build_distribution(x0, db, eps)?;
    Ok(db.record(dist.sample_index(rng)).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn vp(id: &str, v: &[f64]) -> Voiceprint {
        Voiceprint::new(id, v.to_vec()).unwrap()
    }

    fn eps(e: f64) -> PrivacyBudget {
        PrivacyBudget::new(e).unwrap()
    }

    fn random_db(rng: &mut rand_chacha::ChaCha8Rng, n: usize, dim: usize) -> VoiceprintDatabase {
        let records = (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                vp(&format!("r{i}"), &v)
            })
            .collect();
        VoiceprintDatabase::new(records, dim).unwrap()
    }

    // Independent oracle: exponentiate unshifted, then normalize.
    fn naive_softmax(distances: &[f64], e: f64) -> Vec<f64> {
        let w: Vec<f64> = distances.iter().map(|d| (-e * d).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0).is_ok());
        assert!(PrivacyBudget::new(-1e-9).is_err());
        assert!(PrivacyBudget::new(f64::NAN).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY).is_err());
    }

    #[test]
    fn uniform_at_zero_epsilon() {
        let db = VoiceprintDatabase::new(
            vec![
                vp("a", &[1.0, 0.0]),
                vp("b", &[0.0, 1.0]),
                vp("c", &[-1.0, 0.2]),
                vp("d", &[0.3, -1.0]),
            ],
            2,
        )
        .unwrap();
        let dist = build_distribution(&vp("q", &[0.7, 0.1]), &db, eps(0.0)).unwrap();
        for p in dist.probabilities() {
            assert_eq!(*p, 0.25);
        }
    }

    #[test]
    fn two_point_closed_form() {
        let db = VoiceprintDatabase::new(vec![vp("a", &[1.0, 0.0]), vp("b", &[0.0, 1.0])], 2).unwrap();
        let dist = build_distribution(db.record(0), &db, eps(2.0)).unwrap();
        let e1 = (-1.0f64).exp();
        let want = [1.0 / (1.0 + e1), e1 / (1.0 + e1)];
        assert_eq!(dist.center_distance(), &[0.0, 0.5]);
        for (p, w) in dist.probabilities().iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
        assert!((dist.probabilities()[0] - 0.7311).abs() < 1e-4);
        assert!((dist.probabilities()[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn matches_naive_softmax_on_random_db() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let db = random_db(&mut rng, 10, 6);
        let x0 = vp("q", &(0..6).map(|_| rng.random::<f64>() - 0.5).collect::<Vec<_>>());
        let dist = build_distribution(&x0, &db, eps(5.0)).unwrap();
        let oracle = naive_softmax(dist.center_distance(), 5.0);
        for (p, q) in dist.probabilities().iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-12);
        }
        let sum: f64 = dist.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let db = VoiceprintDatabase::new(vec![vp("a", &[1.0, 0.0])], 2).unwrap();
        assert!(matches!(
            build_distribution(&vp("q", &[1.0, 0.0, 0.0]), &db, eps(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn huge_epsilon_stays_finite() {
        let db = VoiceprintDatabase::new(vec![vp("a", &[1.0, 0.0]), vp("b", &[0.0, 1.0])], 2).unwrap();
        let dist = build_distribution(db.record(0), &db, eps(1e6)).unwrap();
        assert_eq!(dist.probabilities(), &[1.0, 0.0]);
        assert_eq!(dist.log_probabilities()[0], 0.0);
        assert!((dist.log_probabilities()[1] + 5e5).abs() < 1e-6);
    }

    #[test]
    fn single_candidate_always_chosen() {
        let db = VoiceprintDatabase::new(vec![vp("only", &[0.2, 0.9])], 2).unwrap();
        let mut rng = SeededRng::new(1);
        for e in [0.0, 1.0, 1e6] {
            let dist = build_distribution(&vp("q", &[-1.0, 0.0]), &db, eps(e)).unwrap();
            assert_eq!(dist.probabilities(), &[1.0]);
            for _ in 0..50 {
                assert_eq!(sample(&dist, &mut rng), "only");
                assert_eq!(perturb(&vp("q", &[-1.0, 0.0]), &db, eps(e), &mut rng).unwrap().id(), "only");
            }
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let db = random_db(&mut r, 12, 4);
        let dist = build_distribution(db.record(3), &db, eps(1.5)).unwrap();
        let run = |seed| {
            let mut rng = SeededRng::new(seed);
            (0..200).map(|_| sample(&dist, &mut rng).to_string()).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn uniform_sampling_concentrates() {
        let db = VoiceprintDatabase::new(
            vec![
                vp("a", &[1.0, 0.0]),
                vp("b", &[0.0, 1.0]),
                vp("c", &[-1.0, 0.0]),
                vp("d", &[0.0, -1.0]),
            ],
            2,
        )
        .unwrap();
        let dist = build_distribution(db.record(0), &db, eps(0.0)).unwrap();
        let mut rng = SeededRng::new(42);
        let mut counts = [0usize; 4];
        let draws = 400_000;
        for _ in 0..draws {
            counts[dist.sample_index(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.005, "{counts:?}");
        }
    }

    #[test]
    fn self_selection_dominates_at_large_epsilon() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let db = random_db(&mut r, 8, 16);
        let x0 = db.record(2).clone();
        let mut rng = SeededRng::new(77);
        let hits = (0..10_000)
            .filter(|_| perturb(&x0, &db, eps(1e6), &mut rng).unwrap().id() == x0.id())
            .count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn inverse_cdf_boundaries() {
        let dist = PerturbationDistribution::from_distances(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.0, 0.0, 0.0],
            eps(1.0),
        );
        assert_eq!(dist.index_for_uniform(0.0), 0);
        // Exactly on the first boundary: 1/3 * 3 = 1.0 == cumulative[0].
        assert_eq!(dist.index_for_uniform(1.0 / 3.0), 1);
        assert_eq!(dist.index_for_uniform(0.999_999_999), 2);
        assert_eq!(dist.index_for_uniform(1.0 - f64::EPSILON / 2.0), 2);
    }

    #[test]
    fn trailing_zero_weights_never_selected() {
        let dist = PerturbationDistribution::from_distances(
            vec!["a".into(), "b".into()],
            vec![0.0, 1.0],
            eps(1e6),
        );
        assert_eq!(dist.index_for_uniform(1.0 - f64::EPSILON / 2.0), 0);
    }

    #[test]
    fn duplicates_are_distinct_outcomes_with_equal_mass() {
        let db = VoiceprintDatabase::new(
            vec![vp("a", &[1.0, 0.0]), vp("a2", &[1.0, 0.0]), vp("b", &[0.0, 1.0])],
            2,
        )
        .unwrap();
        let dist = build_distribution(&vp("q", &[1.0, 0.3]), &db, eps(3.0)).unwrap();
        assert_eq!(dist.probabilities()[0], dist.probabilities()[1]);
        assert_eq!(dist.len(), 3);
    }

    fn small_db() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (2usize..9).prop_flat_map(|n| {
            (
                prop::collection::vec(
                    prop::collection::vec(-1.0f64..1.0, 3).prop_filter("nz", |v| v.iter().any(|x| x.abs() > 1e-3)),
                    n,
                ),
                prop::collection::vec(-1.0f64..1.0, 3).prop_filter("nz", |v| v.iter().any(|x| x.abs() > 1e-3)),
            )
        })
    }

    fn to_db(rows: &[Vec<f64>]) -> VoiceprintDatabase {
        VoiceprintDatabase::new(
            rows.iter().enumerate().map(|(i, r)| vp(&format!("r{i}"), r)).collect(),
            3,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn distribution_invariants((rows, q) in small_db(), e in 0.0f64..50.0) {
            let db = to_db(&rows);
            let dist = build_distribution(&vp("q", &q), &db, eps(e)).unwrap();
            let sum: f64 = dist.probabilities().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(dist.probabilities().iter().all(|&p| p > 0.0));
            for i in 0..dist.len() {
                for j in 0..dist.len() {
                    if dist.center_distance()[i] < dist.center_distance()[j] {
                        prop_assert!(dist.probabilities()[i] >= dist.probabilities()[j]);
                    }
                }
            }
        }

        #[test]
        fn unnormalized_ratio_bound((rows, _q) in small_db(), e in 0.0f64..20.0) {
            let db = to_db(&rows);
            let m = crate::metric::distance_matrix(&db);
            let n = db.len();
            for x in 0..n {
                for y in 0..n {
                    for t in 0..n {
                        let lhs = -e * m.get(x, t) + e * m.get(y, t);
                        prop_assert!(lhs <= e * m.get(x, y) + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn nearest_probability_monotone_in_epsilon((rows, q) in small_db(), e1 in 0.0f64..20.0, de in 0.0f64..20.0) {
            let db = to_db(&rows);
            let q = vp("q", &q);
            let a = build_distribution(&q, &db, eps(e1)).unwrap();
            let b = build_distribution(&q, &db, eps(e1 + de)).unwrap();
            let nearest = a
                .center_distance()
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .unwrap()
                .0;
            prop_assert!(b.probabilities()[nearest] >= a.probabilities()[nearest] - 1e-15);
        }

        #[test]
        fn permutation_equivariant((rows, q) in small_db(), e in 0.0f64..20.0, rot in 0usize..8) {
            let db = to_db(&rows);
            let n = rows.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted = db.subset(&perm).unwrap();
            let q = vp("q", &q);
            let a = build_distribution(&q, &db, eps(e)).unwrap();
            let b = build_distribution(&q, &permuted, eps(e)).unwrap();
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(&b.candidate_ids()[k], &a.candidate_ids()[src]);
                prop_assert!((b.probabilities()[k] - a.probabilities()[src]).abs() < 1e-15);
            }
        }
    }
}
