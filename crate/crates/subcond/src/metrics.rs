//! Exact distance computations between explicit distributions.
//!
//! # Normalization convention
//!
//! Every distance here carries the 1/2 factor, so total variation and its
//! conditional variants all lie in `[0, 1]`:
//!
//! * `tv(p, q) = ½ Σ_x |p(x) − q(x)|`
//! * `conditional_tv(μ, μ′, A) = tv(μ|A, μ′|A)`
//! * `avg_conditional_marginal_distance` averages ½-normalized conditional
//!   marginal distances under μ-prefix weights.
//!
//! Some treatments define the conditional distances without the 1/2; the
//! chain-rule inequality and the heavy-index counting bound are invariant
//! under uniform rescaling, so every decomposition and threshold in this
//! crate is stated in the ½-normalized convention. Thresholds passed to the
//! testers are interpreted the same way.
//!
//! Hellinger distance is computed through the Bhattacharyya coefficient,
//! `H(p, q) = sqrt(1 − Σ √(p q))`, which is stable near zero; the
//! squared-difference form is used only as a cross-check in tests.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::distributions::{JointTable, MassFunction, SubcubeCondition};
use crate::error::{Error, Result};
use crate::Outcome;

/// The n-th harmonic number `Σ_{k=1..n} 1/k`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

fn check_same_shape<D: MassFunction + ?Sized>(p: &D, q: &D) -> Result<()> {
    let (n_left, m_left) = p.shape();
    let (n_right, m_right) = q.shape();
    if (n_left, m_left) != (n_right, m_right) {
        return Err(Error::ShapeMismatch {
            n_left,
            m_left,
            n_right,
            m_right,
        });
    }
    Ok(())
}

/// Total variation distance `½ Σ |p − q|`.
pub fn tv_distance<D: MassFunction + ?Sized>(p: &D, q: &D) -> Result<f64> {
    check_same_shape(p, q)?;
    Ok(tv_slices(p.masses(), q.masses()))
}

pub(crate) fn tv_slices(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Bhattacharyya coefficient `Σ √(p q)`.
pub fn bhattacharyya<D: MassFunction + ?Sized>(p: &D, q: &D) -> Result<f64> {
    check_same_shape(p, q)?;
    Ok(p.masses()
        .iter()
        .zip(q.masses())
        .map(|(a, b)| (a * b).sqrt())
        .sum())
}

/// Hellinger distance `sqrt(1 − Σ √(p q))`.
pub fn hellinger<D: MassFunction + ?Sized>(p: &D, q: &D) -> Result<f64> {
    Ok((1.0 - bhattacharyya(p, q)?).max(0.0).sqrt())
}

/// Total variation between the restrictions of two joints to a subcube.
pub fn conditional_tv(p: &JointTable, q: &JointTable, cond: &SubcubeCondition) -> Result<f64> {
    check_same_shape(p, q)?;
    tv_distance(&p.restrict(cond)?, &q.restrict(cond)?)
}

/// Average conditional marginal distance at coordinate `coord >= 1`:
/// `Σ_w Pr_{p^(coord)}(w) · tv(p_coord|w, q_coord|w)`, with prefix weights
/// drawn from the first argument.
pub fn avg_conditional_marginal_distance(
    p: &JointTable,
    q: &JointTable,
    coord: usize,
) -> Result<f64> {
    check_same_shape(p, q)?;
    if coord == 0 || coord >= p.n() {
        return Err(Error::CoordinateOutOfRange {
            index: coord,
            n: p.n(),
        });
    }
    Ok(avg_conditional_at(p, q, coord))
}

/// As above without bounds checking; `coord == 0` yields the unconditional
/// marginal distance (the expectation over the empty prefix).
fn avg_conditional_at(p: &JointTable, q: &JointTable, coord: usize) -> f64 {
    let m = p.alphabet().size();
    let prefix_count = m.pow(coord as u32);
    let mut total = 0.0f64;
    let mut prefix = vec![0usize; coord];
    for flat in 0..prefix_count {
        let mut rem = flat;
        for slot in prefix.iter_mut().rev() {
            *slot = rem % m;
            rem /= m;
        }
        let weight = p.prefix_mass(&prefix).expect("prefix in range");
        if weight == 0.0 {
            continue;
        }
        let pc = p.conditional_marginal(coord, &prefix).expect("in range");
        let qc = q.conditional_marginal(coord, &prefix).expect("in range");
        total += weight * tv_slices(pc.probs(), qc.probs());
    }
    total
}

/// One value per coordinate: index 0 holds `tv(p_1, q_1)`, index `i >= 1`
/// holds the average conditional marginal distance at coordinate `i`.
pub fn conditional_distance_profile(p: &JointTable, q: &JointTable) -> Result<Vec<f64>> {
    check_same_shape(p, q)?;
    let first = tv_distance(&p.marginal(0)?, &q.marginal(0)?)?;
    let mut profile = vec![first];
    for coord in 1..p.n() {
        profile.push(avg_conditional_at(p, q, coord));
    }
    Ok(profile)
}

/// Exact decomposition certifying that the joint distance is bounded by the
/// sum of the first-marginal distance and the average conditional marginal
/// distances of the remaining coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct ChainRuleReport {
    /// `tv(μ, μ′)` over the full joint.
    pub lhs: f64,
    /// `tv(μ_1, μ′_1)`.
    pub first_term: f64,
    /// Average conditional marginal distances for coordinates 2..n.
    pub conditional_terms: Vec<f64>,
    /// `first_term + Σ conditional_terms`.
    pub rhs: f64,
}

const CHAIN_RULE_SLACK: f64 = 1e-9;

/// Computes both sides of the chain-rule inequality by full enumeration.
pub fn chain_rule_report(p: &JointTable, q: &JointTable) -> Result<ChainRuleReport> {
    let profile = conditional_distance_profile(p, q)?;
    let lhs = tv_distance(p, q)?;
    let first_term = profile[0];
    let conditional_terms = profile[1..].to_vec();
    let rhs: f64 = profile.iter().sum();
    if lhs > rhs + CHAIN_RULE_SLACK {
        return Err(Error::InvariantViolated(format!(
            "chain rule violated: lhs {lhs} > rhs {rhs}"
        )));
    }
    Ok(ChainRuleReport {
        lhs,
        first_term,
        conditional_terms,
        rhs,
    })
}

/// A level `c` whose threshold `ε / (2^c · H(n))` is met by at least
/// `2^(c−1)` coordinates of the conditional-distance profile.
#[derive(Debug, Clone, Serialize)]
pub struct HeavyIndexReport {
    pub c: u32,
    pub threshold: f64,
    /// 0-based coordinates whose profile value meets the threshold.
    pub indices: BTreeSet<usize>,
}

/// Searches `c = 1 ..= ceil(log2 n) + 1` for the smallest level at which the
/// set of coordinates above `ε / (2^c · H(n))` has size at least `2^(c−1)`.
///
/// Such a level always exists when `tv(p, q) >= ε`; if the distance premise
/// fails the search is not attempted and a premise report is returned.
pub fn heavy_index_report(
    p: &JointTable,
    q: &JointTable,
    epsilon: f64,
) -> Result<Outcome<HeavyIndexReport>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be in (0, 1], got {epsilon}"
        )));
    }
    let distance = tv_distance(p, q)?;
    if distance < epsilon {
        return Ok(Outcome::PremiseNotMet {
            reason: format!("tv distance {distance} is below epsilon {epsilon}"),
        });
    }
    let profile = conditional_distance_profile(p, q)?;
    let n = p.n();
    let h = harmonic(n);
    let c_max = ceil_log2(n) + 1;
    for c in 1..=c_max {
        let threshold = epsilon / (f64::powi(2.0, c as i32) * h);
        let indices: BTreeSet<usize> = profile
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(i, _)| i)
            .collect();
        if indices.len() as u64 >= 1u64 << (c - 1) {
            return Ok(Outcome::Verified(HeavyIndexReport {
                c,
                threshold,
                indices,
            }));
        }
    }
    Err(Error::InvariantViolated(
        "no qualifying heavy-index level; contradicts the counting bound".into(),
    ))
}

/// `ceil(log2 n)` for `n >= 1`.
pub(crate) fn ceil_log2(n: usize) -> u32 {
    debug_assert!(n >= 1);
    if n <= 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{Alphabet, Pmf, ProductDistribution};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha(m: usize) -> Alphabet {
        Alphabet::new(m).unwrap()
    }

    fn pmf(probs: &[f64]) -> Pmf {
        Pmf::new(alpha(probs.len()), probs.to_vec()).unwrap()
    }

    fn random_table(rng: &mut ChaCha8Rng, n: usize, m: usize) -> JointTable {
        let len = m.pow(n as u32);
        let weights: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
        JointTable::renormalized(n, alpha(m), weights).unwrap()
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1), 1.0);
        assert_eq!(harmonic(2), 1.5);
        assert!((harmonic(4) - 25.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        let p = pmf(&[0.75, 0.25]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(
            tv_distance(&pmf(&[1.0, 0.0]), &pmf(&[0.0, 1.0])).unwrap(),
            1.0
        );
        assert!((tv_distance(&p, &pmf(&[0.5, 0.5])).unwrap() - 0.25).abs() < 1e-12);
        assert!(tv_distance(&p, &pmf(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn hellinger_examples() {
        let p = pmf(&[0.5, 0.5]);
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        assert_eq!(
            hellinger(&pmf(&[1.0, 0.0]), &pmf(&[0.0, 1.0])).unwrap(),
            1.0
        );
        let h = hellinger(&p, &pmf(&[1.0, 0.0])).unwrap();
        let expected = (1.0 - 1.0 / 2.0f64.sqrt()).sqrt();
        assert!((h - expected).abs() < 1e-9);
    }

    #[test]
    fn hellinger_matches_squared_difference_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let m = rng.random_range(2..=5);
            let p = random_table(&mut rng, 1, m);
            let q = random_table(&mut rng, 1, m);
            let via_bc = hellinger(&p, &q).unwrap();
            let sq: f64 = p
                .probs()
                .iter()
                .zip(q.probs())
                .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
                .sum();
            assert!((via_bc - (sq / 2.0).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn conditional_tv_examples() {
        let t = JointTable::new(2, alpha(2), vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let u = JointTable::uniform(2, alpha(2)).unwrap();
        let full = SubcubeCondition::full(2, 2);
        assert_eq!(conditional_tv(&t, &t, &full).unwrap(), 0.0);
        assert!(
            (conditional_tv(&t, &u, &full).unwrap() - tv_distance(&t, &u).unwrap()).abs() == 0.0
        );
        let cond = SubcubeCondition::new(vec![vec![0], vec![0, 1]]).unwrap();
        assert!((conditional_tv(&t, &u, &cond).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn avg_conditional_examples() {
        let t = JointTable::new(2, alpha(2), vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        assert_eq!(avg_conditional_marginal_distance(&t, &t, 1).unwrap(), 0.0);
        assert!(avg_conditional_marginal_distance(&t, &t, 0).is_err());
        assert!(avg_conditional_marginal_distance(&t, &t, 2).is_err());

        // Correlated pair vs uniform: both prefixes contribute distance 1/2.
        let corr = JointTable::new(2, alpha(2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let u = JointTable::uniform(2, alpha(2)).unwrap();
        assert!((avg_conditional_marginal_distance(&corr, &u, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn avg_conditional_of_products_reduces_to_marginal_distance() {
        // For product-form arguments the conditional distance does not depend
        // on the prefix, so the average equals the plain marginal distance.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(2..=3);
            let mk = |rng: &mut ChaCha8Rng| {
                let pmfs = (0..n)
                    .map(|_| {
                        let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
                        Pmf::renormalized(alpha(m), w).unwrap()
                    })
                    .collect();
                ProductDistribution::new(pmfs).unwrap()
            };
            let p = mk(&mut rng);
            let q = mk(&mut rng);
            let pt = p.expand().unwrap();
            let qt = q.expand().unwrap();
            for coord in 1..n {
                let avg = avg_conditional_marginal_distance(&pt, &qt, coord).unwrap();
                let direct =
                    tv_distance(p.marginal(coord).unwrap(), q.marginal(coord).unwrap()).unwrap();
                assert!((avg - direct).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chain_rule_identity_and_products() {
        let t = JointTable::new(2, alpha(2), vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let r = chain_rule_report(&t, &t).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);

        // Product pairs: rhs equals the sum of marginal distances.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(2..=4);
            let m = 2;
            let mk = |rng: &mut ChaCha8Rng| {
                let pmfs = (0..n)
                    .map(|_| {
                        let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
                        Pmf::renormalized(alpha(m), w).unwrap()
                    })
                    .collect();
                ProductDistribution::new(pmfs).unwrap()
            };
            let p = mk(&mut rng);
            let q = mk(&mut rng);
            let pt = p.expand().unwrap();
            let qt = q.expand().unwrap();
            let r = chain_rule_report(&pt, &qt).unwrap();
            let marginal_sum: f64 = (0..n)
                .map(|i| tv_distance(p.marginal(i).unwrap(), q.marginal(i).unwrap()).unwrap())
                .sum();
            assert!((r.rhs - marginal_sum).abs() < 1e-9);
            assert!(r.lhs <= r.rhs + 1e-9);
        }
    }

    #[test]
    fn heavy_index_single_far_marginal() {
        // One far first marginal, all other coordinates independent and
        // identical: the first level already certifies the distance.
        let eps = 0.2;
        let p = ProductDistribution::new(vec![
            Pmf::new(alpha(2), vec![0.75, 0.25]).unwrap(),
            Pmf::uniform(alpha(2)),
            Pmf::uniform(alpha(2)),
        ])
        .unwrap()
        .expand()
        .unwrap();
        let q = JointTable::uniform(3, alpha(2)).unwrap();
        match heavy_index_report(&p, &q, eps).unwrap() {
            Outcome::Verified(r) => {
                assert_eq!(r.c, 1);
                assert!(r.indices.contains(&0));
            }
            Outcome::PremiseNotMet { reason } => panic!("premise should hold: {reason}"),
        }
    }

    #[test]
    fn heavy_index_premise_not_met() {
        let t = JointTable::uniform(2, alpha(2)).unwrap();
        assert!(matches!(
            heavy_index_report(&t, &t, 0.1).unwrap(),
            Outcome::PremiseNotMet { .. }
        ));
        assert!(heavy_index_report(&t, &t, 0.0).is_err());
    }

    #[test]
    fn heavy_index_random_far_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eps = 0.2;
        let mut found = 0usize;
        while found < 60 {
            let n = rng.random_range(2..=4);
            let p = random_table(&mut rng, n, 2);
            let q = random_table(&mut rng, n, 2);
            if tv_distance(&p, &q).unwrap() < eps {
                continue;
            }
            found += 1;
            let report = match heavy_index_report(&p, &q, eps).unwrap() {
                Outcome::Verified(r) => r,
                Outcome::PremiseNotMet { reason } => panic!("{reason}"),
            };
            assert!(report.indices.len() as u64 >= 1 << (report.c - 1));
            let profile = conditional_distance_profile(&p, &q).unwrap();
            for &i in &report.indices {
                assert!(profile[i] >= report.threshold);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sandwich_holds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(2..=6);
            let p = random_table(&mut rng, 1, m);
            let q = random_table(&mut rng, 1, m);
            let tv = tv_distance(&p, &q).unwrap();
            let h = hellinger(&p, &q).unwrap();
            prop_assert!(tv <= 2.0 * h + 1e-9);
            prop_assert!(2.0 * h <= 2.0 * tv.sqrt() + 1e-9);
        }

        #[test]
        fn symmetry_and_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.random_range(2..=5);
            let p = random_table(&mut rng, 1, m);
            let q = random_table(&mut rng, 1, m);
            prop_assert!((tv_distance(&p, &q).unwrap() - tv_distance(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!((hellinger(&p, &q).unwrap() - hellinger(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn chain_rule_random_tables(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=4);
            let m = rng.random_range(2..=3);
            let p = random_table(&mut rng, n, m);
            let q = random_table(&mut rng, n, m);
            let r = chain_rule_report(&p, &q).unwrap();
            prop_assert!(r.lhs <= r.rhs + 1e-9);
            prop_assert!(r.first_term >= 0.0);
            prop_assert!(r.conditional_terms.iter().all(|&t| t >= 0.0));
        }
    }
}
