//! Simulation of the subcube conditional-sampling oracle.
//!
//! A handle owns the target distribution, a seeded ChaCha8 stream and a
//! monotone query ledger. Queries against a table target draw by inverse CDF
//! over the enumerated restricted table (exact at desk scale); product
//! targets sample coordinate by coordinate, which is equivalent to the joint
//! rule. A subcube of zero mass yields a uniform draw over the subcube.
//!
//! The restricted CDF of the most recent condition is memoized, which leaves
//! the sampled law, the ledger and the consumed random stream unchanged while
//! avoiding re-enumeration when the same condition is queried repeatedly.
//!
//! [`OracleHandle::subcond_sample_coord_counts`] aggregates many draws of one
//! coordinate under a fixed condition into a multinomial histogram drawn
//! directly from the exact conditional law. It is distributed identically to
//! taking the same number of [`OracleHandle::subcond_sample`] calls and
//! histogramming the coordinate, charges the ledger the same number of
//! queries, and exists so statistical harnesses with large sample budgets
//! stay cheap. It consumes the random stream differently from the per-call
//! path, so transcripts of the two forms are not interleavable; with a
//! transcript sink attached the batch form falls back to per-call sampling so
//! every record is logged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as _};
use serde::Serialize;

use crate::distributions::{inverse_cdf, Distribution, SubcubeCondition};
use crate::error::{Error, Result};

/// One logged oracle query.
#[derive(Debug, Clone, Serialize)]
pub struct TranscriptRecord {
    pub condition: Vec<Vec<usize>>,
    pub sample: Vec<usize>,
    pub ledger: u64,
}

struct TableMemo {
    condition: SubcubeCondition,
    /// Flat indices of the subcube's points, lexicographic.
    points: Vec<usize>,
    /// Cumulative unnormalized masses aligned with `points`.
    cumulative: Vec<f64>,
    total: f64,
}

/// Sampling endpoint for one target distribution.
///
/// A handle is single-threaded: it owns its random stream and ledger. Two
/// handles with the same seed and query sequence produce identical samples.
pub struct OracleHandle {
    target: Distribution,
    rng: ChaCha8Rng,
    seed: u64,
    ledger: u64,
    memo: Option<TableMemo>,
    transcript: Option<Vec<TranscriptRecord>>,
    full_condition: SubcubeCondition,
}

impl OracleHandle {
    pub fn new(target: Distribution, seed: u64) -> Self {
        let (n, m) = target.shape();
        Self {
            target,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            ledger: 0,
            memo: None,
            transcript: None,
            full_condition: SubcubeCondition::full(n, m),
        }
    }

    pub fn target(&self) -> &Distribution {
        &self.target
    }

    pub fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of samples charged so far.
    pub fn query_count(&self) -> u64 {
        self.ledger
    }

    /// Starts logging one record per query.
    pub fn enable_transcript(&mut self) {
        if self.transcript.is_none() {
            self.transcript = Some(Vec::new());
        }
    }

    pub fn take_transcript(&mut self) -> Vec<TranscriptRecord> {
        self.transcript.take().unwrap_or_default()
    }

    /// Draws one point of the target conditioned on the subcube `cond`.
    ///
    /// Invalid conditions fail before any randomness is consumed, so
    /// rejected calls leave the handle replayable and the ledger untouched.
    pub fn subcond_sample(&mut self, cond: &SubcubeCondition) -> Result<Vec<usize>> {
        let (n, m) = self.shape();
        cond.validate_for(n, m)?;
        let sample = match &self.target {
            Distribution::Table(_) => self.table_sample(cond),
            Distribution::Product(_) => self.product_sample(cond),
        };
        self.ledger += 1;
        if let Some(log) = &mut self.transcript {
            log.push(TranscriptRecord {
                condition: cond.sets().to_vec(),
                sample: sample.clone(),
                ledger: self.ledger,
            });
        }
        Ok(sample)
    }

    /// One unconditioned draw (the full-cube condition). Charged normally.
    pub fn sample_full(&mut self) -> Vec<usize> {
        let cond = self.full_condition.clone();
        self.subcond_sample(&cond)
            .expect("full condition is always valid")
    }

    /// Histogram over `Σ` of coordinate `coord` across `count` draws
    /// conditioned on `cond`, drawn as a single multinomial from the exact
    /// conditional law of that coordinate. The ledger is charged `count`.
    pub fn subcond_sample_coord_counts(
        &mut self,
        cond: &SubcubeCondition,
        coord: usize,
        count: u64,
    ) -> Result<Vec<u64>> {
        let (n, m) = self.shape();
        cond.validate_for(n, m)?;
        if coord >= n {
            return Err(Error::CoordinateOutOfRange { index: coord, n });
        }
        if self.transcript.is_some() {
            let mut counts = vec![0u64; m];
            for _ in 0..count {
                let x = self.subcond_sample(cond)?;
                counts[x[coord]] += 1;
            }
            return Ok(counts);
        }
        let probs = self.coordinate_law(cond, coord);
        let counts = multinomial_counts(&mut self.rng, count, &probs);
        self.ledger += count;
        Ok(counts)
    }

    /// Exact pmf over `Σ` of coordinate `coord` under the restriction,
    /// including the zero-mass uniform fallback.
    fn coordinate_law(&mut self, cond: &SubcubeCondition, coord: usize) -> Vec<f64> {
        let m = self.target.alphabet().size();
        match &self.target {
            Distribution::Table(table) => {
                let mut mass = vec![0.0f64; m];
                let mut total = 0.0f64;
                cond.for_each_point(m, |idx, point| {
                    let p = table.probs()[idx];
                    mass[point[coord]] += p;
                    total += p;
                });
                if total > 0.0 {
                    for v in mass.iter_mut() {
                        *v /= total;
                    }
                } else {
                    let set = &cond.sets()[coord];
                    let u = 1.0 / set.len() as f64;
                    for &s in set {
                        mass[s] = u;
                    }
                }
                mass
            }
            Distribution::Product(pd) => {
                let zero_mass = pd
                    .marginals()
                    .iter()
                    .zip(cond.sets())
                    .any(|(pmf, set)| set.iter().map(|&s| pmf.prob(s)).sum::<f64>() <= 0.0);
                let set = &cond.sets()[coord];
                let mut mass = vec![0.0f64; m];
                if zero_mass {
                    let u = 1.0 / set.len() as f64;
                    for &s in set {
                        mass[s] = u;
                    }
                } else {
                    let pmf = &pd.marginals()[coord];
                    let total: f64 = set.iter().map(|&s| pmf.prob(s)).sum();
                    for &s in set {
                        mass[s] = pmf.prob(s) / total;
                    }
                }
                mass
            }
        }
    }

    fn table_sample(&mut self, cond: &SubcubeCondition) -> Vec<usize> {
        let table = match &self.target {
            Distribution::Table(t) => t,
            Distribution::Product(_) => unreachable!(),
        };
        let m = table.alphabet().size();
        let rebuild = match &self.memo {
            Some(memo) => memo.condition != *cond,
            None => true,
        };
        if rebuild {
            let size = cond.size() as usize;
            let mut points = Vec::with_capacity(size);
            let mut cumulative = Vec::with_capacity(size);
            let mut total = 0.0f64;
            cond.for_each_point(m, |idx, _| {
                total += table.probs()[idx];
                points.push(idx);
                cumulative.push(total);
            });
            self.memo = Some(TableMemo {
                condition: cond.clone(),
                points,
                cumulative,
                total,
            });
        }
        let memo = self.memo.as_ref().expect("memo just ensured");
        let u: f64 = self.rng.random();
        let pick = if memo.total > 0.0 {
            let target = u * memo.total;
            let at = memo.cumulative.partition_point(|&c| c <= target);
            at.min(memo.points.len() - 1)
        } else {
            ((u * memo.points.len() as f64) as usize).min(memo.points.len() - 1)
        };
        table.decode(memo.points[pick])
    }

    fn product_sample(&mut self, cond: &SubcubeCondition) -> Vec<usize> {
        let pd = match &self.target {
            Distribution::Product(p) => p,
            Distribution::Table(_) => unreachable!(),
        };
        let totals: Vec<f64> = pd
            .marginals()
            .iter()
            .zip(cond.sets())
            .map(|(pmf, set)| set.iter().map(|&s| pmf.prob(s)).sum())
            .collect();
        let zero_mass = totals.iter().any(|&t| t <= 0.0);
        let mut x = Vec::with_capacity(pd.n());
        for (coord, set) in cond.sets().iter().enumerate() {
            let u: f64 = self.rng.random();
            let s = if zero_mass {
                set[((u * set.len() as f64) as usize).min(set.len() - 1)]
            } else {
                let pmf = &pd.marginals()[coord];
                let masses: Vec<f64> = set.iter().map(|&s| pmf.prob(s) / totals[coord]).collect();
                set[inverse_cdf(&masses, u)]
            };
            x.push(s);
        }
        x
    }
}

/// Writes transcript records as JSON lines, one record per query.
pub fn write_transcript_jsonl<W: std::io::Write>(
    records: &[TranscriptRecord],
    mut out: W,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Multinomial counts for `count` draws from `probs`, via a chain of
/// binomials over the conditional bucket probabilities.
pub(crate) fn multinomial_counts<R: Rng + ?Sized>(
    rng: &mut R,
    count: u64,
    probs: &[f64],
) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = count;
    let mut rest = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining;
            break;
        }
        let mut cond = if rest > 0.0 { p / rest } else { 1.0 };
        if !cond.is_finite() {
            cond = 1.0;
        }
        let cond = cond.clamp(0.0, 1.0);
        let k = Binomial::new(remaining, cond)
            .expect("conditional probability is in [0, 1]")
            .sample(rng);
        counts[i] = k;
        remaining -= k;
        rest -= p;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{Alphabet, JointTable, Pmf, ProductDistribution};

    fn alpha(m: usize) -> Alphabet {
        Alphabet::new(m).unwrap()
    }

    fn table22(probs: [f64; 4]) -> Distribution {
        Distribution::Table(JointTable::new(2, alpha(2), probs.to_vec()).unwrap())
    }

    #[test]
    fn singleton_condition_is_deterministic() {
        let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 0);
        let cond = SubcubeCondition::singleton(&[1, 0]).unwrap();
        for _ in 0..20 {
            assert_eq!(h.subcond_sample(&cond).unwrap(), vec![1, 0]);
        }
        assert_eq!(h.query_count(), 20);
    }

    #[test]
    fn zero_mass_subcube_is_uniform() {
        let mut h = OracleHandle::new(table22([0.5, 0.5, 0.0, 0.0]), 42);
        let cond = SubcubeCondition::new(vec![vec![1], vec![0, 1]]).unwrap();
        let draws = 10_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            let x = h.subcond_sample(&cond).unwrap();
            assert_eq!(x[0], 1);
            ones += x[1];
        }
        let freq = ones as f64 / draws as f64;
        let sigma = (0.25f64 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn full_cube_matches_uniform_target() {
        let target = Distribution::Table(JointTable::uniform(2, alpha(2)).unwrap());
        let mut h = OracleHandle::new(target, 7);
        let draws = 20_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let x = h.sample_full();
            counts[x[0] * 2 + x[1]] += 1;
        }
        let sigma = (0.25 * 0.75 / draws as f64).sqrt();
        for &c in &counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn ledger_counts_only_accepted_queries() {
        let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 1);
        assert_eq!(h.query_count(), 0);
        let bad = SubcubeCondition::new(vec![vec![0]]).unwrap();
        assert!(h.subcond_sample(&bad).is_err());
        assert_eq!(h.query_count(), 0);
        let out_of_range = SubcubeCondition::new(vec![vec![0], vec![2]]).unwrap();
        assert!(h.subcond_sample(&out_of_range).is_err());
        assert_eq!(h.query_count(), 0);
        h.sample_full();
        assert_eq!(h.query_count(), 1);
    }

    #[test]
    fn same_seed_same_transcript() {
        let mk = || {
            let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 99);
            h.enable_transcript();
            let a = SubcubeCondition::new(vec![vec![0, 1], vec![1]]).unwrap();
            for _ in 0..50 {
                h.sample_full();
                h.subcond_sample(&a).unwrap();
            }
            h.take_transcript()
        };
        let t1 = mk();
        let t2 = mk();
        assert_eq!(t1.len(), t2.len());
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.sample, b.sample);
            assert_eq!(a.ledger, b.ledger);
        }
    }

    #[test]
    fn product_target_coordinates_sample_independently() {
        let pd = ProductDistribution::new(vec![
            Pmf::new(alpha(2), vec![0.8, 0.2]).unwrap(),
            Pmf::new(alpha(2), vec![0.3, 0.7]).unwrap(),
        ])
        .unwrap();
        let mut h = OracleHandle::new(Distribution::Product(pd), 5);
        let draws = 40_000;
        let mut joint = [[0usize; 2]; 2];
        for _ in 0..draws {
            let x = h.sample_full();
            joint[x[0]][x[1]] += 1;
        }
        let expected = [[0.24, 0.56], [0.06, 0.14]];
        for a in 0..2 {
            for b in 0..2 {
                let p = expected[a][b];
                let sigma = (p * (1.0 - p) / draws as f64).sqrt();
                let freq = joint[a][b] as f64 / draws as f64;
                assert!((freq - p).abs() < 4.0 * sigma, "cell ({a},{b}): {freq}");
            }
        }
    }

    #[test]
    fn product_zero_mass_falls_back_to_uniform_over_subcube() {
        // Coordinate 0 has no mass on symbol 1, so conditioning on it zeroes
        // the whole subcube and every coordinate becomes uniform over its set.
        let pd = ProductDistribution::new(vec![
            Pmf::new(alpha(2), vec![1.0, 0.0]).unwrap(),
            Pmf::new(alpha(2), vec![0.9, 0.1]).unwrap(),
        ])
        .unwrap();
        let mut h = OracleHandle::new(Distribution::Product(pd), 21);
        let cond = SubcubeCondition::new(vec![vec![1], vec![0, 1]]).unwrap();
        let draws = 10_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            let x = h.subcond_sample(&cond).unwrap();
            assert_eq!(x[0], 1);
            ones += x[1];
        }
        let freq = ones as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 3.0 * (0.25f64 / draws as f64).sqrt());
    }

    #[test]
    fn batch_counts_match_conditional_law() {
        let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 3);
        let cond = SubcubeCondition::new(vec![vec![0], vec![0, 1]]).unwrap();
        let count = 100_000u64;
        let counts = h.subcond_sample_coord_counts(&cond, 1, count).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), count);
        assert_eq!(h.query_count(), count);
        // Conditional law of coordinate 1 given coordinate 0 = 0 is (0.8, 0.2).
        for (c, p) in counts.iter().zip([0.8, 0.2]) {
            let sigma = (p * (1.0 - p) / count as f64).sqrt();
            assert!((*c as f64 / count as f64 - p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn batch_with_transcript_logs_every_draw() {
        let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 3);
        h.enable_transcript();
        let cond = SubcubeCondition::full(2, 2);
        let counts = h.subcond_sample_coord_counts(&cond, 0, 25).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 25);
        assert_eq!(h.take_transcript().len(), 25);
        assert_eq!(h.query_count(), 25);
    }

    #[test]
    fn transcript_serialises_to_json_lines() {
        let mut h = OracleHandle::new(table22([0.4, 0.1, 0.2, 0.3]), 8);
        h.enable_transcript();
        h.sample_full();
        h.sample_full();
        let records = h.take_transcript();
        let mut buf = Vec::new();
        write_transcript_jsonl(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["condition"].is_array());
            assert!(v["sample"].is_array());
            assert!(v["ledger"].is_u64());
        }
    }

    #[test]
    fn multinomial_edge_cases() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(multinomial_counts(&mut rng, 100, &[1.0, 0.0]), vec![100, 0]);
        assert_eq!(multinomial_counts(&mut rng, 100, &[0.0, 1.0]), vec![0, 100]);
        assert_eq!(multinomial_counts(&mut rng, 0, &[0.5, 0.5]), vec![0, 0]);
        let c = multinomial_counts(&mut rng, 10_000, &[0.5, 0.5, 0.0]);
        assert_eq!(c[2], 0);
        assert_eq!(c.iter().sum::<u64>(), 10_000);
    }
}
