//! Joint-distribution testers driving the subcube oracle.
//!
//! All three testers share one loop shape: levels `j = 1 ..= ceil(log2 n)+1`,
//! a set `S_j` of `⌈4n/2^j⌉` coordinates sampled uniformly with replacement,
//! and per-coordinate invocations of a basic single-coordinate tester at a
//! level-dependent accuracy `ε′`. The level parameters are recomputed inside
//! the loop for each `j`; a rejection by any inner call rejects immediately.
//!
//! Conditional-marginal access is simulated exactly: to query coordinate `i`
//! of the unknown distribution given a prefix `w`, the subcube condition pins
//! coordinates before `i` to `w`, places the requested symbol set at `i` and
//! leaves the rest unrestricted. Every inner query is charged one unit on the
//! handle's ledger.
//!
//! The identity tester draws its prefix vectors from the *known* side, which
//! is held explicitly, so those draws cost no oracle queries. The
//! independence tester has no known side; it draws prefixes through the
//! oracle itself (one charged full-cube query per draw). Because every loop
//! bound and sample budget is a deterministic function of the configuration,
//! an accepting run consumes exactly [`predicted_query_count`] queries and a
//! rejecting run never exceeds it.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basic_testers::{
    basic_identity_test, basic_uniformity_test, basic_unknown_test, CoordSampler, TesterParams,
    Verdict, DEFAULT_SAMPLE_CONSTANT, SAMPLE_CONSTANT_NAME,
};
use crate::distributions::{Alphabet, JointTable, Pmf, SubcubeCondition};
use crate::error::{Error, Result};
use crate::metrics::{ceil_log2, harmonic};
use crate::oracle::OracleHandle;

/// Default confidence level of the joint testers.
pub const DEFAULT_DELTA: f64 = 1.0 / 3.0;

/// Configuration of one joint-tester run.
#[derive(Debug, Clone)]
pub struct JointTesterConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Seed of the tester's own randomness (coordinate sets and prefix draws
    /// from the known side); the oracle handle carries its own stream.
    pub seed: u64,
    pub constant_overrides: std::collections::BTreeMap<String, f64>,
}

impl JointTesterConfig {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        Self::with_delta(epsilon, DEFAULT_DELTA, seed)
    }

    pub fn with_delta(epsilon: f64, delta: f64, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be in (0, 1], got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in (0, 1), got {delta}"
            )));
        }
        Ok(Self {
            epsilon,
            delta,
            seed,
            constant_overrides: std::collections::BTreeMap::new(),
        })
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constant_overrides.insert(name.to_string(), value);
        self
    }

    fn sample_constant(&self) -> f64 {
        self.constant_overrides
            .get(SAMPLE_CONSTANT_NAME)
            .copied()
            .unwrap_or(DEFAULT_SAMPLE_CONSTANT)
    }

    fn inner_params(&self, eps_prime: f64, delta_prime: f64) -> TesterParams {
        TesterParams {
            epsilon: eps_prime,
            delta: delta_prime,
            constant_overrides: self.constant_overrides.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmId {
    Identity,
    Uniformity,
    ProductUniformity,
    Independence,
}

/// One level of the shared loop schedule.
#[derive(Debug, Clone)]
pub(crate) struct Round {
    pub j: u32,
    pub eps_prime: f64,
    pub delta_prime: f64,
    /// `⌈4n/2^j⌉` coordinates sampled with replacement.
    pub set_size: u64,
    /// Inner repetitions per sampled coordinate.
    pub reps: u64,
    /// Oracle queries charged by one inner call.
    pub samples_per_call: u64,
}

/// The deterministic loop schedule of an algorithm. Both the tester loops
/// and [`predicted_query_count`] are driven by this one computation.
pub(crate) fn schedule(
    alg: AlgorithmId,
    n: usize,
    m: usize,
    epsilon: f64,
    delta: f64,
    c: f64,
) -> Result<Vec<Round>> {
    let min_n = match alg {
        AlgorithmId::ProductUniformity => 1,
        _ => 2,
    };
    if n < min_n {
        return Err(Error::InvalidParameter(format!(
            "{alg:?} requires dimension >= {min_n}, got {n}"
        )));
    }
    if m < 2 {
        return Err(Error::AlphabetTooSmall(m));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be in (0, 1], got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    let levels = ceil_log2(n) + 1;
    let h = harmonic(n);
    let mut rounds = Vec::with_capacity(levels as usize);
    for j in 1..=levels {
        let pow = f64::powi(2.0, j as i32);
        let set_size = {
            let denom = 1u64 << j;
            (4 * n as u64).div_ceil(denom)
        };
        let round = match alg {
            AlgorithmId::Identity | AlgorithmId::Uniformity | AlgorithmId::Independence => {
                let eps_prime = epsilon / (2.0 * pow * h);
                let delta_prime =
                    delta * epsilon / (24.0 * n as f64 * (levels as f64) * (levels as f64));
                let reps = (3.0 / eps_prime).ceil() as u64;
                let n_samples = crate::basic_testers::sample_size(m, eps_prime, delta_prime, c);
                let samples_per_call = if alg == AlgorithmId::Independence {
                    // One charged prefix draw plus two learned endpoints.
                    1 + 2 * n_samples
                } else {
                    n_samples
                };
                Round {
                    j,
                    eps_prime,
                    delta_prime,
                    set_size,
                    reps,
                    samples_per_call,
                }
            }
            AlgorithmId::ProductUniformity => {
                let eps_prime = epsilon / (pow * h);
                let delta_prime = delta / (8.0 * n as f64);
                let n_samples = crate::basic_testers::sample_size(m, eps_prime, delta_prime, c);
                Round {
                    j,
                    eps_prime,
                    delta_prime,
                    set_size,
                    reps: 1,
                    samples_per_call: n_samples,
                }
            }
        };
        rounds.push(round);
    }
    Ok(rounds)
}

/// Exact number of oracle queries a non-rejecting run consumes.
///
/// Accepting runs consume exactly this many; a rejecting run stops early and
/// consumes at most this many.
pub fn predicted_query_count(
    alg: AlgorithmId,
    n: usize,
    m: usize,
    epsilon: f64,
    delta: f64,
    constant_overrides: &std::collections::BTreeMap<String, f64>,
) -> Result<u64> {
    let c = constant_overrides
        .get(SAMPLE_CONSTANT_NAME)
        .copied()
        .unwrap_or(DEFAULT_SAMPLE_CONSTANT);
    let rounds = schedule(alg, n, m, epsilon, delta, c)?;
    Ok(rounds
        .iter()
        .map(|r| r.set_size * r.reps * r.samples_per_call)
        .sum())
}

/// Endpoint exposing coordinate `coord` of the oracle's target conditioned
/// on a pinned prefix. Each draw issues one subcube query.
pub struct MarginalOracle<'c, 'h> {
    handle: &'c RefCell<&'h mut OracleHandle>,
    coord: usize,
    prefix: Vec<usize>,
    m: usize,
    n: usize,
    /// Prebuilt condition with the full alphabet at `coord`.
    full_condition: SubcubeCondition,
}

impl<'c, 'h> MarginalOracle<'c, 'h> {
    /// `prefix` pins the first `prefix.len()` coordinates and must not reach
    /// past `coord`; an empty prefix yields the plain marginal endpoint.
    pub fn new(
        handle: &'c RefCell<&'h mut OracleHandle>,
        coord: usize,
        prefix: &[usize],
    ) -> Result<Self> {
        let (n, m) = handle.borrow().shape();
        if coord >= n {
            return Err(Error::CoordinateOutOfRange { index: coord, n });
        }
        if prefix.len() > coord {
            return Err(Error::BadPrefixLength {
                got: prefix.len(),
                expected: coord,
            });
        }
        for &s in prefix {
            if s >= m {
                return Err(Error::SymbolOutOfRange { symbol: s, m });
            }
        }
        let prefix = prefix.to_vec();
        let full_condition =
            Self::build_condition(&prefix, coord, n, m, &(0..m).collect::<Vec<_>>())?;
        Ok(Self {
            handle,
            coord,
            prefix,
            m,
            n,
            full_condition,
        })
    }

    fn build_condition(
        prefix: &[usize],
        coord: usize,
        n: usize,
        m: usize,
        allowed: &[usize],
    ) -> Result<SubcubeCondition> {
        let mut sets: Vec<Vec<usize>> = Vec::with_capacity(n);
        for &w in prefix {
            sets.push(vec![w]);
        }
        for i in prefix.len()..n {
            if i == coord {
                sets.push(allowed.to_vec());
            } else {
                sets.push((0..m).collect());
            }
        }
        SubcubeCondition::new(sets)
    }
}

impl CoordSampler for MarginalOracle<'_, '_> {
    fn alphabet_size(&self) -> usize {
        self.m
    }

    fn sample_in(&mut self, allowed: &[usize]) -> Result<usize> {
        let cond = Self::build_condition(&self.prefix, self.coord, self.n, self.m, allowed)?;
        let x = self.handle.borrow_mut().subcond_sample(&cond)?;
        Ok(x[self.coord])
    }

    fn sample(&mut self) -> Result<usize> {
        let x = self
            .handle
            .borrow_mut()
            .subcond_sample(&self.full_condition)?;
        Ok(x[self.coord])
    }

    fn sample_counts(&mut self, count: u64) -> Result<Vec<u64>> {
        self.handle.borrow_mut().subcond_sample_coord_counts(
            &self.full_condition,
            self.coord,
            count,
        )
    }
}

/// The known side of an identity test. The uniform variant never
/// materialises a table: its conditional marginals are uniform by symmetry.
enum KnownJoint<'a> {
    Table(&'a JointTable),
    Uniform { n: usize, alphabet: Alphabet },
}

impl KnownJoint<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            KnownJoint::Table(t) => (t.n(), t.alphabet().size()),
            KnownJoint::Uniform { n, alphabet } => (*n, alphabet.size()),
        }
    }

    fn conditional_marginal(&self, coord: usize, prefix: &[usize]) -> Result<Pmf> {
        match self {
            KnownJoint::Table(t) => t.conditional_marginal(coord, prefix),
            KnownJoint::Uniform { alphabet, .. } => Ok(Pmf::uniform(*alphabet)),
        }
    }

    /// One exact draw, built coordinate by coordinate from the conditional
    /// marginals so sampling behaves identically for both variants.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let (n, _) = self.shape();
        let mut x = Vec::with_capacity(n);
        for coord in 0..n {
            let pmf = self
                .conditional_marginal(coord, &x)
                .expect("prefix built from earlier draws");
            let u: f64 = rng.random();
            x.push(crate::distributions::inverse_cdf(pmf.probs(), u));
        }
        x
    }
}

fn run_identity_like(
    known: &KnownJoint<'_>,
    handle: &mut OracleHandle,
    cfg: &JointTesterConfig,
    label: &str,
) -> Result<Verdict> {
    let (n, m) = known.shape();
    let (hn, hm) = handle.shape();
    if (n, m) != (hn, hm) {
        return Err(Error::ShapeMismatch {
            n_left: n,
            m_left: m,
            n_right: hn,
            m_right: hm,
        });
    }
    let rounds = schedule(
        AlgorithmId::Identity,
        n,
        m,
        cfg.epsilon,
        cfg.delta,
        cfg.sample_constant(),
    )?;
    let start = handle.query_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell = RefCell::new(handle);
    for round in &rounds {
        let coords: Vec<usize> = (0..round.set_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let params = cfg.inner_params(round.eps_prime, round.delta_prime);
        for &i in &coords {
            for _ in 0..round.reps {
                let w = known.sample(&mut rng);
                let known_cond = known.conditional_marginal(i, &w[..i])?;
                let mut endpoint = MarginalOracle::new(&cell, i, &w[..i])?;
                let inner = basic_identity_test(&known_cond, &mut endpoint, &params)?;
                if !inner.accepted() {
                    let used = cell.borrow().query_count() - start;
                    return Ok(Verdict {
                        decision: inner.decision,
                        queries_used: used,
                        context: format!(
                            "{label} reject at j={} i={} w={:?}; {}",
                            round.j, i, w, inner.context
                        ),
                    });
                }
            }
        }
    }
    let used = cell.borrow().query_count() - start;
    Ok(Verdict {
        decision: crate::basic_testers::Decision::Accept,
        queries_used: used,
        context: format!("{label} accept"),
    })
}

/// Tests whether the oracle's distribution equals the known table.
pub fn identity_tester(
    known: &JointTable,
    handle: &mut OracleHandle,
    cfg: &JointTesterConfig,
) -> Result<Verdict> {
    run_identity_like(&KnownJoint::Table(known), handle, cfg, "identity")
}

/// Tests whether the oracle's distribution is uniform over `Σ^n`.
///
/// This is the identity tester specialised to a uniform known side; the
/// uniform table is implicit, so no `m^n` storage is needed.
pub fn uniformity_tester(
    handle: &mut OracleHandle,
    n: usize,
    m: usize,
    cfg: &JointTesterConfig,
) -> Result<Verdict> {
    let alphabet = Alphabet::new(m)?;
    run_identity_like(
        &KnownJoint::Uniform { n, alphabet },
        handle,
        cfg,
        "uniformity",
    )
}

/// Uniformity tester for a target promised to be a product distribution.
/// Tests each sampled coordinate's marginal directly, with no prefix
/// conditioning.
pub fn product_uniformity_tester(
    handle: &mut OracleHandle,
    cfg: &JointTesterConfig,
) -> Result<Verdict> {
    let (n, m) = handle.shape();
    let rounds = schedule(
        AlgorithmId::ProductUniformity,
        n,
        m,
        cfg.epsilon,
        cfg.delta,
        cfg.sample_constant(),
    )?;
    let start = handle.query_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell = RefCell::new(handle);
    for round in &rounds {
        let coords: Vec<usize> = (0..round.set_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let params = cfg.inner_params(round.eps_prime, round.delta_prime);
        for &i in &coords {
            let mut endpoint = MarginalOracle::new(&cell, i, &[])?;
            let inner = basic_uniformity_test(&mut endpoint, m, &params)?;
            if !inner.accepted() {
                let used = cell.borrow().query_count() - start;
                return Ok(Verdict {
                    decision: inner.decision,
                    queries_used: used,
                    context: format!(
                        "product-uniformity reject at j={} i={}; {}",
                        round.j, i, inner.context
                    ),
                });
            }
        }
    }
    let used = cell.borrow().query_count() - start;
    Ok(Verdict {
        decision: crate::basic_testers::Decision::Accept,
        queries_used: used,
        context: "product-uniformity accept".into(),
    })
}

/// Tests whether the oracle's distribution is a product distribution, by
/// comparing each sampled coordinate's prefix-conditioned marginal against
/// its unconditioned marginal. Prefixes are drawn through the oracle.
pub fn independence_tester(handle: &mut OracleHandle, cfg: &JointTesterConfig) -> Result<Verdict> {
    let (n, m) = handle.shape();
    let rounds = schedule(
        AlgorithmId::Independence,
        n,
        m,
        cfg.epsilon,
        cfg.delta,
        cfg.sample_constant(),
    )?;
    let start = handle.query_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell = RefCell::new(handle);
    for round in &rounds {
        let coords: Vec<usize> = (0..round.set_size)
            .map(|_| rng.random_range(0..n))
            .collect();
        let params = cfg.inner_params(round.eps_prime, round.delta_prime);
        for &i in &coords {
            for _ in 0..round.reps {
                let w = cell.borrow_mut().sample_full();
                let mut conditioned = MarginalOracle::new(&cell, i, &w[..i])?;
                let mut unconditioned = MarginalOracle::new(&cell, i, &[])?;
                let inner = basic_unknown_test(&mut conditioned, &mut unconditioned, m, &params)?;
                if !inner.accepted() {
                    let used = cell.borrow().query_count() - start;
                    return Ok(Verdict {
                        decision: inner.decision,
                        queries_used: used,
                        context: format!(
                            "independence reject at j={} i={} w={:?}; {}",
                            round.j, i, w, inner.context
                        ),
                    });
                }
            }
        }
    }
    let used = cell.borrow().query_count() - start;
    Ok(Verdict {
        decision: crate::basic_testers::Decision::Accept,
        queries_used: used,
        context: "independence accept".into(),
    })
}
