//! Single-coordinate `(ε, δ)` testers over `Σ`.
//!
//! These fulfil the contracts the joint testers rely on: accept a satisfying
//! distribution with probability at least `1 − δ`, reject an `ε`-far one with
//! probability at least `1 − δ`. At small alphabet sizes a learn-then-compare
//! tester meets that contract directly: draw
//! `N = ⌈C·m·ln(4m/δ)/ε²⌉` samples, form the empirical pmf and threshold the
//! empirical distance at `ε/2`, which splits the promise gap symmetrically.
//! The constant `C` defaults to a conservative 8 and can be overridden
//! through [`TesterParams::with_constant`] for sensitivity experiments.
//!
//! The endpoint trait carries a conditional-draw method even though the
//! implementations below only use unconditioned draws; an endpoint is the
//! natural seam for swapping in a conditional-query tester with a better
//! `ε` dependence without touching any caller.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distributions::{inverse_cdf, Pmf};
use crate::error::{Error, Result};
use crate::oracle::multinomial_counts;

/// Default value of the sample-size constant `C`.
pub const DEFAULT_SAMPLE_CONSTANT: f64 = 8.0;

/// Name under which `C` may be overridden in a constants map.
pub const SAMPLE_CONSTANT_NAME: &str = "C";

/// `⌈C·m·ln(4m/δ)/ε²⌉` — the deterministic sample budget of one basic test.
pub fn sample_size(m: usize, epsilon: f64, delta: f64, c: f64) -> u64 {
    let m = m as f64;
    (c * m * (4.0 * m / delta).ln() / (epsilon * epsilon)).ceil() as u64
}

/// Accuracy parameters for one tester invocation.
#[derive(Debug, Clone)]
pub struct TesterParams {
    pub epsilon: f64,
    pub delta: f64,
    pub constant_overrides: BTreeMap<String, f64>,
}

impl TesterParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
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
            constant_overrides: BTreeMap::new(),
        })
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constant_overrides.insert(name.to_string(), value);
        self
    }

    pub fn constant(&self, name: &str, default: f64) -> f64 {
        self.constant_overrides
            .get(name)
            .copied()
            .unwrap_or(default)
    }

    /// Sample budget for an alphabet of size `m` under these parameters.
    pub fn sample_size(&self, m: usize) -> u64 {
        sample_size(
            m,
            self.epsilon,
            self.delta,
            self.constant(SAMPLE_CONSTANT_NAME, DEFAULT_SAMPLE_CONSTANT),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Outcome of a tester run, with the number of endpoint samples consumed and
/// free-form context for diagnosis.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub decision: Decision,
    pub queries_used: u64,
    pub context: String,
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

/// A sampling endpoint for one distribution over `Σ`.
pub trait CoordSampler {
    fn alphabet_size(&self) -> usize;

    /// One draw conditioned on the nonempty symbol set `allowed`.
    fn sample_in(&mut self, allowed: &[usize]) -> Result<usize>;

    /// One unconditioned draw.
    fn sample(&mut self) -> Result<usize> {
        let full: Vec<usize> = (0..self.alphabet_size()).collect();
        self.sample_in(&full)
    }

    /// Histogram of `count` unconditioned draws. Implementations may draw
    /// the histogram in aggregate as long as the law is unchanged.
    fn sample_counts(&mut self, count: u64) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.alphabet_size()];
        for _ in 0..count {
            counts[self.sample()?] += 1;
        }
        Ok(counts)
    }
}

/// Endpoint drawing i.i.d. samples from an explicit pmf.
///
/// Conditioning restricts and renormalizes; a zero-mass condition falls back
/// to uniform over the allowed set, mirroring the subcube oracle.
pub struct PmfSampler {
    pmf: Pmf,
    rng: ChaCha8Rng,
}

impl PmfSampler {
    pub fn new(pmf: Pmf, seed: u64) -> Self {
        Self {
            pmf,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl CoordSampler for PmfSampler {
    fn alphabet_size(&self) -> usize {
        self.pmf.alphabet().size()
    }

    fn sample_in(&mut self, allowed: &[usize]) -> Result<usize> {
        if allowed.is_empty() {
            return Err(Error::InvalidCondition("empty symbol set".into()));
        }
        for &s in allowed {
            if s >= self.alphabet_size() {
                return Err(Error::SymbolOutOfRange {
                    symbol: s,
                    m: self.alphabet_size(),
                });
            }
        }
        let total: f64 = allowed.iter().map(|&s| self.pmf.prob(s)).sum();
        let u: f64 = rand::Rng::random(&mut self.rng);
        if total <= 0.0 {
            let at = ((u * allowed.len() as f64) as usize).min(allowed.len() - 1);
            return Ok(allowed[at]);
        }
        let masses: Vec<f64> = allowed.iter().map(|&s| self.pmf.prob(s) / total).collect();
        Ok(allowed[inverse_cdf(&masses, u)])
    }

    fn sample_counts(&mut self, count: u64) -> Result<Vec<u64>> {
        Ok(multinomial_counts(&mut self.rng, count, self.pmf.probs()))
    }
}

fn empirical_tv_vs_probs(counts: &[u64], total: u64, reference: &[f64]) -> f64 {
    let n = total as f64;
    0.5 * counts
        .iter()
        .zip(reference)
        .map(|(&c, &p)| (c as f64 / n - p).abs())
        .sum::<f64>()
}

fn empirical_tv_counts(a: &[u64], b: &[u64], total: u64) -> f64 {
    let n = total as f64;
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / n)
        .sum::<f64>()
}

/// Tests whether the endpoint's distribution is uniform over `Σ`.
///
/// Accepts when the empirical distance from uniform is at most `ε/2`
/// (ties accept).
pub fn basic_uniformity_test<S: CoordSampler + ?Sized>(
    oracle: &mut S,
    m: usize,
    params: &TesterParams,
) -> Result<Verdict> {
    if oracle.alphabet_size() != m {
        return Err(Error::ShapeMismatch {
            n_left: 1,
            m_left: m,
            n_right: 1,
            m_right: oracle.alphabet_size(),
        });
    }
    let budget = params.sample_size(m);
    let counts = oracle.sample_counts(budget)?;
    let uniform = vec![1.0 / m as f64; m];
    let tv = empirical_tv_vs_probs(&counts, budget, &uniform);
    let decision = if tv <= params.epsilon / 2.0 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(Verdict {
        decision,
        queries_used: budget,
        context: format!("basic_uniformity m={m} samples={budget} empirical_tv={tv:.6}"),
    })
}

/// Tests whether the endpoint's distribution equals `known`.
pub fn basic_identity_test<S: CoordSampler + ?Sized>(
    known: &Pmf,
    oracle: &mut S,
    params: &TesterParams,
) -> Result<Verdict> {
    let m = known.alphabet().size();
    if oracle.alphabet_size() != m {
        return Err(Error::ShapeMismatch {
            n_left: 1,
            m_left: m,
            n_right: 1,
            m_right: oracle.alphabet_size(),
        });
    }
    let budget = params.sample_size(m);
    let counts = oracle.sample_counts(budget)?;
    let tv = empirical_tv_vs_probs(&counts, budget, known.probs());
    let decision = if tv <= params.epsilon / 2.0 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(Verdict {
        decision,
        queries_used: budget,
        context: format!("basic_identity m={m} samples={budget} empirical_tv={tv:.6}"),
    })
}

/// Tests whether two unknown endpoints share a distribution, learning both
/// empirically with the same per-endpoint budget.
pub fn basic_unknown_test<P, Q>(
    oracle_p: &mut P,
    oracle_q: &mut Q,
    m: usize,
    params: &TesterParams,
) -> Result<Verdict>
where
    P: CoordSampler + ?Sized,
    Q: CoordSampler + ?Sized,
{
    if oracle_p.alphabet_size() != m || oracle_q.alphabet_size() != m {
        return Err(Error::ShapeMismatch {
            n_left: 1,
            m_left: m,
            n_right: 1,
            m_right: oracle_p.alphabet_size().max(oracle_q.alphabet_size()),
        });
    }
    let budget = params.sample_size(m);
    let counts_p = oracle_p.sample_counts(budget)?;
    let counts_q = oracle_q.sample_counts(budget)?;
    let tv = empirical_tv_counts(&counts_p, &counts_q, budget);
    let decision = if tv <= params.epsilon / 2.0 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(Verdict {
        decision,
        queries_used: 2 * budget,
        context: format!("basic_unknown m={m} samples_each={budget} empirical_tv={tv:.6}"),
    })
}
