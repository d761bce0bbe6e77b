//! Dense representations of joint and product distributions over `Σ^n`.
//!
//! Joint distributions are stored as explicit probability tables indexed in
//! row-major order with the first coordinate most significant, so a prefix of
//! the coordinates always addresses a contiguous block of the table. All
//! verification in this crate (chain-rule decomposition, restriction
//! semantics, lower-bound certificates) runs by full enumeration, which keeps
//! everything exact at desk scale; `DEFAULT_ENUMERATION_CAP` guards against
//! accidentally materialising tables that no longer fit that regime.
//!
//! Zero-mass prefixes and zero-mass subcubes are handled by a uniform
//! fallback, so conditional extraction, restriction and the sampling oracle
//! agree with each other everywhere, including outside the support.
//!
//! Values are held as `f64`. Constructors require normalization within
//! [`PROB_TOLERANCE`]; nothing is renormalized silently. The JSON loader is
//! the one explicit exception: it accepts files whose mass is within
//! [`FILE_TOLERANCE`] of 1 and renormalizes them on load, as documented on
//! [`Distribution::from_json_str`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest table size `m^n` that may be materialised by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 24;

/// Absolute tolerance for normalization checks at construction time.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Absolute tolerance applied by the JSON loader before renormalizing.
pub const FILE_TOLERANCE: f64 = 1e-6;

/// A finite alphabet `Σ = {0, 1, ..., m-1}` with `m >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::AlphabetTooSmall(size));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Iterator over all symbols `0..m`.
    pub fn symbols(&self) -> std::ops::Range<usize> {
        0..self.size
    }

    fn check_symbol(&self, symbol: usize) -> Result<()> {
        if symbol >= self.size {
            return Err(Error::SymbolOutOfRange {
                symbol,
                m: self.size,
            });
        }
        Ok(())
    }
}

fn validate_mass(probs: &[f64], tolerance: f64) -> Result<()> {
    for (index, &value) in probs.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(Error::NegativeProbability { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::NotNormalized { sum, tolerance });
    }
    Ok(())
}

/// Anything that exposes an explicit vector of point masses.
///
/// `shape()` returns `(n, m)`; a [`Pmf`] has shape `(1, m)`.
pub trait MassFunction {
    fn shape(&self) -> (usize, usize);
    fn masses(&self) -> &[f64];
}

/// A probability mass function over a single coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    alphabet: Alphabet,
    probs: Vec<f64>,
}

impl Pmf {
    /// Builds a pmf, requiring normalization within [`PROB_TOLERANCE`].
    pub fn new(alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != alphabet.size() {
            return Err(Error::WrongLength {
                expected: alphabet.size(),
                actual: probs.len(),
            });
        }
        validate_mass(&probs, PROB_TOLERANCE)?;
        Ok(Self { alphabet, probs })
    }

    /// Builds a pmf from nonnegative weights, dividing by their sum.
    ///
    /// This is the explicit renormalization entry point; the strict
    /// constructor never rescales.
    pub fn renormalized(alphabet: Alphabet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != alphabet.size() {
            return Err(Error::WrongLength {
                expected: alphabet.size(),
                actual: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(Error::NegativeProbability { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotNormalized {
                sum: total,
                tolerance: PROB_TOLERANCE,
            });
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { alphabet, probs })
    }

    pub fn uniform(alphabet: Alphabet) -> Self {
        let m = alphabet.size();
        Self {
            alphabet,
            probs: vec![1.0 / m as f64; m],
        }
    }

    /// Pmf concentrated on a single symbol.
    pub fn point(alphabet: Alphabet, symbol: usize) -> Result<Self> {
        alphabet.check_symbol(symbol)?;
        let mut probs = vec![0.0; alphabet.size()];
        probs[symbol] = 1.0;
        Ok(Self { alphabet, probs })
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        self.probs[symbol]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl MassFunction for Pmf {
    fn shape(&self) -> (usize, usize) {
        (1, self.alphabet.size())
    }

    fn masses(&self) -> &[f64] {
        &self.probs
    }
}

/// An explicit joint distribution over `Σ^n`.
///
/// Entry `x = (x_1, ..., x_n)` lives at flat index
/// `x_1·m^(n-1) + x_2·m^(n-2) + ... + x_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    n: usize,
    alphabet: Alphabet,
    probs: Vec<f64>,
}

/// Checked `m^n`, refusing sizes above `cap`.
fn table_len(n: usize, m: usize, cap: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::EmptyDimension);
    }
    let size = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(Error::EnumerationCapExceeded { size, cap });
    }
    Ok(size as usize)
}

impl JointTable {
    pub fn new(n: usize, alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        Self::with_cap(n, alphabet, probs, DEFAULT_ENUMERATION_CAP)
    }

    /// Like [`JointTable::new`] with an explicit enumeration cap.
    pub fn with_cap(n: usize, alphabet: Alphabet, probs: Vec<f64>, cap: usize) -> Result<Self> {
        let len = table_len(n, alphabet.size(), cap)?;
        if probs.len() != len {
            return Err(Error::WrongLength {
                expected: len,
                actual: probs.len(),
            });
        }
        validate_mass(&probs, PROB_TOLERANCE)?;
        Ok(Self { n, alphabet, probs })
    }

    /// As [`Pmf::renormalized`], for tables.
    pub fn renormalized(n: usize, alphabet: Alphabet, weights: Vec<f64>) -> Result<Self> {
        let len = table_len(n, alphabet.size(), DEFAULT_ENUMERATION_CAP)?;
        if weights.len() != len {
            return Err(Error::WrongLength {
                expected: len,
                actual: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(Error::NegativeProbability { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotNormalized {
                sum: total,
                tolerance: PROB_TOLERANCE,
            });
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { n, alphabet, probs })
    }

    pub fn uniform(n: usize, alphabet: Alphabet) -> Result<Self> {
        let len = table_len(n, alphabet.size(), DEFAULT_ENUMERATION_CAP)?;
        Ok(Self {
            n,
            alphabet,
            probs: vec![1.0 / len as f64; len],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Flat index of a point, validating dimension and symbols.
    pub fn index_of(&self, x: &[usize]) -> Result<usize> {
        if x.len() != self.n {
            return Err(Error::WrongLength {
                expected: self.n,
                actual: x.len(),
            });
        }
        let m = self.alphabet.size();
        let mut idx = 0usize;
        for &s in x {
            self.alphabet.check_symbol(s)?;
            idx = idx * m + s;
        }
        Ok(idx)
    }

    /// Inverse of [`JointTable::index_of`].
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let m = self.alphabet.size();
        let mut x = vec![0usize; self.n];
        for slot in x.iter_mut().rev() {
            *slot = index % m;
            index /= m;
        }
        x
    }

    /// Probability of a single point.
    pub fn point_mass(&self, x: &[usize]) -> Result<f64> {
        Ok(self.probs[self.index_of(x)?])
    }

    /// Marginal distribution of coordinate `coord` (0-based).
    pub fn marginal(&self, coord: usize) -> Result<Pmf> {
        if coord >= self.n {
            return Err(Error::CoordinateOutOfRange {
                index: coord,
                n: self.n,
            });
        }
        let m = self.alphabet.size();
        let stride = m.pow((self.n - 1 - coord) as u32);
        let mut mass = vec![0.0f64; m];
        for (idx, &p) in self.probs.iter().enumerate() {
            mass[(idx / stride) % m] += p;
        }
        Pmf::new(self.alphabet, mass)
    }

    /// Joint distribution of the first `len` coordinates, `1 <= len <= n`.
    pub fn prefix_distribution(&self, len: usize) -> Result<JointTable> {
        if len == 0 || len > self.n {
            return Err(Error::CoordinateOutOfRange {
                index: len,
                n: self.n,
            });
        }
        if len == self.n {
            return Ok(self.clone());
        }
        let m = self.alphabet.size();
        let block = m.pow((self.n - len) as u32);
        let out: Vec<f64> = self
            .probs
            .chunks_exact(block)
            .map(|chunk| chunk.iter().sum())
            .collect();
        JointTable::new(len, self.alphabet, out)
    }

    /// Probability that the first `w.len()` coordinates equal `w`.
    pub fn prefix_mass(&self, w: &[usize]) -> Result<f64> {
        if w.len() > self.n {
            return Err(Error::BadPrefixLength {
                got: w.len(),
                expected: self.n,
            });
        }
        let m = self.alphabet.size();
        let mut base = 0usize;
        for &s in w {
            self.alphabet.check_symbol(s)?;
            base = base * m + s;
        }
        let block = m.pow((self.n - w.len()) as u32);
        Ok(self.probs[base * block..(base + 1) * block].iter().sum())
    }

    /// Distribution of coordinate `coord` given that the first `coord`
    /// coordinates equal `prefix`.
    ///
    /// A zero-mass prefix yields the uniform pmf over `Σ`, so the value is
    /// defined everywhere and consistent with the oracle's fallback rule.
    pub fn conditional_marginal(&self, coord: usize, prefix: &[usize]) -> Result<Pmf> {
        if coord >= self.n {
            return Err(Error::CoordinateOutOfRange {
                index: coord,
                n: self.n,
            });
        }
        if prefix.len() != coord {
            return Err(Error::BadPrefixLength {
                got: prefix.len(),
                expected: coord,
            });
        }
        let m = self.alphabet.size();
        let mut base = 0usize;
        for &s in prefix {
            self.alphabet.check_symbol(s)?;
            base = base * m + s;
        }
        let block = m.pow((self.n - coord - 1) as u32);
        let start = base * m * block;
        let mut mass = vec![0.0f64; m];
        for (a, slot) in mass.iter_mut().enumerate() {
            *slot = self.probs[start + a * block..start + (a + 1) * block]
                .iter()
                .sum();
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Ok(Pmf::uniform(self.alphabet));
        }
        for slot in mass.iter_mut() {
            *slot /= total;
        }
        Pmf::new(self.alphabet, mass)
    }

    /// Restriction to a subcube: zero mass outside `cond`, rescaled inside.
    ///
    /// If the subcube carries no mass the result is uniform over the subcube,
    /// matching the oracle's zero-mass rule.
    pub fn restrict(&self, cond: &SubcubeCondition) -> Result<JointTable> {
        cond.validate_for(self.n, self.alphabet.size())?;
        let m = self.alphabet.size();
        let mut member = vec![vec![false; m]; self.n];
        for (i, set) in cond.sets().iter().enumerate() {
            for &s in set {
                member[i][s] = true;
            }
        }
        let mut out = vec![0.0f64; self.probs.len()];
        let mut total = 0.0f64;
        let mut inside = 0usize;
        for (idx, &p) in self.probs.iter().enumerate() {
            let mut rem = idx;
            let mut ok = true;
            for coord in (0..self.n).rev() {
                if !member[coord][rem % m] {
                    ok = false;
                    break;
                }
                rem /= m;
            }
            if ok {
                out[idx] = p;
                total += p;
                inside += 1;
            }
        }
        if total > 0.0 {
            for v in out.iter_mut() {
                *v /= total;
            }
        } else {
            let u = 1.0 / inside as f64;
            for (idx, v) in out.iter_mut().enumerate() {
                let mut rem = idx;
                let mut ok = true;
                for coord in (0..self.n).rev() {
                    if !member[coord][rem % m] {
                        ok = false;
                        break;
                    }
                    rem /= m;
                }
                if ok {
                    *v = u;
                }
            }
        }
        JointTable::new(self.n, self.alphabet, out)
    }

    /// The product of this table's marginals.
    pub fn product_of_marginals(&self) -> Result<ProductDistribution> {
        let marginals = (0..self.n)
            .map(|i| self.marginal(i))
            .collect::<Result<Vec<_>>>()?;
        ProductDistribution::new(marginals)
    }

    /// Draws one point exactly, coordinate by coordinate through the
    /// conditional marginals. Consumes one uniform variate per coordinate.
    pub fn sample_point<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut x = Vec::with_capacity(self.n);
        for coord in 0..self.n {
            let pmf = self
                .conditional_marginal(coord, &x)
                .expect("prefix built from earlier draws is valid");
            let u: f64 = rng.random();
            x.push(inverse_cdf(pmf.probs(), u));
        }
        x
    }
}

impl MassFunction for JointTable {
    fn shape(&self) -> (usize, usize) {
        (self.n, self.alphabet.size())
    }

    fn masses(&self) -> &[f64] {
        &self.probs
    }
}

/// Smallest index whose cumulative mass exceeds `u`.
pub(crate) fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0f64;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A product of `n` independent per-coordinate pmfs over a shared alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductDistribution {
    marginals: Vec<Pmf>,
}

impl ProductDistribution {
    pub fn new(marginals: Vec<Pmf>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::EmptyDimension);
        }
        let alphabet = marginals[0].alphabet();
        for pmf in &marginals {
            if pmf.alphabet() != alphabet {
                return Err(Error::ShapeMismatch {
                    n_left: 1,
                    m_left: alphabet.size(),
                    n_right: 1,
                    m_right: pmf.alphabet().size(),
                });
            }
        }
        Ok(Self { marginals })
    }

    /// Product of `n` copies of the uniform pmf.
    pub fn uniform(n: usize, alphabet: Alphabet) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDimension);
        }
        Ok(Self {
            marginals: vec![Pmf::uniform(alphabet); n],
        })
    }

    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.marginals[0].alphabet()
    }

    pub fn marginals(&self) -> &[Pmf] {
        &self.marginals
    }

    pub fn marginal(&self, coord: usize) -> Result<&Pmf> {
        self.marginals
            .get(coord)
            .ok_or(Error::CoordinateOutOfRange {
                index: coord,
                n: self.marginals.len(),
            })
    }

    /// Probability of a single point, as the product over coordinates.
    pub fn point_mass(&self, x: &[usize]) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::WrongLength {
                expected: self.n(),
                actual: x.len(),
            });
        }
        let mut p = 1.0;
        for (pmf, &s) in self.marginals.iter().zip(x) {
            pmf.alphabet().check_symbol(s)?;
            p *= pmf.prob(s);
        }
        Ok(p)
    }

    /// Materialises the full `m^n` table.
    pub fn expand(&self) -> Result<JointTable> {
        self.expand_with_cap(DEFAULT_ENUMERATION_CAP)
    }

    pub fn expand_with_cap(&self, cap: usize) -> Result<JointTable> {
        let n = self.n();
        let alphabet = self.alphabet();
        let m = alphabet.size();
        let len = table_len(n, m, cap)?;
        let mut probs = vec![0.0f64; len];
        // Odometer over Σ^n carrying the running product.
        let mut digits = vec![0usize; n];
        for (idx, slot) in probs.iter_mut().enumerate() {
            let mut p = 1.0;
            for (pmf, &d) in self.marginals.iter().zip(&digits) {
                p *= pmf.prob(d);
            }
            *slot = p;
            if idx + 1 < len {
                for pos in (0..n).rev() {
                    digits[pos] += 1;
                    if digits[pos] < m {
                        break;
                    }
                    digits[pos] = 0;
                }
            }
        }
        JointTable::with_cap(n, alphabet, probs, cap)
    }
}

/// A subcube `A = A_1 × ... × A_n` given by nonempty per-coordinate symbol
/// sets. Sets are kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubcubeCondition {
    sets: Vec<Vec<usize>>,
}

impl SubcubeCondition {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(sets.len());
        for (i, mut set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidCondition(format!(
                    "coordinate {i} has an empty symbol set"
                )));
            }
            set.sort_unstable();
            set.dedup();
            normalized.push(set);
        }
        if normalized.is_empty() {
            return Err(Error::EmptyDimension);
        }
        Ok(Self { sets: normalized })
    }

    /// The unrestricted condition `Σ × ... × Σ`.
    pub fn full(n: usize, m: usize) -> Self {
        Self {
            sets: vec![(0..m).collect(); n],
        }
    }

    /// Condition pinning every coordinate to one symbol.
    pub fn singleton(x: &[usize]) -> Result<Self> {
        Self::new(x.iter().map(|&s| vec![s]).collect())
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// Number of points in the subcube.
    pub fn size(&self) -> u128 {
        self.sets.iter().map(|s| s.len() as u128).product()
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.sets.len()
            && self
                .sets
                .iter()
                .zip(x)
                .all(|(set, s)| set.binary_search(s).is_ok())
    }

    pub fn validate_for(&self, n: usize, m: usize) -> Result<()> {
        if self.sets.len() != n {
            return Err(Error::InvalidCondition(format!(
                "condition has {} coordinates, distribution has {n}",
                self.sets.len()
            )));
        }
        for set in &self.sets {
            if let Some(&s) = set.iter().find(|&&s| s >= m) {
                return Err(Error::SymbolOutOfRange { symbol: s, m });
            }
        }
        Ok(())
    }

    /// Visits every point of the subcube in lexicographic order, passing the
    /// point and its flat row-major index.
    pub fn for_each_point(&self, m: usize, mut f: impl FnMut(usize, &[usize])) {
        let n = self.sets.len();
        let mut pos = vec![0usize; n];
        let mut point: Vec<usize> = self.sets.iter().map(|s| s[0]).collect();
        loop {
            let mut idx = 0usize;
            for &s in &point {
                idx = idx * m + s;
            }
            f(idx, &point);
            let mut coord = n;
            loop {
                if coord == 0 {
                    return;
                }
                coord -= 1;
                pos[coord] += 1;
                if pos[coord] < self.sets[coord].len() {
                    point[coord] = self.sets[coord][pos[coord]];
                    break;
                }
                pos[coord] = 0;
                point[coord] = self.sets[coord][0];
            }
        }
    }
}

/// Either representation of a distribution over `Σ^n`.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Table(JointTable),
    Product(ProductDistribution),
}

impl Distribution {
    pub fn n(&self) -> usize {
        match self {
            Distribution::Table(t) => t.n(),
            Distribution::Product(p) => p.n(),
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        match self {
            Distribution::Table(t) => t.alphabet(),
            Distribution::Product(p) => p.alphabet(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n(), self.alphabet().size())
    }

    pub fn point_mass(&self, x: &[usize]) -> Result<f64> {
        match self {
            Distribution::Table(t) => t.point_mass(x),
            Distribution::Product(p) => p.point_mass(x),
        }
    }

    /// Expands either variant to an explicit table.
    pub fn to_table(&self) -> Result<JointTable> {
        match self {
            Distribution::Table(t) => Ok(t.clone()),
            Distribution::Product(p) => p.expand(),
        }
    }

    /// Parses the JSON distribution file format:
    ///
    /// ```json
    /// { "n": 2, "m": 2, "kind": "table",   "probs": [0.4, 0.1, 0.2, 0.3] }
    /// { "n": 2, "m": 2, "kind": "product", "marginals": [[0.5, 0.5], [0.6, 0.4]] }
    /// ```
    ///
    /// Tables are row-major with the first coordinate most significant.
    /// Inputs whose mass deviates from 1 by more than [`FILE_TOLERANCE`] are
    /// rejected with a diagnostic; inputs within that tolerance are
    /// renormalized on load so the in-memory invariants hold exactly.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let repr: FileRepr =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile(e.to_string()))?;
        repr.into_distribution()
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let repr: FileRepr =
            serde_json::from_reader(reader).map_err(|e| Error::MalformedFile(e.to_string()))?;
        repr.into_distribution()
    }

    /// Serialises back to the file format.
    pub fn to_json_string(&self) -> String {
        let repr = match self {
            Distribution::Table(t) => FileRepr {
                n: t.n(),
                m: t.alphabet().size(),
                kind: FileKind::Table,
                probs: Some(t.probs().to_vec()),
                marginals: None,
            },
            Distribution::Product(p) => FileRepr {
                n: p.n(),
                m: p.alphabet().size(),
                kind: FileKind::Product,
                probs: None,
                marginals: Some(p.marginals().iter().map(|q| q.probs().to_vec()).collect()),
            },
        };
        serde_json::to_string(&repr).expect("file repr serialises")
    }
}

impl From<JointTable> for Distribution {
    fn from(t: JointTable) -> Self {
        Distribution::Table(t)
    }
}

impl From<ProductDistribution> for Distribution {
    fn from(p: ProductDistribution) -> Self {
        Distribution::Product(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    n: usize,
    m: usize,
    kind: FileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marginals: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FileKind {
    Table,
    Product,
}

impl FileRepr {
    fn into_distribution(self) -> Result<Distribution> {
        let alphabet = Alphabet::new(self.m)?;
        match self.kind {
            FileKind::Table => {
                let probs = self.probs.ok_or_else(|| {
                    Error::MalformedFile("kind \"table\" requires `probs`".into())
                })?;
                if self.marginals.is_some() {
                    return Err(Error::MalformedFile(
                        "kind \"table\" must not carry `marginals`".into(),
                    ));
                }
                let len = table_len(self.n, self.m, DEFAULT_ENUMERATION_CAP)?;
                if probs.len() != len {
                    return Err(Error::MalformedFile(format!(
                        "expected {len} probabilities for n={}, m={}, got {}",
                        self.n,
                        self.m,
                        probs.len()
                    )));
                }
                validate_mass(&probs, FILE_TOLERANCE)
                    .map_err(|e| Error::MalformedFile(e.to_string()))?;
                Ok(Distribution::Table(JointTable::renormalized(
                    self.n, alphabet, probs,
                )?))
            }
            FileKind::Product => {
                let marginals = self.marginals.ok_or_else(|| {
                    Error::MalformedFile("kind \"product\" requires `marginals`".into())
                })?;
                if self.probs.is_some() {
                    return Err(Error::MalformedFile(
                        "kind \"product\" must not carry `probs`".into(),
                    ));
                }
                if marginals.len() != self.n {
                    return Err(Error::MalformedFile(format!(
                        "expected {} marginals, got {}",
                        self.n,
                        marginals.len()
                    )));
                }
                let pmfs = marginals
                    .into_iter()
                    .map(|w| {
                        if w.len() != self.m {
                            return Err(Error::MalformedFile(format!(
                                "marginal has {} entries, alphabet has {}",
                                w.len(),
                                self.m
                            )));
                        }
                        validate_mass(&w, FILE_TOLERANCE)
                            .map_err(|e| Error::MalformedFile(e.to_string()))?;
                        Pmf::renormalized(alphabet, w)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Distribution::Product(ProductDistribution::new(pmfs)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alpha(m: usize) -> Alphabet {
        Alphabet::new(m).unwrap()
    }

    fn table22(probs: [f64; 4]) -> JointTable {
        JointTable::new(2, alpha(2), probs.to_vec()).unwrap()
    }

    #[test]
    fn alphabet_rejects_small() {
        assert!(Alphabet::new(1).is_err());
        assert!(Alphabet::new(0).is_err());
        assert_eq!(alpha(3).size(), 3);
    }

    #[test]
    fn point_mass_lookups() {
        let uniform = JointTable::uniform(2, alpha(2)).unwrap();
        assert_eq!(uniform.point_mass(&[0, 1]).unwrap(), 0.25);

        let t = table22([0.4, 0.1, 0.2, 0.3]);
        assert_eq!(t.point_mass(&[0, 0]).unwrap(), 0.4);
        assert_eq!(t.point_mass(&[1, 1]).unwrap(), 0.3);
        assert!(t.point_mass(&[0, 2]).is_err());
        assert!(t.point_mass(&[0]).is_err());
    }

    #[test]
    fn marginals_sum_rows() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let m1 = t.marginal(0).unwrap();
        assert!((m1.prob(0) - 0.5).abs() < 1e-12);
        assert!((m1.prob(1) - 0.5).abs() < 1e-12);
        let m2 = t.marginal(1).unwrap();
        assert!((m2.prob(0) - 0.6).abs() < 1e-12);
        assert!((m2.prob(1) - 0.4).abs() < 1e-12);
        assert!(t.marginal(2).is_err());

        let u3 = JointTable::uniform(3, alpha(2)).unwrap();
        for i in 0..3 {
            let m = u3.marginal(i).unwrap();
            assert!((m.prob(0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_distribution_marginalises_suffix() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        assert_eq!(t.prefix_distribution(2).unwrap(), t);
        let p1 = t.prefix_distribution(1).unwrap();
        assert!((p1.probs()[0] - 0.5).abs() < 1e-12);
        assert!((p1.probs()[1] - 0.5).abs() < 1e-12);

        let u3 = JointTable::uniform(3, alpha(2)).unwrap();
        let p2 = u3.prefix_distribution(2).unwrap();
        assert_eq!(p2, JointTable::uniform(2, alpha(2)).unwrap());
        assert!(u3.prefix_distribution(0).is_err());
        assert!(u3.prefix_distribution(4).is_err());
    }

    #[test]
    fn conditional_marginal_normalises_rows() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let c = t.conditional_marginal(1, &[0]).unwrap();
        assert!((c.prob(0) - 0.8).abs() < 1e-12);
        assert!((c.prob(1) - 0.2).abs() < 1e-12);

        let u = JointTable::uniform(2, alpha(2)).unwrap();
        let c = u.conditional_marginal(1, &[0]).unwrap();
        assert!((c.prob(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conditional_marginal_zero_prefix_is_uniform() {
        let t = table22([0.5, 0.5, 0.0, 0.0]);
        let c = t.conditional_marginal(1, &[1]).unwrap();
        assert_eq!(c, Pmf::uniform(alpha(2)));
    }

    #[test]
    fn restrict_examples() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let full = SubcubeCondition::full(2, 2);
        assert_eq!(t.restrict(&full).unwrap(), t);

        let cond = SubcubeCondition::new(vec![vec![0], vec![0, 1]]).unwrap();
        let r = t.restrict(&cond).unwrap();
        assert!((r.probs()[0] - 0.8).abs() < 1e-12);
        assert!((r.probs()[1] - 0.2).abs() < 1e-12);
        assert_eq!(r.probs()[2], 0.0);
        assert_eq!(r.probs()[3], 0.0);
    }

    #[test]
    fn restrict_zero_mass_is_uniform_over_subcube() {
        let t = table22([0.5, 0.5, 0.0, 0.0]);
        let cond = SubcubeCondition::new(vec![vec![1], vec![0, 1]]).unwrap();
        let r = t.restrict(&cond).unwrap();
        assert_eq!(r.probs(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn restrict_singletons_give_point_mass() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let cond = SubcubeCondition::singleton(&[1, 0]).unwrap();
        let r = t.restrict(&cond).unwrap();
        assert_eq!(r.probs(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn product_of_marginals_examples() {
        // Perfectly correlated table: the product of marginals is uniform.
        let t = table22([0.5, 0.0, 0.0, 0.5]);
        let pd = t.product_of_marginals().unwrap();
        let back = pd.expand().unwrap();
        for &p in back.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }

        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let pd = t.product_of_marginals().unwrap();
        assert!((pd.marginals()[0].prob(0) - 0.5).abs() < 1e-12);
        assert!((pd.marginals()[1].prob(0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn expand_examples() {
        let all_uniform = ProductDistribution::uniform(3, alpha(2)).unwrap();
        assert_eq!(
            all_uniform.expand().unwrap(),
            JointTable::uniform(3, alpha(2)).unwrap()
        );

        let pd = ProductDistribution::new(vec![
            Pmf::new(alpha(2), vec![0.75, 0.25]).unwrap(),
            Pmf::uniform(alpha(2)),
        ])
        .unwrap();
        let t = pd.expand().unwrap();
        let expected = [0.375, 0.375, 0.125, 0.125];
        for (a, b) in t.probs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let single =
            ProductDistribution::new(vec![Pmf::new(alpha(2), vec![0.3, 0.7]).unwrap()]).unwrap();
        let t = single.expand().unwrap();
        assert_eq!(t.probs(), &[0.3, 0.7]);
    }

    #[test]
    fn expand_of_marginal_product_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(2..=3);
            let a = alpha(m);
            let pmfs: Vec<Pmf> = (0..n)
                .map(|_| {
                    let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
                    Pmf::renormalized(a, w).unwrap()
                })
                .collect();
            let table = ProductDistribution::new(pmfs).unwrap().expand().unwrap();
            let back = table.product_of_marginals().unwrap().expand().unwrap();
            for (x, y) in table.probs().iter().zip(back.probs()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn expand_respects_cap() {
        let pd = ProductDistribution::uniform(8, alpha(2)).unwrap();
        assert!(matches!(
            pd.expand_with_cap(100),
            Err(Error::EnumerationCapExceeded { .. })
        ));
    }

    #[test]
    fn telescoping_reconstruction() {
        let t = JointTable::new(
            3,
            alpha(2),
            vec![0.10, 0.05, 0.20, 0.15, 0.08, 0.12, 0.17, 0.13],
        )
        .unwrap();
        for idx in 0..t.len() {
            let x = t.decode(idx);
            let mut p = 1.0;
            for coord in 0..3 {
                p *= t
                    .conditional_marginal(coord, &x[..coord])
                    .unwrap()
                    .prob(x[coord]);
            }
            assert!((p - t.probs()[idx]).abs() < 1e-9, "point {x:?}");
        }
    }

    #[test]
    fn constructor_validation() {
        assert!(JointTable::new(2, alpha(2), vec![0.5, 0.5]).is_err());
        assert!(JointTable::new(2, alpha(2), vec![0.5, 0.5, 0.25, -0.25]).is_err());
        assert!(JointTable::new(2, alpha(2), vec![0.5, 0.5, 0.25, 0.25]).is_err());
        assert!(Pmf::new(alpha(2), vec![0.7, 0.3 + 1e-7]).is_err());
        assert!(Pmf::new(alpha(2), vec![0.7, 0.3 + 1e-11]).is_ok());
    }

    #[test]
    fn condition_normalisation() {
        let c = SubcubeCondition::new(vec![vec![1, 0, 1], vec![0]]).unwrap();
        assert_eq!(c.sets(), &[vec![0, 1], vec![0]]);
        assert_eq!(c.size(), 2);
        assert!(c.contains(&[1, 0]));
        assert!(!c.contains(&[1, 1]));
        assert!(SubcubeCondition::new(vec![vec![], vec![0]]).is_err());
        assert!(c.validate_for(2, 2).is_ok());
        assert!(c.validate_for(3, 2).is_err());
        assert!(c.validate_for(2, 1).is_err());
    }

    #[test]
    fn for_each_point_visits_subcube_in_order() {
        let c = SubcubeCondition::new(vec![vec![0, 1], vec![2]]).unwrap();
        let mut seen = Vec::new();
        c.for_each_point(3, |idx, point| seen.push((idx, point.to_vec())));
        assert_eq!(seen, vec![(2, vec![0, 2]), (5, vec![1, 2])]);
    }

    #[test]
    fn file_roundtrip_and_rejection() {
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let text = Distribution::Table(t.clone()).to_json_string();
        let back = Distribution::from_json_str(&text).unwrap();
        assert_eq!(back, Distribution::Table(t));

        let pd = ProductDistribution::new(vec![
            Pmf::new(alpha(2), vec![0.3, 0.7]).unwrap(),
            Pmf::uniform(alpha(2)),
        ])
        .unwrap();
        let text = Distribution::Product(pd.clone()).to_json_string();
        assert_eq!(
            Distribution::from_json_str(&text).unwrap(),
            Distribution::Product(pd)
        );

        // Mass off by more than the file tolerance is rejected.
        let bad = r#"{"n":2,"m":2,"kind":"table","probs":[0.4,0.1,0.2,0.4]}"#;
        assert!(Distribution::from_json_str(bad).is_err());
        // Within the file tolerance it loads and is renormalized.
        let close = r#"{"n":2,"m":2,"kind":"table","probs":[0.4,0.1,0.2,0.3000001]}"#;
        let d = Distribution::from_json_str(close).unwrap();
        let sum: f64 = d.to_table().unwrap().probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // Structural problems are rejected.
        assert!(Distribution::from_json_str(r#"{"n":2,"m":2,"kind":"table"}"#).is_err());
        assert!(Distribution::from_json_str(
            r#"{"n":2,"m":2,"kind":"product","marginals":[[0.5,0.5]]}"#
        )
        .is_err());
        assert!(Distribution::from_json_str("not json").is_err());
    }

    #[test]
    fn sample_point_matches_table_distribution() {
        use rand::SeedableRng;
        let t = table22([0.4, 0.1, 0.2, 0.3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 40_000;
        for _ in 0..draws {
            let x = t.sample_point(&mut rng);
            counts[t.index_of(&x).unwrap()] += 1;
        }
        for (idx, &c) in counts.iter().enumerate() {
            let p = t.probs()[idx];
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (c as f64 / draws as f64 - p).abs() < 4.0 * sigma,
                "point {idx} off"
            );
        }
    }
}
