//! Marker–filler structure of binary windows.
//!
//! A primary marker is a pair of coordinates `[i, i+1]` with `x_i = 0` and
//! `x_{i+1} = 1`; the remaining coordinates form fillers, each of which reads
//! `1…10…0`. Runs of consecutive markers give secondary markers (at least
//! `k_mark` markers) and tertiary markers (at least `k_rmark`); the gaps
//! between them are blocks and cities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{dominates, monotone, quantile_coupling, FiniteDistribution, JointMass};
use crate::error::{Error, Result};
use crate::rational::{half, one, pow, zero, Rational};
use crate::rng::{RngStream, SamplingTable};

/// A finite stretch of a symbol sequence with absolute indices
/// `start .. start + len`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryWindow {
    start: i64,
    symbols: Vec<u8>,
}

impl BinaryWindow {
    pub fn new(start: i64, symbols: Vec<u8>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidWindow("window must be nonempty".into()));
        }
        Ok(BinaryWindow { start, symbols })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.symbols.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Symbol at absolute index `i`, if inside the window.
    pub fn get(&self, i: i64) -> Option<u8> {
        let k = i - self.start;
        (k >= 0).then(|| self.symbols.get(k as usize).copied()).flatten()
    }

    pub fn symbols_mut(&mut self) -> &mut [u8] {
        &mut self.symbols
    }

    fn check_binary(&self) -> Result<()> {
        match self.symbols.iter().find(|&&s| s > 1) {
            Some(s) => Err(Error::InvalidWindow(format!("symbol {s} in a binary window"))),
            None => Ok(()),
        }
    }

    /// Coordinatewise `self ≽ other` on a common index range.
    pub fn dominates(&self, other: &BinaryWindow) -> bool {
        self.start == other.start
            && self.len() == other.len()
            && self.symbols.iter().zip(&other.symbols).all(|(a, b)| a >= b)
    }
}

impl fmt::Display for BinaryWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.start)?;
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Parses `"<start>:<digits>"`, or bare digits starting at index 0.
impl FromStr for BinaryWindow {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (start, digits) = match text.trim().split_once(':') {
            Some((s, d)) => {
                (s.trim().parse::<i64>().map_err(|_| Error::InvalidWindow(text.into()))?, d.trim())
            }
            None => (0, text.trim()),
        };
        let symbols = digits
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(|| Error::InvalidWindow(text.into())))
            .collect::<Result<Vec<u8>>>()?;
        BinaryWindow::new(start, symbols)
    }
}

/// Inclusive interval of absolute indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: i64,
    pub end: i64,
}

impl Interval {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, i: i64) -> bool {
        self.start <= i && i <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filler {
    pub interval: Interval,
    /// The filler may extend beyond the window on this side.
    pub truncated_left: bool,
    pub truncated_right: bool,
}

impl Filler {
    pub fn is_interior(&self) -> bool {
        !self.truncated_left && !self.truncated_right
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkerDecomposition {
    pub window: BinaryWindow,
    pub primary_markers: Vec<Interval>,
    pub fillers: Vec<Filler>,
    /// Marker status of the first (last) coordinate depends on the symbol
    /// just outside the window.
    pub left_boundary_unknown: bool,
    pub right_boundary_unknown: bool,
}

impl MarkerDecomposition {
    pub fn interior_fillers(&self) -> impl Iterator<Item = &Filler> {
        self.fillers.iter().filter(|f| f.is_interior())
    }
}

/// All primary markers of a binary window, and the fillers between them.
/// Fillers touching the window edge are flagged as possibly truncated;
/// adjacent markers have no filler between them.
pub fn find_primary_markers(w: &BinaryWindow) -> Result<MarkerDecomposition> {
    w.check_binary()?;
    let x = w.symbols();
    let n = x.len();
    let mut markers = Vec::new();
    let mut in_marker = vec![false; n];
    let mut k = 0;
    while k + 1 < n {
        if x[k] == 0 && x[k + 1] == 1 {
            assert!(!in_marker[k], "primary markers overlap at {k}");
            in_marker[k] = true;
            in_marker[k + 1] = true;
            markers.push(Interval { start: w.start + k as i64, end: w.start + k as i64 + 1 });
            k += 2;
        } else {
            k += 1;
        }
    }
    let mut fillers = Vec::new();
    let mut k = 0;
    while k < n {
        if in_marker[k] {
            k += 1;
            continue;
        }
        let s = k;
        while k < n && !in_marker[k] {
            k += 1;
        }
        fillers.push(Filler {
            interval: Interval { start: w.start + s as i64, end: w.start + k as i64 - 1 },
            truncated_left: s == 0,
            truncated_right: k == n,
        });
    }
    Ok(MarkerDecomposition {
        window: w.clone(),
        primary_markers: markers,
        fillers,
        left_boundary_unknown: x[0] == 1,
        right_boundary_unknown: x[n - 1] == 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Marker,
    Filler,
    Unknown,
}

impl Tag {
    pub fn symbol(self) -> char {
        match self {
            Tag::Marker => 'M',
            Tag::Filler => 'F',
            Tag::Unknown => '?',
        }
    }
}

/// Marker/filler skeleton of a window; `?` where the status depends on
/// symbols outside the window.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HatSequence {
    pub start: i64,
    pub tags: Vec<Tag>,
}

impl HatSequence {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, i: i64) -> Option<Tag> {
        let k = i - self.start;
        (k >= 0).then(|| self.tags.get(k as usize).copied()).flatten()
    }

    pub fn is_resolved(&self) -> bool {
        !self.tags.contains(&Tag::Unknown)
    }

    pub fn pattern(&self) -> String {
        self.tags.iter().map(|t| t.symbol()).collect()
    }

    /// Sub-skeleton on `[from, to]`.
    pub fn slice(&self, from: i64, to: i64) -> HatSequence {
        let a = (from - self.start) as usize;
        let b = (to - self.start) as usize;
        HatSequence { start: from, tags: self.tags[a..=b].to_vec() }
    }

    /// Filler runs (maximal runs of `F`) and marker intervals, checking that
    /// every marker run splits into pairs.
    pub fn segments(&self) -> Result<(Vec<Interval>, Vec<Interval>)> {
        if !self.is_resolved() {
            return Err(Error::InvalidSkeleton(format!("unresolved skeleton {}", self.pattern())));
        }
        let mut fillers = Vec::new();
        let mut markers = Vec::new();
        let n = self.tags.len();
        let mut k = 0;
        while k < n {
            let s = k;
            let tag = self.tags[k];
            while k < n && self.tags[k] == tag {
                k += 1;
            }
            let (a, b) = (self.start + s as i64, self.start + k as i64 - 1);
            if tag == Tag::Filler {
                fillers.push(Interval { start: a, end: b });
            } else {
                if (k - s) % 2 != 0 {
                    return Err(Error::InvalidSkeleton(format!(
                        "marker run of odd length at {a} in {}",
                        self.pattern()
                    )));
                }
                let mut i = a;
                while i < b {
                    markers.push(Interval { start: i, end: i + 1 });
                    i += 2;
                }
            }
        }
        Ok((fillers, markers))
    }
}

impl fmt::Display for HatSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.pattern())
    }
}

/// Parses `"<start>:MF?..."` or a bare tag string starting at 0.
impl FromStr for HatSequence {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (start, tags) = match text.trim().split_once(':') {
            Some((s, t)) => {
                (s.trim().parse::<i64>().map_err(|_| Error::InvalidSkeleton(text.into()))?, t.trim())
            }
            None => (0, text.trim()),
        };
        let tags = tags
            .chars()
            .map(|c| match c {
                'M' | 'm' => Ok(Tag::Marker),
                'F' | 'f' => Ok(Tag::Filler),
                '?' => Ok(Tag::Unknown),
                _ => Err(Error::InvalidSkeleton(text.into())),
            })
            .collect::<Result<Vec<Tag>>>()?;
        if tags.is_empty() {
            return Err(Error::InvalidSkeleton("empty skeleton".into()));
        }
        Ok(HatSequence { start, tags })
    }
}

/// Marker/filler tag of every coordinate. A coordinate holding `1` at the
/// left edge, or `0` at the right edge, could pair with the unseen neighbour
/// and is tagged unknown.
pub fn hat_map(w: &BinaryWindow) -> Result<HatSequence> {
    let md = find_primary_markers(w)?;
    let n = w.len();
    let mut tags = vec![Tag::Filler; n];
    for m in &md.primary_markers {
        tags[(m.start - w.start) as usize] = Tag::Marker;
        tags[(m.end - w.start) as usize] = Tag::Marker;
    }
    if md.left_boundary_unknown && tags[0] == Tag::Filler {
        tags[0] = Tag::Unknown;
    }
    if md.right_boundary_unknown && tags[n - 1] == Tag::Filler {
        tags[n - 1] = Tag::Unknown;
    }
    Ok(HatSequence { start: w.start, tags })
}

/// Which of the two product measures: `μ` has `P(1) = p`, `ν` has `P(1) = 1 − p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Mu,
    Nu,
}

impl Side {
    pub fn one_probability(self, p: &Rational) -> Rational {
        match self {
            Side::Mu => p.clone(),
            Side::Nu => one() - p,
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mu" | "μ" => Ok(Side::Mu),
            "nu" | "ν" => Ok(Side::Nu),
            _ => Err(Error::Parameter(format!("unknown side {s:?}; expected mu or nu"))),
        }
    }
}

fn check_unit_parameter(p: &Rational) -> Result<()> {
    if !(p > &zero() && p < &one()) {
        return Err(Error::Parameter(format!("p = {p} must lie in (0, 1)")));
    }
    Ok(())
}

/// The filler word `1^s 0^(n−s)`.
pub fn filler_word(n: usize, s: usize) -> Vec<u8> {
    (0..n).map(|k| u8::from(k < s)).collect()
}

/// Law of `n` iid Bernoulli(`p`) symbols conditioned on the filler set
/// `B_n = {1^s 0^(n−s)}`. Symbol `s` (the number of ones) indexes `B_n`;
/// increasing `s` is increasing in the coordinatewise order.
#[derive(Clone, Debug, PartialEq)]
pub struct FillerLaw {
    pub n: usize,
    pub p: Rational,
    pub law: FiniteDistribution,
}

/// Unnormalized weights `p^s (1 − p)^(n−s)` for `s = 0..=n`.
fn filler_weights(n: usize, p: &Rational) -> Vec<Rational> {
    let q = one() - p;
    (0..=n).map(|s| pow(p, s) * pow(&q, n - s)).collect()
}

/// `P(X ∈ B_n)` for iid Bernoulli(`p`) symbols.
pub fn filler_normalizer(n: usize, p: &Rational) -> Rational {
    filler_weights(n, p).into_iter().sum()
}

pub fn filler_law(n: usize, p: &Rational) -> Result<FillerLaw> {
    if n == 0 {
        return Err(Error::Parameter("filler length must be positive".into()));
    }
    check_unit_parameter(p)?;
    let weights = filler_weights(n, p);
    let z: Rational = weights.iter().sum();
    let law = FiniteDistribution::from_masses(weights.into_iter().map(|w| w / &z).collect())?;
    Ok(FillerLaw { n, p: p.clone(), law })
}

/// Quantile coupling of the filler laws for `p` and `1 − p`; monotone for
/// `p > 1/2`.
pub fn filler_monotone_coupling(n: usize, p: &Rational) -> Result<JointMass> {
    if *p <= half() {
        return Err(Error::Parameter(format!("p = {p} must exceed 1/2")));
    }
    let x = filler_law(n, p)?;
    let y = filler_law(n, &(one() - p))?;
    quantile_coupling(&x.law, &y.law)
}

/// `Σ_{i=0}^{m} p^(m−i) (1−p)^i` for `m = n − ℓ`.
pub fn dual_sum(m: usize, p: &Rational) -> Rational {
    let q = one() - p;
    (0..=m).map(|i| pow(p, m - i) * pow(&q, i)).sum()
}

/// Exact audit of the filler-set domination argument for one `(n, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FillerAudit {
    pub n: usize,
    #[serde(with = "crate::rational::serde_rational")]
    pub p: Rational,
    /// `Σ p^(m−i)(1−p)^i = Σ (1−p)^(m−i) p^i` for every `m ≤ n`.
    pub dual_identity: bool,
    /// `P(X ∈ B_n) = P(Y ∈ B_n)`.
    pub equal_filler_mass: bool,
    /// Closed-form down-set probabilities agree with enumeration of
    /// `{0,1}^n` (checked for `n ≤ 16`).
    pub closed_form_matches_enumeration: Option<bool>,
    /// `P(X ≼ z, X ∈ B_n) ≤ P(Y ≼ z, Y ∈ B_n)` for every `z ∈ B_n`.
    pub prefix_dominance: bool,
    pub conditioned_dominates: bool,
    pub coupling_monotone: bool,
}

impl FillerAudit {
    pub fn passed(&self) -> bool {
        self.dual_identity
            && self.equal_filler_mass
            && self.closed_form_matches_enumeration.unwrap_or(true)
            && self.prefix_dominance
            && self.conditioned_dominates
            && self.coupling_monotone
    }
}

/// `P(X ≼ 1^(n−ℓ)0^ℓ, X ∈ B_n)` by the closed form `(1−p)^ℓ Σ …`.
fn downset_closed_form(n: usize, l: usize, p: &Rational) -> Rational {
    pow(&(one() - p), l) * dual_sum(n - l, p)
}

/// The same probability by enumerating all of `{0,1}^n`.
fn downset_enumerated(n: usize, l: usize, p: &Rational) -> Rational {
    let q = one() - p;
    let z = filler_word(n, n - l);
    let mut total = zero();
    for bits in 0u32..(1u32 << n) {
        let x: Vec<u8> = (0..n).map(|k| ((bits >> (n - 1 - k)) & 1) as u8).collect();
        let in_filler = x.windows(2).all(|w| !(w[0] == 0 && w[1] == 1));
        if in_filler && x.iter().zip(&z).all(|(a, b)| a <= b) {
            let ones = x.iter().filter(|&&b| b == 1).count();
            total += pow(p, ones) * pow(&q, n - ones);
        }
    }
    total
}

pub fn filler_audit(n: usize, p: &Rational) -> Result<FillerAudit> {
    let q = one() - p;
    let dual_identity = (0..=n).all(|m| dual_sum(m, p) == dual_sum(m, &q));
    let equal_filler_mass = filler_normalizer(n, p) == filler_normalizer(n, &q);
    let closed_form_matches_enumeration = (n <= 16).then(|| {
        (0..=n).all(|l| {
            downset_closed_form(n, l, p) == downset_enumerated(n, l, p)
                && downset_closed_form(n, l, &q) == downset_enumerated(n, l, &q)
        })
    });
    let prefix_dominance = (0..=n).all(|l| downset_closed_form(n, l, p) <= downset_closed_form(n, l, &q));
    let x = filler_law(n, p)?;
    let y = filler_law(n, &q)?;
    let conditioned_dominates = dominates(&x.law, &y.law)?;
    let coupling_monotone = monotone(&quantile_coupling(&x.law, &y.law)?)?;
    Ok(FillerAudit {
        n,
        p: p.clone(),
        dual_identity,
        equal_filler_mass,
        closed_form_matches_enumeration,
        prefix_dominance,
        conditioned_dominates,
        coupling_monotone,
    })
}

/// Longest pattern accepted by exact hat-pattern enumeration.
pub const MAX_PATTERN_LEN: usize = 21;

fn hat_tags_inner(bits: &[u8]) -> Vec<Tag> {
    // Tags of bits[1..len-1]; both neighbours of each inner coordinate are known.
    (1..bits.len() - 1)
        .map(|k| {
            let right = bits[k] == 0 && bits[k + 1] == 1;
            let left = bits[k - 1] == 0 && bits[k] == 1;
            if right || left {
                Tag::Marker
            } else {
                Tag::Filler
            }
        })
        .collect()
}

/// Exact probability that the skeleton of an iid window realizes `pattern`
/// on its index range, summing over the two neighbouring symbols. `?` in
/// the pattern matches either tag.
pub fn hat_pattern_probability(pattern: &HatSequence, p: &Rational, side: Side) -> Result<Rational> {
    let k = pattern.len();
    if k > MAX_PATTERN_LEN {
        return Err(Error::SizeGuard { size: k as u128, limit: MAX_PATTERN_LEN as u128 });
    }
    check_unit_parameter(p)?;
    let one_p = side.one_probability(p);
    let zero_p = one() - &one_p;
    let mut total = zero();
    let mut bits = vec![0u8; k + 2];
    for code in 0u32..(1u32 << (k + 2)) {
        for (j, b) in bits.iter_mut().enumerate() {
            *b = ((code >> j) & 1) as u8;
        }
        let tags = hat_tags_inner(&bits);
        if tags.iter().zip(&pattern.tags).all(|(t, want)| *want == Tag::Unknown || t == want) {
            let ones = bits.iter().filter(|&&b| b == 1).count();
            total += pow(&one_p, ones) * pow(&zero_p, k + 2 - ones);
        }
    }
    Ok(total)
}

/// Law of the length-`k` skeleton under `side`, keyed by tag string.
pub fn hat_pattern_distribution(k: usize, p: &Rational, side: Side) -> Result<BTreeMap<String, Rational>> {
    if k == 0 || k > MAX_PATTERN_LEN {
        return Err(Error::SizeGuard { size: k as u128, limit: MAX_PATTERN_LEN as u128 });
    }
    check_unit_parameter(p)?;
    let one_p = side.one_probability(p);
    let zero_p = one() - &one_p;
    let powers_one: Vec<Rational> = (0..=k + 2).map(|i| pow(&one_p, i)).collect();
    let powers_zero: Vec<Rational> = (0..=k + 2).map(|i| pow(&zero_p, i)).collect();
    let mut counts: BTreeMap<String, BTreeMap<usize, u64>> = BTreeMap::new();
    let mut bits = vec![0u8; k + 2];
    for code in 0u32..(1u32 << (k + 2)) {
        for (j, b) in bits.iter_mut().enumerate() {
            *b = ((code >> j) & 1) as u8;
        }
        let key: String = hat_tags_inner(&bits).iter().map(|t| t.symbol()).collect();
        let ones = bits.iter().filter(|&&b| b == 1).count();
        *counts.entry(key).or_default().entry(ones).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(key, by_ones)| {
            let mass = by_ones
                .into_iter()
                .map(|(ones, c)| Rational::from_integer(c.into()) * &powers_one[ones] * &powers_zero[k + 2 - ones])
                .sum();
            (key, mass)
        })
        .collect())
}

/// Alternating run lengths of a block, filler run first. Marker runs are
/// measured in coordinates (two per primary marker).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockType {
    pub alternation: Vec<usize>,
}

impl BlockType {
    pub fn new(alternation: Vec<usize>) -> Result<Self> {
        if alternation.is_empty() || alternation.len().is_multiple_of(2) {
            return Err(Error::Parameter("a block type alternates filler, marker, …, filler".into()));
        }
        if alternation.contains(&0) {
            return Err(Error::Parameter("block type entries must be positive".into()));
        }
        if alternation.iter().skip(1).step_by(2).any(|m| m % 2 != 0) {
            return Err(Error::Parameter("marker runs must have even length".into()));
        }
        Ok(BlockType { alternation })
    }

    pub fn length(&self) -> usize {
        self.alternation.iter().sum()
    }

    pub fn filler_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.alternation.iter().step_by(2).copied()
    }

    /// Skeleton of a block of this type.
    pub fn skeleton(&self) -> Vec<Tag> {
        let mut tags = Vec::with_capacity(self.length());
        for (k, &len) in self.alternation.iter().enumerate() {
            let t = if k % 2 == 0 { Tag::Filler } else { Tag::Marker };
            tags.extend(std::iter::repeat_n(t, len));
        }
        tags
    }

    /// Block type read from a resolved skeleton segment.
    pub fn from_tags(tags: &[Tag]) -> Result<Self> {
        let mut alternation = Vec::new();
        let mut k = 0;
        while k < tags.len() {
            let s = k;
            while k < tags.len() && tags[k] == tags[s] {
                k += 1;
            }
            if tags[s] == Tag::Unknown {
                return Err(Error::InvalidSkeleton("unknown tag inside a block".into()));
            }
            if alternation.is_empty() && tags[s] == Tag::Marker {
                return Err(Error::InvalidSkeleton("block starts with a marker".into()));
            }
            alternation.push(k - s);
        }
        BlockType::new(alternation)
    }

    pub fn label(&self) -> String {
        self.alternation.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("-")
    }
}

/// Types are ordered by length, then lexicographically by alternation.
impl Ord for BlockType {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.length().cmp(&other.length()).then_with(|| self.alternation.cmp(&other.alternation))
    }
}

impl PartialOrd for BlockType {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let alternation = s
            .split(['-', ','])
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("bad block type {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        BlockType::new(alternation)
    }
}

/// A maximal run of consecutive primary markers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRun {
    pub interval: Interval,
    pub count: usize,
    /// The run may continue beyond the window.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub interval: Interval,
    /// Flanked by secondary markers inside the window.
    pub complete: bool,
    /// Known only for complete blocks.
    pub block_type: Option<BlockType>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct City {
    pub interval: Interval,
    pub complete: bool,
    /// Indices into [`BlockStructure::blocks`] of the blocks inside the city.
    pub blocks: Vec<usize>,
    /// Number of complete blocks of each type.
    pub census: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub k_mark: usize,
    pub k_rmark: usize,
    pub secondary_markers: Vec<MarkerRun>,
    pub tertiary_markers: Vec<MarkerRun>,
    pub blocks: Vec<Block>,
    pub cities: Vec<City>,
}

impl BlockStructure {
    /// Index of the block containing coordinate `i`.
    pub fn block_at(&self, i: i64) -> Option<usize> {
        self.blocks.iter().position(|b| b.interval.contains(i))
    }

    pub fn city_at(&self, i: i64) -> Option<usize> {
        self.cities.iter().position(|c| c.interval.contains(i))
    }

    /// Complete blocks of type `t` in city `c`, left to right.
    pub fn city_blocks_of_type(&self, c: usize, t: &BlockType) -> Vec<usize> {
        self.cities[c]
            .blocks
            .iter()
            .copied()
            .filter(|&b| self.blocks[b].complete && self.blocks[b].block_type.as_ref() == Some(t))
            .collect()
    }
}

/// Maximal runs of consecutive markers from a skeleton. Runs adjacent to an
/// unknown tag or the window edge are flagged as truncated.
pub fn marker_runs(hat: &HatSequence) -> Vec<MarkerRun> {
    let n = hat.tags.len();
    let mut runs = Vec::new();
    let mut k = 0;
    while k < n {
        if hat.tags[k] != Tag::Marker {
            k += 1;
            continue;
        }
        let s = k;
        while k < n && hat.tags[k] == Tag::Marker {
            k += 1;
        }
        let left_open = s == 0 || hat.tags[s - 1] == Tag::Unknown;
        let right_open = k == n || hat.tags[k] == Tag::Unknown;
        runs.push(MarkerRun {
            interval: Interval { start: hat.start + s as i64, end: hat.start + k as i64 - 1 },
            count: (k - s) / 2,
            truncated: left_open || right_open,
        });
    }
    runs
}

fn gaps(hat: &HatSequence, separators: &[MarkerRun]) -> Vec<(Interval, bool)> {
    // Gaps between consecutive separators are complete; the stretches before
    // the first and after the last are incomplete.
    let (lo, hi) = (hat.start, hat.start + hat.tags.len() as i64 - 1);
    let mut out = Vec::new();
    let mut prev_end: Option<i64> = None;
    for run in separators {
        let start = prev_end.map_or(lo, |e| e + 1);
        if run.interval.start > start {
            out.push((Interval { start, end: run.interval.start - 1 }, prev_end.is_some()));
        }
        prev_end = Some(run.interval.end);
    }
    let start = prev_end.map_or(lo, |e| e + 1);
    if start <= hi {
        out.push((Interval { start, end: hi }, false));
    }
    out
}

/// Secondary and tertiary markers, blocks, cities and censuses of a window.
pub fn parse_blocks(md: &MarkerDecomposition, k_mark: usize, k_rmark: usize) -> Result<BlockStructure> {
    let hat = hat_map(&md.window)?;
    parse_blocks_from_hat(&hat, k_mark, k_rmark)
}

/// As [`parse_blocks`], directly from a skeleton.
pub fn parse_blocks_from_hat(hat: &HatSequence, k_mark: usize, k_rmark: usize) -> Result<BlockStructure> {
    if k_mark == 0 || k_mark >= k_rmark {
        return Err(Error::Parameter(format!("need 0 < k_mark < k_rmark, got {k_mark}, {k_rmark}")));
    }
    let runs = marker_runs(hat);
    let secondary: Vec<MarkerRun> = runs.iter().filter(|r| r.count >= k_mark).cloned().collect();
    let tertiary: Vec<MarkerRun> = runs.iter().filter(|r| r.count >= k_rmark).cloned().collect();
    let blocks: Vec<Block> = gaps(hat, &secondary)
        .into_iter()
        .map(|(interval, complete)| {
            let block_type = if complete {
                let seg = hat.slice(interval.start, interval.end);
                Some(BlockType::from_tags(&seg.tags)).transpose()
            } else {
                Ok(None)
            };
            block_type.map(|block_type| Block { interval, complete, block_type })
        })
        .collect::<Result<_>>()?;
    let cities = gaps(hat, &tertiary)
        .into_iter()
        .map(|(interval, complete)| {
            let members: Vec<usize> = (0..blocks.len())
                .filter(|&b| {
                    blocks[b].interval.start >= interval.start && blocks[b].interval.end <= interval.end
                })
                .collect();
            let mut census = BTreeMap::new();
            if complete {
                for &b in &members {
                    if let Some(t) = &blocks[b].block_type {
                        *census.entry(t.label()).or_insert(0) += 1;
                    }
                }
            }
            City { interval, complete, blocks: members, census }
        })
        .collect();
    Ok(BlockStructure { k_mark, k_rmark, secondary_markers: secondary, tertiary_markers: tertiary, blocks, cities })
}

/// Per-length samplers for filler contents and filler couplings.
#[derive(Clone, Debug)]
pub struct FillerSampler {
    p: Rational,
    side_tables: BTreeMap<(usize, bool), SamplingTable>,
    coupling_tables: BTreeMap<usize, (Vec<(usize, usize)>, SamplingTable)>,
}

impl FillerSampler {
    pub fn new(p: &Rational) -> Result<Self> {
        check_unit_parameter(p)?;
        Ok(FillerSampler { p: p.clone(), side_tables: BTreeMap::new(), coupling_tables: BTreeMap::new() })
    }

    /// Number of ones in a filler of length `n` drawn under `side`.
    pub fn sample_side(&mut self, n: usize, side: Side, rng: &mut RngStream) -> Result<usize> {
        let key = (n, side == Side::Mu);
        if !self.side_tables.contains_key(&key) {
            let law = filler_law(n, &side.one_probability(&self.p))?;
            self.side_tables.insert(key, SamplingTable::new(law.law.masses()));
        }
        Ok(self.side_tables[&key].sample(rng))
    }

    /// Numbers of ones `(s_x, s_y)` drawn from the monotone filler coupling.
    pub fn sample_coupled(&mut self, n: usize, rng: &mut RngStream) -> Result<(usize, usize)> {
        if !self.coupling_tables.contains_key(&n) {
            let c = filler_monotone_coupling(n, &self.p)?;
            let atoms: Vec<(usize, usize)> = c.atoms().map(|(a, b, _)| (a, b)).collect();
            let masses: Vec<Rational> = c.atoms().map(|(_, _, m)| m.clone()).collect();
            self.coupling_tables.insert(n, (atoms, SamplingTable::new(&masses)));
        }
        let (atoms, table) = &self.coupling_tables[&n];
        Ok(atoms[table.sample(rng)])
    }
}

fn write_filler(symbols: &mut [u8], offset: usize, n: usize, ones: usize) {
    for k in 0..n {
        symbols[offset + k] = u8::from(k < ones);
    }
}

/// Draws a window from the conditional law given the skeleton `t`: `01` on
/// every marker and independent filler-set draws on every filler run. Filler
/// runs at the edges of `t` are treated as complete fillers.
pub fn sample_mu_t(t: &HatSequence, p: &Rational, side: Side, rng: &mut RngStream) -> Result<BinaryWindow> {
    let mut sampler = FillerSampler::new(p)?;
    sample_mu_t_with(t, side, &mut sampler, rng)
}

pub fn sample_mu_t_with(
    t: &HatSequence,
    side: Side,
    sampler: &mut FillerSampler,
    rng: &mut RngStream,
) -> Result<BinaryWindow> {
    let (fillers, markers) = t.segments()?;
    let mut symbols = vec![0u8; t.len()];
    for m in &markers {
        symbols[(m.end - t.start) as usize] = 1;
    }
    for f in &fillers {
        let ones = sampler.sample_side(f.len(), side, rng)?;
        write_filler(&mut symbols, (f.start - t.start) as usize, f.len(), ones);
    }
    BinaryWindow::new(t.start, symbols)
}

/// Draws `(X, Y)` from the marker-form monotone joining given `t`: shared
/// markers and, on each filler, an independent draw of the monotone filler
/// coupling. Always `X ≽ Y`.
pub fn sample_marker_joining(
    t: &HatSequence,
    p: &Rational,
    rng: &mut RngStream,
) -> Result<(BinaryWindow, BinaryWindow)> {
    let mut sampler = FillerSampler::new(p)?;
    sample_marker_joining_with(t, &mut sampler, rng)
}

pub fn sample_marker_joining_with(
    t: &HatSequence,
    sampler: &mut FillerSampler,
    rng: &mut RngStream,
) -> Result<(BinaryWindow, BinaryWindow)> {
    if sampler.p <= half() {
        return Err(Error::Parameter("the monotone joining needs p > 1/2".into()));
    }
    let (fillers, markers) = t.segments()?;
    let mut x = vec![0u8; t.len()];
    for m in &markers {
        x[(m.end - t.start) as usize] = 1;
    }
    let mut y = x.clone();
    for f in &fillers {
        let (sx, sy) = sampler.sample_coupled(f.len(), rng)?;
        let off = (f.start - t.start) as usize;
        write_filler(&mut x, off, f.len(), sx);
        write_filler(&mut y, off, f.len(), sy);
    }
    Ok((BinaryWindow::new(t.start, x)?, BinaryWindow::new(t.start, y)?))
}

/// An iid window with `P(1) = side.one_probability(p)`.
pub fn sample_iid_window(start: i64, len: usize, p: &Rational, side: Side, rng: &mut RngStream) -> Result<BinaryWindow> {
    check_unit_parameter(p)?;
    let prob = crate::rational::to_f64(&side.one_probability(p));
    BinaryWindow::new(start, (0..len).map(|_| u8::from(rng.bernoulli(prob))).collect())
}

/// Probability that a given coordinate lies in a primary marker under either
/// measure: `2p(1−p)`.
pub fn marker_coordinate_probability(p: &Rational) -> Rational {
    Rational::from_integer(2.into()) * p * (Rational::one() - p)
}

/// `true` when every marker coordinate agrees and `x ≽ y` coordinatewise.
pub fn is_monotone_marker_pair(x: &BinaryWindow, y: &BinaryWindow) -> Result<bool> {
    if !x.dominates(y) {
        return Ok(false);
    }
    let (mx, my) = (find_primary_markers(x)?, find_primary_markers(y)?);
    Ok(mx.primary_markers == my.primary_markers)
}

#[allow(dead_code)]
fn is_zero(r: &Rational) -> bool {
    r.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{parse_rational, rat};

    fn w(s: &str) -> BinaryWindow {
        s.parse().unwrap()
    }

    #[test]
    fn markers_of_examples() {
        let md = find_primary_markers(&w("00110")).unwrap();
        assert_eq!(md.primary_markers, vec![Interval { start: 1, end: 2 }]);
        assert_eq!(md.fillers.len(), 2);
        assert_eq!(md.fillers[0].interval, Interval { start: 0, end: 0 });
        assert!(md.fillers[0].truncated_left);
        assert_eq!(md.fillers[1].interval, Interval { start: 3, end: 4 });
        assert!(md.fillers[1].truncated_right);

        let md = find_primary_markers(&w("1111")).unwrap();
        assert!(md.primary_markers.is_empty());
        assert_eq!(md.fillers.len(), 1);

        let md = find_primary_markers(&w("0101")).unwrap();
        assert_eq!(md.primary_markers, vec![Interval { start: 0, end: 1 }, Interval { start: 2, end: 3 }]);
        assert!(md.interior_fillers().next().is_none());
    }

    #[test]
    fn hat_of_examples() {
        assert_eq!(hat_map(&w("00110")).unwrap().pattern(), "FMMF?");
        assert_eq!(hat_map(&w("0101")).unwrap().pattern(), "MMMM");
        assert_eq!(hat_map(&w("0000")).unwrap().pattern(), "FFF?");
        assert_eq!(hat_map(&w("1000")).unwrap().pattern(), "?FF?");
        assert_eq!(hat_map(&w("5:011")).unwrap().to_string(), "5:MMF");
    }

    #[test]
    fn filler_law_examples() {
        let f = filler_law(2, &rat(3, 5)).unwrap();
        // Symbols s = 0, 1, 2 are 00, 10, 11.
        let z = rat(76, 100);
        assert_eq!(*f.law.mass(2), rat(36, 100) / &z);
        assert_eq!(*f.law.mass(1), rat(24, 100) / &z);
        assert_eq!(*f.law.mass(0), rat(16, 100) / &z);
        assert_eq!(*f.law.mass(2), rat(9, 19));
        let b = filler_law(1, &rat(3, 5)).unwrap();
        assert_eq!(b.law.masses(), &[rat(2, 5), rat(3, 5)]);
        for n in 1..=10 {
            assert_eq!(filler_normalizer(n, &rat(3, 5)), filler_normalizer(n, &rat(2, 5)));
        }
    }

    #[test]
    fn filler_coupling_is_monotone() {
        for p in ["0.55", "0.75", "0.9"] {
            let p = parse_rational(p).unwrap();
            for n in 1..=10 {
                assert!(monotone(&filler_monotone_coupling(n, &p).unwrap()).unwrap());
                assert!(filler_audit(n, &p).unwrap().passed());
            }
        }
        assert!(filler_monotone_coupling(3, &half()).is_err());
    }

    #[test]
    fn tau_equals_tau_prime_short_patterns() {
        let p = rat(3, 5);
        for k in 1..=5 {
            let mu = hat_pattern_distribution(k, &p, Side::Mu).unwrap();
            let nu = hat_pattern_distribution(k, &p, Side::Nu).unwrap();
            assert_eq!(mu, nu);
            let total: Rational = mu.values().sum();
            assert_eq!(total, one());
        }
        let mm: HatSequence = "0:MM".parse().unwrap();
        let a = hat_pattern_probability(&mm, &p, Side::Mu).unwrap();
        assert_eq!(a, hat_pattern_probability(&mm, &p, Side::Nu).unwrap());
        // (M,M) on [0,1] with 01 there forces x0 = 0, x1 = 1 only if no
        // other pairing; otherwise a marker at [-1,0] and [1,2].
        assert!(a > zero());
        let f: HatSequence = "F".parse().unwrap();
        assert_eq!(
            hat_pattern_probability(&f, &p, Side::Mu).unwrap(),
            one() - marker_coordinate_probability(&p)
        );
    }

    #[test]
    fn blocks_between_secondary_markers() {
        // 0101 | 1 | 0101 with k_mark = 2: one block of type [1].
        let md = find_primary_markers(&w("010110101")).unwrap();
        let bs = parse_blocks(&md, 2, 3).unwrap();
        assert_eq!(bs.secondary_markers.len(), 2);
        let complete: Vec<&Block> = bs.blocks.iter().filter(|b| b.complete).collect();
        assert_eq!(complete.len(), 1);
        assert_eq!(complete[0].block_type, Some(BlockType::new(vec![1]).unwrap()));
        assert_eq!(complete[0].interval, Interval { start: 4, end: 4 });
    }

    #[test]
    fn census_counts_blocks_per_type() {
        // Tertiary (3 markers) | block 1 | secondary (2) | block 1 | tertiary (3).
        let text = format!("{}1{}1{}", "010101", "0101", "010101");
        let md = find_primary_markers(&w(&text)).unwrap();
        let bs = parse_blocks(&md, 2, 3).unwrap();
        assert_eq!(bs.tertiary_markers.len(), 2);
        let city = bs.cities.iter().find(|c| c.complete).unwrap();
        assert_eq!(city.census.get("1"), Some(&2));
        // A run of k_rmark markers is both secondary and tertiary.
        assert!(bs.secondary_markers.iter().any(|s| s.interval == bs.tertiary_markers[0].interval));
    }

    #[test]
    fn samplers_respect_skeleton() {
        let mut rng = RngStream::new(11, 0);
        let t: HatSequence = "MM".parse().unwrap();
        assert_eq!(sample_mu_t(&t, &rat(3, 4), Side::Mu, &mut rng).unwrap().symbols(), &[0, 1]);
        let t: HatSequence = "MMFFMM".parse().unwrap();
        for _ in 0..200 {
            let (x, y) = sample_marker_joining(&t, &rat(3, 4), &mut rng).unwrap();
            assert!(is_monotone_marker_pair(&x, &y).unwrap());
            assert_eq!(hat_map(&x).unwrap().pattern(), "MMFFMM");
        }
        assert!(sample_mu_t(&"M?".parse().unwrap(), &rat(3, 4), Side::Mu, &mut rng).is_err());
        assert!(sample_mu_t(&"MMM".parse().unwrap(), &rat(3, 4), Side::Mu, &mut rng).is_err());
    }

    #[test]
    fn block_type_order_is_length_then_lex() {
        let a: BlockType = "1-2-3".parse().unwrap();
        let b: BlockType = "3-2-1".parse().unwrap();
        let c: BlockType = "5".parse().unwrap();
        assert!(c < a && a < b);
        assert!("1-3-1".parse::<BlockType>().is_err());
    }
}
