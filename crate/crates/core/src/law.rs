//! Laws on words (finite sequences of symbol codes) ordered
//! lexicographically, most significant coordinate first.

use std::collections::BTreeMap;

use num::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{JointMass, StepLaw};
use crate::error::{Error, Result};
use crate::rational::{self, one, zero, Rational};

pub type Word = Vec<u32>;

/// Product of independent coordinate laws, ordered lexicographically.
/// Quantiles and cell locations are computed digit by digit, so the
/// product support is never enumerated unless asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductLaw {
    factors: Vec<StepLaw<u32>>,
}

impl ProductLaw {
    pub fn new(factors: Vec<StepLaw<u32>>) -> Self {
        ProductLaw { factors }
    }

    /// `k` independent copies of one law.
    pub fn power(law: &StepLaw<u32>, k: usize) -> Self {
        ProductLaw { factors: vec![law.clone(); k] }
    }

    pub fn factors(&self) -> &[StepLaw<u32>] {
        &self.factors
    }

    pub fn word_len(&self) -> usize {
        self.factors.len()
    }

    pub fn support_size(&self) -> u128 {
        self.factors.iter().fold(1u128, |acc, f| acc.saturating_mul(f.len() as u128))
    }

    /// Lexicographic quantile: the word whose cell `(lo, lo + mass]` holds `u`.
    pub fn inverse(&self, u: &Rational) -> Word {
        let mut u = u.clone();
        let mut word = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            let i = f.inverse_index(&u);
            let (key, mass) = &f.atoms()[i];
            word.push(*key);
            u = (u - f.lower_edge(i)) / mass;
        }
        word
    }

    /// The quantile cell `(lo, width)` of `word`, or `None` off the support.
    pub fn locate(&self, word: &[u32]) -> Option<(Rational, Rational)> {
        if word.len() != self.factors.len() {
            return None;
        }
        let mut lo = zero();
        let mut width = one();
        for (f, s) in self.factors.iter().zip(word) {
            let i = f.position(s)?;
            lo += &width * f.lower_edge(i);
            width *= &f.atoms()[i].1;
        }
        Some((lo, width))
    }

    pub fn mass(&self, word: &[u32]) -> Rational {
        self.locate(word).map(|(_, w)| w).unwrap_or_else(zero)
    }

    /// All positive-mass words in increasing order.
    pub fn enumerate(&self, limit: u128) -> Result<StepLaw<Word>> {
        let size = self.support_size();
        if size > limit {
            return Err(Error::SizeGuard { size, limit });
        }
        let mut atoms: Vec<(Word, Rational)> = vec![(Vec::new(), one())];
        for f in &self.factors {
            let mut next = Vec::with_capacity(atoms.len() * f.len());
            for (w, m) in &atoms {
                for (s, ms) in f.atoms() {
                    let mut w2 = w.clone();
                    w2.push(*s);
                    next.push((w2, m * ms));
                }
            }
            atoms = next;
        }
        Ok(StepLaw::from_sorted(atoms))
    }
}

/// A conditional or marginal law on words, either in product form or as an
/// explicit table.
#[derive(Clone, Debug, PartialEq)]
pub enum WordLaw {
    Product(ProductLaw),
    Table(StepLaw<Word>),
}

impl WordLaw {
    pub fn inverse(&self, u: &Rational) -> Word {
        match self {
            WordLaw::Product(p) => p.inverse(u),
            WordLaw::Table(t) => t.inverse(u),
        }
    }

    pub fn locate(&self, word: &[u32]) -> Option<(Rational, Rational)> {
        match self {
            WordLaw::Product(p) => p.locate(word),
            WordLaw::Table(t) => {
                let i = t.position(&word.to_vec())?;
                Some((t.lower_edge(i), t.atoms()[i].1.clone()))
            }
        }
    }

    pub fn to_table(&self, limit: u128) -> Result<StepLaw<Word>> {
        match self {
            WordLaw::Product(p) => p.enumerate(limit),
            WordLaw::Table(t) => Ok(t.clone()),
        }
    }

    /// Words whose cells meet `(lo, lo + width]`, with the overlap length.
    /// Table laws are searched by bisection, product laws digit by digit;
    /// `limit` caps the number of words returned.
    pub fn overlaps(&self, lo: &Rational, width: &Rational, limit: u128) -> Result<Vec<(Word, Rational)>> {
        let hi = lo + width;
        let mut out = Vec::new();
        match self {
            WordLaw::Table(table) => {
                let cum = table.cumulative();
                let mut i = cum.partition_point(|c| c <= lo);
                while i < table.len() {
                    let cell_lo = table.lower_edge(i);
                    if cell_lo >= hi {
                        break;
                    }
                    let a = if cell_lo > *lo { cell_lo } else { lo.clone() };
                    let b = if cum[i] < hi { cum[i].clone() } else { hi.clone() };
                    if b > a {
                        out.push((table.atoms()[i].0.clone(), b - a));
                    }
                    i += 1;
                }
            }
            WordLaw::Product(p) => {
                let mut prefix = Vec::with_capacity(p.word_len());
                product_overlaps(p.factors(), &zero(), &one(), lo, &hi, &mut prefix, &mut out);
            }
        }
        if out.len() as u128 > limit {
            return Err(Error::SizeGuard { size: out.len() as u128, limit });
        }
        Ok(out)
    }
}

fn product_overlaps(
    factors: &[StepLaw<u32>],
    base: &Rational,
    scale: &Rational,
    lo: &Rational,
    hi: &Rational,
    prefix: &mut Word,
    out: &mut Vec<(Word, Rational)>,
) {
    let Some((f, rest)) = factors.split_first() else {
        let a = if base > lo { base.clone() } else { lo.clone() };
        let top = base + scale;
        let b = if top < *hi { top } else { hi.clone() };
        if b > a {
            out.push((prefix.clone(), b - a));
        }
        return;
    };
    for (i, (s, m)) in f.atoms().iter().enumerate() {
        let cell_lo = base + scale * f.lower_edge(i);
        if cell_lo >= *hi {
            break;
        }
        let width = scale * m;
        if &cell_lo + &width <= *lo {
            continue;
        }
        prefix.push(*s);
        product_overlaps(rest, &cell_lo, &width, lo, hi, prefix, out);
        prefix.pop();
    }
}

/// Exact joint law of a pair of words.
#[derive(Clone, Debug, PartialEq)]
pub struct WordPairLaw {
    atoms: BTreeMap<(Word, Word), Rational>,
}

impl WordPairLaw {
    pub fn new(atoms: impl IntoIterator<Item = ((Word, Word), Rational)>) -> Result<Self> {
        let mut map: BTreeMap<(Word, Word), Rational> = BTreeMap::new();
        for (k, m) in atoms {
            if m.is_negative() {
                return Err(Error::InvalidDistribution("negative mass".into()));
            }
            *map.entry(k).or_insert_with(zero) += m;
        }
        map.retain(|_, m| !m.is_zero());
        let total: Rational = map.values().sum();
        if total != one() {
            return Err(Error::InvalidDistribution(format!(
                "pair law sums to {}",
                rational::format_rational(&total)
            )));
        }
        Ok(WordPairLaw { atoms: map })
    }

    /// Single-letter words from a symbol-level joint law.
    pub fn from_joint(j: &JointMass) -> Self {
        WordPairLaw {
            atoms: j.atoms().map(|(a, b, m)| ((vec![a as u32], vec![b as u32]), m.clone())).collect(),
        }
    }

    /// Symbol-level joint law when both sides are single letters.
    pub fn to_joint(&self, left_size: usize, right_size: usize) -> Result<JointMass> {
        let atoms: Vec<((usize, usize), Rational)> = self
            .atoms
            .iter()
            .map(|((x, y), m)| {
                if x.len() != 1 || y.len() != 1 {
                    return Err(Error::Parameter("words are not single letters".into()));
                }
                Ok(((x[0] as usize, y[0] as usize), m.clone()))
            })
            .collect::<Result<_>>()?;
        JointMass::from_atoms(left_size, right_size, atoms)
    }

    pub fn atoms(&self) -> &BTreeMap<(Word, Word), Rational> {
        &self.atoms
    }

    pub fn mass(&self, x: &Word, y: &Word) -> Rational {
        self.atoms.get(&(x.clone(), y.clone())).cloned().unwrap_or_else(zero)
    }

    pub fn left_marginal(&self) -> StepLaw<Word> {
        let mut m: BTreeMap<Word, Rational> = BTreeMap::new();
        for ((x, _), p) in &self.atoms {
            *m.entry(x.clone()).or_insert_with(zero) += p;
        }
        StepLaw::from_sorted(m.into_iter().collect())
    }

    pub fn right_marginal(&self) -> StepLaw<Word> {
        let mut m: BTreeMap<Word, Rational> = BTreeMap::new();
        for ((_, y), p) in &self.atoms {
            *m.entry(y.clone()).or_insert_with(zero) += p;
        }
        StepLaw::from_sorted(m.into_iter().collect())
    }

    /// Conditional law of the right word given the left word `x`.
    pub fn given_left(&self, x: &Word) -> Result<StepLaw<Word>> {
        let atoms: Vec<(Word, Rational)> = self
            .atoms
            .range((x.clone(), Vec::new())..)
            .take_while(|((xx, _), _)| xx == x)
            .map(|((_, y), m)| (y.clone(), m.clone()))
            .collect();
        if atoms.is_empty() {
            return Err(Error::DegenerateCondition("left word has zero mass".into()));
        }
        StepLaw::normalized(atoms)
    }

    /// Conditional law of the left word given the right word `y`.
    pub fn given_right(&self, y: &Word) -> Result<StepLaw<Word>> {
        let atoms: Vec<(Word, Rational)> = self
            .atoms
            .iter()
            .filter(|((_, yy), _)| yy == y)
            .map(|((x, _), m)| (x.clone(), m.clone()))
            .collect();
        if atoms.is_empty() {
            return Err(Error::DegenerateCondition("right word has zero mass".into()));
        }
        StepLaw::normalized(atoms)
    }

    /// All conditionals of the left word, keyed by right word.
    pub fn left_conditionals(&self) -> BTreeMap<Word, StepLaw<Word>> {
        let mut rows: BTreeMap<Word, Vec<(Word, Rational)>> = BTreeMap::new();
        for ((x, y), m) in &self.atoms {
            rows.entry(y.clone()).or_default().push((x.clone(), m.clone()));
        }
        rows.into_iter().map(|(y, r)| (y, StepLaw::normalized(r).expect("positive row"))).collect()
    }

    /// All conditionals of the right word, keyed by left word.
    pub fn right_conditionals(&self) -> BTreeMap<Word, StepLaw<Word>> {
        let mut rows: BTreeMap<Word, Vec<(Word, Rational)>> = BTreeMap::new();
        for ((x, y), m) in &self.atoms {
            rows.entry(x.clone()).or_default().push((y.clone(), m.clone()));
        }
        rows.into_iter().map(|(x, r)| (x, StepLaw::normalized(r).expect("positive row"))).collect()
    }
}

/// Exact law of a tuple of words.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleLaw {
    arity: usize,
    atoms: BTreeMap<Vec<Word>, Rational>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleRecord {
    pub outcome: Vec<Word>,
    #[serde(with = "rational::serde_rational")]
    pub mass: Rational,
}

impl TupleLaw {
    pub fn new(arity: usize, atoms: impl IntoIterator<Item = (Vec<Word>, Rational)>) -> Result<Self> {
        let mut map: BTreeMap<Vec<Word>, Rational> = BTreeMap::new();
        for (k, m) in atoms {
            if k.len() != arity {
                return Err(Error::Parameter(format!("outcome of arity {} in a {arity}-tuple law", k.len())));
            }
            if m.is_negative() {
                return Err(Error::InvalidDistribution("negative mass".into()));
            }
            *map.entry(k).or_insert_with(zero) += m;
        }
        map.retain(|_, m| !m.is_zero());
        let total: Rational = map.values().sum();
        if total != one() {
            return Err(Error::InvalidDistribution(format!(
                "tuple law sums to {}",
                rational::format_rational(&total)
            )));
        }
        Ok(TupleLaw { arity, atoms: map })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn atoms(&self) -> &BTreeMap<Vec<Word>, Rational> {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Pushforward of the law under `key`.
    pub fn project<K: Ord>(&self, key: impl Fn(&[Word]) -> K) -> BTreeMap<K, Rational> {
        let mut out: BTreeMap<K, Rational> = BTreeMap::new();
        for (outcome, m) in &self.atoms {
            *out.entry(key(outcome)).or_insert_with(zero) += m;
        }
        out
    }

    /// Joint law of components `i` and `j`.
    pub fn pair_projection(&self, i: usize, j: usize) -> WordPairLaw {
        WordPairLaw { atoms: self.project(|o| (o[i].clone(), o[j].clone())) }
    }

    /// Whether `f(outcome)` and `g(outcome)` are independent, by exact
    /// factorization over the product of their supports.
    pub fn independent<K1: Ord + Clone, K2: Ord + Clone>(
        &self,
        f: impl Fn(&[Word]) -> K1,
        g: impl Fn(&[Word]) -> K2,
    ) -> bool {
        let joint = self.project(|o| (f(o), g(o)));
        let left = self.project(&f);
        let right = self.project(&g);
        if joint.len() != left.len() * right.len() {
            return false;
        }
        joint.iter().all(|((a, b), m)| *m == &left[a] * &right[b])
    }

    pub fn to_records(&self) -> Vec<TupleRecord> {
        self.atoms
            .iter()
            .map(|(outcome, mass)| TupleRecord { outcome: outcome.clone(), mass: mass.clone() })
            .collect()
    }
}

impl Serialize for TupleLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_records().serialize(s)
    }
}

/// Positive-mass law with one entry per symbol from a slice of masses.
pub fn symbol_law(masses: &[Rational]) -> StepLaw<u32> {
    StepLaw::from_sorted(masses.iter().enumerate().map(|(a, m)| (a as u32, m.clone())).collect())
}
