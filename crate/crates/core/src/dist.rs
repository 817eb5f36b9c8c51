//! Exact finite distributions on ordered alphabets, their quantile functions,
//! and couplings built from shared uniform randomization.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, format_rational, one, zero, Rational};

/// Order relation on the symbols `0..size` of an [`Alphabet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Order {
    /// The usual order on `0..size`.
    Total,
    /// Coordinatewise order on `base^len` words, encoded most-significant
    /// digit first.
    Product { base: usize, len: usize },
    /// Explicit relation: `geq[a][b]` is `a ≽ b`.
    Relation(Arc<Vec<Vec<bool>>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    size: usize,
    order: Order,
}

impl Alphabet {
    pub fn total(size: usize) -> Result<Alphabet> {
        if size == 0 {
            return Err(Error::InvalidAlphabet("alphabet must be nonempty".into()));
        }
        Ok(Alphabet { size, order: Order::Total })
    }

    /// Words of length `len` over `0..base` with the coordinatewise order.
    pub fn product_order(base: usize, len: usize) -> Result<Alphabet> {
        let size = (base as u128)
            .checked_pow(len as u32)
            .filter(|s| *s <= usize::MAX as u128)
            .ok_or(Error::SizeGuard { size: u128::MAX, limit: usize::MAX as u128 })?;
        if size == 0 || len == 0 {
            return Err(Error::InvalidAlphabet("alphabet must be nonempty".into()));
        }
        Ok(Alphabet { size: size as usize, order: Order::Product { base, len } })
    }

    /// A finite poset given by its `≽` relation; checked for reflexivity,
    /// antisymmetry and transitivity.
    pub fn poset(geq: Vec<Vec<bool>>) -> Result<Alphabet> {
        let n = geq.len();
        if n == 0 {
            return Err(Error::InvalidAlphabet("alphabet must be nonempty".into()));
        }
        if geq.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidAlphabet("relation matrix is not square".into()));
        }
        for a in 0..n {
            if !geq[a][a] {
                return Err(Error::InvalidAlphabet(format!("not reflexive at {a}")));
            }
            for b in 0..n {
                if a != b && geq[a][b] && geq[b][a] {
                    return Err(Error::InvalidAlphabet(format!("not antisymmetric at ({a},{b})")));
                }
                if geq[a][b] {
                    for c in 0..n {
                        if geq[b][c] && !geq[a][c] {
                            return Err(Error::InvalidAlphabet(format!(
                                "not transitive at ({a},{b},{c})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Alphabet { size: n, order: Order::Relation(Arc::new(geq)) })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn order(&self) -> &Order {
        &self.order
    }

    pub fn is_total(&self) -> bool {
        matches!(self.order, Order::Total)
            || matches!(self.order, Order::Product { len: 1, .. })
    }

    /// `a ≽ b` in this alphabet's order.
    pub fn geq(&self, a: usize, b: usize) -> bool {
        match &self.order {
            Order::Total => a >= b,
            Order::Product { base, len } => {
                let (mut a, mut b) = (a, b);
                for _ in 0..*len {
                    if a % base < b % base {
                        return false;
                    }
                    a /= base;
                    b /= base;
                }
                true
            }
            Order::Relation(m) => m[a][b],
        }
    }
}

fn check_mass(mass: &[Rational], what: &str) -> Result<()> {
    if let Some(m) = mass.iter().find(|m| m.is_negative()) {
        return Err(Error::InvalidDistribution(format!(
            "{what} has negative mass {}",
            format_rational(m)
        )));
    }
    let total: Rational = mass.iter().sum();
    if total != one() {
        return Err(Error::InvalidDistribution(format!(
            "{what} masses sum to {} instead of 1",
            format_rational(&total)
        )));
    }
    Ok(())
}

/// Exact probability mass function over an [`Alphabet`].
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDistribution {
    alphabet: Alphabet,
    mass: Vec<Rational>,
}

impl FiniteDistribution {
    pub fn new(alphabet: Alphabet, mass: Vec<Rational>) -> Result<Self> {
        if mass.len() != alphabet.size() {
            return Err(Error::InvalidDistribution(format!(
                "{} masses for an alphabet of size {}",
                mass.len(),
                alphabet.size()
            )));
        }
        check_mass(&mass, "distribution")?;
        Ok(FiniteDistribution { alphabet, mass })
    }

    /// Distribution on the totally ordered alphabet `0..mass.len()`.
    pub fn from_masses(mass: Vec<Rational>) -> Result<Self> {
        FiniteDistribution::new(Alphabet::total(mass.len())?, mass)
    }

    /// Parses `"3/10,7/10"` or `"0.3,0.7"`.
    pub fn parse(text: &str) -> Result<Self> {
        FiniteDistribution::from_masses(rational::parse_rational_list(text)?)
    }

    pub fn point_mass(size: usize, at: usize) -> Result<Self> {
        let mut mass = vec![zero(); size];
        *mass
            .get_mut(at)
            .ok_or_else(|| Error::Parameter(format!("symbol {at} outside alphabet")))? = one();
        FiniteDistribution::from_masses(mass)
    }

    pub fn uniform(size: usize) -> Result<Self> {
        FiniteDistribution::from_masses(vec![rational::rat(1, size as i64); size])
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self, symbol: usize) -> &Rational {
        &self.mass[symbol]
    }

    pub fn masses(&self) -> &[Rational] {
        &self.mass
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mass.len()).filter(move |&a| !self.mass[a].is_zero())
    }

    pub fn cdf(&self) -> Cdf {
        let mut acc = zero();
        let cumulative = self
            .mass
            .iter()
            .map(|m| {
                acc += m;
                acc.clone()
            })
            .collect();
        Cdf { cumulative }
    }

    /// Same masses viewed on a different alphabet of equal size.
    pub fn with_alphabet(&self, alphabet: Alphabet) -> Result<Self> {
        FiniteDistribution::new(alphabet, self.mass.clone())
    }

    /// The distribution conditioned on `keep(symbol)`, on the same alphabet.
    pub fn condition(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let total: Rational = (0..self.len()).filter(|&a| keep(a)).map(|a| &self.mass[a]).sum();
        if total.is_zero() {
            return Err(Error::DegenerateCondition("conditioning event has zero mass".into()));
        }
        let mass = (0..self.len())
            .map(|a| if keep(a) { &self.mass[a] / &total } else { zero() })
            .collect();
        FiniteDistribution::new(self.alphabet.clone(), mass)
    }

    /// Support as a [`StepLaw`] keyed by symbol.
    pub fn step_law(&self) -> StepLaw<usize> {
        StepLaw::from_sorted(self.support().map(|a| (a, self.mass[a].clone())).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.mass.iter().map(rational::to_f64).collect()
    }
}

impl fmt::Display for FiniteDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.mass.iter().map(format_rational).collect();
        write!(f, "({})", parts.join(", "))
    }
}

impl Serialize for FiniteDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        rational::serde_rational_vec::serialize(&self.mass, s)
    }
}

impl<'de> Deserialize<'de> for FiniteDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mass = rational::serde_rational_vec::deserialize(d)?;
        FiniteDistribution::from_masses(mass).map_err(serde::de::Error::custom)
    }
}

/// Cumulative distribution function along the alphabet order.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf {
    cumulative: Vec<Rational>,
}

impl Cdf {
    pub fn values(&self) -> &[Rational] {
        &self.cumulative
    }

    pub fn at(&self, symbol: usize) -> &Rational {
        &self.cumulative[symbol]
    }

    /// `F⁻¹(u)`: the smallest symbol `a` with `F(a) ≥ u`. At a jump point
    /// `u = F(a)` the lower symbol `a` is returned.
    pub fn inverse(&self, u: &Rational) -> Result<usize> {
        if !u.is_positive() || *u > one() {
            return Err(Error::UnitOutOfRange(format_rational(u)));
        }
        Ok(self.cumulative.partition_point(|c| c < u))
    }
}

/// `F⁻¹(u)` for the CDF `c`.
pub fn generalized_inverse(c: &Cdf, u: &Rational) -> Result<usize> {
    c.inverse(u)
}

/// A finitely supported law on an ordered key type, stored as its
/// positive-mass atoms in increasing key order.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLaw<K> {
    atoms: Vec<(K, Rational)>,
    cumulative: Vec<Rational>,
}

impl<K: Clone + Ord> StepLaw<K> {
    /// Builds from atoms in increasing key order; zero-mass atoms are dropped.
    pub fn from_sorted(atoms: Vec<(K, Rational)>) -> Self {
        debug_assert!(atoms.windows(2).all(|w| w[0].0 < w[1].0));
        let atoms: Vec<(K, Rational)> = atoms.into_iter().filter(|(_, m)| !m.is_zero()).collect();
        let mut acc = zero();
        let cumulative = atoms
            .iter()
            .map(|(_, m)| {
                acc += m;
                acc.clone()
            })
            .collect();
        StepLaw { atoms, cumulative }
    }

    /// Builds from unnormalized weights, normalizing to total mass 1.
    pub fn normalized(mut atoms: Vec<(K, Rational)>) -> Result<Self> {
        atoms.sort_by(|a, b| a.0.cmp(&b.0));
        let total: Rational = atoms.iter().map(|(_, m)| m).sum();
        if !total.is_positive() {
            return Err(Error::DegenerateCondition("law has zero total mass".into()));
        }
        Ok(StepLaw::from_sorted(atoms.into_iter().map(|(k, m)| (k, m / &total)).collect()))
    }

    pub fn atoms(&self) -> &[(K, Rational)] {
        &self.atoms
    }

    pub fn cumulative(&self) -> &[Rational] {
        &self.cumulative
    }

    pub fn total(&self) -> Rational {
        self.cumulative.last().cloned().unwrap_or_else(zero)
    }

    pub fn mass_of(&self, key: &K) -> Rational {
        match self.position(key) {
            Some(i) => self.atoms[i].1.clone(),
            None => zero(),
        }
    }

    /// Smallest key whose cumulative mass reaches `u`.
    pub fn inverse(&self, u: &Rational) -> K {
        self.atoms[self.inverse_index(u)].0.clone()
    }

    /// Index of the atom selected by `u`, with the cell's lower edge.
    pub fn inverse_index(&self, u: &Rational) -> usize {
        self.cumulative.partition_point(|c| c < u).min(self.atoms.len() - 1)
    }

    /// Lower edge of atom `i`'s quantile cell.
    pub fn lower_edge(&self, i: usize) -> Rational {
        if i == 0 {
            zero()
        } else {
            self.cumulative[i - 1].clone()
        }
    }

    /// Index of `key` among the atoms, if it has positive mass.
    pub fn position(&self, key: &K) -> Option<usize> {
        self.atoms.binary_search_by(|(k, _)| k.cmp(key)).ok()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Cell boundaries `0 = c₀ < c₁ < … < c_m = 1` of the quantile function.
    pub fn breakpoints(&self) -> Vec<Rational> {
        std::iter::once(zero()).chain(self.cumulative.iter().cloned()).collect()
    }
}

/// One cell of the common refinement of two quantile functions: on
/// `(lo, hi]` the left law's quantile is `left` and the right law's is `right`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileCell<K, L> {
    pub lo: Rational,
    pub hi: Rational,
    pub left: K,
    pub right: L,
}

impl<K, L> QuantileCell<K, L> {
    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }
}

/// Common refinement of the quantile functions of two laws on `[0, 1]`.
pub fn merge_quantiles<K: Clone + Ord, L: Clone + Ord>(
    left: &StepLaw<K>,
    right: &StepLaw<L>,
) -> Vec<QuantileCell<K, L>> {
    let (ca, cb) = (left.cumulative(), right.cumulative());
    let mut cells = Vec::with_capacity(ca.len() + cb.len());
    let (mut i, mut j) = (0, 0);
    let mut prev = zero();
    while i < ca.len() && j < cb.len() {
        let next = if ca[i] <= cb[j] { ca[i].clone() } else { cb[j].clone() };
        if next > prev {
            cells.push(QuantileCell {
                lo: prev.clone(),
                hi: next.clone(),
                left: left.atoms()[i].0.clone(),
                right: right.atoms()[j].0.clone(),
            });
            prev = next.clone();
        }
        if ca[i] == next {
            i += 1;
        }
        if cb[j] == next {
            j += 1;
        }
    }
    cells
}

/// Exact joint mass function on a product of two alphabets. Only atoms of
/// positive mass are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMass {
    left: Alphabet,
    right: Alphabet,
    mass: BTreeMap<(usize, usize), Rational>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub left: usize,
    pub right: usize,
    #[serde(with = "rational::serde_rational")]
    pub mass: Rational,
}

impl JointMass {
    pub fn new(
        left: Alphabet,
        right: Alphabet,
        atoms: impl IntoIterator<Item = ((usize, usize), Rational)>,
    ) -> Result<Self> {
        let mut mass: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
        for ((a, b), m) in atoms {
            if a >= left.size() || b >= right.size() {
                return Err(Error::InvalidDistribution(format!("atom ({a},{b}) outside alphabets")));
            }
            if m.is_negative() {
                return Err(Error::InvalidDistribution(format!("negative mass at ({a},{b})")));
            }
            *mass.entry((a, b)).or_insert_with(zero) += m;
        }
        mass.retain(|_, m| !m.is_zero());
        let total: Rational = mass.values().sum();
        if total != one() {
            return Err(Error::InvalidDistribution(format!(
                "joint masses sum to {}",
                format_rational(&total)
            )));
        }
        Ok(JointMass { left, right, mass })
    }

    /// Joint law on totally ordered alphabets of the given sizes.
    pub fn from_atoms(
        left_size: usize,
        right_size: usize,
        atoms: impl IntoIterator<Item = ((usize, usize), Rational)>,
    ) -> Result<Self> {
        JointMass::new(Alphabet::total(left_size)?, Alphabet::total(right_size)?, atoms)
    }

    /// Independent coupling `p ⊗ q`.
    pub fn product(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<Self> {
        let atoms = p
            .support()
            .flat_map(|a| q.support().map(move |b| ((a, b), p.mass(a) * q.mass(b))));
        JointMass::new(p.alphabet().clone(), q.alphabet().clone(), atoms.collect::<Vec<_>>())
    }

    /// Coupling concentrated on the diagonal with marginal `p`.
    pub fn diagonal(p: &FiniteDistribution) -> Result<Self> {
        JointMass::new(
            p.alphabet().clone(),
            p.alphabet().clone(),
            p.support().map(|a| ((a, a), p.mass(a).clone())).collect::<Vec<_>>(),
        )
    }

    pub fn left_alphabet(&self) -> &Alphabet {
        &self.left
    }

    pub fn right_alphabet(&self) -> &Alphabet {
        &self.right
    }

    pub fn mass(&self, a: usize, b: usize) -> Rational {
        self.mass.get(&(a, b)).cloned().unwrap_or_else(zero)
    }

    pub fn atoms(&self) -> impl Iterator<Item = (usize, usize, &Rational)> {
        self.mass.iter().map(|(&(a, b), m)| (a, b, m))
    }

    pub fn atom_count(&self) -> usize {
        self.mass.len()
    }

    pub fn marginal_left(&self) -> FiniteDistribution {
        let mut mass = vec![zero(); self.left.size()];
        for (&(a, _), m) in &self.mass {
            mass[a] += m;
        }
        FiniteDistribution { alphabet: self.left.clone(), mass }
    }

    pub fn marginal_right(&self) -> FiniteDistribution {
        let mut mass = vec![zero(); self.right.size()];
        for (&(_, b), m) in &self.mass {
            mass[b] += m;
        }
        FiniteDistribution { alphabet: self.right.clone(), mass }
    }

    /// Law of the right symbol given left symbol `a`.
    pub fn conditional_right(&self, a: usize) -> Result<StepLaw<usize>> {
        let atoms: Vec<(usize, Rational)> =
            self.mass.range((a, 0)..=(a, usize::MAX)).map(|(&(_, b), m)| (b, m.clone())).collect();
        if atoms.is_empty() {
            return Err(Error::ZeroMassCondition(a));
        }
        StepLaw::normalized(atoms)
    }

    /// Law of the left symbol given right symbol `b`.
    pub fn conditional_left(&self, b: usize) -> Result<StepLaw<usize>> {
        let atoms: Vec<(usize, Rational)> = self
            .mass
            .iter()
            .filter(|(&(_, bb), _)| bb == b)
            .map(|(&(a, _), m)| (a, m.clone()))
            .collect();
        if atoms.is_empty() {
            return Err(Error::ZeroMassCondition(b));
        }
        StepLaw::normalized(atoms)
    }

    /// The same law with left and right exchanged.
    pub fn transpose(&self) -> JointMass {
        JointMass {
            left: self.right.clone(),
            right: self.left.clone(),
            mass: self.mass.iter().map(|(&(a, b), m)| ((b, a), m.clone())).collect(),
        }
    }

    pub fn to_records(&self) -> Vec<JointRecord> {
        self.atoms()
            .map(|(left, right, mass)| JointRecord { left, right, mass: mass.clone() })
            .collect()
    }

    /// Rebuilds from records on total orders sized by the largest symbols seen.
    pub fn from_records(records: &[JointRecord]) -> Result<Self> {
        let left = records.iter().map(|r| r.left + 1).max().unwrap_or(1);
        let right = records.iter().map(|r| r.right + 1).max().unwrap_or(1);
        JointMass::from_atoms(left, right, records.iter().map(|r| ((r.left, r.right), r.mass.clone())))
    }
}

impl Serialize for JointMass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_records().serialize(s)
    }
}

impl<'de> Deserialize<'de> for JointMass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let records = Vec::<JointRecord>::deserialize(d)?;
        JointMass::from_records(&records).map_err(serde::de::Error::custom)
    }
}

/// `−Σ pᵢ ln pᵢ` with `0 ln 0 = 0`.
pub fn entropy(d: &FiniteDistribution) -> f64 {
    d.masses()
        .iter()
        .filter(|m| !m.is_zero())
        .map(|m| {
            let p = rational::to_f64(m);
            -p * p.ln()
        })
        .sum()
}

fn require_same_total(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
    if p.len() != q.len() || !p.alphabet().is_total() || !q.alphabet().is_total() {
        return Err(Error::AlphabetMismatch(format!(
            "need one totally ordered alphabet, got sizes {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `p` stochastically dominates `q`: every prefix sum of `p` is at most the
/// corresponding prefix sum of `q`.
pub fn dominates(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<bool> {
    require_same_total(p, q)?;
    let (fp, fq) = (p.cdf(), q.cdf());
    Ok(fp.values().iter().zip(fq.values()).all(|(a, b)| a <= b))
}

/// Exact law of `(F_p⁻¹(U), F_q⁻¹(U))` for a single uniform `U`.
pub fn quantile_coupling(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<JointMass> {
    if !p.alphabet().is_total() || !q.alphabet().is_total() {
        return Err(Error::AlphabetMismatch("quantile coupling needs total orders".into()));
    }
    let cells = merge_quantiles(&p.step_law(), &q.step_law());
    JointMass::new(
        p.alphabet().clone(),
        q.alphabet().clone(),
        cells.into_iter().map(|c| ((c.left, c.right), c.width())).collect::<Vec<_>>(),
    )
}

/// Every positive-mass pair `(a, b)` has `a ≽ b`.
pub fn monotone(c: &JointMass) -> Result<bool> {
    if c.left_alphabet() != c.right_alphabet() {
        return Err(Error::AlphabetMismatch("monotonicity needs a common alphabet".into()));
    }
    let alphabet = c.left_alphabet();
    Ok(c.atoms().all(|(a, b, _)| alphabet.geq(a, b)))
}

/// `Q_a⁻¹(u)` where `Q_a` is the conditional CDF of the right symbol given
/// left symbol `a`.
pub fn conditional_quantile(j: &JointMass, a: usize, u: &Rational) -> Result<usize> {
    if !u.is_positive() || *u > one() {
        return Err(Error::UnitOutOfRange(format_rational(u)));
    }
    Ok(j.conditional_right(a)?.inverse(u))
}

/// Left symbols that a joint law splits over two or more right symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split_elements: Vec<usize>,
    pub count: usize,
}

pub fn split_report(j: &JointMass) -> SplitReport {
    let mut partners: BTreeMap<usize, usize> = BTreeMap::new();
    for (a, _, _) in j.atoms() {
        *partners.entry(a).or_default() += 1;
    }
    let split_elements: Vec<usize> =
        partners.into_iter().filter(|&(_, n)| n >= 2).map(|(a, _)| a).collect();
    SplitReport { count: split_elements.len(), split_elements }
}
