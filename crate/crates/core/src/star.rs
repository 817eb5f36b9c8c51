//! Star-couplings of pair laws: the plain construction, its iterated form,
//! the variant with replacement, and the iterated variant with replacement.
//!
//! Every construction is a deterministic function of independent uniforms
//! (`U₁`, `U₂`, `U`, and `U_rep` for replacement). The exact laws evaluate
//! that function once per cell of a rational partition of the
//! randomization cube; the samplers evaluate it at random points.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::dist::{merge_quantiles, JointMass, StepLaw};
use crate::error::{Error, Result};
use crate::law::{symbol_law, ProductLaw, TupleLaw, TupleRecord, Word, WordLaw, WordPairLaw};
use crate::rational::{one, zero, Rational};
use crate::rng::RngStream;

/// Largest `|A × B|^L` accepted by exact iterated replacement.
pub const EXACT_STATE_LIMIT: u128 = 1_000_000;

/// Largest conditional table built by the replacement sampler.
pub const SAMPLER_TABLE_LIMIT: u128 = 2_000_000;

/// A joint law on `A × B`, both totally ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLaw {
    joint: JointMass,
    alpha: StepLaw<u32>,
    beta: StepLaw<u32>,
    x_given_y: Vec<Option<StepLaw<u32>>>,
    y_given_x: Vec<Option<StepLaw<u32>>>,
}

fn to_u32_law(law: StepLaw<usize>) -> StepLaw<u32> {
    StepLaw::from_sorted(law.atoms().iter().map(|(k, m)| (*k as u32, m.clone())).collect())
}

impl PairLaw {
    pub fn new(joint: JointMass) -> Result<Self> {
        if !joint.left_alphabet().is_total() || !joint.right_alphabet().is_total() {
            return Err(Error::AlphabetMismatch("pair laws need totally ordered alphabets".into()));
        }
        let alpha = symbol_law(joint.marginal_left().masses());
        let beta = symbol_law(joint.marginal_right().masses());
        let x_given_y = (0..joint.right_alphabet().size())
            .map(|b| joint.conditional_left(b).ok().map(to_u32_law))
            .collect();
        let y_given_x = (0..joint.left_alphabet().size())
            .map(|a| joint.conditional_right(a).ok().map(to_u32_law))
            .collect();
        Ok(PairLaw { joint, alpha, beta, x_given_y, y_given_x })
    }

    /// Parses `"a,b:mass; …"`; alphabet sizes are one more than the largest
    /// symbol on each side.
    pub fn parse(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let bad = || Error::InvalidDistribution(format!("cannot read atom {item:?}"));
            let (cell, mass) = item.split_once(':').ok_or_else(bad)?;
            let (a, b) = cell.split_once(',').ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            atoms.push(((a, b), crate::rational::parse_rational(mass.trim())?));
        }
        let left = atoms.iter().map(|((a, _), _)| a + 1).max().unwrap_or(0);
        let right = atoms.iter().map(|((_, b), _)| b + 1).max().unwrap_or(0);
        PairLaw::new(JointMass::from_atoms(left, right, atoms)?)
    }

    pub fn joint(&self) -> &JointMass {
        &self.joint
    }

    pub fn left_size(&self) -> usize {
        self.joint.left_alphabet().size()
    }

    pub fn right_size(&self) -> usize {
        self.joint.right_alphabet().size()
    }

    /// Left marginal `α` as a positive-mass law on symbol codes.
    pub fn alpha(&self) -> &StepLaw<u32> {
        &self.alpha
    }

    pub fn beta(&self) -> &StepLaw<u32> {
        &self.beta
    }

    pub fn x_given_y(&self, b: u32) -> Result<&StepLaw<u32>> {
        self.x_given_y
            .get(b as usize)
            .and_then(|c| c.as_ref())
            .ok_or(Error::ZeroMassCondition(b as usize))
    }

    pub fn y_given_x(&self, a: u32) -> Result<&StepLaw<u32>> {
        self.y_given_x
            .get(a as usize)
            .and_then(|c| c.as_ref())
            .ok_or(Error::ZeroMassCondition(a as usize))
    }

    /// Single-letter word law.
    pub fn words(&self) -> WordPairLaw {
        WordPairLaw::from_joint(&self.joint)
    }

    pub fn is_deterministic(&self) -> bool {
        self.y_given_x.iter().flatten().all(|c| c.len() == 1)
    }
}

/// A law on `A^k × B^k` with the grouping property for a base law `ρ`.
/// `joint` is `None` for the product `ρ^k`, which is never enumerated
/// unless asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedPairLaw {
    base: PairLaw,
    group_size: usize,
    joint: Option<WordPairLaw>,
}

/// Word law of `k` independent pairs from `ρ`, words interleaved by side.
fn product_pairs(base: &PairLaw, k: usize, limit: u128) -> Result<WordPairLaw> {
    let size = (base.joint.atom_count() as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if size > limit {
        return Err(Error::SizeGuard { size, limit });
    }
    let mut atoms: Vec<((Word, Word), Rational)> = vec![((Vec::new(), Vec::new()), one())];
    for _ in 0..k {
        let mut next = Vec::with_capacity(atoms.len() * base.joint.atom_count());
        for ((x, y), m) in &atoms {
            for (a, b, mab) in base.joint.atoms() {
                let (mut x2, mut y2) = (x.clone(), y.clone());
                x2.push(a as u32);
                y2.push(b as u32);
                next.push(((x2, y2), m * mab));
            }
        }
        atoms = next;
    }
    WordPairLaw::new(atoms)
}

/// Exact check of the grouping property of a word-pair law.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingAudit {
    pub group_size: usize,
    pub left_is_product: bool,
    pub right_is_product: bool,
    /// One entry per copy of `A × B`.
    pub per_copy: Vec<bool>,
}

impl GroupingAudit {
    pub fn passed(&self) -> bool {
        self.left_is_product && self.right_is_product && self.per_copy.iter().all(|&b| b)
    }
}

/// Compares the side marginals with `α^k`, `β^k` and each coordinate pair
/// with `ρ`, exactly.
pub fn grouping_audit(joint: &WordPairLaw, base: &PairLaw) -> Result<GroupingAudit> {
    let k = joint.atoms().keys().next().map(|(x, _)| x.len()).unwrap_or(0);
    if joint.atoms().keys().any(|(x, y)| x.len() != k || y.len() != k) {
        return Err(Error::Parameter("grouped law has words of unequal length".into()));
    }
    let left_is_product = joint.left_marginal() == ProductLaw::power(base.alpha(), k).enumerate(u128::MAX)?;
    let right_is_product = joint.right_marginal() == ProductLaw::power(base.beta(), k).enumerate(u128::MAX)?;
    let per_copy = (0..k)
        .map(|c| {
            let mut m: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
            for ((x, y), p) in joint.atoms() {
                *m.entry((x[c] as usize, y[c] as usize)).or_insert_with(zero) += p;
            }
            let expected: BTreeMap<(usize, usize), Rational> =
                base.joint().atoms().map(|(a, b, p)| ((a, b), p.clone())).collect();
            m == expected
        })
        .collect();
    Ok(GroupingAudit { group_size: k, left_is_product, right_is_product, per_copy })
}

impl GroupedPairLaw {
    /// `ρ^k`, held in product form.
    pub fn product(base: &PairLaw, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter("group size must be positive".into()));
        }
        Ok(GroupedPairLaw { base: base.clone(), group_size: k, joint: None })
    }

    /// An explicit grouped law; the grouping property is checked exactly.
    pub fn new(base: &PairLaw, k: usize, joint: WordPairLaw) -> Result<Self> {
        let audit = grouping_audit(&joint, base)?;
        if audit.group_size != k || !audit.passed() {
            return Err(Error::InvalidDistribution(format!("law lacks the grouping property: {audit:?}")));
        }
        Ok(GroupedPairLaw { base: base.clone(), group_size: k, joint: Some(joint) })
    }

    pub fn base(&self) -> &PairLaw {
        &self.base
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn is_product(&self) -> bool {
        self.joint.is_none()
    }

    pub fn joint(&self, limit: u128) -> Result<WordPairLaw> {
        match &self.joint {
            Some(j) => Ok(j.clone()),
            None => product_pairs(&self.base, self.group_size, limit),
        }
    }

    pub fn right_marginal(&self) -> WordLaw {
        match &self.joint {
            Some(j) => WordLaw::Table(j.right_marginal()),
            None => WordLaw::Product(ProductLaw::power(self.base.beta(), self.group_size)),
        }
    }

    /// Conditional law of the left word given the right word `y`.
    pub fn left_conditional(&self, y: &Word) -> Result<WordLaw> {
        match &self.joint {
            Some(j) => Ok(WordLaw::Table(j.given_right(y)?)),
            None => Ok(WordLaw::Product(ProductLaw::new(
                y.iter().map(|&b| self.base.x_given_y(b).cloned()).collect::<Result<_>>()?,
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    StarCouple,
    Iterated { laws: usize },
    Replacement { k_init: usize, k_block: usize },
    IteratedReplacement { k_init: usize, k_block: usize, stages: usize },
}

/// Exact law of a construction's output, as a tuple of named word parts.
#[derive(Clone, Debug, PartialEq)]
pub struct StarLaw {
    pub law: TupleLaw,
    pub parts: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Serialize)]
pub struct StarLawRecord {
    pub parts: Vec<String>,
    pub provenance: Provenance,
    pub atoms: Vec<TupleRecord>,
}

impl StarLaw {
    pub fn part(&self, name: &str) -> Result<usize> {
        self.parts
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::Parameter(format!("no part {name:?} in {:?}", self.parts)))
    }

    pub fn to_record(&self) -> StarLawRecord {
        StarLawRecord { parts: self.parts.clone(), provenance: self.provenance.clone(), atoms: self.law.to_records() }
    }

    /// For replacement constructions, the law of the concatenated pair
    /// `(x_prev·x_new, y_prev·f·r)`.
    pub fn output_pair(&self) -> Result<WordPairLaw> {
        let idx: Vec<usize> =
            ["x_prev", "x_new", "y_prev", "f", "r"].iter().map(|n| self.part(n)).collect::<Result<_>>()?;
        WordPairLaw::new(self.law.atoms().iter().map(|(o, m)| {
            let x = [o[idx[0]].as_slice(), &o[idx[1]]].concat();
            let y = [o[idx[2]].as_slice(), &o[idx[3]], &o[idx[4]]].concat();
            ((x, y), m.clone())
        }))
    }
}

/// Cell-partition strategy for the shared randomization `U`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// Per `(Y₁′, X₂′)`, merge only the two conditional CDFs in use.
    Adaptive,
    /// One global grid from the union of every conditional break point.
    Global,
}

/// The ingredients of a plain star-coupling, with the construction as a
/// function of `(U₁, U₂, U)`.
#[derive(Clone, Debug)]
pub struct StarPieces {
    y1: StepLaw<Word>,
    x2: StepLaw<Word>,
    x1_given_y1: BTreeMap<Word, StepLaw<Word>>,
    y2_given_x2: BTreeMap<Word, StepLaw<Word>>,
}

impl StarPieces {
    pub fn new(z1: &WordPairLaw, z2: &WordPairLaw) -> Self {
        StarPieces {
            y1: z1.right_marginal(),
            x2: z2.left_marginal(),
            x1_given_y1: z1.left_conditionals(),
            y2_given_x2: z2.right_conditionals(),
        }
    }

    /// `(X₁′, Y₁′, X₂′, Y₂′)` for one randomization point.
    pub fn point(&self, u1: &Rational, u2: &Rational, u: &Rational) -> [Word; 4] {
        let y1 = self.y1.inverse(u1);
        let x2 = self.x2.inverse(u2);
        let x1 = self.x1_given_y1[&y1].inverse(u);
        let y2 = self.y2_given_x2[&x2].inverse(u);
        [x1, y1, x2, y2]
    }

    fn u_cells(&self, y1: &Word, x2: &Word, strategy: Partition, global: &[Rational]) -> Vec<(Rational, Rational)> {
        match strategy {
            Partition::Adaptive => merge_quantiles(&self.x1_given_y1[y1], &self.y2_given_x2[x2])
                .into_iter()
                .map(|c| {
                    let w = c.width();
                    (c.hi, w)
                })
                .collect(),
            Partition::Global => global.windows(2).map(|w| (w[1].clone(), &w[1] - &w[0])).collect(),
        }
    }

    /// Exact law: the point function evaluated at the right endpoint of every
    /// cell, on which all inverse CDFs are constant.
    pub fn exact(&self, strategy: Partition) -> Result<TupleLaw> {
        let global: Vec<Rational> = if strategy == Partition::Global {
            let set: BTreeSet<Rational> = self
                .x1_given_y1
                .values()
                .chain(self.y2_given_x2.values())
                .flat_map(|l| l.breakpoints())
                .collect();
            set.into_iter().collect()
        } else {
            Vec::new()
        };
        let mut atoms = Vec::new();
        for (i1, (_, m1)) in self.y1.atoms().iter().enumerate() {
            let u1 = &self.y1.cumulative()[i1];
            for (i2, (_, m2)) in self.x2.atoms().iter().enumerate() {
                let u2 = &self.x2.cumulative()[i2];
                let (y1, x2) = (self.y1.inverse(u1), self.x2.inverse(u2));
                for (u, w) in self.u_cells(&y1, &x2, strategy, &global) {
                    atoms.push((self.point(u1, u2, &u).to_vec(), m1 * m2 * w));
                }
            }
        }
        TupleLaw::new(4, atoms)
    }

    pub fn sample(&self, rng: &mut RngStream) -> [Word; 4] {
        let (u1, u2, u) = (rng.uniform_rational(), rng.uniform_rational(), rng.uniform_rational());
        self.point(&u1, &u2, &u)
    }
}

const STAR_PARTS: [&str; 4] = ["x1", "y1", "x2", "y2"];

/// Star-coupling of two word-pair laws; parts `x1, y1, x2, y2`.
pub fn star_couple_words(z1: &WordPairLaw, z2: &WordPairLaw, strategy: Partition) -> Result<StarLaw> {
    let law = StarPieces::new(z1, z2).exact(strategy)?;
    Ok(StarLaw { law, parts: STAR_PARTS.map(String::from).to_vec(), provenance: Provenance::StarCouple })
}

pub fn star_couple(z1: &PairLaw, z2: &PairLaw) -> Result<StarLaw> {
    star_couple_words(&z1.words(), &z2.words(), Partition::Adaptive)
}

/// Exact check that `X₂′ ⫫ (Y₁′, X₁′)` and `Y₁′ ⫫ (X₂′, Y₂′)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndependenceAudit {
    pub x2_independent_of_first_pair: bool,
    pub y1_independent_of_second_pair: bool,
}

impl IndependenceAudit {
    pub fn passed(&self) -> bool {
        self.x2_independent_of_first_pair && self.y1_independent_of_second_pair
    }
}

pub fn independence_audit(s: &StarLaw) -> Result<IndependenceAudit> {
    let [x1, y1, x2, y2] = STAR_PARTS.map(|n| s.part(n));
    let (x1, y1, x2, y2) = (x1?, y1?, x2?, y2?);
    Ok(IndependenceAudit {
        x2_independent_of_first_pair: s
            .law
            .independent(|o| o[x2].clone(), |o| (o[y1].clone(), o[x1].clone())),
        y1_independent_of_second_pair: s
            .law
            .independent(|o| o[y1].clone(), |o| (o[x2].clone(), o[y2].clone())),
    })
}

/// Exact checks of one plain star-coupling: both pair projections, the
/// independence statements and the fine-split bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarAudit {
    pub first_pair_exact: bool,
    pub second_pair_exact: bool,
    pub independence: IndependenceAudit,
    pub fine_split: FineSplitReport,
    pub pass: bool,
}

pub fn star_audit(z1: &PairLaw, z2: &PairLaw) -> Result<StarAudit> {
    let s = star_couple(z1, z2)?;
    let [x1, y1, x2, y2] = STAR_PARTS.map(|n| s.part(n));
    let (x1, y1, x2, y2) = (x1?, y1?, x2?, y2?);
    let first_pair_exact = s.law.pair_projection(x1, y1) == z1.words();
    let second_pair_exact = s.law.pair_projection(x2, y2) == z2.words();
    let independence = independence_audit(&s)?;
    let fine_split = fine_split_plain(&s, z2.right_size())?;
    let pass = first_pair_exact && second_pair_exact && independence.passed() && fine_split.pass;
    Ok(StarAudit { first_pair_exact, second_pair_exact, independence, fine_split, pass })
}

/// A random pair law on `[left] × [right]` whose masses are multiples of
/// `1/denominator`, with both marginals of full support.
pub fn random_pair_law(left: usize, right: usize, denominator: u32, rng: &mut RngStream) -> Result<PairLaw> {
    let cells = left * right;
    if left == 0 || right == 0 || (denominator as usize) < left.max(right) {
        return Err(Error::Parameter(format!(
            "cannot spread 1/{denominator} units over a {left}×{right} law with full marginals"
        )));
    }
    let mut units = vec![0u32; cells];
    // One unit per row and column first, then the rest uniformly.
    for k in 0..left.max(right) {
        units[(k % left) * right + k % right] += 1;
    }
    for _ in left.max(right)..denominator as usize {
        units[rng.below(cells)] += 1;
    }
    let atoms = units
        .iter()
        .enumerate()
        .map(|(c, &u)| ((c / right, c % right), Rational::new(u.into(), denominator.into())));
    PairLaw::new(JointMass::from_atoms(left, right, atoms.collect::<Vec<_>>())?)
}

/// Left-fold of the star-coupling over `laws`; the accumulated pair is
/// ordered lexicographically, earliest law most significant. Parts are
/// `x1, y1, x2, y2, …`.
pub fn iterated_star_couple(laws: &[PairLaw]) -> Result<StarLaw> {
    if laws.len() < 2 {
        return Err(Error::Parameter("iterated star-coupling needs at least two laws".into()));
    }
    let mut acc = laws[0].words();
    for z in &laws[1..] {
        let s = star_couple_words(&acc, &z.words(), Partition::Adaptive)?;
        acc = WordPairLaw::new(s.law.atoms().iter().map(|(o, m)| {
            (([o[0].as_slice(), &o[2]].concat(), [o[1].as_slice(), &o[3]].concat()), m.clone())
        }))?;
    }
    let n = laws.len();
    let law = TupleLaw::new(
        2 * n,
        acc.atoms().iter().map(|((x, y), m)| {
            ((0..n).flat_map(|c| [vec![x[c]], vec![y[c]]]).collect::<Vec<Word>>(), m.clone())
        }),
    )?;
    let parts = (1..=n).flat_map(|c| [format!("x{c}"), format!("y{c}")]).collect();
    Ok(StarLaw { law, parts, provenance: Provenance::Iterated { laws: n } })
}

/// The per-stage ingredients shared by every replacement construction over
/// one base law `ρ` and block size `k_block`.
#[derive(Clone, Debug)]
pub struct ReplacementStep {
    rho: PairLaw,
    k_block: usize,
    alpha_block: StepLaw<Word>,
}

impl ReplacementStep {
    pub fn new(rho: &PairLaw, k_block: usize) -> Result<Self> {
        if k_block < 2 {
            return Err(Error::Parameter(format!("k_block = {k_block} must be at least 2")));
        }
        let alpha_block = ProductLaw::power(rho.alpha(), k_block).enumerate(EXACT_STATE_LIMIT)?;
        Ok(ReplacementStep { rho: rho.clone(), k_block, alpha_block })
    }

    pub fn k_block(&self) -> usize {
        self.k_block
    }

    pub fn rho(&self) -> &PairLaw {
        &self.rho
    }

    /// Law of the destined coordinates `f` given the new block's left word:
    /// `⊗_{c < k_block − 1} ρ(· | x_c)`.
    pub fn destined_law(&self, x_new: &[u32]) -> Result<ProductLaw> {
        Ok(ProductLaw::new(
            x_new[..self.k_block - 1].iter().map(|&a| self.rho.y_given_x(a).cloned()).collect::<Result<_>>()?,
        ))
    }

    /// `(x_prev, x_new, y_prev, f, r)` for one randomization point, given the
    /// accumulated right marginal and left conditionals.
    pub fn point(
        &self,
        y_law: &WordLaw,
        conditional: impl FnOnce(&Word) -> Result<Rc<WordLaw>>,
        [u1, u2, u, urep]: [&Rational; 4],
    ) -> Result<[Word; 5]> {
        let y_prev = y_law.inverse(u1);
        let x_new = self.alpha_block.inverse(u2);
        let x_prev = conditional(&y_prev)?.inverse(u);
        let f = self.destined_law(&x_new)?.inverse(u);
        let last = *x_new.last().expect("block is nonempty");
        let r = vec![self.rho.y_given_x(last)?.inverse(urep)];
        Ok([x_prev, x_new, y_prev, f, r])
    }

    /// One exact stage: star-couple with replacement the accumulated pair law
    /// `acc` with a fresh `ρ^{k_block}`.
    pub fn exact_stage(&self, acc: &WordPairLaw) -> Result<TupleLaw> {
        let y_table = acc.right_marginal();
        let conds: BTreeMap<Word, Rc<WordLaw>> =
            acc.left_conditionals().into_iter().map(|(y, l)| (y, Rc::new(WordLaw::Table(l)))).collect();
        let y_law = WordLaw::Table(y_table.clone());
        let mut atoms = Vec::new();
        for (iy, (y_prev, my)) in y_table.atoms().iter().enumerate() {
            let u1 = &y_table.cumulative()[iy];
            let cond = &conds[y_prev];
            let WordLaw::Table(cond_table) = cond.as_ref() else { unreachable!() };
            for (ix, (x_new, mx)) in self.alpha_block.atoms().iter().enumerate() {
                let u2 = &self.alpha_block.cumulative()[ix];
                let f_table = self.destined_law(x_new)?.enumerate(EXACT_STATE_LIMIT)?;
                let r_law = self.rho.y_given_x(*x_new.last().expect("block is nonempty"))?;
                for cell in merge_quantiles(cond_table, &f_table) {
                    let wu = cell.width();
                    for (ir, (_, mr)) in r_law.atoms().iter().enumerate() {
                        let urep = &r_law.cumulative()[ir];
                        let out = self.point(&y_law, |_| Ok(cond.clone()), [u1, u2, &cell.hi, urep])?;
                        atoms.push((out.to_vec(), my * mx * &wu * mr));
                    }
                }
            }
        }
        TupleLaw::new(5, atoms)
    }
}

const REPLACEMENT_PARTS: [&str; 5] = ["x_prev", "x_new", "y_prev", "f", "r"];

fn concat_pair(stage: &TupleLaw) -> Result<WordPairLaw> {
    WordPairLaw::new(stage.atoms().iter().map(|(o, m)| {
        (([o[0].as_slice(), &o[1]].concat(), [o[2].as_slice(), &o[3], &o[4]].concat()), m.clone())
    }))
}

fn check_bases(z0: &GroupedPairLaw, z1: &GroupedPairLaw) -> Result<()> {
    if z0.base() != z1.base() {
        return Err(Error::Parameter("both grouped laws must share the base law".into()));
    }
    Ok(())
}

/// Star-coupling with replacement of `z0` (group size `k_init`) and `z1`
/// (group size `k_block`). `z1` enters only through `ρ` and `k_block`: it is
/// replaced by a fresh `W ~ ρ^{k_block}`. Parts `x_prev, x_new, y_prev, f, r`
/// where `f` are the regenerated-free coordinates of `W`'s right word and `r`
/// its regenerated last coordinate.
pub fn star_couple_with_replacement(z0: &GroupedPairLaw, z1: &GroupedPairLaw) -> Result<StarLaw> {
    check_bases(z0, z1)?;
    let step = ReplacementStep::new(z1.base(), z1.group_size())?;
    let (ki, kb) = (z0.group_size(), z1.group_size());
    guard_exact(z0.base(), ki + kb)?;
    let law = step.exact_stage(&z0.joint(EXACT_STATE_LIMIT)?)?;
    Ok(StarLaw {
        law,
        parts: REPLACEMENT_PARTS.map(String::from).to_vec(),
        provenance: Provenance::Replacement { k_init: ki, k_block: kb },
    })
}

fn guard_exact(rho: &PairLaw, len: usize) -> Result<()> {
    let cell = (rho.left_size() * rho.right_size()) as u128;
    let size = cell.checked_pow(len as u32).unwrap_or(u128::MAX);
    if size > EXACT_STATE_LIMIT {
        return Err(Error::SizeGuard { size, limit: EXACT_STATE_LIMIT });
    }
    Ok(())
}

/// Exact laws of every stage of the iterated star-coupling with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplacementChain {
    pub k_init: usize,
    pub k_block: usize,
    /// `stages[j]` is the law of `(X_j, Y_j)` on `A^{L_j} × B^{L_j}`;
    /// `stages[0]` is `z0`.
    pub stages: Vec<WordPairLaw>,
    /// Parts of the final stage (`None` when there are no stages after `z0`).
    pub last: Option<StarLaw>,
}

impl ReplacementChain {
    pub fn stage_count(&self) -> usize {
        self.stages.len() - 1
    }

    /// `L_j = k_init + k_block·j`.
    pub fn length(&self, j: usize) -> usize {
        self.k_init + self.k_block * j
    }
}

/// Right-word layout of stage `j`: `y₀ (k_init)` then, per stage, the
/// destined coordinates `f` (`k_block − 1`) and one regenerated coordinate.
pub fn destined_coordinates(y: &[u32], k_init: usize, k_block: usize) -> Word {
    let j = (y.len() - k_init) / k_block;
    (0..j)
        .flat_map(|s| {
            let start = k_init + s * k_block;
            y[start..start + k_block - 1].iter().copied()
        })
        .collect()
}

/// Undetermined coordinates `(y₀, r₁, …, r_j)` of a stage-`j` right word.
pub fn undetermined_coordinates(y: &[u32], k_init: usize, k_block: usize) -> Word {
    let j = (y.len() - k_init) / k_block;
    let mut out = y[..k_init].to_vec();
    out.extend((1..=j).map(|s| y[k_init + s * k_block - 1]));
    out
}

/// Exact iterated star-coupling with replacement of `z0, z1, …, z_n`.
/// Guarded by `|A × B|^{L_n} ≤ 10⁶`.
pub fn iterated_star_with_replacement(z0: &GroupedPairLaw, blocks: &[GroupedPairLaw]) -> Result<ReplacementChain> {
    let k_block = match blocks.first() {
        Some(b) => b.group_size(),
        None => 0,
    };
    for b in blocks {
        check_bases(z0, b)?;
        if b.group_size() != k_block {
            return Err(Error::Parameter("all block laws must share k_block".into()));
        }
    }
    let k_init = z0.group_size();
    let mut stages = vec![z0.joint(EXACT_STATE_LIMIT)?];
    let mut last = None;
    if !blocks.is_empty() {
        guard_exact(z0.base(), k_init + blocks.len() * k_block)?;
        let step = ReplacementStep::new(z0.base(), k_block)?;
        for j in 1..=blocks.len() {
            let law = step.exact_stage(&stages[j - 1])?;
            stages.push(concat_pair(&law)?);
            last = Some(StarLaw {
                law,
                parts: REPLACEMENT_PARTS.map(String::from).to_vec(),
                provenance: Provenance::IteratedReplacement { k_init, k_block, stages: j },
            });
        }
    }
    Ok(ReplacementChain { k_init, k_block, stages, last })
}

/// Sampler for the iterated star-coupling with replacement at any size.
///
/// Stage `j`'s right marginal is `β^{L_j}` and its left conditional given
/// `y = (y_prev, f, r)` is, up to normalization,
/// `α^{k_block}(x_new) · |I_{y_prev}(x_prev) ∩ J_{x_new}(f)| · ρ(r | x_new_last)`,
/// where `I` is the quantile cell of `x_prev` under stage `j − 1`'s
/// conditional and `J` the cell of `f` under the destined law. Conditionals
/// are built on demand by this recursion and memoized.
#[derive(Clone, Debug)]
pub struct ReplacementSampler {
    z0: GroupedPairLaw,
    step: ReplacementStep,
    stages: usize,
    memo: HashMap<Word, Rc<WordLaw>>,
}

const MEMO_CAP: usize = 200_000;

impl ReplacementSampler {
    pub fn new(z0: &GroupedPairLaw, k_block: usize, stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Parameter("the sampler needs at least one stage".into()));
        }
        Ok(ReplacementSampler {
            z0: z0.clone(),
            step: ReplacementStep::new(z0.base(), k_block)?,
            stages,
            memo: HashMap::new(),
        })
    }

    pub fn k_init(&self) -> usize {
        self.z0.group_size()
    }

    pub fn k_block(&self) -> usize {
        self.step.k_block
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Left conditional of the accumulated law whose right word is `y`.
    pub fn conditional(&mut self, y: &Word) -> Result<Rc<WordLaw>> {
        if let Some(c) = self.memo.get(y) {
            return Ok(c.clone());
        }
        let ki = self.z0.group_size();
        let kb = self.step.k_block;
        let law = if y.len() == ki {
            Rc::new(self.z0.left_conditional(y)?)
        } else {
            let split = y.len() - kb;
            let (y_prev, tail) = y.split_at(split);
            let (f, r) = tail.split_at(kb - 1);
            let prev = self.conditional(&y_prev.to_vec())?;
            let mut atoms: Vec<(Word, Rational)> = Vec::new();
            for (x_new, mx) in self.step.alpha_block.atoms() {
                let wr = self.step.rho.y_given_x(*x_new.last().expect("block is nonempty"))?.mass_of(&r[0]);
                if wr == zero() {
                    continue;
                }
                let Some((lo, w)) = self.step.destined_law(x_new)?.locate(f) else { continue };
                for (x_prev, overlap) in prev.overlaps(&lo, &w, SAMPLER_TABLE_LIMIT)? {
                    atoms.push(([x_prev.as_slice(), x_new].concat(), mx * overlap * &wr));
                }
                if atoms.len() as u128 > SAMPLER_TABLE_LIMIT {
                    return Err(Error::SizeGuard { size: atoms.len() as u128, limit: SAMPLER_TABLE_LIMIT });
                }
            }
            Rc::new(WordLaw::Table(StepLaw::normalized(atoms)?))
        };
        if self.memo.len() >= MEMO_CAP {
            self.memo.clear();
        }
        self.memo.insert(y.clone(), law.clone());
        Ok(law)
    }

    /// One draw of `(x_prev, x_new, y_prev, f, r)` from the final stage.
    pub fn sample_parts(&mut self, rng: &mut RngStream) -> Result<[Word; 5]> {
        let prev_len = self.k_init() + self.k_block() * (self.stages - 1);
        let y_law = WordLaw::Product(ProductLaw::power(self.z0.base().beta(), prev_len));
        let us = [rng.uniform_rational(), rng.uniform_rational(), rng.uniform_rational(), rng.uniform_rational()];
        let step = self.step.clone();
        step.point(&y_law, |y| self.conditional(y), [&us[0], &us[1], &us[2], &us[3]])
    }

    /// One draw of the output pair `(X, Y)` on `A^{L_n} × B^{L_n}`.
    pub fn sample(&mut self, rng: &mut RngStream) -> Result<(Word, Word)> {
        let [x_prev, x_new, y_prev, f, r] = self.sample_parts(rng)?;
        Ok(([x_prev, x_new].concat(), [y_prev, f, r].concat()))
    }
}

/// Fine-split audit result: the largest number of split elements over all
/// conditioning values, against the bound the construction guarantees.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineSplitReport {
    pub max_split: usize,
    pub bound: usize,
    pub pass: bool,
    /// Split counts per conditioning value, keyed by its text form.
    pub per_condition: BTreeMap<String, usize>,
}

fn word_text(w: &[u32]) -> String {
    w.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("")
}

fn split_counts<K: Ord + Clone, A: Ord + Clone, B: Ord + Clone>(
    items: impl Iterator<Item = (K, A, B)>,
) -> BTreeMap<K, usize> {
    let mut partners: BTreeMap<K, BTreeMap<A, BTreeSet<B>>> = BTreeMap::new();
    for (k, a, b) in items {
        partners.entry(k).or_default().entry(a).or_default().insert(b);
    }
    partners.into_iter().map(|(k, m)| (k, m.values().filter(|s| s.len() >= 2).count())).collect()
}

/// For a plain star-coupling: for each `(a₂, b₁)`, the number of `a₁` with
/// two or more `b₂`. Bounded by `|B₂| − 1`.
pub fn fine_split_plain(s: &StarLaw, right_size: usize) -> Result<FineSplitReport> {
    let (x1, y1, x2, y2) = (s.part("x1")?, s.part("y1")?, s.part("x2")?, s.part("y2")?);
    let counts = split_counts(
        s.law.atoms().keys().map(|o| ((o[x2].clone(), o[y1].clone()), o[x1].clone(), o[y2].clone())),
    );
    let per_condition: BTreeMap<String, usize> =
        counts.into_iter().map(|((a, b), n)| (format!("{}|{}", word_text(&a), word_text(&b)), n)).collect();
    let max_split = per_condition.values().copied().max().unwrap_or(0);
    let bound = right_size.saturating_sub(1);
    Ok(FineSplitReport { max_split, bound, pass: max_split <= bound, per_condition })
}

/// For a replacement stage: for each `(x_new, y_prev)`, the number of
/// `x_prev` paired with two or more destined words `f` (the regenerated
/// coordinate is ignored). Bounded by `|B|^{k_block − 1} − 1`.
pub fn fine_split_replacement(s: &StarLaw, right_size: usize, k_block: usize) -> Result<FineSplitReport> {
    let (xp, xn, yp, f) = (s.part("x_prev")?, s.part("x_new")?, s.part("y_prev")?, s.part("f")?);
    let counts = split_counts(
        s.law.atoms().keys().map(|o| ((o[xn].clone(), o[yp].clone()), o[xp].clone(), o[f].clone())),
    );
    let per_condition: BTreeMap<String, usize> =
        counts.into_iter().map(|((a, b), n)| (format!("{}|{}", word_text(&a), word_text(&b)), n)).collect();
    let max_split = per_condition.values().copied().max().unwrap_or(0);
    let bound = right_size.pow((k_block - 1) as u32).saturating_sub(1);
    Ok(FineSplitReport { max_split, bound, pass: max_split <= bound, per_condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{FiniteDistribution, JointMass};
    use crate::rational::rat;

    fn pair(size: (usize, usize), atoms: &[((usize, usize), (i64, i64))]) -> PairLaw {
        PairLaw::new(JointMass::from_atoms(size.0, size.1, atoms.iter().map(|&(k, (n, d))| (k, rat(n, d)))).unwrap())
            .unwrap()
    }

    fn diag_uniform() -> PairLaw {
        pair((2, 2), &[((0, 0), (1, 2)), ((1, 1), (1, 2))])
    }

    fn product_uniform() -> PairLaw {
        let u = FiniteDistribution::uniform(2).unwrap();
        PairLaw::new(JointMass::product(&u, &u).unwrap()).unwrap()
    }

    fn skewed() -> PairLaw {
        pair((2, 2), &[((0, 0), (1, 4)), ((1, 0), (1, 2)), ((1, 1), (1, 4))])
    }

    #[test]
    fn diagonal_inputs_give_perfect_pairs() {
        let s = star_couple(&diag_uniform(), &diag_uniform()).unwrap();
        assert!(s.law.atoms().keys().all(|o| o[0] == o[1] && o[2] == o[3]));
        assert!(s.law.independent(|o| o[0].clone(), |o| o[2].clone()));
    }

    #[test]
    fn product_inputs_share_the_quantile() {
        let s = star_couple(&product_uniform(), &product_uniform()).unwrap();
        assert!(s.law.atoms().keys().all(|o| o[0] == o[3]));
        assert!(independence_audit(&s).unwrap().passed());
    }

    #[test]
    fn partitions_agree() {
        let (a, b) = (skewed().words(), pair((3, 2), &[((0, 0), (1, 6)), ((1, 1), (1, 3)), ((2, 0), (1, 6)), ((2, 1), (1, 3))]).words());
        assert_eq!(
            star_couple_words(&a, &b, Partition::Adaptive).unwrap(),
            star_couple_words(&a, &b, Partition::Global).unwrap()
        );
    }

    #[test]
    fn replacement_marginals_small() {
        let rho = skewed();
        let z0 = GroupedPairLaw::product(&rho, 1).unwrap();
        let z1 = GroupedPairLaw::product(&rho, 2).unwrap();
        let s = star_couple_with_replacement(&z0, &z1).unwrap();
        let out = s.output_pair().unwrap();
        assert!(grouping_audit(&out, &rho).unwrap().passed());
        // Regenerated coordinate independent of the destined ones.
        let (f, r) = (s.part("f").unwrap(), s.part("r").unwrap());
        assert!(s.law.independent(|o| o[f].clone(), |o| o[r].clone()));
        assert!(fine_split_replacement(&s, 2, 2).unwrap().pass);
    }

    #[test]
    fn chain_stages_keep_grouping() {
        let rho = skewed();
        let z0 = GroupedPairLaw::product(&rho, 1).unwrap();
        let z1 = GroupedPairLaw::product(&rho, 2).unwrap();
        let chain = iterated_star_with_replacement(&z0, &[z1.clone(), z1]).unwrap();
        assert_eq!(chain.stages.len(), 3);
        for (j, st) in chain.stages.iter().enumerate() {
            let audit = grouping_audit(st, &rho).unwrap();
            assert_eq!(audit.group_size, chain.length(j));
            assert!(audit.passed(), "stage {j}: {audit:?}");
        }
    }

    #[test]
    fn sampler_conditional_matches_exact_conditionals() {
        let rho = skewed();
        let z0 = GroupedPairLaw::product(&rho, 1).unwrap();
        let z1 = GroupedPairLaw::product(&rho, 2).unwrap();
        let chain = iterated_star_with_replacement(&z0, &[z1.clone(), z1]).unwrap();
        let mut sampler = ReplacementSampler::new(&z0, 2, 2).unwrap();
        for (y, cond) in chain.stages[2].left_conditionals() {
            let rec = sampler.conditional(&y).unwrap().to_table(1000).unwrap();
            assert_eq!(rec, cond, "y = {y:?}");
        }
    }

    #[test]
    fn coordinate_views_partition_the_word() {
        let y: Word = vec![9, 1, 2, 3, 4, 5, 6];
        assert_eq!(destined_coordinates(&y, 1, 3), vec![1, 2, 4, 5]);
        assert_eq!(undetermined_coordinates(&y, 1, 3), vec![9, 3, 6]);
    }

    #[test]
    fn deterministic_rho_has_no_fine_splits() {
        let rho = diag_uniform();
        let z0 = GroupedPairLaw::product(&rho, 2).unwrap();
        let z1 = GroupedPairLaw::product(&rho, 2).unwrap();
        let s = star_couple_with_replacement(&z0, &z1).unwrap();
        assert_eq!(fine_split_replacement(&s, 2, 2).unwrap().max_split, 0);
    }

    #[test]
    fn random_laws_pass_the_audit() {
        let mut rng = RngStream::new(11, 0);
        for k in 0..20 {
            let (a, b) = (1 + k % 3, 1 + (k / 3) % 3);
            let z1 = random_pair_law(a, b, 12, &mut rng).unwrap();
            let z2 = random_pair_law(b, a, 12, &mut rng).unwrap();
            assert!(z1.alpha().len() == a && z1.beta().len() == b);
            let audit = star_audit(&z1, &z2).unwrap();
            assert!(audit.pass, "{audit:?}");
        }
    }

    #[test]
    fn parse_pair_law() {
        let rho = PairLaw::parse("0,0:1/4; 1,0:1/2; 1,1:1/4").unwrap();
        assert_eq!((rho.left_size(), rho.right_size()), (2, 2));
        assert_eq!(rho.joint().mass(1, 0), rat(1, 2));
        assert!(PairLaw::parse("0,0:1/2").is_err());
        assert!(PairLaw::parse("0;0:1").is_err());
    }
}
