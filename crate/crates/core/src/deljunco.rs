//! Goodness, desirability and the decoder `Ψ` for iterated star-couplings
//! with replacement, with exact checks of the bound on non-desirable mass
//! and a parameter search for `k_init`.
//!
//! For stage `j` the left word lies in `I_j = A^{L_j}` and the right word in
//! `J_j = B^{L_j}` with `L_j = k_init + k_block·j`. The destined part `ȳ` of a
//! right word has `L̄_j = (k_block − 1)·j` coordinates; two right words are
//! equivalent when their destined parts agree.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::entropy;
use crate::error::{Error, Result};
use crate::law::{Word, WordPairLaw};
use crate::rational::{self, one, zero, Rational};
use crate::reductions::ENTROPY_TOLERANCE;
use crate::rng::RngStream;
use crate::star::{destined_coordinates, PairLaw, ReplacementChain, ReplacementSampler};

/// `ε = h / (2(3·k_block − 1))`, half the supremum of the admissible range.
pub fn choose_epsilon(h: f64, k_block: usize) -> Result<f64> {
    if h <= 0.0 || k_block < 2 {
        return Err(Error::Parameter(format!("need h > 0 and k_block ≥ 2, got {h}, {k_block}")));
    }
    let eps = h / (2.0 * (3.0 * k_block as f64 - 1.0));
    debug_assert!(epsilon_admissible(h, eps, k_block));
    Ok(eps)
}

/// `h − 2ε > (1 − 1/k_block)(h + ε)`.
pub fn epsilon_admissible(h: f64, eps: f64, k_block: usize) -> bool {
    eps > 0.0 && h - 2.0 * eps > (1.0 - 1.0 / k_block as f64) * (h + eps)
}

fn ln_masses(law: &crate::dist::StepLaw<u32>, size: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; size];
    for (s, m) in law.atoms() {
        out[*s as usize] = rational::ln(m);
    }
    out
}

/// Parameters of the goodness predicates for one base law.
#[derive(Clone, Debug)]
pub struct GoodnessContext {
    rho: PairLaw,
    pub h: f64,
    pub eps: f64,
    pub k_init: usize,
    pub k_block: usize,
    ln_alpha: Vec<f64>,
    ln_beta: Vec<f64>,
}

impl GoodnessContext {
    /// Uses [`choose_epsilon`] unless `eps` is given.
    pub fn new(rho: &PairLaw, k_init: usize, k_block: usize, eps: Option<f64>) -> Result<Self> {
        let (ha, hb) = (entropy(&rho.joint().marginal_left()), entropy(&rho.joint().marginal_right()));
        if (ha - hb).abs() > ENTROPY_TOLERANCE {
            return Err(Error::Parameter(format!("marginal entropies differ: {ha} vs {hb}")));
        }
        if k_init == 0 {
            return Err(Error::Parameter("k_init must be positive".into()));
        }
        let eps = match eps {
            Some(e) => e,
            None => choose_epsilon(ha, k_block)?,
        };
        if !epsilon_admissible(ha, eps, k_block) {
            return Err(Error::Parameter(format!("ε = {eps} violates h − 2ε > (1 − 1/k_block)(h + ε)")));
        }
        Ok(GoodnessContext {
            rho: rho.clone(),
            h: ha,
            eps,
            k_init,
            k_block,
            ln_alpha: ln_masses(rho.alpha(), rho.left_size()),
            ln_beta: ln_masses(rho.beta(), rho.right_size()),
        })
    }

    pub fn rho(&self) -> &PairLaw {
        &self.rho
    }

    /// `L_j = k_init + k_block·j`.
    pub fn length(&self, j: usize) -> usize {
        self.k_init + self.k_block * j
    }

    /// `L̄_j = (k_block − 1)·j`.
    pub fn destined_length(&self, j: usize) -> usize {
        (self.k_block - 1) * j
    }

    /// Stage index of a word of length `L_j`.
    pub fn stage_of(&self, len: usize) -> Result<usize> {
        if len < self.k_init || !(len - self.k_init).is_multiple_of(self.k_block) {
            return Err(Error::Parameter(format!("length {len} is not k_init + k_block·j")));
        }
        Ok((len - self.k_init) / self.k_block)
    }

    fn ln_alpha_mass(&self, x: &[u32]) -> f64 {
        x.iter().map(|&a| self.ln_alpha[a as usize]).sum()
    }

    fn ln_beta_mass(&self, y: &[u32]) -> f64 {
        y.iter().map(|&b| self.ln_beta[b as usize]).sum()
    }

    /// `α^{L_j}(x) < e^{−(h−ε)L_j}`.
    pub fn alpha_good(&self, x: &[u32]) -> Result<bool> {
        let l = x.len();
        self.stage_of(l)?;
        Ok(self.ln_alpha_mass(x) < -(self.h - self.eps) * l as f64)
    }

    /// Good at every prefix `x_0 … x_i`, `0 ≤ i ≤ j`.
    pub fn completely_alpha_good(&self, x: &[u32]) -> Result<bool> {
        let j = self.stage_of(x.len())?;
        for i in 0..=j {
            if !self.alpha_good(&x[..self.length(i)])? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `β^{L̄_j}(ȳ) > e^{−(h−2ε)L_j}` on the destined coordinates; every
    /// stage-0 word is good.
    pub fn beta_good(&self, y: &[u32]) -> Result<bool> {
        let j = self.stage_of(y.len())?;
        if j == 0 {
            return Ok(true);
        }
        let bar = destined_coordinates(y, self.k_init, self.k_block);
        Ok(self.ln_beta_mass(&bar) > -(self.h - 2.0 * self.eps) * self.length(j) as f64)
    }

    pub fn completely_beta_good(&self, y: &[u32]) -> Result<bool> {
        let j = self.stage_of(y.len())?;
        for i in 0..=j {
            if !self.beta_good(&y[..self.length(i)])? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn destined(&self, y: &[u32]) -> Word {
        destined_coordinates(y, self.k_init, self.k_block)
    }
}

/// Whether the law gives positive mass to `x` with two inequivalent right words.
pub fn finely_splits(law: &WordPairLaw, x: &Word, ctx: &GoodnessContext) -> bool {
    partner_classes(law, x, ctx).len() >= 2
}

fn partner_classes(law: &WordPairLaw, x: &Word, ctx: &GoodnessContext) -> BTreeSet<Word> {
    law.atoms()
        .range((x.clone(), Vec::new())..)
        .take_while(|((xx, _), _)| xx == x)
        .map(|((_, y), _)| ctx.destined(y))
        .collect()
}

/// Classification of one left word of a stage law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XClass {
    pub x: Word,
    #[serde(with = "rational::serde_rational")]
    pub mass: Rational,
    pub completely_good: bool,
    pub finely_split: bool,
    /// Destined parts of completely β-good partners.
    pub good_classes: Vec<Word>,
    pub desirable: bool,
}

impl XClass {
    /// `Ψ(x)` when desirable.
    pub fn psi(&self) -> Option<&Word> {
        self.desirable.then(|| &self.good_classes[0])
    }
}

/// Every positive-mass left word of `law`, classified.
pub fn classify(law: &WordPairLaw, ctx: &GoodnessContext) -> Result<Vec<XClass>> {
    let mut rows: BTreeMap<Word, (Rational, Vec<Word>)> = BTreeMap::new();
    for ((x, y), m) in law.atoms() {
        let row = rows.entry(x.clone()).or_insert_with(|| (zero(), Vec::new()));
        row.0 += m;
        row.1.push(y.clone());
    }
    rows.into_par_iter()
        .map(|(x, (mass, ys))| {
            let completely_good = ctx.completely_alpha_good(&x)?;
            let classes: BTreeSet<Word> = ys.iter().map(|y| ctx.destined(y)).collect();
            let mut good = BTreeSet::new();
            for y in &ys {
                if ctx.completely_beta_good(y)? {
                    good.insert(ctx.destined(y));
                }
            }
            let finely_split = classes.len() >= 2;
            let good_classes: Vec<Word> = good.into_iter().collect();
            let desirable = completely_good && !finely_split && good_classes.len() == 1;
            Ok(XClass { x, mass, completely_good, finely_split, good_classes, desirable })
        })
        .collect()
}

pub fn desirable(x: &Word, law: &WordPairLaw, ctx: &GoodnessContext) -> Result<bool> {
    if !ctx.completely_alpha_good(x)? || finely_splits(law, x, ctx) {
        return Ok(false);
    }
    let mut good = BTreeSet::new();
    for ((_, y), _) in law.atoms().range((x.clone(), Vec::new())..).take_while(|((xx, _), _)| xx == x) {
        if ctx.completely_beta_good(y)? {
            good.insert(ctx.destined(y));
        }
    }
    Ok(good.len() == 1)
}

/// Text form of a word: digits when every symbol is below 10, otherwise
/// dot-separated numbers.
pub fn word_text(w: &[u32]) -> String {
    if w.iter().all(|&d| d < 10) {
        w.iter().map(|d| char::from(b'0' + *d as u8)).collect()
    } else {
        w.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(".")
    }
}

pub fn parse_word(text: &str) -> Result<Word> {
    if text.contains('.') {
        text.split('.').map(|t| t.parse::<u32>().map_err(|_| Error::Parameter(format!("bad word {text:?}")))).collect()
    } else {
        text.chars()
            .map(|c| c.to_digit(10).ok_or_else(|| Error::Parameter(format!("bad word {text:?}"))))
            .collect()
    }
}

/// The decoder `Ψ: I_n → J̄_n`: the unique completely good class on
/// desirable words, a fixed default elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsiTable {
    pub k_init: usize,
    pub k_block: usize,
    pub stage: usize,
    /// Lexicographically smallest element of `J̄_n`.
    pub default: String,
    pub table: BTreeMap<String, String>,
}

impl PsiTable {
    pub fn lookup(&self, x: &[u32]) -> Result<Word> {
        parse_word(self.table.get(&word_text(x)).unwrap_or(&self.default))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("psi tables serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parameter(format!("bad psi table: {e}")))
    }
}

pub fn build_psi(law: &WordPairLaw, ctx: &GoodnessContext) -> Result<PsiTable> {
    let len = law.atoms().keys().next().map(|(x, _)| x.len()).unwrap_or(ctx.k_init);
    let stage = ctx.stage_of(len)?;
    let min_symbol = ctx.rho.beta().atoms().first().map(|(b, _)| *b).unwrap_or(0);
    let default = word_text(&vec![min_symbol; ctx.destined_length(stage)]);
    let table = classify(law, ctx)?
        .into_iter()
        .filter_map(|c| c.psi().map(|p| (word_text(&c.x), word_text(p))))
        .collect();
    Ok(PsiTable { k_init: ctx.k_init, k_block: ctx.k_block, stage, default, table })
}

/// `P(Ȳ_n = Ψ(X_n))`, exactly.
pub fn success_probability(psi: &PsiTable, law: &WordPairLaw) -> Result<Rational> {
    let mut total = zero();
    for ((x, y), m) in law.atoms() {
        if destined_coordinates(y, psi.k_init, psi.k_block) == psi.lookup(x)? {
            total += m;
        }
    }
    Ok(total)
}

/// Empirical success rate over sampler draws, with its standard error.
pub fn sampled_success(
    psi: &PsiTable,
    sampler: &mut ReplacementSampler,
    draws: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    let mut hits = 0usize;
    for _ in 0..draws {
        let (x, y) = sampler.sample(rng)?;
        if destined_coordinates(&y, psi.k_init, psi.k_block) == psi.lookup(&x)? {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

/// Both sides of the bound on the non-desirable mass at stage `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresmbBound {
    pub j: usize,
    #[serde(with = "rational::serde_rational")]
    pub not_desirable: Rational,
    #[serde(with = "rational::serde_rational")]
    pub x_not_completely_good: Rational,
    #[serde(with = "rational::serde_rational")]
    pub y_not_completely_good: Rational,
    /// `|B|^{k_block} Σ_{i<j} e^{−ε L_i}`.
    pub pile: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// Largest `P(E₂ | X = x, Ȳ_{j−1} = ȳ)` over completely good `ȳ`, and
    /// its bound `|B|^{k_block} e^{−ε L_{j−1}}`.
    pub e2_max_conditional: f64,
    pub e2_bound: f64,
    pub e2_pass: bool,
}

fn mass_where(law: &WordPairLaw, pred: impl Fn(&Word, &Word) -> Result<bool>) -> Result<Rational> {
    let mut total = zero();
    for ((x, y), m) in law.atoms() {
        if pred(x, y)? {
            total += m;
        }
    }
    Ok(total)
}

pub fn presmb_bound(chain: &ReplacementChain, ctx: &GoodnessContext, j: usize) -> Result<PresmbBound> {
    let law = chain
        .stages
        .get(j)
        .ok_or_else(|| Error::Parameter(format!("stage {j} not computed; chain has {}", chain.stage_count())))?;
    if chain.k_init != ctx.k_init || (j > 0 && chain.k_block != ctx.k_block) {
        return Err(Error::Parameter("chain and context disagree on block sizes".into()));
    }
    let classes = classify(law, ctx)?;
    let not_desirable: Rational = classes.iter().filter(|c| !c.desirable).map(|c| c.mass.clone()).sum();
    let x_not_cg: Rational = classes.iter().filter(|c| !c.completely_good).map(|c| c.mass.clone()).sum();
    let y_not_cg = mass_where(law, |_, y| Ok(!ctx.completely_beta_good(y)?))?;
    let b_block = (ctx.rho.right_size() as f64).powi(ctx.k_block as i32);
    let pile = b_block * (0..j).map(|i| (-ctx.eps * ctx.length(i) as f64).exp()).sum::<f64>();
    let slack = &not_desirable - &x_not_cg - &y_not_cg;
    let pass = if j == 0 { slack <= zero() } else { rational::to_f64(&slack) <= pile };
    let (e2_max_conditional, e2_bound) = if j == 0 { (0.0, 0.0) } else { e2_audit(chain, ctx, j)? };
    Ok(PresmbBound {
        j,
        lhs: rational::to_f64(&not_desirable),
        rhs: rational::to_f64(&x_not_cg) + rational::to_f64(&y_not_cg) + pile,
        not_desirable,
        x_not_completely_good: x_not_cg,
        y_not_completely_good: y_not_cg,
        pile,
        pass,
        e2_max_conditional,
        e2_bound,
        e2_pass: e2_max_conditional <= e2_bound,
    })
}

/// Per `(x_new, ȳ_{j−1})` with `ȳ` completely good, the conditional mass of
/// `X_j` completely good and finely split while `X_{j−1}` is desirable.
fn e2_audit(chain: &ReplacementChain, ctx: &GoodnessContext, j: usize) -> Result<(f64, f64)> {
    let prev_len = ctx.length(j - 1);
    let prev: BTreeMap<Word, bool> =
        classify(&chain.stages[j - 1], ctx)?.into_iter().map(|c| (c.x, c.desirable)).collect();
    let cur: BTreeMap<Word, (bool, bool)> =
        classify(&chain.stages[j], ctx)?.into_iter().map(|c| (c.x, (c.completely_good, c.finely_split))).collect();
    let mut cond: BTreeMap<(Word, Word), (Rational, Rational)> = BTreeMap::new();
    for ((x, y), m) in chain.stages[j].atoms() {
        let y_prev = &y[..prev_len];
        if !ctx.completely_beta_good(y_prev)? {
            continue;
        }
        let key = (x[prev_len..].to_vec(), ctx.destined(y_prev));
        let entry = cond.entry(key).or_insert_with(|| (zero(), zero()));
        entry.0 += m;
        let (cg, split) = cur[x];
        if cg && split && prev.get(&x[..prev_len]).copied().unwrap_or(false) {
            entry.1 += m;
        }
    }
    let max = cond
        .values()
        .map(|(total, e2)| rational::to_f64(&(e2 / total)))
        .fold(0.0, f64::max);
    let bound = (ctx.rho.right_size() as f64).powi(ctx.k_block as i32) * (-ctx.eps * prev_len as f64).exp();
    Ok((max, bound))
}

/// Largest `P(X_{j−1} = x̄ | X = x, Ȳ_{j−1} = ȳ)` over α-good `x̄` and
/// β-good `ȳ`, with the bound `e^{−ε L_{j−1}}`.
pub fn division_check(chain: &ReplacementChain, ctx: &GoodnessContext, j: usize) -> Result<(f64, f64)> {
    if j == 0 || j >= chain.stages.len() {
        return Err(Error::Parameter(format!("division check needs 1 ≤ j ≤ {}", chain.stage_count())));
    }
    let prev_len = ctx.length(j - 1);
    let mut joint: BTreeMap<(Word, Word, Word), Rational> = BTreeMap::new();
    let mut cond: BTreeMap<(Word, Word), Rational> = BTreeMap::new();
    for ((x, y), m) in chain.stages[j].atoms() {
        let bar = ctx.destined(&y[..prev_len]);
        let (xp, xn) = (x[..prev_len].to_vec(), x[prev_len..].to_vec());
        *joint.entry((xp, xn.clone(), bar.clone())).or_insert_with(zero) += m;
        *cond.entry((xn, bar)).or_insert_with(zero) += m;
    }
    let mut max: f64 = 0.0;
    for ((xp, xn, bar), m) in &joint {
        if !ctx.alpha_good(xp)? {
            continue;
        }
        // ȳ good at stage j − 1; any completion has the same destined part.
        let good_bar = j - 1 == 0
            || ctx.ln_beta_mass(bar) > -(ctx.h - 2.0 * ctx.eps) * prev_len as f64;
        if !good_bar {
            continue;
        }
        max = max.max(rational::to_f64(&(m / &cond[&(xn.clone(), bar.clone())])));
    }
    Ok((max, (-ctx.eps * prev_len as f64).exp()))
}

/// How a typical-set probability was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SmbMethod {
    /// Dynamic programming over multinomial counts (at most three distinct masses).
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
    /// No enumeration; the Hoeffding tail alone certifies the level.
    TailOnly,
}

/// Settings for the `κ`, `k_init` search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KInitialConfig {
    /// Walk horizon for the exact or Monte Carlo part.
    pub k_max: usize,
    /// Upper limit of the search.
    pub cap: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for KInitialConfig {
    fn default() -> Self {
        KInitialConfig { k_max: 400, cap: 1 << 40, trials: 20_000, seed: 0 }
    }
}

/// Outcome of [`choose_k_initial`]. `k_init` is the largest of the three
/// per-condition minima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KInitialChoice {
    pub h: f64,
    pub eps: f64,
    pub eta: f64,
    pub kappa: usize,
    pub k_init: usize,
    pub k_smb_top: usize,
    pub k_min: usize,
    pub k_pile: usize,
    pub binding: String,
    pub bottom_method: SmbMethod,
    pub top_method: SmbMethod,
    /// Lower bounds on `β^K(S_B(κ, K))` and `α^K(S_A(k_init, K))` over all `K`.
    pub bottom_probability: f64,
    pub top_probability: f64,
    pub k_max: usize,
}

/// Random walk `S_ℓ = Σ steps`, with the step distribution given by
/// `(value, probability)` pairs.
#[derive(Clone, Debug)]
struct Walk {
    steps: Vec<(f64, f64)>,
}

impl Walk {
    fn range(&self) -> f64 {
        let lo = self.steps.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = self.steps.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    fn mean(&self) -> f64 {
        self.steps.iter().map(|(v, p)| v * p).sum()
    }

    /// Hoeffding bound on `P(∃ ℓ ≥ from: S_ℓ ≥ 0)` for a walk with negative mean.
    fn tail(&self, from: usize) -> f64 {
        let mu = self.mean();
        let r = self.range();
        if r == 0.0 {
            return if mu < 0.0 { 0.0 } else { 1.0 };
        }
        if mu >= 0.0 {
            return 1.0;
        }
        let rate = 2.0 * mu * mu / (r * r);
        ((-rate * from as f64).exp() / (1.0 - (-rate).exp())).min(1.0)
    }

    /// `P(S_ℓ < 0 for all k ≤ ℓ ≤ k_max)` by dynamic programming over counts.
    fn stay_negative_exact(&self, k: usize, k_max: usize) -> f64 {
        let d = self.steps.len();
        assert!((1..=3).contains(&d));
        let (v, p): (Vec<f64>, Vec<f64>) = self.steps.iter().copied().unzip();
        let v = |i: usize| v.get(i).copied().unwrap_or(0.0);
        let p = |i: usize| p.get(i).copied().unwrap_or(0.0);
        let n = k_max + 1;
        // prob[a][b]: a steps of kind 1, b of kind 2, the rest kind 0.
        let mut prob = vec![vec![0.0f64; n]; n];
        prob[0][0] = 1.0;
        for l in 1..=k_max {
            let mut next = vec![vec![0.0f64; n]; n];
            let b_top = if d == 3 { l } else { 0 };
            for a in 0..=l.min(if d >= 2 { l } else { 0 }) {
                for b in 0..=b_top.min(l - a) {
                    let mut q = 0.0;
                    if a + b < l {
                        q += prob[a][b] * p(0);
                    }
                    if a > 0 {
                        q += prob[a - 1][b] * p(1);
                    }
                    if b > 0 {
                        q += prob[a][b - 1] * p(2);
                    }
                    if q == 0.0 {
                        continue;
                    }
                    let pos = (l - a - b) as f64 * v(0) + a as f64 * v(1) + b as f64 * v(2);
                    if l >= k && pos >= 0.0 {
                        q = 0.0;
                    }
                    next[a][b] = q;
                }
            }
            prob = next;
        }
        prob.iter().flatten().sum()
    }

    fn stay_negative_mc(&self, k: usize, k_max: usize, trials: usize, seed: u64) -> f64 {
        let table = crate::rng::SamplingTable::new(
            &self.steps.iter().map(|(_, p)| Rational::from_float(*p).unwrap_or_else(zero)).collect::<Vec<_>>(),
        );
        let mut rng = RngStream::new(seed, 0x5eed);
        let mut ok = 0usize;
        for _ in 0..trials {
            let mut s = 0.0;
            let mut stayed = true;
            for l in 1..=k_max {
                s += self.steps[table.sample(&mut rng)].0;
                if l >= k && s >= 0.0 {
                    stayed = false;
                    break;
                }
            }
            ok += usize::from(stayed);
        }
        let p = ok as f64 / trials as f64;
        // Lower 3σ confidence bound.
        (p - 3.0 * (p * (1.0 - p) / trials as f64).sqrt()).max(0.0)
    }
}

/// Step law of `f(−ln mass) `, grouping symbols of equal mass.
fn walk_from(law: &crate::dist::StepLaw<u32>, shift: f64, sign: f64) -> Walk {
    let mut groups: BTreeMap<Rational, Rational> = BTreeMap::new();
    for (_, m) in law.atoms() {
        *groups.entry(m.clone()).or_insert_with(zero) += m;
    }
    Walk {
        steps: groups
            .into_iter()
            .map(|(m, total)| (sign * (-rational::ln(&m) - shift), rational::to_f64(&total)))
            .collect(),
    }
}

/// Lower bound on the probability that the walk stays negative from `k` on,
/// forever.
fn stay_negative_forever(walk: &Walk, k: usize, cfg: &KInitialConfig) -> (f64, SmbMethod) {
    let tail_here = walk.tail(k);
    if k >= cfg.k_max {
        return (1.0 - tail_here, SmbMethod::TailOnly);
    }
    let (finite, method) = if walk.steps.len() <= 3 {
        (walk.stay_negative_exact(k, cfg.k_max), SmbMethod::Exact)
    } else {
        (
            walk.stay_negative_mc(k, cfg.k_max, cfg.trials, cfg.seed),
            SmbMethod::MonteCarlo { trials: cfg.trials, seed: cfg.seed },
        )
    };
    let with_enumeration = finite - walk.tail(cfg.k_max + 1);
    if with_enumeration >= 1.0 - tail_here {
        (with_enumeration, method)
    } else {
        (1.0 - tail_here, SmbMethod::TailOnly)
    }
}

/// Smallest `k ≥ 1` with `stay_negative_forever(k) > target`, by bisection
/// (the probability is nondecreasing in `k`).
fn smallest_level(walk: &Walk, target: f64, cfg: &KInitialConfig) -> Result<(usize, f64, SmbMethod)> {
    let ok = |k: usize| stay_negative_forever(walk, k, cfg);
    let (p1, m1) = ok(1);
    if p1 > target {
        return Ok((1, p1, m1));
    }
    let mut hi = 2usize;
    while ok(hi).0 <= target {
        if hi >= cfg.cap {
            return Err(Error::Infeasible(format!("no level below cap {} reaches {target}", cfg.cap)));
        }
        hi = (hi * 2).min(cfg.cap);
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid).0 > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (p, m) = ok(hi);
    Ok((hi, p, m))
}

/// Chooses `κ` and `k_init` so that the three terms of the bound on
/// non-desirable mass are each below `η/3`.
pub fn choose_k_initial(rho: &PairLaw, eta: f64, k_block: usize, cfg: &KInitialConfig) -> Result<KInitialChoice> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Parameter(format!("η = {eta} must lie in (0, 1)")));
    }
    let h = entropy(&rho.joint().marginal_left());
    if (h - entropy(&rho.joint().marginal_right())).abs() > ENTROPY_TOLERANCE {
        return Err(Error::Parameter("marginal entropies differ".into()));
    }
    let eps = choose_epsilon(h, k_block)?;
    let target = 1.0 - eta / 3.0;
    // β^ℓ(b) > e^{−(h+ε)ℓ}  ⇔  Σ (−ln β(b_i) − (h + ε)) < 0.
    let bottom = walk_from(rho.beta(), h + eps, 1.0);
    let (kappa, bottom_probability, bottom_method) = smallest_level(&bottom, target, cfg)?;
    // α^ℓ(a) < e^{−(h−ε)ℓ}  ⇔  Σ ((h − ε) − (−ln α(a_i))) < 0.
    let top = walk_from(rho.alpha(), h - eps, -1.0);
    let (k_smb_top, top_probability, top_method) = smallest_level(&top, target, cfg)?;
    // min positive β^ℓ mass for ℓ ≤ κ is β_min^κ; need it > e^{−(h−2ε)k}.
    let beta_min = rho.beta().atoms().iter().map(|(_, m)| m).min().cloned().unwrap_or_else(one);
    let need = -(kappa as f64) * rational::ln(&beta_min) / (h - 2.0 * eps);
    let k_min = (need.floor() as usize + 1).max(1);
    let k_pile = pile_k_initial(rho.right_size(), k_block, eps, eta)?;
    let k_init = k_smb_top.max(k_min).max(k_pile);
    let binding = if k_init == k_pile {
        "pile"
    } else if k_init == k_min {
        "min"
    } else {
        "smb_top"
    };
    if k_init > cfg.cap {
        return Err(Error::Infeasible(format!("k_init = {k_init} exceeds cap {}", cfg.cap)));
    }
    Ok(KInitialChoice {
        h,
        eps,
        eta,
        kappa,
        k_init,
        k_smb_top,
        k_min,
        k_pile,
        binding: binding.into(),
        bottom_method,
        top_method,
        bottom_probability,
        top_probability,
        k_max: cfg.k_max,
    })
}

/// Summary of a pair law sufficient for the tail-only parameter search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawSummary {
    /// Common entropy of the two marginals.
    pub h: f64,
    /// Range of `−ln α` over the support.
    pub alpha_range: f64,
    /// Range of `−ln β` over the support.
    pub beta_range: f64,
    /// `ln` of the smallest positive `β` mass.
    pub ln_beta_min: f64,
    /// `ln |B|`.
    pub ln_right_size: f64,
}

/// Smallest `k ≥ 1` with Hoeffding tail `e^{−rk}/(1 − e^{−r}) < target`, where
/// `r = 2ε²/R²`.
fn hoeffding_level(eps: f64, range: f64, target: f64) -> usize {
    if range == 0.0 {
        return 1;
    }
    let rate = 2.0 * eps * eps / (range * range);
    let need = (-(target.ln()) - (1.0 - (-rate).exp()).ln()) / rate;
    let mut k = need.floor().max(1.0) as usize;
    while (-rate * k as f64).exp() / (1.0 - (-rate).exp()) >= target {
        k += 1;
    }
    k
}

/// [`choose_k_initial`] from a [`LawSummary`], certifying both typical-set
/// conditions by the Hoeffding tail alone. Suitable for laws too large to
/// enumerate; the result is never smaller than the enumerated choice would be.
pub fn choose_k_initial_tail(s: &LawSummary, eta: f64, k_block: usize) -> Result<KInitialChoice> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Parameter(format!("η = {eta} must lie in (0, 1)")));
    }
    let eps = choose_epsilon(s.h, k_block)?;
    let target = eta / 3.0;
    let kappa = hoeffding_level(eps, s.beta_range, target);
    let k_smb_top = hoeffding_level(eps, s.alpha_range, target);
    let k_min = ((-(kappa as f64) * s.ln_beta_min / (s.h - 2.0 * eps)).floor() as usize + 1).max(1);
    let k_pile = pile_k_initial_ln(s.ln_right_size, k_block, eps, eta)?;
    let k_init = k_smb_top.max(k_min).max(k_pile);
    let binding = if k_init == k_pile {
        "pile"
    } else if k_init == k_min {
        "min"
    } else {
        "smb_top"
    };
    let level = |range: f64, k: usize| {
        if range == 0.0 {
            1.0
        } else {
            let rate = 2.0 * eps * eps / (range * range);
            1.0 - (-rate * k as f64).exp() / (1.0 - (-rate).exp())
        }
    };
    Ok(KInitialChoice {
        h: s.h,
        eps,
        eta,
        kappa,
        k_init,
        k_smb_top,
        k_min,
        k_pile,
        binding: binding.into(),
        bottom_method: SmbMethod::TailOnly,
        top_method: SmbMethod::TailOnly,
        bottom_probability: level(s.beta_range, kappa),
        top_probability: level(s.alpha_range, k_init),
        k_max: 0,
    })
}

/// As [`pile_k_initial`] with `ln |B|` given directly.
pub fn pile_k_initial_ln(ln_right_size: f64, k_block: usize, eps: f64, eta: f64) -> Result<usize> {
    if eps <= 0.0 {
        return Err(Error::Parameter("ε must be positive".into()));
    }
    let bound = k_block as f64 * ln_right_size - (1.0 - (-eps).exp()).ln() - (eta / 3.0).ln();
    let mut k = (bound / eps).floor().max(0.0) as usize;
    while k as f64 * eps <= bound {
        k += 1;
    }
    Ok(k.max(1))
}

/// Smallest `k` with `|B|^{k_block} e^{−εk} / (1 − e^{−ε}) < η/3`.
pub fn pile_k_initial(right_size: usize, k_block: usize, eps: f64, eta: f64) -> Result<usize> {
    pile_k_initial_ln((right_size as f64).ln(), k_block, eps, eta)
}

/// `|B|^{k_block} Σ_{i ≥ k} e^{−εi}` in closed form.
pub fn pile_sum(right_size: usize, k_block: usize, eps: f64, k: usize) -> f64 {
    (right_size as f64).powi(k_block as i32) * (-eps * k as f64).exp() / (1.0 - (-eps).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::Zero;
    use crate::dist::JointMass;
    use crate::rational::rat;
    use crate::star::{iterated_star_with_replacement, GroupedPairLaw};

    fn pair(atoms: &[((usize, usize), (i64, i64))]) -> PairLaw {
        PairLaw::new(JointMass::from_atoms(2, 2, atoms.iter().map(|&(k, (n, d))| (k, rat(n, d)))).unwrap()).unwrap()
    }

    fn diag() -> PairLaw {
        pair(&[((0, 0), (1, 2)), ((1, 1), (1, 2))])
    }

    fn skew() -> PairLaw {
        pair(&[((0, 0), (1, 4)), ((1, 0), (1, 2)), ((1, 1), (1, 4))])
    }

    #[test]
    fn epsilon_examples() {
        let e = choose_epsilon(std::f64::consts::LN_2, 2).unwrap();
        assert!((e - std::f64::consts::LN_2 / 10.0).abs() < 1e-15);
        for kb in 2..50 {
            assert!(epsilon_admissible(1.3, choose_epsilon(1.3, kb).unwrap(), kb));
        }
    }

    #[test]
    fn deterministic_uniform_succeeds_surely() {
        let rho = diag();
        let z0 = GroupedPairLaw::product(&rho, 2).unwrap();
        let zb = GroupedPairLaw::product(&rho, 2).unwrap();
        let chain = iterated_star_with_replacement(&z0, &[zb.clone(), zb]).unwrap();
        let ctx = GoodnessContext::new(&rho, 2, 2, None).unwrap();
        let psi = build_psi(&chain.stages[2], &ctx).unwrap();
        assert_eq!(success_probability(&psi, &chain.stages[2]).unwrap(), one());
        for j in 0..=2 {
            let b = presmb_bound(&chain, &ctx, j).unwrap();
            assert!(b.pass);
            assert!(b.not_desirable.is_zero());
        }
    }

    #[test]
    fn skewed_bound_holds() {
        let rho = skew();
        let z0 = GroupedPairLaw::product(&rho, 2).unwrap();
        let zb = GroupedPairLaw::product(&rho, 2).unwrap();
        let chain = iterated_star_with_replacement(&z0, &[zb.clone(), zb]).unwrap();
        let ctx = GoodnessContext::new(&rho, 2, 2, None).unwrap();
        for j in 0..=2 {
            let b = presmb_bound(&chain, &ctx, j).unwrap();
            assert!(b.pass, "{b:?}");
        }
        let psi = build_psi(&chain.stages[2], &ctx).unwrap();
        let s = success_probability(&psi, &chain.stages[2]).unwrap();
        let nd = presmb_bound(&chain, &ctx, 2).unwrap().not_desirable;
        assert!(s >= one() - nd);
        let (ratio, bound) = division_check(&chain, &ctx, 1).unwrap();
        assert!(ratio <= bound + 1e-12);
    }

    #[test]
    fn beta_goodness_uses_destined_part() {
        let ctx = GoodnessContext::new(&diag(), 1, 3, None).unwrap();
        assert!(ctx.beta_good(&[1]).unwrap());
        // Changing undetermined coordinates never changes the verdict.
        assert_eq!(ctx.beta_good(&[0, 1, 1, 0]).unwrap(), ctx.beta_good(&[1, 1, 1, 1]).unwrap());
    }

    #[test]
    fn psi_roundtrip() {
        let rho = diag();
        let chain =
            iterated_star_with_replacement(&GroupedPairLaw::product(&rho, 1).unwrap(), &[GroupedPairLaw::product(&rho, 2).unwrap()])
                .unwrap();
        let ctx = GoodnessContext::new(&rho, 1, 2, None).unwrap();
        let psi = build_psi(&chain.stages[1], &ctx).unwrap();
        assert_eq!(PsiTable::from_json(&psi.to_json()).unwrap(), psi);
        assert_eq!(psi.default, "0");
        assert_eq!(parse_word("3.12.0").unwrap(), vec![3, 12, 0]);
        assert_eq!(word_text(&[3, 12, 0]), "3.12.0");
    }

    #[test]
    fn k_initial_for_uniform() {
        let rho = diag();
        let c = choose_k_initial(&rho, 0.3, 2, &KInitialConfig::default()).unwrap();
        assert_eq!(c.kappa, 1);
        assert_eq!(c.k_smb_top, 1);
        assert!(pile_sum(2, 2, c.eps, c.k_pile) < 0.1);
        assert!(pile_sum(2, 2, c.eps, c.k_pile - 1) >= 0.1);
        assert_eq!(c.k_init, c.k_pile.max(c.k_min));
    }

    #[test]
    fn tail_choice_dominates_enumerated_choice() {
        let rho = skew();
        let cfg = KInitialConfig::default();
        let exact = choose_k_initial(&rho, 0.3, 2, &cfg).unwrap();
        let ln = |n: i64, d: i64| rational::ln(&rat(n, d));
        let s = LawSummary {
            h: exact.h,
            alpha_range: ln(3, 4) - ln(1, 4),
            beta_range: ln(3, 4) - ln(1, 4),
            ln_beta_min: ln(1, 4),
            ln_right_size: 2f64.ln(),
        };
        let tail = choose_k_initial_tail(&s, 0.3, 2).unwrap();
        assert!(tail.kappa >= exact.kappa);
        assert!(tail.k_init >= exact.k_init);
        assert_eq!(tail.k_pile, exact.k_pile);
    }

    #[test]
    fn exact_walk_agrees_with_brute_force() {
        let w = Walk { steps: vec![(0.5, 0.3), (-0.4, 0.7)] };
        // Brute force over all 2^8 paths.
        let (k, km) = (3, 8);
        let mut total = 0.0;
        for bits in 0u32..(1 << km) {
            let mut s = 0.0;
            let mut p = 1.0;
            let mut ok = true;
            for l in 1..=km {
                let (v, q) = w.steps[((bits >> (l - 1)) & 1) as usize];
                s += v;
                p *= q;
                if l >= k && s >= 0.0 {
                    ok = false;
                }
            }
            if ok {
                total += p;
            }
        }
        assert!((w.stay_negative_exact(k, km) - total).abs() < 1e-12);
    }
}
