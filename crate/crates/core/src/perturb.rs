//! Star-modification of a marker-form monotone joining: block laws, the
//! type-wise and city-wise application of the iterated star-coupling with
//! replacement, `d*` and `d̄` estimation, the parameter schedule and the
//! model-marker check.

use std::collections::{BTreeMap, HashMap};

use num::{BigUint, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deljunco::{build_psi, choose_k_initial_tail, GoodnessContext, KInitialChoice, LawSummary, PsiTable};
use crate::dist::{entropy, JointMass};
use crate::error::{Error, Result};
use crate::markers::{
    filler_law, filler_monotone_coupling, find_primary_markers, hat_map, parse_blocks_from_hat, sample_iid_window,
    sample_marker_joining_with, BinaryWindow, BlockStructure, BlockType, FillerSampler, HatSequence, Side, Tag,
};
use crate::rational::{self, format_rational, Rational};
use crate::rng::RngStream;
use crate::star::{iterated_star_with_replacement, GroupedPairLaw, PairLaw, ReplacementSampler, EXACT_STATE_LIMIT};

/// Largest block alphabet built explicitly.
pub const BLOCK_ALPHABET_LIMIT: usize = 4096;

/// `c = k_init + q·k_block + r` with `0 ≤ r < k_block`; `None` when
/// `c < k_init + k_block`, in which case the blocks are left alone.
pub fn euclid_decompose(c: usize, k_init: usize, k_block: usize) -> Option<(usize, usize)> {
    if k_block == 0 || c < k_init + k_block {
        return None;
    }
    let rest = c - k_init;
    Some((rest / k_block, rest % k_block))
}

/// `(k_init + q + r) / (q (k_block − 1))`: undetermined plus unchanged blocks
/// per destined block.
pub fn undetermined_ratio(k_init: usize, q: usize, r: usize, k_block: usize) -> f64 {
    (k_init + q + r) as f64 / (q * (k_block - 1)) as f64
}

/// Filler lengths of a block type together with the mixed radix of its codes.
fn radices(t: &BlockType) -> Vec<usize> {
    t.filler_lengths().map(|n| n + 1).collect()
}

/// Size of the block alphabet of a type: `Π (n_k + 1)` over its fillers.
pub fn block_alphabet_size(t: &BlockType) -> BigUint {
    radices(t).into_iter().fold(BigUint::one(), |acc, r| acc * r)
}

/// Counts of ones per filler for a block code, first filler most significant.
pub fn block_code_counts(t: &BlockType, code: u32) -> Vec<usize> {
    let rad = radices(t);
    let mut out = vec![0; rad.len()];
    let mut c = code as usize;
    for k in (0..rad.len()).rev() {
        out[k] = c % rad[k];
        c /= rad[k];
    }
    out
}

pub fn block_code(t: &BlockType, counts: &[usize]) -> u32 {
    radices(t).iter().zip(counts).fold(0usize, |acc, (r, s)| acc * r + s) as u32
}

/// Offsets of the filler runs inside a block of type `t`.
fn filler_offsets(t: &BlockType) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    for (k, &len) in t.alternation.iter().enumerate() {
        if k % 2 == 0 {
            out.push((off, len));
        }
        off += len;
    }
    out
}

/// Block code read from a window; fillers are `1^s 0^{n−s}` so `s` is the
/// number of ones.
pub fn read_block(symbols: &[u8], offset: usize, t: &BlockType) -> u32 {
    let counts: Vec<usize> = filler_offsets(t)
        .into_iter()
        .map(|(o, n)| symbols[offset + o..offset + o + n].iter().filter(|&&b| b == 1).count())
        .collect();
    block_code(t, &counts)
}

pub fn write_block(symbols: &mut [u8], offset: usize, t: &BlockType, code: u32) {
    for ((o, n), s) in filler_offsets(t).into_iter().zip(block_code_counts(t, code)) {
        for k in 0..n {
            symbols[offset + o + k] = u8::from(k < s);
        }
    }
}

/// `ρ_i`: the law of `(X, Y)` on a type-`t` block under the marker-form
/// joining, the product of the monotone filler couplings, on block codes.
pub fn block_pair_law(t: &BlockType, p: &Rational) -> Result<PairLaw> {
    let size = block_alphabet_size(t);
    let n = size.to_usize().filter(|&n| n <= BLOCK_ALPHABET_LIMIT).ok_or(Error::SizeGuard {
        size: size.to_u128().unwrap_or(u128::MAX),
        limit: BLOCK_ALPHABET_LIMIT as u128,
    })?;
    let couplings: Vec<JointMass> =
        t.filler_lengths().map(|len| filler_monotone_coupling(len, p)).collect::<Result<_>>()?;
    let mut atoms: Vec<((usize, usize), Rational)> = vec![((0, 0), Rational::one())];
    let rad = radices(t);
    for (c, r) in couplings.iter().zip(&rad) {
        let mut next = Vec::new();
        for ((a, b), m) in &atoms {
            for (sa, sb, w) in c.atoms() {
                next.push(((a * r + sa, b * r + sb), m * w));
            }
        }
        atoms = next;
    }
    PairLaw::new(JointMass::from_atoms(n, n, atoms)?)
}

/// Entropy, mass ranges and alphabet size of `ρ_i`, computed filler by filler.
pub fn block_law_summary(t: &BlockType, p: &Rational) -> Result<LawSummary> {
    let (mut h, mut ar, mut br, mut bmin, mut lnb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let q = Rational::one() - p;
    for n in t.filler_lengths() {
        let a = filler_law(n, p)?;
        let b = filler_law(n, &q)?;
        h += entropy(&a.law);
        let range = |d: &crate::dist::FiniteDistribution| {
            let l: Vec<f64> = d.masses().iter().filter(|m| !m.is_zero()).map(rational::ln).collect();
            let hi = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = l.iter().cloned().fold(f64::INFINITY, f64::min);
            (hi - lo, lo)
        };
        ar += range(&a.law).0;
        let (r, lo) = range(&b.law);
        br += r;
        bmin += lo;
        lnb += ((n + 1) as f64).ln();
    }
    Ok(LawSummary { h, alpha_range: ar, beta_range: br, ln_beta_min: bmin, ln_right_size: lnb })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Small user-supplied constants, simulated in full.
    Desk,
    /// Constants computed by the schedule; reported, not simulated.
    Schedule,
}

/// Parameters of a star-modification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarModPlan {
    pub mode: PlanMode,
    pub p: String,
    /// Target accuracy; absent in desk mode.
    pub eps: Option<f64>,
    pub eps_prime: Option<f64>,
    pub delta: Option<f64>,
    pub ell_star: usize,
    /// Upper end `L` of the type lengths.
    pub max_len: usize,
    pub k_mark: usize,
    pub k_rmark: usize,
    pub k_block: usize,
    /// The type set, ascending; in schedule mode a sample of it.
    pub types: Vec<BlockType>,
    /// `k_init` per type label.
    pub k_init: BTreeMap<String, usize>,
    /// Window length of the sampled skeletons.
    pub window_len: usize,
}

impl StarModPlan {
    /// A desk-mode plan with the same `k_init` for every type.
    #[allow(clippy::too_many_arguments)]
    pub fn desk(
        p: &Rational,
        k_mark: usize,
        k_rmark: usize,
        k_block: usize,
        mut types: Vec<BlockType>,
        k_init: usize,
        window_len: usize,
        ell_star: usize,
    ) -> Result<Self> {
        if k_mark == 0 || k_mark >= k_rmark {
            return Err(Error::Parameter(format!("need 0 < k_mark < k_rmark, got {k_mark}, {k_rmark}")));
        }
        if k_block < 2 || k_init == 0 {
            return Err(Error::Parameter("need k_block ≥ 2 and k_init ≥ 1".into()));
        }
        if window_len < 2 * ell_star + 3 {
            return Err(Error::Parameter("window too short for the cylinder depth".into()));
        }
        types.sort();
        types.dedup();
        let k_init = types.iter().map(|t| (t.label(), k_init)).collect();
        let max_len = types.iter().map(BlockType::length).max().unwrap_or(0);
        Ok(StarModPlan {
            mode: PlanMode::Desk,
            p: format_rational(p),
            eps: None,
            eps_prime: None,
            delta: None,
            ell_star,
            max_len,
            k_mark,
            k_rmark,
            k_block,
            types,
            k_init,
            window_len,
        })
    }

    pub fn p(&self) -> Result<Rational> {
        rational::parse_rational(&self.p)
    }

    /// Origin-centred window start.
    pub fn window_start(&self) -> i64 {
        -(self.window_len as i64 / 2)
    }
}

/// Skeleton of an iid `μ` window centred at the origin. The two edge
/// positions whose status depends on symbols outside the window are read as
/// filler; they only ever lie in incomplete blocks.
pub fn sample_skeleton(p: &Rational, window_len: usize, rng: &mut RngStream) -> Result<HatSequence> {
    let w = sample_iid_window(-(window_len as i64 / 2), window_len, p, Side::Mu, rng)?;
    let mut hat = hat_map(&w)?;
    for t in hat.tags.iter_mut() {
        if *t == Tag::Unknown {
            *t = Tag::Filler;
        }
    }
    Ok(hat)
}

/// Sampler state for one type: `ρ_i`, its `k_init` and a replacement sampler
/// per number of stages.
struct TypeKit {
    block_type: BlockType,
    rho: PairLaw,
    k_init: usize,
    samplers: HashMap<usize, ReplacementSampler>,
}

/// One city-type modification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityModification {
    pub city: usize,
    pub block_type: String,
    pub census: usize,
    pub q: usize,
    pub r: usize,
    pub k_init: usize,
    /// Modified blocks, in chain order.
    pub blocks: Vec<usize>,
}

/// Applies star-modifications to pairs drawn from the marker-form joining.
pub struct StarModifier {
    plan: StarModPlan,
    kits: Vec<TypeKit>,
    filler: FillerSampler,
}

impl StarModifier {
    pub fn new(plan: &StarModPlan) -> Result<Self> {
        let p = plan.p()?;
        let kits = plan
            .types
            .iter()
            .map(|t| {
                let k_init = *plan
                    .k_init
                    .get(&t.label())
                    .ok_or_else(|| Error::MissingTable(format!("no k_init for type {}", t.label())))?;
                Ok(TypeKit { block_type: t.clone(), rho: block_pair_law(t, &p)?, k_init, samplers: HashMap::new() })
            })
            .collect::<Result<_>>()?;
        Ok(StarModifier { plan: plan.clone(), filler: FillerSampler::new(&p)?, kits })
    }

    pub fn plan(&self) -> &StarModPlan {
        &self.plan
    }

    pub fn rho(&self, label: &str) -> Option<&PairLaw> {
        self.kits.iter().find(|k| k.block_type.label() == label).map(|k| &k.rho)
    }

    pub fn structure(&self, t: &HatSequence) -> Result<BlockStructure> {
        parse_blocks_from_hat(t, self.plan.k_mark, self.plan.k_rmark)
    }

    /// Draws `(X, Y)` from the marker-form joining given `t`.
    pub fn sample_base(&mut self, t: &HatSequence, rng: &mut RngStream) -> Result<(BinaryWindow, BinaryWindow)> {
        sample_marker_joining_with(t, &mut self.filler, rng)
    }

    /// Star-modification of type `kit` on one complete city.
    fn modify_city(
        &mut self,
        pair: &mut (BinaryWindow, BinaryWindow),
        bs: &BlockStructure,
        city: usize,
        kit: usize,
        rng: &mut RngStream,
    ) -> Result<Option<CityModification>> {
        if !bs.cities[city].complete {
            return Err(Error::InvalidWindow(format!("city {city} is cut by the window edge")));
        }
        let k_block = self.plan.k_block;
        let kit = &mut self.kits[kit];
        let blocks = bs.city_blocks_of_type(city, &kit.block_type);
        let Some((q, r)) = euclid_decompose(blocks.len(), kit.k_init, k_block) else {
            return Ok(None);
        };
        let sampler = match kit.samplers.entry(q) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let z0 = GroupedPairLaw::product(&kit.rho, kit.k_init)?;
                e.insert(ReplacementSampler::new(&z0, k_block, q)?)
            }
        };
        let (xw, yw) = sampler.sample(rng)?;
        let used = &blocks[..blocks.len() - r];
        let start = pair.0.start();
        for (k, &b) in used.iter().enumerate() {
            let off = (bs.blocks[b].interval.start - start) as usize;
            write_block(pair.0.symbols_mut(), off, &kit.block_type, xw[k]);
            write_block(pair.1.symbols_mut(), off, &kit.block_type, yw[k]);
        }
        Ok(Some(CityModification {
            city,
            block_type: kit.block_type.label(),
            census: blocks.len(),
            q,
            r,
            k_init: kit.k_init,
            blocks: used.to_vec(),
        }))
    }

    /// Star-modification of type `label` on city `city`; the skip case
    /// returns `None` and leaves the pair untouched.
    pub fn star_modify_city(
        &mut self,
        pair: &mut (BinaryWindow, BinaryWindow),
        bs: &BlockStructure,
        city: usize,
        label: &str,
        rng: &mut RngStream,
    ) -> Result<Option<CityModification>> {
        let kit = self
            .kits
            .iter()
            .position(|k| k.block_type.label() == label)
            .ok_or_else(|| Error::MissingTable(format!("type {label} is not in the plan")))?;
        self.modify_city(pair, bs, city, kit, rng)
    }

    /// Types in ascending order, each on every complete city independently.
    pub fn star_modify(
        &mut self,
        pair: &mut (BinaryWindow, BinaryWindow),
        bs: &BlockStructure,
        rng: &mut RngStream,
    ) -> Result<Vec<CityModification>> {
        let mut log = Vec::new();
        for kit in 0..self.kits.len() {
            for city in 0..bs.cities.len() {
                if !bs.cities[city].complete {
                    continue;
                }
                let mut r = rng.substream(((kit as u64) << 32) | city as u64);
                if let Some(m) = self.modify_city(pair, bs, city, kit, &mut r)? {
                    log.push(m);
                }
            }
        }
        Ok(log)
    }
}

/// A source of pairs given a skeleton.
pub trait PairSampler {
    fn sample(&mut self, t: &HatSequence, rng: &mut RngStream) -> Result<(BinaryWindow, BinaryWindow)>;
}

/// The marker-form joining itself.
pub struct BaseJoining(FillerSampler);

impl BaseJoining {
    pub fn new(p: &Rational) -> Result<Self> {
        Ok(BaseJoining(FillerSampler::new(p)?))
    }
}

impl PairSampler for BaseJoining {
    fn sample(&mut self, t: &HatSequence, rng: &mut RngStream) -> Result<(BinaryWindow, BinaryWindow)> {
        sample_marker_joining_with(t, &mut self.0, rng)
    }
}

/// Stream id of the modification randomness; the base draw uses the stream
/// it is handed, so a base sampler fed the same stream sees the same base pair.
const MODIFY_STREAM: u64 = 0x5ca1ab1e;

impl PairSampler for StarModifier {
    fn sample(&mut self, t: &HatSequence, rng: &mut RngStream) -> Result<(BinaryWindow, BinaryWindow)> {
        let mut pair = self.sample_base(t, rng)?;
        let bs = self.structure(t)?;
        self.star_modify(&mut pair, &bs, &mut rng.substream(MODIFY_STREAM))?;
        Ok(pair)
    }
}

/// Pair content of `[−ℓ, ℓ]` as one symbol per coordinate (`2x + y`).
fn pair_pattern(pair: &(BinaryWindow, BinaryWindow), ell: usize) -> Vec<u8> {
    let lo = -(ell as i64);
    (lo..=ell as i64)
        .map(|i| 2 * pair.0.get(i).expect("window covers the cylinder") + pair.1.get(i).expect("window covers"))
        .collect()
}

/// Truncated `d*` between two empirical measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DstarEstimate {
    pub ell_star: usize,
    pub samples_a: usize,
    pub samples_b: usize,
    /// `sup_{C ∈ 𝒞_ℓ}` of the empirical difference, for `ℓ = 0..=ℓ*`.
    pub per_depth: Vec<f64>,
    /// `Σ_{ℓ ≤ ℓ*} 2^{−(ℓ+1)} sup`.
    pub truncated: f64,
    /// `Σ_{ℓ > ℓ*} 2^{−(ℓ+1)} = 2^{−(ℓ*+1)}`.
    pub truncation_bound: f64,
    /// Scale of the sampling error of `truncated`.
    pub sigma: f64,
}

impl DstarEstimate {
    pub fn upper(&self) -> f64 {
        self.truncated + self.truncation_bound
    }
}

/// Sample floor of [`estimate_dstar`].
pub const DSTAR_MIN_SAMPLES: usize = 2;

/// `d*` between empirical laws of pair windows. The supremum over `𝒞_ℓ` is
/// the total variation distance of the `[−ℓ, ℓ]` projections, computed
/// exactly from pattern counts.
pub fn estimate_dstar(a: &[Vec<u8>], b: &[Vec<u8>], ell_star: usize) -> Result<DstarEstimate> {
    if a.len() < DSTAR_MIN_SAMPLES || b.len() < DSTAR_MIN_SAMPLES {
        return Err(Error::Parameter(format!("need at least {DSTAR_MIN_SAMPLES} samples per side")));
    }
    let width = 2 * ell_star + 1;
    if a.iter().chain(b).any(|w| w.len() != width) {
        return Err(Error::Parameter(format!("patterns must have length {width}")));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut per_depth = Vec::with_capacity(ell_star + 1);
    let mut sigma = 0.0;
    let mut truncated = 0.0;
    for ell in 0..=ell_star {
        let lo = ell_star - ell;
        let hi = ell_star + ell + 1;
        let mut counts: HashMap<&[u8], (usize, usize)> = HashMap::new();
        for w in a {
            counts.entry(&w[lo..hi]).or_default().0 += 1;
        }
        for w in b {
            counts.entry(&w[lo..hi]).or_default().1 += 1;
        }
        let (mut tv, mut sd) = (0.0, 0.0);
        for (ca, cb) in counts.values() {
            let (fa, fb) = (*ca as f64 / na, *cb as f64 / nb);
            tv += (fa - fb).abs();
            sd += (fa * (1.0 - fa) / na + fb * (1.0 - fb) / nb).sqrt();
        }
        let weight = 0.5f64.powi(ell as i32 + 1);
        per_depth.push(tv / 2.0);
        truncated += weight * tv / 2.0;
        sigma += weight * sd / 2.0;
    }
    Ok(DstarEstimate {
        ell_star,
        samples_a: a.len(),
        samples_b: b.len(),
        per_depth,
        truncated,
        truncation_bound: 0.5f64.powi(ell_star as i32 + 1),
        sigma,
    })
}

/// Monte Carlo `d̄` over skeletons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbarEstimate {
    pub skeletons: usize,
    pub per_skeleton: usize,
    pub ell_star: usize,
    /// Mean of the per-skeleton truncated `d*`.
    pub mean: f64,
    pub std_error: f64,
    /// `mean ± 3·std_error`.
    pub interval: (f64, f64),
    pub truncation_bound: f64,
    /// Fraction of skeletons whose origin block is cut by the window edge.
    pub origin_block_excluded: f64,
}

/// `d̄(ξ, ζ)` by Monte Carlo over skeletons drawn from `μ`'s hat law. Both
/// samplers see the same random stream per draw (common random numbers).
pub fn estimate_dbar<A, B, FA, FB>(
    make_a: FA,
    make_b: FB,
    plan: &StarModPlan,
    n_skeletons: usize,
    per_skeleton: usize,
    rng: &RngStream,
) -> Result<DbarEstimate>
where
    A: PairSampler,
    B: PairSampler,
    FA: Fn() -> Result<A> + Sync + Send,
    FB: Fn() -> Result<B> + Sync + Send,
{
    if n_skeletons < 2 {
        return Err(Error::Parameter("need at least two skeletons".into()));
    }
    let p = plan.p()?;
    let ell = plan.ell_star;
    let rows: Vec<(f64, bool)> = (0..n_skeletons)
        .into_par_iter()
        .map_init(
            || (make_a(), make_b()),
            |(sa, sb), k| -> Result<(f64, bool)> {
                let sa = sa.as_mut().map_err(|e| e.clone())?;
                let sb = sb.as_mut().map_err(|e| e.clone())?;
                let mut r = rng.substream(k as u64);
                let t = sample_skeleton(&p, plan.window_len, &mut r)?;
                let bs = parse_blocks_from_hat(&t, plan.k_mark, plan.k_rmark)?;
                let excluded = bs.block_at(0).is_some_and(|b| !bs.blocks[b].complete);
                let (mut pa, mut pb) = (Vec::with_capacity(per_skeleton), Vec::with_capacity(per_skeleton));
                for j in 0..per_skeleton {
                    let draw = r.substream(j as u64);
                    pa.push(pair_pattern(&sa.sample(&t, &mut draw.clone())?, ell));
                    pb.push(pair_pattern(&sb.sample(&t, &mut draw.clone())?, ell));
                }
                Ok((estimate_dstar(&pa, &pb, ell)?.truncated, excluded))
            },
        )
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_error = (var / n).sqrt();
    Ok(DbarEstimate {
        skeletons: n_skeletons,
        per_skeleton,
        ell_star: ell,
        mean,
        std_error,
        interval: (mean - 3.0 * std_error, mean + 3.0 * std_error),
        truncation_bound: 0.5f64.powi(ell as i32 + 1),
        origin_block_excluded: rows.iter().filter(|r| r.1).count() as f64 / n,
    })
}

/// Invariant tallies of [`run_desk`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub samples: usize,
    pub modified_samples: usize,
    pub modified_blocks: usize,
    pub city_modifications: usize,
    pub marker_violations: usize,
    pub monotone_violations: usize,
    /// Coordinates outside modified blocks that changed.
    pub unmodified_changes: usize,
    /// Per type: modified-block count and the largest |z| of the block
    /// code frequencies of `X` against `α_i`.
    pub per_type: BTreeMap<String, TypeTally>,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeTally {
    pub blocks: usize,
    pub x_max_abs_z: f64,
    pub y_max_abs_z: f64,
    #[serde(skip)]
    x_counts: BTreeMap<u32, usize>,
    #[serde(skip)]
    y_counts: BTreeMap<u32, usize>,
}

#[derive(Default)]
struct RunTally {
    samples: usize,
    modified_samples: usize,
    modified_blocks: usize,
    city_modifications: usize,
    marker_violations: usize,
    monotone_violations: usize,
    unmodified_changes: usize,
    per_type: BTreeMap<String, TypeTally>,
}

impl RunTally {
    fn merge(mut self, o: RunTally) -> RunTally {
        self.samples += o.samples;
        self.modified_samples += o.modified_samples;
        self.modified_blocks += o.modified_blocks;
        self.city_modifications += o.city_modifications;
        self.marker_violations += o.marker_violations;
        self.monotone_violations += o.monotone_violations;
        self.unmodified_changes += o.unmodified_changes;
        for (k, v) in o.per_type {
            let e = self.per_type.entry(k).or_default();
            e.blocks += v.blocks;
            for (c, n) in v.x_counts {
                *e.x_counts.entry(c).or_default() += n;
            }
            for (c, n) in v.y_counts {
                *e.y_counts.entry(c).or_default() += n;
            }
        }
        self
    }
}

fn max_abs_z(counts: &BTreeMap<u32, usize>, law: &crate::dist::StepLaw<u32>, n: usize) -> f64 {
    law.atoms()
        .iter()
        .map(|(c, m)| {
            let q = rational::to_f64(m);
            let f = counts.get(c).copied().unwrap_or(0) as f64 / n as f64;
            let sd = (q * (1.0 - q) / n as f64).sqrt();
            if sd == 0.0 {
                if (f - q).abs() > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                (f - q).abs() / sd
            }
        })
        .fold(0.0, f64::max)
}

/// Draws `samples` skeletons and joint pairs, star-modifies them and checks
/// shared markers, domination, locality and the per-block marginals.
pub fn run_desk(plan: &StarModPlan, samples: usize, rng: &RngStream) -> Result<RunReport> {
    let p = plan.p()?;
    let chunk = 256usize;
    let tally = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| -> Result<RunTally> {
            let mut m = StarModifier::new(plan)?;
            let mut t = RunTally::default();
            for k in c * chunk..((c + 1) * chunk).min(samples) {
                let mut r = rng.substream(k as u64);
                let sk = sample_skeleton(&p, plan.window_len, &mut r)?;
                let bs = m.structure(&sk)?;
                let base = m.sample_base(&sk, &mut r)?;
                let mut pair = base.clone();
                let log = m.star_modify(&mut pair, &bs, &mut r.substream(MODIFY_STREAM))?;
                t.samples += 1;
                t.modified_samples += usize::from(!log.is_empty());
                t.city_modifications += log.len();
                let markers = |w: &BinaryWindow| find_primary_markers(w).map(|d| d.primary_markers);
                let reference = markers(&base.0)?;
                if markers(&pair.0)? != reference || markers(&pair.1)? != reference {
                    t.marker_violations += 1;
                }
                if !pair.0.dominates(&pair.1) {
                    t.monotone_violations += 1;
                }
                let mut touched = vec![false; pair.0.len()];
                for cm in &log {
                    let bt: BlockType = cm.block_type.parse()?;
                    let e = t.per_type.entry(cm.block_type.clone()).or_default();
                    for &b in &cm.blocks {
                        let iv = bs.blocks[b].interval;
                        let off = (iv.start - pair.0.start()) as usize;
                        touched[off..off + iv.len()].iter_mut().for_each(|x| *x = true);
                        *e.x_counts.entry(read_block(pair.0.symbols(), off, &bt)).or_default() += 1;
                        *e.y_counts.entry(read_block(pair.1.symbols(), off, &bt)).or_default() += 1;
                        e.blocks += 1;
                    }
                    t.modified_blocks += cm.blocks.len();
                }
                t.unmodified_changes += (0..pair.0.len())
                    .filter(|&i| {
                        !touched[i]
                            && (pair.0.symbols()[i] != base.0.symbols()[i] || pair.1.symbols()[i] != base.1.symbols()[i])
                    })
                    .count();
            }
            Ok(t)
        })
        .try_reduce(RunTally::default, |a, b| Ok(a.merge(b)))?;
    let m = StarModifier::new(plan)?;
    let mut per_type = tally.per_type;
    for (label, tt) in per_type.iter_mut() {
        let rho = m.rho(label).expect("plan type");
        tt.x_max_abs_z = max_abs_z(&tt.x_counts, rho.alpha(), tt.blocks);
        tt.y_max_abs_z = max_abs_z(&tt.y_counts, rho.beta(), tt.blocks);
    }
    let pass = tally.marker_violations == 0 && tally.monotone_violations == 0 && tally.unmodified_changes == 0;
    Ok(RunReport {
        samples: tally.samples,
        modified_samples: tally.modified_samples,
        modified_blocks: tally.modified_blocks,
        city_modifications: tally.city_modifications,
        marker_violations: tally.marker_violations,
        monotone_violations: tally.monotone_violations,
        unmodified_changes: tally.unmodified_changes,
        per_type,
        pass,
    })
}

/// Exact per-copy check: after `q` stages every copy of the modified blocks
/// has law `ρ_i`, so cylinder probabilities inside one block are unchanged.
pub fn per_copy_law_preserved(rho: &PairLaw, k_init: usize, k_block: usize, q: usize) -> Result<bool> {
    let z0 = GroupedPairLaw::product(rho, k_init)?;
    let zb = GroupedPairLaw::product(rho, k_block)?;
    let chain = iterated_star_with_replacement(&z0, &vec![zb; q])?;
    let law = chain.stages.last().expect("stage 0 is present");
    let len = chain.length(q);
    let target: BTreeMap<(u32, u32), Rational> =
        rho.joint().atoms().map(|(a, b, m)| ((a as u32, b as u32), m.clone())).collect();
    for c in 0..len {
        let mut proj: BTreeMap<(u32, u32), Rational> = BTreeMap::new();
        for ((x, y), m) in law.atoms() {
            *proj.entry((x[c], y[c])).or_insert_with(Rational::zero) += m;
        }
        proj.retain(|_, m| !m.is_zero());
        if proj != target {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Exact comparison of cylinder probabilities inside one block before and
/// after a star-modification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCylinderReport {
    pub block_type: String,
    pub copies: usize,
    /// `(copy, interval, pattern)` triples compared.
    pub cylinders: usize,
    pub mismatches: usize,
    pub pass: bool,
}

/// Bits of a type-`t` block with the given code; marker runs read `01…01`.
fn block_bits(t: &BlockType, code: u32) -> Vec<u8> {
    let mut bits = vec![0u8; t.length()];
    let mut off = 0;
    for (k, &len) in t.alternation.iter().enumerate() {
        if k % 2 == 1 {
            for j in 0..len {
                bits[off + j] = (j % 2) as u8;
            }
        }
        off += len;
    }
    write_block(&mut bits, 0, t, code);
    bits
}

/// Law of the `2x + y` pattern on every sub-interval of a block, keyed by
/// `(start, pattern)`.
fn interval_laws<'a>(
    t: &BlockType,
    atoms: impl Iterator<Item = ((u32, u32), &'a Rational)>,
) -> BTreeMap<(usize, Vec<u8>), Rational> {
    let n = t.length();
    let mut out: BTreeMap<(usize, Vec<u8>), Rational> = BTreeMap::new();
    for ((a, b), m) in atoms {
        let (x, y) = (block_bits(t, a), block_bits(t, b));
        let pattern: Vec<u8> = x.iter().zip(&y).map(|(u, v)| 2 * u + v).collect();
        for lo in 0..n {
            for hi in lo + 1..=n {
                *out.entry((lo, pattern[lo..hi].to_vec())).or_insert_with(Rational::zero) += m;
            }
        }
    }
    out
}

/// Runs `q` exact replacement stages on type-`t` blocks and compares, for
/// every copy and every interval inside it, the cylinder law with the one
/// under the unmodified joining.
pub fn block_cylinder_check(
    t: &BlockType,
    p: &Rational,
    k_init: usize,
    k_block: usize,
    q: usize,
) -> Result<BlockCylinderReport> {
    let rho = block_pair_law(t, p)?;
    let z0 = GroupedPairLaw::product(&rho, k_init)?;
    let zb = GroupedPairLaw::product(&rho, k_block)?;
    let chain = iterated_star_with_replacement(&z0, &vec![zb; q])?;
    let law = chain.stages.last().expect("stage 0 is present");
    let copies = chain.length(q);
    let before = interval_laws(t, rho.joint().atoms().map(|(a, b, m)| ((a as u32, b as u32), m)));
    let (mut cylinders, mut mismatches) = (0, 0);
    for c in 0..copies {
        let after = interval_laws(t, law.atoms().iter().map(|((x, y), m)| ((x[c], y[c]), m)));
        let keys: std::collections::BTreeSet<_> = before.keys().chain(after.keys()).collect();
        cylinders += keys.len();
        mismatches += keys.into_iter().filter(|k| before.get(*k) != after.get(*k)).count();
    }
    Ok(BlockCylinderReport { block_type: t.label(), copies, cylinders, mismatches, pass: mismatches == 0 })
}

/// Model-marker statistics of a star-modified joining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMarkerReport {
    pub samples: usize,
    pub model_markers: usize,
    pub model_marker_fraction: f64,
    /// Model markers whose `(type, q)` stage was too large for an exact table.
    pub undecodable: usize,
    pub agreements: usize,
    pub agreement_rate: f64,
    pub model_marker_target: f64,
    pub agreement_target: f64,
    pub verdict: bool,
}

/// Lazily built `Ψ` tables per `(type, q)`.
#[derive(Default)]
pub struct PsiStore {
    tables: BTreeMap<(String, usize), Option<PsiTable>>,
}

impl PsiStore {
    /// The table for stage `q` of type `label`, or `None` when the exact
    /// chain exceeds the enumeration limit.
    pub fn get(&mut self, label: &str, rho: &PairLaw, k_init: usize, k_block: usize, q: usize) -> Result<Option<&PsiTable>> {
        let key = (label.to_string(), q);
        if !self.tables.contains_key(&key) {
            let states = (rho.left_size() as f64 * rho.right_size() as f64).powi((k_init + k_block * q) as i32);
            let table = if states > EXACT_STATE_LIMIT as f64 {
                None
            } else {
                let z0 = GroupedPairLaw::product(rho, k_init)?;
                let zb = GroupedPairLaw::product(rho, k_block)?;
                let chain = iterated_star_with_replacement(&z0, &vec![zb; q])?;
                let ctx = GoodnessContext::new(rho, k_init, k_block, None)?;
                Some(build_psi(chain.stages.last().expect("stage"), &ctx)?)
            };
            self.tables.insert(key.clone(), table);
        }
        Ok(self.tables[&key].as_ref())
    }
}

/// Position `k` of the chain is destined when it falls in the first
/// `k_block − 1` slots of a stage.
pub fn destined_slot(k: usize, k_init: usize, k_block: usize) -> Option<usize> {
    if k < k_init {
        return None;
    }
    let (stage, within) = ((k - k_init) / k_block, (k - k_init) % k_block);
    (within < k_block - 1).then_some(stage * (k_block - 1) + within)
}

/// Samples the star-modified joining, classifies the origin and, on model
/// markers, compares `ψ(x)` at the origin with `y_0`.
pub fn almost_factor_check(plan: &StarModPlan, n_samples: usize, rng: &RngStream) -> Result<ModelMarkerReport> {
    let p = plan.p()?;
    let mut m = StarModifier::new(plan)?;
    let mut store = PsiStore::default();
    let (mut model, mut undecodable, mut agree) = (0usize, 0usize, 0usize);
    for k in 0..n_samples {
        let mut r = rng.substream(k as u64);
        let sk = sample_skeleton(&p, plan.window_len, &mut r)?;
        let bs = m.structure(&sk)?;
        let mut pair = m.sample_base(&sk, &mut r)?;
        let log = m.star_modify(&mut pair, &bs, &mut r.substream(MODIFY_STREAM))?;
        let Some(origin_block) = bs.block_at(0) else { continue };
        let Some((cm, slot)) = log.iter().find_map(|cm| {
            let pos = cm.blocks.iter().position(|&b| b == origin_block)?;
            Some((cm, destined_slot(pos, cm.k_init, plan.k_block)?))
        }) else {
            continue;
        };
        model += 1;
        let bt: BlockType = cm.block_type.parse()?;
        let rho = m.rho(&cm.block_type).expect("plan type").clone();
        let Some(psi) = store.get(&cm.block_type, &rho, cm.k_init, plan.k_block, cm.q)? else {
            undecodable += 1;
            continue;
        };
        let start = pair.0.start();
        let x: Vec<u32> = cm
            .blocks
            .iter()
            .map(|&b| read_block(pair.0.symbols(), (bs.blocks[b].interval.start - start) as usize, &bt))
            .collect();
        let decoded = psi.lookup(&x)?;
        let iv = bs.blocks[origin_block].interval;
        let mut y_block = vec![0u8; iv.len()];
        // Marker coordinates are shared, so copy them from x before writing fillers.
        y_block.copy_from_slice(&pair.0.symbols()[(iv.start - start) as usize..=(iv.end - start) as usize]);
        write_block(&mut y_block, 0, &bt, decoded[slot]);
        if y_block[(-iv.start) as usize] == pair.1.get(0).expect("origin in window") {
            agree += 1;
        }
    }
    let model_marker_fraction = model as f64 / n_samples.max(1) as f64;
    let agreement_rate = if model == 0 { 0.0 } else { agree as f64 / model as f64 };
    let eps_prime = plan.eps_prime.unwrap_or(0.0);
    let model_marker_target = 1.0 - 7.0 * eps_prime;
    let agreement_target = 1.0 - eps_prime;
    Ok(ModelMarkerReport {
        samples: n_samples,
        model_markers: model,
        model_marker_fraction,
        undecodable,
        agreements: agree,
        agreement_rate,
        model_marker_target,
        agreement_target,
        verdict: model_marker_fraction >= model_marker_target && agreement_rate >= agreement_target,
    })
}

/// Settings of the parameter schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub seed: u64,
    /// Trials per `k_mark` candidate.
    pub origin_trials: usize,
    pub k_mark_cap: usize,
    /// Chunks of iid bits scanned for block lengths, and their length.
    pub block_chunks: usize,
    pub chunk_len: usize,
    /// Types sampled from the block-length distribution for the `k_init` step.
    pub type_samples: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            seed: 0,
            origin_trials: 40_000,
            k_mark_cap: 64,
            block_chunks: 64,
            chunk_len: 1 << 20,
            type_samples: 4,
        }
    }
}

/// One item of the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub item: String,
    pub value: String,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub plan: StarModPlan,
    pub steps: Vec<ScheduleStep>,
    /// Number of block types with lengths in `[ℓ*, L]`, as a decimal exponent.
    pub type_count_log10: f64,
    pub k_init_choices: BTreeMap<String, KInitialChoice>,
    /// Census each sampled type needs for `k_init/q < ε′`.
    pub census_needed: BTreeMap<String, u128>,
    /// Lower bound on `k_rmark` from the total census a city must hold.
    pub k_rmark_lower_bound: Option<f64>,
    pub feasible: bool,
    pub binding: Option<String>,
}

/// `ε′ = ε/100`.
pub fn eps_prime(eps: f64) -> f64 {
    eps / 100.0
}

/// `k_block = ⌈1/ε′⌉ + 1`.
pub fn k_block_for(eps: f64) -> usize {
    let inv = 1.0 / eps_prime(eps);
    // Guard against 1/0.005 evaluating a hair above 200.
    let r = inv.round();
    let ceil = if (inv - r).abs() < 1e-9 { r } else { inv.ceil() };
    ceil as usize + 1
}

/// Smallest `ℓ*` with `2^{−(ℓ*+1)} ≤ ε′/2`, and `δ = ε′/2`: then every
/// cylinder difference below `δ` gives `d* < ε′`.
pub fn weak_star_depth(eps_prime: f64) -> (usize, f64) {
    let mut ell = 0;
    while 0.5f64.powi(ell as i32 + 1) > eps_prime / 2.0 {
        ell += 1;
    }
    (ell, eps_prime / 2.0)
}

/// `log10` of the number of block types with length in `[lo, hi]` whose
/// marker runs hold fewer than `k_mark` primary markers.
pub fn type_count_log10(lo: usize, hi: usize, k_mark: usize) -> f64 {
    // f(n): types of length n; m(n): the same sequences ending in a marker
    // run. f(n) = 1 + Σ_{j<n} m(j), m(n) = Σ_{c<k_mark} f(n − 2c). Values are
    // stored divided by e^{scale}.
    const CAP: f64 = 1e250;
    let window = 2 * k_mark.max(1);
    let mut f = vec![0.0f64; hi + 1];
    let (mut scale, mut unit, mut prefix_m, mut total) = (0.0f64, 1.0f64, 0.0f64, 0.0f64);
    for n in 1..=hi {
        let fn_ = unit + prefix_m;
        f[n] = fn_;
        let mut m = 0.0;
        for c in 1..k_mark {
            if 2 * c < n {
                m += f[n - 2 * c];
            }
        }
        prefix_m += m;
        if n >= lo {
            total += fn_;
        }
        if prefix_m > CAP || fn_ > CAP {
            for v in f[n.saturating_sub(window)..=n].iter_mut() {
                *v /= CAP;
            }
            unit /= CAP;
            prefix_m /= CAP;
            total /= CAP;
            scale += CAP.ln();
        }
    }
    (total.ln() + scale) / std::f64::consts::LN_10
}

/// Runs the schedule (i)–(viii) for `μ = B(1−p, p)`.
pub fn build_plan(p: &Rational, eps: f64, cfg: &ScheduleConfig) -> Result<ScheduleReport> {
    if *p <= rational::half() || *p >= Rational::one() {
        return Err(Error::Parameter(format!("p = {p} must lie in (1/2, 1)")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("ε = {eps} must lie in (0, 1)")));
    }
    let root = RngStream::new(cfg.seed, 0x9e3779b9);
    let mut steps = Vec::new();
    let mut step = |item: &str, value: String, note: String| steps.push(ScheduleStep { item: item.into(), value, note });

    let ep = eps_prime(eps);
    step("i", format!("{ep}"), "ε′ = ε/100".into());
    let (ell_star, delta) = weak_star_depth(ep);
    step("ii", format!("ell_star = {ell_star}, delta = {delta}"), "2^{−(ℓ*+1)} ≤ ε′/2 and δ = ε′/2".into());

    // (iii): P(origin in a block containing [−2ℓ*, 2ℓ*]) ≥ 1 − ε′, 3σ folded in.
    let mut k_mark = None;
    for k in 1..=cfg.k_mark_cap {
        let margin = 2 * k + 2;
        let half = 2 * ell_star + margin;
        let r = root.substream(k as u64);
        let fails: usize = (0..cfg.origin_trials)
            .into_par_iter()
            .map(|j| -> Result<usize> {
                let mut s = r.substream(j as u64);
                let w = sample_iid_window(-(half as i64), 2 * half + 1, p, Side::Mu, &mut s)?;
                let hat = hat_map(&w)?;
                let bad = crate::markers::marker_runs(&hat).iter().any(|run| {
                    run.count >= k && run.interval.end >= -(2 * ell_star as i64) && run.interval.start <= 2 * ell_star as i64
                });
                Ok(usize::from(bad))
            })
            .sum::<Result<usize>>()?;
        let f = fails as f64 / cfg.origin_trials as f64;
        let sd = (f.max(1.0 / cfg.origin_trials as f64) * (1.0 - f) / cfg.origin_trials as f64).sqrt();
        if f + 3.0 * sd <= ep {
            step("iii", format!("k_mark = {k}"), format!("estimated failure {f:.3e} ± {sd:.1e} over {} trials", cfg.origin_trials));
            k_mark = Some(k);
            break;
        }
    }
    let Some(k_mark) = k_mark else {
        return Err(Error::Infeasible(format!("(iii): no k_mark ≤ {} reaches 1 − ε′", cfg.k_mark_cap)));
    };

    // (iv)–(v): length-biased block lengths from long iid stretches.
    let chunks: Vec<(Vec<(usize, BlockType)>, usize)> = (0..cfg.block_chunks)
        .into_par_iter()
        .map(|c| -> Result<(Vec<(usize, BlockType)>, usize)> {
            let mut s = root.substream((1 << 32) | c as u64);
            let t = sample_skeleton(p, cfg.chunk_len, &mut s)?;
            let bs = parse_blocks_from_hat(&t, k_mark, k_mark + 1)?;
            let complete: Vec<&crate::markers::Block> = bs.blocks.iter().filter(|b| b.complete).collect();
            let span = match (complete.first(), complete.last()) {
                (Some(a), Some(b)) => (b.interval.end - a.interval.start + 1) as usize,
                _ => 0,
            };
            Ok((
                complete.iter().map(|b| (b.interval.len(), b.block_type.clone().expect("complete"))).collect(),
                span,
            ))
        })
        .collect::<Result<_>>()?;
    let total_span: usize = chunks.iter().map(|c| c.1).sum();
    if total_span == 0 {
        return Err(Error::Infeasible("(iv): no complete block in the scanned stretches; raise chunk_len".into()));
    }
    let mut lengths: Vec<usize> = chunks.iter().flat_map(|c| c.0.iter().map(|b| b.0)).collect();
    lengths.sort_unstable();
    let nchunks = chunks.len() as f64;
    let mean_span = total_span as f64 / nchunks;
    // Ratio estimator over chunks with its delta-method standard error.
    let ratio_at = |lo: usize, hi: usize| {
        let nums: Vec<f64> = chunks
            .iter()
            .map(|c| c.0.iter().filter(|b| b.0 >= lo && b.0 <= hi).map(|b| b.0 as f64).sum())
            .collect();
        let r = nums.iter().sum::<f64>() / total_span as f64;
        let var = chunks.iter().zip(&nums).map(|(c, n)| (n - r * c.1 as f64).powi(2)).sum::<f64>() / (nchunks - 1.0).max(1.0);
        (r, (var / nchunks).sqrt() / mean_span)
    };
    let mut max_len = None;
    for &len in &lengths {
        if len < ell_star {
            continue;
        }
        let (r, sd) = ratio_at(ell_star, len);
        if r - 3.0 * sd >= 1.0 - 2.0 * ep {
            max_len = Some(len);
            break;
        }
    }
    let Some(max_len) = max_len else {
        let (r, sd) = ratio_at(ell_star, usize::MAX);
        return Err(Error::Infeasible(format!(
            "(iv): the scanned blocks reach only {r:.4} ± {sd:.4} of the origin mass; raise block_chunks"
        )));
    };
    step("iv", format!("L = {max_len}"), format!("{} complete blocks scanned", lengths.len()));
    let type_count_log10 = type_count_log10(ell_star.max(1), max_len, k_mark);
    step("v", format!("types with length in [{ell_star}, {max_len}]"), format!("about 10^{type_count_log10:.1} types"));

    let k_block = k_block_for(eps);
    step("vi", format!("k_block = {k_block}"), "⌈1/ε′⌉ + 1".into());

    // (vii): a sample of in-range types, drawn length-biased from the scan.
    let mut in_range: Vec<&BlockType> = chunks
        .iter()
        .flat_map(|c| c.0.iter())
        .filter(|b| b.0 >= ell_star && b.0 <= max_len)
        .map(|b| &b.1)
        .collect();
    in_range.sort();
    in_range.dedup();
    let mut pick = root.substream(2 << 32);
    let mut sample_types = Vec::new();
    for _ in 0..cfg.type_samples.min(in_range.len()) {
        let t = in_range[pick.below(in_range.len())].clone();
        if !sample_types.contains(&t) {
            sample_types.push(t);
        }
    }
    sample_types.sort();
    let mut k_init_choices = BTreeMap::new();
    let mut census_needed = BTreeMap::new();
    for t in &sample_types {
        let choice = choose_k_initial_tail(&block_law_summary(t, p)?, ep, k_block)?;
        // k_init/q < ε′ needs q > k_init/ε′.
        let q = (choice.k_init as f64 / ep).floor() as u128 + 1;
        census_needed.insert(t.label(), choice.k_init as u128 + q * k_block as u128);
        k_init_choices.insert(t.label(), choice);
    }
    let k_init_text = k_init_choices.values().map(|c| c.k_init.to_string()).collect::<Vec<_>>().join(", ");
    step("vii", format!("k_init ∈ {{{k_init_text}}}"), format!("{} sampled types; tail-certified", sample_types.len()));

    // (viii): every type of 𝒯 needs its census in the origin's city. The
    // block count of a city is geometric with success probability
    // P(run ≥ k_rmark | run ≥ k_mark) = ((1−p)p)^{k_rmark − k_mark}.
    let min_needed = census_needed.values().min().copied().unwrap_or(0) as f64;
    let ln_blocks = type_count_log10 * std::f64::consts::LN_10 + min_needed.ln();
    let pq = rational::to_f64(&((Rational::one() - p) * p));
    let k_rmark_lower_bound = (k_mark as f64 + (ln_blocks - ep.ln()) / (-pq.ln())).ceil();
    step(
        "viii",
        format!("k_rmark ≥ {k_rmark_lower_bound}"),
        format!(
            "a city must hold about 10^{:.1} blocks; Monte Carlo over such cities is out of reach",
            ln_blocks / std::f64::consts::LN_10
        ),
    );

    let k_init = k_init_choices.iter().map(|(k, c)| (k.clone(), c.k_init)).collect();
    let plan = StarModPlan {
        mode: PlanMode::Schedule,
        p: format_rational(p),
        eps: Some(eps),
        eps_prime: Some(ep),
        delta: Some(delta),
        ell_star,
        max_len,
        k_mark,
        k_rmark: k_rmark_lower_bound as usize,
        k_block,
        types: sample_types,
        k_init,
        window_len: 0,
    };
    Ok(ScheduleReport {
        plan,
        steps,
        type_count_log10,
        k_init_choices,
        census_needed,
        k_rmark_lower_bound: Some(k_rmark_lower_bound),
        feasible: false,
        binding: Some("viii".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    #[test]
    fn euclid_examples() {
        assert_eq!(euclid_decompose(17, 5, 4), Some((3, 0)));
        assert_eq!(euclid_decompose(18, 5, 4), Some((3, 1)));
        assert_eq!(euclid_decompose(6, 5, 4), None);
    }

    #[test]
    fn block_codes_round_trip() {
        let t: BlockType = "2-2-3".parse().unwrap();
        assert_eq!(block_alphabet_size(&t), BigUint::from(12u32));
        for code in 0..12 {
            let mut w = vec![0u8; t.length()];
            w[2] = 0;
            w[3] = 1;
            write_block(&mut w, 0, &t, code);
            assert_eq!(read_block(&w, 0, &t), code);
            assert_eq!(&w[2..4], &[0, 1]);
        }
    }

    #[test]
    fn block_law_has_filler_marginals() {
        let t: BlockType = "1-2-2".parse().unwrap();
        let p = rat(3, 4);
        let rho = block_pair_law(&t, &p).unwrap();
        let a = filler_law(1, &p).unwrap().law;
        let b = filler_law(2, &p).unwrap().law;
        for (code, m) in rho.alpha().atoms() {
            let c = block_code_counts(&t, *code);
            assert_eq!(m, &(a.mass(c[0]) * b.mass(c[1])));
        }
        let s = block_law_summary(&t, &p).unwrap();
        assert!((s.h - entropy(&rho.joint().marginal_left())).abs() < 1e-12);
        assert!((s.ln_right_size - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn micro_configuration_keeps_copies() {
        let rho = block_pair_law(&"1".parse().unwrap(), &rat(3, 4)).unwrap();
        for q in 1..=3 {
            assert!(per_copy_law_preserved(&rho, 1, 2, q).unwrap());
        }
    }

    #[test]
    fn dstar_examples() {
        let a = vec![vec![0u8, 3, 1]; 10];
        assert_eq!(estimate_dstar(&a, &a, 1).unwrap().truncated, 0.0);
        let b = vec![vec![0u8, 0, 1]; 10];
        let d = estimate_dstar(&a, &b, 1).unwrap();
        assert_eq!(d.per_depth[0], 1.0);
        assert!(d.truncated >= 0.5);
        assert!(estimate_dstar(&a[..1], &b, 1).is_err());
    }

    #[test]
    fn schedule_formulas() {
        assert_eq!(k_block_for(0.5), 201);
        let mut prev = 0;
        for e in [0.9, 0.5, 0.3, 0.1, 0.05, 0.01] {
            let k = k_block_for(e);
            assert!(k >= prev);
            prev = k;
        }
        let (ell, delta) = weak_star_depth(0.005);
        assert_eq!(ell, 8);
        assert!(0.5f64.powi(ell as i32 + 1) <= delta);
        // With k_mark = 2 marker runs hold one primary marker: length 4 has
        // "4" and "1-2-1", length 5 has "5", "1-2-2" and "2-2-1".
        let count = |lo, hi, k| 10f64.powf(type_count_log10(lo, hi, k)).round();
        assert_eq!(count(1, 1, 2), 1.0);
        assert_eq!(count(3, 3, 2), 1.0);
        assert_eq!(count(4, 4, 2), 2.0);
        assert_eq!(count(5, 5, 2), 3.0);
    }

    /// Brute force over alternations.
    fn count_types(n: usize, k_mark: usize) -> usize {
        fn go(rest: usize, filler_next: bool, k_mark: usize) -> usize {
            if rest == 0 {
                return usize::from(!filler_next);
            }
            if filler_next {
                (1..=rest).map(|l| go(rest - l, false, k_mark)).sum()
            } else {
                (1..k_mark).filter(|c| 2 * c < rest).map(|c| go(rest - 2 * c, true, k_mark)).sum()
            }
        }
        go(n, true, k_mark)
    }

    #[test]
    fn type_counts_match_brute_force() {
        for k in 2..5 {
            for n in 1..16 {
                let got = 10f64.powf(type_count_log10(n, n, k)).round() as usize;
                assert_eq!(got, count_types(n, k), "n = {n}, k_mark = {k}");
            }
        }
        // Far beyond f64 range the log stays finite and grows linearly.
        let (a, b) = (type_count_log10(1, 20_000, 6), type_count_log10(1, 40_000, 6));
        assert!(a.is_finite() && (b / a - 2.0).abs() < 0.01);
    }

    #[test]
    fn destined_slots() {
        // k_init = 1, k_block = 3: positions 1, 2 destined; 3 undetermined.
        let d: Vec<_> = (0..7).map(|k| destined_slot(k, 1, 3)).collect();
        assert_eq!(d, vec![None, Some(0), Some(1), None, Some(2), Some(3), None]);
        assert!((undetermined_ratio(5, 3, 1, 4) - 9.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cylinder_laws_unchanged_inside_blocks() {
        let t = BlockType::new(vec![2, 2, 1]).unwrap();
        let r = block_cylinder_check(&t, &rat(3, 5), 1, 2, 1).unwrap();
        assert!(r.pass && r.copies == 3 && r.cylinders > 0, "{r:?}");
    }

    #[test]
    fn desk_run_small() {
        let types = ["1", "2", "3"].iter().map(|s| s.parse().unwrap()).collect();
        let plan = StarModPlan::desk(&rat(3, 5), 2, 4, 2, types, 1, 2048, 3).unwrap();
        let r = run_desk(&plan, 300, &RngStream::new(1, 0)).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.modified_blocks > 0);
    }
}
