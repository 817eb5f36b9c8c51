//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every check pairs a library result with an oracle written here from the
//! definitions, so the two routes share no code beyond the input types.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::Instant;

use num::{One, Zero};
use statrs::distribution::{ContinuousCDF, Normal};

use monoshift::deljunco::{build_psi, presmb_bound, success_probability, GoodnessContext};
use monoshift::dist::{dominates, monotone, quantile_coupling, FiniteDistribution, JointMass};
use monoshift::flow::strassen_check;
use monoshift::law::Word;
use monoshift::markers::{
    filler_audit, filler_law, filler_monotone_coupling, hat_pattern_distribution, BlockType, Side,
};
use monoshift::meshalkin::{match_parens, meshalkin_forward, meshalkin_inverse_full, verify_pushforward, ParityCode, VerifyConfig};
use monoshift::perturb::{
    block_cylinder_check, block_pair_law, build_plan, estimate_dbar, per_copy_law_preserved, run_desk, BaseJoining,
    ScheduleConfig, StarModPlan, StarModifier,
};
use monoshift::rational::{rat, Rational};
use monoshift::reductions::{onemark_check, twomark_check};
use monoshift::rng::RngStream;
use monoshift::star::{
    iterated_star_with_replacement, random_pair_law, star_couple, star_couple_with_replacement, GroupedPairLaw,
    PairLaw, ReplacementSampler,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: monoshift::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn pow(r: &Rational, k: usize) -> Rational {
    (0..k).fold(Rational::one(), |acc, _| acc * r)
}

/// `P(S ≥ t)` for every `t`, from a mass vector.
fn upper_tails(m: &[Rational]) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); m.len() + 1];
    for t in (0..m.len()).rev() {
        out[t] = &out[t + 1] + &m[t];
    }
    out
}

fn tail_dominates(p: &[Rational], q: &[Rational]) -> bool {
    upper_tails(p).iter().zip(upper_tails(q)).all(|(a, b)| *a >= b)
}

fn joint_map(j: &JointMass) -> BTreeMap<(usize, usize), Rational> {
    j.atoms().map(|(a, b, m)| ((a, b), m.clone())).collect()
}

// 1 ──────────────────────────────────────────────────────────────────────────

fn filler_suite() -> Check {
    let mut cases = 0;
    for p in [rat(11, 20), rat(3, 4), rat(9, 10)] {
        let q = Rational::one() - &p;
        for n in 1..=10usize {
            // Oracle: enumerate {0,1}^n; B_n is the set of non-increasing words.
            let mut mass_x = vec![Rational::zero(); n + 1];
            let mut mass_y = vec![Rational::zero(); n + 1];
            for bits in 0u32..(1 << n) {
                let w: Vec<u32> = (0..n).map(|k| (bits >> (n - 1 - k)) & 1).collect();
                if w.windows(2).any(|v| v[0] < v[1]) {
                    continue;
                }
                let ones = w.iter().filter(|&&b| b == 1).count();
                mass_x[ones] += pow(&p, ones) * pow(&q, n - ones);
                mass_y[ones] += pow(&q, ones) * pow(&p, n - ones);
            }
            let (zx, zy): (Rational, Rational) = (mass_x.iter().sum(), mass_y.iter().sum());
            ensure(zx == zy, || format!("P(X∈B_{n}) ≠ P(Y∈B_{n}) at p={p}"))?;
            let cx: Vec<Rational> = mass_x.iter().map(|m| m / &zx).collect();
            let cy: Vec<Rational> = mass_y.iter().map(|m| m / &zy).collect();
            ensure(tail_dominates(&cx, &cy), || format!("oracle: X* does not dominate Y* at n={n}, p={p}"))?;

            let audit = lib(filler_audit(n, &p))?;
            ensure(audit.passed(), || format!("library audit failed at n={n}, p={p}: {audit:?}"))?;
            ensure(lib(filler_law(n, &p))?.law.masses() == &cx[..], || format!("filler law differs at n={n}"))?;
            let c = lib(filler_monotone_coupling(n, &p))?;
            let mut left = vec![Rational::zero(); n + 1];
            let mut right = vec![Rational::zero(); n + 1];
            for ((a, b), m) in joint_map(&c) {
                ensure(a >= b, || format!("coupling puts mass on s_x={a} < s_y={b} at n={n}"))?;
                left[a] += &m;
                right[b] += &m;
            }
            ensure(left == cx && right == cy, || format!("coupling marginals wrong at n={n}, p={p}"))?;
            cases += 1;
        }
    }
    Ok(format!("{cases} (p, n) cases exact"))
}

// 2 ──────────────────────────────────────────────────────────────────────────

/// Probability of a marker/filler pattern of the inner `k` coordinates of an
/// iid window, by a transfer recursion over the last two bits.
fn pattern_probability(pattern: &[bool], one: &Rational) -> Rational {
    let zero_p = Rational::one() - one;
    let w = |b: u8| if b == 1 { one.clone() } else { zero_p.clone() };
    // state (b_{i−1}, b_i) → mass
    let mut state: BTreeMap<(u8, u8), Rational> = BTreeMap::new();
    for a in 0..2u8 {
        for b in 0..2u8 {
            state.insert((a, b), w(a) * w(b));
        }
    }
    for &is_marker in pattern {
        let mut next: BTreeMap<(u8, u8), Rational> = BTreeMap::new();
        for (&(a, b), m) in &state {
            for c in 0..2u8 {
                let marker = (a == 0 && b == 1) || (b == 0 && c == 1);
                if marker == is_marker {
                    *next.entry((b, c)).or_insert_with(Rational::zero) += m * w(c);
                }
            }
        }
        state = next;
    }
    state.values().sum()
}

fn tau_suite() -> Check {
    let mut patterns = 0;
    for p in [rat(3, 5), rat(3, 4)] {
        let q = Rational::one() - &p;
        for k in 1..=8usize {
            let mu = lib(hat_pattern_distribution(k, &p, Side::Mu))?;
            let nu = lib(hat_pattern_distribution(k, &p, Side::Nu))?;
            ensure(mu == nu, || format!("library laws differ at k={k}, p={p}"))?;
            for code in 0u32..(1 << k) {
                let pat: Vec<bool> = (0..k).map(|i| (code >> i) & 1 == 1).collect();
                let key: String = pat.iter().map(|&m| if m { 'M' } else { 'F' }).collect();
                let (om, on) = (pattern_probability(&pat, &p), pattern_probability(&pat, &q));
                ensure(om == on, || format!("oracle: τ ≠ τ′ on {key}"))?;
                let lm = mu.get(&key).cloned().unwrap_or_else(Rational::zero);
                ensure(lm == om, || format!("library and oracle disagree on {key} at p={p}"))?;
                patterns += 1;
            }
        }
    }
    Ok(format!("{patterns} patterns equal under both measures"))
}

// 3 ──────────────────────────────────────────────────────────────────────────

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn strassen_suite() -> Check {
    let mut pairs = 0;
    let mut dominating = 0;
    for n in 1..=3usize {
        let dists: Vec<Vec<Rational>> = compositions(12, n)
            .into_iter()
            .map(|c| c.into_iter().map(|u| rat(u as i64, 12)).collect())
            .collect();
        for p in &dists {
            for q in &dists {
                let pd = lib(FiniteDistribution::from_masses(p.clone()))?;
                let qd = lib(FiniteDistribution::from_masses(q.clone()))?;
                let oracle = tail_dominates(p, q);
                let d = lib(dominates(&pd, &qd))?;
                let c = lib(quantile_coupling(&pd, &qd))?;
                let m = lib(monotone(&c))?;
                let s = lib(strassen_check(&pd, &qd))?.feasible;
                ensure(d == oracle && m == oracle && s == oracle, || {
                    format!("p={p:?} q={q:?}: oracle {oracle}, dominates {d}, monotone {m}, strassen {s}")
                })?;
                ensure(c.marginal_left().masses() == &p[..] && c.marginal_right().masses() == &q[..], || {
                    format!("quantile coupling marginals wrong for p={p:?} q={q:?}")
                })?;
                pairs += 1;
                dominating += usize::from(oracle);
            }
        }
    }
    Ok(format!("{pairs} pairs, {dominating} dominating, three routes agree"))
}

// 4 ──────────────────────────────────────────────────────────────────────────

fn project(atoms: &BTreeMap<Vec<Word>, Rational>, idx: &[usize]) -> BTreeMap<Vec<Word>, Rational> {
    let mut out: BTreeMap<Vec<Word>, Rational> = BTreeMap::new();
    for (o, m) in atoms {
        *out.entry(idx.iter().map(|&i| o[i].clone()).collect()).or_insert_with(Rational::zero) += m;
    }
    out
}

fn independent(atoms: &BTreeMap<Vec<Word>, Rational>, a: &[usize], b: &[usize]) -> bool {
    let both: Vec<usize> = a.iter().chain(b).copied().collect();
    let (pa, pb, pab) = (project(atoms, a), project(atoms, b), project(atoms, &both));
    pa.iter().all(|(ka, ma)| {
        pb.iter().all(|(kb, mb)| {
            let key: Vec<Word> = ka.iter().chain(kb).cloned().collect();
            pab.get(&key).cloned().unwrap_or_else(Rational::zero) == ma * mb
        })
    })
}

fn word_pairs(rho: &PairLaw) -> BTreeMap<Vec<Word>, Rational> {
    rho.joint().atoms().map(|(a, b, m)| (vec![vec![a as u32], vec![b as u32]], m.clone())).collect()
}

/// Largest number of `key`-conditioned `a` values with two or more `b`.
fn max_split(atoms: &BTreeMap<Vec<Word>, Rational>, key: &[usize], a: usize, b: usize) -> usize {
    let mut seen: BTreeMap<Vec<Word>, BTreeMap<Word, BTreeSet<Word>>> = BTreeMap::new();
    for o in atoms.keys() {
        let k: Vec<Word> = key.iter().map(|&i| o[i].clone()).collect();
        seen.entry(k).or_default().entry(o[a].clone()).or_default().insert(o[b].clone());
    }
    seen.values().map(|m| m.values().filter(|s| s.len() >= 2).count()).max().unwrap_or(0)
}

fn star_suite() -> Check {
    let mut rng = RngStream::new(4, 0);
    let mut worst_plain = 0;
    let mut worst_repl = 0;
    for _ in 0..200 {
        let mut dims = || (1 + rng.below(3), 1 + rng.below(3));
        let ((a1, b1), (a2, b2)) = (dims(), dims());
        let z1 = lib(random_pair_law(a1, b1, 12, &mut rng))?;
        let z2 = lib(random_pair_law(a2, b2, 12, &mut rng))?;
        let s = lib(star_couple(&z1, &z2))?;
        let idx: Vec<usize> = ["x1", "y1", "x2", "y2"].iter().map(|n| lib(s.part(n))).collect::<Result<_, _>>()?;
        let atoms = s.law.atoms();
        ensure(atoms.values().sum::<Rational>() == Rational::one(), || "star law does not sum to 1".into())?;
        ensure(project(atoms, &[idx[0], idx[1]]) == word_pairs(&z1), || format!("(X₁′,Y₁′) ≠ Z₁ for {z1:?}"))?;
        ensure(project(atoms, &[idx[2], idx[3]]) == word_pairs(&z2), || format!("(X₂′,Y₂′) ≠ Z₂ for {z2:?}"))?;
        ensure(independent(atoms, &[idx[2]], &[idx[1], idx[0]]), || "X₂′ not independent of (Y₁′,X₁′)".into())?;
        ensure(independent(atoms, &[idx[1]], &[idx[2], idx[3]]), || "Y₁′ not independent of (X₂′,Y₂′)".into())?;
        let split = max_split(atoms, &[idx[2], idx[1]], idx[0], idx[3]);
        ensure(split < b2.max(1), || format!("plain split {split} exceeds |B|−1 = {}", b2 - 1))?;
        worst_plain = worst_plain.max(split);

        // Replacement with k_init = 1, k_block = 2: bound |B|^{k_block−1} − 1.
        let r = lib(star_couple_with_replacement(
            &lib(GroupedPairLaw::product(&z1, 1))?,
            &lib(GroupedPairLaw::product(&z1, 2))?,
        ))?;
        let ridx: Vec<usize> =
            ["x_prev", "x_new", "y_prev", "f"].iter().map(|n| lib(r.part(n))).collect::<Result<_, _>>()?;
        let split = max_split(r.law.atoms(), &[ridx[1], ridx[2]], ridx[0], ridx[3]);
        ensure(split < b1, || format!("replacement split {split} exceeds |B| − 1 = {}", b1 - 1))?;
        worst_repl = worst_repl.max(split);
    }
    Ok(format!("200 law pairs exact; largest split {worst_plain} (plain), {worst_repl} (replacement)"))
}

// 5 ──────────────────────────────────────────────────────────────────────────

fn fixed_rhos() -> Result<Vec<(&'static str, PairLaw)>, String> {
    Ok(vec![
        ("diagonal", lib(PairLaw::parse("0,0:1/2;1,1:1/2"))?),
        ("skew", lib(PairLaw::parse("0,0:1/4;1,0:1/2;1,1:1/4"))?),
        ("symmetric", lib(PairLaw::parse("0,0:1/3;0,1:1/6;1,0:1/6;1,1:1/3"))?),
    ])
}

fn replacement_suite() -> Check {
    let mut worst_z = 0.0f64;
    let (mut atoms, mut beyond_three) = (0, 0);
    for (name, rho) in fixed_rhos()? {
        let joint = joint_map(rho.joint());
        let alpha: BTreeMap<u32, Rational> = joint.iter().fold(BTreeMap::new(), |mut acc, ((a, _), m)| {
            *acc.entry(*a as u32).or_insert_with(Rational::zero) += m;
            acc
        });
        let beta: BTreeMap<u32, Rational> = joint.iter().fold(BTreeMap::new(), |mut acc, ((_, b), m)| {
            *acc.entry(*b as u32).or_insert_with(Rational::zero) += m;
            acc
        });
        let z0 = lib(GroupedPairLaw::product(&rho, 1))?;
        let z1 = lib(GroupedPairLaw::product(&rho, 2))?;
        let pair = lib(lib(star_couple_with_replacement(&z0, &z1))?.output_pair())?;
        let mut left: BTreeMap<Word, Rational> = BTreeMap::new();
        let mut right: BTreeMap<Word, Rational> = BTreeMap::new();
        let mut copies = vec![BTreeMap::<(usize, usize), Rational>::new(); 3];
        for ((x, y), m) in pair.atoms() {
            *left.entry(x.clone()).or_insert_with(Rational::zero) += m;
            *right.entry(y.clone()).or_insert_with(Rational::zero) += m;
            for c in 0..3 {
                *copies[c].entry((x[c] as usize, y[c] as usize)).or_insert_with(Rational::zero) += m;
            }
        }
        let cube = |law: &BTreeMap<u32, Rational>| -> BTreeMap<Word, Rational> {
            let mut out = BTreeMap::new();
            for (a, ma) in law {
                for (b, mb) in law {
                    for (c, mc) in law {
                        out.insert(vec![*a, *b, *c], ma * mb * mc);
                    }
                }
            }
            out
        };
        ensure(left == cube(&alpha), || format!("{name}: left marginal is not α³"))?;
        ensure(right == cube(&beta), || format!("{name}: right marginal is not β³"))?;
        for (c, m) in copies.iter_mut().enumerate() {
            m.retain(|_, v| !v.is_zero());
            ensure(*m == joint, || format!("{name}: copy {c} does not have law ρ"))?;
        }

        let draws = 100_000usize;
        let mut sampler = lib(ReplacementSampler::new(&z0, 2, 1))?;
        let mut rng = RngStream::new(5, 0);
        let mut counts: BTreeMap<(Word, Word), usize> = BTreeMap::new();
        for _ in 0..draws {
            *counts.entry(lib(sampler.sample(&mut rng))?).or_default() += 1;
        }
        ensure(counts.keys().all(|k| pair.atoms().contains_key(k)), || format!("{name}: sampler left the support"))?;
        // A 3σ test on the whole law: per-atom threshold with the family-wise
        // level of a single two-sided 3σ test, split over the atoms.
        let normal = Normal::standard();
        let level = 2.0 * normal.cdf(-3.0) / pair.atoms().len() as f64;
        let limit = -normal.inverse_cdf(level / 2.0);
        for (k, m) in pair.atoms() {
            let q = monoshift::rational::to_f64(m);
            let f = counts.get(k).copied().unwrap_or(0) as f64 / draws as f64;
            let sd = (q * (1.0 - q) / draws as f64).sqrt();
            let z = if sd > 0.0 { (f - q).abs() / sd } else { 0.0 };
            worst_z = worst_z.max(z);
            beyond_three += usize::from(z > 3.0);
            atoms += 1;
            ensure(z <= limit, || format!("{name}: atom {k:?} off by {z:.2}σ (limit {limit:.2})"))?;
        }
    }
    Ok(format!(
        "three ρ exact; sampler within the law-level 3σ band ({atoms} atoms, max |z| = {worst_z:.2}, {beyond_three} beyond 3σ individually)"
    ))
}

// 6 ──────────────────────────────────────────────────────────────────────────

fn deljunco_suite() -> Check {
    let mut cells = 0;
    let mut tightest = f64::INFINITY;
    for (name, rho) in fixed_rhos()? {
        for k_block in [2usize, 3] {
            for k_init in [1usize, 2, 3] {
                let z0 = lib(GroupedPairLaw::product(&rho, k_init))?;
                let zb = lib(GroupedPairLaw::product(&rho, k_block))?;
                let chain = lib(iterated_star_with_replacement(&z0, &[zb.clone(), zb]))?;
                let ctx = lib(GoodnessContext::new(&rho, k_init, k_block, None))?;
                for j in 0..=2 {
                    let b = lib(presmb_bound(&chain, &ctx, j))?;
                    ensure(b.pass, || format!("{name} k_init={k_init} k_block={k_block} j={j}: {b:?}"))?;
                    tightest = tightest.min(b.rhs - b.lhs);
                    if rho.is_deterministic() {
                        let psi = lib(build_psi(&chain.stages[j], &ctx))?;
                        let s = lib(success_probability(&psi, &chain.stages[j]))?;
                        ensure(s.is_one(), || format!("{name}: success {s} ≠ 1 at k_init={k_init} j={j}"))?;
                    }
                    cells += 1;
                }
            }
        }
    }
    Ok(format!("{cells} cells pass; smallest slack {tightest:.4}; deterministic ρ decoded with probability 1"))
}

// 7 ──────────────────────────────────────────────────────────────────────────

/// Forward map from the definition: a stack of open positions.
fn oracle_forward(x: &[u8]) -> Vec<Option<u8>> {
    let mut out = vec![None; x.len()];
    let mut open: Vec<usize> = Vec::new();
    for (i, &s) in x.iter().enumerate() {
        if s == 4 {
            if let Some(l) = open.pop() {
                out[l] = Some(x[l] / 2);
                out[i] = Some(2 + x[l] % 2);
            }
        } else {
            open.push(i);
        }
    }
    out
}

fn meshalkin_suite() -> Check {
    let r = lib(verify_pushforward(lib(ParityCode::new(2))?, &VerifyConfig::default(), &RngStream::new(7, 0)))?;
    ensure(r.samples == 1_000_000, || format!("ran {} samples", r.samples))?;
    ensure(r.z_scores[..4].iter().all(|z| z.abs() <= 3.0), || format!("z-scores {:?}", r.z_scores))?;
    ensure(r.counts[4] == 0, || format!("symbol 4 appeared {} times", r.counts[4]))?;
    ensure(r.monotone_violations == 0, || format!("{} monotonicity violations", r.monotone_violations))?;
    ensure(r.equivariance_checked > 0 && r.equivariance_failures == 0, || {
        format!("equivariance {}/{}", r.equivariance_failures, r.equivariance_checked)
    })?;
    ensure(r.inverse_failures == 0, || format!("{} inverse failures", r.inverse_failures))?;

    // 10⁴ fully matched windows: the span of an outermost matched pair.
    let mut rng = RngStream::new(8, 0);
    let (mut windows, mut attempts) = (0, 0);
    while windows < 10_000 {
        attempts += 1;
        ensure(attempts < 1_000_000, || "could not find matched windows".into())?;
        let x: Vec<u8> = (0..256).map(|_| if rng.below(2) == 0 { 4 } else { rng.below(4) as u8 }).collect();
        let pw = match_parens(&x);
        let fwd = meshalkin_forward(&pw);
        ensure(fwd == oracle_forward(&x), || "forward map disagrees with the stack oracle".into())?;
        let Some((lo, hi)) = (0..x.len())
            .filter_map(|i| pw.partner[i].filter(|&j| j > i).map(|j| (i, j)))
            .max_by_key(|(i, j)| j - i)
        else {
            continue;
        };
        let seg = &x[lo..=hi];
        let y: Vec<u8> = oracle_forward(seg).into_iter().map(|v| v.expect("segment is matched")).collect();
        let back = lib(meshalkin_inverse_full(&y, lib(ParityCode::new(2))?))?;
        ensure(back == seg, || format!("inverse∘forward ≠ id on {seg:?}"))?;
        windows += 1;
    }
    Ok(format!(
        "max |z| = {:.2} over 10⁶ samples; 10⁴ matched windows inverted exactly; {} equivariance checks",
        r.max_abs_z, r.equivariance_checked
    ))
}

// 8 ──────────────────────────────────────────────────────────────────────────

fn perturb_suite() -> Check {
    let types: Vec<BlockType> = ["1", "2", "3"].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|e: monoshift::Error| e.to_string())?;
    let p = rat(3, 5);
    let plan = lib(StarModPlan::desk(&p, 2, 4, 2, types.clone(), 1, 2048, 3))?;
    let root = RngStream::new(9, 0);
    let run = lib(run_desk(&plan, 100_000, &root.substream(0)))?;
    ensure(run.samples == 100_000, || format!("ran {} samples", run.samples))?;
    ensure(run.marker_violations == 0 && run.monotone_violations == 0 && run.unmodified_changes == 0, || {
        format!(
            "markers {}, monotone {}, locality {}",
            run.marker_violations, run.monotone_violations, run.unmodified_changes
        )
    })?;
    ensure(run.modified_blocks > 0, || "nothing was modified".into())?;

    let micro = lib(block_pair_law(&types[0], &p))?;
    for q in 1..=2 {
        ensure(lib(per_copy_law_preserved(&micro, 1, 2, q))?, || format!("micro-configuration per-copy law differs at q={q}"))?;
    }
    let mut cylinders = 0;
    for t in &types {
        let stages = if t.length() <= 2 { 2 } else { 1 };
        for q in 1..=stages {
            let r = lib(block_cylinder_check(t, &p, 1, 2, q))?;
            ensure(r.pass, || format!("cylinder probabilities changed inside type {}: {r:?}", t.label()))?;
            cylinders += r.cylinders;
        }
    }

    let same = lib(estimate_dbar(|| BaseJoining::new(&p), || BaseJoining::new(&p), &plan, 100, 100, &root.substream(1)))?;
    ensure(same.mean == 0.0, || format!("identical samplers gave d̄ = {}", same.mean))?;
    let d = lib(estimate_dbar(|| BaseJoining::new(&p), || StarModifier::new(&plan), &plan, 400, 200, &root.substream(2)))?;
    ensure(d.interval.0 <= d.mean && d.mean <= d.interval.1 && d.std_error.is_finite(), || format!("{d:?}"))?;
    Ok(format!(
        "{} modified blocks in 10⁵ samples, all invariants exact; {cylinders} in-block cylinders equal; d̄ = {:.4} ∈ [{:.4}, {:.4}] + {:.4} truncation",
        run.modified_blocks, d.mean, d.interval.0, d.interval.1, d.truncation_bound
    ))
}

// 9 ──────────────────────────────────────────────────────────────────────────

fn schedule_suite() -> Check {
    let fixture: serde_json::Value = serde_json::from_str(include_str!("fixtures/schedule_p3_4_eps1_2_seed0.json"))
        .map_err(|e| e.to_string())?;
    let cfg = ScheduleConfig { seed: 0, ..ScheduleConfig::default() };
    let a = lib(build_plan(&rat(3, 4), 0.5, &cfg))?;
    let b = lib(build_plan(&rat(3, 4), 0.5, &cfg))?;
    ensure(a == b, || "schedule is not deterministic under a fixed seed".into())?;
    ensure(a.plan.k_block == 201, || format!("k_block = {}", a.plan.k_block))?;
    let items: Vec<&str> = a.steps.iter().map(|s| s.item.as_str()).collect();
    ensure(items == ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii"], || format!("steps {items:?}"))?;
    ensure(a.feasible || a.binding.is_some(), || "neither feasible nor diagnosed".into())?;
    let k_init: Vec<usize> = a.plan.types.iter().map(|t| a.plan.k_init[&t.label()]).collect();
    let lengths: Vec<usize> = a.plan.types.iter().map(BlockType::length).collect();
    let got = serde_json::json!({
        "k_block": a.plan.k_block,
        "ell_star": a.plan.ell_star,
        "k_mark": a.plan.k_mark,
        "max_len": a.plan.max_len,
        "type_lengths": lengths,
        "k_init": k_init,
        "k_rmark_lower_bound": a.k_rmark_lower_bound,
        "feasible": a.feasible,
        "binding": a.binding,
    });
    for (key, value) in got.as_object().expect("object") {
        ensure(fixture[key] == *value, || format!("{key}: fixture {} vs {value}", fixture[key]))?;
    }
    ensure((a.type_count_log10 - fixture["type_count_log10"].as_f64().unwrap_or(0.0)).abs() < 1e-4, || {
        format!("type count 10^{}", a.type_count_log10)
    })?;
    Ok(format!(
        "k_block = 201, k_mark = {}, ℓ* = {}, feasible = {}, binding = {:?}",
        a.plan.k_mark, a.plan.ell_star, a.feasible, a.binding
    ))
}

// 10 ─────────────────────────────────────────────────────────────────────────

/// Whether `p ≽ q` on `[N]^n` with the coordinatewise order, by checking
/// `p(U) ≥ q(U)` on every up-set `U`.
fn upset_dominates(p: &[Rational], q: &[Rational], base: usize, n: usize) -> bool {
    let words: Vec<Vec<usize>> = (0..p.len())
        .map(|mut c| {
            let mut w = vec![0; n];
            for k in (0..n).rev() {
                w[k] = c % base;
                c /= base;
            }
            w
        })
        .collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(words[i].iter().sum::<usize>()));
    let above: Vec<Vec<usize>> = (0..p.len())
        .map(|i| {
            (0..p.len())
                .filter(|&j| j != i && words[j].iter().zip(&words[i]).all(|(a, b)| a >= b))
                .collect()
        })
        .collect();
    fn walk(
        k: usize,
        order: &[usize],
        above: &[Vec<usize>],
        inside: &mut Vec<bool>,
        mass: (Rational, Rational),
        p: &[Rational],
        q: &[Rational],
    ) -> bool {
        if k == order.len() {
            return mass.0 >= mass.1;
        }
        let e = order[k];
        if !walk(k + 1, order, above, inside, mass.clone(), p, q) {
            return false;
        }
        if above[e].iter().all(|&j| inside[j]) {
            inside[e] = true;
            let ok = walk(k + 1, order, above, inside, (&mass.0 + &p[e], &mass.1 + &q[e]), p, q);
            inside[e] = false;
            return ok;
        }
        true
    }
    walk(0, &order, &above, &mut vec![false; p.len()], (Rational::zero(), Rational::zero()), p, q)
}

/// `dⁿ` conditioned on `first` never being immediately followed by `second`.
fn avoiding_law(d: &[Rational], n: usize, first: usize, second: usize) -> Vec<Rational> {
    let base = d.len();
    let size = base.pow(n as u32);
    let mut out = vec![Rational::zero(); size];
    for (c, slot) in out.iter_mut().enumerate() {
        let w: Vec<usize> = (0..n).map(|k| (c / base.pow((n - 1 - k) as u32)) % base).collect();
        if w.windows(2).any(|v| v[0] == first && v[1] == second) {
            continue;
        }
        *slot = w.iter().map(|&a| d[a].clone()).product();
    }
    let z: Rational = out.iter().sum();
    out.into_iter().map(|m| m / &z).collect()
}

fn reductions_suite() -> Check {
    let p = lib(FiniteDistribution::parse("0.2,0.3,0.5"))?;
    let q = lib(FiniteDistribution::parse("0.5,0.3,0.2"))?;
    ensure(lib(onemark_check(&p, &q, 1, 1))?.holds, || "onemark fixture does not hold".into())?;

    let mut rng = RngStream::new(10, 0);
    let mut holds = 0;
    let mut levels = 0;
    for case in 0..20 {
        let n_sym = 2 + rng.below(2);
        let mut units = vec![1u32; n_sym];
        for _ in n_sym..12 {
            units[rng.below(n_sym)] += 1;
        }
        let pm: Vec<Rational> = units.iter().map(|&u| rat(u as i64, 12)).collect();
        let qm: Vec<Rational> = pm.iter().rev().cloned().collect();
        let top = n_sym - 1;
        let (i, j, k, l) = match case % 3 {
            0 => (top, 0, top, 0),
            1 if n_sym == 3 => (2, 0, 1, 1),
            _ => {
                let mut pick = || {
                    let (a, b) = (rng.below(n_sym), rng.below(n_sym));
                    (a.max(b), a.min(b))
                };
                let ((i, j), (k, l)) = (pick(), pick());
                (i, j, k, l)
            }
        };
        let pd = lib(FiniteDistribution::from_masses(pm.clone()))?;
        let qd = lib(FiniteDistribution::from_masses(qm.clone()))?;
        let v = lib(twomark_check(&pd, &qd, (i, j, k, l), 3))?;

        let mass_identity = &pm[i] * &pm[k] == &qm[j] * &qm[l];
        let p_dom = tail_dominates(&pm, &qm);
        let conditioned: Vec<bool> = (1..=3)
            .map(|n| upset_dominates(&avoiding_law(&pm, n, i, k), &avoiding_law(&qm, n, j, l), n_sym, n))
            .collect();
        let oracle_holds = v.equal_entropy && p_dom && mass_identity && conditioned.iter().all(|&b| b);
        ensure(v.equal_entropy, || format!("case {case}: reversed law has a different entropy"))?;
        ensure(v.mass_identity == mass_identity && v.p_dominates_q == p_dom && v.index_order, || {
            format!("case {case}: scalar fields differ: {v:?}")
        })?;
        let got: Vec<bool> = v.conditioned.iter().map(|c| c.dominates).collect();
        ensure(got == conditioned, || format!("case {case} p={pm:?} ({i},{j},{k},{l}): {got:?} vs oracle {conditioned:?}"))?;
        ensure(v.holds == oracle_holds, || format!("case {case}: holds {} vs oracle {oracle_holds}", v.holds))?;
        holds += usize::from(v.holds);
        levels += conditioned.iter().filter(|&&b| b).count();
    }
    Ok(format!("onemark fixture holds; 20 twomark cases match the up-set oracle ({holds} hold, {levels}/60 levels dominate)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("filler-set domination and monotone filler coupling", filler_suite),
        ("skeleton laws equal under both measures", tau_suite),
        ("domination, quantile coupling and max-flow agree", strassen_suite),
        ("star-coupling exactness", star_suite),
        ("replacement-construction marginals", replacement_suite),
        ("non-desirable mass bound", deljunco_suite),
        ("Meshalkin map", meshalkin_suite),
        ("star-modification invariants", perturb_suite),
        ("parameter schedule", schedule_suite),
        ("reduction checkers", reductions_suite),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name} ({secs:.1} s): {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name} ({secs:.1} s): {why}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
