//! One function per subcommand: resolved parameters in, [`Outcome`] out.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use monoshift::deljunco::{
    build_psi, classify, division_check, presmb_bound, success_probability, GoodnessContext,
};
use monoshift::dist::{dominates, entropy as shannon, monotone, quantile_coupling, Alphabet, FiniteDistribution, JointMass};
use monoshift::flow::strassen_check;
use monoshift::markers::{filler_audit, hat_pattern_distribution, BlockType, Side};
use monoshift::meshalkin::{
    match_parens_with, meshalkin_forward_with, meshalkin_inverse_with, verify_pushforward, ParityCode, VerifyConfig,
};
use monoshift::perturb::{
    almost_factor_check, block_cylinder_check, block_pair_law, build_plan, estimate_dbar, k_block_for,
    per_copy_law_preserved, run_desk, BaseJoining, PlanMode, ScheduleConfig, StarModPlan, StarModifier,
};
use monoshift::rational::{format_rational, parse_rational, Rational};
use monoshift::reductions::{onemark_check, twomark_check};
use monoshift::report::Table;
use monoshift::rng::RngStream;
use monoshift::star::{iterated_star_with_replacement, random_pair_law, star_couple, GroupedPairLaw, PairLaw};
use monoshift::Error;

use crate::config::require;
use crate::{Failure, Globals, Outcome};

fn dist(text: &str) -> Result<FiniteDistribution, Failure> {
    Ok(FiniteDistribution::parse(text)?)
}

fn texts(d: &FiniteDistribution) -> Vec<String> {
    d.masses().iter().map(format_rational).collect()
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct EntropyArgs {
    /// Masses, e.g. `1/2,1/4,1/4` or `0.5,0.25,0.25`.
    #[arg(long)]
    pub p: Option<String>,
}

pub fn entropy(a: EntropyArgs) -> Result<Outcome, Failure> {
    let p = dist(&require(a.p.clone(), "p")?)?;
    let h = shannon(&p);
    Outcome::new(&a, true, &json!({"p": texts(&p), "entropy_nats": h, "entropy_bits": h / std::f64::consts::LN_2}))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct PairArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    /// Fail unless `p` dominates `q`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
}

pub fn dominate(a: PairArgs) -> Result<Outcome, Failure> {
    let p = dist(&require(a.p.clone(), "p")?)?;
    let q = dist(&require(a.q.clone(), "q")?)?;
    let by_prefix = dominates(&p, &q)?;
    let coupling = quantile_coupling(&p, &q)?;
    let by_coupling = monotone(&coupling)?;
    let pass = by_prefix == by_coupling && (!a.assert.unwrap_or(false) || by_prefix);
    let result = json!({
        "dominates": by_prefix,
        "quantile_coupling_monotone": by_coupling,
        "routes_agree": by_prefix == by_coupling,
        "quantile_coupling": coupling.to_records(),
    });
    Outcome::new(&a, pass, &result)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct StrassenArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    /// Coordinatewise order on `[base]^len`, given as `base^len`; the
    /// default is the total order.
    #[arg(long)]
    pub product: Option<String>,
    /// Fail unless a monotone coupling exists.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
}

fn witness_valid(w: &JointMass, p: &FiniteDistribution, q: &FiniteDistribution) -> bool {
    let order = p.alphabet();
    w.marginal_left().masses() == p.masses()
        && w.marginal_right().masses() == q.masses()
        && w.atoms().all(|(x, y, _)| order.geq(x, y))
}

pub fn strassen(a: StrassenArgs) -> Result<Outcome, Failure> {
    let mut p = dist(&require(a.p.clone(), "p")?)?;
    let mut q = dist(&require(a.q.clone(), "q")?)?;
    if let Some(spec) = &a.product {
        let (base, len) = spec
            .split_once('^')
            .and_then(|(b, l)| Some((b.trim().parse().ok()?, l.trim().parse().ok()?)))
            .ok_or_else(|| Failure::Config(format!("--product wants base^len, got {spec:?}")))?;
        let alphabet = Alphabet::product_order(base, len)?;
        p = p.with_alphabet(alphabet.clone())?;
        q = q.with_alphabet(alphabet)?;
    }
    let r = strassen_check(&p, &q)?;
    let valid = r.witness.as_ref().map(|w| witness_valid(w, &p, &q));
    // On a total order the prefix-sum test is an independent second route.
    let prefix = if p.alphabet().is_total() { Some(dominates(&p, &q)?) } else { None };
    let agree = prefix.is_none_or(|d| d == r.feasible);
    let pass = valid.unwrap_or(true) && agree && (!a.assert.unwrap_or(false) || r.feasible);
    let result = json!({
        "feasible": r.feasible,
        "witness": r.witness.as_ref().map(|w| w.to_records()),
        "witness_valid": valid,
        "prefix_dominates": prefix,
        "routes_agree": agree,
    });
    Outcome::new(&a, pass, &result)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct FillerArgs {
    /// Probability of a one under `μ`.
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub max_n: Option<usize>,
}

pub fn filler(a: FillerArgs) -> Result<Outcome, Failure> {
    let p = parse_rational(&require(a.p.clone(), "p")?)?;
    let max_n = a.max_n.unwrap_or(10);
    let audits = (1..=max_n).map(|n| filler_audit(n, &p)).collect::<monoshift::Result<Vec<_>>>()?;
    let mut t = Table::new(&[
        "n",
        "dual_identity",
        "equal_filler_mass",
        "closed_form_matches_enumeration",
        "prefix_dominance",
        "conditioned_dominates",
        "coupling_monotone",
    ]);
    for r in &audits {
        t.push(vec![
            r.n.to_string(),
            r.dual_identity.to_string(),
            r.equal_filler_mass.to_string(),
            r.closed_form_matches_enumeration.map_or("skipped".into(), |b| b.to_string()),
            r.prefix_dominance.to_string(),
            r.conditioned_dominates.to_string(),
            r.coupling_monotone.to_string(),
        ]);
    }
    let pass = audits.iter().all(|r| r.passed());
    Ok(Outcome::new(&a, pass, &audits)?.table("audits", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct TauArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

pub fn tau_check(a: TauArgs) -> Result<Outcome, Failure> {
    let p = parse_rational(&require(a.p.clone(), "p")?)?;
    let max_len = a.max_len.unwrap_or(8);
    let mut t = Table::new(&["length", "pattern", "mu", "nu", "equal"]);
    let mut per_length = Vec::new();
    let mut mismatches = 0usize;
    for k in 1..=max_len {
        let mu = hat_pattern_distribution(k, &p, Side::Mu)?;
        let nu = hat_pattern_distribution(k, &p, Side::Nu)?;
        let keys: std::collections::BTreeSet<&String> = mu.keys().chain(nu.keys()).collect();
        let mut bad = 0;
        for key in &keys {
            let (m, n) = (mu.get(*key), nu.get(*key));
            let equal = m == n;
            bad += usize::from(!equal);
            let show = |r: Option<&Rational>| r.map_or("0".to_string(), format_rational);
            t.push(vec![k.to_string(), key.to_string(), show(m), show(n), equal.to_string()]);
        }
        let total_one = mu.values().sum::<Rational>() == Rational::from_integer(1.into());
        mismatches += bad + usize::from(!total_one);
        per_length.push(json!({"length": k, "patterns": keys.len(), "mismatches": bad, "mu_total_is_one": total_one}));
    }
    let result = json!({"p": format_rational(&p), "per_length": per_length, "mismatches": mismatches});
    Ok(Outcome::new(&a, mismatches == 0, &result)?.table("patterns", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct StarLawArgs {
    /// First pair law, e.g. `0,0:1/2;1,1:1/2`.
    #[arg(long)]
    pub rho1: Option<String>,
    /// Second pair law; defaults to the first.
    #[arg(long)]
    pub rho2: Option<String>,
}

pub fn star_law(a: StarLawArgs) -> Result<Outcome, Failure> {
    let z1 = PairLaw::parse(&require(a.rho1.clone(), "rho1")?)?;
    let z2 = match &a.rho2 {
        Some(t) => PairLaw::parse(t)?,
        None => z1.clone(),
    };
    let law = star_couple(&z1, &z2)?;
    let audit = monoshift::star::star_audit(&z1, &z2)?;
    let mut t = Table::new(&["x1", "y1", "x2", "y2", "mass"]);
    for (o, m) in law.law.atoms() {
        let mut row: Vec<String> = o.iter().map(|w| monoshift::deljunco::word_text(w)).collect();
        row.push(format_rational(m));
        t.push(row);
    }
    let pass = audit.pass;
    Ok(Outcome::new(&a, pass, &json!({"law": law.to_record(), "audit": audit}))?.table("law", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct StarAuditArgs {
    /// Number of random law pairs.
    #[arg(long)]
    pub laws: Option<usize>,
    /// Largest alphabet size on either side.
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Common denominator of the random masses.
    #[arg(long)]
    pub denominator: Option<u32>,
}

pub fn star_audit(a: StarAuditArgs, g: &Globals) -> Result<Outcome, Failure> {
    let (n, max_size, denom) = (a.laws.unwrap_or(200), a.max_size.unwrap_or(3), a.denominator.unwrap_or(12));
    if max_size == 0 {
        return Err(Failure::Config("--max-size must be positive".into()));
    }
    let mut rng = RngStream::new(g.seed, 0);
    let mut t = Table::new(&["index", "rho1", "rho2", "pairs_exact", "independent", "max_split", "split_bound", "pass"]);
    let mut failures = Vec::new();
    for k in 0..n {
        let mut dims = || (1 + rng.below(max_size), 1 + rng.below(max_size));
        let ((a1, b1), (a2, b2)) = (dims(), dims());
        let z1 = random_pair_law(a1, b1, denom, &mut rng)?;
        let z2 = random_pair_law(a2, b2, denom, &mut rng)?;
        let r = monoshift::star::star_audit(&z1, &z2)?;
        let show = |z: &PairLaw| {
            z.joint().atoms().map(|(x, y, m)| format!("{x},{y}:{}", format_rational(m))).collect::<Vec<_>>().join(";")
        };
        t.push(vec![
            k.to_string(),
            show(&z1),
            show(&z2),
            (r.first_pair_exact && r.second_pair_exact).to_string(),
            r.independence.passed().to_string(),
            r.fine_split.max_split.to_string(),
            r.fine_split.bound.to_string(),
            r.pass.to_string(),
        ]);
        if !r.pass {
            failures.push(json!({"index": k, "rho1": show(&z1), "rho2": show(&z2), "audit": r}));
        }
    }
    let result = json!({"laws": n, "failures": failures});
    Ok(Outcome::new(&a, failures.is_empty(), &result)?.table("laws", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct PsiArgs {
    /// Pair law, e.g. `0,0:1/4;1,0:1/2;1,1:1/4`.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub k_init: Option<usize>,
    #[arg(long)]
    pub k_block: Option<usize>,
    /// Number of replacement stages `n`.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Typicality slack; defaults to `h/(2(3 k_block − 1))`.
    #[arg(long)]
    pub eps: Option<f64>,
}

fn chain_for(rho: &PairLaw, k_init: usize, k_block: usize, stages: usize) -> Result<monoshift::star::ReplacementChain, Failure> {
    let z0 = GroupedPairLaw::product(rho, k_init)?;
    let zb = GroupedPairLaw::product(rho, k_block)?;
    Ok(iterated_star_with_replacement(&z0, &vec![zb; stages])?)
}

pub fn deljunco_psi(a: PsiArgs) -> Result<Outcome, Failure> {
    let rho = PairLaw::parse(&require(a.rho.clone(), "rho")?)?;
    let (ki, kb, n) = (a.k_init.unwrap_or(1), a.k_block.unwrap_or(2), a.stages.unwrap_or(1));
    let chain = chain_for(&rho, ki, kb, n)?;
    let ctx = GoodnessContext::new(&rho, ki, kb, a.eps)?;
    let law = &chain.stages[n];
    let psi = build_psi(law, &ctx)?;
    let success = success_probability(&psi, law)?;
    let desirable: Rational = classify(law, &ctx)?.into_iter().filter(|c| c.desirable).map(|c| c.mass).sum();
    let in_range = success >= Rational::from_integer(0.into()) && success <= Rational::from_integer(1.into());
    let exact_when_deterministic = !rho.is_deterministic() || success == Rational::from_integer(1.into());
    let result = json!({
        "h": ctx.h,
        "eps": ctx.eps,
        "stage": n,
        "table_entries": psi.table.len(),
        "default": psi.default,
        "success_probability": format_rational(&success),
        "success_probability_f64": monoshift::rational::to_f64(&success),
        "desirable_mass": format_rational(&desirable),
        "deterministic": rho.is_deterministic(),
    });
    let mut out = Outcome::new(&a, in_range && exact_when_deterministic, &result)?;
    out.files.push(("psi-table.json".into(), psi.to_json()));
    Ok(out)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct BoundArgs {
    #[arg(long)]
    pub rho: Option<String>,
    /// Comma-separated `k_init` values.
    #[arg(long)]
    pub k_inits: Option<String>,
    /// Comma-separated `k_block` values.
    #[arg(long)]
    pub k_blocks: Option<String>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
}

fn usize_list(text: &str, name: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| Failure::Config(format!("bad --{name} entry {s:?}"))))
        .collect()
}

pub fn deljunco_bound(a: BoundArgs) -> Result<Outcome, Failure> {
    let rho = PairLaw::parse(&require(a.rho.clone(), "rho")?)?;
    let k_inits = usize_list(a.k_inits.as_deref().unwrap_or("1,2,3"), "k-inits")?;
    let k_blocks = usize_list(a.k_blocks.as_deref().unwrap_or("2,3"), "k-blocks")?;
    let stages = a.stages.unwrap_or(2);
    let mut t = Table::new(&[
        "k_init",
        "k_block",
        "j",
        "not_desirable",
        "lhs",
        "rhs",
        "pass",
        "e2_max_conditional",
        "e2_bound",
        "division_max",
        "division_bound",
    ]);
    let mut rows = Vec::new();
    let mut pass = true;
    for &kb in &k_blocks {
        for &ki in &k_inits {
            let ctx = GoodnessContext::new(&rho, ki, kb, a.eps)?;
            let chain = chain_for(&rho, ki, kb, stages)?;
            for j in 1..=stages {
                let b = presmb_bound(&chain, &ctx, j)?;
                let (dmax, dbound) = division_check(&chain, &ctx, j)?;
                pass &= b.pass;
                t.push(vec![
                    ki.to_string(),
                    kb.to_string(),
                    j.to_string(),
                    format_rational(&b.not_desirable),
                    b.lhs.to_string(),
                    b.rhs.to_string(),
                    b.pass.to_string(),
                    b.e2_max_conditional.to_string(),
                    b.e2_bound.to_string(),
                    dmax.to_string(),
                    dbound.to_string(),
                ]);
                rows.push(json!({"k_init": ki, "k_block": kb, "eps": ctx.eps, "bound": b, "division": [dmax, dbound]}));
            }
        }
    }
    Ok(Outcome::new(&a, pass, &json!({"rows": rows}))?.table("bound", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct MapArgs {
    /// Window as digits, e.g. `0344`.
    #[arg(long)]
    pub input: Option<String>,
    /// Apply the inverse map instead.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub inverse: Option<bool>,
    /// Half of the right-parenthesis symbol; 2 gives the five-symbol example.
    #[arg(long)]
    pub m: Option<u8>,
}

fn digits(text: &str) -> Result<Vec<u8>, Failure> {
    text.trim()
        .chars()
        .map(|c| c.to_digit(10).map(|d| d as u8).ok_or_else(|| Failure::Config(format!("not a digit: {c:?}"))))
        .collect()
}

fn show_window(w: &[Option<u8>]) -> String {
    w.iter().map(|s| s.map_or('?', |d| char::from(b'0' + d))).collect()
}

pub fn meshalkin_map(a: MapArgs) -> Result<Outcome, Failure> {
    let input = digits(&require(a.input.clone(), "input")?)?;
    let code = ParityCode::new(a.m.unwrap_or(2))?;
    let inverse = a.inverse.unwrap_or(false);
    let (output, pass) = if inverse {
        if let Some(&s) = input.iter().find(|&&s| s as usize >= code.output_size()) {
            return Err(Failure::Config(format!("symbol {s} outside the output alphabet")));
        }
        let out = meshalkin_inverse_with(&input, code)?;
        // Mapping a recovered full window forward must give the input back.
        let pass = if out.iter().all(Option::is_some) {
            let x: Vec<u8> = out.iter().map(|s| s.expect("checked")).collect();
            meshalkin_forward_with(&match_parens_with(&x, code), code) == input.iter().map(|&s| Some(s)).collect::<Vec<_>>()
        } else {
            true
        };
        (out, pass)
    } else {
        if let Some(&s) = input.iter().find(|&&s| s as usize >= code.input_size()) {
            return Err(Failure::Config(format!("symbol {s} outside the input alphabet")));
        }
        let out = meshalkin_forward_with(&match_parens_with(&input, code), code);
        let pass = out.iter().zip(&input).all(|(o, &x)| o.is_none_or(|y| y <= x));
        (out, pass)
    };
    let text = show_window(&output);
    let result = json!({"input": a.input, "inverse": inverse, "output": text, "undefined": output.iter().filter(|s| s.is_none()).count()});
    let mut out = Outcome::new(&a, pass, &result)?;
    out.stdout = Some(text);
    Ok(out)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct VerifyArgs {
    /// Total input symbols drawn.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub inverse_windows: Option<usize>,
    #[arg(long)]
    pub inverse_window_len: Option<usize>,
    #[arg(long)]
    pub z_threshold: Option<f64>,
    #[arg(long)]
    pub m: Option<u8>,
}

pub fn meshalkin_verify(a: VerifyArgs, g: &Globals) -> Result<Outcome, Failure> {
    let d = VerifyConfig::default();
    let cfg = VerifyConfig {
        samples: a.samples.unwrap_or(d.samples),
        window_len: a.window_len.unwrap_or(d.window_len),
        inverse_windows: a.inverse_windows.unwrap_or(d.inverse_windows),
        inverse_window_len: a.inverse_window_len.unwrap_or(d.inverse_window_len),
        z_threshold: a.z_threshold.unwrap_or(d.z_threshold),
        ..d
    };
    let code = ParityCode::new(a.m.unwrap_or(2))?;
    let r = verify_pushforward(code, &cfg, &RngStream::new(g.seed, 0))?;
    let mut t = Table::new(&["symbol", "count", "frequency", "expected", "z"]);
    for s in 0..r.counts.len() {
        t.push(vec![
            s.to_string(),
            r.counts[s].to_string(),
            r.frequencies[s].to_string(),
            r.expected[s].to_string(),
            r.z_scores[s].to_string(),
        ]);
    }
    let pass = r.pass;
    Ok(Outcome::new(&a, pass, &r)?.table("marginals", t))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct PlanArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub origin_trials: Option<usize>,
    #[arg(long)]
    pub k_mark_cap: Option<usize>,
    #[arg(long)]
    pub block_chunks: Option<usize>,
    #[arg(long)]
    pub chunk_len: Option<usize>,
    #[arg(long)]
    pub type_samples: Option<usize>,
}

pub fn perturb_plan(a: PlanArgs, g: &Globals) -> Result<Outcome, Failure> {
    let p = parse_rational(a.p.as_deref().unwrap_or("3/4"))?;
    let eps = a.eps.unwrap_or(0.5);
    let d = ScheduleConfig::default();
    let cfg = ScheduleConfig {
        seed: g.seed,
        origin_trials: a.origin_trials.unwrap_or(d.origin_trials),
        k_mark_cap: a.k_mark_cap.unwrap_or(d.k_mark_cap),
        block_chunks: a.block_chunks.unwrap_or(d.block_chunks),
        chunk_len: a.chunk_len.unwrap_or(d.chunk_len),
        type_samples: a.type_samples.unwrap_or(d.type_samples),
    };
    let r = build_plan(&p, eps, &cfg)?;
    // A schedule is complete when it is feasible or names what binds.
    let pass = r.plan.k_block == k_block_for(eps) && (r.feasible || r.binding.is_some());
    let plan_json = serde_json::to_string_pretty(&r.plan).map_err(|e| Failure::Io(e.to_string()))?;
    let mut t = Table::new(&["item", "value", "note"]);
    for s in &r.steps {
        t.push(vec![s.item.clone(), s.value.clone(), s.note.clone()]);
    }
    let mut out = Outcome::new(&a, pass, &r)?.table("schedule", t);
    out.files.push(("plan.json".into(), plan_json));
    Ok(out)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct DeskArgs {
    /// Desk plan JSON (a bare plan or a `perturb plan` report); the flags
    /// below are used when absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub k_mark: Option<usize>,
    #[arg(long)]
    pub k_rmark: Option<usize>,
    #[arg(long)]
    pub k_block: Option<usize>,
    #[arg(long)]
    pub k_init: Option<usize>,
    /// Block types as alternation labels, e.g. `1 2 2-2-1`.
    #[arg(long, num_args = 1..)]
    pub types: Option<Vec<String>>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub ell_star: Option<usize>,
    /// Modified samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Skeletons for the d̄ estimate.
    #[arg(long)]
    pub skeletons: Option<usize>,
    /// Pairs drawn per skeleton for the d̄ estimate.
    #[arg(long)]
    pub per_skeleton: Option<usize>,
}

fn desk_plan(a: &DeskArgs) -> Result<StarModPlan, Failure> {
    if let Some(path) = &a.plan {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("bad plan file: {e}")))?;
        let v = v.pointer("/result/plan").or_else(|| v.get("plan")).unwrap_or(&v).clone();
        let plan: StarModPlan = serde_json::from_value(v).map_err(|e| Failure::Config(format!("bad plan: {e}")))?;
        if plan.mode == PlanMode::Schedule {
            return Err(Failure::Config("schedule-mode plans are reported, not simulated".into()));
        }
        return Ok(plan);
    }
    let p = parse_rational(a.p.as_deref().unwrap_or("3/5"))?;
    let labels = a.types.clone().unwrap_or_else(|| vec!["1".into(), "2".into(), "3".into()]);
    let types = labels.iter().map(|s| s.parse()).collect::<monoshift::Result<Vec<BlockType>>>()?;
    Ok(StarModPlan::desk(
        &p,
        a.k_mark.unwrap_or(2),
        a.k_rmark.unwrap_or(4),
        a.k_block.unwrap_or(2),
        types,
        a.k_init.unwrap_or(1),
        a.window_len.unwrap_or(2048),
        a.ell_star.unwrap_or(3),
    )?)
}

pub fn perturb_run(a: DeskArgs, g: &Globals) -> Result<Outcome, Failure> {
    let plan = desk_plan(&a)?;
    let p = plan.p()?;
    let root = RngStream::new(g.seed, 0);
    let run = run_desk(&plan, a.samples.unwrap_or(10_000), &root.substream(1))?;

    let (n_sk, per) = (a.skeletons.unwrap_or(200), a.per_skeleton.unwrap_or(200));
    let dbar = estimate_dbar(|| BaseJoining::new(&p), || StarModifier::new(&plan), &plan, n_sk, per, &root.substream(2))?;
    let dbar_self = estimate_dbar(|| BaseJoining::new(&p), || BaseJoining::new(&p), &plan, n_sk, per, &root.substream(2))?;

    let mut cylinders = BTreeMap::new();
    let mut cylinders_pass = true;
    for t in &plan.types {
        let ki = plan.k_init.get(&t.label()).copied().unwrap_or(1);
        match block_cylinder_check(t, &p, ki, plan.k_block, 1) {
            Ok(r) => {
                cylinders_pass &= r.pass;
                cylinders.insert(t.label(), json!(r));
            }
            Err(Error::SizeGuard { size, limit }) => {
                cylinders.insert(t.label(), json!({"skipped": format!("state space {size} exceeds {limit}")}));
            }
            Err(e) => return Err(e.into()),
        }
    }

    // One city, one type of length one, k_init = 1, k_block = 2.
    let micro_rho = block_pair_law(&BlockType::new(vec![1])?, &p)?;
    let micro: Vec<bool> = (1..=2).map(|q| per_copy_law_preserved(&micro_rho, 1, 2, q)).collect::<monoshift::Result<_>>()?;
    let micro_pass = micro.iter().all(|&b| b);

    let mut t = Table::new(&["type", "blocks", "x_max_abs_z", "y_max_abs_z"]);
    for (label, tally) in &run.per_type {
        t.push(vec![label.clone(), tally.blocks.to_string(), tally.x_max_abs_z.to_string(), tally.y_max_abs_z.to_string()]);
    }
    let pass = run.pass && cylinders_pass && micro_pass;
    let result = json!({
        "plan": plan,
        "run": run,
        "dbar": dbar,
        "dbar_identical_samplers": dbar_self,
        "block_cylinders": cylinders,
        "micro_per_copy_law": micro,
    });
    Ok(Outcome::new(&a, pass, &result)?.table("types", t))
}

pub fn perturb_check(a: DeskArgs, g: &Globals) -> Result<Outcome, Failure> {
    let plan = desk_plan(&a)?;
    let r = almost_factor_check(&plan, a.samples.unwrap_or(10_000), &RngStream::new(g.seed, 0))?;
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    let consistent = unit(r.model_marker_fraction)
        && unit(r.agreement_rate)
        && r.verdict == (r.model_marker_fraction >= r.model_marker_target && r.agreement_rate >= r.agreement_target);
    Outcome::new(&a, consistent, &json!({"plan": plan, "report": r}))
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct OnemarkArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long)]
    pub i: Option<usize>,
    #[arg(long)]
    pub j: Option<usize>,
    /// Fail unless the condition holds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
}

pub fn onemark(a: OnemarkArgs) -> Result<Outcome, Failure> {
    let p = dist(&require(a.p.clone(), "p")?)?;
    let q = dist(&require(a.q.clone(), "q")?)?;
    let v = onemark_check(&p, &q, require(a.i, "i")?, require(a.j, "j")?)?;
    let pass = !a.assert.unwrap_or(false) || v.holds;
    Outcome::new(&a, pass, &v)
}

#[derive(Args, Serialize, Deserialize, Debug, Default)]
#[serde(default)]
pub struct TwomarkArgs {
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub q: Option<String>,
    /// `i,j,k,l`.
    #[arg(long)]
    pub indices: Option<String>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub assert: Option<bool>,
}

pub fn twomark(a: TwomarkArgs) -> Result<Outcome, Failure> {
    let p = dist(&require(a.p.clone(), "p")?)?;
    let q = dist(&require(a.q.clone(), "q")?)?;
    let idx = usize_list(&require(a.indices.clone(), "indices")?, "indices")?;
    let [i, j, k, l] = idx[..] else {
        return Err(Failure::Config("--indices wants four entries i,j,k,l".into()));
    };
    let v = twomark_check(&p, &q, (i, j, k, l), a.n_max.unwrap_or(3))?;
    let pass = !a.assert.unwrap_or(false) || v.holds;
    Outcome::new(&a, pass, &v)
}
