//! Checkers for the one-marker and two-marker reduction conditions under
//! which the monotone isomorphism argument extends to larger alphabets.

use num::Zero;
use serde::{Deserialize, Serialize};

use crate::dist::{dominates, entropy, Alphabet, FiniteDistribution};
use crate::error::{Error, Result};
use crate::flow::strassen_check;
use crate::rational::{one, zero, Rational};

/// Exact-enumeration guard for `Nⁿ`.
pub const TWOMARK_STATE_LIMIT: u128 = 10_000_000;

pub const ENTROPY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelVerdict {
    pub n: usize,
    pub dominates: bool,
}

/// Every condition of a reduction check, with `holds` their conjunction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionVerdict {
    pub entropy_gap: f64,
    pub equal_entropy: bool,
    pub p_dominates_q: bool,
    pub index_order: bool,
    pub mass_identity: bool,
    pub conditioned: Vec<LevelVerdict>,
    pub holds: bool,
}

fn check_symbols(p: &FiniteDistribution, q: &FiniteDistribution, symbols: &[usize]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::AlphabetMismatch(format!("sizes {} and {}", p.len(), q.len())));
    }
    if let Some(s) = symbols.iter().find(|&&s| s >= p.len()) {
        return Err(Error::Parameter(format!("symbol {s} outside alphabet of size {}", p.len())));
    }
    Ok(())
}

/// `p` conditioned to avoid `symbol`, kept on the full alphabet with zero
/// mass at the removed symbol.
fn remove_symbol(d: &FiniteDistribution, symbol: usize) -> Result<FiniteDistribution> {
    if *d.mass(symbol) == one() {
        return Err(Error::DegenerateCondition(format!("symbol {symbol} carries all the mass")));
    }
    d.condition(|a| a != symbol)
}

/// One-marker condition: `i ≥ j`, `pᵢ = q_j`, and `p` without `i` dominates
/// `q` without `j`, on top of equal entropy and `p` dominating `q`.
pub fn onemark_check(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    i: usize,
    j: usize,
) -> Result<ReductionVerdict> {
    check_symbols(p, q, &[i, j])?;
    let entropy_gap = (entropy(p) - entropy(q)).abs();
    let equal_entropy = entropy_gap <= ENTROPY_TOLERANCE;
    let p_dominates_q = dominates(p, q)?;
    let index_order = i >= j;
    let mass_identity = p.mass(i) == q.mass(j);
    let conditioned = dominates(&remove_symbol(p, i)?, &remove_symbol(q, j)?)?;
    Ok(ReductionVerdict {
        entropy_gap,
        equal_entropy,
        p_dominates_q,
        index_order,
        mass_identity,
        conditioned: vec![LevelVerdict { n: 1, dominates: conditioned }],
        holds: equal_entropy && p_dominates_q && index_order && mass_identity && conditioned,
    })
}

/// Law of `dⁿ` conditioned on no occurrence of `first` immediately followed
/// by `second`, on `[N]ⁿ` with the coordinatewise order. Words are encoded
/// most-significant coordinate first.
pub fn forbidden_pair_law(
    d: &FiniteDistribution,
    n: usize,
    first: usize,
    second: usize,
) -> Result<FiniteDistribution> {
    let base = d.len();
    let size = (base as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > TWOMARK_STATE_LIMIT {
        return Err(Error::SizeGuard { size, limit: TWOMARK_STATE_LIMIT });
    }
    let alphabet = Alphabet::product_order(base, n)?;
    let mut mass = vec![zero(); size as usize];
    let mut digits = vec![0usize; n];
    for (code, slot) in mass.iter_mut().enumerate() {
        let mut c = code;
        for k in (0..n).rev() {
            digits[k] = c % base;
            c /= base;
        }
        if digits.windows(2).any(|w| w[0] == first && w[1] == second) {
            continue;
        }
        let m: Rational = digits.iter().map(|&a| d.mass(a).clone()).product();
        *slot = m;
    }
    let total: Rational = mass.iter().sum();
    if total.is_zero() {
        return Err(Error::DegenerateCondition(format!(
            "no length-{n} word avoids {first} followed by {second}"
        )));
    }
    for m in mass.iter_mut() {
        *m /= &total;
    }
    FiniteDistribution::new(alphabet, mass)
}

/// Two-marker condition: `i ≥ j`, `k ≥ l`, `pᵢp_k = q_jq_l`, and for every
/// `1 ≤ n ≤ n_max` the forbidden-pair conditioned `pⁿ` dominates the
/// conditioned `qⁿ` in the coordinatewise order (decided by max-flow).
pub fn twomark_check(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    (i, j, k, l): (usize, usize, usize, usize),
    n_max: usize,
) -> Result<ReductionVerdict> {
    check_symbols(p, q, &[i, j, k, l])?;
    let entropy_gap = (entropy(p) - entropy(q)).abs();
    let equal_entropy = entropy_gap <= ENTROPY_TOLERANCE;
    let p_dominates_q = dominates(p, q)?;
    let index_order = i >= j && k >= l;
    let mass_identity = p.mass(i) * p.mass(k) == q.mass(j) * q.mass(l);
    let mut conditioned = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let pn = forbidden_pair_law(p, n, i, k)?;
        let qn = forbidden_pair_law(q, n, j, l)?;
        conditioned.push(LevelVerdict { n, dominates: strassen_check(&pn, &qn)?.feasible });
    }
    let levels_ok = conditioned.iter().all(|v| v.dominates);
    Ok(ReductionVerdict {
        entropy_gap,
        equal_entropy,
        p_dominates_q,
        index_order,
        mass_identity,
        conditioned,
        holds: equal_entropy && p_dominates_q && index_order && mass_identity && levels_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(text: &str) -> FiniteDistribution {
        FiniteDistribution::parse(text).unwrap()
    }

    #[test]
    fn onemark_fixture() {
        let v = onemark_check(&d("0.2,0.3,0.5"), &d("0.5,0.3,0.2"), 1, 1).unwrap();
        assert!(v.holds);
        assert!(!onemark_check(&d("0.2,0.3,0.5"), &d("0.5,0.3,0.2"), 0, 1).unwrap().holds);
    }

    #[test]
    fn onemark_identical_laws() {
        let p = d("1/6,1/3,1/2");
        for i in 0..3 {
            assert!(onemark_check(&p, &p, i, i).unwrap().holds);
        }
        assert!(matches!(
            onemark_check(&d("1,0"), &d("1,0"), 0, 0),
            Err(Error::DegenerateCondition(_))
        ));
    }

    #[test]
    fn twomark_length_one_is_plain_domination() {
        let (p, q) = (d("0.2,0.3,0.5"), d("0.5,0.3,0.2"));
        let v = twomark_check(&p, &q, (2, 0, 2, 0), 1).unwrap();
        assert_eq!(v.conditioned[0].dominates, dominates(&p, &q).unwrap());
    }

    #[test]
    fn twomark_identical_laws() {
        let p = d("1/4,1/4,1/2");
        let v = twomark_check(&p, &p, (1, 1, 2, 2), 3).unwrap();
        assert!(v.holds);
        assert_eq!(v.conditioned.len(), 3);
    }

    #[test]
    fn forbidden_pair_law_excludes_words() {
        let law = forbidden_pair_law(&d("1/2,1/2"), 2, 0, 1).unwrap();
        // Remaining words 00, 10, 11 with equal weight; 01 (code 1) excluded.
        assert!(law.mass(1).is_zero());
        assert_eq!(*law.mass(0), crate::rational::rat(1, 3));
        assert!(forbidden_pair_law(&d("1/2,1/2"), 30, 0, 1).is_err());
    }
}
