//! Exact max-flow (Dinic) over big-integer capacities and the finite-poset
//! monotone-coupling feasibility test built on it.

use std::collections::VecDeque;

use num::bigint::BigInt;
use num::{Signed, Zero};

use crate::dist::{FiniteDistribution, JointMass};
use crate::error::{Error, Result};
use crate::rational::{common_denominator, Rational};

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    cap: BigInt,
}

/// Directed flow network with exact integer capacities.
#[derive(Clone, Debug)]
pub struct FlowNetwork {
    edges: Vec<Edge>,
    adjacent: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork { edges: Vec::new(), adjacent: vec![Vec::new(); nodes] }
    }

    /// Adds `from → to` with capacity `cap`; returns the edge id.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: BigInt) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap });
        self.edges.push(Edge { to: from, cap: BigInt::zero() });
        self.adjacent[from].push(id);
        self.adjacent[to].push(id + 1);
        id
    }

    /// Flow currently routed through edge `id` (its reverse residual).
    pub fn flow(&self, id: usize) -> &BigInt {
        &self.edges[id ^ 1].cap
    }

    fn levels(&self, source: usize, sink: usize) -> Option<Vec<usize>> {
        let mut level = vec![usize::MAX; self.adjacent.len()];
        level[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adjacent[v] {
                let edge = &self.edges[e];
                if edge.cap.is_positive() && level[edge.to] == usize::MAX {
                    level[edge.to] = level[v] + 1;
                    queue.push_back(edge.to);
                }
            }
        }
        (level[sink] != usize::MAX).then_some(level)
    }

    fn augment(
        &mut self,
        v: usize,
        sink: usize,
        limit: BigInt,
        level: &[usize],
        next: &mut [usize],
    ) -> BigInt {
        if v == sink {
            return limit;
        }
        while next[v] < self.adjacent[v].len() {
            let e = self.adjacent[v][next[v]];
            let to = self.edges[e].to;
            if self.edges[e].cap.is_positive() && level[to] == level[v] + 1 {
                let push = if self.edges[e].cap < limit { self.edges[e].cap.clone() } else { limit.clone() };
                let got = self.augment(to, sink, push, level, next);
                if got.is_positive() {
                    self.edges[e].cap -= &got;
                    self.edges[e ^ 1].cap += &got;
                    return got;
                }
            }
            next[v] += 1;
        }
        BigInt::zero()
    }

    /// Maximum `source → sink` flow; the network keeps the final flow.
    pub fn max_flow(&mut self, source: usize, sink: usize) -> BigInt {
        let bound: BigInt = self.adjacent[source].iter().map(|&e| &self.edges[e].cap).sum();
        let mut total = BigInt::zero();
        while let Some(level) = self.levels(source, sink) {
            let mut next = vec![0; self.adjacent.len()];
            loop {
                let pushed = self.augment(source, sink, bound.clone(), &level, &mut next);
                if pushed.is_zero() {
                    break;
                }
                total += pushed;
            }
        }
        total
    }
}

/// Outcome of [`strassen_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct StrassenResult {
    pub feasible: bool,
    pub witness: Option<JointMass>,
}

/// Decides whether `p` and `q` admit a coupling supported on `{(a, b): a ≽ b}`
/// by exact max-flow on the bipartite comparability graph. A feasible
/// instance returns a witness coupling read off the flow.
pub fn strassen_check(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<StrassenResult> {
    if p.alphabet() != q.alphabet() {
        return Err(Error::AlphabetMismatch("strassen_check needs a shared alphabet".into()));
    }
    let alphabet = p.alphabet();
    let n = alphabet.size();
    let denom = common_denominator(p.masses().iter().chain(q.masses()));
    let scaled = |m: &Rational| -> BigInt { (m * Rational::from_integer(denom.clone())).to_integer() };
    let (source, sink) = (2 * n, 2 * n + 1);
    let mut net = FlowNetwork::new(2 * n + 2);
    let left: Vec<usize> = p.support().collect();
    let right: Vec<usize> = q.support().collect();
    for &a in &left {
        net.add_edge(source, a, scaled(p.mass(a)));
    }
    for &b in &right {
        net.add_edge(n + b, sink, scaled(q.mass(b)));
    }
    let mut pairs = Vec::new();
    for &a in &left {
        for &b in &right {
            if alphabet.geq(a, b) {
                pairs.push((a, b, net.add_edge(a, n + b, denom.clone())));
            }
        }
    }
    let flow = net.max_flow(source, sink);
    if flow != denom {
        return Ok(StrassenResult { feasible: false, witness: None });
    }
    let atoms: Vec<((usize, usize), Rational)> = pairs
        .into_iter()
        .filter(|&(_, _, e)| net.flow(e).is_positive())
        .map(|(a, b, e)| ((a, b), Rational::new(net.flow(e).clone(), denom.clone())))
        .collect();
    let witness = JointMass::new(alphabet.clone(), alphabet.clone(), atoms)?;
    Ok(StrassenResult { feasible: true, witness: Some(witness) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{dominates, monotone, Alphabet};

    #[test]
    fn max_flow_small_network() {
        let mut net = FlowNetwork::new(4);
        net.add_edge(0, 1, 3.into());
        net.add_edge(0, 2, 2.into());
        net.add_edge(1, 2, 1.into());
        net.add_edge(1, 3, 2.into());
        net.add_edge(2, 3, 3.into());
        assert_eq!(net.max_flow(0, 3), BigInt::from(5));
    }

    #[test]
    fn total_order_agrees_with_domination() {
        let p = FiniteDistribution::parse("0.3,0.7").unwrap();
        let q = FiniteDistribution::parse("0.7,0.3").unwrap();
        let r = strassen_check(&p, &q).unwrap();
        assert!(r.feasible);
        let w = r.witness.unwrap();
        assert!(monotone(&w).unwrap());
        assert_eq!(w.marginal_left(), p);
        assert_eq!(w.marginal_right(), q);
        assert!(!strassen_check(&q, &p).unwrap().feasible);
        assert!(dominates(&p, &q).unwrap());
    }

    #[test]
    fn poset_with_incomparable_symbols() {
        // Diamond: 3 ≽ 1, 3 ≽ 2, 1 ≽ 0, 2 ≽ 0; 1 and 2 incomparable.
        let mut geq = vec![vec![false; 4]; 4];
        for (a, b) in [(0, 0), (1, 1), (2, 2), (3, 3), (1, 0), (2, 0), (3, 0), (3, 1), (3, 2)] {
            geq[a][b] = true;
        }
        let alphabet = Alphabet::poset(geq).unwrap();
        let p = FiniteDistribution::new(alphabet.clone(), crate::rational::parse_rational_list("0,1,0,0").unwrap()).unwrap();
        let q = FiniteDistribution::new(alphabet.clone(), crate::rational::parse_rational_list("0,0,1,0").unwrap()).unwrap();
        assert!(!strassen_check(&p, &q).unwrap().feasible);
        let r = strassen_check(&p, &p).unwrap();
        assert!(r.feasible);
        assert_eq!(r.witness.unwrap(), JointMass::diagonal(&p).unwrap());
    }
}
