use num::One;
use proptest::prelude::*;

use monoshift::dist::{dominates, monotone, quantile_coupling, split_report, FiniteDistribution};
use monoshift::flow::strassen_check;
use monoshift::markers::{filler_law, filler_monotone_coupling, hat_pattern_distribution, Side};
use monoshift::meshalkin::{match_parens, meshalkin_forward, meshalkin_inverse_full, ParityCode};
use monoshift::markers::{BinaryWindow, HatSequence};
use monoshift::perturb::{estimate_dbar, run_desk, BaseJoining, PairSampler, StarModPlan};
use monoshift::rational::{rat, Rational};
use monoshift::rng::RngStream;
use monoshift::star::{random_pair_law, star_audit};

/// Positive integer weights normalized to a distribution.
fn distribution(max_len: usize) -> impl Strategy<Value = Vec<Rational>> {
    prop::collection::vec(0u32..8, 1..=max_len).prop_filter_map("zero total", |w| {
        let total: u32 = w.iter().sum();
        (total > 0).then(|| w.iter().map(|&x| rat(x as i64, total as i64)).collect())
    })
}

fn pair(max_len: usize) -> impl Strategy<Value = (Vec<Rational>, Vec<Rational>)> {
    (1..=max_len).prop_flat_map(|n| {
        let one = prop::collection::vec(0u32..8, n);
        (one.clone(), one).prop_filter_map("zero total", |(a, b)| {
            let norm = |w: Vec<u32>| {
                let total: u32 = w.iter().sum();
                (total > 0).then(|| w.iter().map(|&x| rat(x as i64, total as i64)).collect::<Vec<_>>())
            };
            Some((norm(a)?, norm(b)?))
        })
    })
}

fn prob() -> impl Strategy<Value = Rational> {
    (1i64..20).prop_map(|k| rat(20 + k, 40))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quantile_coupling_has_the_right_marginals((p, q) in pair(5)) {
        let (pd, qd) = (FiniteDistribution::from_masses(p.clone()).unwrap(), FiniteDistribution::from_masses(q.clone()).unwrap());
        let c = quantile_coupling(&pd, &qd).unwrap();
        prop_assert_eq!(c.marginal_left().masses().to_vec(), p.clone());
        prop_assert_eq!(c.marginal_right().masses().to_vec(), q);
        // Every left symbol except the last one met splits at most once.
        prop_assert!(split_report(&c).count < p.len().max(1));
    }

    #[test]
    fn domination_monotone_coupling_and_flow_agree((p, q) in pair(4)) {
        let (pd, qd) = (FiniteDistribution::from_masses(p).unwrap(), FiniteDistribution::from_masses(q).unwrap());
        let d = dominates(&pd, &qd).unwrap();
        prop_assert_eq!(monotone(&quantile_coupling(&pd, &qd).unwrap()).unwrap(), d);
        let s = strassen_check(&pd, &qd).unwrap();
        prop_assert_eq!(s.feasible, d);
        if let Some(w) = s.witness {
            prop_assert!(monotone(&w).unwrap());
            prop_assert_eq!(w.marginal_left(), pd);
            prop_assert_eq!(w.marginal_right(), qd);
        }
    }

    #[test]
    fn domination_is_reflexive(p in distribution(6)) {
        let pd = FiniteDistribution::from_masses(p).unwrap();
        prop_assert!(dominates(&pd, &pd).unwrap());
    }

    #[test]
    fn filler_coupling_is_monotone(n in 1usize..12, p in prob()) {
        let c = filler_monotone_coupling(n, &p).unwrap();
        prop_assert!(c.atoms().all(|(a, b, _)| a >= b));
        prop_assert_eq!(c.marginal_left().masses().to_vec(), filler_law(n, &p).unwrap().law.masses().to_vec());
        let total: Rational = c.atoms().map(|(_, _, m)| m.clone()).sum();
        prop_assert!(total.is_one());
    }

    #[test]
    fn skeleton_laws_agree(k in 1usize..7, p in prob()) {
        let mu = hat_pattern_distribution(k, &p, Side::Mu).unwrap();
        prop_assert_eq!(&mu, &hat_pattern_distribution(k, &p, Side::Nu).unwrap());
        prop_assert!(mu.values().sum::<Rational>().is_one());
    }

    #[test]
    fn star_coupling_split_bound(a1 in 1usize..4, b1 in 1usize..4, a2 in 1usize..4, b2 in 1usize..4, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let z1 = random_pair_law(a1, b1, 12, &mut rng).unwrap();
        let z2 = random_pair_law(a2, b2, 12, &mut rng).unwrap();
        let audit = star_audit(&z1, &z2).unwrap();
        prop_assert!(audit.pass, "{:?}", audit);
        prop_assert!(audit.fine_split.max_split < b2);
    }

    #[test]
    fn meshalkin_map_is_monotone_and_invertible(x in prop::collection::vec(0u8..5, 0..80)) {
        let pw = match_parens(&x);
        let y = meshalkin_forward(&pw);
        for (i, v) in y.iter().enumerate() {
            prop_assert_eq!(v.is_some(), pw.matched(i));
            if let Some(v) = v {
                prop_assert!(*v <= x[i]);
                prop_assert!(*v < 4);
            }
        }
        // Any matched pair spans a fully matched segment.
        for i in 0..x.len() {
            if let Some(j) = pw.partner[i].filter(|&j| j > i) {
                let seg: Vec<u8> = y[i..=j].iter().map(|v| v.unwrap()).collect();
                prop_assert_eq!(&meshalkin_inverse_full(&seg, ParityCode::new(2).unwrap()).unwrap()[..], &x[i..=j]);
            }
        }
    }

    #[test]
    fn star_modification_keeps_markers_and_order(seed in any::<u64>()) {
        let types = vec!["1".parse().unwrap(), "2".parse().unwrap()];
        let plan = StarModPlan::desk(&rat(3, 5), 2, 4, 2, types, 1, 256, 3).unwrap();
        let r = run_desk(&plan, 40, &RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(r.marker_violations, 0);
        prop_assert_eq!(r.monotone_violations, 0);
        prop_assert_eq!(r.unmodified_changes, 0);
    }
}

/// The base joining on a stream independent of the one it is handed.
struct Independent(BaseJoining);

impl PairSampler for Independent {
    fn sample(&mut self, t: &HatSequence, rng: &mut RngStream) -> monoshift::Result<(BinaryWindow, BinaryWindow)> {
        self.0.sample(t, &mut rng.substream(1))
    }
}

#[test]
fn dbar_interval_shrinks_like_root_n() {
    let types = vec!["1".parse().unwrap(), "2".parse().unwrap(), "3".parse().unwrap()];
    let p = rat(3, 5);
    let plan = StarModPlan::desk(&p, 2, 4, 2, types, 1, 256, 2).unwrap();
    let root = RngStream::new(21, 0);
    let est = |n: usize, s: u64| {
        let b = || BaseJoining::new(&p).map(Independent);
        estimate_dbar(|| BaseJoining::new(&p), b, &plan, n, 4, &root.substream(s)).unwrap()
    };
    let (small, large) = (est(100, 1), est(1600, 2));
    assert!(small.std_error > 0.0 && large.std_error > 0.0);
    // Sixteen times the skeletons: a fourfold narrower interval, up to noise.
    let ratio = small.std_error / large.std_error;
    assert!((2.5..6.5).contains(&ratio), "ratio {ratio}");
    assert!((small.mean - large.mean).abs() <= 3.0 * small.std_error);
}
