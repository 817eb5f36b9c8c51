"""Smoke test for the monoshift extension module.

Build and run:

    cargo build --release -p monoshift-py --features extension-module
    cp target/release/libmonoshift.so python/monoshift.so
    python3 python/smoke_test.py
"""

from fractions import Fraction

import monoshift as ms


def test_distributions():
    p = ms.Distribution(["3/10", "7/10"])
    q = ms.Distribution(["7/10", "3/10"])
    assert p.masses == ["3/10", "7/10"]
    assert p.dominates(q) and not q.dominates(p)
    assert sorted(p.quantile_coupling(q)) == [(0, 0, "3/10"), (1, 0, "2/5"), (1, 1, "3/10")]
    feasible, witness = p.strassen(q)
    assert feasible and sum(Fraction(m) for _, _, m in witness) == 1
    assert abs(p.entropy() - q.entropy()) < 1e-12


def test_markers():
    assert ms.hat_map("0101") == "MMMM"
    audit = ms.filler_audit(4, "3/4")
    assert audit["conditioned_dominates"] and audit["coupling_monotone"]
    mu = dict(ms.hat_pattern_distribution(5, "3/5", "mu"))
    nu = dict(ms.hat_pattern_distribution(5, "3/5", "nu"))
    assert mu == nu and sum(Fraction(m) for m in mu.values()) == 1


def test_star():
    rng = ms.Rng(3)
    z1 = ms.PairLaw.random(2, 3, 12, rng)
    z2 = ms.PairLaw("0,0:1/4;1,0:1/2;1,1:1/4")
    assert ms.PairLaw("0,0:1/2;1,1:1/2").is_deterministic()
    audit = z1.star_audit(z2)
    assert audit["pass"], audit
    law = z2.star_couple(z2)
    assert law["parts"] == ["x1", "y1", "x2", "y2"]
    bounds = z2.presmb_bounds(1, 2, 1)
    assert all(b["pass"] for b in bounds)


def test_meshalkin():
    assert ms.meshalkin_forward("0344") == [0, 1, 3, 2]
    assert ms.meshalkin_forward("4") == [None]
    assert ms.meshalkin_inverse("0132") == [0, 3, 4, 4]
    report = ms.meshalkin_verify(7, samples=20000)
    assert report["counts"][4] == 0 and report["monotone_violations"] == 0


def test_perturb_and_reductions():
    plan = ms.DeskPlan("3/5", 2, 4, 2, ["1", "2", "3"])
    run = plan.run(500, 1)
    assert run["pass"], run
    assert plan.to_dict()["k_block"] == 2
    p = ms.Distribution(["0.2,0.3,0.5"])
    q = ms.Distribution(["0.5,0.3,0.2"])
    assert ms.onemark_check(p, q, 1, 1)["holds"]
    v = ms.twomark_check(p, q, (2, 0, 2, 0))
    assert v["mass_identity"]


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok  {name}")
