"""Acceptance suite: one test per criterion; a PASS/FAIL line for each is printed at the end.

The desk-scale runs (N = 10^6, M = 10, 10 replicates) take several minutes on one core.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from oracle import mass_flow_residual, random_instances
from stochpile import GammaSpec, OrderPolicy, stabilize
from stochpile.core import Configuration, is_stable
from stochpile.distributions import build_sampler, cdf, expected_value, pmf, pmf_vector, sample_words
from stochpile.experiments import (
    DETERMINISTIC_LIKE,
    STANDARD_BINOMIAL_LIKE,
    SweepSpec,
    cell_means,
    regime_classifier,
    run_sweep,
)
from stochpile.prf import word_stream
from stochpile.render import colour_of, render_shape, write_ppm

DESK_N, DESK_M, REPS = 10**6, 10, 10
GOLDEN = Path(__file__).parent / "golden" / "deterministic_n40_m2.ppm"
FIG_N40_M2 = [
    [0, 0, 2, 0, 0],
    [0, 4, 4, 4, 0],
    [2, 4, 0, 4, 2],
    [0, 4, 4, 4, 0],
    [0, 0, 2, 0, 0],
]


def means_by_label(rows):
    return {m["distribution"]: m for m in cell_means(rows)}


@pytest.fixture(scope="module")
def desk_means():
    spec = SweepSpec(["deterministic", "always-1", "uniform", "loglaw", "powerlaw:2.0"],
                     [DESK_M], [DESK_N], replicates=REPS, timing=False)
    return means_by_label(run_sweep(spec, workers=1))


def binomial_means(rule, N=DESK_N, replicates=REPS):
    rows = run_sweep(SweepSpec(["binomial"], [DESK_M], [N], p_rule=rule, replicates=replicates,
                               timing=False), workers=1)
    (m,) = cell_means(rows)
    return m


@pytest.fixture(scope="module")
def regime_means():
    half = 1.0 - DESK_N ** -0.5
    return {
        "power(2)": binomial_means("power:2"),
        "fixed(1-N^-1/2)": binomial_means({"kind": "fixed", "p": half}),
        "scaled(1)": binomial_means("scaled:1"),
    }


# ---------------------------------------------------------------------------------------

def test_c01_worked_examples(criterion):
    with criterion("C1 worked-example exactness") as c:
        stabilize(40, 2, GammaSpec("constant", 2, k=2))  # warm the JIT cache
        cases = [(40, 2), (20, 1)]
        for N, M in cases:
            spec = GammaSpec("constant", M, k=M)
            t0 = time.perf_counter()
            res = stabilize(N, M, spec)
            ms = (time.perf_counter() - t0) * 1e3
            assert (res.avalanche, res.radius) == (10, 2.0), (N, M, res.avalanche, res.radius)
            assert ms < 1.0, f"{ms:.3f} ms"
        c["detail"] = "avalanche 10, radius 2 for (40,2) and (20,1)"


def test_c02_abelian_invariance(criterion):
    with criterion("C2 abelian invariance") as c:
        instances = random_instances(50)
        stabilize(100, 2, GammaSpec("uniform", 2), 0, OrderPolicy.LIFO)  # warm up
        assert {s.variant for _, _, s, _ in instances} == {"constant", "uniform", "binomial", "loglaw", "powerlaw"}
        t0 = time.perf_counter()
        for N, M, spec, seed in instances:
            runs = [stabilize(N, M, spec, seed, policy) for policy in OrderPolicy]
            for other in runs[1:]:
                assert other.final.same_field(runs[0].final), (N, M, spec, seed)
                assert other.odometer_field().same_field(runs[0].odometer_field()), (N, M, spec, seed)
        elapsed = time.perf_counter() - t0
        assert elapsed < 10.0
        c["detail"] = f"50 instances x 3 policies identical in {elapsed:.2f} s"


def test_c03_conservation_and_flow(criterion):
    with criterion("C3 conservation, stability and mass flow") as c:
        for N, M, spec, seed in random_instances(50):
            res = stabilize(N, M, spec, seed)
            assert res.final.total_mass == N
            assert is_stable(res.final)
            assert not mass_flow_residual(res.initial, res.final, res.emitted).any(), (N, M, spec, seed)
        c["detail"] = "50 instances exact"


def test_c04_deterministic_rescaling(criterion):
    with criterion("C4 deterministic rescaling") as c:
        for M in (2, 5, 10):
            N = 1000 * M
            big = stabilize(N, M, GammaSpec("constant", M, k=M))
            small = stabilize(N // M, 1, GammaSpec("constant", 1, k=1))
            assert big.avalanche == small.avalanche
            assert big.radius == small.radius
            scaled = Configuration(small.final.grains * M, M, small.final.x0, small.final.y0)
            assert big.final.same_field(scaled)
        c["detail"] = "M in {2,5,10} exact"


def test_c05_avalanche_inequalities(criterion):
    with criterion("C5 avalanche inequalities") as c:
        checked = 0
        for N in (10**3, 10**4):
            for M in (2, 4, 10):
                det = stabilize(N, M, GammaSpec("constant", M, k=M)).avalanche
                one = stabilize(N, M, GammaSpec("constant", M, k=1)).avalanche
                assert one <= M * det, (N, M, one, det)
                for k in (d for d in range(1, M + 1) if M % d == 0):
                    av_k = stabilize(N, M, GammaSpec("constant", M, k=k)).avalanche
                    assert av_k * k <= M * det, (N, M, k, av_k, det)
                    checked += 1
        c["detail"] = f"{checked} (N, M, k) triples"


@pytest.mark.slow
def test_c06_desk_constants(criterion, desk_means):
    with criterion("C6 desk-scale constants") as c:
        d, a1, u = desk_means["constant:10"], desk_means["constant:1"], desk_means["uniform"]
        c["detail"] = (f"det R={d['radius_quotient']:.4f} Av={d['avalanche_quotient']:.5f}; "
                       f"always-1 R={a1['radius_quotient']:.4f} Av={a1['avalanche_quotient']:.5f}; "
                       f"uniform R={u['radius_quotient']:.4f}")
        assert d["replicates"] == a1["replicates"] == u["replicates"] == REPS
        assert 0.36 <= d["radius_quotient"] <= 0.40
        assert 0.0165 <= d["avalanche_quotient"] <= 0.0192
        assert 0.27 <= a1["radius_quotient"] <= 0.30
        assert 0.0094 <= a1["avalanche_quotient"] <= 0.0110
        assert 0.31 <= u["radius_quotient"] <= 0.34


@pytest.mark.slow
def test_c07_ordering(criterion, desk_means):
    with criterion("C7 ordering by expected multiplicity") as c:
        order = ["constant:10", "uniform", "loglaw", "powerlaw:2.0", "constant:1"]
        for key in ("radius_quotient", "avalanche_quotient"):
            values = [desk_means[name][key] for name in order]
            c["detail"] += f"{key}: " + " > ".join(f"{v:.5f}" for v in values) + "; "
            assert all(x > y for x, y in zip(values, values[1:])), (key, values)


@pytest.mark.slow
def test_c08_binomial_regimes(criterion, regime_means):
    with criterion("C8 binomial regimes") as c:
        pw, fx, sc = (regime_means[k] for k in ("power(2)", "fixed(1-N^-1/2)", "scaled(1)"))
        c["detail"] = "; ".join(f"{k} R={m['radius_quotient']:.4f} Av={m['avalanche_quotient']:.5f}"
                                for k, m in regime_means.items())
        assert regime_classifier(pw["radius_quotient"], pw["avalanche_quotient"]) == DETERMINISTIC_LIKE
        assert regime_classifier(fx["radius_quotient"], fx["avalanche_quotient"]) == STANDARD_BINOMIAL_LIKE
        lo, hi = sorted((pw["radius_quotient"], fx["radius_quotient"]))
        assert lo < sc["radius_quotient"] < hi


def test_c09_small_p_limit(criterion):
    with criterion("C9 small-p limit") as c:
        N = 10**5
        binom = binomial_means({"kind": "fixed", "p": 0.01}, N=N)
        rows = run_sweep(SweepSpec(["always-1"], [DESK_M], [N], replicates=REPS, timing=False), workers=1)
        (one,) = cell_means(rows)
        parts = []
        for key in ("radius_quotient", "avalanche_quotient"):
            rel = abs(binom[key] - one[key]) / one[key]
            parts.append(f"{key} rel diff {rel:.4f}")
            assert rel <= 0.10, (key, binom[key], one[key])
        c["detail"] = "; ".join(parts)


def _acceptance_laws(M):
    return [
        GammaSpec("constant", M, k=M),
        GammaSpec("constant", M, k=1),
        GammaSpec("uniform", M),
        GammaSpec("binomial", M, p=0.5),
        GammaSpec("loglaw", M),
        GammaSpec("powerlaw", M, s=2.0),
    ]


def test_c10_distribution_suite(criterion):
    with criterion("C10 distribution unit suite") as c:
        from fractions import Fraction

        for M in (1, 2, 10, 100, 1000):
            for spec in _acceptance_laws(M):
                assert math.fsum(pmf_vector(spec)) == pytest.approx(1.0, abs=1e-12)
                assert cdf(spec, M) == pytest.approx(1.0, abs=1e-12)
                if M <= 100:
                    for k in range(1, M + 1):
                        assert cdf(spec, k) - cdf(spec, k - 1) == pytest.approx(pmf(spec, k), abs=1e-12)
        # closed-form expectations evaluated exactly
        for M in (2, 10, 100):
            assert expected_value(GammaSpec("uniform", M)) == (M + 1) / 2
            p = Fraction(1, 2)
            exact_binom = p * M / (1 - (1 - p) ** M)
            assert expected_value(GammaSpec("binomial", M, p=0.5)) == pytest.approx(float(exact_binom), rel=1e-13)
            logs = [math.log(k + 1) - math.log(k) for k in range(1, M + 1)]
            exact_log = math.fsum(k * w for k, w in zip(range(1, M + 1), logs)) / math.log(M + 1)
            assert expected_value(GammaSpec("loglaw", M)) == pytest.approx(exact_log, rel=1e-13)
            Z = math.fsum(k ** -2.0 for k in range(1, M + 1))
            exact_pow = math.fsum(k ** -1.0 for k in range(1, M + 1)) / Z
            assert expected_value(GammaSpec("powerlaw", M, s=2.0)) == pytest.approx(exact_pow, rel=1e-13)
        tvs, failures = [], []
        for M in (10, 100):
            for spec in _acceptance_laws(M):
                ks = sample_words(build_sampler(spec), word_stream(0x5EED5A4D, 0, 0, 1, 10**6))
                emp = np.bincount(ks, minlength=M + 1)[1:] / ks.size
                tv = 0.5 * float(np.abs(emp - pmf_vector(spec)).sum())
                tvs.append(f"{spec.text}@{M}={tv:.4f}")
                if tv >= 0.003:
                    failures.append(f"{spec.text}@M={M} TV={tv:.4f}")
        c["detail"] = "TV " + " ".join(tvs)
        assert not failures, "TV >= 0.003 for " + ", ".join(failures)


def test_c11_renderer_golden(criterion, tmp_path):
    with criterion("C11 renderer golden files") as c:
        for M in (1, 2, 10, 100):
            assert colour_of(1, M) == (0, 0, 255)
            assert colour_of(2 * M, M) == (0, 255, 0)
            assert colour_of(4 * M - 1, M) == (255, 0, 0)
        final = stabilize(40, 2, GammaSpec("constant", 2, k=2)).final
        out = tmp_path / "render.ppm"
        write_ppm(render_shape(final, (-2, -2, 2, 2)), out)
        hand = {0: (255, 255, 255), 2: (0, 85, 170), 4: (0, 255, 0)}
        body = b"".join(bytes(hand[g]) for row in FIG_N40_M2 for g in row)
        assert GOLDEN.read_bytes() == b"P6\n5 5\n255\n" + body
        assert out.read_bytes() == GOLDEN.read_bytes()
        c["detail"] = "anchors exact; 5x5 PPM byte-identical to golden"


def test_c12_reproducibility(criterion, tmp_path):
    with criterion("C12 sweep reproducibility") as c:
        spec = SweepSpec(["deterministic", "always-1", "uniform", "loglaw", "powerlaw:2.0", "binomial"],
                         [2, 10], [10**3, 10**4], p_rule="power:0.5", replicates=3, timing=False)
        paths = []
        for run, workers in enumerate((1, 3, 1)):
            path = tmp_path / f"run{run}.csv"
            run_sweep(spec, workers=workers, output_path=path)
            paths.append(path)
        blobs = [p.read_bytes() for p in paths]
        assert blobs[0] == blobs[1] == blobs[2]
        # with wall-clock timing on, every column except runtime_ms still matches
        timed = SweepSpec(**{**spec.__dict__, "timing": True})
        a, b = run_sweep(timed, workers=1), run_sweep(timed, workers=2)
        strip = lambda rows: [r.to_record()[:-1] for r in rows]
        assert strip(a) == strip(b)
        c["detail"] = f"{len(blobs[0].splitlines()) - 1} rows byte-identical at parallelism 1/3/1"
