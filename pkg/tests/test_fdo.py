import json
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdcn.errors import ConfigError
from gdcn.fdo import (
    choose_dim, fdo_plan, formula_dims, param_count, read_dims_file, singular_values,
    write_dims_file,
)
from gdcn_reference import CRITEO_DIMS_80, CRITEO_DIMS_95, CRITEO_SIZES


def gram_oracle(E, dps=40):
    """Square roots of the centered Gram matrix eigenvalues, in high precision."""
    rows, cols = len(E), len(E[0])
    with mpmath.workdps(dps):
        M = mpmath.matrix(E.tolist())
        for j in range(cols):
            mean = mpmath.fsum(M[i, j] for i in range(rows)) / rows
            for i in range(rows):
                M[i, j] -= mean
        G = M.T * M
        ev = mpmath.eigsy(G, eigvals_only=True)
        vals = sorted((mpmath.sqrt(max(e, 0)) for e in ev), reverse=True)
    return np.array([float(v) for v in vals[:min(rows, cols)]])


def test_singular_values_hand_cases():
    np.testing.assert_allclose(singular_values(np.diag([3.0, 1.0]), center=False), [3, 1])
    E = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    assert np.array_equal(singular_values(E), [0.0, 0.0])
    assert np.array_equal(singular_values(np.ones((1, 4))), [0.0])
    with pytest.raises(ConfigError):
        singular_values(np.array([[np.nan, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10**6))
def test_singular_values_match_gram_oracle(rows, cols, seed):
    E = np.random.default_rng(seed).normal(size=(rows, cols))
    got = singular_values(E)
    want = gram_oracle(E)
    assert got.shape == (min(rows, cols),)
    assert np.max(np.abs(got - want)) <= 1e-10 * max(1.0, want[0])


def test_choose_dim_cases():
    assert choose_dim([1, 0, 0], 0.95) == 1
    assert choose_dim([1, 1, 1, 1], 0.5) == 2
    assert choose_dim([1, 1, 1, 1], 0.51) == 3
    assert choose_dim([0, 0, 0], 0.9) == 1
    assert choose_dim([3, 2, 1], 1.0) == 3
    assert choose_dim([2, 1, 1], 0.6, energy="raw") == 2
    assert choose_dim([2, 1, 1], 0.6, energy="squared") == 1
    with pytest.raises(ConfigError):
        choose_dim([1, 1], 0.0)


def test_choose_dim_monotone_in_ratio():
    rng = np.random.default_rng(0)
    ratios = np.round(np.arange(0.5, 0.9801, 0.02), 2)
    violations = 0
    for _ in range(1000):
        s = np.sort(rng.exponential(size=rng.integers(1, 17)))[::-1]
        ks = [choose_dim(s, r) for r in ratios]
        violations += sum(b < a for a, b in zip(ks, ks[1:]))
    assert violations == 0


def planted_rank_tables(ranks=(1, 2, 3, 4, 5), rows=200, width=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for r in ranks:
        U = rng.normal(size=(rows, r))
        V = np.linalg.qr(rng.normal(size=(width, r)))[0].T
        out.append(U @ V + 3.0)  # constant shift disappears when centering
    return out


def test_planted_ranks_are_recovered():
    report = fdo_plan(planted_rank_tables(), [0.999], names=list("abcde"))
    assert report.dims(0.999) == [1, 2, 3, 4, 5]


def test_param_count_cases():
    pc = param_count([10, 20], [2, 4])
    assert pc.P_e == 100
    assert pc.D_bar == Fraction(100, 30)
    assert pc.K_bar == 3
    assert param_count([5, 5], [16, 16]).D_bar == 16
    with pytest.raises(ConfigError):
        param_count([5], [1, 2])


def test_criteo_accounting():
    assert sum(CRITEO_SIZES) == 1_086_810
    pc = param_count(CRITEO_SIZES, CRITEO_DIMS_95)
    assert abs(float(pc.D_bar) - 5.92) <= 0.005
    assert abs(float(pc.K_bar) - 7.87) <= 0.005
    low = param_count(CRITEO_SIZES, CRITEO_DIMS_80)
    assert abs(float(low.D_bar) - 3.98) <= 0.005
    # exact mean of the listed dims
    assert low.K_bar == Fraction(186, 39)


def test_formula_dims():
    assert formula_dims([16, 81, 192773]) == [2, 3, 21]
    assert formula_dims([1, 2]) == [1, 1]
    assert formula_dims([192773], rounding="floor") == [20]
    assert formula_dims([17], rounding="ceil") == [3]
    nearest = param_count(CRITEO_SIZES, formula_dims(CRITEO_SIZES)).D_bar
    floor = param_count(CRITEO_SIZES, formula_dims(CRITEO_SIZES, rounding="floor")).D_bar
    assert round(float(floor), 2) == 18.66
    assert round(float(nearest), 2) == 19.46


def test_report_and_dims_file(tmp_path):
    report = fdo_plan(planted_rank_tables((1, 3)), [0.5, 0.999], names=["u", "v"],
                      source_checkpoint="m.ckpt")
    obj = report.to_json()
    assert [p["dims"] for p in obj["plans"]][1] == [1, 3]
    assert json.loads(json.dumps(obj)) == obj
    write_dims_file(tmp_path / "d.json", report, 0.999)
    assert read_dims_file(tmp_path / "d.json") == (["u", "v"], [1, 3])
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ConfigError):
        read_dims_file(tmp_path / "bad.json")
