import math

import pytest

import rwbsde


def test_registry_and_reference():
    names = rwbsde.problem_names()
    assert "brownian-square" in names
    y, z = rwbsde.reference("brownian-square", t=0.25, x=1.5)
    assert y == pytest.approx(1.5**2 + 0.75)
    assert z == pytest.approx(3.0)


def test_tree_matches_brute_force():
    for name in rwbsde.problem_names():
        y, z = rwbsde.solve_y_z(name, n=6, x0=0.2)
        by, bz = rwbsde.brute_force_y0(name, n=6, x0=0.2)
        assert abs(y - by) < 1e-12
        assert abs(z - bz) < 1e-12


def test_bond_and_levels():
    y, _ = rwbsde.solve_y_z("discounted-bond", {"r": 0.05}, n=10)
    assert y == pytest.approx((1 + 0.05 / 10) ** -10, abs=1e-13)
    levels = rwbsde.solve_levels("brownian-square", n=4)
    assert len(levels) == 5
    xs, us = levels[2]
    assert len(xs) == 4
    for x, u in zip(xs, us):
        assert u == pytest.approx(x * x + 0.5, abs=1e-13)


def test_grid_backend_close_to_tree():
    tree, _ = rwbsde.solve_y_z("sine-coeffs", n=8, backend="tree")
    grid, _ = rwbsde.solve_y_z("sine-coeffs", n=8, backend="grid")
    assert abs(tree - grid) < 1e-4


def test_weight_estimator():
    z, se = rwbsde.z_weight_estimate("brownian-identity", t=0.2, x=0.3, samples=5000, steps=16)
    assert abs(z - 1.0) < 4 * se


def test_fit_slope():
    rows = [(h, 2 * h**0.5, 0.01 * 2 * h**0.5) for h in (1 / 8, 1 / 16, 1 / 32)]
    assert rwbsde.fit_slope(rows)["slope"] == pytest.approx(0.5)


def test_convergence_report_is_deterministic():
    cfg = {"problem": "brownian-square", "n_list": [4, 8], "samples": 200, "seed": 3}
    a = rwbsde.run_convergence(dict(cfg, threads=1))
    b = rwbsde.run_convergence(dict(cfg, threads=2))
    assert a == b
    assert [r["n"] for r in a["rows"]] == [4, 8]
    assert all(math.isfinite(r["y_mse"]) for r in a["rows"])


def test_zhat_zero_generator():
    t = rwbsde.run_zhat({"problem": "brownian-square", "n_list": [4, 8], "samples": 200})
    assert t["identically_zero"]


def test_errors_carry_a_kind():
    with pytest.raises(rwbsde.Error) as e:
        rwbsde.run_convergence({"problem": "brownian-square", "bogus": 1})
    assert e.value.args[1] == "configuration"
    with pytest.raises(rwbsde.Error) as e:
        rwbsde.solve_y_z("brownian-square", n=30)
    assert e.value.args[1] == "capacity"
