import time

import numpy as np
import pytest

from edgedepth import checks
from edgedepth import tensor as T
from edgedepth.checks import GradCase, format_table, run_suite, select
from edgedepth.cli import main
from edgedepth.gradcheck import grad_check, rel_err
from edgedepth.tensor import Tensor, custom_op


def _bad_square(x):
    # forward x**2, backward deliberately 3x instead of 2x
    return custom_op(x.data**2, (x,), lambda g: (3 * x.data * g,), "bad_square")


def _bad_case():
    def build(rng):
        w = rng.normal(size=(3, 4))
        return (lambda x: T.reduce_sum(T.mul(_bad_square(x), w))), [Tensor(rng.normal(size=(3, 4)))]

    return GradCase("bad_square", "tensor-autodiff", build)


def test_rel_err_definition():
    assert rel_err(np.array(1.0), np.array(1.0)) == 0
    assert rel_err(np.array(2.0), np.array(1.0)) == 0.5
    assert rel_err(np.array(0.0), np.array(1e-12)) == pytest.approx(1e-4)


def test_full_suite_passes_fast_and_small():
    start = time.perf_counter()
    rows = run_suite("all")
    assert time.perf_counter() - start < 120
    assert all(r.passed for r in rows), format_table(rows)
    assert all(max(s, default=1) <= 8 for r in rows for s in r.shapes)
    names = {r.name for r in rows}
    for required in ("em_forward", "pem_forward", "sam_forward", "aspp_forward", "decoder", "silog_loss"):
        assert required in names
    assert set(T.PRIMITIVES) - {"clip"} <= names


def test_injected_wrong_backward_fails_its_row():
    rows = run_suite("all", cases=[checks.CASES[0], _bad_case()])
    by_name = {r.name: r for r in rows}
    assert by_name["add"].passed
    assert not by_name["bad_square"].passed
    assert by_name["bad_square"].max_rel_err > 0.1


def test_cli_gradcheck_exit_codes(monkeypatch, capsys):
    assert main(["gradcheck", "loss-metrics"]) == 0
    monkeypatch.setattr(checks, "CASES", checks.CASES + [_bad_case()])
    assert main(["gradcheck", "bad_square"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "3x4" in out
    assert main(["gradcheck", "no-such-op"]) == 2


def test_scope_selection():
    assert {c.module for c in select("patch-graph")} == {"patch-graph"}
    assert [c.name for c in select("softmax")] == ["softmax"]
    with pytest.raises(ValueError):
        select("bogus")


def test_max_coords_subsamples():
    x = Tensor(np.random.default_rng(0).normal(size=(8, 8)))
    rep = grad_check(lambda a: T.reduce_sum(T.exp(a)), x, max_coords=10)
    assert rep.passed and rep.n_checked == 10
    assert x.grad is None
