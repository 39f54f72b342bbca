from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from postsbc.plotting import pit_points, render_curve, render_plot, render_svg
from postsbc.sbc import OK, IterationResult, RankEnsemble
from postsbc.uniformity import EcdfDiffCurve, pit_ecdf_diff, simultaneous_band

SVG = "{http://www.w3.org/2000/svg}"


def _ensemble(ranks, S=100):
    return RankEnsemble(S, ("x",), [IterationResult(i, OK, {"x": int(r)}) for i, r in enumerate(ranks)], len(ranks))


def test_plot_is_valid_svg_with_band_and_curve():
    ranks = np.arange(100) % 101
    svg = render_plot(_ensemble(ranks), simultaneous_band(100, 100), "x")
    root = ET.fromstring(svg)
    assert root.tag == SVG + "svg"
    assert root.find(f"{SVG}polygon[@class='band']") is not None
    assert root.find(f"{SVG}polyline[@class='curve']") is not None
    assert "PASS" in svg


def test_plot_is_deterministic():
    ranks = np.arange(100) % 101
    env = simultaneous_band(100, 100)
    assert render_plot(_ensemble(ranks), env, "x") == render_plot(_ensemble(ranks), env, "x")


def test_three_pit_values_give_three_steps():
    pts = pit_points([0.03, 0.43, 0.97])
    rises = [(a, b) for a, b in zip(pts, pts[1:]) if a[0] == b[0] and b[1] > a[1]]
    assert len(rises) == 3
    assert [u for (u, _), _ in rises] == [0.03, 0.43, 0.97]
    assert pts[-1] == (1.0, 0.0)
    ET.fromstring(render_svg(pts, "three draws"))


def test_zero_curve_draws_a_flat_line():
    env = simultaneous_band(100, 100)
    svg = render_curve(EcdfDiffCurve(env.grid, np.zeros_like(env.grid), 100, 100), env, "zero")
    line = ET.fromstring(svg).find(f"{SVG}polyline").get("points").split()
    jumps = {p.split(",")[1] for p in line[2::2]}  # post-step points sit on the zero line
    assert len(jumps) == 1


def test_mismatched_envelope_is_error():
    env = simultaneous_band(100, 100)
    with pytest.raises(ValueError):
        render_plot(_ensemble(np.arange(50)), env, "x")
    with pytest.raises(ValueError):
        render_curve(pit_ecdf_diff(np.arange(50), 100), env, "x")


def test_title_is_escaped():
    svg = render_svg([(0.0, 0.0), (1.0, 0.0)], "a < b & c")
    assert ET.fromstring(svg).find(f"{SVG}text").text == "a < b & c"
