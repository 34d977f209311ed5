import json
import math

import numpy as np
import pytest

from ultraweak.exceptions import ConfigError, UnknownProblem, ValidationFailed
from ultraweak.grid import LOWER, TensorGrid
from ultraweak.problem import (
    FieldAdvection,
    TransportProblem,
    catalog,
    catalog_names,
    load_problem,
    problem_from_dict,
    validate,
)

CONSTANT_EXACT = ["1d-decay", "1d-linear", "2d-g1", "2d-g2", "2d-g3", "2d-g3-22.5", "2d-const",
                  "2d-g1-shift", "2d-g2-shift", "2d-g3-shift", "st-1d"]


@pytest.mark.parametrize("name", catalog_names())
def test_catalog_problems_validate(name):
    prob = catalog(name)
    assert prob.name == name
    assert validate(prob, prob.grid(4)).passed


def test_unknown_problem():
    with pytest.raises(UnknownProblem) as err:
        catalog("nope")
    assert "nope" in str(err.value)


def test_decay_exact():
    p = catalog("1d-decay")
    x = np.linspace(0, 1, 5)[:, None]
    assert np.allclose(p.exact(x), np.exp(-2 * x[:, 0]))


@pytest.mark.parametrize("name", CONSTANT_EXACT)
def test_exact_solves_pde(name):
    p = catalog(name)
    rng = np.random.default_rng(3)
    pts = 0.05 + 0.9 * rng.random((200, p.dim))
    b = p.advection.vector
    eps = 1e-6
    du = (p.exact(pts + eps * b) - p.exact(pts - eps * b)) / (2 * eps)
    res = du + p.reaction * p.exact(pts) - p.source_fn(pts)
    smooth = np.abs(du) < 1e3  # skip points straddling a jump line
    assert np.max(np.abs(res[smooth])) < 1e-6


@pytest.mark.parametrize("name", CONSTANT_EXACT + ["2d-circle"])
def test_exact_matches_inflow(name):
    p = catalog(name)
    grid = p.grid(1)
    from ultraweak.grid import classify_faces, face_sample_points

    faces = classify_faces(grid, p.advection)
    for d, side in faces.inflow:
        pts = face_sample_points(grid, d, side, 37)
        assert np.allclose(p.exact(pts), p.inflow_fn(pts), atol=1e-12)


def test_circle_exact_constant_along_circles():
    p = catalog("2d-circle")
    for r in (0.3, 0.5, 0.7):
        t = np.linspace(0.01, math.pi / 2 - 0.01, 9)
        pts = np.stack([r * np.sin(t), 1 - r * np.cos(t)], axis=1)
        vals = p.exact(pts)
        assert np.allclose(vals, vals[0])


def test_g_functions():
    g1 = catalog("2d-g1").inflow
    g2 = catalog("2d-g2").inflow
    g3 = catalog("2d-g3").inflow
    pts = np.array([[0.0, 0.1], [0.0, 0.3], [0.0, 0.5], [0.5, 0.0]])
    assert np.allclose(g1(pts), [31.25e-3 - 18.75e-2 + 1, 31.25 * 0.027 - 18.75 * 0.09 + 1, 0, 1])
    assert np.allclose(g2(pts), [1, 0.5, 0, 1])
    assert np.allclose(g3(pts), [1, 0, 0, 1])
    g4 = catalog("2d-circle").inflow
    assert g4(np.array([[0.0, 0.5]]))[0] == pytest.approx(1.0)
    assert g4(np.array([[0.0, 0.25], [0.0, 0.75], [0.3, 0.0]])) == pytest.approx([0, 0, 0])


def test_validation_reports():
    r = validate(catalog("2d-g3"))
    assert r.filling_direction == (1.0, 0.0)
    assert r.filling_alpha == pytest.approx(math.cos(math.radians(30)))
    r = validate(catalog("2d-circle"))
    assert r.filling_direction is None and r.filling_source == "catalog"


def test_validation_rejects_vanishing_field():
    adv = FieldAdvection(lambda p: np.stack([-(p[:, 1] - 0.5), p[:, 0] - 0.5], axis=1), lambda p: 0.0, 2)
    prob = TransportProblem("rot", 2, adv)
    with pytest.raises(ValidationFailed) as err:
        validate(prob, TensorGrid((4, 4)))
    assert not err.value.report.passed


def test_validation_rejects_negative_reaction():
    from ultraweak.problem import ConstantAdvection

    prob = TransportProblem("neg", 1, ConstantAdvection([1.0]), reaction=-1.0)
    report = validate(prob, raise_on_fail=False)
    assert not report.passed and report.min_reaction_margin == pytest.approx(-1.0)


def test_affine_reconstruction():
    rng = np.random.default_rng(0)
    for name in ("tc1", "tc2", "tc3"):
        p = catalog(name)
        lo, hi = p.affine.parameter_box[0]
        for mu in lo + (hi - lo) * rng.random(100):
            q = p.at([mu])
            b = q.advection.vector
            if name == "tc1":
                assert np.allclose(b, [mu, 1.0], atol=1e-12)
                assert q.reaction == 0.0
            else:
                assert np.allclose(b, [math.cos(mu), math.sin(mu)], atol=1e-12)
                assert q.reaction == 1.0
    with pytest.raises(ConfigError):
        catalog("tc1").at([2.0])


def test_tc3_data():
    p = catalog("tc3")
    pts = np.array([[0.2, 0.5], [0.7, 0.1], [0.5, 0.5]])
    assert np.allclose(p.source_fn(pts), [0.5, 1.0, 1.0])
    edge = np.array([[0.0, 0.3], [0.4, 0.0], [0.6, 0.0]])
    assert np.allclose(p.inflow_fn(edge), [0.7, 1.0, 0.0])


def test_json_problem_roundtrip(tmp_path):
    spec = {
        "name": "json-g3",
        "dim": 2,
        "b": [math.cos(math.radians(30)), math.sin(math.radians(30))],
        "c": 0.0,
        "f": 0.0,
        "g": {"0:lower": [{"to": 0.25, "value": 1.0}], "1:lower": 1.0},
    }
    path = tmp_path / "p.json"
    path.write_text(json.dumps(spec))
    p = load_problem(str(path))
    ref = catalog("2d-g3")
    pts = np.array([[0.0, 0.1], [0.0, 0.3], [0.4, 0.0], [0.3, 0.6], [0.9, 0.2]])
    assert np.allclose(p.inflow_fn(pts[:3]), ref.inflow_fn(pts[:3]))
    assert np.allclose(p.exact(pts), ref.exact(pts))
    assert p.breaks == {1: (0.25,)}


def test_json_affine_problem():
    spec = {
        "dim": 2,
        "b_components": [{"theta": "cos_mu", "direction": [1, 0]}, {"theta": "sin_mu", "direction": [0, 1]}],
        "c": 1.0,
        "f": 1.0,
        "g": 0.0,
        "parameter_box": [[0.2, 1.3707963267948966]],
    }
    p = problem_from_dict(spec)
    ref = catalog("tc2")
    assert [t.theta for t in p.affine.terms] == [t.theta for t in ref.affine.terms]
    assert np.allclose(p.affine.thetas([0.7]), ref.affine.thetas([0.7]))


def test_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        problem_from_dict({"b": [1.0]})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_problem(str(bad))
