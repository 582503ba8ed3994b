import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from srgeo.dsl import (ManifoldSpec, SpecError, builtin, emit_spec, format_field, load_manifold,
                       parse_field, parse_manifold_spec, spec_from_json)
from srgeo.poly import Polynomial, PolyVectorField

BUILTINS = ["heisenberg1", "engel", "perturbed_heisenberg", "euclidean(1)", "euclidean(3)"]


def test_grammar_instance():
    f = parse_field("d1 - 0.5*x2*d3", 3)
    x2 = Polynomial.variable(3, 1)
    assert f == PolyVectorField([Polynomial.constant(3, 1), Polynomial.zero(3), x2 * -0.5])


def test_parentheses_powers_and_unary_minus():
    f = parse_field("-(x1 + 2)^2*d2 + d1*x3", 3)
    x1, x3 = Polynomial.variable(3, 0), Polynomial.variable(3, 2)
    assert f.coeffs[0] == x3
    assert f.coeffs[1] == -((x1 + 2.0) ** 2)


@pytest.mark.parametrize("name", BUILTINS)
def test_builtin_roundtrip(name):
    spec = builtin(name)
    again = parse_manifold_spec(emit_spec(spec))
    assert again == spec
    assert emit_spec(again) == emit_spec(spec)
    assert spec_from_json(json.loads(json.dumps(spec.as_json()))) == spec


def test_heisenberg_builtin_fields():
    spec = builtin("heisenberg1")
    assert spec.dim == 3 and [format_field(f) for f in spec.horizontal] == [
        "d1 - 0.5*x2*d3", "d2 + 0.5*x1*d3"]


def test_json_mirror_input():
    text = json.dumps({"name": "h", "dim": 3, "horizontal": ["d1 - 0.5*x2*d3", "d2 + 0.5*x1*d3"]})
    assert parse_manifold_spec(text).horizontal == builtin("heisenberg1").horizontal


@pytest.mark.parametrize("text,message,line,col", [
    ("dim = 3\n", "at least one horizontal field", 0, 0),
    ("dim = 3\nX1 = d1 + y2*d3\n", "unknown variable", 2, 11),
    ("dim = 3\nX1 = d1 - x2/2*d3\n", "division", 2, 13),
    ("dim = 2\nX1 = d3\n", "unknown variable", 2, 6),
    ("dim = 3\nX1 = d1*d2\n", "product of two basis vectors", 2, 8),
    ("dim = 3\nX1 = x1^0.5*d1\n", "nonnegative integer", 2, 9),
    ("dim = 3\nX1 = (d1\n", "expected ')'", 2, 9),
    ("dim = 3\nX1 = d1\nX3 = d2\n", "without gaps", 0, 0),
    ("dim = 3\nfoo = 1\nX1 = d1\n", "unknown key", 2, 1),
    ("dim = 3\nchart_box = 0,0 : 1,1\nX1 = d1\n", "wrong dimension", 0, 0),
])
def test_errors_carry_position(text, message, line, col):
    with pytest.raises(SpecError) as exc:
        parse_manifold_spec(text)
    assert message in str(exc.value)
    assert (exc.value.line, exc.value.col) == (line, col)


def test_empty_horizontal_list_in_constructor():
    with pytest.raises(SpecError, match="at least one horizontal field"):
        ManifoldSpec("x", 2, ())


def test_spec_hash_tracks_chart_box():
    a = builtin("heisenberg1")
    b = parse_manifold_spec(emit_spec(a).replace("-3,-3,-3 : 3,3,3", "-2,-3,-3 : 3,3,3"))
    assert a.spec_hash() != b.spec_hash()
    assert a.spec_hash() == builtin("heisenberg1").spec_hash()


def test_unknown_builtin():
    with pytest.raises(SpecError, match="unknown builtin"):
        builtin("nonesuch")


def test_load_from_path(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text(emit_spec(builtin("engel")), encoding="utf-8")
    assert load_manifold(str(p)) == builtin("engel")


def test_frame_scaled_metric_header():
    spec = parse_manifold_spec(emit_spec(builtin("heisenberg1")).replace(
        "metric = frame-orthonormal", "metric = frame-scaled 1,1,4"))
    assert spec.metric == "frame-scaled" and spec.metric_scales == (1.0, 1.0, 4.0)
    assert parse_manifold_spec(emit_spec(spec)) == spec


coef = st.integers(-4, 4).map(float) | st.sampled_from([0.5, -0.25, 1.5e-3, 7.0])
mono = st.tuples(st.integers(0, 3), st.integers(0, 2), st.integers(0, 2))


@st.composite
def random_field(draw):
    comps = []
    for _ in range(3):
        terms = draw(st.dictionaries(mono, coef, max_size=4))
        comps.append(Polynomial(3, {e: c for e, c in terms.items() if c != 0.0}))
    f = PolyVectorField(comps)
    return f if not f.is_zero() else PolyVectorField.coordinate(3, 0)


@given(st.lists(random_field(), min_size=1, max_size=3))
def test_emit_parse_roundtrip_property(fields):
    spec = ManifoldSpec("random", 3, tuple(fields))
    assert parse_manifold_spec(emit_spec(spec)) == spec
