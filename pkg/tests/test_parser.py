from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neardecomp.dynsys import BuildingModel
from neardecomp.parser import ParseError, load_system, parse_system, to_source

DEMOS = Path(__file__).resolve().parents[1] / "demos"

BUILDING = """
system building
params { epsilon = 0.1; k = 0.5 }
func f(x) = x + 0.5*sin(x)
func g1(x) = x + 0.5*sin(x)
func g2(x) = -k*g1(x)
fast d1, d2
slow D
dyn d1 = -f(d1) + (epsilon/2)*(g2(D + d2 - d1) - g1(D + d1 - d2))
dyn d2 = -f(d2) + (epsilon/2)*(g1(D + d1 - d2) - g2(D + d2 - d1))
dyn D = -epsilon*(g1(D + d1 - d2) + g2(D + d2 - d1))
domain d1 in [-10,10]; d2 in [-10,10]; D in [-10,10]
"""


def test_building_partition():
    spec = parse_system(BUILDING)
    assert spec.name == "building"
    assert spec.fast == ("d1", "d2")
    assert spec.slow == ("D",)
    assert spec.params == {"epsilon": 0.1, "k": 0.5}
    assert spec.eps == 0.1
    assert spec.domain["D"] == (-10.0, 10.0)


def test_single_state_defaults():
    spec = parse_system("dyn x = -x")
    assert spec.fast == ()
    assert spec.slow == ("x",)
    assert spec.eps == 1.0


def test_undeclared_symbol_reports_name_and_location():
    with pytest.raises(ParseError) as info:
        parse_system("params { epsilon = 0.1 }\nfast x\nslow y\ndyn x = -x + z\ndyn y = -epsilon*y\n")
    err = info.value
    assert "'z'" in str(err)
    assert (err.line, err.col) == (4, 14)


def test_empty_file():
    with pytest.raises(ParseError, match="no system"):
        parse_system("  # nothing here\n")


@pytest.mark.parametrize(
    "src, msg",
    [
        ("fast x\nslow x\ndyn x = -x", "duplicate"),
        ("dyn x = -x\ndyn x = x", "duplicate"),
        ("fast x\nslow y\ndyn x = -x\ndyn y = -y", "epsilon"),
        ("slow y\ndyn y = -y\ndyn q = 1", "undeclared"),
        ("fast x\nslow y\nparams { epsilon = 0.1 }\ndyn x = -x", "y"),
        ("dyn x = -(x", "expected"),
        ("dyn x = -x $", "unexpected character"),
        ("func f(a) = f(a)\ndyn x = f(x)", "recursive"),
        ("func f(a, b) = a*b\ndyn x = f(x)", "argument"),
        ("dyn x = -x\ndomain x in [1, 0]", "empty"),
        ("params { epsilon = -1 }\ndyn x = -x", ">= 0"),
        ("dyn t = -t", "reserved"),
        ("params { x = 2 }\ndyn x = -x", "x"),
    ],
)
def test_invalid_sources(src, msg):
    with pytest.raises(ParseError, match=msg):
        parse_system(src)


def test_errors_carry_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_system("dyn x = -x\n\ndyn y = x +* 2\n")
    assert info.value.line == 3
    assert info.value.col is not None


def test_designated_perturbation_name():
    spec = parse_system("params { mu = 0.01 }\nperturbation mu\nfast x\nslow y\ndyn x = -x + y\ndyn y = -mu*y\n")
    assert spec.epsilon == "mu"
    assert spec.eps == 0.01


def test_inputs_and_comments():
    spec = parse_system(
        "# ramp input\ninput u = sin(0.1*t)\nparams { epsilon = 0.2 }\n"
        "fast x\nslow y\ndyn x = -(x - u)  # tracks u\ndyn y = epsilon*(x - y)\n"
    )
    assert set(spec.inputs) == {"u"}


def test_round_trip_building():
    spec = parse_system(BUILDING)
    again = parse_system(to_source(spec))
    assert again == spec


def test_round_trip_generated_building_sources():
    for form in ("lumped", "exact"):
        spec = parse_system(BuildingModel().barycentric_source(form, 10))
        assert parse_system(to_source(spec)) == spec
    funcs = (("f", "x + 0.5*sin(x)"), ("g1", "x"), ("g2", "-k*x"), ("g3", "2*x"))
    raw = parse_system(BuildingModel(floors=3, rooms=3, funcs=funcs).raw_source())
    assert len(raw.states) == 9
    assert parse_system(to_source(raw)) == raw


def test_demo_files_load():
    for path in sorted(DEMOS.glob("*.nds")):
        load_system(path)


names = st.sampled_from(["a", "b", "c", "u1", "w2"])
coef = st.floats(-50, 50, allow_nan=False).map(lambda v: round(v, 4))


@st.composite
def specs(draw):
    n_fast = draw(st.integers(0, 2))
    n_slow = draw(st.integers(1, 2))
    states = [f"s{i}" for i in range(n_fast + n_slow)]
    fast, slow = states[:n_fast], states[n_fast:]
    lines = ["system gen", f"params {{ epsilon = {abs(draw(coef))}; k = {draw(coef)} }}"]
    if draw(st.booleans()):
        lines.append(f"func h(z) = z*{draw(coef)} + tanh(z)")
        extra = " + h({})"
    else:
        extra = ""
    if fast:
        lines.append("fast " + ", ".join(fast))
    if fast or draw(st.booleans()):
        lines.append("slow " + ", ".join(slow))
    for s in states:
        other = draw(st.sampled_from(states))
        op = draw(st.sampled_from(["+", "-", "*"]))
        body = f"-{s} {op} k*sin({other})^2"
        if extra:
            body += extra.format(other)
        if s in slow and fast:
            body = f"epsilon*({body})"
        lines.append(f"dyn {s} = {body}")
    if draw(st.booleans()):
        lo = draw(coef)
        lines.append(f"domain {states[0]} in [{lo}, {lo + 1}]")
    return "\n".join(lines) + "\n"


@settings(max_examples=150, deadline=None)
@given(specs())
def test_round_trip_property(src):
    spec = parse_system(src)
    assert parse_system(to_source(spec)) == spec
