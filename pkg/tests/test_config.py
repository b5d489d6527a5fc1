import math
from pathlib import Path

import pytest

from lsred.config import eval_number, load_config, parse_config
from lsred.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = """\
[manifold]
kind = flat_torus

[coefficients]
a = 1 + 0.5*cos(x1)

[problem]
n = 2
p = 4

[schedule]
epsilon = 0.2, 0.1
"""


def test_valid_config_parses():
    cfg = parse_config(BASE)
    assert cfg.n == 2 and cfg.p == 4.0
    assert cfg.epsilons == [0.2, 0.1]
    assert cfg.coefficients["a"] == "1 + 0.5*cos(x1)"
    assert cfg.nodes_per_eps == 4
    assert cfg.tol("newton") == 1e-8
    coeffs = cfg.build_coefficients()
    assert coeffs.n == 2
    assert cfg.build_manifold().dim == 2


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.n >= 1


def test_unknown_section_reported_with_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + "\n[extras]\nfoo = 1\n")
    assert exc.value.line == len(BASE.splitlines()) + 2
    assert "extras" in str(exc.value)


def test_unknown_key_reported_with_line_and_key():
    text = BASE.replace("kind = flat_torus", "kind = flat_torus\nshape = donut")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.line == 3
    assert exc.value.key == "shape"


@pytest.mark.parametrize("key", ["n", "p"])
def test_missing_required_problem_key(key):
    text = "\n".join(line for line in BASE.splitlines() if not line.startswith(f"{key} ="))
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


@pytest.mark.parametrize("p", ["2", "1.5", "7"])
def test_exponent_outside_admissible_range(p):
    text = BASE.replace("p = 4", f"p = {p}").replace("n = 2", "n = 3")
    text = text.replace("a = 1 + 0.5*cos(x1)", "a = 1")
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == "p"
    assert "(2, 2*_n)" in str(exc.value)


def test_increasing_schedule_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE.replace("epsilon = 0.2, 0.1", "epsilon = 0.1, 0.2"))
    assert exc.value.key == "epsilon"


def test_nonpositive_tolerance_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE + "\n[tolerances]\nnewton = 0\n")
    assert exc.value.key == "newton"


def test_constant_expressions_accepted():
    assert eval_number("2*pi") == pytest.approx(2 * math.pi)
    cfg = parse_config(BASE + "\n[solve]\nseed_xi = 0, pi\n")
    assert cfg.solve["seed_xi"] == pytest.approx([0.0, math.pi])


def test_bad_number_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config(BASE.replace("p = 4", "p = four+"))
    assert exc.value.key == "p"


def test_lift_warping_restricted_to_flat_bases():
    text = """\
[manifold]
kind = round_sphere

[problem]
n = 2
p = 4

[lift]
f = 2 + x1
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == "f"
    assert "f" in parse_config(BASE + "\n[lift]\nf = 2 + cos(x1)\n").lift


def test_require_manifold_names_kind():
    cfg = parse_config("[problem]\nn = 1\np = 4\n")
    with pytest.raises(ConfigError) as exc:
        cfg.require_manifold()
    assert exc.value.key == "kind"


def test_one_dimensional_kinds_require_n_one():
    with pytest.raises(ConfigError) as exc:
        parse_config("[manifold]\nkind = circle\n[problem]\nn = 2\np = 4\n")
    assert exc.value.key == "n"


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
