"""Experiment configuration: sectioned key = value text with a fixed schema.

Unknown sections or keys are rejected, and every error names the line and key.
Schema (defaults in brackets; lists are comma separated)::

    [manifold]      kind = flat_torus | circle | surface_of_revolution | round_sphere
                    periods [2*pi per axis], radius [1], curve [circle] or a CSV path,
                    curve_center [2], curve_radius [1], fiber_dim [1]
    [coefficients]  a [1], b [1], c [1]   (expressions in x1..xn)
    [problem]       n, p
    [schedule]      epsilon [0.2, 0.1, 0.05], nodes_per_eps [4], cutoff [smooth_step]
    [tolerances]    shooting [1e-10], fixed_point [1e-9], newton [1e-8], projection [1e-12]
    [landscape]     counts [8 per axis], offset [0 per axis]
    [solve]         seed_xi [chart origin], initial [ansatz] | zero | <solution CSV>,
                    reseed [recentered] | previous, max_iter [30]
    [lift]          samples [1000], bound [3], dilation_power [1],
                    f [none; warping function on a flat_torus or circle base, in x1..xn]
    [output]        directory [out], seed [0]
"""
import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientField, parse_expression
from .errors import ConfigError, InvalidParameter
from .groundstate import check_exponent

_KINDS = ("flat_torus", "circle", "surface_of_revolution", "round_sphere")
_CUTOFFS = ("smooth_step", "bump")


def _floats(text):
    return [float(eval_number(v)) for v in text.split(",") if v.strip()]


def eval_number(text):
    """A number or a constant expression such as 2*pi (same grammar as coefficient recipes)."""
    expr, _ = parse_expression(text.strip(), 0)
    return float(expr)


SCHEMA = {
    "manifold": {"kind": str, "periods": _floats, "radius": eval_number, "curve": str,
                 "curve_center": eval_number, "curve_radius": eval_number, "fiber_dim": int},
    "coefficients": {"a": str, "b": str, "c": str},
    "problem": {"n": int, "p": eval_number},
    "schedule": {"epsilon": _floats, "nodes_per_eps": int, "cutoff": str},
    "tolerances": {"shooting": eval_number, "fixed_point": eval_number, "newton": eval_number,
                   "projection": eval_number},
    "landscape": {"counts": lambda t: [int(v) for v in t.split(",") if v.strip()], "offset": _floats},
    "solve": {"seed_xi": _floats, "initial": str, "reseed": str, "max_iter": int},
    "lift": {"samples": int, "bound": eval_number, "dilation_power": eval_number, "f": str},
    "output": {"directory": str, "seed": int},
}
REQUIRED = {"problem": ("n", "p")}


def _line_index(text):
    """(section, key) -> line number, and section -> line number of its header."""
    where, section = {}, None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        head = re.fullmatch(r"\[([^\]]+)\]", line)
        if head:
            section = head.group(1).strip().lower()
            where.setdefault((section, None), number)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        where.setdefault((section, key), number)
    return where


@dataclass
class ExperimentConfig:
    manifold: dict
    coefficients: dict
    n: int
    p: float
    epsilons: list
    nodes_per_eps: int = 4
    cutoff: str = "smooth_step"
    tolerances: dict = field(default_factory=dict)
    xi_counts: list | None = None
    xi_offset: list | None = None
    solve: dict = field(default_factory=dict)
    lift: dict = field(default_factory=dict)
    output: str = "out"
    seed: int = 0
    source: str = ""
    path: str | None = None
    lines: dict = field(default_factory=dict, repr=False)

    def require_manifold(self):
        """Raise a ConfigError naming the missing key unless a manifold is configured."""
        if "kind" not in self.manifold:
            raise ConfigError("missing required key in [manifold]",
                              line=self.lines.get(("manifold", None)), key="kind")

    # -- builders ------------------------------------------------------
    def build_manifold(self):
        from .manifold import build_circle, build_flat_torus, build_round_sphere
        self.require_manifold()
        m = self.manifold
        kind = m["kind"]
        if kind == "flat_torus":
            return build_flat_torus(m.get("periods") or [2 * math.pi] * self.n)
        if kind == "circle":
            return build_circle(m.get("radius", 1.0))
        if kind == "round_sphere":
            return build_round_sphere(self.n, m.get("radius", 1.0))
        return self.build_warped().base

    def build_warped(self):
        from .manifold import build_surface_of_revolution
        self.require_manifold()
        m = self.manifold
        if m["kind"] != "surface_of_revolution":
            raise ConfigError("a warped product needs kind = surface_of_revolution", key="kind")
        t, curve = self.curve()
        return build_surface_of_revolution(t, curve, m.get("fiber_dim", 1))

    def curve(self):
        from .manifold import circle_curve, load_generating_curve
        m = self.manifold
        spec = m.get("curve", "circle")
        if spec == "circle":
            return circle_curve(m.get("curve_center", 2.0), m.get("curve_radius", 1.0))
        path = Path(spec)
        if not path.is_absolute() and self.path:
            path = Path(self.path).parent / path
        return load_generating_curve(path)

    def build_coefficients(self):
        if self.manifold.get("kind") == "surface_of_revolution":
            from .lift import warped_coefficients
            return warped_coefficients(self.build_warped())
        c = self.coefficients
        return CoefficientField.from_expressions(self.n, c.get("a", "1"), c.get("b", "1"), c.get("c", "1"))

    def echo(self):
        return {"manifold": self.manifold, "coefficients": self.coefficients, "n": self.n, "p": self.p,
                "epsilon": self.epsilons, "nodes_per_eps": self.nodes_per_eps, "cutoff": self.cutoff,
                "tolerances": self.tolerances, "xi_counts": self.xi_counts, "xi_offset": self.xi_offset,
                "solve": self.solve, "lift": self.lift, "output": self.output, "seed": self.seed}

    def tol(self, name):
        return self.tolerances[name]


def parse_config(text, path=None):
    """Parse and validate configuration text; raises ConfigError with line and key."""
    where = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc.message if hasattr(exc, 'message') else exc}",
                          line=getattr(exc, "lineno", None)) from None

    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=where.get((sec, None)), key=section)
        for key, raw in parser.items(section):
            line = where.get((sec, key))
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key in [{sec}]", line=line, key=key)
            try:
                values[(sec, key)] = SCHEMA[sec][key](raw)
            except (ValueError, TypeError, ConfigError, InvalidParameter) as exc:
                msg = exc.args[0] if exc.args else str(exc)
                raise ConfigError(f"bad value {raw!r}: {msg}", line=line, key=key) from None
    for sec, keys in REQUIRED.items():
        for key in keys:
            if (sec, key) not in values:
                raise ConfigError(f"missing required key in [{sec}]", line=where.get((sec, None)), key=key)

    def get(sec, key, default=None):
        return values.get((sec, key), default)

    def fail(msg, sec, key):
        raise ConfigError(msg, line=where.get((sec, key)) or where.get((sec, None)), key=key)

    kind = get("manifold", "kind")
    if kind is not None and kind not in _KINDS:
        fail(f"kind must be one of {', '.join(_KINDS)}", "manifold", "kind")
    n, p = get("problem", "n"), get("problem", "p")
    try:
        check_exponent(n, p)
    except InvalidParameter as exc:
        fail(str(exc), "problem", "p")
    if kind in ("circle", "surface_of_revolution") and n != 1:
        fail(f"{kind} is one-dimensional; set n = 1", "problem", "n")
    if kind == "flat_torus" and get("manifold", "periods") is not None:
        per = get("manifold", "periods")
        if len(per) != n or min(per) <= 0:
            fail(f"periods needs {n} positive entries", "manifold", "periods")
    if kind == "round_sphere" and n < 2:
        fail("round_sphere needs n >= 2", "problem", "n")
    for key in ("radius", "curve_radius", "curve_center"):
        if get("manifold", key) is not None and not get("manifold", key) > 0:
            fail("must be positive", "manifold", key)

    coeffs = {}
    for key in ("a", "b", "c"):
        text_val = get("coefficients", key)
        if text_val is None:
            continue
        try:
            parse_expression(text_val, n)
        except ConfigError as exc:
            fail(exc.args[0], "coefficients", key)
        coeffs[key] = text_val

    eps = get("schedule", "epsilon", [0.2, 0.1, 0.05])
    if not eps or min(eps) <= 0:
        fail("epsilon values must be positive", "schedule", "epsilon")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        fail("epsilon schedule must be strictly decreasing", "schedule", "epsilon")
    npe = get("schedule", "nodes_per_eps", 4)
    if npe < 1:
        fail("nodes_per_eps must be at least 1", "schedule", "nodes_per_eps")
    cutoff = get("schedule", "cutoff", "smooth_step")
    if cutoff not in _CUTOFFS:
        fail(f"cutoff must be one of {', '.join(_CUTOFFS)}", "schedule", "cutoff")

    tols = {"shooting": 1e-10, "fixed_point": 1e-9, "newton": 1e-8, "projection": 1e-12}
    for key in tols:
        val = get("tolerances", key)
        if val is not None:
            if not val > 0:
                fail("tolerances must be positive", "tolerances", key)
            tols[key] = val

    counts = get("landscape", "counts")
    if counts is not None and (len(counts) != n or min(counts) < 1):
        fail(f"counts needs {n} positive entries", "landscape", "counts")
    offset = get("landscape", "offset")
    if offset is not None and len(offset) != n:
        fail(f"offset needs {n} entries", "landscape", "offset")

    solve = {"seed_xi": get("solve", "seed_xi"), "initial": get("solve", "initial", "ansatz"),
             "reseed": get("solve", "reseed", "recentered"), "max_iter": get("solve", "max_iter", 30)}
    if solve["seed_xi"] is not None and len(solve["seed_xi"]) != n:
        fail(f"seed_xi needs {n} entries", "solve", "seed_xi")
    if solve["reseed"] not in ("recentered", "previous"):
        fail("reseed must be recentered or previous", "solve", "reseed")
    if solve["max_iter"] < 1:
        fail("max_iter must be at least 1", "solve", "max_iter")

    lift = {"samples": get("lift", "samples", 1000), "bound": get("lift", "bound", 3.0),
            "dilation_power": get("lift", "dilation_power", 1.0), "f": get("lift", "f")}
    if lift["samples"] < 1 or not lift["bound"] > 0:
        fail("samples and bound must be positive", "lift", "samples")
    if lift["f"] is not None:
        if kind not in ("flat_torus", "circle"):
            fail("f applies to flat_torus or circle bases only", "lift", "f")
        try:
            parse_expression(lift["f"], n)
        except ConfigError as exc:
            fail(exc.args[0], "lift", "f")

    manifold = {k: get("manifold", k) for k in SCHEMA["manifold"] if get("manifold", k) is not None}
    return ExperimentConfig(
        manifold=manifold, coefficients=coeffs, n=n, p=float(p), epsilons=eps, nodes_per_eps=npe, cutoff=cutoff,
        tolerances=tols, xi_counts=counts, xi_offset=offset, solve=solve, lift=lift,
        output=get("output", "directory", "out"), seed=get("output", "seed", 0), source=text,
        path=str(path) if path else None, lines=where,
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, path)


def default_xi_axes(config, manifold):
    from .reduction import xi_grid
    counts = config.xi_counts or [8] * manifold.dim
    return xi_grid(manifold, counts, None if config.xi_offset is None else np.asarray(config.xi_offset))
