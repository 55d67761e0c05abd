"""Flat key-value experiment configuration (INI sections, no nesting)."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .lattices import EnsembleSpec, Symbol1D, symbol_fourier_coefficients
from .spectral import ScalarFunction

EXPERIMENT_KINDS = ("expansion_fit", "coefficient_formula", "identity_checks",
                    "szego_1d", "log_enhancement", "verify")


def parse_scalar_function(text: str) -> ScalarFunction:
    """Parse ``bump(c,w,k)`` / ``poly(c0,c1,...)`` / ``indicator(a,b)`` /
    ``entire(c0,c1,...)`` / ``identity`` / ``zero``."""
    text = text.strip()
    if text == "identity":
        return ScalarFunction.identity()
    if text == "zero":
        return ScalarFunction.zero()
    if not (text.endswith(")") and "(" in text):
        raise ConfigError(f"cannot parse function spec {text!r}")
    name, args = text[:-1].split("(", 1)
    name = name.strip()
    vals = [a.strip() for a in args.split(",")] if args.strip() else []
    try:
        if name == "bump":
            return ScalarFunction.bump(float(vals[0]), float(vals[1]), int(vals[2]))
        if name == "poly":
            return ScalarFunction.poly(tuple(float(v) for v in vals))
        if name == "entire":
            return ScalarFunction.entire(tuple(float(v) for v in vals))
        if name == "indicator":
            lo = -math.inf if vals[0] in ("-inf", "nan") else float(vals[0])
            hi = math.inf if vals[1] in ("inf", "+inf") else float(vals[1])
            return ScalarFunction.indicator(lo, hi)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad arguments in function spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown function form {name!r}")


def function_spec_string(f: ScalarFunction) -> str:
    if f.form in ("poly", "entire"):
        return f"{f.form}({', '.join(repr(v) for v in f.params)})"
    if f.form == "bump":
        c, w, k = f.params
        return f"bump({c!r}, {w!r}, {k})"
    if f.form == "indicator":
        return f"indicator({f.params[0]!r}, {f.params[1]!r})"
    return f.form


def parse_symbol(block: Dict[str, str], k_max: int = 32) -> Symbol1D:
    """Symbol from ``symbol.coeffs`` or a named form like ``expcos(0.5)``."""
    if "symbol.coeffs" in block:
        coeffs = {}
        for item in block["symbol.coeffs"].split():
            k, v = item.split(":", 1)
            coeffs[int(k)] = complex(v)
        return Symbol1D.from_dict(coeffs)
    form = block.get("symbol", "one").strip()
    if form == "one":
        return Symbol1D.from_dict({0: 1.0}, is_real_positive=True)
    if form.startswith("expcos(") and form.endswith(")"):
        c = float(form[len("expcos("):-1])
        n_quad = max(8 * k_max, 256)
        return symbol_fourier_coefficients(
            lambda th: np.exp(2.0 * c * np.cos(th)), k_max, n_quad)
    if form.startswith("coscoeff(") and form.endswith(")"):
        # coscoeff(a0, a1, ...): a(theta) = a0 + 2 sum_k a_k cos(k theta)
        vals = [float(v) for v in form[len("coscoeff("):-1].split(",")]
        coeffs = {0: complex(vals[0])}
        for k, v in enumerate(vals[1:], start=1):
            coeffs[k] = complex(v)
            coeffs[-k] = complex(v)
        return Symbol1D.from_dict(coeffs)
    raise ConfigError(f"unknown symbol form {form!r}")


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    samples: int = 1
    out_dir: str = "out"
    workers: int = 1
    d: int = 1
    ensemble: Optional[EnsembleSpec] = None
    g: Optional[ScalarFunction] = None
    h: Optional[ScalarFunction] = None
    options: Dict[str, str] = field(default_factory=dict)

    def opt_ints(self, key: str, default: str = "") -> List[int]:
        raw = self.options.get(key, default)
        return [int(v) for v in raw.split()] if raw.strip() else []

    def opt_int(self, key: str, default: int) -> int:
        return int(self.options.get(key, default))

    def opt_float(self, key: str, default: float) -> float:
        return float(self.options.get(key, default))

    def opt_bool(self, key: str, default: bool = False) -> bool:
        raw = self.options.get(key, "").strip().lower()
        if not raw:
            return default
        return raw in ("1", "true", "yes", "on")

    def validate(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.samples < 1:
            raise ConfigError("sample budget must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        ells = self.opt_ints("ells")
        if ells:
            if sorted(set(ells)) != ells:
                raise ConfigError("ell grid must be strictly increasing")
            r = self.opt_int("R", 0)
            if r and 2 * max(ells) > 4 * r:
                raise ConfigError("grid exceeds the ambient box: need max(ell) <= 2R")


def load_config(path: str, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (W, formula_L, ...)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found or unreadable")
    if "experiment" not in parser:
        raise ConfigError("config needs an [experiment] section")
    exp = dict(parser["experiment"])
    overrides = overrides or {}
    exp.update({k: v for k, v in overrides.items() if v is not None})

    try:
        kind = exp["kind"].strip()
    except KeyError:
        raise ConfigError("missing experiment 'kind'")

    ensemble = None
    d = int(exp.get("d", parser.get("ensemble", "d", fallback="1")))
    if "ensemble" in parser:
        block = {k: v for k, v in parser["ensemble"].items() if k != "d"}
        if "seed" not in block and "seed" in exp:
            block["seed"] = exp["seed"]
        ensemble = EnsembleSpec.from_config(block)
    g = parse_scalar_function(parser["g"]["form"]) if "g" in parser else None
    h = parse_scalar_function(parser["h"]["form"]) if "h" in parser else None

    options: Dict[str, str] = {}
    for section in parser.sections():
        if section in ("experiment", "ensemble", "g", "h"):
            continue
        for k, v in parser[section].items():
            options[k] = v

    cfg = ExperimentConfig(
        kind=kind,
        seed=int(exp.get("seed", 0)),
        samples=int(exp.get("samples", 1)),
        out_dir=exp.get("out", "out"),
        workers=int(exp.get("workers", 1)),
        d=d, ensemble=ensemble, g=g, h=h, options=options)
    cfg.validate()
    return cfg
