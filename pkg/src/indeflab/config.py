"""Experiment configuration: sectioned key-value files.

Configuration files use INI syntax.  Parsing validates the problem
hypotheses eagerly (nonempty plus region, superlinear exponent, interface
compatibility of Robin components), so a config that parses cleanly can be
handed to any pipeline.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuation import StepControl, StopRule
from .errors import ConfigError, HypothesisViolation, InvalidDomainError
from .estimates import EstimateConfig, default_q
from .geometry import (
    DomainSpec,
    WeightSpec,
    build_grid,
    build_weight,
    validate_boundary_components,
)

_KNOWN_KEYS = {
    "domain": {
        "dimension", "extents", "resolution", "shape", "boundary",
        "boundary_left", "boundary_right", "boundary_bottom", "boundary_top",
        "robin_beta",
    },
    "diffusion": {"preset", "diagonal"},
    "weight": {
        "preset", "plus_region", "value", "plus_value", "minus_value",
        "gamma", "gamma_minus", "amplitude", "amplitude_minus",
        "values_file", "require_interior_closure",
    },
    "problem": {"exponent", "lambda"},
    "continuation": {
        "mode", "lambda_min", "lambda_max", "sup_ceiling", "thresholds",
        "initial_step", "min_step", "max_step", "growth", "jump_factor",
        "max_steps",
    },
    "estimates": {
        "q", "sublevel_threshold", "ball_radius", "flatness_tolerance",
        "fit_stability_tolerance",
    },
    "harnack": {"family_size", "q_ladder"},
    "exponents": {"dimension", "gamma"},
    "output": {"directory", "seed"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    domain: DomainSpec
    diffusion_preset: str
    diffusion_diagonal: tuple[float, ...] | None
    robin_beta: float
    weight: WeightSpec
    exponent: float
    lam: float
    stop: StopRule
    thresholds: tuple[float, ...]
    step: StepControl
    estimates: EstimateConfig
    harnack_family_size: int
    harnack_q_ladder: tuple[float, ...] | None
    exponents_dimension: int
    exponents_gamma: float | None
    output_directory: str
    seed: int
    echo: dict = field(default_factory=dict, compare=False)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(";", ",").split(",") if tok.strip())


def _axis_pairs(text: str, dimension: int) -> tuple[tuple[float, float], ...]:
    groups = [g for g in text.split(";") if g.strip()]
    if len(groups) == 1 and dimension == 2 and len(_floats(groups[0])) == 4:
        vals = _floats(groups[0])
        return ((vals[0], vals[1]), (vals[2], vals[3]))
    pairs = []
    for g in groups:
        vals = _floats(g)
        if len(vals) != 2:
            raise ConfigError(f"expected lo,hi pairs, got {text!r}")
        pairs.append((vals[0], vals[1]))
    return tuple(pairs)


class _SectionReader:
    def __init__(self, parser: configparser.ConfigParser, section: str):
        self.parser = parser
        self.section = section

    def _raw(self, key, default=None):
        if self.parser.has_option(self.section, key):
            return self.parser.get(self.section, key)
        return default

    def text(self, key, default=None):
        return self._raw(key, default)

    def floatval(self, key, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key}: not a number: {raw!r}") from exc

    def intval(self, key, default=None):
        raw = self._raw(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.section}] {key}: not an integer: {raw!r}") from exc

    def boolval(self, key, default=False):
        raw = self._raw(key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"[{self.section}] {key}: not a boolean: {raw!r}")


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a config file; hypothesis violations are rejected
    here with the violated condition named."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(strict=True)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    dom = _SectionReader(parser, "domain")
    dimension = dom.intval("dimension", 1)
    if dimension not in (1, 2):
        raise ConfigError("grid dimension must be 1 or 2")
    extents_text = dom.text("extents", "0,1" if dimension == 1 else "0,1;0,1")
    extents = _axis_pairs(extents_text, dimension)
    res_text = dom.text("resolution", "257" if dimension == 1 else "65,65")
    resolution = tuple(int(v) for v in _floats(res_text))
    if len(resolution) == 1 and dimension == 2:
        resolution = (resolution[0], resolution[0])
    boundary_tags = {"all": dom.text("boundary", "dirichlet")}
    for face in ("left", "right", "bottom", "top"):
        val = dom.text(f"boundary_{face}")
        if val is not None:
            boundary_tags[face] = val
    domain = DomainSpec(
        dimension=dimension,
        extents=extents,
        resolution=resolution,
        boundary_tags=boundary_tags,
        shape=dom.text("shape", "box"),
    )

    diff = _SectionReader(parser, "diffusion")
    diffusion_preset = diff.text("preset", "identity")
    diagonal_text = diff.text("diagonal")
    diffusion_diagonal = _floats(diagonal_text) if diagonal_text else None

    wsec = _SectionReader(parser, "weight")
    preset = wsec.text("preset", "constant")
    plus_region_text = wsec.text("plus_region")
    plus_region = _axis_pairs(plus_region_text, dimension) if plus_region_text else None
    values = None
    values_file = wsec.text("values_file")
    if values_file is not None:
        vpath = Path(values_file)
        if not vpath.is_absolute():
            vpath = path.parent / vpath
        if not vpath.exists():
            raise ConfigError(f"tabulated weight file not found: {vpath}")
        values = tuple(float(v) for v in np.loadtxt(vpath, ndmin=1))
    weight_spec = WeightSpec(
        preset=preset,
        plus_region=plus_region,
        value=wsec.floatval("value", 1.0),
        plus_value=wsec.floatval("plus_value", 1.0),
        minus_value=wsec.floatval("minus_value", -1.0),
        gamma=wsec.floatval("gamma", 0.0),
        gamma_minus=wsec.floatval("gamma_minus", 0.0),
        amplitude=wsec.floatval("amplitude", 1.0),
        amplitude_minus=wsec.floatval("amplitude_minus", 1.0),
        values=values,
        require_interior_closure=wsec.boolval("require_interior_closure", False),
    )

    prob = _SectionReader(parser, "problem")
    exponent = prob.floatval("exponent", 2.0)
    if exponent <= 1:
        raise ConfigError(
            "superlinearity hypothesis violated: the nonlinearity exponent "
            f"must satisfy r > 1, got {exponent}"
        )
    lam = prob.floatval("lambda", 0.0)
    if lam < 0:
        raise ConfigError(
            f"sign hypothesis violated: the spectral parameter must satisfy "
            f"lambda >= 0, got {lam}"
        )

    cont = _SectionReader(parser, "continuation")
    lambda_min = cont.floatval("lambda_min", 0.0)
    lambda_max = cont.floatval("lambda_max", 1e3)
    if lambda_min < 0:
        raise ConfigError(
            "sign hypothesis violated: the continuation window must stay "
            f"inside lambda >= 0, got lambda_min = {lambda_min}"
        )
    if lambda_max <= lambda_min:
        raise ConfigError("continuation window is empty")
    stop = StopRule(
        sup_ceiling=cont.floatval("sup_ceiling", 1e4),
        lambda_min=lambda_min,
        lambda_max=lambda_max,
    )
    thresholds_text = cont.text("thresholds", "10,100,1000,10000")
    thresholds = tuple(
        t for t in _floats(thresholds_text) if t <= stop.sup_ceiling
    )
    step = StepControl(
        initial=cont.floatval("initial_step", 0.05),
        minimum=cont.floatval("min_step", 1e-9),
        maximum=cont.floatval("max_step", 1.0),
        growth=cont.floatval("growth", 1.5),
        jump_factor=cont.floatval("jump_factor", 10.0),
        max_steps=cont.intval("max_steps", 5000),
    )

    est = _SectionReader(parser, "estimates")
    q = est.floatval("q")
    if q is None:
        q = default_q(dimension, exponent)
    try:
        estimates = EstimateConfig(
            q=q,
            sublevel_threshold=est.floatval("sublevel_threshold", 10.0),
            ball_radius=est.floatval("ball_radius", 1.0),
            flatness_tolerance=est.floatval("flatness_tolerance", 0.5),
            fit_stability_tolerance=est.floatval("fit_stability_tolerance", 10.0),
        )
        estimates.validate_for_dimension(dimension)
    except HypothesisViolation as exc:
        raise ConfigError(f"estimate configuration rejected: {exc}") from exc

    har = _SectionReader(parser, "harnack")
    family_size = har.intval("family_size", 50)
    ladder_text = har.text("q_ladder")
    q_ladder = _floats(ladder_text) if ladder_text else None

    expo = _SectionReader(parser, "exponents")
    exponents_dimension = expo.intval("dimension", dimension)
    exponents_gamma = expo.floatval("gamma")

    out = _SectionReader(parser, "output")
    output_directory = out.text("directory", "out")
    seed = out.intval("seed", 0)

    # hypothesis validation requires the actual geometry
    try:
        grid = build_grid(domain)
        weight = build_weight(grid, weight_spec)
    except (InvalidDomainError, HypothesisViolation) as exc:
        raise ConfigError(f"configuration rejected: {exc}") from exc
    report = validate_boundary_components(grid, weight)
    if not report.passed:
        raise ConfigError(
            "interface compatibility violated: a flux boundary component "
            "meets the closure of a sign region without being contained in "
            f"it (components {report.offending_components})"
        )

    echo = {s: dict(parser.items(s)) for s in parser.sections()}
    return ExperimentConfig(
        domain=domain,
        diffusion_preset=diffusion_preset,
        diffusion_diagonal=diffusion_diagonal,
        robin_beta=dom.floatval("robin_beta", 0.0),
        weight=weight_spec,
        exponent=exponent,
        lam=lam,
        stop=stop,
        thresholds=thresholds,
        step=step,
        estimates=estimates,
        harnack_family_size=family_size,
        harnack_q_ladder=q_ladder,
        exponents_dimension=exponents_dimension,
        exponents_gamma=exponents_gamma,
        output_directory=output_directory,
        seed=seed,
        echo=echo,
    )
