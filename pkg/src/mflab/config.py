"""Experiment configuration: sectioned ``key = value`` files read with :mod:`configparser`.

Example::

    [data]
    law = uniform_sphere
    dim = 2
    labels = binary
    lambda = halfspace:0.8,0.2
    seed = 0

    [loss]
    kind = softplus

    [init]
    m = 512
    seed = 0

    [flow]
    dt = 0.05
    T = 5
    integrator = rk4
    batch_size = 512

    [probe]
    grid_size = 256
    grid_seed = 0

    [output]
    directory = out

Validation errors raise :class:`ConfigError` carrying the offending line.
"""
from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import (NOISES, BinaryLabels, DataModel, Empirical, GaussianMixture, RegressionLabels,
                   UniformBall, UniformSphere, constant_probability, halfspace_probability,
                   linear_target, zero_target)
from .field import ActivationSpec
from .flow import BATCH_MODES, GATINGS, INTEGRATORS, FlowConfig
from .loss import LossModel

SECTIONS = ("data", "loss", "init", "flow", "probe", "output", "diagnostics", "sweep")
REQUIRED = ("data", "loss", "init", "flow")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "<config>", line: Optional[int] = None):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    model: DataModel
    loss: LossModel
    activation: ActivationSpec
    m: int
    init_seed: int
    init_file: Optional[str]
    flow: FlowConfig
    grid_size: int
    grid_seed: int
    grid_file: Optional[str]
    output: str
    mbr_samples: int
    sard_bins: int
    sweep: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()

    @property
    def dim(self) -> int:
        return self.model.dim


def _line_index(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    index: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index.setdefault((section, None), n)
        elif section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            index.setdefault((section, key), n)
    return index


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines, path: str):
        self.parser = parser
        self.lines = lines
        self.path = path
        self.used = set()

    def fail(self, section: str, key: Optional[str], message: str):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        raise ConfigError(message, self.path, line)

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section: str, key: str, default=None) -> Optional[str]:
        self.used.add((section, key))
        if not self.has(section, key):
            if default is None:
                self.fail(section, None, f"missing required key [{section}] {key}")
            return default
        return self.parser.get(section, key).strip()

    def typed(self, section: str, key: str, kind, default=None):
        text = self.raw(section, key, None if default is None else str(default))
        try:
            if kind is bool:
                return text.lower() in ("1", "true", "yes", "on")
            return kind(text)
        except ValueError:
            self.fail(section, key, f"[{section}] {key} = {text!r} is not a valid {kind.__name__}")

    def floats(self, section: str, key: str) -> np.ndarray:
        text = self.raw(section, key)
        try:
            return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])
        except ValueError:
            self.fail(section, key, f"[{section}] {key} must be a comma separated list of numbers")

    def vectors(self, section: str, key: str) -> np.ndarray:
        text = self.raw(section, key)
        try:
            rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
            return np.array(rows, dtype=float)
        except ValueError:
            self.fail(section, key, f"[{section}] {key} must be ';' separated vectors")


def _input_law(rd: _Reader, d: int):
    law = rd.raw("data", "law").lower()
    try:
        if law == "uniform_sphere":
            return UniformSphere(d, rd.typed("data", "radius", float, 1.0))
        if law == "uniform_ball":
            return UniformBall(d, rd.typed("data", "radius", float, 1.0))
        if law == "gaussian":
            return GaussianMixture.standard(d)
        if law == "gaussian_mixture":
            return GaussianMixture(rd.vectors("data", "means"), rd.floats("data", "scales"),
                                   rd.floats("data", "weights"))
        if law == "empirical":
            return Empirical(rd.vectors("data", "points"))
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        rd.fail("data", "law", str(err))
    rd.fail("data", "law", f"unknown input law {law!r}")


def _label_model(rd: _Reader):
    labels = rd.raw("data", "labels").lower()
    if labels == "binary":
        spec = rd.raw("data", "lambda", "0.5")
        try:
            if spec.startswith("halfspace:"):
                vals = [float(v) for v in spec.split(":", 1)[1].split(",")]
                if len(vals) not in (2, 3):
                    raise ValueError("halfspace takes pos,neg[,axis]")
                axis = int(vals[2]) if len(vals) == 3 else 0
                lam = halfspace_probability(vals[0], vals[1], axis)
                if not all(0 <= v <= 1 for v in vals[:2]):
                    raise ValueError("probabilities must lie in [0, 1]")
            else:
                p = float(spec)
                if not 0 <= p <= 1:
                    raise ValueError("probability must lie in [0, 1]")
                lam = constant_probability(p)
        except ValueError as err:
            rd.fail("data", "lambda", f"[data] lambda: {err}")
        return BinaryLabels(lam)
    if labels == "regression":
        spec = rd.raw("data", "target", "zero")
        try:
            if spec == "zero":
                target = zero_target
            elif spec.startswith("linear:"):
                parts = spec.split(":", 1)[1].split(";")
                coef = [float(v) for v in parts[0].split(",")]
                target = linear_target(coef, float(parts[1]) if len(parts) > 1 else 0.0)
            else:
                raise ValueError(f"unknown target {spec!r}")
        except ValueError as err:
            rd.fail("data", "target", f"[data] target: {err}")
        noise = rd.raw("data", "noise", "none").lower()
        if noise not in NOISES:
            rd.fail("data", "noise", f"[data] noise must be one of {NOISES}")
        try:
            return RegressionLabels(target, noise, rd.typed("data", "noise_scale", float, 0.0))
        except ValueError as err:
            rd.fail("data", "noise_scale", str(err))
    rd.fail("data", "labels", f"unknown label model {labels!r}")


def load_config(path: str, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Parse and validate a config file; ``overrides`` maps ``section.key`` to replacement text."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err.strerror}", path) from None
    return parse_config(text, path, overrides)


def parse_config(text: str, path: str = "<config>",
                 overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        raise ConfigError(err.message.splitlines()[0] if hasattr(err, "message") else str(err),
                          path, line) from None
    lines = _line_index(text)
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", path, lines.get((section, None)))
    for section in REQUIRED:
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", path)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)
    rd = _Reader(parser, lines, path)

    d = rd.typed("data", "dim", int)
    if d < 1:
        rd.fail("data", "dim", "[data] dim must be >= 1")
    law = _input_law(rd, d)
    if law.dim != d:
        rd.fail("data", "dim", f"[data] dim = {d} but the input law has dimension {law.dim}")
    model = DataModel(law, _label_model(rd), rd.typed("data", "seed", int, 0))

    kind = rd.raw("loss", "kind").lower()
    p = rd.typed("loss", "p", float) if rd.has("loss", "p") else None
    clip = rd.typed("loss", "clip", float) if rd.has("loss", "clip") else None
    try:
        loss = LossModel(kind, p, clip)
    except ValueError as err:
        rd.fail("loss", "kind", f"[loss] {err}")
    if kind == "power" and not model.bounded:
        rd.fail("loss", "kind", "power loss requires bounded data: inputs and labels need "
                "compact support (use uniform_sphere/uniform_ball/empirical inputs with "
                "binary labels or bounded regression noise)")
    if kind == "softplus" and model.label_model.kind != "binary":
        rd.fail("loss", "kind", "softplus loss requires binary labels")

    m = rd.typed("init", "m", int)
    if m < 1:
        rd.fail("init", "m", "[init] m must be >= 1")
    if rd.has("init", "d") and rd.typed("init", "d", int) != d:
        rd.fail("init", "d", "[init] d must equal [data] dim")
    init_law = rd.raw("init", "law", "omni").lower()
    if init_law not in ("omni", "file"):
        rd.fail("init", "law", f"[init] law must be omni or file, got {init_law!r}")
    init_file = rd.raw("init", "path") if init_law == "file" else None

    freeze = rd.typed("flow", "freeze_field", float) if rd.has("flow", "freeze_field") else None
    dt, horizon = rd.typed("flow", "dt", float), rd.typed("flow", "T", float)
    if not 0 < dt < horizon:
        rd.fail("flow", "dt", f"[flow] need 0 < dt < T, got dt = {dt}, T = {horizon}")
    for key, allowed in (("integrator", INTEGRATORS), ("batch_mode", BATCH_MODES),
                         ("gating", GATINGS)):
        if rd.has("flow", key) and rd.raw("flow", key).lower() not in allowed:
            rd.fail("flow", key, f"[flow] {key} must be one of {allowed}")
    try:
        activation = ActivationSpec(rd.typed("flow", "leak", float, 0.0),
                                    rd.typed("flow", "cutoff", bool, False))
        batch_size = rd.typed("flow", "batch_size", int, 1024)
        flow = FlowConfig(
            dt=dt, T=horizon,
            integrator=rd.raw("flow", "integrator", "rk4").lower(), batch_size=batch_size,
            batch_mode=rd.raw("flow", "batch_mode", "fresh").lower(),
            pool_size=rd.typed("flow", "pool_size", int, 4096),
            record_every=rd.typed("flow", "record_every", int, 10), freeze_field=freeze,
            eval_size=rd.typed("flow", "eval_size", int, batch_size),
            gating=rd.raw("flow", "gating", "step").lower(),
            cone_tol=rd.typed("flow", "cone_tol", float, 1e-9))
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        rd.fail("flow", None, f"[flow] {err}")

    sweep: List[Tuple[str, Tuple[str, ...]]] = []
    if parser.has_section("sweep"):
        for key, value in parser.items("sweep"):
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name or section == "sweep":
                rd.fail("sweep", key, f"[sweep] key {key!r} must look like section.key")
            sweep.append((key, tuple(v.strip() for v in value.split(",") if v.strip())))

    return ExperimentConfig(
        model=model, loss=loss, activation=activation, m=m,
        init_seed=rd.typed("init", "seed", int, 0), init_file=init_file, flow=flow,
        grid_size=rd.typed("probe", "grid_size", int, 256),
        grid_seed=rd.typed("probe", "grid_seed", int, 0),
        grid_file=rd.raw("probe", "file", "") or None,
        output=rd.raw("output", "directory", "out"),
        mbr_samples=rd.typed("diagnostics", "mbr_samples", int, 100_000),
        sard_bins=rd.typed("diagnostics", "sard_bins", int, 20),
        sweep=tuple(sweep))


def sweep_cells(sweep) -> List[Dict[str, str]]:
    """Cartesian product of sweep values as override dictionaries."""
    if not sweep:
        return [{}]
    keys = [k for k, _ in sweep]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in sweep))]


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Replace every seed (data, init, probe grid) by ``seed``."""
    return replace(cfg, model=replace(cfg.model, seed=seed), init_seed=seed, grid_seed=seed)
