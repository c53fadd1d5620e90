"""Run configuration: flat dotted keys from a YAML file, overridden by ``--set``."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import grid, model
from .classify import ClassifierConfig
from .flow import StepperConfig
from .grid import RectDomain
from .threshold import ThresholdConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# key -> (type, default); None default means "use the library default"
SCHEMA: dict[str, tuple[type, Any]] = {
    "problem.preset": (str, "example2"),
    "problem.p": (float, None),
    "problem.r": (float, None),
    "problem.q": (float, None),
    "problem.tau": (float, None),
    "problem.xi": (float, None),
    "problem.gamma": (float, None),
    "problem.a0": (float, None),
    "problem.K": (float, None),
    "problem.B": (str, None),
    "problem.h": (str, None),
    "problem.amplitude": (float, None),
    "problem.f_kind": (str, None),
    "problem.g_kind": (str, None),
    "grid.nx": (int, None),
    "grid.ny": (int, None),
    "grid.Lx": (float, None),
    "grid.Ly": (float, None),
    "stepper.dt": (float, None),
    "stepper.solver_tol": (float, 1e-10),
    "stepper.solver": (str, "direct"),
    "stepper.max_cg_iters": (int, 2000),
    "classifier.eps_decay": (float, None),
    "classifier.M_blow": (float, 1e6),
    "classifier.T_max": (float, 50.0),
    "classifier.Kstar": (float, None),
    "classifier.growth_window": (int, 10),
    "classifier.growth_rate": (float, 0.5),
    "classifier.certificate": (bool, False),
    "classifier.mhat_budget": (int, 4),
    "threshold.tol_s": (float, 1e-4),
    "threshold.max_iters": (int, 60),
    "threshold.plateau_tol": (float, 1e-4),
    "threshold.newton_tol": (float, 1e-10),
    "init.mode": (str, "e1"),
    "init.scale": (float, 1.0),
    "simulate.t_end": (float, 1.0),
    "simulate.stride": (int, 1),
    "simulate.snapshot_stride": (int, 0),
    "oracle.t_end": (float, 0.05),
    "oracle.n_sub": (int, 64),
    "oracle.dt": (float, 1e-4),
    "seed": (int, 0),
    "output_dir": (str, "out"),
}

_PRESET_KEYS = {
    "example1": {"p", "tau", "xi", "gamma", "K", "B", "h", "amplitude", "a0"},
    "example2": {"p", "r", "q", "gamma", "K", "B", "h", "amplitude", "a0"},
    "cubic": {"K"},
    "heat": {"K"},
}
_DEFAULT_DOMAINS = {"example2": RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 32, 32)}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    typ = SCHEMA[key][0]
    if value is None:
        return None
    try:
        if typ is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if typ is int:
            f = float(value)
            if f != int(f):
                raise ValueError(value)
            return int(f)
        if typ is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {typ.__name__}") from None


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), yaml.safe_load(v) if v.strip() else None


@dataclass(frozen=True)
class RunConfig:
    values: tuple  # sorted (key, value) pairs, fully resolved

    def __getitem__(self, key):
        return dict(self.values)[key]

    def as_dict(self) -> dict:
        return dict(self.values)

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self["output_dir"])

    def domain(self) -> RectDomain:
        base = _DEFAULT_DOMAINS.get(self["problem.preset"], RectDomain())
        v = self.as_dict()
        try:
            return RectDomain(
                v["grid.Lx"] if v["grid.Lx"] is not None else base.Lx,
                v["grid.Ly"] if v["grid.Ly"] is not None else base.Ly,
                v["grid.nx"] if v["grid.nx"] is not None else base.nx,
                v["grid.ny"] if v["grid.ny"] is not None else base.ny,
            )
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def spec(self) -> model.ProblemSpec:
        v = self.as_dict()
        name = v["problem.preset"]
        d = self.domain()
        allowed = _PRESET_KEYS[name]
        over = {}
        for key, val in v.items():
            if not key.startswith("problem.") or val is None:
                continue
            short = key.split(".", 1)[1]
            if short in ("preset", "f_kind", "g_kind"):
                continue
            # with a kind override these keys parametrize the replacement model instead
            if short in ("p", "r", "gamma") and v["problem.f_kind"] is not None:
                continue
            if short == "q" and v["problem.g_kind"] is not None:
                continue
            if short not in allowed:
                raise ConfigError(f"{key}: not a parameter of preset {name!r}")
            over[short] = val
        try:
            spec = model.preset(name, d, **over)
            if v["problem.f_kind"] is not None:
                spec = spec.with_(f=_f_override(v, spec))
            if v["problem.g_kind"] is not None:
                spec = spec.with_(g=_g_override(v, spec))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from None
        return spec

    def stepper(self) -> StepperConfig:
        return _build(StepperConfig, "stepper", dt=self["stepper.dt"], solver_tol=self["stepper.solver_tol"],
                      solver=self["stepper.solver"], max_cg_iters=self["stepper.max_cg_iters"])

    def classifier(self) -> ClassifierConfig:
        return _build(ClassifierConfig, "classifier", eps_decay=self["classifier.eps_decay"],
                      M_blow=self["classifier.M_blow"], T_max=self["classifier.T_max"],
                      Kstar=self["classifier.Kstar"], growth_window=self["classifier.growth_window"],
                      growth_rate=self["classifier.growth_rate"])

    def threshold(self) -> ThresholdConfig:
        return _build(ThresholdConfig, "threshold", tol_s=self["threshold.tol_s"],
                      max_iters=self["threshold.max_iters"], plateau_tol=self["threshold.plateau_tol"],
                      newton_tol=self["threshold.newton_tol"])

    def initial_direction(self) -> np.ndarray:
        """H1-normalized ray direction: the first eigenmode or a seeded smooth field."""
        d = self.domain()
        mode = self["init.mode"]
        if mode == "e1":
            v = grid.eigenmode(d)
        elif mode == "random":
            basis = grid.spectral_basis(d)
            rng = np.random.default_rng(self.seed)
            c = np.zeros(d.shape)
            k, l = min(6, d.nx), min(6, d.ny)
            c[:k, :l] = rng.standard_normal((k, l)) / (1.0 + np.add.outer(np.arange(k), np.arange(l))) ** 2
            v = basis.synthesize(c)
        else:
            raise ConfigError(f"init.mode: expected 'e1' or 'random', got {mode!r}")
        return v / grid.norm_h1(v, d)


def _f_override(v, spec):
    kind = v["problem.f_kind"]
    if kind == "linear":
        return model.NonlinearityModel("linear", p=v["problem.p"] if v["problem.p"] is not None else 1.0, r=None,
                                       gamma=v["problem.gamma"] if v["problem.gamma"] is not None else 1.0)
    if kind == "polynomial":
        return model.NonlinearityModel("polynomial", p=v["problem.p"] or spec.f.p,
                                       r=v["problem.r"] or spec.f.r or spec.f.p,
                                       gamma=v["problem.gamma"] or spec.f.gamma)
    raise ConfigError(f"problem.f_kind: expected 'linear' or 'polynomial', got {kind!r}")


def _g_override(v, spec):
    kind = v["problem.g_kind"]
    if kind not in ("power", "constant"):
        raise ConfigError(f"problem.g_kind: expected 'power' or 'constant', got {kind!r}")
    q = v["problem.q"] if v["problem.q"] is not None else spec.g.q
    return model.NonlocalModel(kind, q=q)


def _build(cls, section, **kwargs):
    kwargs = {k: val for k, val in kwargs.items() if val is not None}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def load_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of dotted keys")
    return _flatten(data)


def parse_config(path=None, preset=None, sets=(), out=None, seed=None) -> RunConfig:
    """Merge defaults, file values and flag overrides, then validate."""
    raw = {}
    if path is not None:
        raw.update(load_file(path))
    if preset is not None:
        raw["problem.preset"] = preset
    for item in sets:
        k, val = parse_assignment(item)
        raw[k] = val
    if out is not None:
        raw["output_dir"] = out
    if seed is not None:
        raw["seed"] = seed
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    vals = {k: default for k, (_, default) in SCHEMA.items()}
    for k, val in raw.items():
        vals[k] = _coerce(k, val)
    if vals["problem.preset"] not in _PRESET_KEYS:
        raise ConfigError(f"problem.preset: unknown preset {vals['problem.preset']!r}; "
                          f"choose from {sorted(_PRESET_KEYS)}")
    for key in ("simulate.t_end", "oracle.t_end", "oracle.dt"):
        if not vals[key] > 0:
            raise ConfigError(f"{key}: must be positive")
    if vals["init.scale"] < 0:
        raise ConfigError("init.scale: must be nonnegative")
    if vals["simulate.stride"] < 1 or vals["simulate.snapshot_stride"] < 0:
        raise ConfigError("simulate.stride must be >= 1 and simulate.snapshot_stride >= 0")
    if vals["classifier.mhat_budget"] < 1:
        raise ConfigError("classifier.mhat_budget: must be at least 1")
    cfg = RunConfig(tuple(sorted(vals.items())))
    # build everything once so range errors surface at parse time
    cfg.spec()
    cfg.stepper()
    cfg.classifier()
    cfg.threshold()
    return cfg
