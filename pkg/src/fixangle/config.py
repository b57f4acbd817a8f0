"""Experiment configuration: a versioned YAML tree validated into :class:`ExperimentConfig`.

Example
-------
.. code-block:: yaml

    schema: fixangle-experiment/1
    kind: stability            # forward | certify | invert | stability | symmetric
    seed: 0
    dimension: 2
    metric: {family: product, amplitude: 0.05, center: [0.1, 0.1], radius: 0.8}
    potentials:
      - {family: gaussian, amplitude: 1.0, center: [0.1, 0.0], width: 0.3}
      - {family: zero}
    grid: {resolutions: [129], eps_factor: 6.0, eps_policy: fixed, T: 1.5}
    carleman: {iota: 2.0, lam: 2.0, sigma_ladder: [1, 10, 100, 1000, 10000]}
    stability: {sigma: 1.0, n_pairs: 0, energy: false}
    output: out/

A potential entry may use ``family: random`` (with optional ``n_bumps``);
it is drawn from the configured seed.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .carleman import SIGMA_LADDER, T_RULES
from .errors import ConfigError
from .geometry import (METRIC_FAMILIES, POTENTIAL_FAMILIES, MetricField, PotentialField, make_metric,
                       make_potential, random_potential)

SCHEMA = "fixangle-experiment/1"
KINDS = ("forward", "certify", "invert", "stability", "symmetric")
EPS_POLICIES = ("fixed", "sqrt")
EPS_REFERENCE = 129  # resolution at which both policies agree
_TOP = {"schema", "kind", "seed", "dimension", "metric", "potentials", "grid", "carleman", "stability", "output"}


@dataclass
class GridSpec:
    resolutions: list[int] = field(default_factory=lambda: [129])
    eps_factor: float | None = 6.0
    eps: float | None = None
    eps_policy: str = "fixed"
    T: float = 1.5
    n_theta: int | None = None

    def eps_for(self, resolution: int) -> float:
        """Mollifier width at a resolution (fixed ``eps`` wins over ``eps_factor``).

        ``eps_policy="fixed"`` keeps ``ε/Δx = eps_factor``. ``"sqrt"`` refines
        ε like ``Δx^{1/2}``, matching the fixed policy at 129 nodes, so that
        the ``(Δx/ε)^2`` dispersion bias of the separated front value also
        vanishes under refinement.
        """
        if self.eps is not None:
            return self.eps
        h = 2.0 / (resolution - 1)
        if self.eps_policy == "sqrt":
            return self.eps_factor * h * np.sqrt((resolution - 1) / (EPS_REFERENCE - 1))
        return self.eps_factor * h


@dataclass
class CarlemanSpec:
    iota: float = 2.0
    lam: float = 2.0
    sigma_ladder: list[float] = field(default_factory=lambda: list(SIGMA_LADDER))
    t_rule: str = "corrected"
    n_samples: int = 100_000


@dataclass
class StabilitySpec:
    sigma: float = 1.0
    n_pairs: int = 0
    energy: bool = False


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    kind: str
    metric: dict
    potentials: list[dict]
    grid: GridSpec = field(default_factory=GridSpec)
    carleman: CarlemanSpec = field(default_factory=CarlemanSpec)
    stability: StabilitySpec = field(default_factory=StabilitySpec)
    seed: int = 0
    dimension: int = 2
    output: str = "out"
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    def build_metric(self) -> MetricField:
        p = dict(self.metric)
        fam = p.pop("family")
        return make_metric(fam, self.dimension, **p)

    def build_potentials(self) -> list[PotentialField]:
        """Potentials in order; random entries draw from one generator seeded by ``seed``."""
        rng = np.random.default_rng(self.seed)
        out = []
        for i, spec in enumerate(self.potentials):
            p = dict(spec)
            fam = p.pop("family")
            if fam == "random":
                out.append(random_potential(rng, dim=self.dimension, **p))
            else:
                try:
                    out.append(make_potential(fam, **p))
                except ConfigError as exc:
                    raise ConfigError(str(exc), f"potentials[{i}]") from exc
        return out


def _section(raw: dict, key: str, cls, path: str):
    data = raw.get(key) or {}
    if not isinstance(data, dict):
        raise ConfigError("must be a mapping", path)
    known = set(cls.__dataclass_fields__)
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", path)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc), path) from exc


def validate_config(raw: dict) -> ExperimentConfig:
    """Turn a parsed tree into an :class:`ExperimentConfig`, raising with field paths."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping")
    extra = set(raw) - _TOP
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)}", "<root>")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"expected {SCHEMA!r}, got {raw.get('schema')!r}", "schema")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"must be one of {KINDS}, got {kind!r}", "kind")
    dim = raw.get("dimension", 2)
    if dim != 2 and kind != "certify":
        raise ConfigError("only n = 2 is supported for wave experiments", "dimension")
    if not isinstance(dim, int) or dim < 2:
        raise ConfigError("must be an integer >= 2", "dimension")

    metric = raw.get("metric") or {"family": "euclidean"}
    if not isinstance(metric, dict) or metric.get("family") not in METRIC_FAMILIES:
        raise ConfigError(f"family must be one of {sorted(METRIC_FAMILIES)}", "metric.family")

    pots = raw.get("potentials") or [{"family": "zero"}]
    if not isinstance(pots, list) or not 1 <= len(pots) <= 2:
        raise ConfigError("must list one or two potentials", "potentials")
    for i, p in enumerate(pots):
        fam = p.get("family") if isinstance(p, dict) else None
        if fam not in POTENTIAL_FAMILIES and fam != "random":
            raise ConfigError(f"family must be one of {sorted(POTENTIAL_FAMILIES) + ['random']}",
                              f"potentials[{i}].family")

    grid = _section(raw, "grid", GridSpec, "grid")
    res = grid.resolutions
    if not isinstance(res, list) or not res:
        raise ConfigError("must be a non-empty list", "grid.resolutions")
    for i, r in enumerate(res):
        if not isinstance(r, int) or r < 9 or r % 2 == 0:
            raise ConfigError(f"resolutions must be odd integers >= 9, got {r!r}", f"grid.resolutions[{i}]")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ConfigError("must be strictly increasing", "grid.resolutions")
    if grid.eps is None and (grid.eps_factor is None or grid.eps_factor <= 0):
        raise ConfigError("set a positive eps or eps_factor", "grid.eps_factor")
    if grid.eps is not None and grid.eps <= 0:
        raise ConfigError("must be positive", "grid.eps")
    if grid.eps_policy not in EPS_POLICIES:
        raise ConfigError(f"must be one of {EPS_POLICIES}", "grid.eps_policy")
    if grid.T <= 0:
        raise ConfigError("must be positive", "grid.T")

    carl = _section(raw, "carleman", CarlemanSpec, "carleman")
    if carl.iota <= 0:
        raise ConfigError("must be positive", "carleman.iota")
    if carl.lam < 1:
        raise ConfigError("must be at least 1", "carleman.lam")
    if carl.t_rule not in T_RULES:
        raise ConfigError(f"must be one of {T_RULES}", "carleman.t_rule")
    if not carl.sigma_ladder or any(s <= 0 for s in carl.sigma_ladder):
        raise ConfigError("must be a non-empty list of positive values", "carleman.sigma_ladder")

    stab = _section(raw, "stability", StabilitySpec, "stability")
    if stab.sigma <= 0:
        raise ConfigError("must be positive", "stability.sigma")
    if stab.n_pairs < 0:
        raise ConfigError("must be non-negative", "stability.n_pairs")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("must be a non-negative integer", "seed")

    cfg = ExperimentConfig(kind=kind, metric=dict(metric), potentials=[dict(p) for p in pots], grid=grid,
                           carleman=carl, stability=stab, seed=seed, dimension=dim,
                           output=str(raw.get("output", "out")))
    # constructing the fields surfaces parameter errors now rather than mid-run
    cfg.build_metric()
    cfg.build_potentials()
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a YAML config; ``overrides`` are applied on the raw tree first."""
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(p)) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", str(p)) from exc
    return validate_config(apply_overrides(raw, overrides or {}))


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Apply ``resolution``, ``seed`` and ``output`` overrides to a raw config tree."""
    out = copy.deepcopy(raw) if isinstance(raw, dict) else raw
    if not isinstance(out, dict):
        return out
    if overrides.get("resolution") is not None:
        out.setdefault("grid", {})
        out["grid"] = {**(out["grid"] or {}), "resolutions": [int(r) for r in overrides["resolution"]]}
    if overrides.get("seed") is not None:
        out["seed"] = int(overrides["seed"])
    if overrides.get("output") is not None:
        out["output"] = str(overrides["output"])
    return out


def family_listing() -> dict[str, dict[str, str]]:
    return {"metric": {k: v[1] for k, v in sorted(METRIC_FAMILIES.items())},
            "potential": {**{k: v[1] for k, v in sorted(POTENTIAL_FAMILIES.items())},
                          "random": "sum of Gaussians drawn from the seed"}}
