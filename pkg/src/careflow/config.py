"""Pipeline configuration: one YAML file drives every command.

Defaults are embedded here and printable via ``careflow config
--dump-defaults``; a user file overrides them key by key (deep merge).
The file is versioned through ``schema_version``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .eventlog import SynthSpec, SynthTemplate
from .pathway import CodeMap

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration problems; the CLI maps these to exit code 2."""


DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "code_map": {
        "departments": {
            "AD": "A",
            "IC#1": "F",
            "IC#2": "F",
            "SD#1": "I",
            "SD#2": "I",
            "OR": "I",
            "CC": "C",
            "CD#1": "E",
            "CD#2": "D",
            "OD": "N",
        },
        "cc_code": "C",
        "or_code": "I",
        "admission_code": "A",
    },
    "basic_map": {
        "AD": "AD",
        "IC#1": "IC",
        "IC#2": "IC",
        "CD#1": "CD",
        "CD#2": "CD",
        "CC": "CC",
        "OR": "OR",
    },
    "synth": {
        "n_cases": 2000,
        "seed": 20140101,
        "daily_mean": 1.57,
        "daily_sd": 1.48,
        # elevated daytime arrivals, quiet nights
        "hour_weights": [2, 1, 1, 1, 1, 2, 3, 4, 6, 8, 9, 9,
                         8, 8, 7, 7, 7, 6, 6, 5, 4, 4, 3, 2],
        "noise": {"p_insert": 0.02, "p_delete": 0.02, "p_swap": 0.02},
        "surgery_minutes": [43.92, 28.71],
        "templates": [
            {
                "codes": "AFIFE",
                "weight": 0.35,
                "los_hours": {"A": [2.0, 1.0], "F": [19.9, 19.9], "I": [3.0, 1.5], "E": [107.26, 107.26]},
            },
            {
                "codes": "AFE",
                "weight": 0.25,
                "los_hours": {"A": [2.0, 1.0], "F": [43.49, 43.49], "E": [107.26, 107.26]},
            },
            {
                "codes": "AEFNINFEDE",
                "weight": 0.22,
                "los_hours": {"A": [2.0, 1.0], "E": [72.74, 72.74], "F": [19.9, 19.9],
                              "N": [48.0, 48.0], "I": [3.0, 1.5], "D": [72.74, 72.74]},
            },
            {
                "codes": "ACIFICIFE",
                "weight": 0.18,
                "los_hours": {"A": [2.0, 1.0], "C": [2.0, 1.0], "I": [3.0, 1.5],
                              "F": [19.9, 19.9], "E": [107.26, 107.26]},
            },
        ],
    },
    "cluster": {
        "krange": [2, 8],
        "seed": 0,
        "cv_unweighted": False,
        "min_cluster_size": 5,
    },
    "tree": {
        "max_depth": 6,
        "min_leaf": 5,
    },
    "templates": {},  # cluster index -> override string
    "distributions": {
        "los_by_department": False,
        "lognormal_los": False,
        "bold_coverage": 0.70,
    },
    "scenario": {
        "horizon_days": 60,
        "replications": 100,
        "base_seed": 42,
        "warmup_days": 0,
        "n_angiography": [2, 3, 4, 5],
        "background_scale": [0.5, 1.0, 1.5, 2.0],
        "target_scale": 1.0,
        "background_competes": True,
    },
}


@dataclass
class ClusterParams:
    krange: tuple[int, int] = (2, 8)
    seed: int = 0
    cv_unweighted: bool = False
    min_cluster_size: int = 5

    def ks(self) -> range:
        return range(self.krange[0], self.krange[1] + 1)


@dataclass
class TreeParams:
    max_depth: int = 6
    min_leaf: int = 5


@dataclass
class DistOptions:
    los_by_department: bool = False
    lognormal_los: bool = False
    bold_coverage: float = 0.70


@dataclass
class ScenarioGrid:
    horizon_days: int = 60
    replications: int = 100
    base_seed: int = 42
    warmup_days: int = 0
    n_angiography: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    background_scale: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    target_scale: float = 1.0
    background_competes: bool = True

    def cells(self) -> list[tuple[int, float]]:
        return [(n, s) for n in self.n_angiography for s in self.background_scale]


@dataclass
class PipelineConfig:
    code_map: CodeMap
    basic_map: dict[str, str]
    synth: SynthSpec
    cluster: ClusterParams
    tree: TreeParams
    template_overrides: dict[int, str]
    distributions: DistOptions
    scenario: ScenarioGrid
    raw: dict[str, Any]


def _deep_merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key in out and isinstance(out[key], Mapping) and isinstance(value, Mapping):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def dump_defaults() -> str:
    return yaml.safe_dump(DEFAULTS, sort_keys=True, default_flow_style=False)


def load_config(path: str | Path | None = None, seed: int | None = None) -> PipelineConfig:
    """Read, merge over defaults and validate a config file.

    ``seed`` overrides both the generator seed and the scenario base
    seed, matching the CLI's global ``--seed`` flag.
    """
    data: dict[str, Any] = DEFAULTS
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(user, Mapping):
            raise ConfigError(f"config root must be a mapping, got {type(user).__name__}")
        data = _deep_merge(DEFAULTS, user)

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")

    return _build(data, seed)


def _build(data: Mapping[str, Any], seed: int | None) -> PipelineConfig:
    try:
        cm = data["code_map"]
        code_map = CodeMap(
            departments=dict(cm["departments"]),
            cc_code=cm["cc_code"],
            or_code=cm["or_code"],
            admission_code=cm["admission_code"],
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad code_map: {exc}") from exc

    basic_map = dict(data.get("basic_map", {}))

    try:
        sy = data["synth"]
        letter_departments = {code: dept for dept, code in code_map.departments.items()}
        templates = [
            SynthTemplate(
                codes=t["codes"],
                weight=float(t["weight"]),
                los_hours={k: (float(v[0]), float(v[1])) for k, v in t["los_hours"].items()},
            )
            for t in sy["templates"]
        ]
        synth = SynthSpec(
            n_cases=int(sy["n_cases"]),
            templates=templates,
            p_insert=float(sy["noise"]["p_insert"]),
            p_delete=float(sy["noise"]["p_delete"]),
            p_swap=float(sy["noise"]["p_swap"]),
            daily_mean=float(sy["daily_mean"]),
            daily_sd=float(sy["daily_sd"]),
            hour_weights=[float(x) for x in sy["hour_weights"]],
            seed=int(sy["seed"]) if seed is None else seed,
            surgery_minutes=tuple(float(x) for x in sy["surgery_minutes"]),
            letter_departments=letter_departments,
            cc_letter=code_map.cc_code,
            or_letter=code_map.or_code,
        )
        synth.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad synth section: {exc}") from exc

    try:
        cl = data["cluster"]
        krange = tuple(int(x) for x in cl["krange"])
        if len(krange) != 2 or krange[0] < 1 or krange[1] < krange[0]:
            raise ConfigError(f"cluster.krange must be [lo, hi] with 1 <= lo <= hi, got {cl['krange']}")
        cluster = ClusterParams(
            krange=krange,
            seed=int(cl["seed"]),
            cv_unweighted=bool(cl["cv_unweighted"]),
            min_cluster_size=int(cl["min_cluster_size"]),
        )
        tree = TreeParams(max_depth=int(data["tree"]["max_depth"]), min_leaf=int(data["tree"]["min_leaf"]))
        overrides = {int(k): str(v) for k, v in (data.get("templates") or {}).items()}
        do = data["distributions"]
        dist = DistOptions(
            los_by_department=bool(do["los_by_department"]),
            lognormal_los=bool(do["lognormal_los"]),
            bold_coverage=float(do["bold_coverage"]),
        )
        if not 0 < dist.bold_coverage <= 1:
            raise ConfigError(f"distributions.bold_coverage must be in (0, 1], got {dist.bold_coverage}")
        sc = data["scenario"]
        scenario = ScenarioGrid(
            horizon_days=int(sc["horizon_days"]),
            replications=int(sc["replications"]),
            base_seed=int(sc["base_seed"]) if seed is None else seed,
            warmup_days=int(sc["warmup_days"]),
            n_angiography=[int(x) for x in sc["n_angiography"]],
            background_scale=[float(x) for x in sc["background_scale"]],
            target_scale=float(sc["target_scale"]),
            background_competes=bool(sc["background_competes"]),
        )
        if not scenario.n_angiography or not scenario.background_scale:
            raise ConfigError("scenario grid must not be empty")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config section: {exc}") from exc

    return PipelineConfig(
        code_map=code_map,
        basic_map=basic_map,
        synth=synth,
        cluster=cluster,
        tree=tree,
        template_overrides=overrides,
        distributions=dist,
        scenario=scenario,
        raw=dict(data),
    )
