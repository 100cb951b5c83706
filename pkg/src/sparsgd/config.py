"""Run configuration: an INI-style file with one section per component.

Example::

    [run]
    output_dir = runs/topk-w4

    [data]
    kind = blobs
    n = 2000

    [cluster]
    world_size = 4

    [compressor]
    kind = topk

Anything left out takes the defaults below (1% sparsity, momentum 0.9,
weight decay 1e-4, learning rate divided by 10 at each decay epoch).
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .comm import ClusterConfig
from .compressors import CompressorConfig, Kind, Scope
from .errors import ConfigError, MetricsFileError
from .optimizer import CommScheme, TrainerConfig, check_scheme

DTYPES = ("float64", "float32")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in ("mlp", "linear"):
            raise ConfigError(f"model kind must be mlp or linear, got {self.kind!r}", rule="model-kind")


@dataclass(frozen=True)
class DataSpec:
    kind: str = "blobs"
    n: int = 2000
    features: int = 10
    classes: int = 4
    separation: float = 3.0
    condition: float = 10.0
    noise: float = 0.1
    eval_fraction: float = 0.2
    path: str = ""
    replicate: bool = False

    def __post_init__(self):
        if self.kind not in ("blobs", "least_squares", "csv"):
            raise ConfigError(f"data kind must be blobs, least_squares or csv, got {self.kind!r}", rule="data-kind")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv data needs a path", rule="data-path")


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    init: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    compressor: CompressorConfig = field(default_factory=CompressorConfig)
    scheme: CommScheme = CommScheme.ALLGATHER
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    seeds: Seeds = field(default_factory=Seeds)
    output_dir: str = "runs/default"
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "scheme", CommScheme(self.scheme))
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}", rule="dtype")
        check_scheme(self.compressor, self.scheme)
        if self.model.kind == "linear" and self.data.kind == "blobs":
            raise ConfigError("the linear model needs regression data", rule="model-data")
        if self.model.kind == "mlp" and self.data.kind == "least_squares":
            raise ConfigError("the mlp needs classification data", rule="model-data")

    @property
    def world_size(self) -> int:
        return self.cluster.world_size


def default_scheme(comp: CompressorConfig) -> CommScheme:
    if comp.kind is Kind.IDENTITY or comp.shared_coordinates:
        return CommScheme.ALLREDUCE
    return CommScheme.ALLGATHER


def default_gamma(comp: CompressorConfig) -> float:
    # dense and layer-wise runs start at 0.1, global-scope runs at 0.01
    if comp.kind is not Kind.IDENTITY and comp.scope is Scope.GLOBAL:
        return 0.01
    return 0.1


# file section -> dataclass whose fields are its keys
_SECTIONS = {
    "model": ModelSpec,
    "data": DataSpec,
    "compressor": CompressorConfig,
    "trainer": TrainerConfig,
    "cluster": ClusterConfig,
    "seeds": Seeds,
}
_EXTRA_KEYS = {
    "run": {"output_dir", "dtype"},
    "cluster": {"scheme"},
    "seeds": {"compressor"},
}
_NOT_IN_FILE = {"compressor": {"base_seed"}}


def _allowed_keys(section: str) -> set[str]:
    keys = set(_EXTRA_KEYS.get(section, set()))
    if section in _SECTIONS:
        cls = _SECTIONS[section]
        keys |= {f.name for f in dataclasses.fields(cls)} - _NOT_IN_FILE.get(section, set())
    return keys


def _convert(section: str, key: str, raw: str, annotation):
    text = raw.strip()
    try:
        if annotation in (bool, "bool"):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if annotation in (int, "int"):
            return int(text)
        if annotation in (float, "float"):
            return float(text)
        if isinstance(annotation, str) and annotation.startswith("tuple"):
            return tuple(int(t) for t in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}", rule="value-type") from None


def new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    return parser


def parse_text(text: str, source: str = "<config>") -> configparser.ConfigParser:
    parser = new_parser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        # configparser messages carry the offending line number
        raise ConfigError(f"{source}: {exc}", rule="parse") from None
    return parser


def from_parser(parser: configparser.ConfigParser) -> RunConfig:
    """Validate a parsed file and fill in defaults."""
    for section in parser.sections():
        allowed = _allowed_keys(section)
        if not allowed:
            raise ConfigError(f"unknown section [{section}]", rule="unknown-section")
        for key in parser[section]:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]", rule="unknown-key")

    def values(section: str) -> dict:
        if section not in parser:
            return {}
        cls = _SECTIONS[section]
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        return {k: _convert(section, k, v, types[k]) for k, v in parser[section].items() if k in types}

    def build(cls, kwargs):
        try:
            return cls(**kwargs)
        except ValueError as exc:  # bad enum values
            raise ConfigError(f"{cls.__name__}: {exc}", rule="value") from None
        except TypeError as exc:
            raise ConfigError(f"{cls.__name__}: {exc}", rule="value-type") from None

    comp_kwargs = values("compressor")
    if parser.has_option("seeds", "compressor"):
        comp_kwargs["base_seed"] = _convert("seeds", "compressor", parser["seeds"]["compressor"], int)
    compressor = build(CompressorConfig, comp_kwargs)

    trainer_kwargs = values("trainer")
    trainer_kwargs.setdefault("gamma0", default_gamma(compressor))
    trainer = build(TrainerConfig, trainer_kwargs)

    run = parser["run"] if "run" in parser else {}
    dtype = run.get("dtype", "float64").strip()
    cluster_kwargs = values("cluster")
    cluster_kwargs.setdefault("value_bytes", 4 if dtype == "float32" else 8)
    cluster = build(ClusterConfig, cluster_kwargs)

    if parser.has_option("cluster", "scheme"):
        try:
            scheme = CommScheme(parser["cluster"]["scheme"].strip())
        except ValueError as exc:
            raise ConfigError(str(exc), rule="value") from None
    else:
        scheme = default_scheme(compressor)

    return RunConfig(
        model=build(ModelSpec, values("model")),
        data=build(DataSpec, values("data")),
        compressor=compressor,
        scheme=scheme,
        trainer=trainer,
        cluster=cluster,
        seeds=build(Seeds, values("seeds")),
        output_dir=run.get("output_dir", RunConfig.output_dir).strip(),
        dtype=dtype,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MetricsFileError(f"cannot read config {path}: {exc}") from exc
    return from_parser(parse_text(text, str(path)))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return str(value)


def to_parser(cfg: RunConfig) -> configparser.ConfigParser:
    parser = new_parser()
    parser["run"] = {"output_dir": cfg.output_dir, "dtype": cfg.dtype}
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        skip = _NOT_IN_FILE.get(section, set())
        parser[section] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(cls) if f.name not in skip}
    parser["cluster"]["scheme"] = cfg.scheme.value
    parser["seeds"]["compressor"] = str(cfg.compressor.base_seed)
    return parser


def parser_text(parser: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def dumps_config(cfg: RunConfig) -> str:
    return parser_text(to_parser(cfg))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_config(cfg))
