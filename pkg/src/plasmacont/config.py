"""Run configuration: one JSON file, defaults for every omitted field."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .continuation import ContinuationConfig
from .geometry import DomainSpec, GeometryError

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, msg, field_name=None, line=None):
        where = f" (field {field_name!r})" if field_name else ""
        where += f" at line {line}" if line else ""
        super().__init__(msg + where)
        self.field = field_name
        self.line = line


_CONT_FIELDS = {f.name for f in fields(ContinuationConfig)}


@dataclass
class RunConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    p: float = 2.0
    resolution: int = 32
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    outputs: str = "out"
    verbosity: int = 0
    # subcommand extras
    lam: float | None = None            # spectrum: state to analyse when no state file is given
    n_eigs: int = 4
    n_lambda: int = 20                  # variational grid size
    seeds: int = 5
    amplitude: float = 0.05
    modes: tuple = (2, 3, 4, 5)
    criteria: tuple = ()                # verify: subset of criteria (empty = all)

    def to_dict(self) -> dict:
        d = {
            "domain": self.domain.to_dict(),
            "p": self.p,
            "resolution": self.resolution,
            "continuation": asdict(self.continuation),
            "verbosity": self.verbosity,
            "lambda": self.lam,
            "n_eigs": self.n_eigs,
            "n_lambda": self.n_lambda,
            "seeds": self.seeds,
            "amplitude": self.amplitude,
            "modes": list(self.modes),
            "criteria": list(self.criteria),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict, require_p: bool = True) -> "RunConfig":
        d = dict(d)
        known = {"domain", "p", "resolution", "continuation", "outputs", "verbosity", "lambda",
                 "n_eigs", "n_lambda", "seeds", "amplitude", "modes", "criteria"}
        for k in d:
            if k not in known:
                raise ConfigError("unknown configuration entry", k)
        if require_p and "p" not in d:
            raise ConfigError("missing required entry", "p")
        kw = {}
        try:
            if "domain" in d:
                dom = d["domain"]
                if isinstance(dom, str):
                    dom = {"kind": dom}
                kw["domain"] = DomainSpec.from_dict(dom)
        except (GeometryError, TypeError) as exc:
            raise ConfigError(str(exc), "domain") from exc
        for name, typ in (("p", float), ("resolution", int), ("verbosity", int), ("n_eigs", int),
                          ("n_lambda", int), ("seeds", int), ("amplitude", float)):
            if name in d:
                try:
                    val = typ(d[name])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"expected {typ.__name__}", name) from exc
                if typ is int and val != d[name]:
                    raise ConfigError("expected an integer", name)
                kw[name] = val
        if "p" in kw and not kw["p"] > 1:
            raise ConfigError("p must exceed 1", "p")
        if "resolution" in kw and kw["resolution"] < 8:
            raise ConfigError("resolution must be at least 8", "resolution")
        if "lambda" in d and d["lambda"] is not None:
            kw["lam"] = float(d["lambda"])
        if "outputs" in d:
            kw["outputs"] = str(d["outputs"])
        if "modes" in d:
            kw["modes"] = tuple(int(m) for m in d["modes"])
        if "criteria" in d:
            kw["criteria"] = tuple(int(c) for c in d["criteria"])
        if "continuation" in d:
            cd = d["continuation"]
            for k in cd:
                if k not in _CONT_FIELDS:
                    raise ConfigError("unknown continuation entry", f"continuation.{k}")
            try:
                kw["continuation"] = ContinuationConfig(**cd)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), "continuation") from exc
        return cls(**kw)


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(d, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    return RunConfig.from_dict(d)
