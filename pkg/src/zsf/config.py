"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    n: int = 256
    box: float = 40.0
    c: tuple[float, float] = (0.1, 0.0)
    omega: float = 1.0
    tol_fixed_point: float = 1e-10
    tol_krylov: float = 1e-12
    tol_ground_state: float = 1e-10
    max_iter: int = 200
    c_cap: float = 0.5
    dealias: bool = False
    newton_accel: bool = False
    out: str = "zsf_out"
    seed: int = 0
    pad: int = 3
    K: int = 3
    T: float = 10.0
    dt: float = 1e-3
    snap_every: int = 500
    snapshots: bool = False

    def __post_init__(self):
        c = self.c
        if np.isscalar(c):
            c = (float(c), 0.0)
        c = (float(c[0]), float(c[1]))
        object.__setattr__(self, "c", c)
        for name in ("tol_fixed_point", "tol_krylov", "tol_ground_state", "box", "omega", "dt", "T", "c_cap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if np.hypot(*c) >= 1:
            raise ConfigError("|c| must be < 1")
        if self.n < 16 or self.n % 2:
            raise ConfigError("n must be even and >= 16")
        for name in ("max_iter", "pad", "snap_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.K <= 6:
            raise ConfigError("K must be in 0..6")

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.c))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["c"] = list(self.c)
        return d

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _parse(types[key], val, key)
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def parse_speed(val: str) -> tuple[float, float]:
    parts = [p for p in val.replace(" ", "").split(",") if p]
    if len(parts) == 1:
        return float(parts[0]), 0.0
    if len(parts) == 2:
        return float(parts[0]), float(parts[1])
    raise ConfigError(f"speed must be 'c' or 'c1,c2', got {val!r}")


def _parse(typ, val: str, key: str):
    typ = str(typ)
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        if typ.startswith("tuple"):
            return parse_speed(val)
        return val
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {val!r}") from exc
