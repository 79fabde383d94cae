import json
import math
import logging
from pathlib import Path
from statistics import NormalDist
from collections.abc import Iterable, Mapping
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel

LOG = logging.getLogger(__name__)

# smallest lambda we are willing to divide by
TINY = 1e-300
FLOAT_FORMAT = "%.17g"
Z_99 = NormalDist().inv_cdf(0.995)


def trial_rng(master_seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one trial, derived only from (master_seed, trial, stream)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(trial, stream)))


class RunningStats(BaseModel):
    """Welford mean and sum of squared deviations; blocks combine with Chan's pairwise update."""
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        count = self.count + other.count
        if count == 0:
            return RunningStats()
        delta = other.mean - self.mean
        return RunningStats(
            count=count,
            mean=self.mean + delta * other.count / count,
            m2=self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        )

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count else 0.0

    def confidence_interval(self) -> tuple[float, float]:
        half = Z_99 * self.stderr
        return (self.mean - half, self.mean + half)


def sigma_units(empirical: float, analytic: float, stderr: float) -> float:
    """Distance between an estimate and its analytic value in standard errors."""
    delta = empirical - analytic
    if stderr == 0.0:
        return 0.0 if abs(delta) <= 1e-12 else math.inf
    return delta / stderr


def _encode(value: Any) -> str:
    match value:
        case None:
            return "null"
        case bool():
            return "true" if value else "false"
        case int():
            return str(value)
        case float():
            if not math.isfinite(value):
                # JSON has no infinities
                return "null"
            return format(value, ".17g")
        case str():
            return json.dumps(value, ensure_ascii=False)
        case Mapping():
            return "{" + ", ".join(f"{_encode(str(k))}: {_encode(v)}" for k, v in value.items()) + "}"
        case BaseModel():
            return _encode(value.model_dump(mode="python", by_alias=True))
        case tuple() | list():
            return "[" + ", ".join(_encode(v) for v in value) + "]"
        case _:
            raise TypeError(f"Cannot encode {type(value)}")


def dumps(value: Any) -> str:
    """JSON with every real printed with 17 significant digits, key order preserved."""
    return _encode(value) + "\n"


def write_json(path: Path, value: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(value), encoding="utf-8")
    LOG.info(f"Wrote {path}")


def write_csv(path: Path, rows: Iterable[Mapping[str, Any]], columns: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\r\n")
    LOG.info(f"Wrote {path} ({len(frame)} rows)")
