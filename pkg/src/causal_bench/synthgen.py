"""Labeled synthetic data with known covariate roles and potential outcomes.

Exogenous I, C, A are normal; t is Bernoulli with a three-part sigmoid
mixture; M, y, Z, TI and YI follow sigmoid structural equations with
U(weight_low, weight_high) weights. Potential outcomes y0, y1 re-run the
post-treatment equations with t forced to 0 and 1 while reusing the same
noise draws.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, UnknownRole

log = logging.getLogger(__name__)


class CovariateRole(str, Enum):
    I = "I"
    C = "C"
    A = "A"
    M = "M"
    Z = "Z"
    TI = "TI"
    YI = "YI"

    @classmethod
    def parse(cls, value: "str | CovariateRole") -> "CovariateRole":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip())
        except ValueError:
            raise UnknownRole(value) from None


ROLES = tuple(CovariateRole)
EXOGENOUS = (CovariateRole.I, CovariateRole.C, CovariateRole.A)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DGPConfig:
    n: int = 20000
    dims: dict = field(default_factory=lambda: {r.value: 1 for r in ROLES})
    weight_low: float = 2.0
    weight_high: float = 5.0
    exo_scale: float = 5.0  # variance of the exogenous normal law
    noise_scale: float = 0.1
    mix: tuple = (0.4, 0.5, 0.1)
    seed: int = 0

    def __post_init__(self):
        dims = {r.value: 1 for r in ROLES}
        for k, v in dict(self.dims).items():
            dims[CovariateRole.parse(k).value] = int(v)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mix", tuple(float(m) for m in self.mix))

    def dim(self, role) -> int:
        return self.dims[CovariateRole.parse(role).value]

    def validate(self) -> "DGPConfig":
        if self.n <= 0:
            raise ConfigError(f"n must be positive, got {self.n}")
        if not 0 < self.weight_low <= self.weight_high:
            raise ConfigError("need 0 < weight_low <= weight_high")
        if any(d < 1 for d in self.dims.values()):
            raise ConfigError(f"all block dims must be >= 1: {self.dims}")
        if len(self.mix) != 3 or min(self.mix) < 0 or abs(sum(self.mix) - 1) > 1e-12:
            raise ConfigError(f"mix must be 3 nonnegative weights summing to 1: {self.mix}")
        if self.exo_scale < 0 or self.noise_scale < 0:
            raise ConfigError("scales must be nonnegative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = list(self.mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        d = dict(d)
        if "mix" in d:
            d["mix"] = tuple(d["mix"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown DGPConfig fields: {sorted(unknown)}")
        return cls(**d)


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, variable name)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


WEIGHT_NAMES = (
    "C_t", "I_t", "t_M", "C_y", "M_y", "A_y", "t_Z", "y_Z", "t_TI", "y_YI",
)
# weight name -> role whose block width sets the vector length
_WEIGHT_DIM = {
    "C_t": "C", "I_t": "I", "t_M": "M", "C_y": "C", "M_y": "M", "A_y": "A",
    "t_Z": "Z", "y_Z": "Z", "t_TI": "TI", "y_YI": "YI",
}


@dataclass(frozen=True)
class StructuralWeights:
    values: dict

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    @classmethod
    def draw(cls, cfg: DGPConfig) -> "StructuralWeights":
        values = {}
        for name in WEIGHT_NAMES:
            rng = stream(cfg.seed, f"weight:{name}")
            w = rng.uniform(cfg.weight_low, cfg.weight_high, size=cfg.dim(_WEIGHT_DIM[name]))
            w.setflags(write=False)
            values[name] = w
        return cls(values)

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.values.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralWeights":
        return cls({k: np.asarray(v, dtype=float) for k, v in d.items()})


def sample_exogenous(cfg: DGPConfig, seed: int | None = None) -> dict:
    seed = cfg.seed if seed is None else seed
    sd = np.sqrt(cfg.exo_scale)
    out = {}
    for role in EXOGENOUS:
        rng = stream(seed, f"exo:{role.value}")
        out[role.value] = sd * rng.standard_normal((cfg.n, cfg.dim(role)))
    return out


def treatment_probability(I, C, eps_t, weights: StructuralWeights, mix=(0.4, 0.5, 0.1)):
    a, b, c = mix
    return (
        a * sigmoid(C @ weights["C_t"])
        + b * sigmoid(I @ weights["I_t"])
        + c * sigmoid(eps_t)
    )


def assign_treatment(I, C, weights: StructuralWeights, cfg: DGPConfig, seed: int | None = None):
    """Returns (t, p_true, eps_t)."""
    seed = cfg.seed if seed is None else seed
    n = I.shape[0]
    eps_t = stream(seed, "noise:t").standard_normal(n)
    p = treatment_probability(I, C, eps_t, weights, cfg.mix)
    u = stream(seed, "bernoulli:t").random(n)
    t = (u < p).astype(np.int8)
    return t, p, eps_t


def draw_noise(cfg: DGPConfig, seed: int | None = None) -> dict:
    seed = cfg.seed if seed is None else seed
    out = {}
    for role in ("M", "Z", "TI", "YI"):
        out[role] = stream(seed, f"noise:{role}").standard_normal((cfg.n, cfg.dim(role)))
    out["y"] = stream(seed, "noise:y").standard_normal(cfg.n)
    return out


def generate_nonroot(t, C, A, weights: StructuralWeights, noise: dict, noise_scale: float = 0.1) -> dict:
    """M -> y -> {Z, TI, YI} for a given treatment value or vector."""
    t = np.asarray(t, dtype=float)
    tcol = np.broadcast_to(t, (C.shape[0],))[:, None]
    s = noise_scale
    M = sigmoid(tcol * weights["t_M"]) + s * noise["M"]
    y = (
        sigmoid(C @ weights["C_y"])
        + sigmoid(M @ weights["M_y"])
        + sigmoid(A @ weights["A_y"])
        + s * noise["y"]
    )
    ycol = y[:, None]
    Z = sigmoid(tcol * weights["t_Z"]) + sigmoid(ycol * weights["y_Z"]) + s * noise["Z"]
    TI = sigmoid(tcol * weights["t_TI"]) + s * noise["TI"]
    YI = sigmoid(ycol * weights["y_YI"]) + s * noise["YI"]
    return {"M": M, "y": y, "Z": Z, "TI": TI, "YI": YI}


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledDataset:
    blocks: dict  # role value -> (n, dim) factual block
    t: np.ndarray
    y_f: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    p_true: np.ndarray | None = None
    noise: dict | None = None
    config: DGPConfig | None = None
    weights: StructuralWeights | None = None

    @property
    def n(self) -> int:
        return len(self.t)

    def block(self, role) -> np.ndarray:
        key = CovariateRole.parse(role).value
        if key not in self.blocks:
            raise UnknownRole(key)
        return self.blocks[key]

    def positivity(self, lo: float = 0.02, hi: float = 0.98) -> bool:
        if self.p_true is None:
            return True
        return bool(self.p_true.min() > lo and self.p_true.max() < hi)

    def columns(self) -> list:
        return [f"{r}__{k}" for r in self.blocks for k in range(self.blocks[r].shape[1])]


def generate_dataset(cfg: DGPConfig) -> LabeledDataset:
    cfg.validate()
    weights = StructuralWeights.draw(cfg)
    exo = sample_exogenous(cfg)
    t, p_true, eps_t = assign_treatment(exo["I"], exo["C"], weights, cfg)
    noise = draw_noise(cfg)
    factual = generate_nonroot(t, exo["C"], exo["A"], weights, noise, cfg.noise_scale)
    y0 = generate_nonroot(0.0, exo["C"], exo["A"], weights, noise, cfg.noise_scale)["y"]
    y1 = generate_nonroot(1.0, exo["C"], exo["A"], weights, noise, cfg.noise_scale)["y"]
    blocks = {r.value: _frozen(exo[r.value] if r in EXOGENOUS else factual[r.value]) for r in ROLES}
    noise = {k: _frozen(v) for k, v in noise.items()}
    noise["t"] = _frozen(eps_t)
    ds = LabeledDataset(
        blocks=blocks,
        t=_frozen(t),
        y_f=_frozen(factual["y"]),
        y0=_frozen(y0),
        y1=_frozen(y1),
        p_true=_frozen(p_true),
        noise=noise,
        config=cfg,
        weights=weights,
    )
    if not ds.positivity():
        log.warning(
            "positivity diagnostic: p_true range [%.4f, %.4f] outside (0.02, 0.98)",
            p_true.min(), p_true.max(),
        )
    return ds


def parse_combo(combo: "str | Iterable") -> tuple:
    if isinstance(combo, str):
        combo = [c for c in combo.replace("{", "").replace("}", "").split(",") if c.strip()]
    roles = tuple(CovariateRole.parse(c) for c in combo)
    if len(set(roles)) != len(roles):
        raise ConfigError(f"duplicate roles in combination {combo}")
    return roles


def combo_name(combo: Sequence) -> str:
    return ",".join(CovariateRole.parse(r).value for r in combo)


def project(ds: LabeledDataset, combo) -> np.ndarray:
    roles = parse_combo(combo)
    if not roles:
        return np.empty((ds.n, 0))
    return np.column_stack([ds.block(r) for r in roles])


# -- CSV + JSON sidecar -----------------------------------------------------

def save_dataset(ds: LabeledDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ds.columns() + ["t", "y_f", "y0", "y1"]
    cols = [ds.blocks[r][:, k] for r in ds.blocks for k in range(ds.blocks[r].shape[1])]
    cols += [ds.t, ds.y_f, ds.y0, ds.y1]
    data = np.column_stack(cols)
    with open(out / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, ti in zip(data, ds.t):
            vals = [repr(float(v)) for v in row]
            vals[len(header) - 4] = str(int(ti))
            w.writerow(vals)
    meta = {
        "config": ds.config.to_dict() if ds.config else None,
        "weights": ds.weights.to_dict() if ds.weights else None,
        "n": ds.n,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out


def load_dataset(in_dir) -> LabeledDataset:
    path = Path(in_dir)
    with open(path / "data.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    col = {name: i for i, name in enumerate(header)}
    blocks: dict = {}
    for name in header:
        if "__" in name:
            role, k = name.split("__")
            blocks.setdefault(CovariateRole.parse(role).value, []).append((int(k), col[name]))
    blocks = {
        r: _frozen(data[:, [c for _, c in sorted(idx)]]) for r, idx in blocks.items()
    }
    meta_path = path / "meta.json"
    cfg = weights = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("config"):
            cfg = DGPConfig.from_dict(meta["config"])
        if meta.get("weights"):
            weights = StructuralWeights.from_dict(meta["weights"])
    return LabeledDataset(
        blocks=blocks,
        t=_frozen(data[:, col["t"]].astype(np.int8)),
        y_f=_frozen(data[:, col["y_f"]]),
        y0=_frozen(data[:, col["y0"]]),
        y1=_frozen(data[:, col["y1"]]),
        config=cfg,
        weights=weights,
    )
