"""Layer primitives: affine maps, a GRU cell, parameter init, checkpoints.

GRU convention (fixed once, used everywhere):

    z = sigmoid(x W_zx + h W_zh + b_z)          update gate
    r = sigmoid(x W_rx + h W_rh + b_r)          reset gate
    n = tanh(x W_nx + r * (h W_nh) + b_n)       candidate
    h' = (1 - z) * h + z * n

so with all parameters at zero: z = 0.5, n = 0, h' = 0.5 h. One bias per
gate; the candidate's hidden product is masked by r before the bias.

Initialization: matrices uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
biases zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, UsageError

CHECKPOINT_FORMAT_VERSION = 1


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Affine:
    """y = x @ w + b"""

    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int) -> "Affine":
        return cls(
            w=Tensor(uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True),
            b=Tensor(np.zeros(out_dim), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class GruCellParams:
    """Weight matrices and biases for the update gate, reset gate, candidate."""

    input_dim: int
    hidden_dim: int
    w_zx: Tensor
    w_zh: Tensor
    b_z: Tensor
    w_rx: Tensor
    w_rh: Tensor
    b_r: Tensor
    w_nx: Tensor
    w_nh: Tensor
    b_n: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "GruCellParams":
        def mat(fan_in, shape):
            return Tensor(uniform_init(rng, fan_in, shape), requires_grad=True)

        def bias():
            return Tensor(np.zeros(hidden_dim), requires_grad=True)

        return cls(
            input_dim=input_dim,
            hidden_dim=hidden_dim,
            w_zx=mat(input_dim, (input_dim, hidden_dim)),
            w_zh=mat(hidden_dim, (hidden_dim, hidden_dim)),
            b_z=bias(),
            w_rx=mat(input_dim, (input_dim, hidden_dim)),
            w_rh=mat(hidden_dim, (hidden_dim, hidden_dim)),
            b_r=bias(),
            w_nx=mat(input_dim, (input_dim, hidden_dim)),
            w_nh=mat(hidden_dim, (hidden_dim, hidden_dim)),
            b_n=bias(),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        names = ("w_zx", "w_zh", "b_z", "w_rx", "w_rh", "b_r", "w_nx", "w_nh", "b_n")
        return {f"{prefix}.{n}": getattr(self, n) for n in names}


def gru_step_composite(x: Tensor, h: Tensor, p: GruCellParams) -> Tensor:
    """Reference GRU update built from elementary ops; slow but obviously right."""
    if x.data.shape[-1] != p.input_dim or h.data.shape[-1] != p.hidden_dim:
        raise ConfigurationError(
            f"gru_step dimension mismatch: x {x.data.shape}, h {h.data.shape}, "
            f"cell ({p.input_dim}, {p.hidden_dim})"
        )
    z = ad.sigmoid(ad.matmul(x, p.w_zx) + ad.matmul(h, p.w_zh) + p.b_z)
    r = ad.sigmoid(ad.matmul(x, p.w_rx) + ad.matmul(h, p.w_rh) + p.b_r)
    n = ad.tanh(ad.matmul(x, p.w_nx) + r * ad.matmul(h, p.w_nh) + p.b_n)
    return (1.0 - z) * h + z * n


def gru_step(x: Tensor, h: Tensor, p: GruCellParams) -> Tensor:
    """One GRU update; differentiable w.r.t. x, h, and all of p.

    Fused kernel: the whole step is a single graph node with analytic
    vjps, because replaying long episodes through the elementary-op
    version spends most of its time on graph bookkeeping rather than
    arithmetic. Forward values match gru_step_composite bitwise (same
    expressions, same evaluation order); gradients match it to within
    accumulation-order rounding.
    """
    if x.data.shape[-1] != p.input_dim or h.data.shape[-1] != p.hidden_dim:
        raise ConfigurationError(
            f"gru_step dimension mismatch: x {x.data.shape}, h {h.data.shape}, "
            f"cell ({p.input_dim}, {p.hidden_dim})"
        )
    if x.data.ndim != 2 or h.data.ndim != 2:
        raise UsageError("gru_step expects 2-D (batch, dim) inputs")
    xd, hd = x.data, h.data
    z = ad.sigmoid_array(xd @ p.w_zx.data + hd @ p.w_zh.data + p.b_z.data)
    r = ad.sigmoid_array(xd @ p.w_rx.data + hd @ p.w_rh.data + p.b_r.data)
    hn = hd @ p.w_nh.data
    n = np.tanh(xd @ p.w_nx.data + r * hn + p.b_n.data)
    out = (1.0 - z) * hd + z * n

    # Backward pieces shared by every parent's closure. All closures of a
    # node receive the same output gradient exactly once, so the cache is
    # computed lazily on first use and reused by the rest.
    cache: dict[str, np.ndarray] = {}

    def deltas(g: np.ndarray) -> dict[str, np.ndarray]:
        if not cache:
            dan = (g * z) * (1.0 - n * n)
            cache["dan"] = dan
            cache["dar"] = (dan * hn) * (r * (1.0 - r))
            cache["daz"] = (g * (n - hd)) * (z * (1.0 - z))
            cache["danr"] = dan * r
        return cache

    def outer(lhs: np.ndarray, key: str):
        return lambda g: lhs.T @ deltas(g)[key]

    vjps = (
        (x, lambda g: (d := deltas(g))["daz"] @ p.w_zx.data.T
                      + d["dar"] @ p.w_rx.data.T + d["dan"] @ p.w_nx.data.T),
        (h, lambda g: g * (1.0 - z) + (d := deltas(g))["daz"] @ p.w_zh.data.T
                      + d["dar"] @ p.w_rh.data.T + d["danr"] @ p.w_nh.data.T),
        (p.w_zx, outer(xd, "daz")),
        (p.w_zh, outer(hd, "daz")),
        (p.b_z, lambda g: deltas(g)["daz"].sum(axis=0)),
        (p.w_rx, outer(xd, "dar")),
        (p.w_rh, outer(hd, "dar")),
        (p.b_r, lambda g: deltas(g)["dar"].sum(axis=0)),
        (p.w_nx, outer(xd, "dan")),
        (p.w_nh, outer(hd, "danr")),
        (p.b_n, lambda g: deltas(g)["dan"].sum(axis=0)),
    )
    return ad.custom_op(out, vjps)


def save_checkpoint(path: str | Path, params: dict[str, Tensor], meta: dict) -> None:
    """Write a flat parameter-path -> array container; round-trips bitwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {f"param::{k}": v.data for k, v in params.items()}
    payload["__format_version__"] = np.array(CHECKPOINT_FORMAT_VERSION)
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)
    # np.savez appends .npz when missing; keep the caller's exact path
    written = path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")
    if written != path:
        written.rename(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__format_version__"])
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigurationError(
                f"checkpoint {path} has format version {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )
        meta = json.loads(str(z["__meta__"]))
        params = {k[len("param::"):]: z[k] for k in z.files if k.startswith("param::")}
    return params, meta


def assign_params(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into live tensors, validating names and shapes."""
    missing = set(params) - set(values)
    extra = set(values) - set(params)
    if missing or extra:
        raise ConfigurationError(
            f"checkpoint parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    for k, t in params.items():
        if values[k].shape != t.data.shape:
            raise ConfigurationError(
                f"checkpoint shape mismatch for {k}: {values[k].shape} vs {t.data.shape}"
            )
        t.data = np.asarray(values[k], dtype=np.float64)


def params_hash(params: dict[str, Tensor]) -> str:
    """SHA-256 over parameter bytes in sorted-path order."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        arr = np.ascontiguousarray(params[name].data)
        h.update(arr.tobytes())
    return h.hexdigest()
