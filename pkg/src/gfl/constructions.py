"""Explicit weight configurations that make the linear transformer solve Laplacian problems.

Full-engine layouts (rows of Z, one column per vertex):

* power-series tasks: ``B`` (d rows, B^T), ``lam`` (k rows, starts at Psi^T), ``phi`` (k rows, starts at 0)
* subspace iteration: ``B`` (d rows), ``phi`` (k rows, the current basis transposed)
* fast electric flow: ``gamma``, ``lam``, ``phi`` (n rows each)
* fast heat kernel: a single ``phi`` block (n rows)

The efficient engine uses a 2k-row feature block ``[lam; phi]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .densela import sym_eig
from .graph import centering
from .transformer import EfficientLayerWeights, LayerWeights, TransformerState

TASK_KINDS = (
    "electric_gd", "sqrt_series", "heat_series", "electric_fast", "heat_fast",
    "subspace_top_k", "subspace_bottom_k",
)
EFFICIENT_KINDS = ("electric_gd", "sqrt_series", "heat_series", "subspace_top_k", "subspace_bottom_k")

# slack on the constraint checks so exact oracle values (delta = 1/lambda_max) pass
_CONSTRAINT_RTOL = 1e-9


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    layers: int
    delta: float | None = None
    s: float | None = None
    k: int | None = None
    mu: float | None = None
    lambda_max_hint: float | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; choose from {TASK_KINDS}")
        if self.layers < 0:
            raise ValueError(f"layer count must be non-negative, got {self.layers}")

    def check(self, lambda_max: float | None = None) -> None:
        """Raise :class:`ConstraintError` if the construction preconditions fail.

        ``lambda_max`` defaults to the stored hint.
        """
        lam = self.lambda_max_hint if lambda_max is None else lambda_max
        if self.kind in ("electric_gd", "electric_fast"):
            if self.delta is None or self.delta < 0:
                raise ConstraintError("step size delta must be non-negative")
            if lam is not None and self.delta * lam > 1 + _CONSTRAINT_RTOL:
                raise ConstraintError(f"delta * lambda_max = {self.delta * lam:.6g} exceeds 1")
        if self.kind in ("heat_series", "heat_fast") and (self.s is None or self.s < 0):
            raise ConstraintError("temperature s must be non-negative")
        if self.kind == "heat_fast" and lam is not None and self.s * lam > 3.0 ** self.layers * (1 + _CONSTRAINT_RTOL):
            raise ConstraintError(f"s * lambda_max = {self.s * lam:.6g} exceeds 3^{self.layers}")
        if self.kind == "sqrt_series" and (lam is None or lam <= 0):
            raise ConstraintError("sqrt_series needs a positive lambda_max hint")
        if self.kind.startswith("subspace"):
            if not self.k or self.k < 1:
                raise ConstraintError("subspace iteration needs k >= 1")
            if self.layers % (self.k + 1):
                raise ConstraintError(f"layer count {self.layers} is not a multiple of k + 1 = {self.k + 1}")
        if self.kind == "subspace_bottom_k":
            if self.mu is None:
                raise ConstraintError("bottom-k subspace iteration needs mu")
            if lam is not None and self.mu < lam * (1 - _CONSTRAINT_RTOL):
                raise ConstraintError(f"mu = {self.mu:.6g} is below lambda_max = {lam:.6g}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaskSpec":
        return cls(**json.loads(text))


def sqrt_coefficients(delta: float, count: int) -> np.ndarray:
    """sqrt(delta) * C(2l, l) / 4^l for l < count, by the ratio (2l+1)/(2l+2)."""
    out = np.empty(count)
    a = math.sqrt(delta)
    for l in range(count):
        out[l] = a
        a *= (2 * l + 1) / (2 * l + 2)
    return out


def heat_coefficients(s: float, count: int) -> np.ndarray:
    """(-s)^l / l! for l < count."""
    out = np.empty(count)
    a = 1.0
    for l in range(count):
        out[l] = a
        a *= -s / (l + 1)
    return out


def _series_blocks(d: int, k: int):
    return slice(0, d), slice(d, d + k), slice(d + k, d + 2 * k)


def series_input(Bt: np.ndarray, Psi: np.ndarray) -> TransformerState:
    """Z_0 = [B^T; Psi^T; 0] for the power-series constructions."""
    return TransformerState.from_blocks(B=Bt, lam=Psi.T, phi=np.zeros_like(Psi.T))


def electric_gd_weights(d: int, k: int, delta: float, L: int, lambda_max_hint: float | None = None) -> list[LayerWeights]:
    """Each layer takes one gradient step Phi <- Phi - delta (L Phi - Psi)."""
    TaskSpec("electric_gd", L, delta=delta, k=k, lambda_max_hint=lambda_max_hint).check()
    b, lam, phi = _series_blocks(d, k)
    w = LayerWeights.zeros(d + 2 * k)
    w.WV[phi, phi] = -delta * np.eye(k)
    w.PQK[b, b] = np.eye(d)
    w.WR[phi, lam] = delta * np.eye(k)
    return [w] * L


def sqrt_series_weights(d: int, k: int, lambda_max_hint: float, L: int) -> list[LayerWeights]:
    """Layer l adds alpha_l (I - delta L)^l Psi to Phi, with delta = 1/lambda_max_hint."""
    TaskSpec("sqrt_series", L, k=k, lambda_max_hint=lambda_max_hint).check()
    delta = 1.0 / lambda_max_hint
    b, lam, phi = _series_blocks(d, k)
    out = []
    for a in sqrt_coefficients(delta, L):
        w = LayerWeights.zeros(d + 2 * k)
        w.WV[lam, lam] = -delta * np.eye(k)
        w.PQK[b, b] = np.eye(d)
        w.WR[phi, lam] = a * np.eye(k)
        out.append(w)
    return out


def heat_series_weights(d: int, k: int, s: float, L: int) -> list[LayerWeights]:
    """Layer l adds (-s)^l/l! L^l Psi to Phi while lam advances to L^{l+1} Psi."""
    TaskSpec("heat_series", L, s=s, k=k).check()
    b, lam, phi = _series_blocks(d, k)
    out = []
    for a in heat_coefficients(s, L):
        w = LayerWeights.zeros(d + 2 * k)
        w.WV[lam, lam] = np.eye(k)
        w.PQK[b, b] = np.eye(d)
        w.WR[lam, lam] = -np.eye(k)
        w.WR[phi, lam] = a * np.eye(k)
        out.append(w)
    return out


def electric_fast_build(Lmat: np.ndarray, delta: float, L: int) -> tuple[TransformerState, list[LayerWeights]]:
    """Repeated squaring: gamma_l = (I^ - delta L)^(2^l), phi_{l+1} = (I + gamma_l) phi_l.

    The feature block starts at delta * I^ rather than delta * I so the constant
    direction does not survive into the output.
    """
    n = Lmat.shape[0]
    TaskSpec("electric_fast", L, delta=delta, lambda_max_hint=sym_eig(Lmat).lambda_max).check()
    Ihat = centering(n)
    Z0 = TransformerState.from_blocks(gamma=Ihat - delta * Lmat, lam=np.eye(n), phi=delta * Ihat)
    g, lam, phi = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
    w = LayerWeights.zeros(3 * n)
    w.WV[g, g] = np.eye(n)
    w.WV[phi, phi] = np.eye(n)
    w.PQK[lam, g] = np.eye(n)
    w.WR[g, g] = -np.eye(n)
    return Z0, [w] * L


def heat_fast_build(Lmat: np.ndarray, s: float, L: int) -> tuple[TransformerState, list[LayerWeights]]:
    """Z_0 = I - s L / 3^L cubed L times, giving (I - s L / 3^L)^(3^L)."""
    n = Lmat.shape[0]
    TaskSpec("heat_fast", L, s=s, lambda_max_hint=sym_eig(Lmat).lambda_max).check()
    Z0 = TransformerState.from_blocks(phi=np.eye(n) - (s / 3.0 ** L) * Lmat)
    w = LayerWeights(np.eye(n), np.eye(n), -np.eye(n))
    return Z0, [w] * L


def subspace_input(Bt: np.ndarray, Phi0: np.ndarray) -> TransformerState:
    """Z_0 = [B^T; Phi_0^T] for subspace iteration."""
    return TransformerState.from_blocks(B=Bt, phi=np.asarray(Phi0, dtype=float).T)


def _selectors(i: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= i <= k:
        raise IndexError(f"column index {i} outside 1..{k}")
    A = np.zeros((k, k))
    A[i - 1, i - 1] = 1.0
    H = np.diag((np.arange(1, k + 1) > i).astype(float))
    return A, H


def ortho_layer_weights(i: int, k: int, d: int) -> LayerWeights:
    """Replace column i (1-based) of Phi by its residual against columns i+1..k.

    Under :func:`~gfl.transformer.forward_eig` the residual is then normalised.
    """
    A, H = _selectors(i, k)
    phi = slice(d, d + k)
    w = LayerWeights.zeros(d + k)
    w.WV[phi, phi] = -A
    w.PQK[phi, phi] = H
    return w


def multiply_layer_weights(d: int, k: int, mode: str = "top", mu: float | None = None) -> LayerWeights:
    """Phi <- L Phi (top) or Phi <- (mu I - L) Phi (bottom)."""
    b, phi = slice(0, d), slice(d, d + k)
    w = LayerWeights.zeros(d + k)
    w.PQK[b, b] = np.eye(d)
    if mode == "top":
        w.WV[phi, phi] = np.eye(k)
        w.WR[phi, phi] = -np.eye(k)
    elif mode == "bottom":
        if mu is None:
            raise ConstraintError("bottom mode needs mu")
        w.WV[phi, phi] = -np.eye(k)
        w.WR[phi, phi] = (mu - 1.0) * np.eye(k)
    else:
        raise ValueError(f"mode must be 'top' or 'bottom', got {mode!r}")
    return w


def subspace_weights(d: int, k: int, L_total: int, mode: str = "top", mu: float | None = None) -> list[LayerWeights]:
    """Repeating units of one multiply layer and k orthogonalisation layers.

    Columns are orthogonalised from i = k down to 1, so column k is only
    normalised and each earlier column is projected against already-final ones.
    The result is a QR factorisation with the column order reversed.
    """
    kind = "subspace_top_k" if mode == "top" else "subspace_bottom_k"
    TaskSpec(kind, L_total, k=k, mu=mu).check()
    unit = [multiply_layer_weights(d, k, mode, mu)]
    unit += [ortho_layer_weights(i, k, d) for i in range(k, 0, -1)]
    return unit * (L_total // (k + 1))


def _efficient(k: int, alphaQK: float = 1.0) -> EfficientLayerWeights:
    z = lambda: np.zeros((2 * k, 2 * k))  # noqa: E731
    return EfficientLayerWeights(0.0, alphaQK, alphaQK, 0.0, z(), z(), z(), z())


def efficient_config(kind: str, k: int, L: int, *, delta: float | None = None, s: float | None = None,
                     lambda_max_hint: float | None = None, mu: float | None = None) -> list[EfficientLayerWeights]:
    """Constrained-engine weights whose feature trajectory matches the full construction.

    The feature block is ``[lam; phi]``; for subspace iteration ``lam`` stays
    zero and ``phi`` carries the basis.
    """
    if kind not in EFFICIENT_KINDS:
        raise ValueError(f"{kind!r} has no constrained-engine configuration; supported: {EFFICIENT_KINDS}")
    TaskSpec(kind, L, delta=delta, s=s, k=k, mu=mu, lambda_max_hint=lambda_max_hint).check()
    lam, phi = slice(0, k), slice(k, 2 * k)
    I = np.eye(k)
    out = []
    if kind == "electric_gd":
        for _ in range(L):
            w = _efficient(k)
            w.WVphi[phi, phi] = -delta * I
            w.WRphi[phi, lam] = delta * I
            out.append(w)
    elif kind == "sqrt_series":
        step = 1.0 / lambda_max_hint
        for a in sqrt_coefficients(step, L):
            w = _efficient(k)
            w.WVphi[lam, lam] = -step * I
            w.WRphi[phi, lam] = a * I
            out.append(w)
    elif kind == "heat_series":
        for a in heat_coefficients(s, L):
            w = _efficient(k)
            w.WVphi[lam, lam] = I
            w.WRphi[lam, lam] = -I
            w.WRphi[phi, lam] = a * I
            out.append(w)
    else:
        bottom = kind == "subspace_bottom_k"
        mult = _efficient(k)
        mult.WVphi[phi, phi] = -I if bottom else I
        mult.WRphi[phi, phi] = (mu - 1.0) * I if bottom else -I
        unit = [mult]
        for i in range(k, 0, -1):
            A, H = _selectors(i, k)
            w = _efficient(k, alphaQK=0.0)
            w.WVphi[phi, phi] = -A
            w.WQphi[phi, phi] = H
            w.WKphi[phi, phi] = H
            unit.append(w)
        out = unit * (L // (k + 1))
    return out


def efficient_input(Bt: np.ndarray, Psi: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Initial (B^T, [lam; phi]) for the constrained engine.

    Power-series kinds put Psi^T in ``lam``; subspace kinds put the starting
    basis in ``phi``.
    """
    P = np.asarray(Psi, dtype=float).T
    Z = np.zeros_like(P)
    if kind.startswith("subspace"):
        return np.asarray(Bt, dtype=float), np.vstack([Z, P])
    return np.asarray(Bt, dtype=float), np.vstack([P, Z])
