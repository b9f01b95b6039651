"""Forward passes of the softmax-free linear transformer.

The state Z has one column per vertex and named row blocks. One layer maps

    Z <- Z + W_V Z Z^T P_QK Z + W_R Z

where ``P_QK`` stands for the product (W_Q)^T W_K. The parameter-efficient
engine tracks the edge block B^T and the feature block Phi^T separately and
constrains the weights to act on the edge block as scalar multiples of I.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ZERO_ROW_TOL = 1e-15


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite values after layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class TransformerState:
    """Activation matrix ``Z`` (h x n) with named, contiguous row blocks."""

    Z: np.ndarray
    layout: tuple[tuple[str, int], ...]

    def __post_init__(self):
        total = sum(size for _, size in self.layout)
        if total != self.Z.shape[0]:
            raise ValueError(f"layout covers {total} rows but Z has {self.Z.shape[0]}")

    @classmethod
    def from_blocks(cls, **blocks: np.ndarray) -> "TransformerState":
        """Stack row blocks in keyword order, e.g. ``from_blocks(B=Bt, lam=Psi.T, phi=0)``."""
        mats = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks.values()]
        layout = tuple((name, m.shape[0]) for name, m in zip(blocks, mats))
        return cls(np.vstack(mats), layout)

    def rows(self, name: str) -> slice:
        start = 0
        for block, size in self.layout:
            if block == name:
                return slice(start, start + size)
            start += size
        raise KeyError(f"no block named {name!r}; have {[b for b, _ in self.layout]}")

    def block(self, name: str) -> np.ndarray:
        return self.Z[self.rows(name)]

    def with_Z(self, Z: np.ndarray) -> "TransformerState":
        return TransformerState(Z, self.layout)

    @property
    def h(self) -> int:
        return self.Z.shape[0]

    @property
    def n(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class LayerWeights:
    WV: np.ndarray
    PQK: np.ndarray
    WR: np.ndarray

    def __post_init__(self):
        shapes = {self.WV.shape, self.PQK.shape, self.WR.shape}
        if len(shapes) != 1 or self.WV.shape[0] != self.WV.shape[1]:
            raise ValueError(f"layer weights must share one square shape, got {sorted(shapes)}")

    @property
    def h(self) -> int:
        return self.WV.shape[0]

    @classmethod
    def zeros(cls, h: int) -> "LayerWeights":
        return cls(np.zeros((h, h)), np.zeros((h, h)), np.zeros((h, h)))


@dataclass(frozen=True)
class EfficientLayerWeights:
    alphaV: float
    alphaQ: float
    alphaK: float
    alphaR: float
    WVphi: np.ndarray
    WQphi: np.ndarray
    WKphi: np.ndarray
    WRphi: np.ndarray

    def __post_init__(self):
        shapes = {self.WVphi.shape, self.WQphi.shape, self.WKphi.shape, self.WRphi.shape}
        if len(shapes) != 1:
            raise ValueError(f"feature blocks must share one shape, got {sorted(shapes)}")
        (shape,) = shapes
        if shape[0] != shape[1] or shape[0] % 2:
            raise ValueError(f"feature blocks must be 2k x 2k, got {shape}")

    @property
    def width(self) -> int:
        return self.WVphi.shape[0]

    def to_full(self, d: int) -> LayerWeights:
        """Block-diagonal full weights equivalent to this constrained layer."""
        w = self.width
        h = d + w

        def embed(scalar, block):
            M = np.zeros((h, h))
            M[:d, :d] = scalar * np.eye(d)
            M[d:, d:] = block
            return M

        return LayerWeights(
            embed(self.alphaV, self.WVphi),
            embed(self.alphaQ * self.alphaK, self.WQphi.T @ self.WKphi),
            embed(self.alphaR, self.WRphi),
        )


def attention(Z: np.ndarray, w: LayerWeights) -> np.ndarray:
    """Linear attention W_V Z Z^T P_QK Z."""
    if w.h != Z.shape[0]:
        raise ValueError(f"weights act on {w.h} rows but Z has {Z.shape[0]}")
    gram = Z.T @ (w.PQK @ Z)
    return w.WV @ (Z @ gram)


def layer_step(Z: np.ndarray, w: LayerWeights) -> np.ndarray:
    return Z + attention(Z, w) + w.WR @ Z


def _frobenius_normalise(M: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(M)
    return M / norm if norm > ZERO_ROW_TOL else M


def normalise_rows(M: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows pass through."""
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    safe = np.where(norms > ZERO_ROW_TOL, norms, 1.0)
    return M / safe


def _check_finite(Z: np.ndarray, layer: int) -> None:
    if not np.all(np.isfinite(Z)):
        raise NonFiniteError(layer)


def forward(Z0: TransformerState, weights, normalize_blocks: bool = False) -> list[TransformerState]:
    """Run every layer and return the initial state followed by each layer's output.

    With ``normalize_blocks`` the first row block and the remaining rows are each
    rescaled to unit Frobenius norm after every layer.
    """
    states = [Z0]
    Z = Z0.Z
    first = Z0.rows(Z0.layout[0][0])
    for l, w in enumerate(weights):
        with np.errstate(over="ignore", invalid="ignore"):
            Z = layer_step(Z, w)
        _check_finite(Z, l)
        if normalize_blocks:
            Z = Z.copy()
            Z[first] = _frobenius_normalise(Z[first])
            Z[first.stop:] = _frobenius_normalise(Z[first.stop:])
        states.append(Z0.with_Z(Z))
    return states


def forward_eig(Z0: TransformerState, weights, block: str = "phi") -> list[TransformerState]:
    """Forward pass that row-normalises ``block`` after every layer."""
    rows = Z0.rows(block)
    states = [Z0]
    Z = Z0.Z
    for l, w in enumerate(weights):
        with np.errstate(over="ignore", invalid="ignore"):
            Z = layer_step(Z, w)
        _check_finite(Z, l)
        Z = Z.copy()
        Z[rows] = normalise_rows(Z[rows])
        states.append(Z0.with_Z(Z))
    return states


@dataclass(frozen=True)
class EfficientTrajectory:
    B: list[np.ndarray]
    Phi: list[np.ndarray]

    @property
    def final(self) -> tuple[np.ndarray, np.ndarray]:
        return self.B[-1], self.Phi[-1]


def efficient_forward(Bt0: np.ndarray, Phi0: np.ndarray, weights, normalize_rows_of: slice | None = None) -> EfficientTrajectory:
    """Constrained dynamics on the edge block ``Bt`` (d x n) and feature block ``Phi`` (2k x n).

    ``normalize_rows_of`` selects feature rows to row-normalise after each
    layer, mirroring :func:`forward_eig`.
    """
    Bt = np.asarray(Bt0, dtype=float)
    Phi = np.asarray(Phi0, dtype=float)
    Bs, Phis = [Bt], [Phi]
    for l, w in enumerate(weights):
        if w.width != Phi.shape[0]:
            raise ValueError(f"layer {l} acts on {w.width} feature rows but Phi has {Phi.shape[0]}")
        with np.errstate(over="ignore", invalid="ignore"):
            sim = w.alphaQ * w.alphaK * (Bt.T @ Bt) + Phi.T @ (w.WQphi.T @ (w.WKphi @ Phi))
            Bt_next = (1.0 + w.alphaR) * Bt + w.alphaV * (Bt @ sim)
            Phi_next = Phi + w.WRphi @ Phi + w.WVphi @ (Phi @ sim)
        _check_finite(Bt_next, l)
        _check_finite(Phi_next, l)
        if normalize_rows_of is not None:
            Phi_next = Phi_next.copy()
            Phi_next[normalize_rows_of] = normalise_rows(Phi_next[normalize_rows_of])
        Bt, Phi = Bt_next, Phi_next
        Bs.append(Bt)
        Phis.append(Phi)
    return EfficientTrajectory(Bs, Phis)


def weights_to_json(weights, layout=None) -> str:
    """Serialise a list of layer weights (full or efficient) with a layout header."""
    layers = []
    for w in weights:
        if isinstance(w, LayerWeights):
            layers.append({"WV": w.WV.tolist(), "PQK": w.PQK.tolist(), "WR": w.WR.tolist()})
        else:
            layers.append({
                "alphaV": w.alphaV, "alphaQ": w.alphaQ, "alphaK": w.alphaK, "alphaR": w.alphaR,
                "WVphi": w.WVphi.tolist(), "WQphi": w.WQphi.tolist(),
                "WKphi": w.WKphi.tolist(), "WRphi": w.WRphi.tolist(),
            })
    header = {}
    start = 0
    for name, size in layout or ():
        header[name] = [start, start + size]
        start += size
    return json.dumps({"layout": header, "layers": layers})


def weights_from_json(text: str):
    """Inverse of :func:`weights_to_json`; returns ``(weights, layout)``."""
    data = json.loads(text)
    layout = tuple((name, stop - start) for name, (start, stop) in sorted(data["layout"].items(), key=lambda kv: kv[1][0]))
    weights = []
    for layer in data["layers"]:
        if "PQK" in layer:
            weights.append(LayerWeights(*(np.array(layer[key], dtype=float) for key in ("WV", "PQK", "WR"))))
        else:
            weights.append(EfficientLayerWeights(
                float(layer["alphaV"]), float(layer["alphaQ"]), float(layer["alphaK"]), float(layer["alphaR"]),
                *(np.array(layer[key], dtype=float) for key in ("WVphi", "WQphi", "WKphi", "WRphi")),
            ))
    return weights, layout
