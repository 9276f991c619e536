"""Vectors in R^{p,q} with the form <u,v> = u+.v+ - u-.v-, projections onto
the two blocks, energies of piecewise-linear paths, and piecewise-linear
maps given by vertex images."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class MinkVec:
    pos: np.ndarray
    neg: np.ndarray

    def __init__(self, pos, neg=()):
        object.__setattr__(self, "pos", np.asarray(pos, dtype=float).ravel())
        object.__setattr__(self, "neg", np.asarray(neg, dtype=float).ravel())

    @property
    def signature(self) -> tuple[int, int]:
        return (self.pos.size, self.neg.size)

    @classmethod
    def zeros(cls, p: int, q: int) -> "MinkVec":
        return cls(np.zeros(p), np.zeros(q))

    @classmethod
    def from_array(cls, arr, p: int) -> "MinkVec":
        arr = np.asarray(arr, float)
        return cls(arr[:p], arr[p:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.pos, self.neg])

    def _check(self, other: "MinkVec"):
        if self.signature != other.signature:
            raise ValueError(f"signature mismatch {self.signature} vs {other.signature}")

    def __add__(self, other: "MinkVec") -> "MinkVec":
        self._check(other)
        return MinkVec(self.pos + other.pos, self.neg + other.neg)

    def __sub__(self, other: "MinkVec") -> "MinkVec":
        self._check(other)
        return MinkVec(self.pos - other.pos, self.neg - other.neg)

    def __mul__(self, s: float) -> "MinkVec":
        return MinkVec(self.pos * s, self.neg * s)

    __rmul__ = __mul__

    def __neg__(self) -> "MinkVec":
        return MinkVec(-self.pos, -self.neg)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MinkVec):
            return NotImplemented
        return (self.signature == other.signature and np.array_equal(self.pos, other.pos)
                and np.array_equal(self.neg, other.neg))

    def __hash__(self):
        return hash((self.pos.tobytes(), self.neg.tobytes()))

    def euclidean_norm(self) -> float:
        return float(np.sqrt(self.pos @ self.pos + self.neg @ self.neg))

    def to_json(self) -> dict:
        return {"pos": self.pos.tolist(), "neg": self.neg.tolist()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "MinkVec":
        return cls(doc["pos"], doc.get("neg", []))


def mink_pairing(u: MinkVec, v: MinkVec) -> float:
    u._check(v)
    return float(u.pos @ v.pos - u.neg @ v.neg)


def project_pos(v: MinkVec) -> MinkVec:
    return MinkVec(v.pos, np.zeros_like(v.neg))


def project_neg(v: MinkVec) -> MinkVec:
    return MinkVec(np.zeros_like(v.pos), v.neg)


def pl_path_energy(breakpoints) -> tuple[float, float, float]:
    """Energy of the piecewise-linear path through (t, MinkVec) breakpoints.

    Returns (total, positive part, negative part); the negative part is the
    (nonpositive) contribution of the negative block, so total = pos + neg.
    """
    pts = list(breakpoints)
    if len(pts) < 2:
        return 0.0, 0.0, 0.0
    ts = np.array([float(t) for t, _ in pts])
    if np.any(np.diff(ts) <= 0):
        raise ValueError("breakpoint parameters must be strictly increasing")
    pos = np.array([v.pos for _, v in pts])
    neg = np.array([v.neg for _, v in pts]) if pts[0][1].neg.size else np.zeros((len(pts), 0))
    return pl_energy_arrays(ts, pos, neg)


def pl_energy_arrays(ts: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> tuple[float, float, float]:
    dt = np.diff(ts)
    if np.any(dt <= 0):
        raise ValueError("breakpoint parameters must be strictly increasing")
    ep = float(np.sum(np.sum(np.diff(pos, axis=0) ** 2, axis=1) / dt))
    en = -float(np.sum(np.sum(np.diff(neg, axis=0) ** 2, axis=1) / dt)) if neg.size else 0.0
    return ep + en, ep, en


def lorentz_orthogonal_negative(segment: MinkVec, tol: float = 1e-14) -> MinkVec:
    """Unit timelike vector v with <v, segment> = 0 and <v, v> = -1."""
    p, q = segment.signature
    if q < 1:
        raise ValueError("need at least one negative coordinate")
    ss = mink_pairing(segment, segment)
    if ss <= tol * max(1.0, segment.euclidean_norm() ** 2):
        raise ValueError("segment is not spacelike")
    e = MinkVec(np.zeros(p), np.eye(q)[0])
    v = e - (mink_pairing(e, segment) / ss) * segment
    vv = mink_pairing(v, v)
    return v * (1.0 / np.sqrt(-vv))


class PLMap:
    """Piecewise-linear map: vertex images, interpreted affinely on simplices."""

    def __init__(self, vertex_images: Mapping[Hashable, MinkVec], signature: tuple[int, int] | None = None):
        self.images = dict(vertex_images)
        sigs = {v.signature for v in self.images.values()}
        if signature is None:
            if len(sigs) > 1:
                raise ValueError("images have mixed signatures")
            signature = sigs.pop() if sigs else (0, 0)
        elif sigs and sigs != {tuple(signature)}:
            raise ValueError("images do not match the declared signature")
        self.signature = tuple(signature)

    def __getitem__(self, v) -> MinkVec:
        try:
            return self.images[v]
        except KeyError:
            raise KeyError(f"vertex {v!r} has no image") from None

    def __contains__(self, v) -> bool:
        return v in self.images

    def at(self, vertices: Iterable, weights: Iterable[float]) -> MinkVec:
        out = MinkVec.zeros(*self.signature)
        for v, w in zip(vertices, weights):
            out = out + self[v] * float(w)
        return out

    def to_json(self) -> dict:
        return {str(k): v.to_json() for k, v in self.images.items()}
