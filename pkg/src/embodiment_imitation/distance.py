"""Distances between frames, link states and whole embodiments.

Pairwise link distances combine four terms::

    d = a_tr * |p - p'| + a_rot * (pi/2) * (1 - ex . ex')
        + a_v * |pdot - pdot'| + a_omega * |w_s - w_s'|

where ``ex`` is a frame's x-axis and the velocities are base-frame
quantities.  The embodiment distance weights the ``n x m`` matrix of all
pairwise distances with a correspondence matrix (Hadamard product) and
takes the mean over all ``n * m`` entries.

Everything below operates on arrays with leading batch dimensions, and on
tape variables for gradient computation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .diffgraph import tape as ad
from .embodiment import EmbodimentSpec, EmbodimentState, chain_twists, forward_kinematics, normalize
from .se3 import Frame, Twist, spatial_velocity

DEFAULT_XI = -10.0


@dataclass(frozen=True)
class DistanceWeights:
    alpha_tr: float = 0.0
    alpha_rot: float = 1.0
    alpha_v: float = 0.0
    alpha_omega: float = 0.0

    def __post_init__(self):
        values = self.as_tuple()
        if any(not np.isfinite(a) or a < 0.0 for a in values):
            raise ValueError(f"distance weights must be finite and nonnegative, got {values}")
        if not any(values):
            raise ValueError("at least one distance weight must be positive")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha_tr, self.alpha_rot, self.alpha_v, self.alpha_omega)

    @classmethod
    def parse(cls, text: str) -> "DistanceWeights":
        """From a comma-separated ``tr,rot,v,omega`` string."""
        parts = [float(x) for x in text.split(",")]
        if len(parts) == 2:
            parts += [0.0, 0.0]
        if len(parts) != 4:
            raise ValueError("weights take the form tr,rot[,v,omega]")
        return cls(*parts)


ROTATION_ONLY = DistanceWeights(0.0, 1.0, 0.0, 0.0)
MOTION_WEIGHTS = DistanceWeights(0.0, 1.0, 0.001, 0.01)

# Marker weight set: a_tr = d_tr and a_rot = (2/pi)(2 - d_tr) for each pair.
DISTANCE_DEPENDENT = "distance_dependent"

Weights = Union[DistanceWeights, str]


def distance_dependent_weights(d_tr: float) -> DistanceWeights:
    """Weights that tie the rotational share to the translational distance.

    ``alpha_tr + (pi/2) * alpha_rot == 2`` for every ``d_tr`` in ``[0, 2]``,
    the diameter of the unit sphere both normalized chains live in.
    """
    if not 0.0 <= d_tr <= 2.0:
        raise ValueError(f"translational distance must lie in [0, 2], got {d_tr}")
    return DistanceWeights(float(d_tr), 2.0 / np.pi * (2.0 - d_tr), 0.0, 0.0)


@dataclass(frozen=True)
class CorrespondenceMatrix:
    """Link-pair weights ``W`` of shape ``(..., n, m)``."""

    W: object
    mode: str
    xi: float | None = None

    @property
    def shape(self) -> tuple:
        return ad.value_of(self.W).shape


Correspondence = Union[str, CorrespondenceMatrix, np.ndarray]


# pairwise terms -----------------------------------------------------------

def rotational_distance(ex_a, ex_b):
    """``(pi/2)(1 - cos beta)`` for unit x-axes; lies in ``[0, pi]``.

    Evaluated as ``(pi/4)|a - b|^2``, equal on the unit sphere, so rounding
    cannot push it below zero.
    """
    diff = ex_a - ex_b
    return (np.pi / 4.0) * ad.sum(diff * diff, axis=-1)


def frame_distance(a: Frame, b: Frame, w: DistanceWeights = ROTATION_ONLY) -> float:
    d_tr = float(np.linalg.norm(a.p - b.p))
    d_rot = float(rotational_distance(a.x_axis, b.x_axis))
    return w.alpha_tr * d_tr + w.alpha_rot * d_rot


def state_distance(a: tuple[Frame, Twist], b: tuple[Frame, Twist],
                   w: DistanceWeights = ROTATION_ONLY) -> float:
    """Distance between two link states given as (frame, body twist)."""
    (fa, ta), (fb, tb) = a, b
    wa, va = spatial_velocity(fa, ta)
    wb, vb = spatial_velocity(fb, tb)
    return (frame_distance(fa, fb, w) + w.alpha_v * float(np.linalg.norm(va - vb))
            + w.alpha_omega * float(np.linalg.norm(wa - wb)))


def _require_normalized(*states: EmbodimentState) -> None:
    for s in states:
        if not s.normalized:
            raise ValueError("distances are defined between normalized embodiments; "
                             "build states from normalize(spec)")
        if len(s) == 0:
            raise ValueError("empty embodiment")


def distance_terms(s: EmbodimentState, s_hat: EmbodimentState, need=(True, True, True, True)):
    """Unweighted ``(d_tr, d_rot, d_v, d_omega)`` matrices, each ``(..., n, m)``.

    Terms not flagged in ``need`` are returned as ``None``.
    """
    _require_normalized(s, s_hat)
    pa = ad.expand_dims(s.positions, -2)
    pb = ad.expand_dims(s_hat.positions, -3)
    d_tr = ad.norm(pa - pb, axis=-1) if need[0] else None
    d_rot = None
    if need[1]:
        d_rot = rotational_distance(ad.expand_dims(s.x_axes, -2), ad.expand_dims(s_hat.x_axes, -3))
    d_v = d_w = None
    if need[2]:
        d_v = np.linalg.norm(s.origin_velocity[..., :, None, :]
                             - s_hat.origin_velocity[..., None, :, :], axis=-1)
    if need[3]:
        d_w = np.linalg.norm(s.spatial_omega[..., :, None, :]
                             - s_hat.spatial_omega[..., None, :, :], axis=-1)
    return d_tr, d_rot, d_v, d_w


def mutual_distance_matrix(s: EmbodimentState, s_hat: EmbodimentState, w: Weights = ROTATION_ONLY):
    """``D'[i, j] = d(s_i, s_hat_j)`` over all link pairs.

    Zero-weight terms are skipped entirely, which keeps the Euclidean norms
    of coincident points out of gradient computations.
    """
    if isinstance(w, str):
        if w != DISTANCE_DEPENDENT:
            raise ValueError(f"unknown weight scheme {w!r}")
        d_tr, d_rot, _, _ = distance_terms(s, s_hat, (True, True, False, False))
        return d_tr * d_tr + (2.0 / np.pi) * (2.0 - d_tr) * d_rot
    need = tuple(a > 0.0 for a in w.as_tuple())
    terms = distance_terms(s, s_hat, need)
    total = None
    for alpha, term in zip(w.as_tuple(), terms):
        if term is None:
            continue
        part = alpha * term
        total = part if total is None else total + part
    return total


# correspondence -----------------------------------------------------------

def binary_correspondence(D) -> CorrespondenceMatrix:
    """Row-argmin indicator plus column-argmin indicator; ties go to the lowest index."""
    D = np.asarray(ad.value_of(D))
    if not np.all(np.isfinite(D)):
        raise ValueError("distance matrix must be finite")
    n, m = D.shape[-2:]
    rows = np.eye(m)[np.argmin(D, axis=-1)]
    cols = np.swapaxes(np.eye(n)[np.argmin(D, axis=-2)], -1, -2)
    return CorrespondenceMatrix(rows + cols, "binary")


def softmin_correspondence(D, xi: float = DEFAULT_XI) -> CorrespondenceMatrix:
    """Soft row minima plus soft column minima of ``D`` (``xi < 0``)."""
    if not xi < 0.0:
        raise ValueError(f"softmin needs a negative scale factor, got {xi}")
    scaled = xi * D
    W = ad.softmax(scaled, axis=-1) + ad.softmax(scaled, axis=-2)
    return CorrespondenceMatrix(W, "softmin", xi)


def arc_intervals(spec: EmbodimentSpec) -> np.ndarray:
    edges = np.concatenate([[0.0], np.cumsum(spec.lengths)]) / spec.total_length
    return np.stack([edges[:-1], edges[1:]], axis=1)


def static_correspondence(spec_a: EmbodimentSpec, spec_b: EmbodimentSpec) -> CorrespondenceMatrix:
    """State-independent weights from arc-length overlap of the unit chains.

    ``W[i, j]`` is the fraction of link ``i`` of ``spec_a`` that overlaps
    link ``j`` of ``spec_b`` when both are laid out on ``[0, 1]``; rows sum
    to one.
    """
    a, b = arc_intervals(spec_a), arc_intervals(spec_b)
    lo = np.maximum(a[:, None, 0], b[None, :, 0])
    hi = np.minimum(a[:, None, 1], b[None, :, 1])
    overlap = np.clip(hi - lo, 0.0, None)
    return CorrespondenceMatrix(overlap / (a[:, 1] - a[:, 0])[:, None], "static")


# embodiment distance -------------------------------------------------------

def _resolve(corr: Correspondence, D_corr, xi: float):
    if isinstance(corr, CorrespondenceMatrix):
        return corr.W
    if isinstance(corr, np.ndarray):
        return corr
    if corr == "binary":
        return binary_correspondence(D_corr).W
    if corr == "softmin":
        return softmin_correspondence(D_corr, xi).W
    if corr == "static":
        raise ValueError("static correspondence needs the specs: pass static_correspondence(a, b)")
    raise ValueError(f"unknown correspondence mode {corr!r}")


def reduce_weighted(W, D, reduce: str = "mean"):
    """Collapse ``W o D`` to a scalar per batch element."""
    DW = W * D
    if reduce == "mean":
        return ad.mean(DW, axis=(-2, -1))
    if reduce == "frobenius":
        return ad.sqrt(ad.sum(DW * DW, axis=(-2, -1)))
    raise ValueError(f"unknown reducer {reduce!r}")


def embodiment_distance(s: EmbodimentState, s_hat: EmbodimentState, w: Weights = ROTATION_ONLY,
                        corr: Correspondence = "binary", *, corr_weights: Weights | None = None,
                        xi: float = DEFAULT_XI, reduce: str = "mean"):
    """Scalar distance between two normalized embodiments in given states.

    Parameters
    ----------
    w
        Weights of the distance matrix that gets reduced.
    corr
        ``"binary"`` or ``"softmin"`` for state-dependent correspondence, or
        a precomputed (static) :class:`CorrespondenceMatrix` / array.
    corr_weights
        Weights used to build the state-dependent correspondence; defaults
        to ``w``.
    reduce
        ``"mean"`` over all ``n * m`` entries, or ``"frobenius"``.
    """
    D = mutual_distance_matrix(s, s_hat, w)
    D_corr = None
    if isinstance(corr, str):
        D_corr = D if corr_weights is None or corr_weights == w else \
            mutual_distance_matrix(s, s_hat, corr_weights)
    W = _resolve(corr, D_corr, xi)
    return reduce_weighted(W, D, reduce)


def resolve_correspondence(corr: Correspondence, spec: EmbodimentSpec,
                           spec_hat: EmbodimentSpec) -> Correspondence:
    """Replace the ``"static"`` keyword with the precomputed matrix."""
    if isinstance(corr, str) and corr == "static":
        return static_correspondence(spec, spec_hat)
    return corr


def distance_between(spec: EmbodimentSpec, q, spec_hat: EmbodimentSpec, q_hat,
                     w: Weights = ROTATION_ONLY, corr: Correspondence = "static", *,
                     qdot=None, qdot_hat=None, **kwargs):
    """Embodiment distance straight from joint angles (and optional velocities).

    Both specs are normalized first, so the value does not depend on the
    overall size of either chain.  Angle arrays may carry batch dimensions;
    ``q_hat`` may be a tape variable when velocities are omitted.
    """
    spec, spec_hat = normalize(spec), normalize(spec_hat)
    if qdot is None and qdot_hat is None:
        s, s_hat = forward_kinematics(spec, q), forward_kinematics(spec_hat, q_hat)
    else:
        s, s_hat = chain_twists(spec, q, qdot), chain_twists(spec_hat, q_hat, qdot_hat)
    return embodiment_distance(s, s_hat, w, resolve_correspondence(corr, spec, spec_hat), **kwargs)


# tables and scans ----------------------------------------------------------

TERMS_HEADER = ["i", "j", "d_tr", "d_rot", "d_v", "d_omega", "w", "weighted"]


def distance_table(s: EmbodimentState, s_hat: EmbodimentState, w: DistanceWeights,
                   corr: Correspondence = "binary", **kwargs) -> list[dict]:
    """Per-pair breakdown of an embodiment distance (1-based link indices)."""
    terms = [np.asarray(t) for t in distance_terms(s, s_hat)]
    D = np.asarray(mutual_distance_matrix(s, s_hat, w))
    D_corr = None if not isinstance(corr, str) else \
        np.asarray(mutual_distance_matrix(s, s_hat, kwargs.get("corr_weights") or w))
    W = np.asarray(ad.value_of(_resolve(corr, D_corr, kwargs.get("xi", DEFAULT_XI))))
    rows = []
    for i in range(D.shape[0]):
        for j in range(D.shape[1]):
            rows.append({"i": i + 1, "j": j + 1, "d_tr": terms[0][i, j], "d_rot": terms[1][i, j],
                         "d_v": terms[2][i, j], "d_omega": terms[3][i, j],
                         "w": W[i, j], "weighted": W[i, j] * D[i, j]})
    return rows


def write_distance_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TERMS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if k not in ("i", "j") else v) for k, v in row.items()})


def scan_angles(resolution: int) -> np.ndarray:
    """Periodic grid over [-pi, pi) with ``resolution`` points."""
    return -np.pi + 2.0 * np.pi * np.arange(resolution) / resolution


def grid_scan(spec: EmbodimentSpec, q, spec_hat: EmbodimentSpec, resolution: int = 360,
              w: Weights = ROTATION_ONLY, corr: Correspondence = "static", *,
              chunk: int = 32768, **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Distance over all angle pairs of a 2-DOF learner, expert fixed at ``q``.

    Returns the grid angles and ``Z`` with ``Z[a, b]`` the distance at
    learner angles ``(angles[a], angles[b])`` on the free joints.
    """
    if spec_hat.dof != 2:
        raise ValueError("grid scans need a learner with exactly two free joints")
    angles = scan_angles(resolution)
    A, B = np.meshgrid(angles, angles, indexing="ij")
    free = np.stack([A.ravel(), B.ravel()], axis=1)
    q_hat = spec_hat.expand(free)
    q = np.broadcast_to(np.asarray(q, dtype=float), (len(q_hat), spec.n))
    out = np.empty(len(q_hat))
    for start in range(0, len(q_hat), chunk):
        sl = slice(start, start + chunk)
        out[sl] = distance_between(spec, q[sl], spec_hat, q_hat[sl], w, corr, **kwargs)
    return angles, out.reshape(resolution, resolution)


def local_minima(Z: np.ndarray, periodic: bool = True) -> list[tuple[int, int]]:
    """Grid cells strictly below all 8 neighbours."""
    if not periodic:
        raise NotImplementedError("only periodic angle grids are supported")
    is_min = np.ones(Z.shape, dtype=bool)
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            if da == 0 and db == 0:
                continue
            is_min &= Z < np.roll(np.roll(Z, da, axis=0), db, axis=1)
    return [tuple(int(k) for k in idx) for idx in np.argwhere(is_min)]


def write_scan_csv(path, angles: np.ndarray, Z: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q1", "q2", "distance"])
        for a, qa in enumerate(angles):
            for b, qb in enumerate(angles):
                writer.writerow([repr(float(qa)), repr(float(qb)), repr(float(Z[a, b]))])


def read_scan_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    angles = np.unique(data[:, 0])
    return angles, data[:, 2].reshape(len(angles), len(angles))
