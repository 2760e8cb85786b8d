"""Kinematic chains: specs, normalization, forward kinematics and twists.

A chain of ``n`` revolute joints lies along +x in its zero pose.  Joint ``i``
sits at arc length ``l_1 + ... + l_{i-1}`` and the frame of link ``i`` sits
``r_i`` further along the link, x-axis pointing down the link.  Joint indices
in specs and JSON files are 1-based, as in the usual robotics numbering.

The kinematics functions accept joint angles of shape ``(..., n)`` as numpy
arrays or as :class:`~embodiment_imitation.diffgraph.tape.Var`, so the same
code serves simulation, grid scans and gradient computation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diffgraph import tape as ad
from .se3 import Frame, Screw, Twist, skew

_Z = (0.0, 0.0, 1.0)
_Y = (0.0, 1.0, 0.0)


def wrap_angle(q):
    """Map angles into [-pi, pi]; values already inside are left untouched."""
    q = np.asarray(q, dtype=float)
    wrapped = np.mod(q + np.pi, 2.0 * np.pi) - np.pi
    return np.where(np.abs(q) > np.pi, wrapped, q)


@dataclass(frozen=True)
class Link:
    length: float
    offset: float | None = None
    axis: tuple[float, float, float] = _Z
    mass: float = 1.0
    torque_limit: float = 5.0

    def __post_init__(self):
        length = float(self.length)
        offset = length / 2.0 if self.offset is None else float(self.offset)
        if not length > 0.0:
            raise ValueError(f"link length must be positive, got {length}")
        if not 0.0 < offset <= length * (1.0 + 1e-12):
            raise ValueError(f"frame offset must lie in (0, length], got {offset}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValueError("joint axis must be nonzero")
        if self.mass <= 0.0:
            raise ValueError("link mass must be positive")
        if self.torque_limit <= 0.0:
            raise ValueError("torque limit must be positive")
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "axis", tuple(float(a) for a in axis / norm))
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "torque_limit", float(self.torque_limit))


@dataclass(frozen=True)
class EmbodimentSpec:
    """Serial chain description; ``locked`` holds 1-based joint indices."""

    links: tuple[Link, ...]
    locked: frozenset[int] = frozenset()
    name: str = "chain"

    def __post_init__(self):
        links = tuple(self.links)
        if not links:
            raise ValueError("an embodiment needs at least one link")
        locked = frozenset(int(i) for i in self.locked)
        bad = [i for i in locked if not 1 <= i <= len(links)]
        if bad:
            raise ValueError(f"locked joint indices out of range 1..{len(links)}: {sorted(bad)}")
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "locked", locked)

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([link.length for link in self.links])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([link.offset for link in self.links])

    @property
    def axes(self) -> np.ndarray:
        return np.array([link.axis for link in self.links])

    @property
    def masses(self) -> np.ndarray:
        return np.array([link.mass for link in self.links])

    @property
    def torque_limits(self) -> np.ndarray:
        return np.array([link.torque_limit for link in self.links])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def is_normalized(self) -> bool:
        return abs(self.total_length - 1.0) <= 1e-12

    @property
    def locked_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[[i - 1 for i in self.locked]] = True
        return mask

    @property
    def free_joints(self) -> np.ndarray:
        """0-based indices of the unlocked joints."""
        return np.flatnonzero(~self.locked_mask)

    @property
    def dof(self) -> int:
        return self.n - len(self.locked)

    @property
    def is_planar(self) -> bool:
        return bool(np.allclose(np.abs(self.axes[:, 2]), 1.0))

    def joint_positions(self) -> np.ndarray:
        """Arc length of each joint along the zero-pose chain."""
        return np.concatenate([[0.0], np.cumsum(self.lengths)[:-1]])

    def screws(self) -> list[Screw]:
        """Space-frame joint screws in the zero pose."""
        return [Screw(link.axis, (x, 0.0, 0.0))
                for link, x in zip(self.links, self.joint_positions())]

    def home_frames(self) -> list[Frame]:
        """Zero-pose link frames (the constant factors of the exponential product)."""
        return [Frame(np.eye(3), (x + link.offset, 0.0, 0.0))
                for link, x in zip(self.links, self.joint_positions())]

    def expand(self, q_free) -> np.ndarray:
        """Insert zeros for locked joints into a ``(..., dof)`` array."""
        q_free = np.asarray(q_free, dtype=float)
        out = np.zeros(q_free.shape[:-1] + (self.n,))
        out[..., self.free_joints] = q_free
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "links": [{"length": l.length, "offset": l.offset, "axis": list(l.axis),
                       "mass": l.mass, "torque_limit": l.torque_limit} for l in self.links],
            "locked": sorted(self.locked),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmbodimentSpec":
        links = tuple(Link(length=d["length"], offset=d.get("offset"),
                           axis=tuple(d.get("axis", _Z)), mass=d.get("mass", 1.0),
                           torque_limit=d.get("torque_limit", 5.0)) for d in data["links"])
        return cls(links, frozenset(data.get("locked", ())), data.get("name", "chain"))


def save_spec(spec: EmbodimentSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_spec(path) -> EmbodimentSpec:
    return EmbodimentSpec.from_dict(json.loads(Path(path).read_text()))


def planar_chain(n: int, total_length: float = 1.0, *, lengths: Sequence[float] | None = None,
                 mass: float = 1.0, torque_limit: float = 5.0, name: str | None = None) -> EmbodimentSpec:
    """Planar chain of ``n`` links (all joint axes along z), frames at the link centres."""
    if lengths is None:
        lengths = [total_length / n] * n
    if len(lengths) != n:
        raise ValueError("need one length per link")
    links = tuple(Link(l, axis=_Z, mass=mass, torque_limit=torque_limit) for l in lengths)
    return EmbodimentSpec(links, name=name or f"planar{n}")


def anthropomorphic_arm(total_length: float = 1.0, *, mass: float = 1.0,
                        torque_limit: float = 5.0) -> EmbodimentSpec:
    """7-joint spatial arm with alternating z/y axes and equal links."""
    links = tuple(Link(total_length / 7, axis=_Z if i % 2 == 0 else _Y, mass=mass,
                       torque_limit=torque_limit) for i in range(7))
    return EmbodimentSpec(links, name="arm7")


def normalize(spec: EmbodimentSpec) -> EmbodimentSpec:
    """Rescale lengths and offsets so the chain has unit total length."""
    L = spec.total_length
    if not L > 0.0:
        raise ValueError("cannot normalize a chain of zero length")
    if spec.is_normalized:
        return spec
    links = tuple(replace(link, length=link.length / L, offset=link.offset / L)
                  for link in spec.links)
    return replace(spec, links=links)


def lock_joints(spec: EmbodimentSpec, which: Iterable[int]) -> EmbodimentSpec:
    """Pin the given 1-based joints to zero."""
    which = frozenset(int(i) for i in which)
    bad = [i for i in which if not 1 <= i <= spec.n]
    if bad:
        raise ValueError(f"joint indices out of range 1..{spec.n}: {sorted(bad)}")
    if not which:
        return spec
    return replace(spec, locked=spec.locked | which)


@dataclass(frozen=True)
class JointState:
    """Joint angles (wrapped into [-pi, pi]) and joint velocities."""

    q: np.ndarray
    qdot: np.ndarray | None = None

    def __post_init__(self):
        q = wrap_angle(np.array(self.q, dtype=float))
        qdot = np.zeros_like(q) if self.qdot is None else np.array(self.qdot, dtype=float)
        if qdot.shape != q.shape:
            raise ValueError("q and qdot must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @classmethod
    def zero(cls, spec: EmbodimentSpec) -> "JointState":
        return cls(np.zeros(spec.n))

    def validate(self, spec: EmbodimentSpec) -> "JointState":
        if self.q.shape[-1] != spec.n:
            raise ValueError(f"{spec.name} has {spec.n} joints, state has {self.q.shape[-1]}")
        mask = spec.locked_mask
        if np.any(self.q[..., mask] != 0.0) or np.any(self.qdot[..., mask] != 0.0):
            raise ValueError(f"locked joints {sorted(spec.locked)} must stay at zero")
        return self


@dataclass(frozen=True)
class EmbodimentState:
    """Per-link frames and body twists in chain order.

    Arrays carry optional leading batch dimensions:
    ``rotations (..., n, 3, 3)``, ``positions``, ``omega`` and ``v`` ``(..., n, 3)``.
    ``omega`` and ``v`` are body-frame twist components.
    """

    rotations: object
    positions: object
    omega: object = None
    v: object = None
    normalized: bool = False

    def __len__(self) -> int:
        return ad.value_of(self.positions).shape[-2]

    @property
    def has_twists(self) -> bool:
        return self.omega is not None

    @property
    def x_axes(self):
        return self.rotations[..., :, 0]

    @property
    def spatial_omega(self) -> np.ndarray:
        """Angular velocities in base coordinates."""
        if self.omega is None:
            return np.zeros(ad.value_of(self.positions).shape)
        return np.einsum("...ij,...j->...i", self.rotations, self.omega)

    @property
    def origin_velocity(self) -> np.ndarray:
        """Frame-origin velocities in base coordinates."""
        if self.v is None:
            return np.zeros(ad.value_of(self.positions).shape)
        return np.einsum("...ij,...j->...i", self.rotations, self.v)

    def frames(self) -> list[Frame]:
        R, p = ad.value_of(self.rotations), ad.value_of(self.positions)
        if R.ndim != 3:
            raise ValueError("frames() needs an unbatched state")
        return [Frame(R[i], p[i]) for i in range(len(p))]

    def twists(self) -> list[Twist]:
        n = len(self)
        if self.omega is None:
            return [Twist() for _ in range(n)]
        return [Twist(self.omega[i], self.v[i]) for i in range(n)]

    def __getitem__(self, i: int) -> tuple[Frame, Twist]:
        return self.frames()[i], self.twists()[i]


@dataclass(frozen=True)
class CandidatePointState:
    positions: np.ndarray
    velocities: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[-2]


def _check_angles(spec: EmbodimentSpec, q):
    qv = ad.value_of(q)
    if qv.shape[-1] != spec.n:
        raise ValueError(f"{spec.name} has {spec.n} joints, got angles of shape {qv.shape}")
    mask = spec.locked_mask
    if mask.any() and np.any(qv[..., mask] != 0.0):
        raise ValueError(f"locked joints {sorted(spec.locked)} must stay at zero")


def _rotation_terms(axis: np.ndarray):
    K = skew(axis)
    K2 = K @ K
    return np.eye(3) + K2, K, -K2


def _joint_rotation(axis, s, c):
    """Rodrigues rotation for batched sin/cos values of shape (...,)."""
    A0, A1, A2 = _rotation_terms(axis)
    s = ad.expand_dims(s, (-1, -2))
    c = ad.expand_dims(c, (-1, -2))
    return A0 + s * A1 + c * A2


def forward_kinematics(spec: EmbodimentSpec, js) -> EmbodimentState:
    """Link frames as a product of joint exponentials times the zero-pose frame.

    ``js`` is a :class:`JointState` or an angle array of shape ``(..., n)``
    (numpy or tape variable).  Only frames are filled in.
    """
    q = js.validate(spec).q if isinstance(js, JointState) else js
    if not ad.is_var(q):
        q = np.asarray(q, dtype=float)
    _check_angles(spec, q)
    s_all, c_all = ad.sin(q), ad.cos(q)
    joints = spec.joint_positions()
    homes = joints + spec.offsets
    G_R = G_p = None
    rotations, positions = [], []
    for i, link in enumerate(spec.links):
        axis = np.asarray(link.axis)
        R_j = _joint_rotation(axis, s_all[..., i], c_all[..., i])
        point = np.array([joints[i], 0.0, 0.0])
        shift = point - ad.matvec(R_j, point)
        if G_R is None:
            G_R, G_p = R_j, shift
        else:
            G_p = G_p + ad.matvec(G_R, shift)
            G_R = ad.matmul(G_R, R_j)
        rotations.append(G_R)
        positions.append(G_p + homes[i] * G_R[..., :, 0])
    return EmbodimentState(ad.stack(rotations, axis=-3), ad.stack(positions, axis=-2),
                           normalized=spec.is_normalized)


def body_screws(spec: EmbodimentSpec) -> np.ndarray:
    """Joint screws ``(n, 6)`` expressed in each link's own frame."""
    ex = np.array([1.0, 0.0, 0.0])
    A = np.zeros((spec.n, 6))
    for i, link in enumerate(spec.links):
        n_i = np.asarray(link.axis)
        A[i, :3] = n_i
        A[i, 3:] = link.offset * np.cross(n_i, ex)
    return A


def link_shifts(spec: EmbodimentSpec) -> np.ndarray:
    """x-distance from frame ``i-1`` to frame ``i`` in the zero pose (frame 0 = base)."""
    L, r = spec.lengths, spec.offsets
    d = r.copy()
    d[1:] += L[:-1] - r[:-1]
    return d


def chain_twists(spec: EmbodimentSpec, js, qdot=None) -> EmbodimentState:
    """Frames plus body twists from the link-to-link recursion.

    ``V_i = Ad_{T_{i-1,i}^{-1}}(V_{i-1}) + A_i qdot_i`` with ``V_0 = 0`` and
    ``T_{i-1,i} = M_{i-1,i} exp(A_i q_i)``.  Accepts a :class:`JointState`
    or numpy arrays ``q, qdot`` of shape ``(..., n)``.
    """
    if isinstance(js, JointState):
        js.validate(spec)
        q, qdot = js.q, js.qdot
    else:
        q = np.asarray(js, dtype=float)
        qdot = np.zeros_like(q) if qdot is None else np.asarray(qdot, dtype=float)
        _check_angles(spec, q)
        if np.any(qdot[..., spec.locked_mask] != 0.0):
            raise ValueError(f"locked joints {sorted(spec.locked)} must stay at zero")
    if qdot.shape != q.shape:
        raise ValueError("q and qdot must have the same shape")
    A = body_screws(spec)
    shifts = link_shifts(spec)
    s_all, c_all = np.sin(q), np.cos(q)
    batch = q.shape[:-1]
    R0 = np.broadcast_to(np.eye(3), batch + (3, 3))
    p0 = np.zeros(batch + (3,))
    w = np.zeros(batch + (3,))
    v = np.zeros(batch + (3,))
    Rs, ps, ws, vs = [], [], [], []
    for i, link in enumerate(spec.links):
        rot = _joint_rotation(np.asarray(link.axis), s_all[..., i], c_all[..., i])
        a = np.array([-link.offset, 0.0, 0.0])
        # T_{i-1,i} = [rot, d_i e_x + (I - rot) a]
        p_rel = a - rot @ a
        p_rel[..., 0] += shifts[i]
        rotT = np.swapaxes(rot, -1, -2)
        w_new = np.einsum("...ij,...j->...i", rotT, w) + A[i, :3] * qdot[..., i, None]
        v_new = (np.einsum("...ij,...j->...i", rotT, v + np.cross(w, p_rel))
                 + A[i, 3:] * qdot[..., i, None])
        p0 = p0 + np.einsum("...ij,...j->...i", R0, p_rel)
        R0 = R0 @ rot
        w, v = w_new, v_new
        Rs.append(R0)
        ps.append(p0)
        ws.append(w)
        vs.append(v)
    return EmbodimentState(np.stack(Rs, axis=-3), np.stack(ps, axis=-2),
                           np.stack(ws, axis=-2), np.stack(vs, axis=-2),
                           normalized=spec.is_normalized)


def candidate_points(state: EmbodimentState) -> CandidatePointState:
    """Frame origins and their base-frame velocities (rotations discarded)."""
    if len(state) == 0:
        raise ValueError("empty chain has no candidate points")
    positions = np.array(ad.value_of(state.positions))
    return CandidatePointState(positions, state.origin_velocity)
