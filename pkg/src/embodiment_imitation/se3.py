"""Frames, twists and revolute screws.

Rotation matrices are stored directly; a frame's x-axis is the first column
of its rotation.  Twists are ordered ``(omega, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(w) -> np.ndarray:
    """3x3 skew-symmetric matrix with ``skew(w) @ x == cross(w, x)``."""
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def rotz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def roty(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotx(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _vec3(x) -> np.ndarray:
    x = np.array(x, dtype=float).reshape(3)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class Frame:
    """Rigid-body pose ``[R, p]`` relative to a reference frame."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "p", _vec3(self.p))

    @classmethod
    def identity(cls) -> "Frame":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Frame":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.p
        return T

    @property
    def x_axis(self) -> np.ndarray:
        return self.R[:, 0]

    def inverse(self) -> "Frame":
        return inverse(self)

    def __matmul__(self, other: "Frame") -> "Frame":
        return compose(self, other)


@dataclass(frozen=True)
class Twist:
    """Rigid-body velocity: angular part ``omega`` and linear part ``v``."""

    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "omega", _vec3(self.omega))
        object.__setattr__(self, "v", _vec3(self.v))
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.v))):
            raise ValueError("twist components must be finite")

    @classmethod
    def from_vector(cls, V) -> "Twist":
        V = np.asarray(V, dtype=float)
        return cls(V[:3], V[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True)
class Screw:
    """Revolute joint axis: unit direction through a point."""

    axis_dir: np.ndarray
    axis_point: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        n = np.asarray(self.axis_dir, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise ValueError("screw axis direction must be nonzero")
        if abs(norm - 1.0) > 1e-12:
            n = n / norm
        object.__setattr__(self, "axis_dir", _vec3(n))
        object.__setattr__(self, "axis_point", _vec3(self.axis_point))

    @property
    def vector(self) -> np.ndarray:
        """Screw coordinates ``(n, -n x q)``."""
        return np.concatenate([self.axis_dir, -np.cross(self.axis_dir, self.axis_point)])

    @property
    def matrix(self) -> np.ndarray:
        """4x4 se(3) generator."""
        S = np.zeros((4, 4))
        S[:3, :3] = skew(self.axis_dir)
        S[:3, 3] = -np.cross(self.axis_dir, self.axis_point)
        return S


def compose(a: Frame, b: Frame) -> Frame:
    return Frame(a.R @ b.R, a.R @ b.p + a.p)


def inverse(t: Frame) -> Frame:
    return Frame(t.R.T, -t.R.T @ t.p)


def rodrigues(axis, theta: float) -> np.ndarray:
    """Rotation by ``theta`` about the unit vector ``axis``."""
    K = skew(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def screw_exp(s: Screw, theta: float) -> Frame:
    """Closed-form exponential of a revolute screw.

    A rotation by ``theta`` about a line through ``q`` moves the origin to
    ``(I - R) q``.
    """
    R = rodrigues(s.axis_dir, theta)
    return Frame(R, (np.eye(3) - R) @ s.axis_point)


def adjoint_matrix(t: Frame) -> np.ndarray:
    """6x6 matrix of ``Ad_T`` acting on ``(omega, v)`` twists."""
    A = np.zeros((6, 6))
    A[:3, :3] = t.R
    A[3:, 3:] = t.R
    A[3:, :3] = skew(t.p) @ t.R
    return A


def adjoint(t: Frame, v: Twist) -> Twist:
    """Transport a twist by ``t``: ``[R w, p x R w + R v]``."""
    Rw = t.R @ v.omega
    return Twist(Rw, np.cross(t.p, Rw) + t.R @ v.v)


def spatial_velocity(t: Frame, body: Twist) -> tuple[np.ndarray, np.ndarray]:
    """Base-frame angular velocity and origin velocity from a body twist."""
    return t.R @ body.omega, t.R @ body.v
