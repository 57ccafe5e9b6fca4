"""Quaternionic structure matrices, frame rotations, and their relations.

The three 4x4 matrices returned by :func:`standard_triple` are integer
matrices satisfying the quaternion relations exactly; every check on them
runs in integer arithmetic.  Rotated triples are floating point and are
checked against a 1e-12 tolerance (about 100x double epsilon accumulated
over 3x3 products).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ROTATION_TOL = 1e-12

_J1 = np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], dtype=np.int64)
_J2 = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=np.int64)
_J3 = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]], dtype=np.int64)


@dataclass(frozen=True)
class StructureTriple:
    """Three 4x4 complex-structure matrices acting on the model fiber.

    The flat-model convention ties the two-form of each structure to the
    matrix itself: omega(e_i, e_j) = J[i, j].
    """

    j1: np.ndarray
    j2: np.ndarray
    j3: np.ndarray

    def __post_init__(self):
        for name in ("j1", "j2", "j3"):
            m = np.asarray(getattr(self, name))
            if m.shape != (4, 4):
                raise ValidationError(f"{name} must be 4x4, got {m.shape}")
            object.__setattr__(self, name, m)

    @property
    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.j1, self.j2, self.j3)

    def is_exact(self) -> bool:
        """True when all three matrices carry integer dtype."""
        return all(np.issubdtype(m.dtype, np.integer) for m in self.matrices)


@dataclass(frozen=True)
class FrameRotation:
    """A 3x3 special-orthogonal matrix mixing the three structures."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {a.shape}")
        if np.abs(a.T @ a - np.eye(3)).max() > ROTATION_TOL:
            raise ValidationError("rotation is not orthogonal to 1e-12")
        if abs(np.linalg.det(a) - 1.0) > ROTATION_TOL:
            raise ValidationError("rotation determinant differs from 1 by more than 1e-12")
        object.__setattr__(self, "a", a)


@dataclass(frozen=True)
class BlockStructure:
    """Block-diagonal 4n x 4n extensions of a structure triple."""

    n: int
    matrices: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class RelationReport:
    """Max absolute deviation of each quaternion relation.

    All fields are worst-case deviations over the relevant matrices; a
    perfect triple reports zeros everywhere.
    """

    squares: tuple[float, float, float]       # |J_a^2 + I|
    product: float                            # |J1 J2 J3 + I|
    skewness: tuple[float, float, float]      # |J_a^T + J_a|
    orthogonality: tuple[float, float, float]  # |J_a^T J_a - I|
    anticommutators: tuple[float, float, float]  # |J_a J_b + J_b J_a|, pairs (1,2),(1,3),(2,3)

    def max_deviation(self) -> float:
        return max(
            max(self.squares),
            self.product,
            max(self.skewness),
            max(self.orthogonality),
            max(self.anticommutators),
        )

    def holds(self, tol: float = ROTATION_TOL) -> bool:
        return self.max_deviation() <= tol

    def as_dict(self) -> dict:
        return {
            "squares": list(self.squares),
            "product": self.product,
            "skewness": list(self.skewness),
            "orthogonality": list(self.orthogonality),
            "anticommutators": list(self.anticommutators),
            "max_deviation": self.max_deviation(),
        }


def standard_triple() -> StructureTriple:
    """The integer structure triple of the flat model.

    Entries live in {-1, 0, 1}; all quaternion relations hold exactly in
    integer arithmetic.
    """
    return StructureTriple(_J1.copy(), _J2.copy(), _J3.copy())


def rotate_triple(a: FrameRotation, t: StructureTriple) -> StructureTriple:
    """Mix the triple by a special-orthogonal frame rotation.

    Returns the triple with entries sum_b a[i, b] * J_b.
    """
    if not isinstance(a, FrameRotation):
        a = FrameRotation(np.asarray(a))
    ms = [m.astype(float) for m in t.matrices]
    out = [sum(a.a[i, b] * ms[b] for b in range(3)) for i in range(3)]
    return StructureTriple(*out)


def verify_quaternion_relations(t: StructureTriple) -> RelationReport:
    """Measure every quaternion relation; failures are reported, not raised."""
    ms = t.matrices
    exact = t.is_exact()
    ident = np.eye(4, dtype=np.int64 if exact else float)

    def dev(m) -> float:
        d = np.abs(m).max()
        return float(d)

    squares = tuple(dev(m @ m + ident) for m in ms)
    product = dev(ms[0] @ ms[1] @ ms[2] + ident)
    skewness = tuple(dev(m.T + m) for m in ms)
    orthogonality = tuple(dev(m.T @ m - ident) for m in ms)
    pairs = ((0, 1), (0, 2), (1, 2))
    anticomm = tuple(dev(ms[i] @ ms[j] + ms[j] @ ms[i]) for i, j in pairs)
    return RelationReport(squares, product, skewness, orthogonality, anticomm)


def block_structure(t: StructureTriple, n: int) -> BlockStructure:
    """Extend the triple to 4n x 4n block-diagonal matrices (n copies)."""
    if n < 1:
        raise ValidationError(f"block count must be >= 1, got {n}")
    eye = np.eye(n, dtype=t.j1.dtype)
    mats = tuple(np.kron(eye, m) for m in t.matrices)
    return BlockStructure(n=n, matrices=mats)


def random_rotation(rng: np.random.Generator) -> FrameRotation:
    """Haar-ish random SO(3) element via QR with sign fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return FrameRotation(q)


def triple_to_json(t: StructureTriple, a: FrameRotation | None = None) -> str:
    """Serialize a triple (and optional rotation) to the documented JSON layout."""
    payload: dict = {"j": [m.tolist() for m in t.matrices]}
    if a is not None:
        payload["A"] = a.a.tolist()
    return json.dumps(payload, indent=2, sort_keys=True)


def triple_from_json(text: str) -> tuple[StructureTriple, FrameRotation | None]:
    """Parse and validate the JSON layout written by :func:`triple_to_json`."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"triple document is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "j" not in payload:
        raise ValidationError("triple document must be an object with a 'j' key")
    js = payload["j"]
    if not isinstance(js, list) or len(js) != 3:
        raise ValidationError("'j' must hold exactly three matrices")
    mats = []
    for entry in js:
        m = np.asarray(entry)
        if m.shape != (4, 4):
            raise ValidationError(f"each structure matrix must be 4x4, got {m.shape}")
        if np.issubdtype(m.dtype, np.integer):
            m = m.astype(np.int64)
        else:
            m = m.astype(float)
        mats.append(m)
    triple = StructureTriple(*mats)
    rot = None
    if payload.get("A") is not None:
        rot = FrameRotation(np.asarray(payload["A"], dtype=float))
    return triple, rot
