"""Group actions on R^N and registration solvers.

Points of the ambient space are plain 1-D float arrays.  Group elements are
small immutable objects; the actions below know how to apply, compose and
invert them, and how to register one point onto the orbit of another.

Cyclic shifts follow the convention ``k . (x_1, ..., x_N) = (x_{1+k}, ...,
x_{N+k})`` (indices mod N), i.e. ``np.roll(x, -k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ContractViolation, UnsupportedAction

ORTHO_TOL = 1e-9
SUBSPACE_TOL = 1e-9
TIE_RTOL = 1e-9
MARGIN_RTOL = 1e-9


def as_vector(x, n: int | None = None) -> np.ndarray:
    """Validate and convert ``x`` to a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ContractViolation(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if n is not None and arr.size != n:
        raise ContractViolation(f"dimension mismatch: expected {n}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("vector has non-finite coordinates")
    return arr


def row_distances(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Euclidean distances from ``x`` to every row of ``rows``.

    Every distance in the package that is compared across code paths goes
    through here so that identical inputs give identical bits.
    """
    diff = rows - x
    return np.sqrt(np.sum(diff * diff, axis=-1))


# --------------------------------------------------------------------------
# group elements
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    def apply(self, x):
        return np.array(x, dtype=np.float64)


@dataclass(frozen=True)
class CyclicShift:
    k: int

    def apply(self, x):
        return np.roll(np.asarray(x, dtype=np.float64), -self.k)


def _householder(x: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return x - 2.0 * np.dot(normal, x) * normal


@dataclass(frozen=True, eq=False)
class Rotation:
    """An orthogonal map, stored either as a matrix or as a product of
    Householder reflections (applied left to right)."""

    matrix: np.ndarray | None = None
    normals: tuple = ()

    def __post_init__(self):
        if self.matrix is not None:
            q = np.asarray(self.matrix, dtype=np.float64)
            if q.ndim != 2 or q.shape[0] != q.shape[1]:
                raise ContractViolation("rotation matrix must be square")
            if np.max(np.abs(q.T @ q - np.eye(q.shape[0]))) > ORTHO_TOL:
                raise ContractViolation("rotation matrix is not orthogonal")
            object.__setattr__(self, "matrix", q)

    @classmethod
    def aligning(cls, u: np.ndarray, w: np.ndarray) -> "Rotation":
        """Proper rotation sending unit vector ``u`` to unit vector ``w``."""
        d = u - w
        nd = np.linalg.norm(d)
        if nd <= 1e-15:
            return cls()
        n1 = d / nd
        # second reflection fixes w and restores det = +1
        j = int(np.argmin(np.abs(w)))
        e = np.zeros_like(w)
        e[j] = 1.0
        n2 = e - np.dot(e, w) * w
        n2 /= np.linalg.norm(n2)
        return cls(normals=(n1, n2))

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.matrix is not None:
            return self.matrix @ x
        out = x.copy()
        for n in self.normals:
            out = _householder(out, n)
        return out

    def as_matrix(self, n: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix.copy()
        return np.column_stack([self.apply(col) for col in np.eye(n)])


@dataclass(frozen=True, eq=False)
class AffineTranslation:
    v: np.ndarray

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) + self.v


GroupElement = Union[Identity, CyclicShift, Rotation, AffineTranslation]


def apply(g: GroupElement, x) -> np.ndarray:
    """Apply a standard group element to ``x``."""
    return g.apply(x)


@dataclass(frozen=True)
class RegistrationResult:
    element: GroupElement
    distance: float
    unique: bool
    registered: np.ndarray = field(repr=False)


@dataclass
class BatchRegistration:
    """Registration of many observations onto one point.

    ``indices`` holds element indices for finite actions and is ``None``
    otherwise; ``registered[i]`` is the registered copy of observation i.
    """

    indices: np.ndarray | None
    registered: np.ndarray
    distances: np.ndarray
    unique: np.ndarray


def pick_registration(distances: np.ndarray, x_norm: float, y_norm: float):
    """Apply the tie-break and uniqueness rules to a vector of candidate
    distances.  Returns ``(index, unique)``."""
    best = distances.min()
    tie_tol = TIE_RTOL * max(1.0, x_norm * y_norm)
    near = np.flatnonzero(distances <= best + tie_tol)
    idx = int(near[0])
    if distances.size == 1:
        return idx, True
    if near.size > 1:
        return idx, False
    second = np.min(np.delete(distances, idx))
    unique = bool(second - distances[idx] > MARGIN_RTOL * max(1.0, x_norm))
    return idx, unique


# --------------------------------------------------------------------------
# actions
# --------------------------------------------------------------------------


class GroupAction:
    """Base class.  Subclasses set the class attributes below."""

    kind = "abstract"
    isometric = True
    invariant = True
    finite = False
    linear = True

    def __init__(self, dimension: int):
        if int(dimension) < 1:
            raise ContractViolation("dimension must be >= 1")
        self.dimension = int(dimension)

    def __repr__(self):
        return f"{type(self).__name__}(dimension={self.dimension})"

    # descriptor ------------------------------------------------------
    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension}

    @property
    def subspace_basis(self):
        return None

    # element algebra -------------------------------------------------
    def apply(self, g: GroupElement, x) -> np.ndarray:
        x = as_vector(x, self.dimension)
        self._check_element(g)
        return g.apply(x)

    def apply_rows(self, g: GroupElement, X: np.ndarray) -> np.ndarray:
        return np.stack([self.apply(g, row) for row in X])

    def compose(self, g2: GroupElement, g1: GroupElement) -> GroupElement:
        """The element ``g2 g1`` (apply ``g1`` first)."""
        if isinstance(g1, Identity):
            return g2
        if isinstance(g2, Identity):
            return g1
        return self._compose(g2, g1)

    def _compose(self, g2, g1):
        raise UnsupportedAction(f"{self.kind} cannot compose {g2!r}, {g1!r}")

    def inverse(self, g: GroupElement) -> GroupElement:
        if isinstance(g, Identity):
            return g
        return self._inverse(g)

    def _inverse(self, g):
        raise UnsupportedAction(f"{self.kind} cannot invert {g!r}")

    def _check_element(self, g):
        if not isinstance(g, Identity):
            raise ContractViolation(f"{g!r} does not belong to action {self.kind}")

    def random_element(self, rng: np.random.Generator) -> GroupElement:
        return Identity()

    # registration ----------------------------------------------------
    def register(self, x, y) -> RegistrationResult:
        raise NotImplementedError

    def register_batch(self, x, Y: np.ndarray) -> BatchRegistration:
        results = [self.register(x, y) for y in Y]
        return BatchRegistration(
            indices=None,
            registered=np.stack([r.registered for r in results]),
            distances=np.array([r.distance for r in results]),
            unique=np.array([r.unique for r in results], dtype=bool),
        )

    def sup_inner(self, v, E: np.ndarray) -> np.ndarray:
        """``sup_g <v, g.e>`` for every row ``e`` of ``E``."""
        raise UnsupportedAction(f"sup over the group is not available for {self.kind}")

    def sup_inner_orbit(self, t, E: np.ndarray) -> np.ndarray:
        """``sup_g <g.t, e>`` for every row ``e`` of ``E``.

        Equal to :meth:`sup_inner` for isometric actions; differs otherwise.
        """
        return self.sup_inner(t, E)

    def is_fixed_point(self, x) -> bool:
        raise NotImplementedError

    def orbit(self, x) -> list:
        raise UnsupportedAction(f"orbit enumeration needs a finite group, not {self.kind}")


class FiniteAction(GroupAction):
    """A finite group acting linearly; elements are indexed 0..order-1 and
    index 0 is the identity."""

    finite = True

    @property
    def order(self) -> int:
        raise NotImplementedError

    def elements(self) -> list:
        raise NotImplementedError

    def element_index(self, g) -> int:
        raise NotImplementedError

    def orbit_matrix(self, y) -> np.ndarray:
        """Row ``k`` is ``g_k . y``."""
        raise NotImplementedError

    def register(self, x, y) -> RegistrationResult:
        x = as_vector(x, self.dimension)
        y = as_vector(y, self.dimension)
        rows = self.orbit_matrix(y)
        dist = row_distances(x, rows)
        idx, unique = pick_registration(dist, np.linalg.norm(x), np.linalg.norm(y))
        return RegistrationResult(self.elements()[idx], float(dist[idx]), unique, rows[idx])

    def register_batch(self, x, Y) -> BatchRegistration:
        x = as_vector(x, self.dimension)
        Y = np.asarray(Y, dtype=np.float64)
        indices = np.empty(len(Y), dtype=np.int64)
        registered = np.empty_like(Y)
        dists = np.empty(len(Y))
        unique = np.empty(len(Y), dtype=bool)
        nx = np.linalg.norm(x)
        for i, y in enumerate(Y):
            rows = self.orbit_matrix(y)
            d = row_distances(x, rows)
            idx, u = pick_registration(d, nx, np.linalg.norm(y))
            indices[i], registered[i], dists[i], unique[i] = idx, rows[idx], d[idx], u
        return BatchRegistration(indices, registered, dists, unique)

    def orbit(self, x) -> list:
        x = as_vector(x, self.dimension)
        seen = set()
        out = []
        for row in self.orbit_matrix(x):
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                out.append(row.copy())
        return out

    def sup_inner(self, v, E):
        v = as_vector(v, self.dimension)
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        # <v, g.e> = <g^T v, e>
        adj = np.stack([self._adjoint(g, v) for g in self.elements()])
        return np.max(E @ adj.T, axis=1)

    def sup_inner_orbit(self, t, E):
        t = as_vector(t, self.dimension)
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        return np.max(E @ self.orbit_matrix(t).T, axis=1)

    def _adjoint(self, g, v):
        raise NotImplementedError

    def random_element(self, rng):
        return self.elements()[int(rng.integers(self.order))]


def _shift_index_table(n: int) -> np.ndarray:
    ar = np.arange(n)
    return (ar[None, :] + ar[:, None]) % n


class TrivialAction(FiniteAction):
    kind = "trivial"

    @property
    def order(self):
        return 1

    def elements(self):
        return [Identity()]

    def element_index(self, g):
        self._check_element(g)
        return 0

    def orbit_matrix(self, y):
        return as_vector(y, self.dimension)[None, :].copy()

    def _adjoint(self, g, v):
        return v

    def register_batch(self, x, Y) -> BatchRegistration:
        x = as_vector(x, self.dimension)
        Y = np.array(Y, dtype=np.float64)
        return BatchRegistration(np.zeros(len(Y), dtype=np.int64), Y, row_distances(x, Y),
                                 np.ones(len(Y), dtype=bool))

    def is_fixed_point(self, x):
        as_vector(x, self.dimension)
        return True


class CyclicShiftAction(FiniteAction):
    """Z/NZ acting on R^N by circular index shift."""

    kind = "cyclic_shift"

    def __init__(self, dimension: int):
        super().__init__(dimension)
        self._table = _shift_index_table(self.dimension)

    @property
    def order(self):
        return self.dimension

    def elements(self):
        return [CyclicShift(k) for k in range(self.dimension)]

    def element_index(self, g):
        self._check_element(g)
        return 0 if isinstance(g, Identity) else g.k

    def _check_element(self, g):
        if isinstance(g, CyclicShift):
            if not 0 <= g.k < self.dimension:
                raise ContractViolation(f"shift {g.k} outside [0, {self.dimension})")
            return
        super()._check_element(g)

    def _compose(self, g2, g1):
        self._check_element(g2)
        self._check_element(g1)
        return CyclicShift((g2.k + g1.k) % self.dimension)

    def _inverse(self, g):
        self._check_element(g)
        return CyclicShift((-g.k) % self.dimension)

    def orbit_matrix(self, y):
        return as_vector(y, self.dimension)[self._table]

    def shift_rows(self, Y: np.ndarray, shifts: np.ndarray) -> np.ndarray:
        """Row i of the result is ``shifts[i] . Y[i]``."""
        return Y[np.arange(len(Y))[:, None], self._table[shifts]]

    def _adjoint(self, g, v):
        return np.roll(v, g.k)

    def sup_inner(self, v, E):
        v = as_vector(v, self.dimension)
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        # <v, roll(e, -k)> = <roll(v, k), e>; the rows of v[table] run over all shifts of v
        return np.max(E @ v[self._table].T, axis=1)

    def sup_inner_orbit(self, t, E):
        return self.sup_inner(t, E)

    def register_fft(self, x, y) -> RegistrationResult:
        x = as_vector(x, self.dimension)
        y = as_vector(y, self.dimension)
        reg = self.register_batch(x, y[None, :])
        k = int(reg.indices[0])
        return RegistrationResult(CyclicShift(k), float(reg.distances[0]), bool(reg.unique[0]),
                                  reg.registered[0])

    def register_batch(self, x, Y, Y_hat=None) -> BatchRegistration:
        """FFT registration of every row of ``Y`` onto ``x``.

        ``Y_hat`` may carry a precomputed ``rfft(Y, axis=1)``.  Scores come
        from the circular cross-correlation; candidates within the tie and
        uniqueness windows (widened by an FFT round-off allowance) are then
        re-scored exactly so the outcome matches exhaustive search.
        """
        x = as_vector(x, self.dimension)
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        n = self.dimension
        if Y_hat is None:
            Y_hat = np.fft.rfft(Y, axis=1)
        corr = np.fft.irfft(np.conj(np.fft.rfft(x))[None, :] * Y_hat, n=n, axis=1)
        nx2 = float(np.dot(x, x))
        ny2 = np.einsum("ij,ij->i", Y, Y)
        nx = np.sqrt(nx2)
        ny = np.sqrt(ny2)
        # d2 = nx2 - 2 corr + ny2, so the smallest d2 sits at the largest corr
        shifts = np.argmax(corr, axis=1)
        c_max = corr[np.arange(len(Y)), shifts]
        d2_min = nx2 - 2.0 * c_max + ny2
        window = np.maximum(TIE_RTOL * np.maximum(1.0, nx * ny), MARGIN_RTOL * max(1.0, nx))
        fft_err = 1e-11 * (nx2 + ny2) + 1e-300
        bound = (np.sqrt(np.maximum(d2_min, 0.0)) + 2.0 * window) ** 2 + 2.0 * fft_err
        # d2 <= bound  <=>  corr >= (nx2 + ny2 - bound) / 2
        n_cand = np.count_nonzero(corr >= (0.5 * (nx2 + ny2 - bound))[:, None], axis=1)

        unique = np.ones(len(Y), dtype=bool)
        for i in np.flatnonzero(n_cand > 1):
            rows = Y[i][self._table]
            d = row_distances(x, rows)
            shifts[i], unique[i] = pick_registration(d, nx, ny[i])
        registered = self.shift_rows(Y, shifts)
        dists = row_distances(x, registered)
        return BatchRegistration(shifts.astype(np.int64), registered, dists, unique)

    def is_fixed_point(self, x):
        x = as_vector(x, self.dimension)
        return bool(np.all(x == x[0]))


class RotationAction(GroupAction):
    """SO(N) acting on R^N; registration is closed form."""

    kind = "rotation"

    def __init__(self, dimension: int):
        super().__init__(dimension)
        if self.dimension < 2:
            raise ContractViolation("rotation action needs dimension >= 2")

    def _check_element(self, g):
        if isinstance(g, Rotation):
            if g.matrix is not None and g.matrix.shape != (self.dimension,) * 2:
                raise ContractViolation("rotation matrix has the wrong dimension")
            for nrm in g.normals:
                if nrm.shape != (self.dimension,):
                    raise ContractViolation("rotation has the wrong dimension")
            return
        super()._check_element(g)

    def _compose(self, g2, g1):
        self._check_element(g2)
        self._check_element(g1)
        if g2.matrix is None and g1.matrix is None:
            return Rotation(normals=g1.normals + g2.normals)
        return Rotation(matrix=g2.as_matrix(self.dimension) @ g1.as_matrix(self.dimension))

    def _inverse(self, g):
        self._check_element(g)
        if g.matrix is not None:
            return Rotation(matrix=g.matrix.T)
        return Rotation(normals=tuple(reversed(g.normals)))

    def random_element(self, rng):
        z = rng.standard_normal((self.dimension, self.dimension))
        q, r = np.linalg.qr(z)
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return Rotation(matrix=q)

    def register(self, x, y):
        x = as_vector(x, self.dimension)
        y = as_vector(y, self.dimension)
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0.0 or ny == 0.0:
            return RegistrationResult(Identity(), float(abs(nx - ny)), False, y.copy())
        g = Rotation.aligning(y / ny, x / nx)
        return RegistrationResult(g, float(abs(nx - ny)), True, ny * (x / nx))

    def register_batch(self, x, Y):
        x = as_vector(x, self.dimension)
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        nx = np.linalg.norm(x)
        ny = np.sqrt(np.einsum("ij,ij->i", Y, Y))
        if nx == 0.0:
            return BatchRegistration(None, Y.copy(), ny.copy(), np.zeros(len(Y), dtype=bool))
        registered = ny[:, None] * (x / nx)[None, :]
        return BatchRegistration(None, registered, np.abs(nx - ny), ny > 0)

    def sup_inner(self, v, E):
        v = as_vector(v, self.dimension)
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        return np.linalg.norm(v) * np.sqrt(np.einsum("ij,ij->i", E, E))

    def is_fixed_point(self, x):
        x = as_vector(x, self.dimension)
        return bool(np.all(x == 0.0))


class AffineTranslationAction(GroupAction):
    """Translation by vectors of a subspace V.  Invariant but not isometric."""

    kind = "affine_translation"
    isometric = False
    invariant = True
    linear = False

    def __init__(self, dimension: int, basis=None):
        super().__init__(dimension)
        if basis is None or len(basis) == 0:
            B = np.zeros((0, self.dimension))
        else:
            B = np.atleast_2d(np.asarray(basis, dtype=np.float64))
        if B.shape[1] != self.dimension:
            raise ContractViolation("subspace basis has the wrong dimension")
        if np.max(np.abs(B @ B.T - np.eye(len(B))), initial=0.0) > ORTHO_TOL:
            raise ContractViolation("subspace basis is not orthonormal")
        self.basis = B

    @property
    def subspace_basis(self):
        return self.basis

    def to_dict(self):
        d = super().to_dict()
        d["subspace_basis"] = self.basis.tolist()
        return d

    def project_v(self, x):
        return self.basis.T @ (self.basis @ x)

    def project_v_perp(self, x):
        return x - self.project_v(x)

    def _check_element(self, g):
        if isinstance(g, AffineTranslation):
            v = np.asarray(g.v)
            if v.shape != (self.dimension,):
                raise ContractViolation("translation has the wrong dimension")
            if np.max(np.abs(v - self.project_v(v))) > SUBSPACE_TOL:
                raise ContractViolation("translation vector is not in the subspace")
            return
        super()._check_element(g)

    def _compose(self, g2, g1):
        return AffineTranslation(g2.v + g1.v)

    def _inverse(self, g):
        return AffineTranslation(-g.v)

    def random_element(self, rng):
        return AffineTranslation(self.basis.T @ rng.standard_normal(len(self.basis)))

    def register(self, x, y):
        x = as_vector(x, self.dimension)
        y = as_vector(y, self.dimension)
        v = self.project_v(x - y)
        registered = y + v
        return RegistrationResult(AffineTranslation(v), float(np.linalg.norm(x - registered)),
                                  True, registered)

    def is_fixed_point(self, x):
        as_vector(x, self.dimension)
        return len(self.basis) == 0


class ConjugatedCyclicAction(FiniteAction):
    """Cyclic shift conjugated by a positive diagonal matrix D:
    ``k . x = D roll(D^-1 x, -k)``.  Linear, neither isometric nor invariant."""

    kind = "conjugated_cyclic"
    isometric = False
    invariant = False

    def __init__(self, diagonal):
        d = as_vector(diagonal)
        if np.any(d <= 0):
            raise ContractViolation("diagonal entries must be positive")
        super().__init__(d.size)
        self.diagonal = d
        self._table = _shift_index_table(self.dimension)

    def to_dict(self):
        d = super().to_dict()
        d["diagonal"] = self.diagonal.tolist()
        return d

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, low=0.9, high=1.1):
        return cls(rng.uniform(low, high, size=n))

    @property
    def order(self):
        return self.dimension

    def elements(self):
        return [CyclicShift(k) for k in range(self.dimension)]

    def element_index(self, g):
        self._check_element(g)
        return 0 if isinstance(g, Identity) else g.k

    def _check_element(self, g):
        if isinstance(g, CyclicShift) and 0 <= g.k < self.dimension:
            return
        super()._check_element(g)

    def _compose(self, g2, g1):
        return CyclicShift((g2.k + g1.k) % self.dimension)

    def _inverse(self, g):
        return CyclicShift((-g.k) % self.dimension)

    def apply(self, g, x):
        x = as_vector(x, self.dimension)
        self._check_element(g)
        k = 0 if isinstance(g, Identity) else g.k
        return self.diagonal * np.roll(x / self.diagonal, -k)

    def orbit_matrix(self, y):
        y = as_vector(y, self.dimension)
        return self.diagonal[None, :] * (y / self.diagonal)[self._table]

    def _adjoint(self, g, v):
        # g = D S_k D^-1, so g^T = D^-1 S_k^T D
        return np.roll(self.diagonal * v, g.k) / self.diagonal

    def is_fixed_point(self, x):
        x = as_vector(x, self.dimension)
        z = x / self.diagonal
        return bool(np.all(z == z[0]))


def register(x, y, action: GroupAction) -> RegistrationResult:
    """Element ``g*`` minimising ``||x - g.y||`` (exhaustive for finite groups)."""
    return action.register(x, y)


def register_fft(x, y, action: GroupAction) -> RegistrationResult:
    if not isinstance(action, CyclicShiftAction):
        raise UnsupportedAction("FFT registration is only defined for the cyclic shift action")
    return action.register_fft(x, y)


def is_fixed_point(x, action: GroupAction) -> bool:
    return action.is_fixed_point(x)


def orbit(x, action: GroupAction) -> list:
    return action.orbit(x)


def action_from_dict(d: dict) -> GroupAction:
    kind = d.get("kind")
    n = int(d.get("dimension", 0))
    if kind == "cyclic_shift":
        return CyclicShiftAction(n)
    if kind == "rotation":
        return RotationAction(n)
    if kind == "trivial":
        return TrivialAction(n)
    if kind == "affine_translation":
        return AffineTranslationAction(n, d.get("subspace_basis") or None)
    if kind == "conjugated_cyclic":
        action = ConjugatedCyclicAction(d["diagonal"])
        if action.dimension != n:
            raise ContractViolation("diagonal length does not match dimension")
        return action
    raise ContractViolation(f"unknown action kind {kind!r}")


def make_action(kind: str, n: int, basis: Sequence | None = None) -> GroupAction:
    return action_from_dict({"kind": kind, "dimension": n, "subspace_basis": basis})
