"""Plane linearized-elasticity tensors with minor and major symmetries.

A fourth-order tensor C_ijkl on R^2 with the usual symmetries has six
independent entries.  They are stored in the fixed order

    (C1111, C2222, C1122, C1212, C1112, C2212)

and all field-level operations (rotation, contraction, Voigt conversion)
are also provided in vectorized form on arrays of shape (n, 6).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# order of the six stored entries, as (i, j, k, l) index tuples
ENTRY_INDICES = (
    (0, 0, 0, 0),
    (1, 1, 1, 1),
    (0, 0, 1, 1),
    (0, 1, 0, 1),
    (0, 0, 0, 1),
    (1, 1, 0, 1),
)

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class IsotropicMaterial:
    """Lame parameters of an isotropic constituent."""

    lam: float
    mu: float

    @property
    def kappa(self) -> float:
        # 2D "bulk-like" combination that shows up in the laminate formulas
        return self.lam + self.mu

    def tensor(self) -> "ElasticTensor2D":
        return ElasticTensor2D.isotropic(self.lam, self.mu)

    def scale(self) -> float:
        """Frobenius norm of the tensor, used as a reference magnitude."""
        return float(np.linalg.norm(self.tensor().mandel()))


def rotation_matrix(alpha: float) -> np.ndarray:
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s], [s, c]])


def entries_to_full(entries: np.ndarray) -> np.ndarray:
    """(..., 6) entry arrays -> full (..., 2, 2, 2, 2) tensors."""
    entries = np.asarray(entries, dtype=float)
    full = np.zeros(entries.shape[:-1] + (2, 2, 2, 2))
    c1111, c2222, c1122, c1212, c1112, c2212 = np.moveaxis(entries, -1, 0)
    full[..., 0, 0, 0, 0] = c1111
    full[..., 1, 1, 1, 1] = c2222
    full[..., 0, 0, 1, 1] = full[..., 1, 1, 0, 0] = c1122
    for i, j, k, l in ((0, 1, 0, 1), (0, 1, 1, 0), (1, 0, 0, 1), (1, 0, 1, 0)):
        full[..., i, j, k, l] = c1212
    for i, j, k, l in ((0, 0, 0, 1), (0, 0, 1, 0), (0, 1, 0, 0), (1, 0, 0, 0)):
        full[..., i, j, k, l] = c1112
    for i, j, k, l in ((1, 1, 0, 1), (1, 1, 1, 0), (0, 1, 1, 1), (1, 0, 1, 1)):
        full[..., i, j, k, l] = c2212
    return full


def full_to_entries(full: np.ndarray) -> np.ndarray:
    full = np.asarray(full, dtype=float)
    out = np.empty(full.shape[:-4] + (6,))
    for m, (i, j, k, l) in enumerate(ENTRY_INDICES):
        out[..., m] = full[..., i, j, k, l]
    return out


def rotate_entries(entries: np.ndarray, alpha) -> np.ndarray:
    """Rotate tensors by angle(s) alpha: C'_mnop = Q_mi Q_nj Q_ok Q_pl C_ijkl."""
    entries = np.asarray(entries, dtype=float)
    squeeze = entries.ndim == 1
    entries = np.atleast_2d(entries)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), entries.shape[:-1])
    c, s = np.cos(alpha), np.sin(alpha)
    q = np.empty(alpha.shape + (2, 2))
    q[..., 0, 0] = c
    q[..., 0, 1] = -s
    q[..., 1, 0] = s
    q[..., 1, 1] = c
    full = entries_to_full(entries)
    rot = np.einsum("...mi,...nj,...ok,...pl,...ijkl->...mnop", q, q, q, q, full)
    out = full_to_entries(rot)
    return out[0] if squeeze else out


def rotation_derivative_entries(entries: np.ndarray, alpha) -> np.ndarray:
    """d/dalpha of rotate_entries, by the product rule over the four slots."""
    entries = np.asarray(entries, dtype=float)
    squeeze = entries.ndim == 1
    entries = np.atleast_2d(entries)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), entries.shape[:-1])
    c, s = np.cos(alpha), np.sin(alpha)
    q = np.empty(alpha.shape + (2, 2))
    q[..., 0, 0] = c
    q[..., 0, 1] = -s
    q[..., 1, 0] = s
    q[..., 1, 1] = c
    dq = np.empty_like(q)
    dq[..., 0, 0] = -s
    dq[..., 0, 1] = -c
    dq[..., 1, 0] = c
    dq[..., 1, 1] = -s
    full = entries_to_full(entries)
    acc = np.einsum("...mi,...nj,...ok,...pl,...ijkl->...mnop", dq, q, q, q, full)
    acc += np.einsum("...mi,...nj,...ok,...pl,...ijkl->...mnop", q, dq, q, q, full)
    acc += np.einsum("...mi,...nj,...ok,...pl,...ijkl->...mnop", q, q, dq, q, full)
    acc += np.einsum("...mi,...nj,...ok,...pl,...ijkl->...mnop", q, q, q, dq, full)
    out = full_to_entries(acc)
    return out[0] if squeeze else out


def entries_to_voigt(entries: np.ndarray) -> np.ndarray:
    """(..., 6) -> (..., 3, 3) matrices acting on (e11, e22, 2 e12)."""
    entries = np.asarray(entries, dtype=float)
    c1111, c2222, c1122, c1212, c1112, c2212 = np.moveaxis(entries, -1, 0)
    d = np.empty(entries.shape[:-1] + (3, 3))
    d[..., 0, 0] = c1111
    d[..., 0, 1] = d[..., 1, 0] = c1122
    d[..., 0, 2] = d[..., 2, 0] = c1112
    d[..., 1, 1] = c2222
    d[..., 1, 2] = d[..., 2, 1] = c2212
    d[..., 2, 2] = c1212
    return d


def entries_to_mandel(entries: np.ndarray) -> np.ndarray:
    """Matrix of the quadratic form on symmetric matrices, basis
    (e11, e22, sqrt2*e12); eigenvalues equal the operator eigenvalues."""
    entries = np.asarray(entries, dtype=float)
    c1111, c2222, c1122, c1212, c1112, c2212 = np.moveaxis(entries, -1, 0)
    m = np.empty(entries.shape[:-1] + (3, 3))
    m[..., 0, 0] = c1111
    m[..., 0, 1] = m[..., 1, 0] = c1122
    m[..., 0, 2] = m[..., 2, 0] = _SQRT2 * c1112
    m[..., 1, 1] = c2222
    m[..., 1, 2] = m[..., 2, 1] = _SQRT2 * c2212
    m[..., 2, 2] = 2.0 * c1212
    return m


def contract_entries(entries: np.ndarray, eps: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """C eps : eta for batches; eps, eta as (..., 2, 2) symmetric matrices."""
    d = entries_to_voigt(entries)
    ev = np.stack([eps[..., 0, 0], eps[..., 1, 1], 2.0 * eps[..., 0, 1]], axis=-1)
    nv = np.stack([eta[..., 0, 0], eta[..., 1, 1], 2.0 * eta[..., 0, 1]], axis=-1)
    return np.einsum("...i,...ij,...j->...", ev, d, nv)


def apply_entries(entries: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """sigma = C eps for batches of symmetric (..., 2, 2) strains."""
    d = entries_to_voigt(entries)
    ev = np.stack([eps[..., 0, 0], eps[..., 1, 1], 2.0 * eps[..., 0, 1]], axis=-1)
    sv = np.einsum("...ij,...j->...i", d, ev)
    sig = np.empty_like(eps)
    sig[..., 0, 0] = sv[..., 0]
    sig[..., 1, 1] = sv[..., 1]
    sig[..., 0, 1] = sig[..., 1, 0] = sv[..., 2]
    return sig


class ElasticTensor2D:
    """A single plane elasticity tensor with minor/major symmetries."""

    __slots__ = ("entries",)

    def __init__(self, entries):
        e = np.asarray(entries, dtype=float)
        if e.shape != (6,):
            raise ValueError(f"expected 6 entries, got shape {e.shape}")
        self.entries = e

    @classmethod
    def isotropic(cls, lam: float, mu: float) -> "ElasticTensor2D":
        return cls([lam + 2 * mu, lam + 2 * mu, lam, mu, 0.0, 0.0])

    @classmethod
    def identity_sym(cls) -> "ElasticTensor2D":
        """Identity on symmetric matrices (C eps = eps)."""
        return cls([1.0, 1.0, 0.0, 0.5, 0.0, 0.0])

    @classmethod
    def from_full(cls, full: np.ndarray, check: bool = True, tol: float = 1e-10) -> "ElasticTensor2D":
        full = np.asarray(full, dtype=float)
        if check:
            sym1 = np.einsum("ijkl->jikl", full)
            sym2 = np.einsum("ijkl->klij", full)
            scale = np.abs(full).max() + 1e-300
            if np.abs(full - sym1).max() > tol * scale or np.abs(full - sym2).max() > tol * scale:
                raise ValueError("tensor lacks minor/major symmetry")
        return cls(full_to_entries(full))

    # --- conversions -----------------------------------------------------
    def full(self) -> np.ndarray:
        return entries_to_full(self.entries)

    def voigt(self) -> np.ndarray:
        return entries_to_voigt(self.entries)

    def mandel(self) -> np.ndarray:
        return entries_to_mandel(self.entries)

    # --- algebra ---------------------------------------------------------
    def __add__(self, other: "ElasticTensor2D") -> "ElasticTensor2D":
        return ElasticTensor2D(self.entries + other.entries)

    def __sub__(self, other: "ElasticTensor2D") -> "ElasticTensor2D":
        return ElasticTensor2D(self.entries - other.entries)

    def __mul__(self, factor: float) -> "ElasticTensor2D":
        return ElasticTensor2D(self.entries * float(factor))

    __rmul__ = __mul__

    def apply(self, eps: np.ndarray) -> np.ndarray:
        return apply_entries(self.entries, np.asarray(eps, dtype=float))

    def contract(self, eps: np.ndarray, eta: np.ndarray | None = None) -> float:
        eps = np.asarray(eps, dtype=float)
        eta = eps if eta is None else np.asarray(eta, dtype=float)
        return float(contract_entries(self.entries, eps, eta))

    def rotate(self, alpha: float) -> "ElasticTensor2D":
        return ElasticTensor2D(rotate_entries(self.entries, alpha))

    def rotation_derivative(self, alpha: float) -> "ElasticTensor2D":
        return ElasticTensor2D(rotation_derivative_entries(self.entries, alpha))

    # --- diagnostics -----------------------------------------------------
    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.mandel())[0])

    def is_positive_definite(self, tol: float = 0.0) -> bool:
        return self.smallest_eigenvalue() > tol

    def __repr__(self) -> str:
        c = self.entries
        return (
            f"ElasticTensor2D(C1111={c[0]:.6g}, C2222={c[1]:.6g}, C1122={c[2]:.6g}, "
            f"C1212={c[3]:.6g}, C1112={c[4]:.6g}, C2212={c[5]:.6g})"
        )


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Plane von Mises equivalent of (..., 2, 2) stress matrices."""
    s11 = sigma[..., 0, 0]
    s22 = sigma[..., 1, 1]
    s12 = sigma[..., 0, 1]
    return np.sqrt(np.maximum(s11 * s11 - s11 * s22 + s22 * s22 + 3.0 * s12 * s12, 0.0))
