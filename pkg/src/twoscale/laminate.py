"""Optimal layered-material model for compliance-driven design.

For a fixed stress state, the stiffest arrangement of base material and
void at a given material budget is a nested two-direction layering aligned
with the stress eigenframe, and its effective moduli have closed forms in
the layer fractions.  This module evaluates those moduli, turns stress
fields into layered-material tensor fields (with the budget enforced
through a scalar multiplier), iterates the stress <-> material update to a
fixed point, and inverts the strain -> tensor relation pointwise with a
damped Newton method for use at quadrature points.
"""

import logging

import numpy as np

from .fem import QUAD_PTS, QUAD_WTS
from .tensor import (IsotropicMaterial, apply_entries, rotate_entries)

log = logging.getLogger(__name__)

# entries of the identity on symmetric matrices, used for regularization
_REG_ENTRIES = np.array([1.0, 1.0, 0.0, 0.5, 0.0, 0.0])

DEFAULT_REGULARIZATION_FACTOR = 1e-4


def regularization_for(material: IsotropicMaterial) -> float:
    return DEFAULT_REGULARIZATION_FACTOR * material.mu


def stress_eigen(sig_v):
    """Eigen decomposition of symmetric 2x2 stresses given as (s11, s22, s12).

    Returns (alpha, lam1, lam2) with |lam1| >= |lam2| and alpha the angle of
    the lam1 eigenvector, wrapped to [0, pi).  Hydrostatic states give
    alpha = 0; for pure shear the positive eigenvalue comes first.
    """
    sig_v = np.asarray(sig_v, dtype=float)
    s11, s22, s12 = sig_v[..., 0], sig_v[..., 1], sig_v[..., 2]
    mean = 0.5 * (s11 + s22)
    rad = np.hypot(0.5 * (s11 - s22), s12)
    hi, lo = mean + rad, mean - rad
    phi = 0.5 * np.arctan2(2.0 * s12, s11 - s22)
    take_hi = np.abs(hi) >= np.abs(lo)
    lam1 = np.where(take_hi, hi, lo)
    lam2 = np.where(take_hi, lo, hi)
    alpha = np.where(take_hi, phi, phi + 0.5 * np.pi)
    alpha = np.mod(alpha, np.pi)
    return alpha, lam1, lam2


def principal_stress_voigt(alpha, lam1, lam2):
    """Reassemble (s11, s22, s12) from the eigen decomposition."""
    c, s = np.cos(alpha), np.sin(alpha)
    s11 = lam1 * c * c + lam2 * s * s
    s22 = lam1 * s * s + lam2 * c * c
    s12 = (lam1 - lam2) * c * s
    return np.stack([s11, s22, s12], axis=-1)


def layer_params(lam1, lam2, multiplier, material: IsotropicMaterial):
    """Fraction split m and total material fraction theta for a stress state.

    The budget multiplier scales theta ~ (|lam1| + |lam2|) / sqrt(multiplier),
    capped at 1.  Zero stress gives (m, theta) = (0, 0).
    """
    a1, a2 = np.abs(lam1), np.abs(lam2)
    total = a1 + a2
    kap, mu = material.kappa, material.mu
    safe = np.where(total > 0.0, total, 1.0)
    m = np.where(total > 0.0, a2 / safe, 0.0)
    factor = np.sqrt((kap + mu) / (4.0 * mu * kap * multiplier))
    theta = np.minimum(1.0, total * factor)
    return m, theta


def layer_entries(m, theta, material: IsotropicMaterial):
    """Closed-form moduli of the nested layering in its own frame, (..., 6).

    Entry order (C1111, C2222, C1122, C1212, C1112, C2212); the off-diagonal
    shear moduli vanish by orthotropy and C1212 is zero before
    regularization.  The m -> 0, theta -> 1 corner degenerates to a single
    layer direction and is handled by its own limit branch.
    """
    m, theta = np.broadcast_arrays(np.asarray(m, dtype=float),
                                   np.asarray(theta, dtype=float))
    kap, mu, lam = material.kappa, material.mu, material.lam
    denom = 4.0 * kap * mu * m * (1.0 - m) * theta ** 2 \
        + (kap + mu) ** 2 * (1.0 - theta)
    generic = denom > 1e-12 * (kap + mu) ** 2
    safe = np.where(generic, denom, 1.0)
    c1111 = 4.0 * kap * mu * (kap + mu) * theta \
        * (1.0 - theta * (1.0 - m)) * (1.0 - m) / safe
    c2222 = 4.0 * kap * mu * (kap + mu) * theta * (1.0 - theta * m) * m / safe
    c1122 = 4.0 * kap * mu * lam * theta ** 2 * m * (1.0 - m) / safe
    single = 4.0 * kap * mu * theta / (kap + mu)
    out = np.zeros(m.shape + (6,))
    out[..., 0] = np.where(generic, c1111, single)
    out[..., 1] = np.where(generic, c2222, 0.0)
    out[..., 2] = np.where(generic, c1122, 0.0)
    return out


def layer_tensor_entries(alpha, m, theta, material: IsotropicMaterial,
                         regularization: float | None = None):
    """Rotated, regularized layered-material entries, batched over points."""
    if regularization is None:
        regularization = regularization_for(material)
    base = layer_entries(m, theta, material)
    base = base + regularization * _REG_ENTRIES
    return rotate_entries(base, alpha)


def tensor_from_stress(sig_v, multiplier, material: IsotropicMaterial,
                       regularization: float | None = None):
    """Stress states (..., 3) -> layered-material entries (..., 6)."""
    alpha, lam1, lam2 = stress_eigen(sig_v)
    m, theta = layer_params(lam1, lam2, multiplier, material)
    return layer_tensor_entries(alpha, m, theta, material, regularization)


def volume_multiplier(lam1, lam2, areas, target_volume,
                      material: IsotropicMaterial,
                      initial: float = 1.0, rel_tol: float = 1e-6) -> float:
    """Budget multiplier making the fraction field integrate to the target.

    The integrated fraction decreases monotonically in the multiplier;
    bracket by geometric expansion, then bisect to relative tolerance.
    Raises when the target is unreachable (stress vanishes on too much of
    the domain), reporting the achievable volume.
    """
    areas = np.asarray(areas, dtype=float)
    kap, mu = material.kappa, material.mu
    strength = (np.abs(lam1) + np.abs(lam2)) * np.sqrt((kap + mu) / (4.0 * mu * kap))

    def volume(mult):
        return float(np.minimum(1.0, strength / np.sqrt(mult)) @ areas)

    reachable = float(areas[strength > 0.0].sum())
    if reachable < target_volume * (1.0 - rel_tol):
        raise ValueError(
            "volume target %.6g unreachable: stress vanishes outside volume %.6g"
            % (target_volume, reachable))

    lo = hi = max(initial, 1e-300)
    for _ in range(400):
        if volume(lo) >= target_volume:
            break
        lo /= 16.0
    for _ in range(400):
        if volume(hi) <= target_volume:
            break
        hi *= 16.0
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if volume(mid) >= target_volume:
            lo = mid
        else:
            hi = mid
        if abs(volume(mid) - target_volume) <= rel_tol * target_volume:
            return float(mid)
    return float(np.sqrt(lo * hi))


def alternating_optimize(problem, c_entries, u=None, rounds: int = 50,
                         volume_fraction: float | None = None,
                         regularization: float | None = None,
                         multiplier: float = 1.0):
    """Alternate stress evaluation and layered-material update on a mesh.

    Starting from a tensor field (and optionally its displacement field),
    each round averages the element stress over the quadrature rule (the L2
    projection onto element constants; pointwise center sampling makes the
    iteration oscillate), rebuilds the layered material at the
    budget-matching multiplier, and re-solves.  Returns
    (entries, displacement, multiplier, compliance history).
    """
    scenario = problem.scenario
    material = scenario.material
    if volume_fraction is None:
        volume_fraction = scenario.theta
    target = volume_fraction * scenario.area()
    areas = problem.sizes ** 2

    c_entries = np.asarray(c_entries, dtype=float)
    if u is None:
        u = problem.solve(c_entries)
    history = [u.compliance]
    for _ in range(rounds):
        eps = u.strains_at(QUAD_PTS)
        sig_q = apply_entries(c_entries[:, None, :], eps)
        sig = np.einsum("q,eqab->eab", QUAD_WTS, sig_q) / 4.0
        sig_v = np.stack([sig[..., 0, 0], sig[..., 1, 1], sig[..., 0, 1]],
                         axis=-1)
        alpha, lam1, lam2 = stress_eigen(sig_v)
        multiplier = volume_multiplier(lam1, lam2, areas, target, material,
                                       initial=multiplier)
        m, theta = layer_params(lam1, lam2, multiplier, material)
        c_entries = layer_tensor_entries(alpha, m, theta, material,
                                         regularization)
        u = problem.solve(c_entries)
        history.append(u.compliance)
    return c_entries, u, multiplier, np.array(history)


def newton_invert(strains, multiplier, material: IsotropicMaterial,
                  regularization: float | None = None,
                  init_entries=None, tol_factor: float = 1e-9,
                  max_iter: int = 100, fd_step: float = 1e-6):
    """Pointwise inversion of the strain -> layered-material relation.

    For each strain (given as symmetric (..., 2, 2) matrices) find
    (alpha, lam1, lam2) such that the layered tensor built from that stress
    state maps the strain back onto the stress.  Damped Newton with a
    central-difference Jacobian, vectorized over points with an active-set
    mask.  Returns (entries, alpha, lam1, lam2, converged); entries of
    non-converged points fall back to init_entries (or the base material).
    """
    if regularization is None:
        regularization = regularization_for(material)
    strains = np.asarray(strains, dtype=float)
    shape = strains.shape[:-2]
    eps = strains.reshape(-1, 2, 2)
    n = eps.shape[0]
    eps_v = np.stack([eps[:, 0, 0], eps[:, 1, 1], eps[:, 0, 1]], axis=-1)

    if init_entries is None:
        init = np.broadcast_to(material.tensor().entries, (n, 6))
    else:
        init = np.asarray(init_entries, dtype=float).reshape(-1, 6)
        if init.shape[0] == 1:
            init = np.broadcast_to(init, (n, 6))

    def residual(x, eps_sub):
        alpha, lam1, lam2 = x[:, 0], x[:, 1], x[:, 2]
        m, theta = layer_params(lam1, lam2, multiplier, material)
        entries = layer_tensor_entries(alpha, m, theta, material,
                                       regularization)
        sig = apply_entries(entries, eps_sub)
        sig_v = np.stack([sig[:, 0, 0], sig[:, 1, 1], sig[:, 0, 1]], axis=-1)
        return sig_v - principal_stress_voigt(alpha, lam1, lam2)

    def fnorm(r):
        # Frobenius norm of the symmetric residual matrix
        return np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2 + 2.0 * r[:, 2] ** 2)

    sig0 = apply_entries(init, eps)
    sig0_v = np.stack([sig0[:, 0, 0], sig0[:, 1, 1], sig0[:, 0, 1]], axis=-1)
    a0, l10, l20 = stress_eigen(sig0_v)
    x = np.stack([a0, l10, l20], axis=-1)

    eps_norm = np.sqrt(eps_v[:, 0] ** 2 + eps_v[:, 1] ** 2 + 2.0 * eps_v[:, 2] ** 2)
    tol = tol_factor * eps_norm * material.scale()

    f = residual(x, eps)
    fn = fnorm(f)
    converged = fn <= tol
    failed = np.zeros(n, dtype=bool)

    for _ in range(max_iter):
        active = ~(converged | failed)
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, ea, fa = x[idx], eps[idx], f[idx]
        jac = np.empty((len(idx), 3, 3))
        for j in range(3):
            dx = np.zeros(3)
            dx[j] = fd_step
            jac[:, :, j] = (residual(xa + dx, ea) - residual(xa - dx, ea)) \
                / (2.0 * fd_step)
        ok = np.abs(np.linalg.det(jac)) > 1e-300
        step = np.zeros_like(xa)
        if ok.any():
            step[ok] = np.linalg.solve(jac[ok], fa[ok][..., None])[..., 0]
        failed[idx[~ok]] = True

        # per-point damping: halve until the residual norm drops
        t = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        fn_old = fn[idx]
        x_new = xa.copy()
        f_new = fa.copy()
        for _halve in range(25):
            trying = ok & ~accepted
            if not trying.any():
                break
            trial = xa[trying] - t[trying, None] * step[trying]
            r_trial = residual(trial, ea[trying])
            better = fnorm(r_trial) < fn_old[trying]
            sub = np.flatnonzero(trying)
            good = sub[better]
            x_new[good] = trial[better]
            f_new[good] = r_trial[better]
            accepted[good] = True
            t[sub[~better]] *= 0.5
        failed[idx[ok & ~accepted]] = True

        moved = idx[accepted]
        x[moved] = x_new[accepted]
        f[moved] = f_new[accepted]
        fn[moved] = fnorm(f_new[accepted])
        converged[moved] = fn[moved] <= tol[moved]
    failed |= ~(converged | failed)

    m, theta = layer_params(x[:, 1], x[:, 2], multiplier, material)
    entries = layer_tensor_entries(x[:, 0], m, theta, material, regularization)
    if failed.any():
        entries[failed] = init[failed]
        log.debug("newton_invert: %d of %d points fell back", failed.sum(), n)
    alpha = np.mod(x[:, 0], np.pi)
    return (entries.reshape(shape + (6,)), alpha.reshape(shape),
            x[:, 1].reshape(shape), x[:, 2].reshape(shape),
            converged.reshape(shape))
