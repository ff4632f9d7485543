"""Independent reference solutions used to cross-check the closed-form channel model.

Nothing here imports the series solution in :mod:`mnpcomm.analytic`; these are
separate routes to the same answers.
"""

import numpy as np
from scipy.linalg import solve_banded


def neumann_cosine_pdf(z, t, height, diffusion, z0):
    """Drift-free diffusion between two reflecting walls (cosine series).

    p(z, t) = 1/h + (2/h) sum_n cos(n pi z / h) cos(n pi z0 / h) exp(-D (n pi / h)^2 t)
    """
    z = np.asarray(z, dtype=float)
    decay = diffusion * (np.pi / height) ** 2 * t
    # terms below exp(-40) cannot move a double
    n_max = max(int(np.ceil(np.sqrt(40.0 / decay))) + 1, 2)
    n = np.arange(1, n_max + 1)
    k = n * np.pi / height
    weights = np.exp(-decay * n**2) * np.cos(k * z0)
    series = np.cos(np.multiply.outer(z, k)) @ weights
    return 1.0 / height + 2.0 / height * series


def crank_nicolson_pdf(
    z, times, height, diffusion, drift, z0, n_nodes=2001, dt_max=1e-3, dt_first=1e-7
):
    """Finite-volume Crank-Nicolson solution of the drift-diffusion equation.

    Solves dp/dt = v dp/dz + D d2p/dz2 on [0, h] with zero total flux
    (D dp/dz + v p = 0) at both walls and a point release at ``z0``. The grid is
    vertex-centred so a release at a wall sits exactly on a node. The first
    steps use implicit Euler (Rannacher start) to damp the delta initial
    condition; the step then grows geometrically up to ``dt_max``.

    Returns an array of shape ``(len(times), len(z))`` obtained by linear
    interpolation of nodal densities.
    """
    z = np.asarray(z, dtype=float)
    times = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
    nodes = np.linspace(0.0, height, n_nodes)
    dz = nodes[1] - nodes[0]
    width = np.full(n_nodes, dz)
    width[0] = width[-1] = dz / 2

    # face flux J = -D (p_{j+1} - p_j)/dz - v (p_j + p_{j+1})/2, v toward z=0
    c_lo = diffusion / dz - drift / 2  # coefficient of p_j in -J
    c_hi = diffusion / dz + drift / 2  # coefficient of p_{j+1} in -J
    # dp_j/dt * w_j = J_{j-1/2} - J_{j+1/2}
    diag = np.zeros(n_nodes)
    upper = np.zeros(n_nodes)  # A[j, j+1]
    lower = np.zeros(n_nodes)  # A[j, j-1]
    diag[:-1] -= c_lo
    upper[:-1] += c_hi
    diag[1:] -= c_hi
    lower[1:] += c_lo
    diag /= width
    upper /= width
    lower /= width

    def banded(scale):
        ab = np.zeros((3, n_nodes))
        ab[0, 1:] = -scale * upper[:-1]
        ab[1] = 1.0 - scale * diag
        ab[2, :-1] = -scale * lower[1:]
        return ab

    def apply(p, scale):
        out = p + scale * diag * p
        out[:-1] += scale * upper[:-1] * p[1:]
        out[1:] += scale * lower[1:] * p[:-1]
        return out

    p = np.zeros(n_nodes)
    k0 = int(round(z0 / dz))
    p[k0] = 1.0 / width[k0]

    result = np.empty((len(times), len(z)))
    t = 0.0
    dt = dt_first
    n_euler = 4
    step = 0
    cache = {}
    for i, target in enumerate(times):
        while t < target - 1e-15:
            h_step = min(dt, target - t)
            if step < n_euler:
                p = solve_banded((1, 1), banded(h_step), p)
            else:
                key = h_step
                if key not in cache:
                    cache = {key: banded(h_step / 2)}
                p = solve_banded((1, 1), cache[key], apply(p, h_step / 2))
            t += h_step
            step += 1
            dt = min(dt * 1.05, dt_max)
        result[i] = np.interp(z, nodes, p)
    return result
