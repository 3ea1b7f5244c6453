"""Third-order WENO interpolation and interface reconstruction on uniform grids.

Interpolation at a point inside ``[x_j, x_{j+1}]`` blends the two quadratics
through ``{x_{j-1}, x_j, x_{j+1}}`` and ``{x_j, x_{j+1}, x_{j+2}}``.  The
linear weights make the blend the cubic through all four nodes; the
nonlinear weights shrink the contribution of a candidate whose stencil
crosses a discontinuity.  In the first and last interval there is no
four-point stencil and plain linear interpolation is used instead.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .exceptions import ValidationError

__all__ = ["InterpolationPlan", "weno_interpolate", "weno_interface_values"]

WENO_EPS = 1e-6


class InterpolationPlan:
    """Precomputed stencil positions for repeated interpolation at fixed points.

    Parameters
    ----------
    n_intervals : int
        Number of grid intervals ``L``; nodes are ``l / L``.
    points : array_like
        Query points in [0, 1], any shape.
    method : {"weno", "linear"}
    """

    def __init__(self, n_intervals: int, points, method: str = "weno"):
        if method not in ("weno", "linear"):
            raise ValidationError(f"unknown interpolation method {method!r}")
        pts = np.asarray(points, dtype=np.float64)
        if np.any(pts < 0) or np.any(pts > 1) or not np.all(np.isfinite(pts)):
            raise ValidationError("query points must lie in [0, 1]")
        L = int(n_intervals)
        if L < 3 and method == "weno":
            method = "linear"
        self.shape = pts.shape
        self.n_intervals = L
        self.method = method
        pos = pts.ravel() * L
        j = np.clip(np.floor(pos).astype(np.int64), 0, L - 1)
        s = pos - j
        self.j = j
        self.s = s
        edge = (j == 0) | (j == L - 1) if method == "weno" else np.ones_like(j, dtype=bool)
        self.edge = np.nonzero(edge)[0]
        self.inner = np.nonzero(~edge)[0]
        si = s[self.inner]
        self.cl = (2.0 - si) / 3.0
        self.cr = (1.0 + si) / 3.0
        self.si = si
        self.si2 = si * si
        ji = j[self.inner]
        self.stencil = np.stack([ji - 1, ji, ji + 1, ji + 2])
        self.flat_row = None

    def __call__(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Interpolate ``values`` sampled at the nodes.

        ``values`` has shape ``(..., L+1)``.  If the plan's points have shape
        ``(..., P)`` with the same leading shape, each row is interpolated at
        its own points (row-wise mode); a 1-D plan is applied to every row.
        """
        f = np.asarray(values, dtype=np.float64)
        if f.shape[-1] != self.n_intervals + 1:
            raise ValidationError("values do not match the grid")
        if len(self.shape) >= 2:
            rows = f.reshape(-1, f.shape[-1])
            if rows.shape[0] != int(np.prod(self.shape[:-1])):
                raise ValidationError("row count does not match the plan")
            if self.flat_row is None:
                self.flat_row = np.repeat(np.arange(rows.shape[0]), self.shape[-1])
            flat = rows.ravel()
            offset = self.flat_row * rows.shape[1]
            out = self._eval(flat, offset)
            return out.reshape(self.shape)
        rows = f.reshape(-1, f.shape[-1])
        out = np.stack([self._eval(r, 0) for r in rows])
        return out.reshape(f.shape[:-1] + self.shape)

    def _eval(self, flat, offset):
        out = np.empty(self.j.shape[0])
        off_e = offset if np.isscalar(offset) else offset[self.edge]
        je = self.j[self.edge] + off_e
        se = self.s[self.edge]
        out[self.edge] = (1.0 - se) * flat[je] + se * flat[je + 1]
        if self.inner.size:
            off_i = offset if np.isscalar(offset) else offset[self.inner]
            st = self.stencil + off_i
            fm, f0, f1, f2 = flat[st[0]], flat[st[1]], flat[st[2]], flat[st[3]]
            bl = 0.5 * (f1 - 2.0 * f0 + fm)
            al = 0.5 * (f1 - fm)
            br = 0.5 * (f2 - 2.0 * f1 + f0)
            ar = (f1 - f0) - br
            isl = al * al + 2.0 * al * bl + (16.0 / 3.0) * bl * bl
            isr = ar * ar + 2.0 * ar * br + (16.0 / 3.0) * br * br
            wl = self.cl / (WENO_EPS + isl) ** 2
            wr = self.cr / (WENO_EPS + isr) ** 2
            pl = f0 + al * self.si + bl * self.si2
            pr = f0 + ar * self.si + br * self.si2
            out[self.inner] = (wl * pl + wr * pr) / (wl + wr)
        return out


def weno_interpolate(values, query_point, method: str = "weno"):
    """Interpolate node samples on a uniform grid of [0, 1] at ``query_point``."""
    values = np.asarray(values, dtype=np.float64)
    plan = InterpolationPlan(values.shape[-1] - 1, query_point, method=method)
    out = plan(values)
    return float(out) if np.ndim(out) == 0 else out


def weno_interface_values(p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Upwind-biased WENO3 values at interfaces ``l + 1/2`` for leftward transport.

    ``p`` holds cell averages along the last axis (cells ``0..L``).  Entry
    ``l`` of the result (``1 <= l <= L-2``) reconstructs the value at the
    left face of cell ``l+1`` from cells ``l, l+1, l+2``; the remaining
    entries are the first-order upwind value ``p[l+1]``.  The result has
    ``L`` entries, one per interior interface.

    Reconstructed values are clipped to ``[0, 2 p[l+1]]`` so that an explicit
    step within the stability bound cannot drain a cell below zero; for
    non-negative smooth data the clip is inactive.
    """
    p = np.asarray(p, dtype=np.float64)
    up = p[..., 1:].copy()
    L = p.shape[-1] - 1
    if L >= 3:
        pl = p[..., 1 : L - 1]
        pc = p[..., 2:L]
        pr = p[..., 3 : L + 1]
        q_central = 0.5 * (pl + pc)
        q_upwind = 1.5 * pc - 0.5 * pr
        b_central = (pc - pl) ** 2
        b_upwind = (pr - pc) ** 2
        w_c = (2.0 / 3.0) / (WENO_EPS + b_central) ** 2
        w_u = (1.0 / 3.0) / (WENO_EPS + b_upwind) ** 2
        v = (w_c * q_central + w_u * q_upwind) / (w_c + w_u)
        up[..., 1 : L - 1] = np.clip(v, 0.0, 2.0 * pc)
    return up
