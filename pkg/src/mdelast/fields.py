"""Coefficient vectors over the mixed-dimensional spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mdelast.elements import SpaceSet, bdm_eval, seg_shape

_ROLES = ("stress", "displacement", "rotation", "potential")


@dataclass
class MixedField:
    """One global coefficient vector tagged with its role.

    Stress coefficients live in the (possibly constrained) stress space;
    removed DOFs simply do not exist.  Evaluation helpers return bulk tensors
    with ambient rows and segment stresses in the local (tangent, normal)
    frame.
    """

    role: str
    coeffs: np.ndarray
    spaces: SpaceSet

    def __post_init__(self):
        expected = {
            "stress": self.spaces.n_sigma,
            "displacement": self.spaces.n_u,
            "rotation": self.spaces.n_r,
            "potential": self.spaces.n_w,
        }
        if self.role not in _ROLES:
            raise ValueError(f"unknown field role {self.role!r}")
        if len(self.coeffs) != expected[self.role]:
            raise ValueError(
                f"{self.role} field needs {expected[self.role]} coefficients, "
                f"got {len(self.coeffs)}"
            )
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    def copy(self) -> "MixedField":
        return MixedField(self.role, self.coeffs.copy(), self.spaces)

    # -- stress evaluation --------------------------------------------------

    def _local_sigma(self, dofmap: np.ndarray) -> np.ndarray:
        out = np.zeros(dofmap.shape)
        mask = dofmap >= 0
        out[mask] = self.coeffs[dofmap[mask]]
        return out

    def stress_bulk(self, mid: int, tl: int, pts: np.ndarray) -> np.ndarray:
        """Bulk stress tensors at points of one triangle: (npts, 2, 2)."""
        assert self.role == "stress"
        bd = self.spaces.bulk[mid]
        phi = bdm_eval(bd, tl, pts)  # (q, 6, 2)
        vals = np.zeros((len(pts), 2, 2))
        for r in range(2):
            c6 = np.zeros(6)
            for le in range(3):
                ei = bd.tri_edges[tl, le]
                for m in range(2):
                    dof = bd.sigma_dof[ei, r, m]
                    if dof >= 0:
                        c6[2 * le + m] = self.coeffs[dof]
            vals[:, r, :] = np.einsum("qdc,d->qc", phi, c6)
        return vals

    def stress_seg(self, mid: int, cell_local: int, xi: np.ndarray) -> np.ndarray:
        """Segment stress local components per cell parameter: (nxi, 2)."""
        assert self.role == "stress"
        sd = self.spaces.seg[mid]
        nl = sd.cell_nodes[cell_local]
        shp = seg_shape(self.spaces.family, xi)  # (nxi, nn)
        vals = self._local_sigma(sd.sigma_dof[nl])  # (nn, 2)
        return shp @ vals

    def trace(self, j: int, xi: np.ndarray) -> np.ndarray:
        """Interface traction vectors n . sigma-hat: (ncell, nxi, 2) ambient.

        ``xi`` parametrizes each facet in the order of the lower manifold
        cells.
        """
        assert self.role == "stress"
        spaces = self.spaces
        tr = spaces.mesh.trace[j]
        itf = spaces.geometry.interface(j)
        if tr["kind"] == "side":
            bd = spaces.bulk[itf.upper]
            tl_of = {int(g): k for k, g in enumerate(bd.tri_gidx)}
            ncell = len(tr["tri"])
            out = np.zeros((ncell, len(xi), 2))
            for p in range(ncell):
                tl = tl_of[int(tr["tri"][p])]
                ei = bd.tri_edges[tl, int(tr["local_edge"][p])]
                sgn = tr["nsign"][p]
                ell = (1.0 - xi) - 0.5 if tr["flip"][p] else xi - 0.5
                for r in range(2):
                    n1 = bd.sigma_dof[ei, r, 0]
                    n2 = bd.sigma_dof[ei, r, 1]
                    v = np.zeros(len(xi))
                    if n1 >= 0:
                        v += self.coeffs[n1]
                    if n2 >= 0:
                        v += self.coeffs[n2] * ell
                    out[p, :, r] = sgn * v
            return out
        sd = spaces.seg[itf.upper]
        node = 0 if tr["tsign"] < 0 else len(sd.cells)
        local = self._local_sigma(sd.sigma_dof[node])
        amb = sd.frame.T @ local * tr["tsign"]
        return amb[None, None, :] * np.ones((1, len(xi), 1))

    # -- displacement evaluation ---------------------------------------------

    def u_bulk(self, mid: int) -> np.ndarray:
        """Per-triangle constant displacement vectors: (nt, 2)."""
        assert self.role == "displacement"
        bd = self.spaces.bulk[mid]
        return self.coeffs[bd.u_dof - self.spaces.offset_u]

    def u_seg(self, mid: int, cell_local: int, xi: np.ndarray) -> np.ndarray:
        """Segment displacement (ambient) at cell parameters: (nxi, 2)."""
        assert self.role == "displacement"
        sd = self.spaces.seg[mid]
        dof = sd.u_dof[cell_local] - self.spaces.offset_u
        vals = self.coeffs[dof]  # (2, nprof)
        out = np.outer(np.ones_like(xi), vals[:, 0])
        if vals.shape[1] == 2:
            out = out + np.outer(xi - 0.5, vals[:, 1])
        return out

    def u_point(self, mid: int) -> np.ndarray:
        assert self.role == "displacement"
        return self.coeffs[self.spaces.pts[mid].u_dof - self.spaces.offset_u]

    def r_bulk(self, mid: int) -> np.ndarray:
        assert self.role == "rotation"
        bd = self.spaces.bulk[mid]
        return self.coeffs[bd.r_dof - self.spaces.offset_r]
