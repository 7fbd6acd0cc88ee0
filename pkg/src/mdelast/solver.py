"""Direct solution of the saddle-point system and post-processing."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from mdelast.assembly import SaddleSystem, norm_matrices
from mdelast.fields import MixedField

RESIDUAL_TOL = 1e-10


class SolveError(RuntimeError):
    pass


@dataclass
class SolutionFields:
    sigma: MixedField
    u: MixedField
    r: MixedField
    residual: float
    flagged: bool
    factor_nnz: int


def solve(system: SaddleSystem) -> SolutionFields:
    """Sparse direct factorization of the full symmetric indefinite system.

    A few steps of iterative refinement push the relative residual to the
    contract level; singular factorizations surface as errors (no diagonal
    shifts are applied).
    """
    K = system.matrix().tocsc()
    b = system.rhs
    try:
        lu = spla.splu(K)
    except RuntimeError as err:
        raise SolveError(
            "singular saddle-point factorization; the geometry likely lacks a "
            f"displacement boundary on some bulk manifold ({err})"
        ) from err
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolveError(
            "factorization produced non-finite values; the geometry likely "
            "lacks a displacement boundary on some bulk manifold"
        )
    bnorm = float(np.linalg.norm(b))
    scale = bnorm if bnorm > 0 else 1.0
    res = float(np.linalg.norm(K @ x - b)) / scale
    for _ in range(3):
        if res <= RESIDUAL_TOL:
            break
        x = x + lu.solve(b - K @ x)
        res = float(np.linalg.norm(K @ x - b)) / scale
    if res > 1e-6 or not np.all(np.isfinite(x)):
        # an irreducibly large residual means the factorization hit a
        # (numerically) singular system; no diagonal shift is attempted
        raise SolveError(
            f"system could not be solved (residual {res:.3e}); the geometry "
            "likely lacks a displacement boundary on some bulk manifold"
        )
    flagged = res > RESIDUAL_TOL
    if flagged:
        warnings.warn(f"solver residual {res:.3e} above contract level", stacklevel=2)

    spaces = system.spaces
    sigma = MixedField("stress", x[: spaces.n_sigma], spaces)
    u = MixedField(
        "displacement", x[spaces.offset_u:spaces.offset_u + spaces.n_u], spaces
    )
    r = MixedField("rotation", x[spaces.offset_r:spaces.offset_r + spaces.n_r], spaces)
    return SolutionFields(
        sigma=sigma, u=u, r=r, residual=res, flagged=flagged, factor_nnz=int(lu.nnz)
    )


def weighted_norms(fields, geometry=None, spaces=None, mats=None):
    """Weighted norms (stress, displacement, rotation) of discrete fields.

    ``fields`` is a SolutionFields or a (sigma, u, r) tuple of MixedFields or
    coefficient arrays.
    """
    if isinstance(fields, SolutionFields):
        sig, u, r = fields.sigma, fields.u, fields.r
        spaces = spaces or sig.spaces
    else:
        sig, u, r = fields
        spaces = spaces or getattr(sig, "spaces", spaces)
    sv = sig.coeffs if isinstance(sig, MixedField) else np.asarray(sig, dtype=float)
    uv = u.coeffs if isinstance(u, MixedField) else np.asarray(u, dtype=float)
    rv = r.coeffs if isinstance(r, MixedField) else np.asarray(r, dtype=float)
    if mats is None:
        mats = norm_matrices(spaces)
    ns = float(np.sqrt(max(sv @ (mats["N_sigma"] @ sv), 0.0)))
    nu = float(np.sqrt(max(uv @ (mats["N_u"] @ uv), 0.0)))
    nr = float(np.sqrt(max(rv @ (mats["N_r"] @ rv), 0.0)))
    return ns, nu, nr


def postprocess_stress(sigma: MixedField, geometry=None):
    """Recover averaged and integrated stresses from the scaled stress."""
    spaces = sigma.spaces
    eps = spaces.epsilon_of_sigma_dofs()
    avg = MixedField("stress", sigma.coeffs / eps, spaces)
    integrated = MixedField("stress", sigma.coeffs * eps, spaces)
    return avg, integrated


# ----------------------------------------------------------------------------
# VTK export (legacy ASCII, one file per manifold dimension)
# ----------------------------------------------------------------------------


def write_vtk(prefix: str, sol: SolutionFields, spaces=None) -> list[str]:
    spaces = spaces or sol.sigma.spaces
    mesh = spaces.mesh
    avg, _ = postprocess_stress(sol.sigma)
    written = []

    if spaces.bulk:
        path = f"{prefix}_d2.vtk"
        with open(path, "w", encoding="utf-8") as fh:
            _vtk_header(fh)
            fh.write(f"POINTS {len(mesh.vertices)} double\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]} {v[1]} 0.0\n")
            tri_rows = []
            udata, rdata, sdata = [], [], []
            for mid in sorted(spaces.bulk):
                bd = spaces.bulk[mid]
                coords = mesh.tri_coords(bd.tri_gidx)
                centers = coords.mean(axis=1)
                uvals = sol.u.u_bulk(mid)
                rvals = sol.r.r_bulk(mid)
                for tl, gt in enumerate(bd.tri_gidx):
                    tri_rows.append(mesh.tris[gt])
                    udata.append(uvals[tl])
                    rdata.append(rvals[tl])
                    sdata.append(avg.stress_bulk(mid, tl, centers[tl][None, :])[0])
            fh.write(f"CELLS {len(tri_rows)} {4 * len(tri_rows)}\n")
            for t in tri_rows:
                fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
            fh.write(f"CELL_TYPES {len(tri_rows)}\n")
            fh.write("5\n" * len(tri_rows))
            fh.write(f"CELL_DATA {len(tri_rows)}\n")
            _vtk_vectors(fh, "u", udata)
            _vtk_scalars(fh, "r", rdata)
            for name, (i, k) in (
                ("sigma_avg_xx", (0, 0)), ("sigma_avg_xy", (0, 1)),
                ("sigma_avg_yx", (1, 0)), ("sigma_avg_yy", (1, 1)),
            ):
                _vtk_scalars(fh, name, [s[i, k] for s in sdata])
        written.append(path)

    if spaces.seg:
        path = f"{prefix}_d1.vtk"
        with open(path, "w", encoding="utf-8") as fh:
            _vtk_header(fh)
            fh.write(f"POINTS {len(mesh.vertices)} double\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]} {v[1]} 0.0\n")
            rows, udata, st, sn = [], [], [], []
            mid_xi = np.array([0.5])
            for mid in sorted(spaces.seg):
                sd = spaces.seg[mid]
                for k, ci in enumerate(sd.cells):
                    rows.append(mesh.cells1[ci])
                    udata.append(sol.u.u_seg(mid, k, mid_xi)[0])
                    sv = avg.stress_seg(mid, k, mid_xi)[0]
                    st.append(sv[0])
                    sn.append(sv[1])
            fh.write(f"CELLS {len(rows)} {3 * len(rows)}\n")
            for c in rows:
                fh.write(f"2 {c[0]} {c[1]}\n")
            fh.write(f"CELL_TYPES {len(rows)}\n")
            fh.write("3\n" * len(rows))
            fh.write(f"CELL_DATA {len(rows)}\n")
            _vtk_vectors(fh, "u", udata)
            _vtk_scalars(fh, "sigma_avg_tt", st)
            _vtk_scalars(fh, "sigma_avg_nt", sn)
        written.append(path)

    if spaces.pts:
        path = f"{prefix}_d0.vtk"
        with open(path, "w", encoding="utf-8") as fh:
            _vtk_header(fh)
            fh.write(f"POINTS {len(spaces.pts)} double\n")
            for mid in sorted(spaces.pts):
                c = spaces.pts[mid].coords
                fh.write(f"{c[0]} {c[1]} 0.0\n")
            n = len(spaces.pts)
            fh.write(f"CELLS {n} {2 * n}\n")
            for k in range(n):
                fh.write(f"1 {k}\n")
            fh.write(f"CELL_TYPES {n}\n")
            fh.write("1\n" * n)
            fh.write(f"CELL_DATA {n}\n")
            _vtk_vectors(fh, "u", [sol.u.u_point(mid) for mid in sorted(spaces.pts)])
        written.append(path)
    return written


def _vtk_header(fh):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write("mdelast fields\n")
    fh.write("ASCII\n")
    fh.write("DATASET UNSTRUCTURED_GRID\n")


def _vtk_vectors(fh, name, data):
    fh.write(f"VECTORS {name} double\n")
    for v in data:
        fh.write(f"{v[0]} {v[1]} 0.0\n")


def _vtk_scalars(fh, name, data):
    fh.write(f"SCALARS {name} double 1\n")
    fh.write("LOOKUP_TABLE default\n")
    for v in data:
        fh.write(f"{v}\n")
