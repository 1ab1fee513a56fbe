"""Property checks shared by the ``verify`` command and the acceptance suite.

Each function returns plain numbers (or dicts of them) so callers decide on
tolerances.
"""
from __future__ import annotations

import time

import numpy as np

from .direct import DiracPotential, block_rows, weyl_line, weyl_values
from .inverse import (ReconstructionParams, borg_marchenko_experiment, build_S_closed_form,
                      inverse_pipeline, relative_sup_error, weyl_from_phi1)
from .snode import (S_from_E, assemble_snode, check_representation, similarity_path,
                    similarity_residual)

REPRESENTATION_POINTS = (1j, 1 + 1j, 2j)
ASYMPTOTIC_HEIGHTS = tuple(np.linspace(2.0, 20.0, 10))
ASYMPTOTIC_LENGTH = 0.25
BORG_HEIGHTS = tuple(np.linspace(2.0, 12.0, 11))


def j_identity_residuals(V: DiracPotential) -> dict:
    """Residuals of the algebraic and differential j-identities of ``beta``, ``gamma``."""
    return block_rows(V).j_residuals()


def similarity_checks(V: DiracPotential, path=None) -> dict:
    """Similarity residual, normalization residual and both S-node identity residuals."""
    path = path or similarity_path(V)
    S_E = S_from_E(path.E)
    S_cf = build_S_closed_form(path.Phi1)
    node_E = assemble_snode(path.Phi1, s_source="given", S=S_E)
    node_cf = assemble_snode(path.Phi1, s_source="given", S=S_cf)
    return {
        "similarity_residual": similarity_residual(path.br, path.E),
        "similarity_residual_unnormalized": similarity_residual(path.br, path.similarity.Etilde),
        "normalization_residual": path.normalized.residual,
        "identity_residual_from_E": node_E.identity_residual,
        "identity_residual_closed_form": node_cf.identity_residual,
        "S_agreement": float(np.linalg.norm(S_E - S_cf, 2) / np.linalg.norm(S_E, 2)),
        "series_terms": path.similarity.series.terms,
        "phi1_origin_deviation": path.phi1_origin_deviation,
        "delta": V.grid.delta,
    }


def representation_residuals(V: DiracPotential, zs=REPRESENTATION_POINTS, path=None) -> dict:
    """Max-over-grid residuals of the transfer-matrix representation at each ``z``."""
    path = path or similarity_path(V)
    node = assemble_snode(path.Phi1, s_source="from_E", E=path.E)
    return {str(z): check_representation(V, node, z, br=path.br) for z in zs}


def asymptotic_remainder(V: DiracPotential, heights=ASYMPTOTIC_HEIGHTS,
                         length: float = ASYMPTOTIC_LENGTH, path=None) -> np.ndarray:
    """Normalized remainder of the truncated Fourier representation on ``Re z = 0``.

    ``||phi(z) - 2iz int_0^L e^{2ixz} Phi_1 dx|| sqrt(Im z) e^{2 L Im z} / (2|z|)``
    with ``L = length``; ``phi`` is the Weyl function of ``V`` continued by
    zero beyond the grid.
    """
    Phi1 = (path or similarity_path(V)).Phi1
    zs = 1j * np.asarray(heights, dtype=float)
    phi = weyl_values(V, zs)
    out = []
    for z, p in zip(zs, phi):
        r = np.linalg.norm(p - weyl_from_phi1(Phi1, z, length), 2)
        out.append(r * np.sqrt(z.imag) * np.exp(2 * length * z.imag) / (2 * abs(z)))
    return np.array(out)


def is_bounded(values, factor: float = 10.0) -> bool:
    """No monotone growth and no excursion above ``factor`` times the first value."""
    v = np.asarray(values)
    monotone = bool(np.all(np.diff(v) > 0))
    return bool(np.max(v) <= factor * v[0]) and not monotone


def roundtrip(V: DiracPotential, use_fourier: bool = False, eta: float = 2.0,
              a: float = 200.0, n_xi: int = 4096, taper: float = 0.0) -> dict:
    """Direct problem, then the inverse chain, and the relative sup error of ``v``."""
    grid = V.grid
    t0 = time.perf_counter()
    params = ReconstructionParams(T=grid.T, n=grid.n, eta=eta, a=a, n_xi=n_xi, taper=taper)
    if use_fourier:
        data = weyl_line(V, eta, a, n_xi)
    else:
        data = similarity_path(V).Phi1
    res = inverse_pipeline(data, params)
    return {"error": relative_sup_error(res.V, V), "runtime": time.perf_counter() - t0,
            "diagnostics": res.diagnostics, "result": res}


def refinement_ratio(coarse: float, fine: float) -> float:
    """``coarse / fine``; ``nan`` when both errors sit at rounding level."""
    if fine <= 1e-13 and coarse <= 1e-13:
        return float("nan")
    return coarse / fine if fine > 0 else float("inf")


def borg_marchenko(pair, heights=BORG_HEIGHTS, zetas=(0.4, 0.6), ray_slope: float = 0.0):
    v1, v2 = pair
    return borg_marchenko_experiment(v1, v2, ray_slope, heights, zetas)
