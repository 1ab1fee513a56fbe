"""Command-line front end: ``direct``, ``inverse``, ``roundtrip`` and ``verify``.

Exit codes: 0 success, 1 configuration or input error, 2 a checked residual
exceeds its tolerance, 3 a pipeline stage failed.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .direct import block_rows, hamiltonian, weyl_line
from .errors import DiracError, DomainError, ShapeError, StageError
from .inverse import ReconstructionParams, inverse_pipeline, relative_sup_error
from .io import (ConfigError, FormatError, RunConfig, load_config, read_grid_function,
                 read_weyl_samples, sniff_kind, write_grid_function, write_json,
                 write_weyl_samples)
from .snode import similarity_path, similarity_residual
from . import verification as vf

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_STAGE = 0, 1, 2, 3

DEFAULT_J_TOL = 1e-6
DEFAULT_ROUNDTRIP_TOL = 0.05
DEFAULT_REPRESENTATION_TOL = 1e-3
MIN_CONTRACTION = 1.8


def _check(value, tol, passed=None) -> dict:
    ok = bool(value <= tol) if passed is None else bool(passed)
    return {"value": value, "tol": tol, "passed": ok}


def _finish(out: Path, diagnostics: dict, checks: dict) -> int:
    diagnostics["checks"] = checks
    diagnostics["passed"] = all(c["passed"] for c in checks.values())
    write_json(out / "diagnostics.json", diagnostics)
    for name, c in checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']!r} (tol {c['tol']!r})")
    return EXIT_OK if diagnostics["passed"] else EXIT_TOLERANCE


def cmd_direct(cfg: RunConfig, out: Path, tol: float | None = None) -> int:
    tol = tol or cfg.tol or DEFAULT_J_TOL
    V = cfg.primary_potential()
    timings = {}
    t = time.perf_counter()
    br = block_rows(V)
    timings["block_rows"] = time.perf_counter() - t
    t = time.perf_counter()
    path = similarity_path(V)
    timings["similarity"] = time.perf_counter() - t
    t = time.perf_counter()
    w = cfg.weyl
    samples = weyl_line(V, w.eta, w.a, w.n_xi)
    timings["weyl_line"] = time.perf_counter() - t
    write_grid_function(out / "beta.csv", br.beta)
    write_grid_function(out / "gamma.csv", br.gamma)
    write_grid_function(out / "phi1.csv", path.Phi1)
    write_weyl_samples(out / "weyl_line.csv", samples)
    write_grid_function(out / "hamiltonian.csv", hamiltonian(br))
    jres = br.j_residuals()
    sim = similarity_residual(path.br, path.E)
    delta = V.grid.delta
    diag = {"command": "direct", "potential": V.name, "m1": V.m1, "m2": V.m2,
            "T": V.grid.T, "n": V.grid.n, "j_identity": jres,
            "similarity_residual": sim,
            "normalization_residual": path.normalized.residual,
            "phi1_origin_deviation": path.phi1_origin_deviation,
            "series_terms": path.similarity.series.terms,
            "weyl_truncation_scale": samples.truncation_scale, "timings": timings}
    checks = {"j_identity": _check(max(jres.values()), tol),
              "similarity_residual": _check(sim, 10 * delta),
              "normalization_residual": _check(path.normalized.residual, 10 * delta)}
    return _finish(out, diag, checks)


def _load_input(cfg: RunConfig, path: Path):
    try:
        return _read_input(cfg, path)
    except (DomainError, ShapeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _read_input(cfg: RunConfig, path: Path):
    kind = sniff_kind(path)
    if kind == "weyl":
        data = read_weyl_samples(path)
        shape = (data.m2, data.m1)
    else:
        data = read_grid_function(path)
        shape = data.shape
        if data.grid != cfg.grid:
            raise FormatError(f"{path}: grid {data.grid} does not match config grid {cfg.grid}")
    if shape != (cfg.m2, cfg.m1):
        raise FormatError(f"{path}: holds {shape[0]}x{shape[1]} values, expected "
                          f"{cfg.m2}x{cfg.m1}")
    return data


def _params(cfg: RunConfig) -> ReconstructionParams:
    w = cfg.weyl
    return ReconstructionParams(T=cfg.T, n=cfg.n, eta=w.eta, a=w.a, n_xi=w.n_xi, taper=w.taper)


def cmd_inverse(cfg: RunConfig, out: Path, input_path: Path, tol: float | None = None) -> int:
    tol = tol or cfg.tol or DEFAULT_ROUNDTRIP_TOL
    data = _load_input(cfg, input_path)
    try:
        res = inverse_pipeline(data, _params(cfg))
    except StageError as exc:
        write_json(out / "diagnostics.json", {"command": "inverse", "failed_stage": exc.stage,
                                              "error": str(exc.cause), **exc.diagnostics})
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    write_grid_function(out / "v_recovered.csv", res.V.v)
    write_grid_function(out / "gamma_rec.csv", res.gamma)
    write_grid_function(out / "beta_rec.csv", res.beta)
    diag = {"command": "inverse", "input": str(input_path), **res.diagnostics}
    delta = cfg.grid.delta
    checks = {"gamma_j_gamma": _check(res.diagnostics["gamma_j_gamma_residual"], 10 * delta),
              "beta_j_beta": _check(res.diagnostics["beta_j_beta_residual"], 10 * delta)}
    if cfg.reference:
        err = relative_sup_error(res.V, cfg.primary_potential())
        diag["roundtrip_error"] = err
        checks["roundtrip_error"] = _check(err, tol)
    return _finish(out, diag, checks)


def cmd_roundtrip(cfg: RunConfig, out: Path, tol: float | None = None) -> int:
    tol = tol or cfg.tol or DEFAULT_ROUNDTRIP_TOL
    w = cfg.weyl
    rows = []
    for n in (cfg.n, 2 * cfg.n):
        V = cfg.primary_potential(cfg.with_n(n).grid)
        try:
            r = vf.roundtrip(V, cfg.use_fourier, w.eta, w.a, w.n_xi, w.taper)
        except StageError as exc:
            print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
            write_json(out / "diagnostics.json", {"command": "roundtrip", "n": n,
                                                  "failed_stage": exc.stage,
                                                  "error": str(exc.cause)})
            return EXIT_STAGE
        rows.append((n, r["error"], r["runtime"]))
    ratio = vf.refinement_ratio(rows[0][1], rows[1][1])
    with open(out / "roundtrip.csv", "w") as fh:
        fh.write("n,error\n")
        for n, err, _ in rows:
            fh.write(f"{n},{format(err, '.17g')}\n")
    diag = {"command": "roundtrip", "use_fourier": cfg.use_fourier,
            "table": [{"n": n, "error": e, "runtime": rt} for n, e, rt in rows],
            "contraction_ratio": ratio if np.isfinite(ratio) else "not-applicable"}
    checks = {"roundtrip_error": _check(rows[0][1], tol)}
    if np.isfinite(ratio):
        checks["contraction_ratio"] = {"value": ratio, "tol": MIN_CONTRACTION,
                                       "passed": bool(ratio >= MIN_CONTRACTION)}
    for n, err, _ in rows:
        print(f"n={n} error={err:.6e}")
    print(f"contraction ratio: {diag['contraction_ratio']}")
    return _finish(out, diag, checks)


def cmd_verify(cfg: RunConfig, out: Path, tol: float | None = None) -> int:
    """Run the property suite.

    ``tol`` governs the exact-identity checks (j-identities); the
    discretization-order checks keep their own tolerances (``10 delta`` or the
    fixed representation tolerance).
    """
    j_tol = tol or cfg.tol or DEFAULT_J_TOL
    pot = cfg.potential_on()
    V = pot[0] if isinstance(pot, tuple) else pot
    delta = V.grid.delta
    path = similarity_path(V)
    jres = vf.j_identity_residuals(V)
    sim = vf.similarity_checks(V, path)
    rep = vf.representation_residuals(V, path=path)
    asym = vf.asymptotic_remainder(V, path=path)
    rep_max = max(max(r["representation"], r["ode"]) for r in rep.values())
    checks = {
        "j_identity": _check(max(jres.values()), j_tol),
        "similarity_residual": _check(sim["similarity_residual"], 10 * delta),
        "normalization_residual": _check(sim["normalization_residual"], 10 * delta),
        "identity_residual_from_E": _check(sim["identity_residual_from_E"], 10 * delta),
        "identity_residual_closed_form": _check(sim["identity_residual_closed_form"], 10 * delta),
        "S_agreement": _check(sim["S_agreement"], 10 * delta),
        "representation": _check(rep_max, DEFAULT_REPRESENTATION_TOL),
        "asymptotics_bounded": {"value": float(np.max(asym)), "tol": "bounded",
                                "passed": vf.is_bounded(asym)},
    }
    diag = {"command": "verify", "potential": V.name, "j_identity": jres, "similarity": sim,
            "representation": rep, "asymptotic_remainder": asym,
            "asymptotic_heights": list(vf.ASYMPTOTIC_HEIGHTS),
            "asymptotic_length": vf.ASYMPTOTIC_LENGTH}
    if isinstance(pot, tuple):
        bm = vf.borg_marchenko(pot)
        diag["borg_marchenko"] = {"heights": bm.heights, "differences": bm.differences,
                                  "weighted": {str(k): v for k, v in bm.weighted.items()},
                                  "growth": {str(k): v for k, v in bm.growth.items()}}
        checks["borg_marchenko_bounded_0.4"] = {"value": bm.growth[0.4], "tol": "bounded",
                                                "passed": bm.bounded(0.4)}
        checks["borg_marchenko_growth_0.6"] = {"value": bm.growth[0.6], "tol": 10.0,
                                               "passed": bm.grows(0.6)}
    return _finish(out, diag, checks)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirac-inverse",
                                     description="Direct and inverse problems for Dirac systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("direct", "inverse", "roundtrip", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("."))
        p.add_argument("--tol", type=float, default=None)
        if name == "inverse":
            p.add_argument("--input", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.tol is not None and not args.tol > 0:
            raise ConfigError("--tol must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "direct":
            return cmd_direct(cfg, args.out, args.tol)
        if args.command == "inverse":
            if not args.input.exists():
                raise ConfigError(f"input file not found: {args.input}")
            return cmd_inverse(cfg, args.out, args.input, args.tol)
        if args.command == "roundtrip":
            return cmd_roundtrip(cfg, args.out, args.tol)
        return cmd_verify(cfg, args.out, args.tol)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except DiracError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
