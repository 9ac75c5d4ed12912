"""``cqtomo`` command line: phantom, simulate, reconstruct, verify.

One JSON config (``"schema": "cqtomo/1"``) describes an experiment. Relative
paths inside it are taken relative to the working directory. Every failure
exits nonzero with a single stderr line

    error code=<N> kind=<Exception> msg=<text>

with ``N`` = 2 (config), 3 (I/O) or 4 (numerical).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io
from .errors import CQTError, ConfigError, DataIOError
from .fields import (
    ConstantScalar,
    GaussianScalar,
    GridField,
    GridScalar,
    GridSpec,
    HamiltonianField,
    NeutrinoParameters,
    constant_field,
    neutrino_hamiltonian,
    parse_matrix,
    phantom,
    pmns_matrix,
    sample_on_grid,
    zero_field,
)
from .gauge import StateSets, measure
from .geometry import domain_from_dict, family_from_header, unit_disk
from .matrix import random_unitary, traceless_basis
from .propagator import DEFAULT_H
from .reconstruction import (
    basis_coefficients,
    reconstruct_linearized,
    reconstruct_pseudolinear,
    reconstruct_scalar_coefficient,
)
from .verify import SUITES, failed_invariants, run_suite

log = logging.getLogger("cqtomo")

SCHEMA = "cqtomo/1"
MODES = ("linearized", "pseudolinear", "scalar")


class VerificationFailed(CQTError):
    exit_code = 4


# ---------------------------------------------------------------- config


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if cfg.get("schema") != SCHEMA:
        raise ConfigError(f"{path}: key 'schema' must be {SCHEMA!r}, got {cfg.get('schema')!r}")
    return cfg


def _need(d, key, where):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing key '{where}.{key}'" if where else f"missing key '{key}'")
    return d[key]


def _scalar(spec, where):
    if isinstance(spec, (int, float)):
        return ConstantScalar(float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"'{where}' must be a number or an object")
    if "constant" in spec:
        return ConstantScalar(float(spec["constant"]))
    if "gaussian" in spec:
        g = spec["gaussian"]
        return GaussianScalar(float(g.get("amplitude", 1.0)), tuple(g.get("center", (0.0, 0.0))), float(g.get("width", 0.25)))
    if "phantom" in spec:
        return phantom(spec["phantom"], spec.get("params"))
    if "file" in spec:
        return io.read_grid_field(spec["file"])
    raise ConfigError(f"'{where}' needs one of constant, gaussian, phantom, file")


def _pmns(spec, where):
    if isinstance(spec, dict) and "angles" in spec:
        t12, t23, t13 = (float(a) for a in spec["angles"])
        return pmns_matrix(t12, t23, t13, float(spec.get("delta", 0.0)))
    if isinstance(spec, dict) and "haar_seed" in spec:
        return random_unitary(3, seed=int(spec["haar_seed"]))
    try:
        return parse_matrix(spec, 3)
    except ConfigError as exc:
        raise ConfigError(f"'{where}': {exc}") from None


def neutrino_params(spec, where="field.neutrino"):
    return NeutrinoParameters(
        _pmns(_need(spec, "pmns", where), where + ".pmns"),
        tuple(_need(spec, "mass_squares", where)),
        float(_need(spec, "energy", where)),
        float(spec.get("fermi_constant", 1.0)),
        bool(spec.get("antineutrino", False)),
    )


def build_field(spec, where="field", n=None):
    """Matrix field from a config value: phantom, neutrino, file or constant matrix."""
    if isinstance(spec, dict) and "phantom" in spec:
        return phantom(spec["phantom"], spec.get("params"))
    if isinstance(spec, dict) and "neutrino" in spec:
        nu = spec["neutrino"]
        params = neutrino_params(nu, where + ".neutrino")
        density = _scalar(nu.get("density", 0.0), where + ".neutrino.density")
        return neutrino_hamiltonian(params, density, bool(nu.get("electron_density", False)))
    if isinstance(spec, dict) and "file" in spec:
        return io.read_grid_field(spec["file"])
    if spec is None:
        if n is None:
            raise ConfigError(f"missing key '{where}'")
        return zero_field(n)
    try:
        return constant_field(parse_matrix(spec, n))
    except ConfigError as exc:
        raise ConfigError(f"'{where}': {exc}") from None


def build_grid(cfg):
    g = cfg.get("grid", {})
    lo, hi = float(g.get("lo", -1.0)), float(g.get("hi", 1.0))
    return GridSpec.square(int(g.get("n", 64)), lo, hi, int(g.get("dim", 2)))


def build_rays(cfg):
    rays = dict(_need(cfg, "rays", ""))
    rays.setdefault("kind", "parallel_beam")
    rays["domain"] = cfg.get("domain", unit_disk().to_dict())
    domain_from_dict(rays["domain"])
    return family_from_header(rays)


def build_states(spec, n):
    if spec is None or spec == "basis":
        return StateSets.basis(n)
    try:
        return StateSets.from_dict(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"'states': {exc}") from None


# ---------------------------------------------------------------- commands


def _out_dir(cfg, args):
    out = args.out or cfg.get("output", {}).get("dir", "out")
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _seed(cfg, args):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return seed


def _threads(cfg, args):
    k = args.threads if args.threads is not None else cfg.get("threads", 1)
    if not isinstance(k, int) or k < 1:
        raise ConfigError(f"threads must be a positive integer, got {k!r}")
    log.debug("threads=%d requested; the work is vectorised in one process", k)
    return k


def cmd_phantom(cfg, args):
    out = _out_dir(cfg, args)
    grid = build_grid(cfg)
    spec = _need(cfg, "field", "")
    fld = build_field(spec)
    values = sample_on_grid(fld, grid)
    if isinstance(fld, HamiltonianField):
        skew = float(np.abs(values - np.conj(np.swapaxes(values, -1, -2))).max())
        log.info("phantom sampled on %s grid, max |H - H*| = %.2e", "x".join(map(str, grid.dims)), skew)
        result = GridField(grid, values)
    else:
        result = GridScalar(grid, np.real(values))
    path = os.path.join(out, "field.grid")
    io.write_grid_field(path, result)
    log.info("wrote %s", path)
    return path


def cmd_simulate(cfg, args):
    out = _out_dir(cfg, args)
    fld = build_field(_need(cfg, "field", ""))
    rays = build_rays(cfg)
    m = cfg.get("measurement", {})
    mode = m.get("mode", "amplitudes")
    if mode not in ("amplitudes", "ideal_unitary"):
        raise ConfigError(f"'measurement.mode' must be amplitudes or ideal_unitary, got {mode!r}")
    states = build_states(cfg.get("states"), fld.n) if mode == "amplitudes" else None
    data = measure(
        fld,
        rays,
        states,
        mode=mode,
        h=float(m.get("h", DEFAULT_H)),
        ordered=bool(m.get("ordered", True)),
        seed=_seed(cfg, args),
        recover=bool(m.get("recover", True)),
    )
    if mode == "amplitudes" and len(states.final) == fld.n and len(states.initial) == fld.n:
        dev = float(np.abs(np.sum(data.values**2, axis=1) - 1.0).max())
        log.info("amplitude row-sum check: max |sum_a |a* U b|^2 - 1| = %.2e", dev)
    path = os.path.join(out, "data.meas")
    io.write_measurements(path, data)
    log.info("wrote %s (%d rays, mode %s)", path, len(data), mode)
    return path


def _images(values, mode, out, basis):
    meta = []
    if mode == "scalar":
        meta.append(io.write_pgm(os.path.join(out, "f.pgm"), values))
        return meta
    coeffs = basis_coefficients(values, basis)
    for a in range(coeffs.shape[-1]):
        meta.append(dict(io.write_pgm(os.path.join(out, f"component_{a}.pgm"), coeffs[..., a]), component=a))
    return meta


def cmd_reconstruct(cfg, args):
    t0 = time.perf_counter()
    out = _out_dir(cfg, args)
    rc = _need(cfg, "reconstruction", "")
    mode = _need(rc, "mode", "reconstruction")
    if mode not in MODES:
        raise ConfigError(f"'reconstruction.mode' must be one of {', '.join(MODES)}, got {mode!r}")
    data = io.read_measurements(_need(rc, "data", "reconstruction"))
    if data.mode != "ideal_unitary":
        raise ConfigError(f"reconstruction needs ideal_unitary data, got {data.mode!r}")
    rays = family_from_header(data.family_header)
    grid = build_grid(cfg)
    n = data.values.shape[-1]
    truth = build_field(rc["truth"], "reconstruction.truth") if "truth" in rc else None
    iters = {"max_iters": int(rc.get("max_iters", 8)), "inner_iters": int(rc.get("inner_iters", 20))}
    h = rc.get("h")
    solver = rc.get("solver", "landweber")
    if mode == "linearized":
        h0 = build_field(_need(rc, "h0", "reconstruction"), "reconstruction.h0", n)
        base = h0.eval(np.zeros((1, grid.ndim)))[0]
        fld, report = reconstruct_linearized(data, base, rays, grid, truth=truth)
    elif mode == "pseudolinear":
        guess = build_field(rc.get("initial_guess"), "reconstruction.initial_guess", n)
        fld, report = reconstruct_pseudolinear(data, guess, rays, grid, h=h, truth=truth, solver=solver, **iters)
    else:
        h0 = build_field(_need(rc, "h0", "reconstruction"), "reconstruction.h0", n)
        g = build_field(_need(rc, "g", "reconstruction"), "reconstruction.g", n)
        f_truth = _scalar(rc["truth_f"], "reconstruction.truth_f") if "truth_f" in rc else None
        fld, report = reconstruct_scalar_coefficient(data, h0, g, rays, grid, h=h, truth=f_truth, solver=solver, **iters)
    field_path = os.path.join(out, "recovered.grid")
    io.write_grid_field(field_path, fld)
    if rc.get("images", True) and grid.ndim == 2:
        report.extra["images"] = _images(fld.values, mode, out, traceless_basis(n))
    doc = report.to_dict()
    # wall time is logged, not stored, so reruns give identical files
    doc.pop("seconds")
    report_path = os.path.join(out, "report.json")
    io.write_json(report_path, doc)
    log.info(
        "reconstruction %s: %d iterations, stop %s, field error %s, %.1f s",
        mode,
        report.iterations,
        report.stop_reason,
        "n/a" if report.field_error is None else f"{report.field_error:.4f}",
        time.perf_counter() - t0,
    )
    return report_path


def cmd_verify(cfg, args):
    if args.suite not in SUITES + ("all",):
        raise ConfigError(f"unknown suite {args.suite!r}; expected one of {', '.join(SUITES + ('all',))}")
    summary = run_suite(args.suite, seed=_seed(cfg, args), tol_scale=0.0 if args.inject_fault else 1.0)
    text = json.dumps(summary, sort_keys=True, indent=2)
    print(text)
    if args.out:
        io.write_json(os.path.join(_out_dir(cfg, args), f"verify_{args.suite}.json"), summary)
    if not summary["passed"]:
        raise VerificationFailed("failed invariants: " + "; ".join(failed_invariants(summary)))
    return None


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    """Raises on bad arguments so the error leaves as one stderr line."""

    def error(self, message):
        raise ConfigError(f"bad command line: {message}")


def _parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON, schema cqtomo/1)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, help="worker count (recorded; work is vectorised in-process)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p = _Parser(prog="cqtomo", description="Tomography of matrix-valued Hamiltonians from transition amplitudes.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="sample a configured field onto a grid file")
    sub.add_parser("simulate", parents=[common], help="simulate measurements for a ray family")
    sub.add_parser("reconstruct", parents=[common], help="recover a field from ideal data")
    v = sub.add_parser("verify", parents=[common], help="run a fixed-seed property suite")
    v.add_argument("suite", help="one of " + ", ".join(SUITES + ("all",)))
    v.add_argument("--inject-fault", action="store_true", help="tighten every tolerance to 0")
    return p


COMMANDS = {"phantom": cmd_phantom, "simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "verify": cmd_verify}


def _fail(code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error code={code} kind={type(exc).__name__} msg={msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        return _fail(exc.exit_code, exc)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "verify":
            cfg = load_config(args.config) if args.config else {}
        else:
            if not args.config:
                raise ConfigError("--config is required")
            cfg = load_config(args.config)
        _threads(cfg, args)
        COMMANDS[args.command](cfg, args)
    except CQTError as exc:
        return _fail(exc.exit_code, exc)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(2, ConfigError(f"{type(exc).__name__}: {exc}"))
    except OSError as exc:
        return _fail(3, DataIOError(str(exc)))
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(4, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
