"""Command-line front end.

``reskit <command> --config CONFIG.json --out DIR``, with commands
levelshift, resonances, expand, contour, spinboson and validate.

Exit codes: 0 success, 1 usage/configuration/input errors, 2 a structural
assumption does not hold, 3 numerical non-convergence, 4 infrared
divergence, 5 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

COMMANDS = ("levelshift", "resonances", "expand", "contour", "spinboson", "validate")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
DEFAULT_DELTA_GUARD = 0.1


class ConfigError(Exception):
    """Bad or missing configuration (exit 1)."""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reskit", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="skip the small-coupling guard")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS threads (falls back to RESKIT_THREADS)")
    return p


def _configure_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("RESKIT_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be at least 1")
        for var in THREAD_VARS:
            os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# configuration helpers (numpy imported lazily, after the thread setup)

def _load_json(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _grid(entry, name: str):
    import numpy as np

    if entry is None:
        return None
    if isinstance(entry, dict):
        if entry.get("log"):
            arr = np.geomspace(entry["start"], entry["stop"], int(entry["num"]))
        else:
            arr = np.linspace(entry["start"], entry["stop"], int(entry["num"]))
    else:
        arr = np.asarray(entry, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or np.any(np.diff(arr) <= 0):
        raise ConfigError(f"{name} must be a nonempty strictly increasing grid")
    return arr


def _profile(entry, n_states: int):
    """Coupling profile from per-state polynomial coefficients (increasing
    powers). ``"g"`` gives the coupling itself, ``"g2"`` its square."""
    import numpy as np

    if entry in (None, "flat"):
        return lambda x: np.ones((len(x), n_states))
    kind = "g2" if "g2" in entry else "g"
    coeffs = entry[kind]
    if len(coeffs) != n_states:
        raise ConfigError(f"profile needs {n_states} coefficient lists")

    def f(x):
        cols = [np.polynomial.polynomial.polyval(x, c) for c in coeffs]
        out = np.stack(cols, axis=1)
        if kind == "g2":
            if np.any(out < 0):
                raise ConfigError("squared profile is negative on the grid")
            out = np.sqrt(out)
        return out

    return f


def build_model(entry):
    """Model from a config entry: a path, a serialised model, or a builder description."""
    import numpy as np

    from reskit.bath import (
        Channel,
        SpectralDensity,
        build_friedrichs,
        build_spinboson_liouvillean_surrogate,
        discretize,
        uniform_grid,
    )
    from reskit.model import Model

    if isinstance(entry, str):
        entry = _load_json(entry)
    if not isinstance(entry, dict):
        raise ConfigError("model must be a path or an object")
    if "L0" in entry:
        return Model.from_json(entry)
    builder = entry.get("builder")
    delta = float(entry.get("delta", 0.0))
    if builder == "friedrichs":
        clusters = [(float(e), int(m)) for e, m in entry["clusters"]]
        n_states = sum(m for _, m in clusters)
        channels = []
        for ch in entry["channels"]:
            grid = uniform_grid(float(ch["lo"]), float(ch["hi"]), int(ch["n"]), ch.get("scheme", "uniform"))
            channels.append(Channel(grid, _profile(ch.get("profile"), n_states)))
        kernel = None
        if "kernel" in entry:
            k = entry["kernel"]
            a, b = float(k.get("cos", 0.0)), float(k.get("linear", 0.0))
            kernel = lambda x, y: a * np.cos(x) * np.cos(y) + b * x * y
        return build_friedrichs(clusters, channels, delta, kernel, {"config": entry})
    if builder == "spinboson_surrogate":
        J = SpectralDensity.from_dict(entry.get("J", {}))
        beta = float(entry.get("beta", 1.0))
        disc = discretize(J, beta, int(entry.get("n", 500)), tuple(entry.get("window", (-4, 4))))
        return build_spinboson_liouvillean_surrogate(float(entry["eps"]), disc, delta, beta)
    raise ConfigError(f"unknown model builder {builder!r}")


def _limit(cfg: dict):
    from reskit.resonance import DEFAULT_LIMIT, LimitSettings

    if "limit" not in cfg:
        return DEFAULT_LIMIT
    return LimitSettings(**cfg["limit"])


def _vector(entry, n: int, default_index: int = 0):
    import numpy as np

    v = np.zeros(n, dtype=complex)
    if entry is None:
        v[default_index] = 1.0
    elif isinstance(entry, dict) and "index" in entry:
        v[int(entry["index"])] = 1.0
    elif isinstance(entry, dict) and "head" in entry:
        head = [complex(*x) if isinstance(x, list) else complex(x) for x in entry["head"]]
        v[:len(head)] = head
    else:
        arr = [complex(*x) if isinstance(x, list) else complex(x) for x in entry]
        if len(arr) != n:
            raise ConfigError(f"vector must have length {n}")
        v[:] = arr
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ConfigError("zero vector")
    return v / norm


def _guard(delta: float, cfg: dict, force: bool) -> None:
    bound = float(cfg.get("delta_guard", DEFAULT_DELTA_GUARD))
    if abs(delta) > bound and not force:
        from reskit.errors import AssumptionViolation

        raise AssumptionViolation(
            f"|delta| = {abs(delta):g} exceeds the small-coupling guard {bound:g} (use --force)")


def _num(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else _num(r) for r in row])


def _write_json(path: str, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    import numpy as np

    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.complexfloating):
        return [float(o.real), float(o.imag)]
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _finite_or_none(x):
    import math

    return x if math.isfinite(x) else None


def _manifest(args, cfg: dict, outputs: list, **extra) -> dict:
    from reskit import __version__
    from reskit.linop import DEFAULT_TOL

    man = {"command": args.command, "version": __version__, "seed": args.seed,
           "force": bool(args.force), "config": cfg, "outputs": sorted(outputs),
           "tolerances": DEFAULT_TOL.to_dict()}
    man.update(extra)
    return man


# ---------------------------------------------------------------------------
# commands

def cmd_levelshift(args, cfg: dict) -> int:
    from reskit.resonance import level_shift

    model = build_model(cfg.get("model"))
    _guard(model.delta, cfg, args.force)
    limit = _limit(cfg)
    rows = []
    for c in model.clusters:
        ls = level_shift(model, c, limit)
        for j, lam in enumerate(ls.eigenvalues):
            rows.append((c.e, j, lam.real, lam.imag, ls.classification, ls.limit_error))
    _write_csv(os.path.join(args.out, "levelshift.csv"),
               ("e", "j", "re", "im", "classification", "limit_error"),
               [(e, str(j), re, im, cl, err) for e, j, re, im, cl, err in rows])
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, cfg, ["levelshift.csv", "manifest.json"], limit=limit.to_dict()))
    return 0


def _resonance_set(model, limit):
    from reskit.resonance import gaps, level_shift, resonance_data

    lss = [level_shift(model, c, limit) for c in model.clusters]
    rds = [resonance_data(model, c, ls, limit) for c, ls in zip(model.clusters, lss)]
    return lss, rds, gaps(lss)


def cmd_resonances(args, cfg: dict) -> int:
    model = build_model(cfg.get("model"))
    _guard(model.delta, cfg, args.force)
    limit = _limit(cfg)
    _, rds, gap = _resonance_set(model, limit)
    rows = []
    for rd in rds:
        for j, a in enumerate(rd.eigenvalues):
            lam = rd.level_shift.eigenvalues[j]
            rows.append((rd.cluster.e, str(j), a.real, a.imag, lam.real, lam.imag,
                         rd.derivatives[j].real, rd.derivatives[j].imag, rd.classification))
    _write_csv(os.path.join(args.out, "resonances.csv"),
               ("e", "j", "a_re", "a_im", "lambda_re", "lambda_im", "da_re", "da_im", "classification"),
               rows)
    extra = {"limit": limit.to_dict(), "gaps": gap.to_dict(),
             "fixed_point": [{"e": rd.cluster.e, "energy": rd.energy, "residual": rd.fixed_point_residual,
                              "iterations": rd.fixed_point_iterations} for rd in rds]}
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, cfg, ["resonances.csv", "manifest.json"], **extra))
    return 0


def cmd_expand(args, cfg: dict) -> int:
    import numpy as np

    from reskit.errors import WindowTooSmall
    from reskit.propagator import expand, remainder_fit

    model = build_model(cfg.get("model"))
    _guard(model.delta, cfg, args.force)
    limit = _limit(cfg)
    times = _grid(cfg.get("times", {"start": 0.5, "stop": 50.0, "num": 200}), "times")
    phi = _vector(cfg.get("phi"), model.n)
    psi = _vector(cfg.get("psi", cfg.get("phi")), model.n)
    _, rds, gap = _resonance_set(model, limit)
    res = expand(model, phi, psi, times, rds, limit=limit)
    _write_csv(os.path.join(args.out, "expansion.csv"),
               ("t", "exact_re", "exact_im", "expansion_re", "expansion_im", "abs_remainder", "t_abs_remainder"),
               res.rows())
    fit_cfg = cfg.get("fit", {})
    try:
        fit = remainder_fit(res, t_min=fit_cfg.get("t_min", 1.0), t_max=fit_cfg.get("t_max"),
                            bins=int(fit_cfg.get("bins", 0)))
        fit_info = {"amplitude": fit.amplitude, "exponent": None if np.isnan(fit.exponent) else fit.exponent,
                    "samples": fit.samples, "skipped": fit.skipped}
    except WindowTooSmall as exc:
        fit_info = {"error": str(exc)}
    extra = {"limit": limit.to_dict(), "gaps": gap.to_dict(), "remainder_fit": fit_info,
             "max_abs_remainder": float(np.abs(res.remainder).max()),
             "poles": [p for p, _ in res.decaying_terms],
             "stationary": [e for e, _ in res.stationary_terms]}
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, cfg, ["expansion.csv", "manifest.json"], **extra))
    return 0


def cmd_contour(args, cfg: dict) -> int:
    import numpy as np

    from reskit.linop import propagator_exact
    from reskit.propagator import ContourConfig, contour_amplitude
    from reskit.resonance import gaps, level_shift

    model = build_model(cfg.get("model"))
    _guard(model.delta, cfg, args.force)
    times = _grid(cfg.get("times", [0.5, 1.0, 2.0, 5.0, 10.0]), "times")
    phi = _vector(cfg.get("phi"), model.n)
    psi = _vector(cfg.get("psi", cfg.get("phi")), model.n)
    alpha = cfg.get("alpha")
    if alpha is None:
        alpha = gaps([level_shift(model, c, _limit(cfg)) for c in model.clusters]).alpha
    w = float(cfg.get("w", 0.05 * alpha))
    config = ContourConfig(w, float(alpha), tuple(c.e for c in model.clusters))
    results = contour_amplitude(model, phi, psi, list(times), config)
    exact = propagator_exact(model.generator, times, phi, psi)
    rows = [(t, r.value.real, r.value.imag, e.real, e.imag, abs(r.value - e))
            for t, r, e in zip(times, results, exact)]
    _write_csv(os.path.join(args.out, "contour.csv"),
               ("t", "contour_re", "contour_im", "exact_re", "exact_im", "abs_error"), rows)
    extra = {"contour": config.to_dict(),
             "max_abs_error": float(max(r[-1] for r in rows))}
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, cfg, ["contour.csv", "manifest.json"], **extra))
    return 0


def cmd_spinboson(args, cfg: dict) -> int:
    import numpy as np

    from reskit import spinboson as sb

    params = sb.SpinBosonParams.from_dict(cfg)
    _guard(params.delta, cfg, args.force)
    relax = sb.relaxation(params)
    _write_json(os.path.join(args.out, "tau.json"), relax.to_dict())
    infrared = cfg.get("infrared", "raise")
    gram = sb.coherent_gram(params, infrared=infrared)
    if "components" in cfg:
        comps = [(c[0], c[1], complex(*c[2:4]) if len(c) > 3 else complex(c[2])) for c in cfg["components"]]
        vec = sb.coherent_vector_array(comps)
    else:
        system = np.asarray(cfg.get("system", [1.0, 0.0, 0.0, 0.0]), dtype=complex)
        if system.shape != (4,) or np.linalg.norm(system) == 0:
            raise ConfigError("system must be a nonzero 4-vector over ++, +-, -+, --")
        vec = sb.product_vector(system / np.linalg.norm(system), cfg.get("label", "Omega"))
    norm2 = sb.coherent_norm2(vec, gram)
    if norm2 <= 0:
        raise ConfigError("initial vector has zero norm")
    vec = vec / np.sqrt(norm2)
    default_stop = 5.0 / max(relax.gamma, 1e-12) if params.delta else 100.0
    times = _grid(cfg.get("times", {"start": 1.0, "stop": default_stop, "num": 400}), "times")
    curve = sb.dynamics_curve(params, relax, vec, vec, times, gram)
    _write_csv(os.path.join(args.out, "dynamics.csv"),
               ("t", "re", "im", "envelope", "equilibrium_re", "equilibrium_im"), curve.rows())
    extra = {"relaxation": relax.to_dict(), "infrared": infrared,
             "coherent_gram": [[v.real for v in row] for row in gram],
             "envelope_constant": curve.constant, "decay_rate": curve.decay_rate,
             "decay_time": _finite_or_none(curve.decay_time()),
             "amplitudes": {k: [v.real, v.imag] for k, v in curve.amplitudes.items()},
             "poles": {k: [v.real, v.imag] for k, v in curve.poles.items()}}
    _write_json(os.path.join(args.out, "manifest.json"),
                _manifest(args, cfg, ["tau.json", "dynamics.csv", "manifest.json"], **extra))
    return 0


def cmd_validate(args, cfg: dict) -> int:
    from reskit import validate

    selection = cfg.get("criteria")
    if selection is not None and not set(selection) <= set(validate.SUITE):
        raise ConfigError(f"criteria must be drawn from {sorted(validate.SUITE)}")
    results = validate.run(selection, seed=args.seed, perturb=float(cfg.get("perturb", 0.0)))
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    _write_json(os.path.join(args.out, "validate.json"),
                {"passed": ok, "seed": args.seed, "criteria": [r.to_dict() for r in results]})
    return 0 if ok else 5


HANDLERS = {"levelshift": cmd_levelshift, "resonances": cmd_resonances, "expand": cmd_expand,
            "contour": cmd_contour, "spinboson": cmd_spinboson, "validate": cmd_validate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _configure_threads(args.threads)
        cfg = _load_json(args.config) if args.config else {}
        if args.command != "validate" and not cfg:
            raise ConfigError(f"{args.command} needs --config")
        os.makedirs(args.out, exist_ok=True)
        from reskit.errors import ReskitError

        try:
            return HANDLERS[args.command](args, cfg)
        except ReskitError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return exc.exit_code
        except (KeyError, TypeError, ValueError) as exc:
            print(f"error: invalid configuration: {exc}", file=sys.stderr)
            return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
