"""Command-line front end: ``graphsurf geometry|constants|sweep|verify``.

Every command reads one JSON config, computes all of its outputs in memory
and only then writes them (temp file + rename), so an error never leaves
partial files behind.

Exit codes: 0 success, 2 config error, 3 geometry construction failure,
4 fewer than 90% of sweep samples succeeded, 5 a verification check failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, GraphSurfError
from .estimators import DEFAULT_ESTIMATORS, Inequality, run_estimator
from .family import FamilySpec, family_sweep, sample_height_field
from .geometry import BaseManifold, HeightField, build_geometry, graph_map_jacobian, sh_index
from .norms import lp_norm
from .verification import verify_identities

EXIT_OK, EXIT_CONFIG, EXIT_GEOMETRY, EXIT_SWEEP, EXIT_VERIFY = 0, 2, 3, 4, 5
SWEEP_SUCCESS_FRACTION = 0.9

DEFAULT_CONFIG = {
    "base": {"kind": "torus", "grid": [64, 64], "periods": None, "radius": 1.0, "scheme": "spectral"},
    "height_field": {"type": "zero"},
    "family": {"deltas": [0.02, 0.05, 0.1], "samples": 50, "band_limit": 8, "alpha": None, "seed": 0},
    "estimators": {"trials": 20, "seed": 0, "select": DEFAULT_ESTIMATORS, "lp": 2.0},
    "verify": {"grids": [[48, 48], [96, 96]], "floor": 1e-8},
    "output": {"dir": "graphsurf-out", "record_timing": False},
}


# ---------------------------------------------------------------------------
# config


def _merge(default, override):
    out = copy.deepcopy(default)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "select":
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return _merge(DEFAULT_CONFIG, raw)


def build_base(cfg) -> BaseManifold:
    sec = cfg["base"]
    kind = sec.get("kind")
    try:
        grid = tuple(int(v) for v in sec["grid"])
        if kind == "torus":
            return BaseManifold.flat_torus(grid, sec.get("periods"), sec.get("scheme", "spectral"))
        if kind == "sphere":
            return BaseManifold.sphere(grid, float(sec.get("radius", 1.0)))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"base: {exc}") from None
    except GraphSurfError as exc:
        raise ConfigError(f"base: {exc}") from None
    raise ConfigError(f"base.kind must be 'torus' or 'sphere', got {kind!r}")


def build_height(cfg, base) -> HeightField:
    """Height field described by the ``height_field`` section.

    Types: ``zero``; ``constant`` (``value``); ``fourier`` on the torus, a sum
    of ``amplitude * sin(k . x + phase)`` terms; ``harmonics`` on the
    sphere, a list of ``{l, m, amplitude}``; ``random``, one family sample
    (``delta``, ``sample_id``, ``band_limit``, ``seed``).
    """
    sec = cfg["height_field"]
    kind = sec.get("type", "zero")
    try:
        if kind == "zero":
            return HeightField.zero(base)
        if kind == "constant":
            return HeightField.constant(base, float(sec["value"]))
        if kind == "fourier":
            if base.is_sphere:
                raise ConfigError("height_field.type 'fourier' needs a torus base")
            x = base.mesh()
            vals = np.zeros(base.grid_shape)
            for term in sec["terms"]:
                phase = sum(float(k) * xi for k, xi in zip(term["k"], x))
                vals = vals + float(term["amplitude"]) * np.sin(phase + float(term.get("phase", 0.0)))
            return HeightField.from_values(base, vals)
        if kind == "harmonics":
            if not base.is_sphere:
                raise ConfigError("height_field.type 'harmonics' needs a sphere base")
            L = max(int(t["l"]) for t in sec["terms"])
            coeffs = np.zeros((L + 1) ** 2)
            for t in sec["terms"]:
                coeffs[sh_index(int(t["l"]), int(t["m"]))] += float(t["amplitude"])
            return HeightField.from_coeffs(base, coeffs)
        if kind == "random":
            spec = FamilySpec(
                base,
                float(sec["delta"]),
                band_limit=int(sec.get("band_limit", 8)),
                seed=int(sec.get("seed", 0)),
            )
            return sample_height_field(spec, int(sec.get("sample_id", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"height_field: bad or missing field {exc}") from None
    raise ConfigError(f"height_field.type {kind!r} is not one of zero/constant/fourier/harmonics/random")


def _selection(cfg) -> dict:
    sel = cfg["estimators"].get("select")
    if not isinstance(sel, dict) or not sel:
        raise ConfigError("estimators.select must be a non-empty object")
    for name in sel:
        try:
            Inequality(name)
        except ValueError:
            raise ConfigError(f"estimators.select: unknown inequality {name!r}") from None
    return sel


# ---------------------------------------------------------------------------
# output helpers


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_outputs(out_dir, files: dict):
    """Write ``{name: text}`` atomically (each file via temp + rename)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, out / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def svg_plot(aggregates, names, title="per-delta maximum constant") -> str:
    """Minimal static line chart, x = delta, one polyline per inequality."""
    width, height, pad = 640, 400, 60
    xs = [a["delta"] for a in aggregates]
    ys = [a[n] for a in aggregates for n in names if not math.isnan(a[n])]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys + [0.0]), max(ys + [0.0])) if ys else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 20}" text-anchor="middle" font-size="12">delta</text>',
        f'<text x="{pad - 8}" y="{sy(y1):.1f}" text-anchor="end" font-size="10">{y1:.4g}</text>',
        f'<text x="{pad - 8}" y="{sy(y0):.1f}" text-anchor="end" font-size="10">{y0:.4g}</text>',
    ]
    for x in xs:
        parts.append(f'<text x="{sx(x):.1f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{x:.4g}</text>')
    for i, name in enumerate(names):
        pts = " ".join(f"{sx(a['delta']):.2f},{sy(a[name]):.2f}" for a in aggregates if not math.isnan(a[name]))
        color = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"><title>{name}</title></polyline>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_geometry(cfg, out_dir) -> int:
    base = build_base(cfg)
    psi = build_height(cfg, base)
    try:
        M = build_geometry(base, psi)
        jac = graph_map_jacobian(base, psi)
    except GraphSurfError as exc:
        print(f"error: geometry construction failed ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    text = M.dump_csv({"sqrt_det_g": M.sqrt_det_g, "JPsi": jac.JPsi})
    b2, h2 = lp_norm(M.b_field(), 2), lp_norm(M.h_field(), 2)
    write_outputs(out_dir, {"geometry.csv": text})
    print(f"volume={fmt(M.volume)} B_L2={fmt(b2)} H_L2={fmt(h2)}")
    return EXIT_OK


def _constants_rows(M, selection, trials, seed, timing):
    rows = []
    for name, params in selection.items():
        t0 = time.perf_counter()
        try:
            est = run_estimator(M, name, params, trials, seed)
            row = [name, est.params_str(), est.value, est.witness, "ok"]
        except GraphSurfError as exc:
            pstr = ";".join(f"{k}={fmt(v)}" for k, v in params.items())
            row = [name, pstr, math.nan, str(exc), exc.code]
        elapsed = (time.perf_counter() - t0) * 1e3
        rows.append(row[:4] + [f"{elapsed:.1f}" if timing else ""] + row[4:])
    return rows


def cmd_constants(cfg, out_dir) -> int:
    base = build_base(cfg)
    psi = build_height(cfg, base)
    selection = _selection(cfg)
    est = cfg["estimators"]
    try:
        M = build_geometry(base, psi)
    except GraphSurfError as exc:
        print(f"error: geometry construction failed ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    rows = _constants_rows(M, selection, int(est["trials"]), int(est["seed"]), bool(cfg["output"]["record_timing"]))
    header = ["inequality", "params", "estimate", "witness_description", "wall_time_ms", "status"]
    write_outputs(out_dir, {"constants.csv": csv_text(header, rows)})
    for r in rows:
        print(f"{r[0]}: {fmt(r[2])} [{r[5]}]")
    return EXIT_OK


def cmd_sweep(cfg, out_dir, workers=1) -> int:
    base = build_base(cfg)
    fam = cfg["family"]
    est = cfg["estimators"]
    selection = _selection(cfg)
    try:
        deltas = [float(d) for d in fam["deltas"]]
        spec = FamilySpec(
            base,
            max(deltas),
            alpha=fam.get("alpha"),
            band_limit=int(fam["band_limit"]),
            samples=int(fam["samples"]),
            seed=int(fam["seed"]),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"family: {exc}") from None
    except GraphSurfError as exc:
        raise ConfigError(f"family: {exc}") from None
    result = family_sweep(
        spec, deltas, selection, trials=int(est["trials"]), workers=workers,
        lp=float(est["lp"]), estimator_seed=int(est["seed"]),
    )
    names = list(selection)
    rec_header = ["delta", "sample_id", "status", "c1_norm_actual", "volume", "B_Lp", "H_Lp", "H_L3", "H_L4",
                  "JPsi_min", "JPsi_max", "JPsi_ok"] + names + ["message"]
    rec_rows = [
        [r.delta, r.sample_id, r.status, r.c1_norm_actual, r.volume, r.b_lp, r.h_lp,
         r.h_lq.get(3, math.nan), r.h_lq.get(4, math.nan), r.jpsi_min, r.jpsi_max,
         "" if r.jpsi_ok is None else r.jpsi_ok]
        + [r.constants.get(n, math.nan) for n in names] + [r.message.strip()]
        for r in result.records
    ]
    agg_header = ["delta", "samples", "succeeded"] + names
    agg_rows = [[a["delta"], a["samples"], a["succeeded"]] + [a[n] for n in names] for a in result.aggregates]
    agg_rows.append(["reference", 1, 1] + [result.reference.get(n, math.nan) for n in names])
    files = {
        "records.csv": csv_text(rec_header, rec_rows),
        "aggregates.csv": csv_text(agg_header, agg_rows),
        "sweep.svg": svg_plot(result.aggregates, names),
    }
    write_outputs(out_dir, files)
    frac = result.success_fraction
    print(f"samples={len(result.records)} succeeded={frac:.3f}")
    return EXIT_OK if frac >= SWEEP_SUCCESS_FRACTION else EXIT_SWEEP


def cmd_verify(cfg, out_dir) -> int:
    base = build_base(cfg)
    ver = cfg["verify"]
    try:
        grids = [tuple(int(v) for v in g) for g in ver["grids"]]
        if len(grids) != 2:
            raise ValueError("exactly two grids are needed")
        floor = float(ver["floor"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"verify: {exc}") from None
    sec = cfg["height_field"]

    def configured_height(*mesh):
        # rebuild the configured field on each grid
        return build_height({"height_field": sec}, base.with_grid(mesh[0].shape)).values

    height = None if sec.get("type", "zero") == "zero" else configured_height

    try:
        results = verify_identities(base, height, grids, floor)
    except GraphSurfError as exc:
        print(f"error: geometry construction failed ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    rows = []
    for r in results:
        for g, res in zip(r.grids, r.residuals):
            rows.append([r.check, "x".join(map(str, g)), res, r.order, "saturated" if r.saturated else "measured",
                         "pass" if r.passed else "fail"])
    header = ["check", "grid", "residual", "observed_order", "regime", "status"]
    write_outputs(out_dir, {"verify.csv": csv_text(header, rows)})
    failed = [r.check for r in results if not r.passed]
    for r in results:
        print(f"{r.check}: residuals={fmt(r.residuals[0])},{fmt(r.residuals[1])} order={fmt(r.order)} "
              f"{'PASS' if r.passed else 'FAIL'}")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"geometry": cmd_geometry, "constants": cmd_constants, "sweep": cmd_sweep, "verify": cmd_verify}


def _threads(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("GRAPHSURF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"GRAPHSURF_THREADS={env!r} is not an integer") from None
    return 1


def make_parser():
    p = argparse.ArgumentParser(prog="graphsurf", description=__doc__.splitlines()[0])
    p.add_argument("--print-default-config", action="store_true", help="print the default JSON config and exit")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out-dir")
        s.add_argument("--threads", type=int)
        s.add_argument("--seed", type=int, help="overrides the family and estimator seeds")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(json.dumps(DEFAULT_CONFIG, indent=2))
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["family"]["seed"] = args.seed
            cfg["estimators"]["seed"] = args.seed
        out_dir = args.out_dir or cfg["output"]["dir"]
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, _threads(args.threads))
        return COMMANDS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
