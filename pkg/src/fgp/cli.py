"""Command line interface: ``fgp simulate | fit | predict | benchmark | timing``.

Configuration is one JSON document with optional sections ``scenario``,
``structure``, ``em`` and ``timing``; unknown keys are rejected.  Data
files are CSV with a header row, ``#`` comment lines and floats written
with 17 significant digits.

Exit codes: 0 success (also for non-converged fits), 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bench import ScenarioConfig, StructureConfig, TimingConfig, draw_replicate, run_scenario, timing_benchmark
from .em import ConvergenceWarning, EmConfig, fit_em
from .errors import ConfigError, DataError, FgpError, LocationOutsideLattice, NumericalError
from .likelihood import FgpParams
from .predict import predict_rows
from .simulate import CovarianceSpec

log = logging.getLogger("fgp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def fmt(x):
    return format(float(x), ".17g")


def generator_note(seed):
    return f"# generator: numpy.random.PCG64 (numpy {np.__version__}); seed={seed}"


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)

    @property
    def structure(self) -> StructureConfig:
        return self.scenario.structure

    @property
    def em(self) -> EmConfig:
        return self.scenario.em

    def to_dict(self):
        sc = dataclasses.asdict(self.scenario)
        structure = sc.pop("structure")
        em = sc.pop("em")
        return {"scenario": sc, "structure": structure, "em": em, "timing": dataclasses.asdict(self.timing)}


_NESTED = {"covariance": CovarianceSpec}
_SECTIONS = ("scenario", "structure", "em", "timing")


def _check_type(value, default, path):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)) and default is not None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")


def _build(cls, data, path, extra=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kw = dict(extra or {})
    for key, value in data.items():
        if key not in names or key in kw:
            raise ConfigError(f"unknown key '{path}.{key}'")
        f = names[key]
        if key in _NESTED:
            value = _build(_NESTED[key], value, f"{path}.{key}")
        elif value is not None:
            if f.default is not dataclasses.MISSING:
                default = f.default
            elif f.default_factory is not dataclasses.MISSING:
                default = f.default_factory()
            else:
                default = 0.0 if f.type in ("float", float) else None
            _check_type(value, default, f"{path}.{key}")
            if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
                value = int(value)
        kw[key] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(text, source="<config>") -> RunConfig:
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown key '{key}' (sections: {', '.join(_SECTIONS)})")
    structure = _build(StructureConfig, raw.get("structure", {}), "structure")
    em = _build(EmConfig, raw.get("em", {}), "em")
    scenario = _build(ScenarioConfig, raw.get("scenario", {}), "scenario", dict(structure=structure, em=em))
    timing = _build(TimingConfig, raw.get("timing", {}), "timing")
    return RunConfig(scenario, timing)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, path)


def config_from_dict(d) -> RunConfig:
    return parse_config(json.dumps(d))


# -- CSV ----------------------------------------------------------------------


def _read_rows(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    return [h.strip() for h in header], list(reader)


def _coord_names(header, path):
    coords = [h for h in header if h.startswith("coord")]
    if coords not in (["coord1"], ["coord1", "coord2"]):
        raise DataError(f"{path}: expected columns coord1[,coord2], got {header}")
    return coords


def read_table(path, required):
    """Columns of a CSV as float arrays; ``required`` names must be present."""
    header, rows = _read_rows(path)
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        try:
            out[i - 1] = [float(v) for v in row]
        except ValueError:
            raise DataError(f"{path}: row {i} has a non-numeric value") from None
    if not np.all(np.isfinite(out)):
        raise DataError(f"{path}: non-finite values")
    return {h: out[:, k] for k, h in enumerate(header)}, header


def read_data(path):
    """``(ids, locations, z, observed mask, y_true or None)`` from a simulate-style file."""
    cols, header = read_table(path, ["id", "z", "observed"])
    coords = _coord_names(header, path)
    locs = np.column_stack([cols[c] for c in coords])
    obs = cols["observed"]
    if not np.all(np.isin(obs, (0.0, 1.0))):
        raise DataError(f"{path}: 'observed' must be 0 or 1")
    return cols["id"].astype(int), locs, cols["z"], obs == 1.0, cols.get("y_true")


def write_csv(path, header, rows, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(c + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# -- commands -----------------------------------------------------------------


def cmd_simulate(args):
    cfg = load_config(args.config)
    sc = cfg.scenario
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    locs, Y, Z, obs, hold = draw_replicate(sc, 0)
    observed = np.zeros(len(locs), dtype=int)
    observed[obs] = 1
    d = locs.shape[1]
    header = ["id"] + [f"coord{k + 1}" for k in range(d)] + ["y_true", "z", "observed"]
    rows = [
        [i] + [fmt(v) for v in locs[i]] + [fmt(Y[i]), fmt(Z[i]), observed[i]] for i in range(len(locs))
    ]
    write_csv(args.out, header, rows, [generator_note(sc.seed)])
    log.info("wrote %d rows (%d observed) to %s", len(rows), int(observed.sum()), args.out)
    return EXIT_OK


def _observed_structure(cfg: RunConfig, locs, Z, obs):
    lat = cfg.scenario.lattice()
    if locs.shape[1] != lat.dim:
        raise DataError(f"data are {locs.shape[1]}-D but the configured lattice is {lat.dim}-D")
    design = cfg.structure.design(lat)
    try:
        st = design.structure(locs[obs], cfg.scenario.noise_var)
    except LocationOutsideLattice as exc:
        raise DataError(f"observed row {np.flatnonzero(obs)[exc.index] + 1} lies outside the lattice") from exc
    if obs.sum() < st.p + 1:
        raise DataError(f"need at least {st.p + 1} observed rows, got {int(obs.sum())}")
    return design, st


def cmd_fit(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.scenario.em.seed = args.seed
    _, locs, Z, obs, _ = read_data(args.data)
    _, st = _observed_structure(cfg, locs, Z, obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        rep = fit_em(st, Z[obs], cfg.em)
    p = rep.params
    params = {"beta": p.beta.tolist(), "tau2": p.tau2, "gamma": p.gamma}
    if st.r:
        params["K"] = p.K.tolist()
    report = {
        "config": cfg.to_dict(),
        "data": os.path.abspath(args.data),
        "n": st.n,
        "r": st.r,
        "M": st.M,
        "params": params,
        "trace": rep.trace,
        "steps": rep.steps,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "wall_time": rep.wall_time,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    log.info("fit: %d iterations, converged=%s, nll=%.10g", rep.iterations, rep.converged, rep.final_nll)
    return EXIT_OK


def load_fit(path):
    try:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        cfg = config_from_dict(rep["config"])
        p = rep["params"]
        r = int(rep["r"])
        K = np.asarray(p.get("K", np.zeros((0, 0))), dtype=float).reshape(r, r)
        params = FgpParams(p["beta"], K, p["tau2"], p["gamma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed fit report ({exc})") from exc
    return cfg, params, rep


def cmd_predict(args):
    cfg, params, _ = load_fit(args.fit)
    _, locs, Z, obs, _ = read_data(args.data)
    design, st = _observed_structure(cfg, locs, Z, obs)
    cols, header = read_table(args.locations, ["id"])
    coords = _coord_names(header, args.locations)
    pts = np.column_stack([cols[c] for c in coords])
    try:
        Xp, Sp, Ap, _ = design.rows(pts)
    except LocationOutsideLattice as exc:
        raise DataError(f"{args.locations}: row {exc.index + 1} lies outside the lattice") from exc
    mean, std = predict_rows(st, params, Z[obs], Xp, Sp, Ap, want_std=args.std, workers=args.workers)
    out_header = ["id"] + coords + ["mean"] + (["std"] if args.std else [])
    rows = []
    for i in range(len(pts)):
        row = [int(cols["id"][i])] + [fmt(v) for v in pts[i]] + [fmt(mean[i])]
        if args.std:
            row.append(fmt(std[i]))
        rows.append(row)
    write_csv(args.out, out_header, rows)
    return EXIT_OK


def cmd_benchmark(args):
    cfg = load_config(args.config)
    sc = cfg.scenario
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.quick:
        sc = dataclasses.replace(sc, replicates=2)

    def progress(i, res):
        log.info("replicate %d: %s", i, {m: round(v, 4) for m, v in res[0].items()})

    res = run_scenario(sc, workers=args.workers, progress=progress)
    rows = [[m, fmt(a), fmt(s), fmt(e)] for m, a, s, e in res.rows()]
    write_csv(
        args.out,
        ["method", "ave_mspe", "std_mspe", "rel_efficiency"],
        rows,
        [
            generator_note(sc.seed),
            f"# replicates={sc.replicates} used={sc.replicates - len({f[0] for f in res.failures})}",
            f"# mspe scored against {'held-out observations z' if sc.holdout_truth == 'noisy' else 'latent y'}",
        ],
    )
    with open(args.out + ".log", "w", encoding="utf-8") as fh:
        fh.write(f"failed replicates: {len({f[0] for f in res.failures})} of {sc.replicates}\n")
        for i, m, msg in res.failures:
            fh.write(f"replicate {i} method {m}: {msg}\n")
    return EXIT_OK


def cmd_timing(args):
    cfg = load_config(args.config)
    rows = timing_benchmark(cfg.timing, workers=args.workers)
    write_csv(
        args.out,
        ["M", "J", "seconds"],
        [[M, J, s if isinstance(s, str) else fmt(s)] for M, J, s in rows],
    )
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="fgp", description="Fused Gaussian process tools")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, workers=True):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", required=True, help="output path")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if workers:
            p.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("simulate", help="simulate one scenario dataset")
    common(p, workers=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="EM fit on the observed rows of a data file")
    common(p, workers=False)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new locations from a fit report")
    p.add_argument("--out", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--std", action="store_true", help="also write prediction standard errors")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="EK / MK / FGP prediction benchmark")
    common(p)
    p.add_argument("--quick", action="store_true", help="two replicates only")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("timing", help="likelihood evaluation timing")
    common(p, seed=False)
    p.set_defaults(func=cmd_timing)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FgpError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
