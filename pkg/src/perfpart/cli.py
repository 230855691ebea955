"""``perfpart run``: compute calibration, moment tables and figure data for a scenario.

All outputs are computed in memory first and written only when every one of
them succeeded, so a failing run leaves the output directory untouched.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import CalibrationError, ValidationError
from .greeks import compute_greeks, implicit_multiplier_ratio, multiplier_distribution
from .market import MarketParams, MarketState, sigma_hat
from .moments import REPORTED_KURTOSIS, m_star, strategy_moments
from .simulation import estimate_moments, kurtosis_convention, sample_paths, simulate_strategy
from .strategies import StrategySpec, calibrate, payoff_cross

OUTPUT_GROUPS = ("calibration", "moments", "figures", "metadata")
FIGURE_TIMES = (0.25, 0.5, 0.75)
GREEK_TIME = 0.75
FIGURE_MULTIPLIERS = (1, 2, 3, 4, 5)
EXIT_OK, EXIT_CHECK_FAILED, EXIT_BAD_INPUT, EXIT_CALIBRATION = 0, 1, 2, 3


class ScenarioError(ValueError):
    """Invalid scenario file; ``str()`` reads ``path:line: message``."""

    def __init__(self, path, line, message):
        self.path, self.line = str(path), line
        where = f"{self.path}:{line}" if line else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Scenario:
    market: MarketParams
    alpha: float
    T: float
    v0: float
    multipliers: tuple[float, ...]
    moment_order: int = 4
    paths: int = 1_000_000
    seed: int = 42
    outputs: tuple[str, ...] = OUTPUT_GROUPS
    source: str = ""


_SCHEMA = {
    "market": {"mu1": float, "mu2": float, "sigma1": float, "sigma2": float, "rho12": float, "r": float},
    "strategy": {"alpha": float, "t": float, "v0": float, "multipliers": "floats"},
    "run": {"moment_order": int, "paths": int, "seed": int, "outputs": "names"},
}
_OPTIONAL = {("market", "r"), ("run", "moment_order"), ("run", "paths"), ("run", "seed"), ("run", "outputs")}


def default_scenario_path() -> Path:
    return Path(str(resources.files("perfpart") / "data" / "standard.ini"))


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to 1-based line numbers, for diagnostics."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            index[(section, "")] = no
        elif section and "=" in line and not line.startswith(("#", ";")):
            index[(section, line.split("=", 1)[0].strip().lower())] = no
    return index


def _convert(kind, text):
    if kind is float:
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind is int:
        return int(text)
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(float(x) for x in items) if kind == "floats" else tuple(x.lower() for x in items)


def parse_scenario(path) -> Scenario:
    """Read a scenario file. Every problem is reported with its line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(path, None, f"cannot read scenario: {exc.strerror}") from None
    lines = _line_index(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ScenarioError(path, getattr(exc, "lineno", None), exc.message.splitlines()[0]) from None

    values = {}
    for section in cp.sections():
        if section.lower() not in _SCHEMA:
            raise ScenarioError(path, lines.get((section.lower(), "")), f"unknown section [{section}]")
    for section, keys in _SCHEMA.items():
        if not cp.has_section(section):
            raise ScenarioError(path, None, f"missing section [{section}]")
        for key in cp[section]:
            if key not in keys:
                raise ScenarioError(path, lines.get((section, key)), f"unknown key {key!r} in [{section}]")
        for key, kind in keys.items():
            if key not in cp[section]:
                if (section, key) in _OPTIONAL:
                    continue
                raise ScenarioError(path, lines.get((section, "")), f"missing key {key!r} in [{section}]")
            try:
                values[(section, key)] = _convert(kind, cp[section][key])
            except ValueError as exc:
                raise ScenarioError(
                    path, lines.get((section, key)), f"bad value for {key!r}: {cp[section][key]!r} ({exc})"
                ) from None

    def at(section, key):
        return lines.get((section, key)) or lines.get((section, ""))

    try:
        market = MarketParams(
            mu1=values[("market", "mu1")],
            mu2=values[("market", "mu2")],
            sigma1=values[("market", "sigma1")],
            sigma2=values[("market", "sigma2")],
            rho12=values[("market", "rho12")],
            r=values.get(("market", "r"), 0.0),
        )
    except ValidationError as exc:
        raise ScenarioError(path, at("market", ""), str(exc)) from None
    outputs = values.get(("run", "outputs"), OUTPUT_GROUPS)
    for name in outputs:
        if name not in OUTPUT_GROUPS:
            raise ScenarioError(path, at("run", "outputs"), f"unknown output {name!r}; choose from {OUTPUT_GROUPS}")
    multipliers = values[("strategy", "multipliers")]
    if any(not m > 0 for m in multipliers):
        raise ScenarioError(path, at("strategy", "multipliers"), "multipliers must be positive")
    scn = Scenario(
        market=market,
        alpha=values[("strategy", "alpha")],
        T=values[("strategy", "t")],
        v0=values[("strategy", "v0")],
        multipliers=multipliers,
        moment_order=values.get(("run", "moment_order"), 4),
        paths=values.get(("run", "paths"), 1_000_000),
        seed=values.get(("run", "seed"), 42),
        outputs=outputs,
        source=str(path),
    )
    for key, ok, msg in (
        ("t", scn.T > 0, "T must be > 0"),
        ("v0", scn.v0 > 0, "v0 must be > 0"),
    ):
        if not ok:
            raise ScenarioError(path, at("strategy", key), msg)
    _check_run(scn, path, at)
    return scn


def _check_run(scn: Scenario, path=None, at=lambda s, k: None):
    if not 2 <= scn.moment_order <= 8:
        raise ScenarioError(path or scn.source, at("run", "moment_order"), "moment_order must lie in [2, 8]")
    if scn.paths < 2 or scn.paths % 2:
        raise ScenarioError(path or scn.source, at("run", "paths"), "paths must be an even number >= 2")
    if scn.seed < 0:
        raise ScenarioError(path or scn.source, at("run", "seed"), "seed must be >= 0")


def fmt(x) -> str:
    """Locale-independent number text: ``.12g``, scientific from 1e6 up."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    return f"{x:.12e}" if abs(x) >= 1e6 else f"{x:.12g}"


def _csv(header, rows) -> str:
    out = [",".join(header)]
    out += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
    return "\n".join(out) + "\n"


def _mult_label(m) -> str:
    return f"{m:g}"


def _columns(scn: Scenario, obpp: StrategySpec, mstar: float):
    cols = [("obpp", obpp), ("cppp_mstar", StrategySpec("cppp", scn.alpha, scn.T, scn.v0, m=mstar))]
    cols += [(f"cppp_m{_mult_label(m)}", StrategySpec("cppp", scn.alpha, scn.T, scn.v0, m=m)) for m in scn.multipliers]
    return cols


STAT_ROWS = (("mean", 1), ("std", 2), ("skewness", 3), ("kurtosis", 4))


def _stat(mv, name):
    if name == "kurtosis":
        return mv.excess_kurtosis if REPORTED_KURTOSIS == "excess" else mv.kurtosis
    return getattr(mv, name)


def moments_table(scn: Scenario, obpp: StrategySpec, mstar: float):
    """Analytic and MC statistics per column, plus the kurtosis verdict."""
    K = scn.moment_order
    batch = sample_paths(scn.market, scn.v0, scn.v0, scn.T, n_paths=scn.paths, seed=scn.seed)
    cols = _columns(scn, obpp, mstar)
    analytic, mc = [], []
    for _, spec in cols:
        analytic.append(strategy_moments(spec, scn.market, K=K, dimension="return"))
        mc.append(estimate_moments(simulate_strategy(spec, scn.market, batch), K, v0=scn.v0, dimension="return"))
    header = ["statistic"]
    for name, _ in cols:
        header += [f"{name}_analytic", f"{name}_mc", f"{name}_mc_se"]
    rows = []
    for stat, need in STAT_ROWS:
        if K < need:
            continue
        row = [stat]
        for a, e in zip(analytic, mc):
            se = e.std_errors.get(stat, math.nan)
            row += [_stat(a, stat), _stat(e, stat), se]
        rows.append(row)
    for k in range(1, K + 1):
        row = [f"m{k}"]
        for a, e in zip(analytic, mc):
            row += [a.raw[k - 1], e.raw[k - 1], e.std_errors[f"m{k}"]]
        rows.append(row)
    verdict = None
    if K >= 4:
        # Does the MC oracle agree with the analytic kurtosis under the reported convention?
        reported = [_stat(a, "kurtosis") for a in analytic]
        verdict = kurtosis_convention(reported, mc)
    return _csv(header, rows), verdict


def figure_payoff(scn, obpp):
    grid = np.linspace(0.0, 3.0, 301)[1:]
    cols = [("obpp", obpp)] + [
        (f"cppp_m{m}", StrategySpec("cppp", scn.alpha, scn.T, scn.v0, m=m)) for m in FIGURE_MULTIPLIERS
    ]
    series = []
    for _, spec in cols:
        rep = payoff_cross(obpp, spec, scn.market, grid)
        series.append(rep.payoff_b)
    header = ["ratio"] + [name for name, _ in cols]
    return _csv(header, zip(grid, *series))


def figure_m_star(scn):
    alphas = np.round(np.arange(0.80, 0.99 + 1e-9, 0.01), 2)
    rows = []
    for a in alphas:
        spec = calibrate(StrategySpec("obpp", float(a), scn.T, scn.v0), scn.market)
        rows.append((a, m_star(spec, scn.market)))
    return _csv(["alpha", "m_star"], rows)


def figure_implicit_multiplier(scn, obpp):
    grid = np.linspace(0.5, 2.0, 151)
    cols = [implicit_multiplier_ratio(obpp, scn.market, t * scn.T, grid) for t in FIGURE_TIMES]
    return _csv(["ratio"] + [f"t{t:g}" for t in FIGURE_TIMES], zip(grid, *cols))


def figure_multiplier_cdf(scn, obpp):
    grid = np.linspace(1.0, 30.0, 291)
    cdfs = [multiplier_distribution(obpp, scn.market, t * scn.T, scn.paths, scn.seed)(grid) for t in FIGURE_TIMES]
    return _csv(["multiplier"] + [f"t{t:g}" for t in FIGURE_TIMES], zip(grid, *cdfs))


def figure_greeks(scn, obpp):
    """Greeks against the ratio at ``t = 0.75 T`` with ``S1 = 1``.

    Gammas carry the factor ``S_i`` (so they depend on the ratio alone) and
    vega is divided by ``S1``; with ``S1 = 1`` this is the discounted vega.
    """
    grid = np.linspace(0.02, 3.0, 150)
    cols = [("obpp", obpp)] + [
        (f"cppp_m{m}", StrategySpec("cppp", scn.alpha, scn.T, scn.v0, m=m)) for m in FIGURE_MULTIPLIERS
    ]
    t = GREEK_TIME * scn.T
    table = {name: [] for name in ("delta1", "delta2", "gamma1", "gamma2", "vega")}
    for _, spec in cols:
        gs = [compute_greeks(spec, scn.market, MarketState(t, 1.0, float(R))) for R in grid]
        table["delta1"].append([g.delta1 for g in gs])
        table["delta2"].append([g.delta2 for g in gs])
        table["gamma1"].append([g.gamma1 for g in gs])
        table["gamma2"].append([g.gamma2 * R for g, R in zip(gs, grid)])
        table["vega"].append([g.vega for g in gs])
    header = ["ratio"] + [name for name, _ in cols]
    return {f"figure_{k}.csv": _csv(header, zip(grid, *v)) for k, v in table.items()}


def build_outputs(scn: Scenario) -> dict[str, str]:
    """Every output file of a run, keyed by file name. Writes nothing."""
    obpp = calibrate(StrategySpec("obpp", scn.alpha, scn.T, scn.v0), scn.market)
    mstar = m_star(obpp, scn.market)
    files: dict[str, str] = {}
    if "calibration" in scn.outputs:
        files["calibration.csv"] = _csv(
            ["quantity", "value"],
            [("p", obpp.p), ("sigma_hat", sigma_hat(scn.market)), ("m_star", mstar)],
        )
    verdict = None
    if "moments" in scn.outputs:
        files["moments.csv"], verdict = moments_table(scn, obpp, mstar)
    if "figures" in scn.outputs:
        files["figure_payoff.csv"] = figure_payoff(scn, obpp)
        files["figure_m_star_alpha.csv"] = figure_m_star(scn)
        files["figure_implicit_multiplier.csv"] = figure_implicit_multiplier(scn, obpp)
        files["figure_multiplier_cdf.csv"] = figure_multiplier_cdf(scn, obpp)
        files.update(figure_greeks(scn, obpp))
    if "metadata" in scn.outputs:
        meta = {
            "scenario": Path(scn.source).name if scn.source else None,
            "seed": scn.seed,
            "paths": scn.paths,
            "moment_order": scn.moment_order,
            "antithetic": True,
            "return_dimension": "mean = m1/v0 - 1, std = sqrt(mu2)/v0",
            "kurtosis_convention": REPORTED_KURTOSIS,
            "kurtosis_mc_check": None
            if verdict is None
            else {
                "verdict": verdict.convention,
                "resolved_columns": list(verdict.resolved),
                "z_raw": [round(z, 6) for z in verdict.z_raw],
                "z_excess": [round(z, 6) for z in verdict.z_excess],
            },
            "figure_gamma_scaling": "gamma_i multiplied by S_i; vega divided by S1 (S1 = 1)",
            "versions": {
                "perfpart": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": sorted(files),
        }
        files["run.json"] = json.dumps(meta, indent=2, sort_keys=True, allow_nan=False, default=str) + "\n"
    return files


def write_outputs(files: dict[str, str], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out / f".{name}.tmp"
        tmp.write_text(text, encoding="utf-8", newline="\n")
        os.replace(tmp, out / name)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perfpart", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write CSV/JSON outputs")
    run.add_argument("scenario", nargs="?", help="scenario file (default: the bundled standard set)")
    run.add_argument("--out", default="perfpart-out", help="output directory (default: %(default)s)")
    run.add_argument("--paths", type=int, help="Monte Carlo paths (overrides the scenario)")
    run.add_argument("--seed", type=int, help="random seed (overrides the scenario)")
    run.add_argument("--moment-order", type=int, dest="moment_order", help="highest moment K (2..8)")
    run.add_argument(
        "--self-check",
        action="store_true",
        help="run the invariant suite on the scenario instead of writing outputs",
    )
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        scn = parse_scenario(args.scenario or default_scenario_path())
        overrides = {k: getattr(args, k) for k in ("paths", "seed", "moment_order") if getattr(args, k) is not None}
        if overrides:
            scn = replace(scn, **overrides)
            _check_run(scn)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    if args.self_check:
        from .selfcheck import run_checks

        results = run_checks(scn.market, scn.alpha, scn.T, scn.v0, seed=scn.seed)
        for r in results:
            print(r.line())
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed}/{len(results)} checks passed")
        return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED

    try:
        files = build_outputs(scn)
    except CalibrationError as exc:
        print(f"error: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    write_outputs(files, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
