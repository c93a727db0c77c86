"""Experiment orchestration: config parsing, depth sweeps, run records.

A run is fully described by a JSON config (numbers as decimal strings,
so 256-bit values never pass through a double) and a seed.  Executing
one produces a directory with run.json (the full record), fixed-schema
CSV tables, and two-column .dat files ready for plotting.  Identical
config and seed reproduce every CSV and .dat byte for byte; wall-clock
timings therefore live only in run.json.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import gmpy2

from . import __version__
from .analysis import (ConvergenceRecord, MobiusApproximant, compute_mn,
                       convergence_to_csv, denjoy_check, deviation,
                       tau_diagnostics, zoom, zqn_identity_check)
from .errors import ConfigError, IncompatibleRuns, RauzylabError
from .giem import affine_iem, ko_iem, moebius_iem, standard_iem
from .martingale import (conditional_expectation_check, eta_sequence, h_n,
                         lp_norm, martingale_to_csv, nonlinearity_l2_sq,
                         phi_n, residual_l2)
from .numerics import PrecisionContext, decimal_str, fit_line, parse_exact
from .partition import build_partition
from .rauzy import (check_k_bounded, check_no_connection, history_to_csv,
                    renormalize, state_at)

KINDS = ("convergence", "martingale", "denjoy", "combinatorics",
         "diagnostics")

_CONFIG_KEYS = {
    "kind", "family", "mode", "float_bits", "depth", "grid_points",
    "quad_tol", "seed", "out", "pairs", "samples_per_letter", "tau_grid",
    "ref_z0", "anchor_tol", "norm_p", "lam", "k", "connection_depth",
}

_FAMILY_KEYS = {
    "standard": {"kind", "lengths", "pair"},
    "affine": {"kind", "lengths", "pair", "slopes"},
    "moebius": {"kind", "lengths", "pair", "coeffs", "image_lengths"},
    "ko": {"kind", "lengths", "pair", "amplitude", "center",
           "smooth_amplitude", "zero_mean", "image_lengths"},
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    kind: str
    family: dict
    depth: int
    out: str
    mode: str = "float"
    float_bits: int = 256
    grid_points: int = 129
    quad_tol: str = "1e-20"
    seed: int = 0
    pairs: int = 500
    samples_per_letter: int = 20
    tau_grid: int = 9
    ref_z0: str = "0.5"
    anchor_tol: str = None
    norm_p: str = "2"
    lam: str = None
    k: int = None
    connection_depth: int = 200

    def to_dict(self):
        data = {
            "kind": self.kind, "family": self.family, "depth": self.depth,
            "out": self.out, "mode": self.mode,
            "float_bits": self.float_bits, "grid_points": self.grid_points,
            "quad_tol": self.quad_tol, "seed": self.seed,
        }
        extras = {
            "convergence": (("lam", self.lam),),
            "martingale": (("norm_p", self.norm_p), ("lam", self.lam)),
            "denjoy": (("pairs", self.pairs),
                       ("samples_per_letter", self.samples_per_letter)),
            "combinatorics": (("k", self.k),
                              ("connection_depth", self.connection_depth)),
            "diagnostics": (("tau_grid", self.tau_grid),
                            ("ref_z0", self.ref_z0),
                            ("anchor_tol", self.anchor_tol)),
        }
        for key, value in extras[self.kind]:
            if value is not None:
                data[key] = value
        return data


def _want(data, key, types, where):
    value = data[key]
    if not isinstance(value, types):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{where}: field {key!r} must be {names}, "
                          f"got {type(value).__name__}")
    return value


def _as_decimal(value, key, where):
    if isinstance(value, (int, float)):
        value = repr(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: field {key!r} must be a decimal string")
    try:
        parse_exact(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: field {key!r}: {exc}") from exc
    return value


def config_from_dict(data, where="config") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got "
                          f"{type(data).__name__}")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown fields {unknown}")
    for required in ("kind", "family", "depth", "out"):
        if required not in data:
            raise ConfigError(f"{where}: missing required field {required!r}")
    kind = _want(data, "kind", (str,), where)
    if kind not in KINDS:
        raise ConfigError(f"{where}: kind must be one of {list(KINDS)}, "
                          f"got {kind!r}")
    family = _want(data, "family", (dict,), where)
    if "kind" not in family:
        raise ConfigError(f"{where}: family.kind is required")
    fam_kind = family["kind"]
    if fam_kind not in _FAMILY_KEYS:
        raise ConfigError(f"{where}: family.kind must be one of "
                          f"{sorted(_FAMILY_KEYS)}, got {fam_kind!r}")
    unknown = sorted(set(family) - _FAMILY_KEYS[fam_kind])
    if unknown:
        raise ConfigError(f"{where}: family ({fam_kind}): unknown fields "
                          f"{unknown}")
    if "pair" not in family:
        raise ConfigError(f"{where}: family.pair is required")

    depth = _want(data, "depth", (int,), where)
    if depth < 1:
        raise ConfigError(f"{where}: depth must be >= 1, got {depth}")
    mode = data.get("mode", "float")
    if mode not in ("float", "exact"):
        raise ConfigError(f"{where}: mode must be 'float' or 'exact', "
                          f"got {mode!r}")
    kwargs = {
        "kind": kind, "family": family, "depth": depth,
        "out": _want(data, "out", (str,), where), "mode": mode,
    }
    for key, lo in (("float_bits", 8), ("grid_points", 3), ("seed", 0),
                    ("pairs", 1), ("samples_per_letter", 1),
                    ("tau_grid", 2), ("connection_depth", 1)):
        if key in data:
            value = _want(data, key, (int,), where)
            if value < lo:
                raise ConfigError(f"{where}: {key} must be >= {lo}, "
                                  f"got {value}")
            kwargs[key] = value
    if "k" in data and data["k"] is not None:
        value = _want(data, "k", (int,), where)
        if value < 1:
            raise ConfigError(f"{where}: k must be >= 1, got {value}")
        kwargs["k"] = value
    for key in ("quad_tol", "ref_z0", "anchor_tol", "norm_p", "lam"):
        if key in data and data[key] is not None:
            kwargs[key] = _as_decimal(data[key], key, where)
    return ExperimentConfig(**kwargs)


def config_from_file(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return config_from_dict(data, where=str(path))


def golden_lengths(ctx):
    """[2 - phi, phi - 1]: the classical two-letter benchmark lengths."""
    if ctx.is_exact:
        raise ConfigError(
            "golden lengths are irrational; use float mode or pass explicit "
            "rational lengths")
    with ctx.workprec():
        root5 = gmpy2.sqrt(ctx.real(5))
        short = (3 - root5) / 2
        return [short, 1 - short]


def build_map(family, ctx):
    """Instantiate the configured exchange map family."""
    kind = family["kind"]
    pair = tuple(family["pair"])
    if len(pair) != 2:
        raise ConfigError("family.pair must be [top, bottom]")
    lengths = family.get("lengths", "golden")
    if lengths == "golden":
        lengths = golden_lengths(ctx)
    if kind == "standard":
        return standard_iem(lengths, pair, ctx)
    if kind == "affine":
        if "slopes" not in family:
            raise ConfigError("family (affine): slopes is required")
        return affine_iem(lengths, family["slopes"], pair, ctx)
    if kind == "moebius":
        if "coeffs" not in family:
            raise ConfigError("family (moebius): coeffs is required")
        return moebius_iem(lengths, pair, family["coeffs"], ctx,
                           image_lengths=family.get("image_lengths"))
    return ko_iem(lengths, pair, ctx,
                  amplitude=family.get("amplitude", "0.04"),
                  center=family.get("center", "0.5"),
                  smooth_amplitude=family.get("smooth_amplitude"),
                  zero_mean=bool(family.get("zero_mean", False)),
                  image_lengths=family.get("image_lengths"))


def make_context(config: ExperimentConfig) -> PrecisionContext:
    return PrecisionContext(mode=config.mode, float_bits=config.float_bits,
                            quad_tol=config.quad_tol,
                            grid_points=config.grid_points)


@dataclass
class RunRecord:
    """Snapshot of one executed experiment.

    ``outputs`` lists every file written (relative to ``out_dir``);
    ``checks`` holds the built-in pass/fail assertions of the kind;
    wall-clock ``timings_ms`` appear here and nowhere else.
    """

    config: dict
    kind: str
    out_dir: str
    outputs: list
    summary: dict
    checks: list
    timings_ms: dict
    provenance: dict
    tool_version: str = __version__
    started: str = ""

    def to_dict(self):
        return {
            "config": self.config, "kind": self.kind,
            "out_dir": self.out_dir, "outputs": self.outputs,
            "summary": self.summary, "checks": self.checks,
            "timings_ms": self.timings_ms, "provenance": self.provenance,
            "tool_version": self.tool_version, "started": self.started,
        }

    @property
    def failed_checks(self):
        return [c for c in self.checks if not c["ok"]]


def _dec(value, ctx):
    return None if value is None else decimal_str(value, ctx.digits)


def _write_dat(path, rows, ctx):
    with open(path, "w") as handle:
        for n, value in rows:
            handle.write(f"{n} {decimal_str(value, ctx.digits)}\n")


def _log_rows(pairs, ctx):
    """(n, log value) rows, skipping exact zeros (their log is off-scale)."""
    rows = []
    with ctx.workprec():
        for n, value in pairs:
            if value > 0:
                rows.append((n, gmpy2.log(value)))
    return rows


def _fit_contraction(norms, ctx):
    """exp(slope) of the log-norm decay; None when not contracting."""
    points = [(n, v) for n, v in enumerate(norms) if v > 0]
    if len(points) < 2:
        return None
    with ctx.workprec():
        xs = [ctx.real(n) for n, _ in points]
        ys = [gmpy2.log(v) for _, v in points]
        slope, _ = fit_line(xs, ys, ctx)
        lam = gmpy2.exp(slope)
        if 0 < lam < 1:
            return lam
    return None


def _eta_column(f, final, depth, ctx, lam_override, p):
    """(h-norms for n=1..depth, eta values aligned to those depths, lam)."""
    partitions = [build_partition(state_at(final, n))
                  for n in range(depth + 1)]
    phis = [phi_n(f, part) for part in partitions]
    norms = [lp_norm(h_n(phis[n], phis[n - 1]), p)
             for n in range(1, depth + 1)]
    if all(v == 0 for v in norms):
        return norms, [ctx.zero() for _ in norms], None, partitions, phis
    if lam_override is not None:
        lam = ctx.real(lam_override)
    else:
        lam = _fit_contraction([part.norm for part in partitions], ctx)
    if lam is None:
        return norms, None, None, partitions, phis
    etas = eta_sequence(norms, lam, ctx, p=p).values
    return norms, list(etas), lam, partitions, phis


def _run_convergence(f, final, config, ctx, out):
    norms_h, etas, lam, partitions, _ = _eta_column(
        f, final, config.depth, ctx, config.lam, config.norm_p)
    records = []
    for n in range(1, config.depth + 1):
        state = state_at(final, n)
        pnorm = partitions[n].norm
        for letter in state.pair.top:
            m = compute_mn(state, letter)
            F = MobiusApproximant(m, ctx)
            rep = deviation(zoom(state, letter), F,
                            grid_points=config.grid_points)
            with ctx.workprec():
                log_mn = ctx.zero() if m == 1 else gmpy2.log(m)
            records.append(ConvergenceRecord(
                depth=n, letter=letter, m_n=m, delta_c0=rep.c0,
                delta_c1=rep.c1, delta_l1=rep.l1, delta_l1_tv=rep.l1_tv,
                partition_norm=pnorm, log_mn=log_mn,
                eta_n=None if etas is None else etas[n - 1]))
    convergence_to_csv(records, out / "convergence.csv", ctx)
    _write_dat(out / "delta_c1.dat",
               _log_rows([(r.depth, r.delta_c1) for r in records], ctx), ctx)
    _write_dat(out / "delta_c0.dat",
               _log_rows([(r.depth, r.delta_c0) for r in records], ctx), ctx)
    _write_dat(out / "partition_norm.dat",
               _log_rows([(n, partitions[n].norm)
                          for n in range(1, config.depth + 1)], ctx), ctx)
    _write_dat(out / "log_mn.dat",
               [(r.depth, r.log_mn) for r in records], ctx)
    first = [r for r in records if r.depth == 1]
    last = [r for r in records if r.depth == config.depth]
    worst_first = max(r.delta_c1 for r in first)
    worst_last = max(r.delta_c1 for r in last)
    # both sides at arithmetic noise counts as non-growing
    floor = (Fraction(0) if ctx.is_exact
             else Fraction(1, 2 ** (ctx.float_bits - 32)))
    checks = [{
        "name": "c1_deviation_not_growing",
        "ok": bool(worst_last <= max(worst_first, floor)),
        "detail": f"delta_c1 {float(worst_first):.3e} (n=1) -> "
                  f"{float(worst_last):.3e} (n={config.depth})",
    }]
    summary = {
        "worst_delta_c1_final": _dec(worst_last, ctx),
        "worst_delta_c0_final": _dec(max(r.delta_c0 for r in last), ctx),
        "contraction_lambda": _dec(lam, ctx),
        "eta_first": None if etas is None else _dec(etas[0], ctx),
    }
    outputs = ["convergence.csv", "delta_c1.dat", "delta_c0.dat",
               "partition_norm.dat", "log_mn.dat"]
    return outputs, summary, checks


def _run_martingale(f, final, config, ctx, out):
    norms, etas, lam, partitions, phis = _eta_column(
        f, final, config.depth, ctx, config.lam, config.norm_p)
    g_sq = nonlinearity_l2_sq(f)
    residuals = [residual_l2(phi, g_sq) for phi in phis]
    defects = [conditional_expectation_check(phis[n], partitions[n - 1])
               for n in range(1, config.depth + 1)]
    eta_col = etas if etas is not None else [ctx.zero() for _ in norms]
    # the root row carries the tail sum from the first increment on
    with ctx.workprec():
        eta_root = (lam * eta_col[0] if lam is not None and eta_col
                    else ctx.zero())
    martingale_to_csv(out / "martingale.csv",
                      list(range(config.depth + 1)), norms, residuals,
                      [eta_root] + eta_col, ctx)
    _write_dat(out / "h_norm.dat",
               _log_rows(list(enumerate(norms, start=1)), ctx), ctx)
    _write_dat(out / "residual.dat",
               _log_rows(list(enumerate(residuals)), ctx), ctx)
    with ctx.workprec():
        slack = (Fraction(0) if ctx.is_exact
                 else Fraction(1, 2 ** (ctx.float_bits - 80)))
        monotone = all(b <= a + slack
                       for a, b in zip(residuals, residuals[1:]))
        worst_defect = max(defects) if defects else ctx.zero()
    checks = [
        {"name": "residual_l2_non_increasing", "ok": bool(monotone),
         "detail": f"{float(residuals[0]):.3e} -> "
                   f"{float(residuals[-1]):.3e}"},
        {"name": "tower_property",
         "ok": bool(worst_defect <= parse_exact("1e-12")),
         "detail": f"max conditional-average defect "
                   f"{float(worst_defect):.3e}"},
    ]
    summary = {
        "residual_first": _dec(residuals[0], ctx),
        "residual_final": _dec(residuals[-1], ctx),
        "tower_defect_max": _dec(worst_defect, ctx),
        "contraction_lambda": _dec(lam, ctx),
    }
    return (["martingale.csv", "h_norm.dat", "residual.dat"],
            summary, checks)


def _run_denjoy(f, final, config, ctx, out):
    rows = []
    for n in range(1, config.depth + 1):
        state = state_at(final, n)
        rep = denjoy_check(state, pairs=config.pairs,
                           samples_per_letter=config.samples_per_letter,
                           seed=config.seed)
        rows.append((n, rep))
    digits = ctx.digits
    with open(out / "denjoy.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "theta", "max_abs_log_product",
                         "exponent_ratio", "max_abs_log_ratio",
                         "pairs_within_bound"])
        for n, rep in rows:
            writer.writerow([
                n, decimal_str(rep.theta, digits),
                decimal_str(rep.max_abs_log_product, digits),
                "" if rep.exponent_ratio is None
                else decimal_str(rep.exponent_ratio, digits),
                decimal_str(rep.max_abs_log_ratio, digits),
                int(rep.pairs_within_bound)])
    _write_dat(out / "theta.dat", [(n, rep.theta) for n, rep in rows], ctx)
    all_within = all(rep.pairs_within_bound for _, rep in rows)
    worst_ratio = max((rep.exponent_ratio for _, rep in rows
                       if rep.exponent_ratio is not None), default=None)
    checks = [{
        "name": "pair_ratios_within_variation_bound",
        "ok": bool(all_within),
        "detail": f"{config.pairs} pairs per depth, depths 1..{config.depth}",
    }]
    summary = {
        "theta_final": _dec(rows[-1][1].theta, ctx),
        "worst_exponent_ratio": _dec(worst_ratio, ctx),
        "pair_count": config.pairs,
    }
    return ["denjoy.csv", "theta.dat"], summary, checks


def _run_combinatorics(f, final, config, ctx, out):
    history_to_csv(final, out / "history.csv")
    norms = []
    with open(out / "combinatorics.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "partition_norm", "atom_count"])
        for n in range(1, config.depth + 1):
            part = build_partition(state_at(final, n))
            norms.append(part.norm)
            writer.writerow([n, decimal_str(part.norm, ctx.digits),
                             len(part.atoms)])
    _write_dat(out / "partition_norm.dat",
               _log_rows(list(enumerate(norms, start=1)), ctx), ctx)
    connection = check_no_connection(f, config.connection_depth)
    k_report = None
    k_error = None
    try:
        k_report = check_k_bounded(final.history,
                                   config.k or max(1, config.depth // 2))
    except (RauzylabError, ValueError) as exc:
        k_error = str(exc)
    lam_k = None
    if k_report is not None and k_report.minimal_k is not None:
        k = k_report.minimal_k
        with ctx.workprec():
            ratios = [norms[n + k - 1] / norms[n - 1]
                      for n in range(1, len(norms) - k + 1)]
            lam_k = max(ratios) if ratios else None
    checks = [
        {"name": "no_connection_found", "ok": not connection.found,
         "detail": repr(connection)},
        {"name": "window_bound_exists",
         "ok": k_report is not None and k_report.minimal_k is not None,
         "detail": k_error or repr(k_report)},
        {"name": "partition_norm_contracts",
         "ok": lam_k is not None and bool(lam_k < 1),
         "detail": "no contraction ratio measured" if lam_k is None
                   else f"|xi(n+k)| <= {float(lam_k):.6f} |xi(n)|"},
    ]
    summary = {
        "minimal_k": None if k_report is None else k_report.minimal_k,
        "contraction_lambda_k": _dec(lam_k, ctx),
        "connection_min_distance": _dec(connection.min_distance, ctx),
        "steps_recorded": len(final.history),
    }
    return (["history.csv", "combinatorics.csv", "partition_norm.dat"],
            summary, checks)


def _run_diagnostics(f, final, config, ctx, out):
    entries = []
    worst_anchor = ctx.zero()
    worst_zqn = ctx.zero()
    max_q = 1
    sup_rows = []
    for n in range(1, config.depth + 1):
        state = state_at(final, n)
        for letter in state.pair.top:
            td = tau_diagnostics(state, letter, grid=config.tau_grid,
                                 ref_z0=config.ref_z0,
                                 anchor_tol=config.anchor_tol, nested=False)
            zqn = zqn_identity_check(state, letter, grid=config.tau_grid)
            _, mn_defect = compute_mn(state, letter, cross_check=True)
            worst_anchor = max(worst_anchor, td.anchor_residual)
            worst_zqn = max(worst_zqn, zqn)
            max_q = max(max_q, state.return_times[letter])
            entries.append({
                "depth": n, "letter": letter,
                "q": state.return_times[letter],
                "sup_tau": _dec(td.sup_tau, ctx),
                "sup_weighted_d1": _dec(td.sup_weighted_d1, ctx),
                "l1_d1": _dec(td.l1_d1, ctx),
                "l1_weighted_d2": _dec(td.l1_weighted_d2, ctx),
                "anchor_residual": _dec(td.anchor_residual, ctx),
                "s1": _dec(td.s1, ctx),
                "e_n": _dec(td.e_n, ctx),
                "zqn_residual": _dec(zqn, ctx),
                "mn_cross_defect": _dec(mn_defect, ctx),
            })
            if letter == state.pair.top[0]:
                sup_rows.append((n, td.sup_tau))
    with open(out / "diagnostics.json", "w") as handle:
        json.dump(entries, handle, indent=2, sort_keys=True)
        handle.write("\n")
    _write_dat(out / "sup_tau.dat", sup_rows, ctx)
    bound = 1000 * ctx.quad_tol
    checks = [
        {"name": "anchor_recursion_residual",
         "ok": bool(worst_anchor <= bound),
         "detail": f"worst {float(worst_anchor):.3e}, "
                   f"allowed {float(bound):.3e}"},
        {"name": "closed_form_matches_zoom",
         "ok": bool(worst_zqn <= bound * max_q),
         "detail": f"worst {float(worst_zqn):.3e}, "
                   f"allowed {float(bound * max_q):.3e}"},
    ]
    summary = {
        "worst_anchor_residual": _dec(worst_anchor, ctx),
        "worst_zqn_residual": _dec(worst_zqn, ctx),
        "records": len(entries),
    }
    return ["diagnostics.json", "sup_tau.dat"], summary, checks


_RUNNERS = {
    "convergence": _run_convergence,
    "martingale": _run_martingale,
    "denjoy": _run_denjoy,
    "combinatorics": _run_combinatorics,
    "diagnostics": _run_diagnostics,
}


def run(config: ExperimentConfig) -> RunRecord:
    """Execute one experiment and persist its outputs."""
    ctx = make_context(config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    timings = {}
    t0 = time.perf_counter()
    f = build_map(config.family, ctx)
    timings["build"] = (time.perf_counter() - t0) * 1000
    t0 = time.perf_counter()
    final = renormalize(f, config.depth)
    timings["renormalize"] = (time.perf_counter() - t0) * 1000
    t0 = time.perf_counter()
    outputs, summary, checks = _RUNNERS[config.kind](f, final, config,
                                                     ctx, out)
    timings["experiment"] = (time.perf_counter() - t0) * 1000
    record = RunRecord(
        config=config.to_dict(), kind=config.kind, out_dir=str(out),
        outputs=sorted(outputs + ["run.json"]),
        summary=summary, checks=checks, timings_ms=timings,
        provenance={
            "mode": config.mode,
            "float_bits": config.float_bits,
            "digits": ctx.digits,
            "quad_tol": config.quad_tol,
            "family": f.family,
            "family_params": f.params,
        },
        started=started,
    )
    with open(out / "run.json", "w") as handle:
        json.dump(record.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return record


def _load_run(source):
    if isinstance(source, RunRecord):
        return source.to_dict(), Path(source.out_dir)
    path = Path(source)
    if path.is_dir():
        path = path / "run.json"
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise IncompatibleRuns(f"cannot read run record {path}: "
                               f"{exc}") from exc
    except json.JSONDecodeError as exc:
        raise IncompatibleRuns(f"{path}: invalid JSON: {exc.msg}") from exc
    return data, path.parent


def _rel_diff(a, b):
    try:
        x = parse_exact(a)
        y = parse_exact(b)
    except (ValueError, TypeError):
        return None if a == b else 1.0
    denom = max(Fraction(1), abs(x), abs(y))
    diff = abs(x - y) / denom
    return None if diff == 0 else float(diff)


def _compare_csv(name, path_a, path_b, diffs):
    with open(path_a, newline="") as fa, open(path_b, newline="") as fb:
        rows_a = list(csv.reader(fa))
        rows_b = list(csv.reader(fb))
    if not rows_a or not rows_b or rows_a[0] != rows_b[0]:
        raise IncompatibleRuns(f"{name}: headers differ")
    if len(rows_a) != len(rows_b):
        raise IncompatibleRuns(
            f"{name}: row counts differ ({len(rows_a) - 1} vs "
            f"{len(rows_b) - 1})")
    header = rows_a[0]
    for ra, rb in zip(rows_a[1:], rows_b[1:]):
        for col, a, b in zip(header, ra, rb):
            if a == b:
                continue
            d = _rel_diff(a, b)
            if d is None:
                continue
            key = f"{name}:{col}"
            diffs[key] = max(diffs.get(key, 0.0), d)


def _compare_dat(name, path_a, path_b, diffs):
    la = path_a.read_text().splitlines()
    lb = path_b.read_text().splitlines()
    if len(la) != len(lb):
        raise IncompatibleRuns(f"{name}: row counts differ")
    for a, b in zip(la, lb):
        for col, x, y in zip(("x", "y"), a.split(), b.split()):
            d = _rel_diff(x, y)
            if d is not None:
                key = f"{name}:{col}"
                diffs[key] = max(diffs.get(key, 0.0), d)


def _compare_json_values(prefix, a, b, diffs):
    if isinstance(a, dict) and isinstance(b, dict):
        for key in sorted(set(a) & set(b)):
            _compare_json_values(f"{prefix}.{key}", a[key], b[key], diffs)
        return
    if isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            raise IncompatibleRuns(f"{prefix}: list lengths differ")
        for i, (x, y) in enumerate(zip(a, b)):
            _compare_json_values(f"{prefix}[{i}]", x, y, diffs)
        return
    if a == b:
        return
    d = _rel_diff(a, b)
    if d is not None:
        diffs[prefix] = max(diffs.get(prefix, 0.0), d)


def compare_runs(run_a, run_b) -> dict:
    """Per-column worst relative differences between two runs.

    Accepts RunRecord objects or paths to run directories (or their
    run.json).  Only files present in both runs are compared; identical
    runs give an empty report.  Structural mismatches (different kinds,
    headers, row counts) raise IncompatibleRuns.
    """
    data_a, dir_a = _load_run(run_a)
    data_b, dir_b = _load_run(run_b)
    kind_a = data_a.get("kind")
    kind_b = data_b.get("kind")
    if kind_a != kind_b:
        raise IncompatibleRuns(
            f"experiment kinds differ: {kind_a!r} vs {kind_b!r}")
    shared = [name for name in data_a.get("outputs", [])
              if name in data_b.get("outputs", []) and name != "run.json"]
    diffs = {}
    for name in shared:
        pa, pb = dir_a / name, dir_b / name
        if name.endswith(".csv"):
            _compare_csv(name, pa, pb, diffs)
        elif name.endswith(".dat"):
            _compare_dat(name, pa, pb, diffs)
        elif name.endswith(".json"):
            _compare_json_values(name, json.loads(pa.read_text()),
                                 json.loads(pb.read_text()), diffs)
    return diffs
