"""Command-line interface.

Subcommands
-----------
``monitor``     stream CSV rows (file or stdin), train on the first ``m``
                rows and report the detectors for every later row
``quantiles``   print critical values of the limit laws
``experiment``  run a size or power study described by a plan file
``replay``      run the detectors over a CSV in phases, retraining after
                every detector has rejected

Exit codes: 0 when no detector rejected, 2 when ``monitor`` saw a
rejection, 1 on any input or configuration error. Results go to standard
output as CSV and diagnostics go to standard error. Every session option can
also be set in a flat ``key=value`` file passed with ``--config``; keys are
the long option names (``t-lower`` or ``t_lower``). Command-line flags
override the file.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .core import NotPositiveDefinite, WeightFunction, invert_to_norm, parse_detectors
from .detectors import HorizonExceeded, Monitor, MonitorConfig, first_rejections
from .experiments import (
    DataModel,
    ExperimentPlan,
    power_experiment,
    results_to_csv,
    size_experiment,
)
from .functionals import ScoreStream, prefix_sums
from .limits import LimitSpec, MCSettings, QuantileCache, critical_value, is_exact
from .lrv import LRVConfig, bandwidth_rule, lrv_estimate

log = logging.getLogger("openend")

EXIT_OK, EXIT_ERROR, EXIT_REJECT = 0, 1, 2


class CLIError(Exception):
    pass


def fmt(x: float) -> str:
    """Six significant digits, the precision of all reported values."""
    return f"{x:.6g}"


# configuration -------------------------------------------------------------

def read_key_values(path: str) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}, line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _session_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("session")
    g.add_argument("--config", help="key=value file with defaults for these options")
    g.add_argument("--functional", choices=("mean", "lm"), default="mean")
    g.add_argument("--m", type=_int, default=None, help="training size (required)")
    g.add_argument("--gamma", type=_float, default=0.0)
    g.add_argument("--alpha", type=_float, default=0.05)
    g.add_argument("--epsilon", type=_float, default=1e-10)
    g.add_argument("--t-lower", dest="t_lower", type=_float, default=0.0)
    g.add_argument("--T", dest="T", type=_float, default=None,
                   help="closed-end horizon factor (monitor T*m observations)")
    g.add_argument("--detectors", default="E,Q,P")
    g.add_argument("--bandwidth", type=_float, default=None, help="explicit LRV bandwidth")
    g.add_argument("--bandwidth-rule", dest="bandwidth_rule", choices=("weak", "strong"), default="weak")
    g.add_argument("--q-overlap", dest="q_overlap", action="store_true", default=False,
                   help="post-training average of Q includes observation m")
    g.add_argument("--header", action="store_true", default=False, help="input has a header line")
    g.add_argument("--log-returns", dest="log_returns", action="store_true", default=False,
                   help="transform each column to log(x_t) - log(x_{t-1}) before use")
    _mc_options(g)


def _mc_options(g) -> None:
    g.add_argument("--seed", type=_int, default=MCSettings().seed, help="Monte Carlo seed")
    g.add_argument("--runs", type=_int, default=MCSettings().runs, help="Monte Carlo paths")
    g.add_argument("--grid", type=_int, default=MCSettings().grid, help="Monte Carlo grid size")
    g.add_argument("--cache", default=None, help="JSON file caching critical values")


_BOOL_KEYS = {"q_overlap", "header", "log_returns"}


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = read_key_values(args.config)
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            if key not in known or key in ("config", "help", "command"):
                raise CLIError(f"{args.config}: unknown option {key!r}")
            action = known[key]
            try:
                if key in _BOOL_KEYS:
                    defaults[key] = _bool(value)
                elif action.type is not None:
                    defaults[key] = action.type(value)
                else:
                    defaults[key] = value
            except argparse.ArgumentTypeError as exc:
                raise CLIError(f"{args.config}: {key}: {exc}") from None
            if action.choices is not None and defaults[key] not in action.choices:
                raise CLIError(f"{args.config}: {key} must be one of {', '.join(action.choices)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


@dataclass(frozen=True)
class Session:
    functional: str
    m: int
    weight: WeightFunction
    alpha: float
    detectors: tuple
    bandwidth: float
    T: float
    q_overlap: bool
    mc: MCSettings
    cache: QuantileCache | None

    @classmethod
    def from_args(cls, args) -> "Session":
        if args.m is None:
            raise CLIError("--m is required")
        if args.m < 2:
            raise CLIError("--m must be at least 2")
        if not 0 < args.alpha < 1:
            raise CLIError("--alpha must lie in (0, 1)")
        T = math.inf if args.T is None else args.T
        if not T > 0:
            raise CLIError("--T must be positive")
        try:
            weight = WeightFunction(args.gamma, args.epsilon, args.t_lower, T)
            detectors = parse_detectors(args.detectors)
            bw = args.bandwidth if args.bandwidth is not None else bandwidth_rule(args.m, args.bandwidth_rule)
            LRVConfig(bw)
            mc = MCSettings(args.runs, args.grid, args.seed)
        except ValueError as exc:
            raise CLIError(str(exc)) from None
        cache = QuantileCache(args.cache) if args.cache else None
        return cls(args.functional, args.m, weight, args.alpha, detectors, bw, T,
                   args.q_overlap, mc, cache)

    @property
    def horizon(self) -> int | None:
        return math.ceil(self.T * self.m) if math.isfinite(self.T) else None

    def critical_values(self, dim: int) -> dict:
        return {
            kind: critical_value(LimitSpec(kind, self.weight.gamma, dim, self.T, self.weight.epsilon),
                                 self.alpha, self.mc, self.cache)
            for kind in self.detectors
        }

    def monitor_config(self, dim: int) -> MonitorConfig:
        return MonitorConfig(self.m, self.critical_values(dim), self.weight, self.horizon, self.q_overlap)


# input ---------------------------------------------------------------------

class RowReader:
    """Parse comma-separated numeric rows with line-numbered errors.

    ``row_number`` of each yielded row counts data rows of the input (1-based,
    header excluded), before any log-return transform.
    """

    def __init__(self, lines, header: bool = False, log_returns: bool = False, name: str = "<stdin>"):
        self.lines = lines
        self.header = header
        self.log_returns = log_returns
        self.name = name
        self.width = None

    def __iter__(self):
        header_pending = self.header
        prev = None
        row_number = 0
        for lineno, line in enumerate(self.lines, start=1):
            text = line.strip()
            if not text:
                continue
            if header_pending:
                header_pending = False
                continue
            row_number += 1
            fields = [f.strip() for f in text.split(",")]
            try:
                row = np.array([float(f) for f in fields])
            except ValueError:
                bad = next(f for f in fields if not _is_float(f))
                raise CLIError(f"{self.name}, line {lineno}: not a number: {bad!r}") from None
            if not np.all(np.isfinite(row)):
                raise CLIError(f"{self.name}, line {lineno}: non-finite value")
            if self.width is None:
                self.width = row.shape[0]
            elif row.shape[0] != self.width:
                raise CLIError(f"{self.name}, line {lineno}: expected {self.width} columns, got {row.shape[0]}")
            if self.log_returns:
                if np.any(row <= 0):
                    raise CLIError(f"{self.name}, line {lineno}: log returns need positive values")
                logged = np.log(row)
                if prev is not None:
                    yield row_number, logged - prev
                prev = logged
            else:
                yield row_number, row


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _open_input(path: str | None):
    if path is None or path == "-":
        return sys.stdin, "<stdin>"
    try:
        return open(path, encoding="utf-8"), path
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from None


def _stream(functional: str, width: int) -> ScoreStream:
    try:
        return ScoreStream(functional, width)
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def _degenerate(context: str = "") -> CLIError:
    where = f" ({context})" if context else ""
    return CLIError(f"degenerate long-run variance estimate{where}: increase --m or lower --bandwidth")


# monitor -------------------------------------------------------------------

def monitor_header(detectors) -> str:
    cols = ["k"]
    for kind in detectors:
        cols += [kind.value, f"{kind.value}_weighted", f"{kind.value}_rejected"]
    return ",".join(cols)


def monitor_line(report, detectors) -> str:
    """``k`` then raw value, weighted value and a 0/1 flag per detector."""
    parts = [str(report.k)]
    for kind in detectors:
        parts += [fmt(report.raw[kind]), fmt(report.weighted[kind]), "1" if report.rejected[kind] else "0"]
    return ",".join(parts)


def cmd_monitor(args, out=sys.stdout) -> int:
    session = Session.from_args(args)
    fh, name = _open_input(args.input)
    try:
        reader = RowReader(fh, args.header, args.log_returns, name)
        training = []
        monitor = None
        stream = None
        for _, row in reader:
            if stream is None:
                stream = _stream(session.functional, reader.width)
            if monitor is None:
                training.append(stream.score(row))
                if len(training) == session.m:
                    cfg = session.monitor_config(stream.dim)
                    try:
                        monitor = Monitor.from_training(np.array(training), cfg, LRVConfig(session.bandwidth))
                    except NotPositiveDefinite:
                        raise _degenerate() from None
                    out.write(monitor_header(cfg.detectors) + "\n")
                continue
            try:
                report = monitor.step(stream.score(row))
            except HorizonExceeded:
                log.info("closed-end horizon of %d observations reached; ignoring remaining rows",
                         monitor.config.horizon)
                break
            out.write(monitor_line(report, monitor.config.detectors) + "\n")
            if args.stop_on_reject and monitor.all_rejected:
                break
        if monitor is None:
            raise CLIError(f"{name}: need at least m={session.m} rows for training, got {len(training)}")
    finally:
        if fh is not sys.stdin:
            fh.close()
    rejected = {k: v for k, v in monitor.first_rejection.items() if v is not None}
    if rejected:
        detail = ", ".join(f"{k.value} at k={v}" for k, v in rejected.items())
        print(f"rejection: {detail}", file=sys.stderr)
        return EXIT_REJECT
    print(f"no rejection after k={monitor.k} monitored observations", file=sys.stderr)
    return EXIT_OK


# quantiles -----------------------------------------------------------------

def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CLIError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def cmd_quantiles(args, out=sys.stdout) -> int:
    try:
        kinds = parse_detectors(args.kinds)
        mc = MCSettings(args.runs, args.grid, args.seed)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    gammas = _floats(args.gammas, "--gammas")
    alphas = _floats(args.alphas, "--alphas")
    dims = [int(v) for v in _floats(args.p, "--p")]
    T = math.inf if args.T is None else args.T
    cache = QuantileCache(args.cache) if args.cache else None
    out.write("kind,gamma,p,T,alpha,quantile,method\n")
    for p in dims:
        for gamma in gammas:
            for kind in kinds:
                try:
                    spec = LimitSpec(kind, gamma, p, T, args.epsilon)
                except ValueError as exc:
                    raise CLIError(str(exc)) from None
                method = "exact" if is_exact(spec) else "mc"
                for alpha in alphas:
                    if not 0 < alpha < 1:
                        raise CLIError(f"alpha must lie in (0, 1), got {alpha}")
                    q = critical_value(spec, alpha, mc, cache)
                    out.write(f"{kind.value},{gamma:g},{p},{T:g},{alpha:g},{q:.4f},{method}\n")
    return EXIT_OK


# experiment ----------------------------------------------------------------

PLAN_KEYS = {
    "model", "literal_volatility", "m", "horizon", "gamma", "alpha", "detectors", "replications",
    "seed", "bandwidth", "true_lrv", "T", "epsilon", "deltas", "k_stars", "runs", "grid", "mc_seed",
}


def plan_from_file(path: str) -> tuple[ExperimentPlan, list | None, list | None]:
    """Read an experiment plan; ``deltas``/``k_stars`` present means a power study."""
    raw = read_key_values(path)
    unknown = set(raw) - PLAN_KEYS
    if unknown:
        raise CLIError(f"{path}: unknown plan keys: {', '.join(sorted(unknown))}")
    if "model" not in raw:
        raise CLIError(f"{path}: 'model' is required")
    try:
        model = DataModel(raw["model"], _bool(raw.get("literal_volatility", "false")))
        mc_default = MCSettings()
        mc = MCSettings(int(raw.get("runs", mc_default.runs)), int(raw.get("grid", mc_default.grid)),
                        int(raw.get("mc_seed", mc_default.seed)))
        bw = raw.get("bandwidth")
        if bw is not None and bw not in ("weak", "strong"):
            bw = float(bw)
        kw = dict(
            model=model,
            m=int(raw.get("m", 100)),
            gamma=float(raw.get("gamma", 0.0)),
            alpha=float(raw.get("alpha", 0.05)),
            detectors=raw.get("detectors", "E,Q,P"),
            replications=int(raw.get("replications", 1000)),
            seed=int(raw.get("seed", 0)),
            bandwidth=bw,
            use_true_lrv=_bool(raw.get("true_lrv", "false")),
            closed_end_T=float(raw["T"]) if "T" in raw else None,
            epsilon=float(raw.get("epsilon", 1e-10)),
            mc=mc,
        )
        if "horizon" in raw:
            kw["horizon"] = int(raw["horizon"])
        elif model.is_lm:
            kw["horizon"] = 1500
        deltas = _floats(raw["deltas"], "deltas") if "deltas" in raw else None
        k_stars = [int(v) for v in _floats(raw["k_stars"], "k_stars")] if "k_stars" in raw else None
        if (deltas is None) != (k_stars is None):
            raise CLIError(f"{path}: a power study needs both 'deltas' and 'k_stars'")
        plan = ExperimentPlan(**kw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise CLIError(f"{path}: {exc}") from None
    return plan, deltas, k_stars


def cmd_experiment(args, out=sys.stdout) -> int:
    plan, deltas, k_stars = plan_from_file(args.plan)
    cache = QuantileCache(args.cache) if args.cache else None
    try:
        if deltas is None:
            results = [size_experiment(plan, cache)]
        else:
            results = power_experiment(plan, deltas, k_stars, cache)
    except ValueError as exc:
        raise CLIError(f"{args.plan}: {exc}") from None
    degenerate = results[0].degenerate
    if degenerate:
        print(f"{degenerate} replications excluded (degenerate long-run variance)", file=sys.stderr)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            results_to_csv(results, fh)
    else:
        results_to_csv(results, out)
    return EXIT_OK


# replay --------------------------------------------------------------------

@dataclass(frozen=True)
class Phase:
    """One training-plus-monitoring pass.

    Rows are 0-based indices into the (transformed) data. ``rejections``
    maps each detector to the 0-based row of its first rejection or ``None``.
    """

    index: int
    train_start: int
    train_end: int
    rejections: dict
    ks: dict


def replay_phases(rows: np.ndarray, session: Session) -> list[Phase]:
    """Phase decomposition of ``rows`` under the restart rule.

    A phase trains on ``m`` rows and monitors until every detector has
    rejected. The next phase trains on the ``m`` rows starting at the row of
    the last rejection. With a closed-end horizon a phase also ends when the
    horizon is reached; if nothing rejected the next phase starts right
    after the window.
    """
    n = rows.shape[0]
    m = session.m
    if n < m:
        raise CLIError(f"phase 1: need at least m={m} rows for training, got {n}")
    stream = _stream(session.functional, rows.shape[1])
    scores = stream.scores(rows)
    crit = session.critical_values(stream.dim)
    lrv_cfg = LRVConfig(session.bandwidth)
    phases = []
    start = 0
    while True:
        idx = len(phases) + 1
        if n - start < m:
            log.warning("phase %d: only %d rows left after row %d, fewer than m=%d; stopping",
                        idx, n - start, start + 1, m)
            break
        try:
            norm = invert_to_norm(lrv_estimate(scores[start : start + m], lrv_cfg))
        except NotPositiveDefinite:
            raise _degenerate(f"phase {idx}, training rows {start + 1}-{start + m}") from None
        horizon = n - start - m
        if session.horizon is not None:
            horizon = min(horizon, session.horizon)
        if horizon > 0:
            first = first_rejections(prefix_sums(scores[start : start + m + horizon]), m, horizon,
                                     norm, session.weight, crit, session.q_overlap)
        else:
            first = {k: None for k in crit}
        rows_at = {k: (None if v is None else start + m + v - 1) for k, v in first.items()}
        phases.append(Phase(idx, start, start + m - 1, rows_at, first))
        hit = [r for r in rows_at.values() if r is not None]
        if len(hit) == len(rows_at):
            start = max(hit)
        elif session.horizon is not None and start + m + horizon < n:
            start = max(hit) if hit else start + m + horizon
        else:
            break
    return phases


def cmd_replay(args, out=sys.stdout) -> int:
    session = Session.from_args(args)
    fh, name = _open_input(args.input)
    try:
        reader = RowReader(fh, args.header, args.log_returns, name)
        numbered = list(reader)
    finally:
        if fh is not sys.stdin:
            fh.close()
    if not numbered:
        raise CLIError(f"{name}: no data rows")
    numbers = [r for r, _ in numbered]
    rows = np.array([row for _, row in numbered])
    phases = replay_phases(rows, session)
    out.write("phase,train_start,train_end,detector,k,row,status\n")
    for ph in phases:
        for kind in session.detectors:
            k = ph.ks[kind]
            r = ph.rejections[kind]
            if k is None:
                tail = ",,did not stop"
            else:
                tail = f"{k},{numbers[r]},rejected"
            out.write(f"{ph.index},{numbers[ph.train_start]},{numbers[ph.train_end]},{kind.value},{tail}\n")
    return EXIT_OK


# entry point ---------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="openend", description="Sequential change monitoring.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    subs = parser.add_subparsers(dest="command", required=True)

    mon = subs.add_parser("monitor", help="monitor a CSV stream")
    mon.add_argument("input", nargs="?", default=None, help="CSV file, '-' or omitted for stdin")
    mon.add_argument("--stop-on-reject", dest="stop_on_reject", action="store_true", default=False,
                     help="stop once every detector has rejected")
    _session_options(mon)

    qua = subs.add_parser("quantiles", help="critical values of the limit laws")
    qua.add_argument("--config")
    qua.add_argument("--kinds", default="E,Q,P")
    qua.add_argument("--gammas", default="0,0.25,0.45")
    qua.add_argument("--alphas", default="0.01,0.05,0.1")
    qua.add_argument("--p", default="1")
    qua.add_argument("--T", dest="T", type=_float, default=None)
    qua.add_argument("--epsilon", type=_float, default=1e-10)
    _mc_options(qua)

    exp = subs.add_parser("experiment", help="run a simulation plan")
    exp.add_argument("plan", help="key=value plan file")
    exp.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    exp.add_argument("--cache", default=None)

    rep = subs.add_parser("replay", help="phase-wise replay with restarts")
    rep.add_argument("input", nargs="?", default=None)
    _session_options(rep)
    return parser, {"monitor": mon, "quantiles": qua, "experiment": exp, "replay": rep}


COMMANDS = {"monitor": cmd_monitor, "quantiles": cmd_quantiles, "experiment": cmd_experiment,
            "replay": cmd_replay}


def main(argv=None, out=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    out = sys.stdout if out is None else out
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s", stream=sys.stderr)
        args = _apply_config(parser, subs[args.command], argv)
        return COMMANDS[args.command](args, out)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_ERROR if exc.code else EXIT_OK
    except (CLIError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BrokenPipeError:
        # downstream reader closed early (e.g. ``| head``)
        try:
            sys.stdout = open(os.devnull, "w")
        except OSError:
            pass
        return EXIT_OK
