"""Command-line entry point: ``neurothermo {train,spectrum,thermo,ensemble,toy}``.

Every option may also be given in a flat ``key = value`` config file passed
with ``--config``; keys are option names with dashes or underscores.
Command-line flags override the file. Outputs are CSV files plus companion
gnuplot scripts.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__, spectral
from .dataio import DataError, Dataset, load_mnist, synth
from .ensemble import metropolis_sample
from .linalg import ConvergenceError, StructuralError
from .septuple import NumericError, Septuple, init_septuple, load
from .trainer import Checkpoint, ThermoTrace, TrainConfig, TrainingDiverged, analyse, dataset_losses, sgd_train

log = logging.getLogger("neurothermo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

ARCH_PRESETS = {"deep": (784, 40, 20, 10), "shallow": (784, 60, 10)}
DOWNSAMPLE = {784: 1, 196: 2, 49: 4}

THERMO_COLUMNS = ["epoch", "beta_gap", "beta_selfconsistent", "U_bulk", "U_boundary", "F", "A", "C_theta",
                  "C_20", "C_Nminus20", "S_total", "S_thermo", "mu2", "mu3", "sum_log", "n_greater",
                  "gap_location"]
SPECTRUM_COLUMNS = ["index", "lambda", "log_lambda"]
ENSEMBLE_COLUMNS = ["beta", "window_mode", "n_samples", "mean_H", "stderr_H", "U_gaussian_exact",
                    "log_z_full", "log_z_truncated", "acceptance_rate"]
TOY_COLUMNS = ["beta", "log_lambda", "minus_laplacian"]
TRAIN_LOG_COLUMNS = ["epoch", "U_boundary", "U_bulk"]


class ConfigError(ValueError):
    pass


# --- config ---------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_arch(text: str) -> tuple[int, ...]:
    if text in ARCH_PRESETS:
        return ARCH_PRESETS[text]
    try:
        sizes = tuple(int(p) for p in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"architecture must be deep, shallow or a-b-c, got {text!r}")
    if len(sizes) < 2 or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"invalid architecture {text!r}")
    return sizes


def float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in str(text).replace(" ", "").split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", choices=("synth", "mnist"), default="synth")
    p.add_argument("--mnist-dir", default="data/mnist")
    p.add_argument("--records", type=positive_int, default=1000)
    p.add_argument("--classes", type=positive_int, default=10)
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.2)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=positive_int, default=1, help="BLAS threads (1 is bit-reproducible)")
    p.add_argument("--theta", type=float, default=spectral.THETA)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurothermo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a septuple and log thermodynamic diagnostics")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--arch", type=parse_arch, default=parse_arch("64-16-8-10"))
    p.add_argument("--epochs", type=non_negative_int, default=2000)
    p.add_argument("--batch-size", type=positive_int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0, help="training (shuffle) seed")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--loss", choices=("boundary", "bulk"), default="boundary")
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--activation", choices=("tanh", "identity"), default="tanh")
    p.add_argument("--checkpoint-every", type=positive_int, default=100)
    p.add_argument("--bulk-mode", choices=("forward", "descent"), default="forward")
    p.add_argument("--bulk-budget", type=non_negative_int, default=0)

    p = sub.add_parser("spectrum", help="eigen-spectrum of the G operator for one checkpoint")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bin-width", type=float, default=0.25)

    p = sub.add_parser("thermo", help="thermodynamic records for a checkpoint sweep")
    _add_common(p)
    _add_data_args(p)
    p.add_argument("--checkpoints", nargs="+", required=True, help="checkpoint files or directories")
    p.add_argument("--bulk-mode", choices=("forward", "descent"), default="forward")
    p.add_argument("--bulk-budget", type=non_negative_int, default=0)
    p.add_argument("--fit-tail", type=float, default=1.0, help="fraction of final checkpoints used in the fit")

    p = sub.add_parser("ensemble", help="Monte Carlo sampling of a small septuple")
    _add_common(p)
    p.add_argument("--checkpoint", help="septuple checkpoint (default: random net from --arch)")
    p.add_argument("--arch", type=parse_arch, default=parse_arch("2-2-1"))
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--activation", choices=("tanh", "identity"), default="identity")
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--betas", type=float_list, default=float_list("0.5,1,2"))
    p.add_argument("--window", choices=("hard", "gaussian"), default="gaussian")
    p.add_argument("--samples", type=positive_int, default=200_000)
    p.add_argument("--burn-in", type=non_negative_int, default=10_000)
    p.add_argument("--chains", type=positive_int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("toy", help="two-peak toy model curves")
    _add_common(p)
    p.add_argument("--betas", type=float_list, default=float_list("0.25,0.5,0.73,1.0"))
    p.add_argument("--gamma", type=float, default=1.0 / 3.0)
    p.add_argument("--N", type=positive_int, default=854)
    p.add_argument("--log-lambda-min", type=float, default=-6.0)
    p.add_argument("--log-lambda-max", type=float, default=6.0)
    p.add_argument("--points", type=positive_int, default=1201)
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# --- output helpers ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_gnuplot(path: Path, data: str, columns: list[str], x: str, ys: list[str], title: str,
                  logy: bool = False, style: str = "lines") -> None:
    lines = ["set datafile separator ','", f"set title '{title}'", f"set xlabel '{x}'",
             "set key outside", "set terminal pngcairo size 900,600",
             f"set output '{Path(data).stem}.png'"]
    if logy:
        lines.append("set logscale y")
    plots = [f"'{data}' using {columns.index(x) + 1}:{columns.index(y) + 1} every ::1 with {style} title '{y}'"
             for y in ys]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def thermo_row(ck: Checkpoint) -> dict:
    r, t = ck.report, ck.thermo
    n = r.lambdas.size
    return {"epoch": ck.epoch, "beta_gap": r.beta_gap, "beta_selfconsistent": ck.beta_selfconsistent,
            "U_bulk": t.U_bulk, "U_boundary": t.U_boundary, "F": t.F, "A": t.A, "C_theta": t.C,
            "C_20": r.complexity_n.get(20, float("nan")), "C_Nminus20": r.complexity_n.get(n - 20, float("nan")),
            "S_total": t.S_total, "S_thermo": t.S_thermo, "mu2": r.mu2, "mu3": r.mu3, "sum_log": r.sum_log,
            "n_greater": t.n_greater, "gap_location": r.gap_location}


def load_data(args, input_dim: int, output_dim: int) -> Dataset:
    if args.data == "mnist":
        if input_dim not in DOWNSAMPLE:
            raise ConfigError(f"MNIST input dimension must be one of {sorted(DOWNSAMPLE)}, got {input_dim}")
        if output_dim != 10:
            raise ConfigError(f"MNIST needs 10 output neurons, got {output_dim}")
        return load_mnist(args.mnist_dir, args.records, DOWNSAMPLE[input_dim])
    if args.classes > output_dim:
        raise ConfigError(f"{args.classes} classes do not fit {output_dim} output neurons")
    data = synth(args.records, input_dim, args.classes, seed=args.data_seed, sigma=args.sigma)
    if output_dim != args.classes:
        pad = np.full((len(data), output_dim - args.classes), -0.9)
        data = Dataset(data.inputs, np.hstack([data.targets, pad]), data.source, data.labels)
    return data


def _checkpoint_files(items: list[str]) -> list[Path]:
    files = []
    for item in items:
        p = Path(item)
        files.extend(sorted(p.glob("ckpt_*.json")) if p.is_dir() else [p])
    return files


# --- commands -----------------------------------------------------------------------

def cmd_train(args, out: Path) -> None:
    s = init_septuple(args.arch, seed=args.init_seed, activation_name=args.activation, m=args.m,
                      loss_kind=args.loss)
    data = load_data(args, args.arch[0], args.arch[-1])
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                      loss_kind=args.loss, checkpoint_every=args.checkpoint_every, bulk_mode=args.bulk_mode,
                      bulk_budget=args.bulk_budget, theta=args.theta, checkpoint_dir=str(out / "checkpoints"))
    trace = ThermoTrace()

    def progress(_s: Septuple, ck: Checkpoint) -> None:
        log.info("epoch %d  U_boundary %.6g  U_bulk %.6g  mu3 %.4g", ck.epoch, ck.thermo.U_boundary,
                 ck.thermo.U_bulk, ck.report.mu3)

    try:
        sgd_train(s, data, cfg, trace, progress)
    finally:
        write_csv(out / "train_log.csv", TRAIN_LOG_COLUMNS, (vars(e) for e in trace.epochs))
        write_csv(out / "thermo.csv", THERMO_COLUMNS, (thermo_row(c) for c in trace.checkpoints))
    write_gnuplot(out / "train_log.gp", "train_log.csv", TRAIN_LOG_COLUMNS, "epoch",
                  ["U_boundary", "U_bulk"], "training losses", logy=True)
    write_gnuplot(out / "thermo.gp", "thermo.csv", THERMO_COLUMNS, "epoch", ["C_20", "C_Nminus20"],
                  "complexity", style="linespoints")


def cmd_spectrum(args, out: Path) -> None:
    s = load(args.checkpoint)
    topo = s.topology
    data = load_data(args, topo.input_ids.size, topo.output_ids.size)
    report = spectral.spectral_report(s, data.inputs, theta=args.theta)
    write_csv(out / "spectrum.csv", SPECTRUM_COLUMNS,
              ({"index": i, "lambda": lam, "log_lambda": ll}
               for i, (lam, ll) in enumerate(zip(report.lambdas, report.log_lambdas))))
    counts, left = spectral.histogram(report.log_lambdas, args.bin_width)
    if counts.size == 0:  # no dynamical eigenvalues: one bin at 0 holding the pinned ones
        counts, left = np.array([report.lambdas.size]), np.array([0.0])
    cols = ["bin_left", "bin_right", "count"]
    write_csv(out / "histogram.csv", cols,
              ({"bin_left": a, "bin_right": a + args.bin_width, "count": c} for a, c in zip(left, counts)))
    write_gnuplot(out / "histogram.gp", "histogram.csv", cols, "bin_left", ["count"],
                  "dynamical log eigenvalues", style="boxes")
    print(f"N={report.lambdas.size} sum_log={report.sum_log:.3e} mu2={report.mu2:.6g} mu3={report.mu3:.6g} "
          f"beta_gap={report.beta_gap:.6g}")


def cmd_thermo(args, out: Path) -> None:
    items = args.checkpoints.split() if isinstance(args.checkpoints, str) else args.checkpoints
    files = _checkpoint_files(items)
    if len(files) < 2:
        raise ConfigError(f"thermo needs at least 2 checkpoints, got {len(files)}")
    rows, data = [], None
    for f in files:
        s = load(f)
        if data is None:
            data = load_data(args, s.topology.input_ids.size, s.topology.output_ids.size)
        ub, uk = dataset_losses(s, data, args.bulk_mode, args.bulk_budget)
        rows.append(thermo_row(analyse(s, data, s.epoch, ub, uk, args.theta)))
    write_csv(out / "thermo.csv", THERMO_COLUMNS, rows)
    write_gnuplot(out / "thermo.gp", "thermo.csv", THERMO_COLUMNS, "epoch", ["C_20", "C_Nminus20"],
                  "complexity", style="linespoints")
    u = np.array([r["U_bulk"] for r in rows])
    fit_rows = []
    for col in ("C_20", "C_Nminus20"):
        c = np.array([r[col] for r in rows])
        try:
            fit = spectral.complexity_loss_fit(c, u, args.fit_tail)
        except ValueError as exc:  # e.g. identical losses: no slope to report
            log.warning("no %s fit: %s", col, exc)
            fit = spectral.LineFit(float("nan"), float("nan"), float("nan"))
        fit_rows.append({"series": col, "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2})
        print(f"{col} = {fit.intercept:.6g} + {fit.slope:.6g} log U   (R^2 {fit.r2:.4f})")
    write_csv(out / "slope.csv", ["series", "slope", "intercept", "r2"], fit_rows)


def cmd_ensemble(args, out: Path) -> None:
    if args.checkpoint:
        s = load(args.checkpoint)
    else:
        s = init_septuple(args.arch, seed=args.init_seed, activation_name=args.activation, m=args.m)
    rows = []
    for beta in args.betas:
        if beta <= 0:
            raise ConfigError(f"beta must be positive, got {beta}")
        est = metropolis_sample(s, beta, args.window, args.samples, args.burn_in, seed=args.seed,
                                n_chains=args.chains)
        if est.flagged:
            log.warning("beta=%g: acceptance rate %.3f outside the tuned band", beta, est.acceptance_rate)
        rows.append({"beta": beta, "window_mode": est.window_mode, "n_samples": est.n_samples,
                     "mean_H": est.mean_H, "stderr_H": est.stderr_H, "U_gaussian_exact": est.U_gaussian_exact,
                     "log_z_full": est.log_z_analytic_full, "log_z_truncated": est.log_z_analytic_truncated,
                     "acceptance_rate": est.acceptance_rate})
        print(f"beta={beta:g} <H>={est.mean_H:.6g} +- {est.stderr_H:.2g}  gaussian U={est.U_gaussian_exact:.6g}")
    write_csv(out / "ensemble.csv", ENSEMBLE_COLUMNS, rows)
    write_gnuplot(out / "ensemble.gp", "ensemble.csv", ENSEMBLE_COLUMNS, "beta", ["mean_H", "U_gaussian_exact"],
                  "ensemble average loss", style="linespoints")


def cmd_toy(args, out: Path) -> None:
    if not 0 < args.gamma < 1:
        raise ConfigError(f"gamma must lie in (0, 1), got {args.gamma}")
    if any(b <= 0 for b in args.betas):
        raise ConfigError("betas must be positive")
    grid = np.linspace(args.log_lambda_min, args.log_lambda_max, args.points)
    rows, extrema = [], []
    for beta in args.betas:
        y = spectral.toy_minus_laplacian(beta, args.gamma, args.N, grid)
        rows.extend({"beta": beta, "log_lambda": u, "minus_laplacian": v} for u, v in zip(grid, y))
        for e in spectral.toy_extrema(beta, args.gamma, args.N):
            extrema.append({"beta": beta, "log_lambda": e.log_lambda, "kind": e.kind, "value": e.value})
    write_csv(out / "toy.csv", TOY_COLUMNS, rows)
    write_csv(out / "toy_extrema.csv", ["beta", "log_lambda", "kind", "value"], extrema)
    plots = [f"'toy.csv' using 2:($1=={b!r} ? $3 : 1/0) every ::1 with lines title 'beta={b:g}'"
             for b in args.betas]
    (out / "toy.gp").write_text("\n".join([
        "set datafile separator ','", "set title 'two-peak toy model'", "set xlabel 'log lambda'",
        "set ylabel '-Laplacian F'", "set terminal pngcairo size 900,600", "set output 'toy.png'",
        "plot " + ", \\\n     ".join(plots)]) + "\n", encoding="utf-8")


COMMANDS = {"train": cmd_train, "spectrum": cmd_spectrum, "thermo": cmd_thermo, "ensemble": cmd_ensemble,
            "toy": cmd_toy}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    except ImportError:  # pragma: no cover
        limiter = nullcontext()
    try:
        out.mkdir(parents=True, exist_ok=True)
        with limiter:
            COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ConvergenceError, TrainingDiverged, spectral.DomainError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StructuralError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
