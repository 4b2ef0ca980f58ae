"""Command-line front end.

Exit codes: 0 success, 2 validation failure, 3 non-convergence,
4 estimation failure, 64 usage error, 65 data format error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .calibrate import CalibrationConfig, CalibrationProblem, calibrate, default_probes, validate_model
from .emulator import (
    CountTable,
    PortOperatorSet,
    emulate_calibration,
    fit_port_operators,
    port_operators_from_noise,
    read_counts_csv,
    read_transmission_csv,
    sample_shots,
    write_counts_csv,
    write_shotset,
)
from .errors import (
    CapacityError,
    DataFormatError,
    EstimationError,
    FitError,
    InvalidArgumentError,
    MetashadowError,
    ModelError,
    NonConvergenceError,
)
from .estimate import FIXTURES, EstimateReport, load_experiment, run_experiment, state_from_spec
from .mitigate import write_table_csv
from .noise import NoiseParams, load_noise, save_noise, scale_noise
from .povm import DESIGNS, build_povm, check_two_design
from .svgplot import curve_svg, histogram_svg

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_ESTIMATION, EXIT_USAGE, EXIT_DATA = 0, 2, 3, 4, 64, 65
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- manifest


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: Optional[int]
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    started: str = ""

    def write(self, path) -> None:
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise MetashadowError(f"manifest lists missing outputs: {missing}")
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _manifest(args, seed, inputs, outputs, t0, path) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "threads", "out")}
    m = RunManifest(
        command=args.command,
        config_hash=_config_hash(cfg),
        seed=seed,
        inputs={str(p): file_digest(p) for p in inputs if p is not None and Path(p).exists()},
        outputs=[str(p) for p in outputs],
        wall_time=round(time.perf_counter() - t0, 3),
        started=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    )
    m.write(path)


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _seed(args) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _dump(obj, path: Optional[Path]) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_povm_check(args) -> int:
    t0 = time.perf_counter()
    report = check_two_design(build_povm(args.design), seed=_seed(args))
    doc = {"design": args.design, **report.to_dict(), "passed": report.passed()}
    _dump(doc, args.out)
    if args.out is not None:
        _manifest(args, _seed(args), [], [args.out], t0, _manifest_path(args.out))
    return EXIT_OK if report.passed() else EXIT_VALIDATION


def _transmission_path(args) -> Path:
    return Path(args.transmission) if args.transmission else FIXTURES / "transmission.csv"


def cmd_fit_ports(args) -> int:
    t0 = time.perf_counter()
    src = _transmission_path(args)
    ops = fit_port_operators(read_transmission_csv(src, args.design))
    _dump(ops.to_dict(), args.out)
    for lab, res in zip(build_povm(args.design).port_labels, ops.residuals):
        print(f"{lab}\tresidual {res:.2e}", file=sys.stderr)
    if args.out is not None:
        _manifest(args, None, [src], [args.out], t0, _manifest_path(args.out))
    return EXIT_OK


def _load_ops(args) -> PortOperatorSet:
    if args.ops:
        return PortOperatorSet.from_dict(_load_json(args.ops))
    if args.noise:
        return port_operators_from_noise(load_noise(args.noise))
    return fit_port_operators(read_transmission_csv(_transmission_path(args), args.design))


def _parse_state(text: str):
    if text.lower().startswith("w") and text[1:].isdigit():
        return state_from_spec({"w": int(text[1:])})
    try:
        return state_from_spec(json.loads(text))
    except json.JSONDecodeError:
        raise UsageError(f"cannot parse state {text!r}; use w<n> or a JSON amplitude list") from None


def cmd_emulate(args) -> int:
    t0 = time.perf_counter()
    seed = _seed(args)
    if args.out is None:
        raise UsageError("emulate needs --out")
    if args.kind == "counts":
        ops = _load_ops(args)
        probes = args.probes.split(",") if args.probes else default_probes(ops.design)
        table = emulate_calibration(ops, probes, args.shots, seed)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_counts_csv(table, args.out)
        outputs = [args.out]
        manifest = _manifest_path(args.out)
    else:
        if not args.state:
            raise UsageError("emulate --kind shots needs --state")
        params = load_noise(args.noise) if args.noise else NoiseParams.zeros(args.design)
        params = scale_noise(params, args.h)
        povm = build_povm(params.design)
        shots = sample_shots(_parse_state(args.state), povm, params, args.shots, args.reps, seed, threads=args.threads)
        outputs = write_shotset(shots, args.out)
        manifest = args.out / "manifest.json"
    _manifest(args, seed, [args.ops, args.noise, args.transmission], outputs, t0, manifest)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    t0 = time.perf_counter()
    src = Path(args.counts) if args.counts else FIXTURES / "calibration_counts.csv"
    table = read_counts_csv(src, args.design)
    if args.probes:
        keep = args.probes.split(",")
        idx = [table.probes.index(p) for p in keep if p in table.probes]
        if len(idx) != len(keep):
            raise UsageError(f"probes {keep} not all present in {src}")
        table = CountTable(table.design, keep, table.counts[idx], table.injected[idx])
    cfg = CalibrationConfig(starts=args.starts, tol=args.tol, seed=_seed(args), threads=args.threads)
    try:
        result = calibrate(CalibrationProblem.from_counts(table, cfg))
    except NonConvergenceError:
        print("calibration did not converge from any start", file=sys.stderr)
        raise
    for lab, f in zip(result.diagnostics["labels"], result.per_probe_fidelity):
        print(f"{lab}\t{f:.6f}")
    print(f"objective\t{result.objective_value:.8f}")
    outputs = []
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_noise(result.lambda_opt, args.out)
        diag = args.out.with_name(args.out.stem + "_diagnostics.json")
        _dump(result.diagnostics_dict() | {"start_objectives": result.diagnostics["start_objectives"]}, diag)
        outputs = [args.out, diag]
        _manifest(args, _seed(args), [src], outputs, t0, _manifest_path(args.out))
    else:
        print(result.lambda_opt.to_json())
    return EXIT_OK


def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    noise_path = Path(args.noise) if args.noise else FIXTURES / "calibrated_noise.json"
    lam = load_noise(noise_path)
    reference = fit_port_operators(read_transmission_csv(_transmission_path(args), lam.design))
    curve = validate_model(lam, reference, args.sweep)
    doc = {
        "minimum": curve.minimum,
        "threshold": args.threshold,
        "points": [{"theta": t, "family": fam, "fidelity": f} for t, fam, f in curve],
    }
    _dump(doc, args.out)
    print(f"minimum fidelity {curve.minimum:.6f}", file=sys.stderr)
    if args.out is not None:
        _manifest(args, None, [noise_path, _transmission_path(args)], [args.out], t0, _manifest_path(args.out))
    return EXIT_OK if curve.minimum >= args.threshold else EXIT_VALIDATION


def _sweep_label(sweep: dict) -> str:
    parts = []
    for k, v in sweep.items():
        if isinstance(v, dict) and "w" in v:
            v = f"w{v['w']}"
        elif isinstance(v, list):
            v = "".join(str(x) for x in v)
        parts.append(f"{k}={v}")
    return ", ".join(parts) or "base"


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    try:
        points = load_experiment(args.config)
    except InvalidArgumentError as exc:
        raise DataFormatError(f"{args.config}: {exc}") from exc
    if args.out is None:
        raise UsageError("run needs --out")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs, index, inputs = [], [], [args.config]
    for i, (sweep, cfg) in enumerate(points):
        if args.seed is not None:
            cfg.seed = args.seed
        if isinstance(cfg.noise, str):
            inputs.append(cfg._resolve(cfg.noise))
        sink = None
        if args.save_tables:
            tdir = out / f"tables_{i:03d}"
            tdir.mkdir(exist_ok=True)

            def sink(r, rep, tdir=tdir):
                path = tdir / f"rep_{r:03d}.csv"
                write_table_csv(rep.mitigated, path)
                outputs.append(path)

        try:
            report = run_experiment(cfg, threads=args.threads, table_sink=sink)
        except (InvalidArgumentError, DataFormatError) as exc:
            raise DataFormatError(f"{args.config}: {exc}") from exc
        doc = report.to_dict() | {"sweep": sweep, "label": _sweep_label(sweep), "config": cfg.to_dict()}
        rpath, vpath = out / f"report_{i:03d}.json", out / f"values_{i:03d}.csv"
        _dump(doc, rpath)
        with open(vpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["repetition", "value"])
            for r, v in enumerate(report.values):
                w.writerow([r, repr(v)])
        outputs += [rpath, vpath]
        index.append({"report": rpath.name, "values": vpath.name, "sweep": sweep})
        print(f"{_sweep_label(sweep)}\t{report.estimator} {report.mean:.5f} +- {report.std:.5f}")
    ipath = out / "index.json"
    _dump(index, ipath)
    outputs.append(ipath)
    seed = args.seed if args.seed is not None else points[0][1].seed
    _manifest(args, seed, sorted(set(map(str, inputs))), sorted(map(str, outputs)), t0, out / "manifest.json")
    return EXIT_OK


def _collect_json(paths) -> list:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files += sorted(p.glob("report_*.json"))
        else:
            files.append(p)
    if not files:
        raise DataFormatError("no input reports")
    return [(f, _load_json(f)) for f in files]


def _x_value(v):
    if isinstance(v, dict) and "w" in v:
        return float(v["w"])
    if isinstance(v, list):
        return float(len(v))
    if isinstance(v, bool):
        return float(v)
    return float(v)


def _sweep_xlabel(key: str) -> str:
    return {"h": "error scale h", "state": "qubits", "subsystem": "subsystem size"}.get(key, key)


def cmd_plot(args) -> int:
    t0 = time.perf_counter()
    docs = _collect_json(args.inputs)
    if args.out is None:
        raise UsageError("plot needs --out")
    if args.kind == "hist":
        series = []
        for f, doc in docs:
            try:
                rep = EstimateReport.from_dict(doc)
            except DataFormatError as exc:
                raise DataFormatError(f"{f}: {exc}") from exc
            if not rep.values:
                raise DataFormatError(f"{f}: empty value list")
            label = "mitigated" if rep.mitigated else "unmitigated"
            series.append((label, rep.values))
        if len(series) > 2:
            raise UsageError("hist overlays at most two reports")
        svg = histogram_svg(series, truth=args.truth, title=args.title or docs[0][1]["estimator"], xlabel=docs[0][1]["estimator"])
    else:
        if all("points" in doc for _, doc in docs):
            series = []
            for f, doc in docs:
                pts = doc["points"]
                if not pts:
                    raise DataFormatError(f"{f}: empty point list")
                for fam in sorted({p["family"] for p in pts}):
                    sel = [p for p in pts if p["family"] == fam]
                    series.append((fam, [p["theta"] for p in sel], [p["fidelity"] for p in sel], None))
            guide = 0.99 if args.guide is None else args.guide
            svg = curve_svg(series, guide=guide, title=args.title or "model validation", xlabel="theta", ylabel="fidelity")
        else:
            series, xkey = _report_curves(docs, args.x)
            ylabel = docs[0][1].get("estimator", "value")
            svg = curve_svg(series, guide=args.guide, title=args.title or "", xlabel=_sweep_xlabel(xkey), ylabel=ylabel)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(svg)
    _manifest(args, None, [f for f, _ in docs], [args.out], t0, _manifest_path(args.out))
    return EXIT_OK


def _report_curves(docs, xkey=None):
    """Group run reports into mean/std series against one swept key."""
    groups = {}
    for f, doc in docs:
        for key in ("values", "mean", "std", "sweep"):
            if key not in doc:
                raise DataFormatError(f"{f}: missing {key!r}")
        if not doc["values"]:
            raise DataFormatError(f"{f}: empty value list")
        sweep = doc["sweep"]
        if xkey is None:
            numeric = [k for k in sweep if k != "mitigate"]
            if not numeric:
                raise DataFormatError(f"{f}: report has no swept variable to plot against")
            xkey = "h" if "h" in sweep else numeric[0]
        if xkey not in sweep:
            raise DataFormatError(f"{f}: sweep lacks {xkey!r}")
        rest = {k: v for k, v in sweep.items() if k != xkey}
        label = _sweep_label(rest)
        groups.setdefault(label, []).append((_x_value(sweep[xkey]), float(doc["mean"]), float(doc["std"])))
    series = []
    for label in sorted(groups):
        pts = sorted(groups[label])
        series.append((label, [p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts]))
    return series, xkey


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--out", type=Path, default=None, help="output file or directory")

    p = _Parser(prog="metashadow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"metashadow {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("povm-check", parents=[common], help="frame potential and measurement-channel check")
    s.add_argument("--design", choices=DESIGNS, default="octa6")
    s.set_defaults(func=cmd_povm_check)

    s = sub.add_parser("fit-ports", parents=[common], help="fit port response operators from a transmission CSV")
    s.add_argument("--transmission", help="transmission CSV (default: bundled fixture)")
    s.add_argument("--design", choices=DESIGNS, default="octa6")
    s.set_defaults(func=cmd_fit_ports)

    s = sub.add_parser("emulate", parents=[common], help="emulate calibration counts or noisy shot records")
    s.add_argument("--kind", choices=("counts", "shots"), default="counts")
    s.add_argument("--ops", help="port-operator JSON (counts)")
    s.add_argument("--noise", help="noise JSON (shots; or counts from the parametric model)")
    s.add_argument("--transmission", help="transmission CSV (counts, default: bundled fixture)")
    s.add_argument("--design", choices=DESIGNS, default="octa6")
    s.add_argument("--probes", help="comma-separated probe labels")
    s.add_argument("--state", help="w<n> or a JSON amplitude list (shots)")
    s.add_argument("--shots", type=int, default=10_000)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--h", type=float, default=1.0, help="noise scale factor (shots)")
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("calibrate", parents=[common], help="fit noise parameters to calibration counts")
    s.add_argument("--counts", help="count CSV (default: bundled fixture)")
    s.add_argument("--design", choices=DESIGNS, default="octa6")
    s.add_argument("--probes", help="comma-separated subset of probes to use")
    s.add_argument("--starts", type=int, default=16)
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("validate", parents=[common], help="fidelity of a noise model against fitted port operators")
    s.add_argument("--noise", help="noise JSON (default: bundled calibrated model)")
    s.add_argument("--transmission", help="transmission CSV (default: bundled fixture)")
    s.add_argument("--sweep", type=int, default=64)
    s.add_argument("--threshold", type=float, default=0.98)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("run", parents=[common], help="run an experiment config")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--save-tables", action="store_true", help="also write every mitigated table as CSV")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("plot", parents=[common], help="render reports as SVG")
    s.add_argument("inputs", nargs="+", help="report/validation JSON files or run directories")
    s.add_argument("--kind", choices=("hist", "curve"), default="hist")
    s.add_argument("--truth", type=float, default=None, help="vertical truth line (hist)")
    s.add_argument("--guide", type=float, default=None, help="horizontal guide line (curve)")
    s.add_argument("--x", default=None, help="swept key for the x axis (curve)")
    s.add_argument("--title", default=None)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"metashadow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"metashadow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonConvergenceError as exc:
        print(f"metashadow: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except EstimationError as exc:
        print(f"metashadow: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (FitError, ModelError) as exc:
        print(f"metashadow: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InvalidArgumentError, CapacityError) as exc:
        print(f"metashadow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MetashadowError as exc:
        print(f"metashadow: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
