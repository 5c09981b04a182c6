"""Command-line front end.

Every subcommand reads a strict JSON config (unit-suffixed keys), fills
missing keys from the packaged defaults and writes plot-ready data. CSV
output is accompanied by ``<out>.json`` holding the resolved config and run
metadata; JSON output embeds both directly. Feeding the embedded config back
through ``--config`` reproduces the data byte for byte.

Exit codes
----------
0  success
2  usage error, unreadable or invalid config
3  numerically degenerate result (clamp-dominated map, failed mode search)
4  memory budget too small for a single streaming block
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import time
from dataclasses import asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis
from .circuit import SearchFailed, TibParams, find_operating_points, sweep_map
from .link import _LINK_KEYS, ConfigError, LinkConfig, MemoryBudgetExceeded, _strict, run_link
from .walsh import realize_waveform, transitions_per_period, u_factor, walsh_code

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_MEMORY = 4

CLAMP_LIMIT = 0.5

COMMANDS = ("sweep", "modes", "chop", "mux", "predict", "compare", "permute")

# JSON key -> (TibParams field, divisor to SI)
_DEVICE_KEYS = {
    "junction_critical_current_ua": ("junction_critical_current", 1e6),
    "squids_per_array": ("squids_per_array", None),
    "geometric_inductance_nh": ("geometric_inductance", 1e9),
    "line_impedance_ohm": ("line_impedance", 1.0),
}

_SCHEMAS = {
    "sweep": {"device", "phi_sigma", "frequency_ghz", "phi_delta", "floor_db", "normalize"},
    "modes": {"device", "phi_sigma", "frequency_ghz", "floor_db"},
    "chop": {"code_index", "chips", "walsh_period_ns", "switching_time_ns", "sample_interval_ns", "edge_model"},
    "mux": None,  # a bare link config
    "predict": {"link", "walsh_periods_ns", "power_fw", "gain_calibration_db", "u_approximation"},
    "compare": {"link", "walsh_periods_ns", "power_fw", "gain_calibration_db"},
    "permute": {"link", "codes"},
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- config


def default_config(command: str) -> dict:
    text = (resources.files("tibmux") / "defaults" / f"{command}.json").read_text(encoding="utf-8")
    return json.loads(text)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _merge(command: str, user: dict | None) -> dict:
    base = default_config(command)
    if user is None:
        return base
    if _SCHEMAS[command] is None:
        _strict(user, _LINK_KEYS, where=f"{command} config")
    else:
        _strict(user, _SCHEMAS[command], where=f"{command} config")
    merged = copy.deepcopy(base)
    for key, value in user.items():
        if key in ("link", "device") and isinstance(value, dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def _device(data: dict) -> TibParams:
    _strict(data, _DEVICE_KEYS, where="device")
    kwargs = {}
    for key, value in data.items():
        name, scale = _DEVICE_KEYS[key]
        kwargs[name] = value if scale is None else float(value) / scale
    try:
        return TibParams(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"device: {exc}") from exc


def _grid(spec, name: str) -> np.ndarray:
    """A list of values, or ``{"start", "stop", "count", "spacing"}`` with linear or log spacing."""
    if isinstance(spec, (int, float)):
        return np.array([float(spec)])
    if isinstance(spec, list):
        if not spec:
            raise ConfigError(f"{name} must not be empty")
        return np.array(spec, dtype=float)
    _strict(spec, {"start", "stop", "count", "spacing"}, {"start", "stop", "count"}, where=name)
    count = spec["count"]
    if not isinstance(count, int) or count < 1:
        raise ConfigError(f"{name}.count must be a positive integer")
    spacing = spec.get("spacing", "linear")
    if spacing == "linear":
        return np.linspace(float(spec["start"]), float(spec["stop"]), count)
    if spacing == "log":
        if not (spec["start"] > 0 and spec["stop"] > 0):
            raise ConfigError(f"{name}: log spacing needs positive bounds")
        return np.geomspace(float(spec["start"]), float(spec["stop"]), count)
    raise ConfigError(f"{name}.spacing must be 'linear' or 'log'")


def _link(data: dict, seed: int | None) -> LinkConfig:
    if seed is not None:
        data = {**data, "seed": seed}
    return LinkConfig.from_dict(data)


def resolve_config(command: str, path, seed: int | None = None) -> dict:
    """Merged config for ``command`` with the seed override applied and the link normalised."""
    user = None if path is None else _read_json(path)
    cfg = _merge(command, user)
    if command == "mux":
        return _link(cfg, seed).to_dict()
    if "link" in cfg:
        cfg["link"] = _link(cfg["link"], seed).to_dict()
    return cfg


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def sidecar_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".json")


def _emit_table(args, command, config, columns, rows, metadata=None, wall_time=None, out=None) -> Path:
    out = Path(out or args.out)
    head = {"command": command, "config": config}
    if metadata is not None:
        head["metadata"] = metadata
    if args.format == "csv":
        lines = [",".join(columns)] + [",".join(_fmt(v) for v in row) for row in rows]
        _write_text(out, "\n".join(lines) + "\n")
        if wall_time is not None:
            head["wall_time_s"] = wall_time
        _write_text(sidecar_path(out), _dump(head))
    else:
        doc = {**head, "columns": list(columns), "rows": [[_plain(v) for v in row] for row in rows]}
        if wall_time is not None:
            doc["wall_time_s"] = wall_time
        _write_text(out, _dump(doc))
    return out


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def _budget(args) -> float | None:
    mb = getattr(args, "memory_budget_mb", None)
    return None if mb is None else mb * 2**20


# ---------------------------------------------------------------- commands


def cmd_sweep(args) -> int:
    cfg = resolve_config("sweep", args.config)
    params = _device(cfg["device"])
    sigmas = _grid(cfg["phi_sigma"], "phi_sigma")
    freqs = _grid(cfg["frequency_ghz"], "frequency_ghz") * 1e9
    deltas = _grid(cfg["phi_delta"], "phi_delta")
    floor_db = float(cfg["floor_db"])
    out = Path(args.out)
    written, degenerate = [], []
    for s in sigmas:
        m = sweep_map(params, float(s), freqs, deltas, floor_db=floor_db, normalize=bool(cfg["normalize"]))
        if m.clamped_fraction > CLAMP_LIMIT:
            degenerate.append(float(s))
            print(f"sweep: phi_sigma={float(s)!r} has {m.clamped_fraction:.0%} clamped cells; map not written",
                  file=sys.stderr)
            continue
        path = out if sigmas.size == 1 else out.with_name(f"{out.stem}_phi_sigma_{float(s)!r}{out.suffix}")
        if args.format == "csv":
            path.parent.mkdir(parents=True, exist_ok=True)
            m.write_csv(path)
            _write_text(sidecar_path(path), _dump({"command": "sweep", "config": cfg, "metadata": m.metadata()}))
        else:
            _write_text(path, _dump({
                "command": "sweep", "config": cfg, "metadata": m.metadata(),
                "frequency_ghz": [float(f) / 1e9 for f in m.frequencies],
                "phi_delta": [float(x) for x in m.phi_deltas],
                "power_db": [[float(v) for v in row] for row in m.power_db],
            }))
        written.append(path)
    if degenerate:
        raise CliError(f"sweep: {len(degenerate)} clamp-dominated map(s) at phi_sigma={degenerate}", EXIT_DEGENERATE)
    print(f"sweep: wrote {len(written)} map(s): {', '.join(str(p) for p in written)}")
    return EXIT_OK


def cmd_modes(args) -> int:
    cfg = resolve_config("modes", args.config)
    params = _device(cfg["device"])
    rows = []
    for s in _grid(cfg["phi_sigma"], "phi_sigma"):
        for f in _grid(cfg["frequency_ghz"], "frequency_ghz"):
            try:
                op = find_operating_points(params, float(s), float(f) * 1e9, floor_db=float(cfg["floor_db"]))
            except SearchFailed as exc:
                raise CliError(f"modes: {exc}", EXIT_DEGENERATE) from exc
            rows.append([float(s), float(f), op.phi_delta_transmit, op.phi_delta_invert, op.phi_delta_reflect,
                         op.transmit_power_db, op.on_off_ratio_db, op.phase_imbalance_deg])
    columns = ["phi_sigma", "frequency_ghz", "phi_delta_transmit", "phi_delta_invert", "phi_delta_reflect",
               "transmit_power_db", "on_off_ratio_db", "phase_imbalance_deg"]
    out = _emit_table(args, "modes", cfg, columns, rows, {"params": asdict(params)})
    print(f"modes: {len(rows)} operating point(s) -> {out}")
    return EXIT_OK


def cmd_chop(args) -> int:
    cfg = resolve_config("chop", args.config)
    try:
        code = walsh_code(int(cfg["code_index"]), int(cfg["chips"]))
        w = realize_waveform(
            code,
            float(cfg["walsh_period_ns"]) / 1e9,
            float(cfg["switching_time_ns"]) / 1e9,
            float(cfg["sample_interval_ns"]) / 1e9,
            cfg["edge_model"],
        )
    except TypeError as exc:
        raise ConfigError(f"chop: {exc}") from exc
    meta = {"u": u_factor(w), "transitions": transitions_per_period(code), "n_samples": w.n_samples}
    rows = [[t * 1e9, v] for t, v in zip(w.times(), w.samples)]
    out = _emit_table(args, "chop", cfg, ["time_ns", "value"], rows, meta)
    print(f"chop: W{code.index} with U={meta['u']!r} -> {out}")
    return EXIT_OK


def cmd_mux(args) -> int:
    cfg = resolve_config("mux", args.config, args.seed)
    config = LinkConfig.from_dict(cfg)
    summary = run_link(config, workers=args.workers, record_trials=args.trials is not None,
                       memory_budget=_budget(args))
    out = Path(args.out)
    if args.format == "json":
        _write_text(out, _dump({"command": "mux", **summary.to_dict()}))
    else:
        columns = ["channel", "code", "bits", "faults", "infidelity", "ci_low", "ci_high", "u", "predicted"]
        rows = [[c.channel, c.code_index, c.bit_count, c.faults, c.infidelity, c.ci95[0], c.ci95[1], c.u,
                 c.predicted_infidelity] for c in summary.channels]
        _emit_table(args, "mux", cfg, columns, rows, {"blocks": summary.blocks}, summary.wall_time)
    if args.trials is not None:
        summary.write_trials_csv(args.trials)
    rates = ", ".join(f"ch{c.channel}={c.infidelity!r}" for c in summary.channels)
    print(f"mux: {config.bit_count} bits, infidelity {rates}, {summary.wall_time:.2f} s -> {out}")
    return EXIT_OK


def _periods(cfg) -> list[float]:
    return [float(x) / 1e9 for x in _grid(cfg["walsh_periods_ns"], "walsh_periods_ns")]


def cmd_predict(args) -> int:
    cfg = resolve_config("predict", args.config, args.seed)
    link = LinkConfig.from_dict(cfg["link"])
    powers = _grid(cfg["power_fw"], "power_fw") * 1e-15
    gain = float(cfg["gain_calibration_db"])
    curves = []
    for tw in _periods(cfg):
        curves.append(analysis.prediction_curve(replace(link, walsh_period=tw), powers, gain,
                                                 approximate=bool(cfg["u_approximation"])))
    columns = ["power_fW"] + [f"infidelity_tw_{c.walsh_period * 1e9!r}ns" for c in curves]
    rows = [[p * 1e15] + [c.infidelities[i] for c in curves] for i, p in enumerate(powers)]
    meta = {"curves": [c.metadata() for c in curves], "note": analysis.GAIN_CALIBRATION_NOTE}
    out = _emit_table(args, "predict", cfg, columns, rows, meta)
    print(f"predict: {len(curves)} curve(s) x {powers.size} power(s) -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config("compare", args.config, args.seed)
    link = LinkConfig.from_dict(cfg["link"])
    powers = _grid(cfg["power_fw"], "power_fw") * 1e-15
    t0 = time.perf_counter()
    result = analysis.compare_power_grid(link, powers, _periods(cfg), float(cfg["gain_calibration_db"]),
                                         workers=args.workers, memory_budget=_budget(args))
    columns = ["power_fW", "t_w_ns", "channel", "code", "predicted", "observed", "faults", "ci_low", "ci_high"]
    rows = [[r.power * 1e15, r.walsh_period * 1e9, r.channel, r.code_index, r.predicted, r.observed, r.faults,
             r.ci95[0], r.ci95[1]] for r in result]
    inside = sum(lo <= r.predicted <= hi for r in result for lo, hi in [r.ci95])
    meta = {"note": analysis.GAIN_CALIBRATION_NOTE, "points": len(result), "prediction_inside_ci": inside}
    out = _emit_table(args, "compare", cfg, columns, rows, meta, time.perf_counter() - t0)
    print(f"compare: prediction inside 95% CI at {inside}/{len(result)} point(s) -> {out}")
    return EXIT_OK


def cmd_permute(args) -> int:
    cfg = resolve_config("permute", args.config, args.seed)
    link = LinkConfig.from_dict(cfg["link"])
    t0 = time.perf_counter()
    results = analysis.permutation_sweep(link, codes=tuple(cfg["codes"]), workers=args.workers)
    rows = []
    for r in results:
        for c in r.summary.channels:
            rows.append([r.codes[0], r.codes[1], c.channel, c.infidelity, c.ci95[0], c.ci95[1]])
    columns = ["n", "m", "channel", "infidelity", "ci_low", "ci_high"]
    out = _emit_table(args, "permute", cfg, columns, rows, None, time.perf_counter() - t0)
    worst = max(row[3] for row in rows)
    print(f"permute: {len(results)} permutation(s), worst infidelity {worst!r} -> {out}")
    return EXIT_OK


_HANDLERS = {
    "sweep": cmd_sweep,
    "modes": cmd_modes,
    "chop": cmd_chop,
    "mux": cmd_mux,
    "predict": cmd_predict,
    "compare": cmd_compare,
    "permute": cmd_permute,
}

_HELP = {
    "sweep": "transmission map over frequency and differential flux",
    "modes": "transmit, invert and reflect biases per frequency",
    "chop": "export one sampled Walsh waveform",
    "mux": "run the two-channel link Monte Carlo",
    "predict": "Gaussian-model infidelity versus input power",
    "compare": "Monte Carlo against prediction over a power grid",
    "permute": "all ordered code assignments for two channels",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tibmux", description="Tunable inductor bridge and Walsh multiplexing simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", type=Path, help="JSON config; packaged defaults fill missing keys")
        p.add_argument("--out", type=Path, required=True, help="output file")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--seed", type=int, help="override the link seed")
        p.add_argument("--workers", type=int, default=1, help="threads for the Monte Carlo")
        if name in ("mux", "compare"):
            p.add_argument("--memory-budget-mb", type=float, help="cap on per-block working memory")
        if name == "mux":
            p.add_argument("--trials", type=Path, help="also write per-bit trial records to this CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is not None and not args.config.exists():
        print(f"{args.command}: config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print(f"{args.command}: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _HANDLERS[args.command](args)
    except ValueError as exc:
        # invalid values surface from the model constructors as ValueError
        print(f"{args.command}: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryBudgetExceeded as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
