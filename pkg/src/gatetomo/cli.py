"""Command-line entry points: simulate | fit | rb | metrics | project.

Configuration is a single JSON document per command; command-line flags
override config fields.  Diagnostics stream to stderr as JSON lines so the
report on stdout stays pipeable.  Exit codes: 0 ok, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import build_report, gate_metrics_with_intervals, write_report_bundle
from .engine import (
    DEFAULT_DOMINANCE_RATIO,
    DEFAULT_N_SAMPLES,
    GaussianBelief,
    default_prior,
    run_online,
)
from .errors import ConfigError, DataError, NumericalError
from .gates import GateSet, gateset_from_config, pack
from .project import project_cptp
from .ptm import ptm_from_json_dict, ptm_to_json_dict
from .rb import (
    fit_rb_decay,
    rb_prior_update,
    rb_to_fbt_records,
    records_to_rb_dataset,
    sample_rb_sequences,
    simulate_rb_counts,
)
from .simulate import (
    TrueDevice,
    generate_tomography_settings,
    read_records,
    truth_from_config,
    write_records,
)


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _meta(config: dict, seed: int) -> dict:
    return {"version": __version__, "seed": seed, "config_hash": _config_hash(config)}


def _require(config: dict, keys, where: str) -> None:
    missing = [k for k in keys if k not in config]
    if missing:
        raise ConfigError(f"{where}: missing config keys {missing}")


def _gateset_and_prior(config: dict) -> tuple[GateSet, GaussianBelief]:
    gateset = gateset_from_config(config.get("gateset", {"builtin": "native_two_qubit"}))
    prior_cfg = config.get("prior", {})
    belief = default_prior(
        gateset,
        sigma_pulsed=float(prior_cfg.get("sigma_pulsed", 0.05)),
        sigma_virtual=float(prior_cfg.get("sigma_virtual", 0.005)),
        sigma_meas=float(prior_cfg.get("sigma_meas", 0.05)),
        sigma_prep=float(prior_cfg.get("sigma_prep", 0.05)),
    )
    return gateset, belief


def cmd_simulate(args) -> int:
    config = _load_json(args.config)
    _require(config, ["truth_noise", "n_settings", "max_length", "shots"], "simulate")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    gateset, _ = _gateset_and_prior(config)
    truth = truth_from_config(gateset, config["truth_noise"])
    device = TrueDevice(truth=truth, seed=seed, default_shots=int(config["shots"]))
    settings = generate_tomography_settings(
        int(config["n_settings"]),
        int(config["max_length"]),
        gateset.n_gates,
        rng=seed,
    )
    records = [device.measure(s) for s in settings]
    out_path = args.output or config.get("output", "dataset.jsonl")
    header = {
        "type": "tomography",
        **_meta(config, seed),
        "gateset": config.get("gateset", {"builtin": "native_two_qubit"}),
        "shots": int(config["shots"]),
    }
    write_records(out_path, records, header)
    truth_path = args.truth_output or config.get("truth_output")
    if truth_path:
        payload = {"_meta": _meta(config, seed), "channels": {}}
        for name in truth.free_channel_names():
            payload["channels"][name] = ptm_to_json_dict(truth.noise_of(name))
        with open(truth_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    print(json.dumps({"written": str(out_path), "records": len(records)}))
    return 0


def _save_belief(path, belief: GaussianBelief, meta: dict) -> None:
    names = list(belief.packing.names) if belief.packing else []
    np.savez_compressed(
        path,
        mean=belief.mean,
        cov=belief.cov,
        channel_names=np.array(names),
        meta=np.array(json.dumps(meta)),
    )


def load_belief(path, gateset: GateSet) -> GaussianBelief:
    data = np.load(path, allow_pickle=False)
    packing = gateset.packing()
    stored = [str(n) for n in data["channel_names"]]
    if stored != list(packing.names):
        raise DataError(f"belief channels {stored} do not match gate set {packing.names}")
    return GaussianBelief(mean=data["mean"], cov=data["cov"], packing=packing)


def cmd_fit(args) -> int:
    config = _load_json(args.gateset_config) if args.gateset_config else {}
    header, records = read_records(args.dataset)
    if "gateset" not in config and "gateset" in header:
        config = {**config, "gateset": header["gateset"]}
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    gateset, belief = _gateset_and_prior(config)
    rng = np.random.default_rng(seed)
    if args.rb_prior is not None:
        f_bar, sigma_f = args.rb_prior
        belief = rb_prior_update(
            belief,
            float(f_bar),
            float(sigma_f),
            n_samples=args.rb_prior_samples,
            template=gateset,
            rng=rng,
        )
    sink = None
    if args.emit_diagnostics:
        def sink(diag):
            print(json.dumps(diag.to_json_dict()), file=sys.stderr, flush=True)

    ratio = None if args.dominance_ratio in ("none", "None") else float(
        args.dominance_ratio if args.dominance_ratio is not None else DEFAULT_DOMINANCE_RATIO
    )
    result = run_online(
        belief,
        records,
        gateset,
        n_samples=args.n_samples,
        dominance_ratio=ratio,
        error_model=args.error_model,
        rng=rng,
        diagnostics_sink=sink,
    )
    meta = _meta(config, seed)
    report = build_report(result.belief, gateset, rng=rng)
    report["dominance_step"] = result.dominance_step
    out_dir = Path(args.output)
    write_report_bundle(out_dir, report, result.diagnostics, meta=meta)
    _save_belief(out_dir / "belief.npz", result.belief, meta)
    print(json.dumps({"_meta": meta, **{k: report[k] for k in ("metrics", "dominance_step")}}))
    return 0


def cmd_rb(args) -> int:
    config = _load_json(args.config)
    _require(config, ["lengths", "n_per_length", "shots"], "rb")
    lengths = [int(x) for x in config["lengths"]]
    if len(lengths) < 3:
        raise ConfigError("rb: need at least 3 sequence lengths")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    gateset, _ = _gateset_and_prior(config)
    if gateset.n_qubits != 2:
        raise ConfigError("rb: randomized benchmarking runs on the two-qubit set")
    dataset = sample_rb_sequences(int(config["n_per_length"]), lengths, rng=seed)
    if "truth_noise" in config:
        truth = truth_from_config(gateset, config["truth_noise"])
        device = TrueDevice(truth=truth, seed=seed + 1, default_shots=int(config["shots"]))
        dataset = simulate_rb_counts(dataset, device, shots=int(config["shots"]))
    elif "dataset" in config:
        _, records = read_records(config["dataset"])
        dataset = records_to_rb_dataset(records)
    else:
        raise ConfigError("rb: config needs either 'truth_noise' or 'dataset'")
    fit = fit_rb_decay(dataset)
    meta = _meta(config, seed)
    summary = {
        "_meta": meta,
        "r_clifford": fit.r_clifford,
        "stderr_r": fit.stderr_r,
        "amplitude": fit.amplitude,
        "baseline": fit.baseline,
        "f_primitive": fit.f_primitive,
        "sigma_f_primitive": fit.sigma_f_primitive,
        "mean_word_length": fit.mean_word_length,
    }
    if args.output or config.get("output"):
        out_path = args.output or config["output"]
        header = {"type": "rb", "clifford_lengths": lengths, **meta,
                  "gateset": config.get("gateset", {"builtin": "native_two_qubit"}),
                  "shots": int(config["shots"])}
        write_records(out_path, rb_to_fbt_records(dataset), header)
        summary["dataset"] = str(out_path)
    if args.repurpose or config.get("repurpose"):
        _, belief = _gateset_and_prior(config)
        rng = np.random.default_rng(seed + 2)
        result = run_online(
            belief,
            rb_to_fbt_records(dataset),
            gateset,
            n_samples=args.n_samples,
            rng=rng,
        )
        report = build_report(result.belief, gateset, rng=rng)
        report["dominance_step"] = result.dominance_step
        out_dir = Path(args.repurpose_output)
        write_report_bundle(out_dir, report, result.diagnostics, meta=meta)
        _save_belief(out_dir / "belief.npz", result.belief, meta)
        summary["repurposed_report"] = str(out_dir)
    print(json.dumps(summary))
    return 0


def cmd_metrics(args) -> int:
    config = _load_json(args.gateset_config) if args.gateset_config else {}
    gateset, _ = _gateset_and_prior(config)
    belief = load_belief(args.belief, gateset)
    seed = args.seed if args.seed is not None else 0
    out = gate_metrics_with_intervals(
        belief, gateset, n_samples=args.n_samples, rng=seed
    )
    print(json.dumps({"_meta": _meta(config, seed), **out}))
    return 0


def cmd_project(args) -> int:
    payload = _load_json(args.input)
    try:
        ptm = ptm_from_json_dict(payload)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.input}: {exc}") from exc
    projected, report = project_cptp(ptm)
    if not report.converged:
        raise NumericalError("CPTP projection did not converge")
    out = {
        "projected": ptm_to_json_dict(projected),
        "iterations": report.iterations,
        "final_distance": report.final_distance,
        "min_choi_eig": report.min_choi_eig,
    }
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(out, fh)
    print(json.dumps({k: out[k] for k in ("iterations", "final_distance", "min_choi_eig")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gatetomo",
        description="Online Bayesian gate-set tomography with a synthetic device",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic tomography dataset")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--output")
    sim.add_argument("--truth-output")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="run the online fit on a dataset")
    fit.add_argument("--dataset", required=True)
    fit.add_argument("--gateset-config")
    fit.add_argument("--output", required=True)
    fit.add_argument("--rb-prior", nargs=2, type=float, metavar=("F", "SIGMA"))
    fit.add_argument("--rb-prior-samples", type=int, default=100)
    fit.add_argument("--dominance-ratio")
    fit.add_argument("--n-samples", type=int, default=DEFAULT_N_SAMPLES)
    fit.add_argument("--error-model", choices=("zero_mean", "subtract_mean"),
                     default="zero_mean")
    fit.add_argument("--emit-diagnostics", action="store_true")
    fit.add_argument("--seed", type=int)
    fit.set_defaults(func=cmd_fit)

    rb = sub.add_parser("rb", help="randomized benchmarking: generate, fit, repurpose")
    rb.add_argument("--config", required=True)
    rb.add_argument("--seed", type=int)
    rb.add_argument("--output")
    rb.add_argument("--repurpose", action="store_true")
    rb.add_argument("--repurpose-output", default="rb_report")
    rb.add_argument("--n-samples", type=int, default=DEFAULT_N_SAMPLES)
    rb.set_defaults(func=cmd_rb)

    met = sub.add_parser("metrics", help="recompute gate metrics from a saved belief")
    met.add_argument("--belief", required=True)
    met.add_argument("--gateset-config")
    met.add_argument("--n-samples", type=int, default=300)
    met.add_argument("--seed", type=int)
    met.set_defaults(func=cmd_metrics)

    proj = sub.add_parser("project", help="project a PTM onto the CPTP set")
    proj.add_argument("--input", required=True)
    proj.add_argument("--output")
    proj.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
