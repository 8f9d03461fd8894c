"""relu-phase command line: presets, train, scan, spectrum, condense, verify.

Every invocation writes its outputs plus one manifest.json into --out-dir.
Settings come from built-in defaults, then a flat key = value --config file,
then explicit flags.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps reductions in a fixed order
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import datetime  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, datasets, dynamics, features, kernels, network, scan, scaling, theory  # noqa: E402

COMMANDS = ("presets", "train", "scan", "spectrum", "condense", "verify")

DEFAULTS = {
    "gamma": None,
    "gamma_prime": None,
    "preset": None,
    "beta_exponent": None,
    "m": None,
    "widths": ",".join(str(w) for w in scan.DEFAULT_WIDTHS),
    "full_scale_widths": False,
    "gammas": None,
    "gamma_primes": None,
    "replicates": 3,
    "dataset": "builtin:fig2",
    "seed": 0,
    "jobs": 1,
    "out_dir": "out",
    "cache_dir": None,
    "theory_mode": False,
    "max_steps": 200_000,
    "max_time": math.inf,
    "relative_tolerance": 1e-6,
    "snapshot_stride": 0,
    "amplitude_fraction": features.DEFAULT_AMPLITUDE_FRACTION,
    "cosine_tolerance": features.DEFAULT_COSINE_TOLERANCE,
    "snapshot": None,
    "mc_samples": 0,
    "delta": 0.05,
}

_BOOL = {"full_scale_widths", "theory_mode"}
_INT = {"m", "replicates", "seed", "jobs", "max_steps", "snapshot_stride", "mc_samples"}
_FLOAT = {"gamma", "gamma_prime", "beta_exponent", "max_time", "relative_tolerance", "amplitude_fraction",
          "cosine_tolerance", "delta"}


class UsageError(Exception):
    pass


def _convert(key: str, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    if key in _BOOL:
        low = raw.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("1", "true", "yes")
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return float(raw)
    return raw


def read_config(path) -> dict:
    """key = value lines; '#' starts a comment; keys use flag names with '-' or '_'."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, value)
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relu-phase", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default=None, help="flat key = value settings file")
        s.add_argument("--print-config", action="store_true", help="print the merged settings and exit")
        for key in DEFAULTS:
            flag = "--" + key.replace("_", "-")
            if key in _BOOL:
                s.add_argument(flag, dest=key, action="store_const", const=True, default=argparse.SUPPRESS)
            else:
                s.add_argument(flag, dest=key, default=argparse.SUPPRESS)
    return p


def resolve(argv) -> tuple[str, dict, bool]:
    args = vars(_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    show = args.pop("print_config")
    cfg = dict(DEFAULTS)
    if config_path:
        cfg.update(read_config(config_path))
    for key, value in args.items():
        cfg[key] = _convert(key, value)
    return command, cfg, show


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _floats(text: str, name: str) -> list:
    if not text:
        raise UsageError(f"--{name} is required")
    return [float(v) for v in str(text).split(",") if v.strip()]


def _widths(cfg) -> list:
    if cfg["full_scale_widths"]:
        return list(scan.FULL_SCALE_WIDTHS)
    return [int(v) for v in str(cfg["widths"]).split(",") if v.strip()]


class Outputs:
    """Collects files written by one command and the manifest describing them."""

    def __init__(self, command: str, cfg: dict):
        self.dir = cfg["out_dir"]
        os.makedirs(self.dir, exist_ok=True)
        self.files: list[str] = []
        self.manifest = {
            "command": command,
            "config": {k: (None if isinstance(v, float) and math.isinf(v) and k != "max_time" else v)
                       for k, v in cfg.items()},
            "tool_version": __version__,
            "start": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "seeds": [],
        }
        if isinstance(cfg.get("max_time"), float) and math.isinf(cfg["max_time"]):
            self.manifest["config"]["max_time"] = "inf"

    def path(self, name: str) -> str:
        full = os.path.join(self.dir, name)
        self.files.append(name)
        return full

    def write(self, name: str, writer) -> str:
        """Run writer(tmp_path), then rename into place."""
        full = self.path(name)
        tmp = f"{full}.tmp{os.getpid()}"
        writer(tmp)
        os.replace(tmp, full)
        return full

    def finish(self, **extra) -> str:
        self.manifest.update(extra)
        self.manifest["outputs"] = sorted(set(self.files))
        self.manifest["end"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        full = os.path.join(self.dir, "manifest.json")
        scan.atomic_write_text(full, json.dumps(self.manifest, indent=2, sort_keys=True, default=str) + "\n")
        return full


def _csv_rows(header, rows):
    def writer(path):
        import csv
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)
    return writer


def load_dataset(cfg) -> datasets.Dataset:
    ds = datasets.load(cfg["dataset"])
    rep = datasets.validate(ds, cfg["theory_mode"])
    if not rep.ok:
        raise UsageError(f"dataset {cfg['dataset']}: " + "; ".join(rep.violations))
    return ds


def _coords_and_spec(cfg, ds: datasets.Dataset):
    """Phase coordinates from --gamma/--gamma-prime or --preset (which also yields a ScalingSpec)."""
    if cfg["preset"]:
        if cfg["gamma"] is not None or cfg["gamma_prime"] is not None:
            raise UsageError("give either --preset or --gamma/--gamma-prime, not both")
        spec = scaling.preset(cfg["preset"], max(ds.d - 1, 1), cfg["beta_exponent"])
        return scaling.phase_coordinates(spec), spec
    if cfg["gamma"] is None or cfg["gamma_prime"] is None:
        raise UsageError("need --gamma and --gamma-prime, or --preset")
    return scaling.PhaseCoordinates(cfg["gamma"], cfg["gamma_prime"]), None


def cmd_presets(cfg, out: Outputs) -> int:
    dim = 1
    rows = []
    for name in scaling.PRESETS:
        b = 0.0 if name == "EEtAl" else None
        b = cfg["beta_exponent"] if name == "EEtAl" and cfg["beta_exponent"] is not None else b
        spec = scaling.preset(name, dim, b)
        k, kp = scaling.kappa(spec), scaling.kappa_prime(spec)
        c = scaling.phase_coordinates(spec)
        rows.append([name, _fmt(k.coeff), _fmt(k.exponent), _fmt(kp.coeff), _fmt(kp.exponent),
                     _fmt(c.gamma), _fmt(c.gamma_prime), scaling.classify_regime(c).value])
    header = ["preset", "kappa_coeff", "kappa_exponent", "kappa_prime_coeff", "kappa_prime_exponent",
              "gamma", "gamma_prime", "regime"]
    out.write("presets.csv", _csv_rows(header, rows))
    print(f"{'preset':<10} {'gamma':>7} {'gamma_prime':>12}  regime")
    for r in rows:
        print(f"{r[0]:<10} {float(r[5]):>7.3g} {float(r[6]):>12.3g}  {r[7]}")
    return 0


def _train_run(cfg, ds, coords, spec, m, seed):
    use_asi = coords.gamma <= 0.5
    if use_asi and m % 2:
        raise UsageError("ASI (used when gamma <= 1/2) needs an even --m")
    base = m // 2 if use_asi else m
    p0 = network.init_params(network.InitConfig(base, ds.d, seed, use_asi))
    if spec is None:
        kappa, kappa_prime = scaling.realize(coords, m)
    else:
        kappa = scaling.kappa(spec)(m)
        kappa_prime = scaling.kappa_prime(spec)(m)
    h0 = dynamics.default_initial_step(p0, kappa, kappa_prime, ds)
    r0 = network.empirical_risk(p0, kappa, ds)
    tol = (dynamics.default_risk_tolerance(r0, ds.n, True) if cfg["theory_mode"]
           else r0 * cfg["relative_tolerance"])
    flow = dynamics.FlowConfig(h0, cfg["max_time"], tol, max_steps=cfg["max_steps"],
                               snapshot_stride=cfg["snapshot_stride"])
    if spec is None:
        return dynamics.integrate(p0, kappa, kappa_prime, ds, flow)
    return dynamics.simulate_original(spec, m, ds, flow, seed, use_asi=use_asi)


def cmd_train(cfg, out: Outputs) -> int:
    if cfg["m"] is None:
        raise UsageError("train needs --m")
    ds = load_dataset(cfg)
    coords, spec = _coords_and_spec(cfg, ds)
    res = _train_run(cfg, ds, coords, spec, cfg["m"], cfg["seed"])
    out.manifest["seeds"] = [cfg["seed"]]
    out.write("trajectory.csv", res.trajectory.to_csv)
    out.write("initial.snap", lambda p: network.save_snapshot(p, res.initial_params, res.kappa, res.kappa_prime))
    out.write("final.snap", lambda p: network.save_snapshot(p, res.final_params, res.kappa, res.kappa_prime))
    c0 = features.extract_features(res.initial_params)
    c1 = features.extract_features(res.final_params)
    out.write("features.csv", lambda p: features.scatter_to_csv(p, {"initial": c0, "final": c1}))
    s0 = features.condensation_summary(c0, cfg["amplitude_fraction"], cfg["cosine_tolerance"])
    s1 = features.condensation_summary(c1, cfg["amplitude_fraction"], cfg["cosine_tolerance"])
    rows = [
        ["gamma", _fmt(coords.gamma)], ["gamma_prime", _fmt(coords.gamma_prime)],
        ["regime", scaling.classify_regime(coords).value], ["m", res.final_params.m],
        ["kappa", _fmt(res.kappa)], ["kappa_prime", _fmt(res.kappa_prime)],
        ["stop_reason", res.stop_reason.value], ["steps", res.steps], ["final_time", _fmt(res.final_time)],
        ["initial_loss", _fmt(res.trajectory.losses[0])], ["final_loss", _fmt(res.final_loss)],
        ["sup_rd_w", _fmt(res.sup_rd_w)], ["sup_rd_theta", _fmt(res.sup_rd_theta)], ["sup_rd_a", _fmt(res.sup_rd_a)],
        ["balancedness_residual", _fmt(dynamics.balancedness_residual(res.final_params, res.initial_params,
                                                                      res.kappa_prime))],
        ["clusters_initial", s0.cluster_count], ["clusters_final", s1.cluster_count],
        ["entropy_initial", _fmt(s0.angular_entropy)], ["entropy_final", _fmt(s1.angular_entropy)],
    ]
    out.write("summary.csv", _csv_rows(["key", "value"], rows))
    for k, v in rows:
        print(f"{k:<22} {v}")
    out.finish(dataset_fingerprint=ds.fingerprint())
    return 0


def cmd_scan(cfg, out: Outputs) -> int:
    ds = load_dataset(cfg)
    grid = scan.ScanGrid(_floats(cfg["gammas"], "gammas"), _floats(cfg["gamma_primes"], "gamma-primes"),
                         _widths(cfg), cfg["replicates"], cfg["seed"])
    plan = scan.RunPlan(max_time=cfg["max_time"], relative_tolerance=cfg["relative_tolerance"],
                        max_steps=cfg["max_steps"])
    cache = cfg["cache_dir"] or os.path.join(out.dir, "cache")
    pm = scan.scan(grid, ds, plan, jobs=cfg["jobs"], cache_dir=cache)
    for path in scan.write_phase_map(pm, out.dir):
        out.files.append(os.path.basename(path))
    out.manifest["seeds"] = sorted({r.seed for c in pm.cells for r in c.runs})
    print(f"{'gamma':>7} {'gamma_prime':>12} {'S_w':>9} {'S_theta':>9} {'S_a':>9}  regime")
    for c in pm.cells:
        flag = " (near-critical)" if c.near_critical else ""
        flag += " (partial)" if c.partial else ""
        print(f"{c.coords.gamma:>7.4g} {c.coords.gamma_prime:>12.4g} {c.slope('w'):>9.4f} "
              f"{c.slope('theta'):>9.4f} {c.slope('a'):>9.4f}  {c.regime.value}{flag}")
    for gp, g in scan.boundary_zeros(pm) if len(grid.gamma_values) > 1 else []:
        print(f"S_w zero at gamma' = {gp:g}: gamma = {g:.4f}")
    out.finish(dataset_fingerprint=ds.fingerprint())
    return 1 if any(c.partial for c in pm.cells) else 0


def cmd_spectrum(cfg, out: Outputs) -> int:
    ds = load_dataset(cfg)
    gp = kernels.gram_limit_closed(ds)
    out.write("K_a.csv", lambda p: kernels.matrix_to_csv(p, gp.K_a))
    out.write("K_w.csv", lambda p: kernels.matrix_to_csv(p, gp.K_w))
    rows = [["lambda_a", _fmt(gp.lambda_a)], ["lambda_w", _fmt(gp.lambda_w)], ["lambda", _fmt(gp.lam)]]
    if cfg["m"] is not None and (cfg["preset"] or cfg["gamma"] is not None):
        coords, spec = _coords_and_spec(cfg, ds)
        m = cfg["m"]
        if spec is None:
            k, kp = scaling.realize(coords, m)
        else:
            k, kp = scaling.kappa(spec)(m), scaling.kappa_prime(spec)(m)
        rows += [["m", m], ["kappa", _fmt(k)], ["kappa_prime", _fmt(kp)],
                 ["decay_rate", _fmt(kernels.decay_rate(m, k, kp, ds.n, gp.lambda_a, gp.lambda_w))],
                 ["linear_rate", _fmt(kernels.linear_rate(m, k, ds.n, gp.lam))]]
    if cfg["mc_samples"]:
        mc = kernels.gram_limit_mc(ds, cfg["mc_samples"], cfg["seed"])
        za = float(np.max(np.abs(mc.K_a - gp.K_a) / np.maximum(mc.se_a, 1e-300)))
        zw = float(np.max(np.abs(mc.K_w - gp.K_w) / np.maximum(mc.se_w, 1e-300)))
        rows += [["mc_samples", cfg["mc_samples"]], ["mc_max_z_a", _fmt(za)], ["mc_max_z_w", _fmt(zw)]]
        out.manifest["seeds"] = [cfg["seed"]]
    out.write("spectrum.csv", _csv_rows(["key", "value"], rows))
    for k, v in rows:
        print(f"{k:<12} {v}")
    out.finish(dataset_fingerprint=ds.fingerprint())
    if cfg["theory_mode"] and not (0 < gp.lam <= ds.d):
        print(f"error: lambda = {gp.lam:g} outside (0, d]", file=sys.stderr)
        return 1
    return 0


def cmd_condense(cfg, out: Outputs) -> int:
    if not cfg["snapshot"]:
        raise UsageError("condense needs --snapshot FILE[,FILE...]")
    clouds, rows = {}, []
    for path in str(cfg["snapshot"]).split(","):
        params, _, _ = network.load_snapshot(path)
        tag = os.path.splitext(os.path.basename(path))[0]
        cloud = features.extract_features(params)
        clouds[tag] = cloud
        s = features.condensation_summary(cloud, cfg["amplitude_fraction"], cfg["cosine_tolerance"])
        rows.append([tag, params.m, s.active_count, s.cluster_count, _fmt(s.angular_entropy),
                     _fmt(s.amplitude_threshold), _fmt(s.cosine_tolerance)])
    out.write("condensation.csv", _csv_rows(["tag", "m", "active_count", "cluster_count", "angular_entropy",
                                             "amplitude_threshold", "cosine_tolerance"], rows))
    out.write("features.csv", lambda p: features.scatter_to_csv(p, clouds))
    for r in rows:
        print(f"{r[0]}: active {r[2]}, clusters {r[3]}, entropy {float(r[4]):.4f}")
    out.finish()
    return 0


def cmd_verify(cfg, out: Outputs) -> int:
    if cfg["m"] is None:
        raise UsageError("verify needs --m")
    ds = load_dataset(cfg)
    coords, _ = _coords_and_spec(cfg, ds)
    reports = theory.verify(coords, cfg["m"], ds, cfg["seed"], delta=cfg["delta"], max_steps=cfg["max_steps"],
                            relative_tolerance=cfg["relative_tolerance"])
    out.manifest["seeds"] = [cfg["seed"]]
    out.write("bounds.csv", lambda p: theory.reports_to_csv(p, reports))
    print(theory.format_reports(reports))
    out.finish(dataset_fingerprint=ds.fingerprint())
    return 0 if all(r.satisfied for r in reports if r.hard) else 1


HANDLERS = {"presets": cmd_presets, "train": cmd_train, "scan": cmd_scan, "spectrum": cmd_spectrum,
            "condense": cmd_condense, "verify": cmd_verify}


def main(argv=None) -> int:
    try:
        command, cfg, show = resolve(sys.argv[1:] if argv is None else argv)
        if show:
            for k in sorted(cfg):
                print(f"{k.replace('_', '-')} = {'' if cfg[k] is None else cfg[k]}")
            return 0
        out = Outputs(command, cfg)
        code = HANDLERS[command](cfg, out)
        if command == "presets":
            out.finish()
        return code
    except UsageError as exc:
        print(f"relu-phase: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"relu-phase: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
