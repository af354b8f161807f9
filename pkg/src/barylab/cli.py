"""Command-line front end: build spaces and measures, run solvers and
experiments from config files, and persist reports.

Exit codes: 0 success, 2 invalid input or flags, 3 metric validation
failure, 4 solver failure, 5 balance non-convergence.  Each command prints
a single-line JSON summary on stdout; result files embed the seed and the
config hash that produced them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import barycenter as bary
from . import lab, spaces, transport

EXIT_BAD_INPUT = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_BALANCE = 5


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True, default=float))


def _load_config_file(path: str) -> dict:
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    try:
        import tomllib as toml
    except ImportError:
        import tomli as toml
    with open(path, "rb") as fh:
        return toml.load(fh)


def build_space_from_spec(spec: dict) -> spaces.DiscreteSpace:
    spec = dict(spec)
    kind = spec.pop("kind")
    resolution = int(spec.pop("resolution", 2))
    return spaces.build_model_space(kind, resolution, **spec)


def build_measure_from_spec(space: spaces.DiscreteSpace, spec: dict
                            ) -> spaces.Measure:
    """Measure construction from a config table.

    Types: uniform; dirac (index); raw (weights); good (density band and
    seed).  An optional push_forward/tilt entry post-composes a
    perturbation, which lets configs express measure pairs at controlled
    distances.
    """
    kind = spec.get("type", "uniform")
    if kind == "uniform":
        mu = spaces.uniform_measure(space)
    elif kind == "dirac":
        mu = spaces.dirac(space, int(spec["index"]))
    elif kind == "raw":
        mu = spaces.make_measure(space, np.asarray(spec["weights"], dtype=float))
    elif kind == "good":
        params = spaces.GoodMeasureParams(
            m_lower=float(spec.get("m_lower", 0.5)),
            M_upper=float(spec.get("M_upper", 2.0)),
            alpha=float(spec.get("alpha", 1.0)))
        mu = spaces.sample_good_measure(space, params,
                                        rng_seed=int(spec.get("seed", 0)))
    else:
        raise ValueError(f"unknown measure type {kind!r}")
    if "push_forward" in spec:
        mu = lab.perturb_push_forward(mu, float(spec["push_forward"]))
    if "tilt" in spec:
        rng = np.random.default_rng(int(spec.get("tilt_seed", 0)))
        mu = lab.perturb_density_tilt(
            mu, float(spec["tilt"]), rng.uniform(-1, 1, space.point_count))
    return mu


def build_law_from_spec(space: spaces.DiscreteSpace, spec: dict
                        ) -> spaces.SecondOrderLaw:
    atoms = tuple(build_measure_from_spec(space, a) for a in spec["atoms"])
    return spaces.SecondOrderLaw(atoms, np.asarray(spec["weights"], dtype=float))


# ---------------------------------------------------------------------------
# shipped default experiment configs

def preset_configs() -> dict:
    interval40 = {"kind": "interval", "resolution": 40, "length": 1.0}
    good = lambda seed: {"type": "good", "m_lower": 0.5, "M_upper": 2.0,
                         "seed": seed}
    return {
        "deficit_interval": {
            "experiment": "deficit_scan", "seed": 7,
            "space": interval40,
            "rho": good(101), "mu0": good(202),
            "family": "push_forward",
            "scales": [0.5, 0.4, 0.3, 0.2, 0.15, 0.1, 0.05, 0.025],
        },
        "gprobe_interval": {
            "experiment": "g_probe", "seed": 8,
            "space": interval40,
            "rho": good(77), "mu0": good(88),
            "mu1": dict(good(88), push_forward=0.2),
            "s_grid_size": 200,
        },
        "potential_stability_circle": {
            "experiment": "potential_stability", "seed": 2,
            "space": {"kind": "circle", "resolution": 60, "circumference": 1.0},
            "rho": good(9), "n_pairs": 30,
        },
        "map_stability_interval": {
            "experiment": "map_stability", "seed": 1,
            "space": {"kind": "interval", "resolution": 200, "length": 1.0},
            "rho": good(5), "n_pairs": 3,
        },
        "barycenter_stability_interval": {
            "experiment": "barycenter_stability", "seed": 3, "sigma": 0.5,
            "space": {"kind": "interval", "resolution": 33, "length": 1.0},
            "law": {"atoms": [good(11), good(22), good(33)],
                    "weights": [0.4, 0.35, 0.25]},
            "family": "mixed",
            "scales": [0.5, 0.4, 0.3, 0.22, 0.16, 0.12, 0.08, 0.05],
        },
        "wnet_circle16": {
            "experiment": "wasserstein_net", "seed": 5,
            "space": {"kind": "circle", "resolution": 16, "circumference": 1.0},
            "epsilons": [0.5, 0.4, 0.3], "n_probe": 500,
        },
        "empirical_rate_4atoms": {
            "experiment": "empirical_rate", "seed": 12, "sigma": 0.5,
            "space": {"kind": "interval", "resolution": 32, "length": 1.0},
            "law": {"atoms": [{"type": "good", "m_lower": 0.25,
                               "M_upper": 4.0, "seed": s}
                              for s in (1, 2, 3, 4)],
                    "weights": [0.4, 0.3, 0.2, 0.1]},
            "n_list": [8, 16, 32, 64, 128, 256, 512], "trials": 20,
        },
    }


def run_config(cfg: dict, jobs: int = 1):
    """Dispatch a parsed experiment config; returns (kind, results dict).

    Results carry ScanReport or NetResult objects plus the file payloads
    the CLI persists.
    """
    kind = cfg["experiment"]
    seed = int(cfg.get("seed", 0))
    space = build_space_from_spec(cfg["space"])
    if kind == "deficit_scan":
        rho = build_measure_from_spec(space, cfg["rho"])
        mu0 = build_measure_from_spec(space, cfg["mu0"])
        rep = lab.deficit_scan(space, rho, mu0, cfg["family"], cfg["scales"],
                               seed=seed, jobs=jobs)
        return kind, {"report": rep}
    if kind == "g_probe":
        rho = build_measure_from_spec(space, cfg["rho"])
        mu0 = build_measure_from_spec(space, cfg["mu0"])
        mu1 = build_measure_from_spec(space, cfg["mu1"])
        r0 = transport.solve_w2(mu0, rho)
        r1 = transport.solve_w2(mu1, rho)
        grid = np.linspace(0.0, 1.0, int(cfg.get("s_grid_size", 200)) + 1)
        rep = lab.g_probe(space, rho, mu0, mu1, r0.potentials.psi,
                          r1.potentials.psi, grid)
        return kind, {"report": rep}
    if kind == "potential_stability":
        rho = build_measure_from_spec(space, cfg["rho"])
        rng = np.random.default_rng(seed)
        gp = spaces.GoodMeasureParams(0.5, 2.0)
        pairs = []
        for _ in range(int(cfg.get("n_pairs", 10))):
            s1, s2 = rng.integers(2 ** 31, size=2)
            pairs.append((spaces.sample_good_measure(space, gp, rng_seed=int(s1)),
                          spaces.sample_good_measure(space, gp, rng_seed=int(s2))))
        rep = lab.potential_stability_probe(space, rho, pairs, seed=seed)
        return kind, {"report": rep}
    if kind == "map_stability":
        rho = build_measure_from_spec(space, cfg["rho"])
        gp = spaces.GoodMeasureParams(0.5, 2.0)
        pairs = []
        for k in (20, 30, 40)[:int(cfg.get("n_pairs", 3))]:
            m0 = lab.perturb_push_forward(
                spaces.sample_good_measure(space, gp, rng_seed=k), 0.05)
            m1 = lab.perturb_push_forward(m0, k / space.point_count)
            pairs.append((m0, m1))
        rep = lab.map_stability_probe(space, rho, pairs, seed=seed)
        return kind, {"report": rep}
    if kind == "barycenter_stability":
        law = build_law_from_spec(space, cfg["law"])
        rep = lab.barycenter_stability_scan(
            law, cfg["family"], cfg["scales"],
            sigma=float(cfg.get("sigma", 0.5)), seed=seed, jobs=jobs)
        return kind, {"report": rep}
    if kind == "wasserstein_net":
        nets = [lab.wasserstein_net(space, float(eps),
                                    n_probe=int(cfg.get("n_probe", 0)),
                                    seed=seed)
                for eps in cfg["epsilons"]]
        c_fit = lab.fit_entropy_constant([n.epsilon for n in nets],
                                         [n.cardinality for n in nets],
                                         space.dim_n)
        return kind, {"nets": nets, "entropy_constant": c_fit}
    if kind == "empirical_rate":
        law = build_law_from_spec(space, cfg["law"])
        cap = cfg.get("max_seconds")
        rep = lab.empirical_rate_experiment(
            law, cfg["n_list"], int(cfg["trials"]),
            sigma=float(cfg.get("sigma", 0.5)), seed=seed, jobs=jobs,
            max_seconds=None if cap is None else float(cap))
        return kind, {"report": rep}
    raise ValueError(f"unknown experiment kind {kind!r}")


def _write_svg(report: lab.ScanReport, path: str) -> None:
    """Minimal log-log scatter with the fitted line, when a fit exists."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fit = report.fits.get("loglog")
    xs = np.array([row[1] for row in report.rows], dtype=float)
    ys = np.array([row[2] for row in report.rows], dtype=float)
    keep = (xs > 0) & (ys > 0)
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.loglog(xs[keep], ys[keep], "o", ms=4)
    if fit and np.isfinite(fit.get("slope", float("nan"))) and keep.sum() >= 2:
        gx = np.linspace(np.log(xs[keep].min()), np.log(xs[keep].max()), 50)
        ax.loglog(np.exp(gx), np.exp(fit["slope"] * gx + fit["intercept"]),
                  "-", lw=1)
        ax.set_title(f"{report.experiment}: slope {fit['slope']:.3f}")
    else:
        ax.set_title(report.experiment)
    ax.set_xlabel(report.columns[1])
    ax.set_ylabel(report.columns[2])
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands

def cmd_space(args) -> int:
    try:
        params = {}
        for key in ("length", "circumference", "radius", "angle"):
            val = getattr(args, key, None)
            if val is not None:
                params[key] = val
        if args.mesh:
            params["path"] = args.mesh
        space = spaces.build_model_space(args.kind, args.n, **params)
    except (spaces.SpaceError, KeyError, ValueError, OSError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    report = spaces.validate_metric(space)
    if not report["ok"]:
        _emit({"error": "metric validation failed", "report": report})
        return EXIT_VALIDATION
    spaces.save_space(space, args.out)
    _emit({"out": args.out, "points": space.point_count,
           "diameter": space.diameter, "label": space.label,
           "validation": "pass"})
    return 0


def cmd_validate(args) -> int:
    # validate the raw arrays so malformed metrics still get a full report
    try:
        with open(args.space, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        ref = np.asarray(doc["ref_measure"], dtype=float)
        dist = np.asarray(doc["dist"], dtype=float).reshape(ref.size, ref.size)
    except (OSError, ValueError, KeyError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    report = spaces.validate_metric_arrays(dist)
    _emit({"ok": report["ok"], "worst_kind": report["worst_kind"],
           "worst_violation": report["worst_violation"],
           "checks": {k: v["pass"] for k, v in report["checks"].items()}})
    return 0 if report["ok"] else EXIT_VALIDATION


def cmd_measure(args) -> int:
    try:
        space = spaces.load_space(args.space)
        spec = {"type": args.kind, "seed": args.seed}
        if args.index is not None:
            spec["index"] = args.index
        if args.m_lower is not None:
            spec["m_lower"] = args.m_lower
        if args.m_upper is not None:
            spec["M_upper"] = args.m_upper
        mu = build_measure_from_spec(space, spec)
    except (spaces.SpaceError, spaces.MeasureError, ValueError, OSError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    spaces.save_measure(mu, args.out)
    _emit({"out": args.out, "support_size": int(mu.support.size),
           "space": space.label})
    return 0


def cmd_w2(args) -> int:
    try:
        space = spaces.load_space(args.space)
        mu = spaces.load_measure(args.mu, space)
        rho = spaces.load_measure(args.rho, space)
    except (spaces.SpaceError, spaces.MeasureError, ValueError, OSError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    try:
        res = transport.solve_w2(mu, rho)
    except transport.SolverError as exc:
        _emit({"error": str(exc)})
        return EXIT_SOLVER
    if args.out:
        transport.save_plan(res, args.out)
    _emit({"value": res.value, "w2": res.w2, "gap": res.gap,
           "out": args.out})
    return 0


def _load_law(args, space):
    with open(args.law, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    atoms = tuple(spaces.Measure(space, np.asarray(w, dtype=float))
                  for w in doc["atoms"])
    return spaces.SecondOrderLaw(atoms, np.asarray(doc["weights"], dtype=float))


def cmd_barycenter(args) -> int:
    try:
        space = spaces.load_space(args.space)
        law = _load_law(args, space)
    except (spaces.SpaceError, spaces.MeasureError, ValueError, OSError,
            KeyError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    try:
        res = bary.solve_barycenter(law)
    except transport.SolverError as exc:
        _emit({"error": str(exc)})
        return EXIT_SOLVER
    if args.out:
        bary.save_barycenter(res, args.out)
    _emit({"variance": res.variance_value, "nonunique": res.flags["nonunique"],
           "max_atom_gap": res.flags["max_atom_gap"], "out": args.out})
    return 0


def cmd_balance(args) -> int:
    try:
        space = spaces.load_space(args.space)
        law = _load_law(args, space)
        if args.barycenter:
            with open(args.barycenter, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            mu_p = spaces.Measure(space, np.asarray(doc["weights"], dtype=float))
        else:
            mu_p = bary.solve_barycenter(law,
                                         detect_nonuniqueness=False).measure
    except (spaces.SpaceError, spaces.MeasureError, ValueError, OSError,
            KeyError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    try:
        pairs, report = bary.balance_potentials(law, mu_p, tol=args.tol)
    except bary.BalanceError as exc:
        _emit({"error": str(exc)})
        return EXIT_BALANCE
    except transport.SolverError as exc:
        _emit({"error": str(exc)})
        return EXIT_SOLVER
    if args.out:
        doc = {"residual": report["residual"], "max_gap": report["max_gap"],
               "iterations": report["iterations"],
               "pairs": [{"phi": p.phi.tolist(), "psi": p.psi.tolist()}
                         for p in pairs]}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    _emit({"residual": report["residual"], "max_gap": report["max_gap"],
           "iterations": report["iterations"], "out": args.out})
    return 0


def cmd_net(args) -> int:
    try:
        space = spaces.load_space(args.space)
        net = lab.wasserstein_net(space, args.epsilon, n_probe=args.probes,
                                  seed=args.seed)
    except (spaces.SpaceError, lab.LabError, ValueError, OSError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(net.to_json(), fh)
    _emit({"cardinality": net.cardinality,
           "verified": net.verification["success"],
           "max_distance": net.verification["max_distance"], "out": args.out})
    return 0


def cmd_run(args) -> int:
    try:
        if args.preset:
            presets = preset_configs()
            if args.preset not in presets:
                _emit({"error": f"unknown preset {args.preset!r}",
                       "available": sorted(presets)})
                return EXIT_BAD_INPUT
            cfg = presets[args.preset]
            name = args.preset
        else:
            cfg = _load_config_file(args.config)
            name = os.path.splitext(os.path.basename(args.config))[0]
        if args.seed is not None:
            cfg = dict(cfg, seed=args.seed)
        if args.sigma is not None:
            cfg = dict(cfg, sigma=args.sigma)
    except (OSError, ValueError, KeyError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    try:
        kind, results = run_config(cfg, jobs=args.jobs)
    except (lab.LabError, spaces.SpaceError, spaces.MeasureError,
            ValueError, KeyError) as exc:
        _emit({"error": str(exc)})
        return EXIT_BAD_INPUT
    except transport.SolverError as exc:
        _emit({"error": str(exc)})
        return EXIT_SOLVER
    os.makedirs(args.out, exist_ok=True)
    summary = {"experiment": kind, "out": args.out,
               "config_hash": lab.config_hash(cfg), "seed": cfg.get("seed")}
    if "report" in results:
        rep = results["report"]
        rep.config = dict(cfg)
        base = os.path.join(args.out, name)
        if args.format == "json":
            doc = {"experiment": rep.experiment, "space": rep.space_label,
                   "seed": rep.seed, "config": rep.config,
                   "config_hash": rep.hash, "fits": rep.fits,
                   "flags": rep.flags, "columns": list(rep.columns),
                   "rows": [list(r) for r in rep.rows]}
            with open(base + ".json", "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=1, default=float)
            summary["json"] = base + ".json"
        else:
            rep.write_csv(base + ".csv")
            rep.write_sidecar(base + ".json")
            summary["csv"] = base + ".csv"
        summary["flags"] = rep.flags
        if args.plot and len(rep.columns) >= 3:
            _write_svg(rep, base + ".svg")
            summary["svg"] = base + ".svg"
    if "nets" in results:
        payload = {"config": cfg, "config_hash": lab.config_hash(cfg),
                   "seed": cfg.get("seed"),
                   "entropy_constant": results["entropy_constant"],
                   "nets": [n.to_json() for n in results["nets"]]}
        path = os.path.join(args.out, name + ".json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, default=float)
        summary["json"] = path
        summary["verified"] = all(n.verification["success"]
                                  for n in results["nets"])
    _emit(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="barylab",
        description="Discrete optimal-transport laboratory: exact solvers, "
                    "heat-kernel regularization, barycenters, covering nets "
                    "and stability experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space", help="build a model space file")
    p.add_argument("--kind", required=True,
                   choices=["interval", "circle", "sphere", "cone", "mesh_file"])
    p.add_argument("--n", type=int, default=50, help="resolution")
    p.add_argument("--length", type=float)
    p.add_argument("--circumference", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--angle", type=float)
    p.add_argument("--mesh", help="mesh file path (kind mesh_file)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("validate", help="validate a space file's metric")
    p.add_argument("--space", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("measure", help="build a measure file")
    p.add_argument("--space", required=True)
    p.add_argument("--kind", default="uniform",
                   choices=["uniform", "dirac", "good"])
    p.add_argument("--index", type=int)
    p.add_argument("--m-lower", dest="m_lower", type=float)
    p.add_argument("--m-upper", dest="m_upper", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("w2", help="exact transport solve between two measures")
    p.add_argument("--space", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--rho", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_w2)

    p = sub.add_parser("barycenter", help="exact barycenter of a law file")
    p.add_argument("--space", required=True)
    p.add_argument("--law", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("balance", help="zero-order balance normalization")
    p.add_argument("--space", required=True)
    p.add_argument("--law", required=True)
    p.add_argument("--barycenter")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("net", help="covering net of the space of measures")
    p.add_argument("--space", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--probes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_net)

    p = sub.add_parser("run", help="run an experiment config or preset")
    p.add_argument("--config", help="TOML or JSON experiment config")
    p.add_argument("--preset", help="named shipped config; see --list-presets")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="out")
    p.add_argument("--format", choices=["csv", "json"], default="csv",
                   help="csv writes rows.csv plus a JSON sidecar; json "
                        "embeds the rows in one JSON document")
    p.add_argument("--plot", action="store_true",
                   help="emit a minimal SVG next to the CSV")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and getattr(args, "list_presets", False):
        _emit({"presets": sorted(preset_configs())})
        return 0
    if args.command == "run" and not (args.preset or args.config):
        _emit({"error": "run needs --config or --preset"})
        return EXIT_BAD_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
