"""Command line entry point.

Exit codes: 0 when every check passes, 1 when violations are found (or, with
``--expect-violation``, when none is found), 2 on errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import reports as rp
from .config import RunConfig
from .errors import ConfigError, NoInput, PantsBenchError

EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


def _grid(text: str) -> tuple:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like 4x8")


def _imbalance(text: str) -> tuple:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError("imbalance must look like 3:1")


def _config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    for key in ("n", "R", "eps", "delta", "xi", "seed", "samples", "grid"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "out", None):
        base["out_dir"] = args.out
    base.pop("policy", None)
    try:
        return RunConfig(**base)
    except TypeError as e:
        raise ConfigError(f"config file: {e}")


def _model_geodesic(cfg: RunConfig, length, angle):
    from .geodesics import ModelClosedGeodesic

    k = cfg.n - 1
    Lam = np.eye(k)
    if angle and k >= 2:
        c, s = math.cos(angle), math.sin(angle)
        Lam[:2, :2] = [[c, -s], [s, c]]
    return ModelClosedGeodesic(2 * cfg.R if length is None else length, Lam)


def _cfgd(cfg: RunConfig) -> dict:
    # the output location is not part of what the run computes
    d = cfg.to_dict()
    d.pop("out_dir")
    return d


def _emit(cfg: RunConfig, name: str, report: dict) -> Path:
    out = rp.output_dir(cfg.out_dir)
    return rp.write_json(out / f"{name}.json", report)


# ---------------------------------------------------------------------------
# subcommands

def cmd_verify_lemma(args, cfg):
    from .suites import SUITES
    from .words import axis_invariants, evaluate, instruction_from_json

    if args.word:
        word = [instruction_from_json(d) for d in json.loads(Path(args.word).read_text())]
        g = evaluate(word, cfg.n)
        inv = axis_invariants(g)
        result = {"matrix": g, "invariants": inv.to_json()}
        report = rp.make_report("verify-lemma", _cfgd(cfg), {"loxodromic": True}, result=result)
        _emit(cfg, "verify-word", report)
        return report
    res = SUITES[args.lemma](cases=args.cases, seed=cfg.seed, n=cfg.n if args.lemma != "fermat" else 2)
    res.pop("_rows", None)
    passed = res.pop("passed")
    report = rp.make_report("verify-lemma", _cfgd(cfg), {args.lemma: passed}, measured=res)
    report["config"]["lemma"] = args.lemma
    report["config"]["cases"] = args.cases
    _emit(cfg, f"verify-{args.lemma}", report)
    return report


def _presentation(args, cfg):
    from .pants import build_bad_pants, build_perfect_pants, perturb_pants
    from .steiner import PantsPresentation

    if args.input:
        p = PantsPresentation.from_json(json.loads(Path(args.input).read_text()))
    elif args.kind == "bad":
        p = build_bad_pants(cfg.n, cfg.R)
    else:
        p = build_perfect_pants(cfg.n, cfg.R)
    if args.perturb:
        p = perturb_pants(p, args.perturb, cfg.seed)
    return p


def cmd_steiner(args, cfg):
    from .steiner import steiner_minimize

    p = _presentation(args, cfg)
    sg = steiner_minimize(p, seeds=cfg.steiner_seeds, rng=np.random.default_rng(cfg.seed))
    checks = {"nondegenerate": not sg.degenerate, "angles": sg.max_angle_error() < 1e-6,
              "stationary": sg.grad_norm < 1e-8}
    report = rp.make_report("steiner", _cfgd(cfg), checks, result=sg.to_json())
    _emit(cfg, "steiner", report)
    if args.svg:
        pts = {"x": sg.x, "y": sg.y, **{f"g{i}y": q for i, q in enumerate(sg.endpoints())}}
        segs = [("x", f"g{i}y") for i in range(3)]
        (rp.output_dir(cfg.out_dir) / "steiner.svg").write_text(rp.disc_svg(pts, segs, "Steiner graph"))
    return report


def cmd_classify(args, cfg):
    from .pants import Verdict, classify
    from .steiner import PantsPresentation

    if args.manifest:
        recs = rp.read_jsonl(Path(args.manifest))
        if not recs:
            raise NoInput("manifest is empty")
        items = [PantsPresentation.from_json(r) for r in recs]
    else:
        items = [_presentation(args, cfg)]
    out = []
    for i, p in enumerate(items):
        c = classify(p, cfg.R, cfg.eps, policy=cfg.policy, steiner_seeds=cfg.steiner_seeds)
        out.append({"index": i, "provenance": p.provenance, **c.to_json()})
    unresolved = sum(r["verdict"] == Verdict.UNRESOLVED.value for r in out)
    counts = {v.value: sum(r["verdict"] == v.value for r in out) for v in Verdict}
    report = rp.make_report("classify-pants", _cfgd(cfg), {"no_unresolved": unresolved == 0},
                            measured=counts, result=out)
    _emit(cfg, "classify", report)
    return report


def cmd_foot_measure(args, cfg):
    from . import footmeasure as fm

    gamma = _model_geodesic(cfg, args.length, args.holonomy_angle)
    spec = fm.GoodRegionSpec(cfg.R, cfg.eps, cfg.delta, gamma)
    est = fm.estimated_measure(spec, grid=cfg.grid, samples=cfg.samples, seed=cfg.seed, s_bins=args.s_bins)
    out = rp.output_dir(cfg.out_dir)
    m = gamma.fiber_dim
    header = ["s", *[f"w{i}" for i in range(m)], "density", "stderr"]
    rp.write_csv(out / "density.csv", header, est.to_rows())
    mass, mass_se = est.total_mass()
    measured = {"ratio": est.ratio, "B0": math.sqrt(est.ratio), "tau_residual": est.tau_residual,
                "centralizer_residual": est.centralizer_residual, "total_mass": mass,
                "total_mass_stderr": mass_se, "cells": int(est.values.size)}
    checks = {"finite_ratio": math.isfinite(est.ratio) and est.values.min() > 0,
              "tau_invariant": est.tau_residual < 3.0, "centralizer_invariant": est.centralizer_residual < 3.0}
    report = rp.make_report("foot-measure", _cfgd(cfg), checks, measured=measured)
    report["config"].update({"length": gamma.length, "holonomy_angle": args.holonomy_angle, "s_bins": args.s_bins})
    _emit(cfg, "foot-measure", report)
    if args.svg:
        (out / "density.svg").write_text(rp.heatmap_svg(est.mesh.centers, est.values[0], "density, first s-bin"))
    return report


def _atlases(args, cfg, gamma):
    from . import matching as mt

    if args.atlas:
        recs = rp.read_jsonl(Path(args.atlas))
        if not recs:
            raise NoInput("atlas file has no entries")
        by_curve: dict = {}
        for r in recs:
            by_curve.setdefault(str(r.get("curve", "g0")), []).append(r)
        return {c: mt.FootAtlas.from_records(gamma, rs) for c, rs in sorted(by_curve.items())}, recs
    if args.mode == "icecap":
        mode = mt.IceCap(args.imbalance, args.cap_radius)
        N = sum(args.imbalance) if args.count is None else args.count
    elif args.mode == "bands":
        mode = mt.Bands()
        N = 300 if args.count is None else args.count
    else:
        mode = mt.QuasiUniform()
        N = 200 if args.count is None else args.count
    atlas = mt.synthesize_atlas(gamma, mode, N, cfg.seed)
    return {"g0": atlas}, None


def cmd_match(args, cfg):
    from . import matching as mt

    gamma = _model_geodesic(cfg, args.length, args.holonomy_angle)
    atlases, recs = _atlases(args, cfg, gamma)
    out = rp.output_dir(cfg.out_dir)
    results, checks, certs = {}, {}, {}
    for curve, atlas in atlases.items():
        res = mt.find_matching(atlas, cfg.xi)
        results[curve] = res.to_json()
        if res.perfect:
            checks[f"{curve}:matched"] = mt.verify_matching(atlas, res)
        else:
            checks[f"{curve}:matched"] = False
            certs[curve] = {"verified": mt.verify_violation(atlas, cfg.xi, res.violation),
                            **res.violation.to_json()}
        if args.svg:
            s, w = atlas.arrays()
            hl = [] if res.perfect else res.violation.certificate
            (out / f"feet-{curve}.svg").write_text(rp.fiber_scatter_svg(s, w, gamma.length, hl, f"feet on {curve}"))
    assembly = None
    if recs is not None and all(r["perfect"] for r in results.values()):
        corpus: dict = {}
        for r in recs:
            corpus.setdefault(str(r["pants_id"]), {})[int(r.get("cuff", 0))] = str(r.get("curve", "g0"))
        if all(sorted(c) == [0, 1, 2] for c in corpus.values()):
            matchings = {}
            for curve, atlas in atlases.items():
                labels = [(e.pants_id, e.cuff) for e in atlas.entries]
                matchings[curve] = (labels, results[curve]["sigma"])
            full = {pid: [c[i] for i in range(3)] for pid, c in corpus.items()}
            assembly = mt.double_and_assemble(matchings, full).to_json()
        else:
            assembly = {"skipped": "some pants do not have all three cuffs in the atlas"}
    result = {"matchings": results, "certificates": certs, "assembly": assembly}
    report = rp.make_report("match", _cfgd(cfg), checks, result=result)
    report["config"].update({"mode": None if args.atlas else args.mode, "length": gamma.length})
    _emit(cfg, "match", report)
    return report


def cmd_assemble(args, cfg):
    from . import matching as mt

    if args.corpus:
        d = json.loads(Path(args.corpus).read_text())
        corpus = d.get("corpus", {})
        matchings = {c: ([tuple(e) for e in v["entries"]], list(v["sigma"])) for c, v in d.get("matchings", {}).items()}
    elif args.random:
        matchings, corpus = mt.random_corpus(args.random, args.curves, cfg.seed)
    else:
        matchings, corpus = mt.self_matched_pants()
    a = mt.double_and_assemble(matchings, corpus)
    checks = {"chi": sum(a.euler) == -2 * len(corpus), "degree_3": all(d == 3 for d in a.degrees().values())}
    report = rp.make_report("assemble", _cfgd(cfg), checks, result=a.to_json())
    _emit(cfg, "assemble", report)
    return report


def cmd_report(args, cfg):
    out = rp.output_dir(cfg.out_dir)
    rows = {}
    for p in sorted(out.glob("*.json")):
        if p.name == "report.json":
            continue
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(d, dict) and "schema_version" in d:
            rows[p.stem] = {"command": d.get("command"), "passed": d.get("passed"), "checks": d.get("checks"),
                            "measured": d.get("measured")}
    if not rows:
        raise NoInput(f"no reports found in {out}")
    report = rp.make_report("report", _cfgd(cfg), {k: bool(v["passed"]) for k, v in rows.items()}, result=rows)
    _emit(cfg, "report", report)
    return report


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with run-config fields")
    common.add_argument("--n", type=int)
    common.add_argument("--R", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--xi", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--grid", type=_grid)
    common.add_argument("--out", help="output directory (the PANTSBENCH_OUT variable overrides it)")
    common.add_argument("--expect-violation", action="store_true")

    ap = argparse.ArgumentParser(prog="pantsbench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-lemma", parents=[common])
    p.add_argument("--lemma", default="nan", choices=["nan", "absorb", "eight-word", "fermat", "horospherical"])
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--word", help="JSON array of instructions; reports its axis invariants")
    p.set_defaults(func=cmd_verify_lemma)

    for name, func in (("steiner", cmd_steiner), ("classify-pants", cmd_classify)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--input", help="presentation JSON")
        p.add_argument("--kind", choices=["perfect", "bad"], default="perfect")
        p.add_argument("--perturb", type=float, default=0.0)
        if name == "steiner":
            p.add_argument("--svg", action="store_true")
        else:
            p.add_argument("--manifest", help="JSONL of presentations")
        p.set_defaults(func=func)

    p = sub.add_parser("foot-measure", parents=[common])
    p.add_argument("--length", type=float, help="cuff length, default 2R")
    p.add_argument("--holonomy-angle", type=float, default=0.0)
    p.add_argument("--s-bins", type=int, default=1)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_foot_measure)

    p = sub.add_parser("match", parents=[common])
    p.add_argument("--atlas", help="JSONL entries with pants_id, orientation, s, w and optional cuff, curve")
    p.add_argument("--mode", choices=["quasiuniform", "icecap", "bands"], default="quasiuniform")
    p.add_argument("--imbalance", type=_imbalance, default=(3, 1))
    p.add_argument("--cap-radius", type=float, default=0.1)
    p.add_argument("--count", type=int)
    p.add_argument("--length", type=float, help="cuff length, default 2R")
    p.add_argument("--holonomy-angle", type=float, default=0.0)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("assemble", parents=[common])
    p.add_argument("--corpus", help="JSON with 'corpus' and 'matchings'")
    p.add_argument("--random", type=int, help="number of pants in a random corpus")
    p.add_argument("--curves", type=int, default=6)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("report", parents=[common])
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = _config(args)
        report = args.func(args, cfg)
    except (PantsBenchError, OSError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    passed = bool(report["passed"])
    print(f"{args.command}: {'pass' if passed else 'violations found'}")
    if args.expect_violation:
        return EXIT_OK if not passed else EXIT_VIOLATION
    return EXIT_OK if passed else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
