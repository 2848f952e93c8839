"""Command-line front end.

Exit codes: 0 success, 1 property or constraint failure, 2 configuration or
input error, 3 nothing completed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import dataio, neural, report, verify
from .allocation import AllocationPolicy
from .errors import ConfigurationError, DataError
from .evaluate import (CASE1_STRATEGIES, CASE2_STRATEGIES, average_profit_aggregated,
                       average_profit_independent, hierarchical_rmse, run_sweep)
from .hierarchy import Hierarchy
from .reconcile import bottom_up, train_quality, train_value

log = logging.getLogger("valrecon")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NOTHING = 0, 1, 2, 3
CASESTUDY_STRATEGIES = CASE2_STRATEGIES


def out_dir(args, cfg):
    d = args.out or cfg.out or os.environ.get("OUTPUT_DIR") or "valrecon-out"
    os.makedirs(d, exist_ok=True)
    return d


def load_raw(cfg: cfgmod.RunConfig):
    if cfg.source == "csv":
        return dataio.ingest_csv(cfg.generation, cfg.prices, one_sided=cfg.one_sided)
    return dataio.synthesize(cfg.synthetic_spec())


def load_dataset(cfg: cfgmod.RunConfig, raw=None):
    raw = load_raw(cfg) if raw is None else raw
    return dataio.prepare(raw, cfg.base, cfg.lags, cfg.context(), cfg.lead, cfg.seed)


def cmd_synth(args, cfg):
    d = out_dir(args, cfg)
    raw = dataio.synthesize(cfg.synthetic_spec())
    gen, pri = os.path.join(d, "generation.csv"), os.path.join(d, "prices.csv")
    dataio.write_csv(raw, gen, pri, comment=cfg.provenance())
    print(f"wrote {gen} and {pri} ({len(raw.timestamps)} hours, {raw.m} producers)")
    return EXIT_OK


def cmd_fit(args, cfg):
    d = out_dir(args, cfg)
    ds = load_dataset(cfg)
    m = ds.records.m
    names = ["aggregate"] + [f"leaf_{i}" for i in range(1, m + 1)]
    rows = []
    for name, f in zip(names, ds.forecasters):
        rows.append([name, f.spec.objective, "" if f.spec.level is None else repr(float(f.spec.level)),
                     repr(float(f.intercept))] + [repr(float(c)) for c in f.coef])
    lags = ds.forecasters[0].spec.lags
    report.write_table(rows, ["series", "objective", "level", "intercept"] + [f"lag_{l}" for l in lags],
                       os.path.join(d, "forecasters.csv"), cfg.provenance())
    recs = ds.records
    split = np.where(np.arange(len(recs)) < ds.n_train, "train", "test")
    out = [[int(recs.t[k]), dataio.format_timestamp(ds.timestamps[k]), split[k]]
           + [repr(float(v)) for v in recs.base[k]] + [repr(float(v)) for v in recs.actual[k]]
           for k in range(len(recs))]
    report.write_table(out, ["t", "timestamp", "split"] + [f"base_{n}" for n in names]
                       + [f"actual_{n}" for n in names], os.path.join(d, "base_forecasts.csv"),
                       cfg.provenance())
    print(f"fitted {len(ds.forecasters)} {cfg.base} forecasters; {ds.n_train} train / "
          f"{len(recs) - ds.n_train} test records")
    return EXIT_OK


def cmd_train(args, cfg):
    d = out_dir(args, cfg)
    ds = load_dataset(cfg)
    tc = cfg.train_config(w=args.w)
    kind = args.strategy
    status = "ok"
    if kind == "bottom_up":
        model = bottom_up(Hierarchy.two_level(ds.records.m))
    elif kind.startswith("quality"):
        model, _ = train_quality(ds.train, tc, kind, ds.capacities)
    else:
        model, _, rep = train_value(ds.train, tc, kind, ds.capacities)
        status = rep.status
        report.write_training_csv(rep, ds.records.m, os.path.join(d, f"training_{kind}.csv"),
                                  cfg.provenance())
    if model.g is not None:
        neural.save(model.g, os.path.join(d, f"model_{kind}.txt"),
                    {"config_hash": cfg.hash(), "seed": cfg.seed, "kind": kind})
    test = ds.test
    ap_ind = average_profit_independent(test)
    ap = average_profit_aggregated(test, model, AllocationPolicy(tc.w, tc.gamma_mode))
    rmse = hierarchical_rmse(test, model)
    rows = [[i + 1, float(ap[i]), float(ap_ind[i]), float(ap[i] - ap_ind[i])] for i in range(len(ap))]
    report.write_table(rows, ["producer", "ap", "ap_independent", "ap_change"],
                       os.path.join(d, f"summary_{kind}.csv"), cfg.provenance())
    print(f"{kind} w={tc.w}: status={status} rmse={rmse:.4f} ap_change={np.round(ap - ap_ind, 4).tolist()}")
    return EXIT_OK if status == "ok" else EXIT_FAIL


def _sweep_exit(rep):
    trained = [r for r in rep.results if r.strategy != "independent"]
    if trained and all(r.status == "failed" for r in trained):
        return EXIT_NOTHING
    return EXIT_OK


def run_case_sweep(cfg, d, strategies, png=True):
    ds = load_dataset(cfg)
    rep = run_sweep(ds, strategies, cfg.w_grid, cfg.train_config(), jobs=cfg.jobs)
    report.write_sweep_report(rep, d, cfg.provenance(), ds.records.m, png=png)
    bad = [(r.strategy, r.w) for r in rep.results if r.status != "ok"]
    if bad:
        log.warning("cells not ok: %s", bad)
    return rep


def cmd_sweep(args, cfg):
    d = out_dir(args, cfg)
    rep = run_case_sweep(cfg, d, cfg.strategies, png=not args.no_png)
    print(f"sweep written to {d}")
    return _sweep_exit(rep)


def casestudy(cfg, d):
    """Repeat training over ``cfg.seeds`` seeds at a single weight and report
    the mean and standard deviation of each producer's average profit."""
    ds = load_dataset(cfg)
    test = ds.test
    ap_ind = average_profit_independent(test)
    policy = AllocationPolicy(cfg.w, cfg.train_config().gamma_mode)
    per = {s: [] for s in CASESTUDY_STRATEGIES}
    status = {s: "ok" for s in CASESTUDY_STRATEGIES}
    for k in range(cfg.seeds):
        tc = cfg.train_config(seed=cfg.seed + k)
        for s in CASESTUDY_STRATEGIES:
            if s == "independent":
                per[s].append(ap_ind)
                continue
            if s == "bottom_up":
                model = bottom_up(Hierarchy.two_level(test.m))
            elif s.startswith("quality"):
                model, _ = train_quality(ds.train, tc, s, ds.capacities)
            else:
                model, _, rep = train_value(ds.train, tc, s, ds.capacities)
                if rep.status != "ok":
                    status[s] = rep.status
            per[s].append(average_profit_aggregated(test, model, policy))
    rows = []
    for s in CASESTUDY_STRATEGIES:
        a = np.array(per[s])
        for i in range(a.shape[1]):
            rows.append([s, i + 1, float(a[:, i].mean()), float(a[:, i].std()), status[s]])
    report.write_table(rows, ["strategy", "producer", "AP_mean", "AP_std", "status"],
                       os.path.join(d, "casestudy.csv"), cfg.provenance())
    return rows


def cmd_case(args, cfg):
    d = out_dir(args, cfg)
    if args.case == "case1":
        cfg = replace(cfg, base="mean", case="case1", strategies=CASE1_STRATEGIES)
        rep = run_case_sweep(cfg, d, CASE1_STRATEGIES, png=not args.no_png)
        code = _sweep_exit(rep)
    elif args.case == "case2":
        cfg = replace(cfg, base="quantile", case="case2", strategies=CASE2_STRATEGIES)
        rep = run_case_sweep(cfg, d, CASE2_STRATEGIES, png=not args.no_png)
        code = _sweep_exit(rep)
    else:
        syn = dict(cfg.synthetic)
        syn.setdefault("price_regime", "switching")
        cfg = replace(cfg, base="mean", case="casestudy", synthetic=syn, strategies=CASESTUDY_STRATEGIES,
                      penalty_lags=24 if cfg.penalty_lags is None else cfg.penalty_lags)
        casestudy(cfg, d)
        code = EXIT_OK
    with open(os.path.join(d, "config.ini"), "w") as fh:
        fh.write(f"# {cfg.provenance()}\n{cfg.render()}")
    print(f"{args.case} report written to {d}")
    return code


def cmd_verify(args, cfg):
    d = out_dir(args, cfg)
    results = verify.run_all(cfg.seed, args.scale)
    lines = [r.line() for r in results]
    with open(os.path.join(d, "verify.txt"), "w") as fh:
        fh.write(f"# {cfg.provenance()}\n" + "\n".join(lines) + "\n")
    for ln in lines:
        print(ln)
    if all(r.ok for r in results):
        return EXIT_OK
    bad = verify.dump_counterexamples(results, os.path.join(d, "counterexamples.json"))
    for name, case in bad.items():
        print(f"counterexample for {name}: {case}", file=sys.stderr)
    return EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="valrecon", description="Value-oriented forecast reconciliation "
                                "for a wind power portfolio trading in a forward market.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--jobs", type=int, help="parallel sweep cells")
    common.add_argument("--out", help="output directory (fallback: OUTPUT_DIR, then ./valrecon-out)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic generation and price CSVs")
    sub.add_parser("fit", parents=[common], help="fit base forecasters and write base forecasts")
    t = sub.add_parser("train", parents=[common], help="train one reconciliation strategy")
    t.add_argument("--strategy", default="value_learned",
                   choices=("bottom_up", "quality_learned", "quality_linear", "value_learned", "value_linear"))
    t.add_argument("--w", type=float, help="allocation weight (default [experiment] w)")
    s = sub.add_parser("sweep", parents=[common], help="strategies x allocation weights")
    s.add_argument("--no-png", action="store_true", help="skip matplotlib figures")
    c = sub.add_parser("case", parents=[common], help="run a predefined experiment")
    c.add_argument("case", choices=("case1", "case2", "casestudy"))
    c.add_argument("--no-png", action="store_true", help="skip matplotlib figures")
    v = sub.add_parser("verify", parents=[common], help="randomised property suites")
    v.add_argument("--scale", type=float, default=1.0, help="multiplier on instance counts")
    return p


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "train": cmd_train, "sweep": cmd_sweep,
            "case": cmd_case, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config, {"seed": args.seed, "jobs": args.jobs})
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
