"""Command line interface.

Verbs:
  run <preset|config-file> [--override key=value ...] [--seeds a,b,c] [--out dir]
  list-presets
  check

Exit codes: 0 success, 1 config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .config import ConfigError, apply_dotted, load
from .presets import preset, preset_names
from .runner import run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmi", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="run a preset or config file")
    run_p.add_argument("target", help="preset name or path to a config file")
    run_p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")
    run_p.add_argument("--seeds", default=None, help="comma-separated seed list")
    run_p.add_argument("--out", default=None, help="output directory for CSV metrics")

    sub.add_parser("list-presets", help="list preset experiment names")
    sub.add_parser("check", help="run the fast invariant suite")
    return parser


def _cmd_run(args) -> int:
    if os.path.exists(args.target):
        cfg = load(args.target)
    else:
        cfg = preset(args.target)
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        apply_dotted(cfg, key.strip(), value)
    if args.seeds is not None:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    out_dir = args.out if args.out is not None else cfg.out_dir
    records = run_experiment(cfg, out_dir=out_dir, log=print)
    print(f"wrote {len(records)} run(s) to {out_dir}")
    return 0


def _cmd_list_presets() -> int:
    for name in preset_names():
        print(name)
    return 0


def _cmd_check() -> int:
    """Fast numeric invariants, a few seconds end to end."""
    from . import autodiff as ad
    from .autodiff import Tensor
    from .bank import MemoryBank, rank_by_similarity
    from .objectives import (la_ratio_loss_from_scores, nce_loss_from_scores,
                             normalized_nce_loss_from_scores)
    from .samplers import NegativeSpec, negative_pool

    rng = np.random.default_rng(0)
    failures = 0

    def report(name: str, ok: bool):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        failures += 0 if ok else 1

    v = rng.normal(0, 50, size=200)
    lse = ad.logsumexp_array(v)
    report("logsumexp bounds", v.max() <= lse <= v.max() + math.log(v.size) + 1e-12)

    f_denom = Tensor(rng.normal(0, 3, (4, 16)))
    f_close = Tensor(f_denom.data[:, :3].copy())
    plain = nce_loss_from_scores(f_close, f_denom).item()
    norm = normalized_nce_loss_from_scores(f_close, f_denom).item()
    report("count normalization constants",
           abs((plain - norm) - (math.log(16) - math.log(3))) < 1e-12)
    ratio = la_ratio_loss_from_scores(f_close, f_denom, kappa=3.7).item()
    report("aggregation ratio equals plain loss", abs(ratio - plain) < 1e-10)

    entries = rng.standard_normal((64, 5))
    entries /= np.linalg.norm(entries, axis=1, keepdims=True)
    bank = MemoryBank(entries, alpha=0.5, renormalize=True)
    query = entries[7]
    order = rank_by_similarity(bank, query)
    report("self is nearest", order[0] == 7)
    pool = negative_pool(NegativeSpec(kind="ball", outer_percent=25.0), bank, query, 7)
    ranks = {int(i): r for r, i in enumerate(order)}
    report("ball pool within rank bound", all(ranks[int(i)] < 16 for i in pool))

    m = MemoryBank.zeros(1, 3, alpha=0.5)
    g = rng.standard_normal((4, 3))
    for row in g:
        m.update(0, row)
    closed = 0.5 * np.sum(0.5 ** np.arange(3, -1, -1)[:, None] * g, axis=0)
    report("bank recurrence closed form", np.allclose(m.entries[0], closed, atol=1e-12))

    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage problems; those are config errors here
        return 0 if exc.code in (0, None) else 1
    try:
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "list-presets":
            return _cmd_list_presets()
        return _cmd_check()
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
