"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .commerce import MERCHANT, VENDOR, BankrollConfig, commerce_suite, commerce_summary, memory_premium_of, play_commerce, run_session
from .core import ConfigError
from .harness import (
    CONFIG_ENV,
    INTERVENTIONS,
    RunConfig,
    make_agent,
    oracle_values,
    read_jsonl,
    versioned,
    report_rows,
    run_intervention_suite,
    run_sweep,
    write_jsonl,
)
from .metrics import EpisodeRecord, STRATIFIERS, aggregate, bootstrap_ci, gap_decomposition
from .protocol import TRACE_SCHEMA, UsageError
from .scenarios import ScenarioSpec


def _csv(s: str) -> list[str]:
    return [x for x in s.split(",") if x]


def _grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV} if set)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--episodes", type=int, help="episodes per cell")
    p.add_argument("--regimes", type=_csv, help="comma-separated regimes")
    p.add_argument("--families", type=_csv, help="comma-separated families")
    p.add_argument("--roles", type=_csv, help="comma-separated agent roles")
    p.add_argument("--openers", type=_csv, help="comma-separated openers")


def _agent_args(p: argparse.ArgumentParser, multiple: bool = True) -> None:
    if multiple:
        p.add_argument("--agent", action="append", help="fixed-<pct>, oracle-posterior, oracle-revealed or external (repeatable)")
    else:
        p.add_argument("--agent", default="fixed-30", help="fixed-<pct>, oracle-posterior, oracle-revealed or external")
    p.add_argument("--agent-cmd", help="command line of an external line-protocol agent")
    p.add_argument("--agent-timeout", type=float, help="seconds per external reply")


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig.default()
    over = {
        "base_seed": getattr(args, "seed", None),
        "episodes_per_cell": getattr(args, "episodes", None),
        "regimes": getattr(args, "regimes", None),
        "families": getattr(args, "families", None),
        "roles": getattr(args, "roles", None),
        "openers": getattr(args, "openers", None),
        "agent_command": getattr(args, "agent_cmd", None),
        "agent_timeout": getattr(args, "agent_timeout", None),
        "output_dir": getattr(args, "out", None),
        "workers": getattr(args, "workers", None),
    }
    agents = getattr(args, "agent", None)
    if isinstance(agents, list):
        over["agents"] = tuple(agents)
    elif isinstance(agents, str):
        over["agents"] = (agents,)
    if getattr(args, "no_voice", False):
        over["voice"] = False
    if getattr(args, "oracle", False):
        over["attach_oracle"] = True
    if getattr(args, "payloads", False):
        over["record_payloads"] = True
    if getattr(args, "intervention", None):
        over["intervention"] = args.intervention
    over = {k: v for k, v in over.items() if v is not None}
    return replace(cfg, **over) if over else cfg


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_generate(args) -> int:
    cfg = _config(args)
    recs = [versioned("spec", s.to_dict()) for s in cfg.specs()]
    if args.out:
        digest = write_jsonl(args.out, recs)
        print(f"{len(recs)} specs -> {args.out} sha256={digest}")
    else:
        for r in recs:
            print(json.dumps(r, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_sweep(cfg)
    _emit({"trace_sha256": res.digest, "config_digest": cfg.digest, "health": [h.to_dict() for h in res.health], "by_agent": report_rows(res.report())})
    return 0


def cmd_oracle(args) -> int:
    if args.specs:
        specs = [ScenarioSpec.from_dict({k: v for k, v in r.items() if k not in ("type", "schema")}) for r in read_jsonl(args.specs)]
    else:
        specs = _config(args).specs()
    values = oracle_values(specs)
    if args.records:
        recs = [EpisodeRecord.from_dict(r) for r in read_jsonl(args.records)]
        recs = [replace(r, u_star=values.get((r.cell, r.regime))) for r in recs]
        write_jsonl(args.out or args.records, (versioned("record", r.to_dict()) for r in recs))
        print(f"attached u* to {len(recs)} records")
        return 0
    rows = [versioned("oracle", {"cell": k[0], "regime": k[1], "u_star": v}) for k, v in values.items()]
    if args.out:
        write_jsonl(args.out, rows)
        print(f"{len(rows)} oracle values -> {args.out}")
    else:
        mean = sum(values.values()) / len(values)
        _emit({"n": len(values), "mean_u_star": mean})
    return 0


def cmd_score(args) -> int:
    recs = [EpisodeRecord.from_dict(r) for r in read_jsonl(args.records)]
    by = tuple(args.by) if args.by else ("agent",)
    rows = report_rows(aggregate(recs, by))
    for row in rows:
        key = tuple(row["stratum"])
        se = [r.se for r in recs if r.se is not None and tuple(getattr(r, f) for f in by) == key]
        ci = bootstrap_ci(se, B=args.bootstrap, seed=args.ci_seed) if se else None
        row["SE_ci95"] = list(ci) if ci else None
    _emit(rows, args.out)
    return 0


def cmd_intervene(args) -> int:
    cfg = _config(args)
    res = run_intervention_suite(cfg, args.agent)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / "records.jsonl", (versioned("record", r.to_dict()) for r in res.records))
    dec = res.decomposition
    _emit({
        "agent": res.agent,
        "unsupported": res.unsupported,
        "mean_utility": {c: sum(u.values()) / len(u) for c in res.traces for u in [res.utilities(c)] if u},
        "mean_u_star": sum(res.u_star.values()) / len(res.u_star),
        "decomposition": None if dec is None else {**asdict(dec), "total": dec.total},
    })
    return 0


def cmd_decompose(args) -> int:
    """Gap decomposition from intervention records carrying u*."""
    recs = [EpisodeRecord.from_dict(r) for r in read_jsonl(args.records)]
    recs = [r for r in recs if args.agent is None or r.agent == args.agent]
    per = {c: {(r.cell, r.regime): r.utility for r in recs if r.condition == c} for c in INTERVENTIONS}
    missing = [c for c, d in per.items() if not d]
    if missing:
        raise UsageError(f"records lack conditions {missing}")
    oracle = {(r.cell, r.regime): r.u_star for r in recs if r.condition == "base"}
    if any(v is None for v in oracle.values()):
        raise UsageError("base records lack u*; run the oracle verb with --records first")
    dec = gap_decomposition(per["base"], per["oracle-posterior"], per["revealed-type"], oracle)
    _emit({**asdict(dec), "total": dec.total})
    return 0


def cmd_commerce(args) -> int:
    cfg = RunConfig.default()
    role = MERCHANT if args.role == "merchant" else VENDOR
    suite = commerce_suite(cfg.generator, args.seed, args.n, role)
    agent = make_agent(args.agent, replace(cfg, agent_command=args.agent_cmd) if args.agent_cmd else cfg)
    results = [play_commerce(s, agent) for s in suite]
    if args.out:
        write_jsonl(args.out, (versioned("commerce", r.to_dict()) for r in results))
    _emit({"agent": args.agent, "role": args.role, **commerce_summary(results)})
    return 0


def cmd_bankroll(args) -> int:
    cfg = BankrollConfig(T=args.T, C0=args.C0, b=args.b, r=args.r, tau=args.tau, mode=args.mode, K=args.K, seed=args.seed)
    rc = RunConfig.default()
    agent = make_agent(args.agent, replace(rc, agent_command=args.agent_cmd) if args.agent_cmd else rc)
    on = [run_session(cfg, agent, s, memory=True) for s in range(args.sessions)]
    out = {"agent": args.agent, "mode": cfg.mode, "sessions": args.sessions}
    out["mean_terminal"] = sum(s.terminal for s in on) / len(on)
    out["survival_rate"] = sum(s.survived for s in on) / len(on)
    out["mean_max_drawdown"] = sum(s.max_drawdown for s in on) / len(on)
    if args.memory_premium:
        off = [run_session(cfg, agent, s, memory=False) for s in range(args.sessions)]
        out["memory_premium"] = memory_premium_of(on, off)
    if args.out:
        write_jsonl(args.out, ({"schema": TRACE_SCHEMA, **rec} for s in on for rec in s.to_records()))
    _emit(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bargainlab", description="Seeded bilateral price-negotiation benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate", help="emit scenario specs")
    _grid_args(g)
    g.add_argument("--out", help="output JSONL path (default stdout)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run a sweep")
    _grid_args(r)
    _agent_args(r)
    r.add_argument("--out", help="output directory for traces, records and report")
    r.add_argument("--workers", type=int)
    r.add_argument("--oracle", action="store_true", help="attach full-information oracle values")
    r.add_argument("--no-voice", action="store_true", help="omit counterpart messages")
    r.add_argument("--payloads", action="store_true", help="record agent request payloads in traces")
    r.add_argument("--intervention", choices=INTERVENTIONS)
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="solve oracle values, optionally attaching them to records")
    _grid_args(o)
    o.add_argument("--specs", help="spec JSONL from the generate verb")
    o.add_argument("--records", help="records JSONL to annotate")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("score", help="aggregate records")
    s.add_argument("records")
    s.add_argument("--by", type=_csv, help=f"stratifiers from {','.join(STRATIFIERS)}")
    s.add_argument("--bootstrap", type=int, default=2000)
    s.add_argument("--ci-seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    i = sub.add_parser("intervene", help="replay under nested information conditions")
    _grid_args(i)
    _agent_args(i, multiple=False)
    i.add_argument("--out", help="output directory")
    i.add_argument("--workers", type=int)
    i.set_defaults(func=cmd_intervene)

    d = sub.add_parser("decompose", help="oracle-gap decomposition from intervention records")
    d.add_argument("records")
    d.add_argument("--agent")
    d.set_defaults(func=cmd_decompose)

    c = sub.add_parser("commerce", help="unit-economics sweep")
    _agent_args(c, multiple=False)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n", type=int, default=192)
    c.add_argument("--role", choices=("merchant", "vendor"), default="merchant")
    c.add_argument("--out")
    c.set_defaults(func=cmd_commerce)

    b = sub.add_parser("bankroll", help="multi-period cash-ledger sessions")
    _agent_args(b, multiple=False)
    b.add_argument("--sessions", type=int, default=10)
    b.add_argument("--mode", choices=("iid", "pool", "persistent"), default="pool")
    b.add_argument("--T", type=int, default=50)
    b.add_argument("--C0", type=float, default=100.0)
    b.add_argument("--b", type=float, default=8.0)
    b.add_argument("--r", type=float, default=1.0)
    b.add_argument("--tau", type=float, default=0.0)
    b.add_argument("--K", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--memory-premium", action="store_true", help="also run memory-suppressed sessions")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bankroll)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
