"""Command-line interface: ``bcflsim run | gas-report | inspect``.

Exit codes: 0 success, 1 scenario or artifact error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ScenarioError, load_scenario
from .ledger import GasReport, price_presets
from .learning import MalformedModel, model_header
from .orchestration import BcflSimulation, RunReport, adversarial_variants
from .store import BlobStore, StoreError

REPORT_FILE = "report.json"
METRICS_FILE = "metrics.csv"
GAS_FILE = "gas_report.json"
SNAPSHOT_FILE = "snapshot.json"
BLOB_DIR = "blobs"

INSPECT_QUERIES = ("phase", "round", "scores", "rosters", "cid", "whitelist", "balances")


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcflsim",
        description="Deterministic blockchain-coordinated federated learning simulator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{run,gas-report,inspect}", required=True)

    run = sub.add_parser("run", help="run a scenario and export its report, metrics and gas report")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override config.seed")
    run.add_argument("--gas-preset", default=None, choices=sorted(price_presets()),
                     help="gas price preset (default: the scenario's)")
    run.add_argument("--format", choices=("text", "json", "csv"), default="text",
                     help="format of the per-round summary on stdout")
    run.add_argument("--workers", type=int, default=1, help="parallel local-training threads")

    gas = sub.add_parser("gas-report", help="deployment costs of a completed run under every price preset")
    gas.add_argument("--out", required=True, help="directory of a completed run")
    gas.add_argument("--format", choices=("text", "json", "csv"), default="text")
    gas.add_argument("--denomination", type=int, default=1,
                     help="base units per display unit, e.g. 1000000000000000000")

    insp = sub.add_parser("inspect", help="print contract state, CID metadata or whitelist of a completed run")
    insp.add_argument("--out", required=True, help="directory of a completed run")
    insp.add_argument("query", choices=INSPECT_QUERIES)
    insp.add_argument("value", nargs="?", help="CID for the 'cid' query")
    insp.add_argument("--round", type=int, default=None, help="1-based round for 'scores' (default: all)")
    insp.add_argument("--task", default=None, help="task name (default: the first task)")
    insp.add_argument("--format", choices=("text", "json"), default="text")
    return parser


# -- run ------------------------------------------------------------------------


def _summary_line(rec: dict, fmt: str, label: str = "") -> str:
    if fmt == "json":
        return json.dumps({"label": label, **rec}, sort_keys=True) if label else json.dumps(rec, sort_keys=True)
    if fmt == "csv":
        return ",".join(str(rec[c]) for c in
                        ("round", "global_loss", "global_accuracy", "n_selected", "tokens_paid", "gas_used"))
    prefix = f"[{label}] " if label else ""
    return (f"{prefix}round {rec['round']:>3}: loss={rec['global_loss']:.4f} "
            f"acc={rec['global_accuracy']:.4f} selected={rec['n_selected']} "
            f"tokens={rec['tokens_paid']} gas={rec['gas_used']}")


def _print_rounds(report: RunReport, fmt: str, label: str = "") -> None:
    for row in report.metrics_rows():
        print(_summary_line(row, fmt, label))


def cmd_run(scenario_path: str, out_dir: str, seed: int | None = None, gas_preset: str | None = None,
            fmt: str = "text", workers: int = 1) -> int:
    try:
        scenario = load_scenario(scenario_path, seed, gas_preset)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        print("round,global_loss,global_accuracy,n_selected,tokens_paid,gas_used")

    if scenario.kind == "adversarial_did":
        variant_a, variant_b = adversarial_variants(scenario)
        sim = BcflSimulation(variant_a, workers)
        report_a = sim.run()
        _print_rounds(report_a, fmt, "selection+bonus")
        sim_b = BcflSimulation(variant_b, workers)
        report_b = sim_b.run()
        _print_rounds(report_b, fmt, "baseline")
        payload = {
            "kind": "adversarial_did",
            "with_selection": report_a.to_dict(),
            "baseline": report_b.to_dict(),
            "final_loss": {"with_selection": report_a.final_loss, "baseline": report_b.final_loss},
        }
        (out / REPORT_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        (out / METRICS_FILE).write_text(report_a.to_csv())
        (out / "metrics_baseline.csv").write_text(report_b.to_csv())
        sim_b.store.save_to(out / BLOB_DIR)
    else:
        sim = BcflSimulation(scenario, workers)
        report = sim.run()
        _print_rounds(report, fmt)
        (out / REPORT_FILE).write_text(report.to_json())
        (out / METRICS_FILE).write_text(report.to_csv())

    (out / GAS_FILE).write_text(sim.ledger.gas_report().to_json())
    (out / SNAPSHOT_FILE).write_text(json.dumps(sim.snapshot(), indent=2, sort_keys=True) + "\n")
    sim.store.save_to(out / BLOB_DIR)
    return 0


# -- gas report -------------------------------------------------------------------


def _load_snapshot(out_dir: str) -> dict:
    path = Path(out_dir) / SNAPSHOT_FILE
    try:
        return json.loads(path.read_text())
    except OSError:
        raise CliError(f"no run snapshot at {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def preset_comparison(deployments: list[dict], denomination: int = 1) -> dict:
    """Deployment fees of each kind under every price preset."""
    presets = price_presets()
    names = sorted(presets, key=lambda n: (presets[n], n))
    gas_by_kind: dict[str, int] = {}
    for dep in deployments:
        gas_by_kind[dep["kind"]] = gas_by_kind.get(dep["kind"], 0) + dep["gas_used"]
    fmt = GasReport(denomination=denomination)
    lo, hi = names[0], names[-1]

    def row(kind: str, gas: int) -> dict:
        fees = {n: gas * presets[n] for n in names}
        ratio = fees[hi] // fees[lo] if fees[lo] and fees[hi] % fees[lo] == 0 else (
            fees[hi] / fees[lo] if fees[lo] else None)
        return {"kind": kind, "gas_used": gas, "fees": fees,
                "fees_display": {n: fmt.display(f) for n, f in fees.items()}, "ratio": ratio}

    entries = [row(k, g) for k, g in gas_by_kind.items()]
    return {
        "presets": {n: presets[n] for n in names},
        "ratio_of": f"{hi}/{lo}",
        "denomination": denomination,
        "entries": entries,
        "total": row("total", sum(gas_by_kind.values())),
    }


def _render_comparison(cmp: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(cmp, indent=2, sort_keys=True) + "\n"
    names = list(cmp["presets"])
    rows = cmp["entries"] + ([cmp["total"]] if cmp["entries"] else [])
    header = ["contract", "gas_used"] + [f"fee[{n}]" for n in names] + ["ratio"]
    table = [[r["kind"], str(r["gas_used"])] + [r["fees_display"][n] for n in names]
             + ["" if r["ratio"] is None else str(r["ratio"])] for r in rows]
    if fmt == "csv":
        return "\n".join(",".join(line) for line in [header, *table]) + "\n"
    widths = [max(len(line[i]) for line in [header, *table]) for i in range(len(header))]

    def fmt_line(line):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths)))

    out = [fmt_line(header), "  ".join("-" * w for w in widths)]
    for line in table:
        if line[0] == "total":
            out.append("  ".join("-" * w for w in widths))
        out.append(fmt_line(line))
    return "\n".join(out) + "\n"


def cmd_gas_report(out_dir: str, fmt: str = "text", denomination: int = 1) -> int:
    try:
        snapshot = _load_snapshot(out_dir)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if denomination < 1:
        print("error: --denomination must be >= 1", file=sys.stderr)
        return 2
    sys.stdout.write(_render_comparison(preset_comparison(snapshot.get("deployments", []), denomination), fmt))
    return 0


# -- inspect ----------------------------------------------------------------------


def _pick_task(snapshot: dict, name: str | None) -> tuple[str, dict]:
    tasks = snapshot.get("tasks", {})
    if not tasks:
        raise CliError("snapshot holds no task contracts")
    if name is None:
        name = sorted(tasks)[0]
    if name not in tasks:
        raise CliError(f"unknown task {name!r}; known: {sorted(tasks)}")
    return name, tasks[name]


def inspect_query(out_dir: str, query: str, value: str | None = None, round_: int | None = None,
                  task: str | None = None) -> object:
    snapshot = _load_snapshot(out_dir)
    if query == "whitelist":
        return snapshot.get("whitelist", [])
    if query == "balances":
        return snapshot.get("token_balances", {})
    if query == "cid":
        if not value:
            raise CliError("the 'cid' query needs a CID argument")
        try:
            blob = BlobStore(Path(out_dir) / BLOB_DIR).get(value)
        except StoreError as exc:
            raise CliError(f"cid {value}: {exc}") from None
        try:
            return {"cid": value, **model_header(blob)}
        except MalformedModel:
            return {"cid": value, "bytes": len(blob), "model": False}
    _, state = _pick_task(snapshot, task)
    if query == "phase":
        return state["phase"]
    if query == "round":
        return state["current_round"]
    if query == "rosters":
        return state["rosters"]
    if query == "scores":
        scores = state["scores"]
        if round_ is None:
            return scores
        key = str(round_ - 1)
        if key not in scores:
            raise CliError(f"no scores for round {round_}")
        return scores[key]
    raise CliError(f"unknown query {query!r}")


def _render_inspect(result: object, fmt: str) -> str:
    if fmt == "json" or isinstance(result, (dict, list)):
        if fmt == "text" and isinstance(result, dict):
            return "\n".join(f"{k}: {json.dumps(v, sort_keys=True)}" for k, v in result.items()) + "\n"
        if fmt == "text" and isinstance(result, list):
            return "\n".join(json.dumps(v, sort_keys=True) for v in result) + ("\n" if result else "")
        return json.dumps(result, indent=2, sort_keys=True) + "\n"
    return f"{result}\n"


def cmd_inspect(out_dir: str, query: str, value: str | None = None, round_: int | None = None,
                task: str | None = None, fmt: str = "text") -> int:
    try:
        result = inspect_query(out_dir, query, value, round_, task)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(_render_inspect(result, fmt))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.scenario, args.out, args.seed, args.gas_preset, args.format, args.workers)
    if args.command == "gas-report":
        return cmd_gas_report(args.out, args.format, args.denomination)
    return cmd_inspect(args.out, args.query, args.value, args.round, args.task, args.format)


if __name__ == "__main__":
    sys.exit(main())
