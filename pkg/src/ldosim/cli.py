"""Command-line front end.

Exit codes: 0 success, 1 I/O error, 2 netlist parse/validation error,
3 solver failure (NonConvergence or a singular system), 4 report written but
at least one acceptance check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .analyses import ac_csv, op_csv, run_ac, run_dc_sweep, run_op, run_tran, sweep_csv, tran_csv
from .errors import NetlistError, NonConvergence, SingularMatrix
from .ldobench import (
    ABLATION_CC,
    ABLATION_AC,
    BODE_AC,
    LdoTemplate,
    _ablation_csv,
    apply_overrides,
    bode_metrics,
    emit_report,
    experiment_miller_ablation,
    ota_ac_response,
    run_experiments,
    template_fields,
)
from .netlist import Ac, DcSweep, Op, Tran, parse_value, read_netlist

EXIT_OK, EXIT_IO, EXIT_PARSE, EXIT_SOLVER, EXIT_CHECKS = 0, 1, 2, 3, 4


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _override(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    key = key.strip().lower()
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    if key not in template_fields():
        raise argparse.ArgumentTypeError(f"unknown template field {key!r}")
    try:
        return key, parse_value(value.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _csv_to_json(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]

    def cell(v: str):
        try:
            f = float(v)
        except ValueError:
            return v
        return None if f != f else f

    return {"columns": header, "rows": [[cell(v) for v in r] for r in body]}


def _emit(text_by_name: dict[str, str], out: Path | None, fmt: str) -> None:
    """Write CSV texts (or their JSON form) to ``out``, or concatenate to stdout."""
    if fmt == "json":
        text_by_name = {Path(n).with_suffix(".json").name: json.dumps(_csv_to_json(t), indent=2) + "\n"
                        for n, t in text_by_name.items()}
    if out is None:
        for text in text_by_name.values():
            sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    for name, text in text_by_name.items():
        (out / name).write_text(text, encoding="utf-8", newline="")


def _probe(circuit, requested: str | None) -> str:
    if requested:
        return requested.lower()
    nodes = circuit.node_order
    return "out" if "out" in nodes else nodes[-1]


def cmd_run(args) -> int:
    circuit = read_netlist(args.netlist)
    if not circuit.analyses:
        _err(f"{args.netlist}: no analysis directives")
    stem = Path(args.netlist).stem
    outputs: dict[str, str] = {}
    for k, a in enumerate(circuit.analyses):
        if isinstance(a, Op):
            name, text = "op", op_csv(run_op(circuit))
        elif isinstance(a, DcSweep):
            name, text = "dc", sweep_csv(run_dc_sweep(circuit, a))
        elif isinstance(a, Ac):
            name, text = "ac", ac_csv(run_ac(circuit, a, output=_probe(circuit, args.probe)))
        elif isinstance(a, Tran):
            name, text = "tran", tran_csv(run_tran(circuit, a))
        else:  # pragma: no cover - parser only produces the four kinds
            raise TypeError(a)
        outputs[f"{stem}_{k}_{name}.csv"] = text
    _emit(outputs, args.out, args.format)
    return EXIT_OK


def cmd_check(args) -> int:
    circuit = read_netlist(args.netlist)
    print(f"ok: {len(circuit.elements)} elements, {len(circuit.nodes)} nodes")
    return EXIT_OK


def _template(args) -> LdoTemplate:
    return apply_overrides(LdoTemplate(), dict(args.set or ()))


def cmd_ota_bode(args) -> int:
    t = _template(args)
    resp = ota_ac_response(t.ota, BODE_AC)
    m = bode_metrics(resp)
    if args.format == "csv":
        _emit({"ota_bode.csv": ac_csv(resp)}, args.out, "csv")
        return EXIT_OK
    doc = {"dc_gain_db": m.dc_gain_db, "f3db_hz": m.f3db, "gbw_hz": m.gbw,
           "unity_gain_frequency_hz": m.unity_gain_frequency, "phase_margin_deg": m.phase_margin_deg,
           "absent": list(m.absent)}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "ota_bode.json").write_text(text, encoding="utf-8", newline="")
        (args.out / "ota_bode.csv").write_text(ac_csv(resp), encoding="utf-8", newline="")
    return EXIT_OK


def cmd_miller_sweep(args) -> int:
    t = _template(args)
    values = ABLATION_CC + (t.ota.cc,)
    if args.cc:
        values = tuple(parse_value(v) for v in args.cc)
    rows = experiment_miller_ablation(t.ota, values, ABLATION_AC)
    _emit({"miller_ablation.csv": _ablation_csv(rows)}, args.out, args.format)
    return EXIT_OK


def cmd_ldo_report(args) -> int:
    t = _template(args)
    results = run_experiments(t)
    formats = ("json", "csv") if args.format == "csv" else ("json",)
    report = emit_report(results, args.out, formats)
    if args.out is None:
        sys.stdout.write(report.to_json())
    for c in report.checks:
        _err(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['detail']}")
    return EXIT_OK if report.passed else EXIT_CHECKS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldosim", description="MNA circuit simulator and LDO benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sets=False):
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if sets:
            sp.add_argument("--set", action="append", type=_override, metavar="KEY=VALUE",
                            help="override a template field (repeatable)")

    sp = sub.add_parser("run", help="run every analysis in a netlist")
    sp.add_argument("netlist")
    sp.add_argument("--probe", default=None, help="output node for AC analyses (default: out)")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("check", help="parse and validate a netlist")
    sp.add_argument("netlist")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("ota-bode", help="open-loop Bode metrics of the bundled OTA")
    common(sp, sets=True)
    sp.set_defaults(func=cmd_ota_bode, format="json")

    sp = sub.add_parser("ldo-report", help="run all LDO experiments and write the report",
                        description="Writes ldo_report.json; with --format csv (default) also the raw CSVs.")
    common(sp, sets=True)
    sp.set_defaults(func=cmd_ldo_report)

    sp = sub.add_parser("miller-sweep", help="phase margin versus compensation capacitance")
    sp.add_argument("--cc", action="append", help="Cc value (repeatable; default 0, 0.5p, 1p, 3p)")
    common(sp, sets=True)
    sp.set_defaults(func=cmd_miller_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NetlistError as exc:
        _err(f"error: {exc}")
        return EXIT_PARSE
    except (NonConvergence, SingularMatrix) as exc:
        _err(f"error: {exc}")
        return EXIT_SOLVER
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        _err(f"error: {exc}")
        return EXIT_PARSE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
