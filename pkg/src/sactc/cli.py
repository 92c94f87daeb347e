"""``sactc`` command line: loss, verify, decode, score and toy subcommands.

Exit codes: 0 ok, 1 check failed, 2 input error, 3 infeasible alignment,
4 training divergence.  Results go to stdout as JSON; diagnostics to stderr.
"""

import argparse
import csv
import json
import math
import struct
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import verify
from .decode import greedy_decode, split_by_sc
from .loss import loss_for_mode, softmax_log
from .metrics import BINS, MixtureRecord, score_records
from .serialize import RiskSpec, load_label_file
from .toylab import ExperimentConfig, TrainingDivergedError, run_experiment

FORMAT_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_DIVERGED = range(5)

MAGIC = b"SALM"
_HEADER = struct.Struct("<4sIII")


class InputError(Exception):
    """Bad file or flag; maps to exit code 2."""


def write_logit_file(path, array):
    array = np.ascontiguousarray(array, dtype="<f8")
    if array.ndim != 2:
        raise ValueError("logit grid must be 2-D")
    n_frames, n_vocab = array.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n_frames, n_vocab))
        fh.write(array.tobytes())


def read_logit_file(path):
    """Read a (T, V) float64 grid; raises :class:`InputError` on any mismatch."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, n_frames, n_vocab = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * n_frames * n_vocab:
        raise InputError(f"{path}: header declares {n_frames}x{n_vocab} but payload has "
                         f"{len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(n_frames, n_vocab).astype(np.float64)


def _emit(obj):
    json.dump({"format_version": FORMAT_VERSION, **obj}, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None


def _read_jsonl(path):
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise InputError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    return rows


def cmd_loss(args):
    logits = read_logit_file(args.logits)
    try:
        lab = load_label_file(args.labels)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise InputError(f"label file {args.labels}: {exc}") from None
    for flag, have in (("blank-id", lab.blank_id), ("sc-id", lab.sc_id)):
        given = getattr(args, flag.replace("-", "_"))
        if given is not None and given != have:
            raise InputError(f"--{flag} {given} disagrees with the label file ({have})")
    if lab.n_vocab != logits.shape[1]:
        raise InputError(f"label vocabulary has {lab.n_vocab} entries, logits have "
                         f"{logits.shape[1]} columns")
    try:
        res = loss_for_mode(logits, lab.label, args.mode, RiskSpec(lam=args.lam), lab.blank_id)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    per_token = None
    if res.per_token_losses is not None:
        per_token = [None if not math.isfinite(v) else float(v) for v in res.per_token_losses]
    _emit({"mode": args.mode, "lambda": args.lam, "loss": _finite_or_none(res.loss),
           "feasible": res.feasible, "status": res.status, "per_token_losses": per_token})
    if not res.feasible:
        print("error: no alignment fits the label in the given frames", file=sys.stderr)
        return EXIT_INFEASIBLE
    if args.grad_out:
        write_logit_file(args.grad_out, res.grad)
    return EXIT_OK


def cmd_verify(args):
    if args.trials < 0:
        raise InputError("--trials must be nonnegative")
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    if args.trials == 0:
        print("warning: --trials 0 checks nothing; reporting a vacuous pass", file=sys.stderr)
    report = verify.run_suites(names, args.trials, args.seed)
    passed = all(r["passed"] for r in report.values())
    _emit({"seed": args.seed, "trials": args.trials, "passed": passed, "suites": report})
    for name, r in report.items():
        if not r["passed"]:
            print(f"check failed: {name}", file=sys.stderr)
    return EXIT_OK if passed else EXIT_CHECK


def cmd_decode(args):
    logits = read_logit_file(args.logits)
    hyp = greedy_decode(softmax_log(logits), args.blank_id)
    out = {"tokens": list(hyp.tokens), "trace": list(hyp.trace)}
    if args.sc_id is not None:
        out["speakers"] = [list(seg) for seg in split_by_sc(hyp, args.sc_id)]
    _emit(out)
    return EXIT_OK


def _merge_records(refs, hyps):
    hyp_by_id = {}
    for row in hyps:
        if "id" not in row or "hyps" not in row:
            raise InputError("hypothesis rows need 'id' and 'hyps'")
        hyp_by_id[str(row["id"])] = row["hyps"]
    records = []
    for row in refs:
        if "id" not in row:
            raise InputError("reference rows need 'id'")
        key = str(row["id"])
        if key not in hyp_by_id:
            raise InputError(f"no hypothesis for id {key!r}")
        try:
            records.append(MixtureRecord.from_json({**row, "hyps": hyp_by_id.pop(key)}))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"record {key!r}: {exc}") from None
    if hyp_by_id:
        raise InputError(f"hypotheses without references: {sorted(hyp_by_id)}")
    return records


def cmd_score(args):
    records = _merge_records(_read_jsonl(args.refs), _read_jsonl(args.hyps))
    try:
        result = score_records(records)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _emit(result)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "n", "errors", "ref_words", "wer"])
            for b in BINS:
                row = result["bins"][b]
                w.writerow([b, row["n"], row["errors"], row["ref_words"], row["wer"]])
            w.writerow(["overall", len(records), "", "", result["overall_wer"]])
            w.writerow(["pi", len(records), "", "", result["pi_wer"]])
            w.writerow(["oa", "", "", "", result["oa_wer"]])
    return EXIT_OK


def default_toy_config():
    text = resources.files("sactc").joinpath("data/default_toy.json").read_text(encoding="utf-8")
    return json.loads(text)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_toy(args):
    raw = default_toy_config() if args.config is None else _read_json(args.config)
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad experiment config: {exc}") from None
    try:
        result = run_experiment(cfg)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (mode, lam, seed), curve in result["curves"].items():
        _write_csv(out / f"curve_{mode}_lambda{lam:g}_seed{seed}.csv", ["step", "loss"],
                   [(i, repr(float(v))) for i, v in enumerate(curve)])
    stat_keys = ["seed", "mode", "lambda", "compliance", "center_spk1", "center_spk2", "final_loss"]
    _write_csv(out / "stats.csv", stat_keys, [[r[k] for k in stat_keys] for r in result["stats"]])
    ov_keys = ["seed", "mode", "lambda", "mixture", "overlap_ratio", "compliance"]
    _write_csv(out / "compliance_by_overlap.csv", ov_keys,
               [[r[k] for k in ov_keys] for r in result["by_overlap"]])
    summary = {"format_version": FORMAT_VERSION, "config": cfg.to_dict(),
               "runs": result["summary"]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _emit({"out": str(out), "runs": result["summary"]})
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sactc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loss", help="evaluate a loss on a logit file")
    p.add_argument("--logits", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mode", choices=("ctc", "sactc"), default="sactc")
    p.add_argument("--lambda", dest="lam", type=float, default=15.0)
    p.add_argument("--blank-id", type=int)
    p.add_argument("--sc-id", type=int)
    p.add_argument("--grad-out")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("verify", help="randomised self-checks")
    p.add_argument("--suite", choices=(*verify.SUITES, "all"), default="all")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decode", help="greedy decoding of a logit file")
    p.add_argument("--logits", required=True)
    p.add_argument("--blank-id", type=int, default=0)
    p.add_argument("--sc-id", type=int)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="WER, PI-WER and overlap-aware WER")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("toy", help="synthetic two-speaker experiment")
    p.add_argument("--config", help="experiment JSON (bundled default if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
