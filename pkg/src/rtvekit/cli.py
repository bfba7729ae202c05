"""``rtvekit`` command line: one subcommand per tool.

Exit status is 0 on success, 1 for bad input data (parse or validation
errors) and 2 for bad configuration.  Data goes to stdout or the requested
files; diagnostics go to stderr.

Settings can also come from an INI-style file (``--config``) with one
section per subcommand holding flat ``key = value`` pairs.  Flags win.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
from pathlib import Path

from rtvekit import ConfigError, ParseError, RtveError, ValidationError, __version__
from rtvekit import align, formats, ngram, retrieval, rover, snrgate

log = logging.getLogger("rtvekit")

WORKERS_ENV = "RTVEKIT_WORKERS"


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    return open(path, "w", encoding="utf-8")


def _write(path, text):
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _read_text(path):
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _read_sentences(path):
    return [line.split() for line in _read_text(path).splitlines() if line.strip()]


def _dump_json(obj, path=None):
    _write(path, json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# subcommands

def cmd_score(args):
    refs = formats.parse_stm(_read_text(args.ref))
    hyp = formats.parse_ctm(_read_text(args.hyp))
    rules = None if args.no_normalize else formats.DEFAULT_RULES
    rep = align.score_wer(refs, hyp, rules)
    if rep.unmatched_recordings:
        log.warning("hypothesis recordings without reference: %s", ", ".join(rep.unmatched_recordings))
    if args.tsv:
        rows = ["recording\tn_ref\tn_cor\tn_sub\tn_ins\tn_del\twer"]
        for rec, r in sorted(rep.per_recording.items()):
            wer = "inf" if math.isinf(r.wer) else f"{align.round_half_away(r.wer):.2f}"
            rows.append(f"{rec}\t{r.n_ref}\t{r.n_cor}\t{r.n_sub}\t{r.n_ins}\t{r.n_del}\t{wer}")
        _write(args.tsv, "\n".join(rows) + "\n")
    summary = {"kind": "wer", **rep.summary()}
    if args.system:
        summary["system"] = args.system
    if args.set:
        summary["set"] = args.set
    summary["unmatched_recordings"] = rep.unmatched_recordings
    _dump_json(summary, args.json)
    return 0


def cmd_rover(args):
    if len(args.systems) < 2:
        raise ValidationError(f"rover needs at least 2 systems, got {len(args.systems)}")
    ctms = [formats.parse_ctm(_read_text(p)) for p in args.systems]
    config = rover.VoteConfig(alpha=args.alpha, null_confidence=args.null_conf)
    trace = rover.RoverTrace(system_order=list(args.systems))
    fused = rover.rover_fuse(ctms, config, max_time_gap=args.max_gap, trace=trace)
    _write(args.out, formats.write_ctm(fused))
    if args.trace:
        _dump_json({"system_order": trace.system_order, "alpha": args.alpha,
                    "null_confidence": args.null_conf, "warnings": trace.warnings,
                    "sets": trace.sets}, args.trace)
    return 0


def cmd_lm_train(args):
    smoothing = {"wb": "wb", "addk": "add_k", "add_k": "add_k"}[args.smoothing]
    model = ngram.train(_read_sentences(args.corpus), args.order, smoothing, k=args.k,
                        prune_singletons=args.prune)
    _write(args.out, ngram.write_arpa(model))
    return 0


def cmd_lm_interp(args):
    if len(args.models) < 2:
        raise ValidationError("lm-interp needs at least 2 models")
    models = [ngram.read_arpa(_read_text(p)) for p in args.models]
    merged, weights = ngram.interpolate(models, _read_sentences(args.heldout),
                                        max_iter=args.max_iter, tol=args.tol)
    _write(args.out, ngram.write_arpa(merged))
    info = {"models": list(args.models), "weights": weights.weights,
            "iterations": weights.iterations, "heldout_log10_likelihood": weights.history}
    if args.weights:
        _dump_json(info, args.weights)
    else:
        log.info("weights: %s", json.dumps(info["weights"]))
    return 0


def cmd_lm_ppl(args):
    model = ngram.read_arpa(_read_text(args.model))
    _dump_json(ngram.evaluate(model, _read_sentences(args.text)))
    return 0


def cmd_retrieve(args):
    config = retrieval.RetrievalConfig(
        biased_lm_order=args.order, lm_weight=args.lm_weight, hyp_weight=args.hyp_weight,
        max_segment_gap=args.max_gap, max_segment_len=args.max_len,
        segment_wer_threshold=args.wer_threshold, passes=len(args.nbest))
    try:
        config.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    captions = retrieval.captions_from_stm(
        formats.parse_stm(_read_text(args.captions)))
    passes = [retrieval.read_nbest_jsonl(_read_text(p).splitlines()) for p in args.nbest]
    show_of = (lambda rec: rec.split(args.show_sep)[0]) if args.show_sep else None
    if len(passes) == 1:
        segs, st = retrieval.run_pass(passes[0], captions, config, show_of=show_of, workers=args.workers)
        result = retrieval.MultiPassResult(segs, [st], [segs])
    else:
        result = retrieval.run_two_pass(passes[0], passes[1], captions, config, *passes[2:],
                                        show_of=show_of, workers=args.workers)
    _write(args.out_stm, formats.write_stm(s.to_stm() for s in result.segments))
    _dump_json(result.to_json(args.split), args.stats)
    return 0


def cmd_wadasnr(args):
    ests = snrgate.estimate_files(args.files, workers=args.workers)
    rows = []
    for path, est in zip(args.files, ests):
        rows.append({"id": Path(path).stem, "path": path,
                     "snr_db": None if est is None else est.snr_db,
                     "statistic_g": None if est is None else est.statistic_g})
    if args.json:
        _dump_json({"files": rows})
    else:
        for r in rows:
            val = "NA" if r["snr_db"] is None else f"{r['snr_db']:.2f}"
            sys.stdout.write(f"{r['id']}\t{val}\n")
    return 0 if all(e is not None for e in ests) else 1


def cmd_gate(args):
    try:
        rng = snrgate.GateRange.parse(args.range)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    report = snrgate.enhance_dispatch(args.files, rng, args.cmd, args.out_dir, workers=args.workers)
    out = report.to_json()
    if args.set:
        out["set"] = args.set
    _dump_json(out, args.report)
    return 0


def cmd_report(args):
    stats = []
    for path in args.stats:
        try:
            stats.append(json.loads(_read_text(path)))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
    _write(args.out, render_report(stats, args.format))
    return 0


# --------------------------------------------------------------------------
# report tables

def _table(header, rows, fmt):
    if fmt == "tsv":
        return "\n".join("\t".join(map(str, r)) for r in [header] + rows) + "\n"
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(map(str, r)) + " |" for r in rows]
    return "\n".join(out) + "\n"


def _need(obj, keys, kind):
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ValidationError(f"{kind} stats missing keys: {missing}")


def _num(v, digits):
    if v is None:
        return "-"
    return f"{align.round_half_away(float(v), digits):.{digits}f}"


def render_report(stats, fmt="md") -> str:
    """Tables shaped like the retrieval, gating and WER summaries.

    * retrieval -> split | Original | 1-pass | 2-pass (hours)
    * gate      -> SNR range | cleaned % per set
    * wer       -> system | WER % per set
    """
    groups = {"retrieval": [], "gate": [], "wer": []}
    for s in stats:
        if not isinstance(s, dict) or s.get("kind") not in groups:
            raise ValidationError(f"unrecognized stats object (kind={s.get('kind') if isinstance(s, dict) else None})")
        groups[s["kind"]].append(s)
    parts = []

    if groups["retrieval"]:
        cols = ["Original", "1-pass", "2-pass"]
        for s in groups["retrieval"]:
            _need(s, ["split", "table"], "retrieval")
            cols += [c for c in s["table"] if c not in cols]
        rows = [[s["split"]] + [_num(s["table"].get(c), 1) for c in cols] for s in groups["retrieval"]]
        parts.append(_table(["split"] + cols, rows, fmt))

    if groups["gate"]:
        sets = []
        for s in groups["gate"]:
            _need(s, ["range", "cleaned_fraction"], "gate")
            if s.get("set", "") not in sets:
                sets.append(s.get("set", ""))
        ranges = list(dict.fromkeys(s["range"] for s in groups["gate"]))
        cell = {(s["range"], s.get("set", "")): s["cleaned_fraction"] for s in groups["gate"]}
        rows = [[r] + [_num(cell.get((r, st)), 2) for st in sets] for r in ranges]
        parts.append(_table(["SNR"] + [f"Cleaned [%] {st}".strip() for st in sets], rows, fmt))

    if groups["wer"]:
        sets = []
        for s in groups["wer"]:
            _need(s, ["wer", "n_ref"], "wer")
            if s.get("set", "") not in sets:
                sets.append(s.get("set", ""))
        systems = list(dict.fromkeys(s.get("system", "") for s in groups["wer"]))
        cell = {(s.get("system", ""), s.get("set", "")): s["wer"] for s in groups["wer"]}
        rows = [[i + 1, sysname] + [_num(cell.get((sysname, st)), 2) for st in sets]
                for i, sysname in enumerate(systems)]
        parts.append(_table(["#", "system"] + [f"WER [%] {st}".strip() for st in sets], rows, fmt))
    return "\n".join(parts)


# --------------------------------------------------------------------------
# parser

def _env_workers():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def build_parser(default_workers: int = 1) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtvekit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="INI file with one [subcommand] section of key = value pairs")
    p.add_argument("--log-level", default="WARNING", help="logging level (default: %(default)s)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("score", help="WER of a CTM against STM references", formatter_class=fmt)
    s.add_argument("--ref", required=True, help="reference STM")
    s.add_argument("--hyp", required=True, help="hypothesis CTM")
    s.add_argument("--tsv", help="write per-recording TSV here")
    s.add_argument("--json", help="write JSON summary here instead of stdout")
    s.add_argument("--system", help="system label stored in the summary")
    s.add_argument("--set", help="evaluation set label stored in the summary")
    s.add_argument("--no-normalize", action="store_true", help="score words verbatim")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("rover", help="ROVER fusion of several CTMs", formatter_class=fmt)
    s.add_argument("--systems", nargs="+", required=True, help="CTMs, merged in this order")
    s.add_argument("--alpha", type=float, default=1.0, help="frequency vs confidence trade-off")
    s.add_argument("--null-conf", type=float, default=0.7, help="confidence of NULL arcs")
    s.add_argument("--max-gap", type=float, default=rover.DEFAULT_MAX_TIME_GAP,
                   help="max midpoint distance (s) for aligning two words")
    s.add_argument("--out", default="-", help="fused CTM")
    s.add_argument("--trace", help="write per-set vote tallies (JSON) here")
    s.set_defaults(func=cmd_rover)

    s = sub.add_parser("lm-train", help="train a back-off n-gram LM", formatter_class=fmt)
    s.add_argument("corpus", help="one sentence per line")
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--smoothing", choices=["wb", "addk", "add_k"], default="wb")
    s.add_argument("--k", type=float, default=1.0, help="additive constant for addk")
    s.add_argument("--prune", action="store_true", help="drop singleton n-grams above order 2")
    s.add_argument("--out", default="-", help="ARPA output")
    s.set_defaults(func=cmd_lm_train)

    s = sub.add_parser("lm-interp", help="EM-tuned linear interpolation of ARPA models",
                       formatter_class=fmt)
    s.add_argument("models", nargs="+", help="ARPA files")
    s.add_argument("--heldout", required=True, help="held-out text, one sentence per line")
    s.add_argument("--out", default="-", help="merged ARPA output")
    s.add_argument("--weights", help="write weights and EM trace (JSON) here")
    s.add_argument("--max-iter", type=int, default=100)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_lm_interp)

    s = sub.add_parser("lm-ppl", help="perplexity of text under an ARPA model", formatter_class=fmt)
    s.add_argument("model")
    s.add_argument("text")
    s.set_defaults(func=cmd_lm_ppl)

    s = sub.add_parser("retrieve", help="recover timed training segments from subtitles",
                       formatter_class=fmt)
    s.add_argument("--captions", required=True, help="subtitles as STM")
    s.add_argument("--nbest", action="append", required=True,
                   help="n-best JSON lines; repeat once per pass")
    s.add_argument("--out-stm", required=True, help="retained segments of the last pass (STM)")
    s.add_argument("--stats", help="statistics JSON (default: stdout)")
    s.add_argument("--split", default="train", help="split label for the statistics")
    s.add_argument("--order", type=int, default=7, help="biased LM order")
    s.add_argument("--lm-weight", type=float, default=10.0)
    s.add_argument("--hyp-weight", type=float, default=1.0)
    s.add_argument("--max-gap", type=float, default=0.5, help="pause (s) that splits segments")
    s.add_argument("--max-len", type=float, default=15.0, help="maximum segment length (s)")
    s.add_argument("--wer-threshold", type=float, default=10.0, help="max segment WER (%%)")
    s.add_argument("--show-sep", help="show name = recording id up to this separator")
    s.add_argument("--workers", type=int, default=default_workers)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("wadasnr", help="WADA-SNR of WAVE files", formatter_class=fmt)
    s.add_argument("files", nargs="+")
    s.add_argument("--json", action="store_true", help="JSON instead of TSV")
    s.add_argument("--workers", type=int, default=default_workers)
    s.set_defaults(func=cmd_wadasnr)

    s = sub.add_parser("gate", help="run an enhancer on files within an SNR range",
                       formatter_class=fmt)
    s.add_argument("files", nargs="+")
    s.add_argument("--range", required=True, help="open interval LOW:HIGH in dB; write --range=-5:8 when LOW is negative")
    s.add_argument("--cmd", required=True, help='command template, e.g. "enhance {in} {out}"')
    s.add_argument("--out-dir", required=True)
    s.add_argument("--workers", type=int, default=default_workers)
    s.add_argument("--set", help="set label stored in the report")
    s.add_argument("--report", help="write report JSON here instead of stdout")
    s.set_defaults(func=cmd_gate)

    s = sub.add_parser("report", help="render stats JSON files as tables", formatter_class=fmt)
    s.add_argument("stats", nargs="+")
    s.add_argument("--format", choices=["md", "tsv"], default="md")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_report)
    return p


def _apply_config(parser, path):
    """Turn ``[command]`` keys of the config file into parser defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for section in cp.sections():
        if section not in subparsers.choices:
            raise ConfigError(f"config section [{section}] is not a subcommand")
        sp = subparsers.choices[section]
        actions = {a.dest: a for a in sp._actions if a.option_strings}
        defaults = {}
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            action = actions.get(dest)
            if action is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if isinstance(action, argparse._StoreTrueAction):
                try:
                    value = cp.getboolean(section, key)
                except ValueError:
                    raise ConfigError(f"[{section}] {key} must be a boolean") from None
            elif action.nargs in ("+", "*") or isinstance(action, argparse._AppendAction):
                value = raw.split()
            else:
                conv = action.type or str
                try:
                    value = conv(raw)
                except (TypeError, ValueError):
                    raise ConfigError(f"[{section}] {key}: bad value {raw!r}") from None
            defaults[dest] = value
            action.required = False
        sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser(_env_workers())
        cfg_path = _peek_config(argv)
        if cfg_path:
            _apply_config(parser, cfg_path)
    except ConfigError as exc:
        print(f"rtvekit: configuration error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rtvekit: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError, RtveError, OSError, UnicodeDecodeError) as exc:
        print(f"rtvekit: error: {exc}", file=sys.stderr)
        return 1


def _peek_config(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


if __name__ == "__main__":
    sys.exit(main())
