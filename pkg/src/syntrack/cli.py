"""Command line: simulate, classify, track, validate, parse and oracle.

Every command writes a ``manifest.json`` next to its outputs.  Re-running with
``--replay manifest.json`` repeats the run with the recorded settings; all
outputs except the manifest's ``timing`` block are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import math
import platform as _platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    UNCLASSIFIED,
    PipelineConfig,
    SyntacticTracker,
    classify_map,
)
from .earley import SimilarityConfig, parse, viterbi_parse
from .grammar import (
    Grammar,
    GrammarError,
    is_well_posed,
    load_grammar,
    mean_matrix,
    spectral_radius,
    validate,
)
from .io import StreamFormatError, dumps_json, read_detections, track_to_jsonl, write_detections
from .kinematics import NoiseConfig, Platform
from .oracle import inside_oracle
from .patterns import LINE_NAMES, PATTERN_NAMES, full_grammar, line_grammar, pattern_grammar
from .simulator import ScenarioConfig, scenario_pincer, simulate
from .tracker import ImmConfig, imm_step, init_imm, init_particles_from_detection, pf_step

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_UNCLASSIFIED = 0, 1, 2, 3


class UsageError(Exception):
    """Bad configuration or input; maps to exit code 1."""


# ---------------------------------------------------------------------------
# config files and manifests

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` comments; values parsed as JSON when possible."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _versions() -> dict:
    import sklearn
    return {"syntrack": __version__, "numpy": np.__version__, "scikit-learn": sklearn.__version__,
            "python": _platform.python_version()}


def write_manifest(out: Path, command: str, args: dict, inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "config": args,
        "seed": args.get("seed"),
        "versions": _versions(),
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def resolve_grammar(spec: str) -> Grammar:
    if spec in PATTERN_NAMES:
        return pattern_grammar(spec)
    if spec == "lines":
        return line_grammar()
    if spec == "full":
        return full_grammar()
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"unknown grammar {spec!r} (not a built-in name or a file)")
    return load_grammar(path)


def resolve_patterns(spec: str) -> tuple[str, ...]:
    if spec in ("all", "full"):
        return PATTERN_NAMES
    if spec == "lines":
        return LINE_NAMES
    names = tuple(s.strip() for s in spec.split(",") if s.strip())
    bad = [n for n in names if n not in PATTERN_NAMES]
    if bad:
        raise UsageError(f"unknown patterns {bad}; choose from {', '.join(PATTERN_NAMES)}")
    return names


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# commands

def _scenario_config(a) -> ScenarioConfig:
    noise = NoiseConfig()
    if a.literal_noise:
        noise = NoiseConfig.literal_trial_reading()
    try:
        return ScenarioConfig(
            grammar=a.grammar, seed=a.seed, scans_per_mode=a.scans_per_mode, p_detect=a.p_detect,
            speed=a.speed, noise=noise, min_terminals=a.min_terminals, max_terminals=a.max_terminals,
            platform=Platform(*a.platform) if a.platform else ScenarioConfig().platform,
        )
    except ValueError as exc:
        raise UsageError(f"invalid scenario: {exc}") from exc


def cmd_simulate(a) -> int:
    cfg = _scenario_config(a)
    if a.scenario == "pincer":
        sc = scenario_pincer(cfg)
    else:
        if cfg.grammar not in PATTERN_NAMES:
            raise UsageError(f"unknown grammar {cfg.grammar!r}; choose from {', '.join(PATTERN_NAMES)}")
        sc = simulate(cfg)
    out = _outdir(a.out)
    det_path = out / f"detections.{a.format}"
    write_detections(det_path, sc.detections)
    truth = sc.sidecar()
    truth["scenario"] = cfg.to_dict()
    (out / "truth.json").write_text(dumps_json(truth) + "\n")
    print(f"wrote {len(sc.detections)} detections ({', '.join(truth['labels'])}) to {det_path}")
    return EXIT_OK


def _pipeline_config(a) -> PipelineConfig:
    try:
        return PipelineConfig(
            patterns=resolve_patterns(a.grammar),
            tracker=a.tracker,
            feedback=a.feedback == "on",
            sim=SimilarityConfig(theta1=a.theta1, theta2=a.theta2, anchor=a.anchor),
            prune=None if a.prune is None or math.isinf(a.prune) else a.prune,
            associate=not a.single,
            n_particles=a.particles,
            seed=a.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _classify_hard(a, out: Path) -> int:
    g = resolve_grammar(a.grammar if a.grammar != "all" else "full")
    sim = SimilarityConfig(enabled=False)
    prune = None if a.prune is None or math.isinf(a.prune) else a.prune
    bad = set(a.hard_string) - g.terminals
    if bad:
        raise UsageError(f"terminals {sorted(bad)} are not in the grammar")
    chart = parse(g, a.hard_string, sim, prune, final=True)
    tree = viterbi_parse(chart)
    logp = chart.log_sentence_probability()
    rows = ["scan,log_prefix_prob,log_sentence_prob"]
    for k in range(len(a.hard_string) + 1):
        rows.append(f"{k},{chart.log_prefix_probability(k)!r},{chart.log_sentence_probability(k)!r}")
    (out / "trace.csv").write_text("\n".join(rows) + "\n")
    label = tree.root.children[0].symbol if tree and tree.root.children and not tree.root.children[0].is_leaf \
        else (tree.root.symbol if tree else UNCLASSIFIED)
    (out / "labels.json").write_text(dumps_json({"labels": [label], "log_prob": logp if logp > -math.inf else None}) + "\n")
    (out / "tree.json").write_text(dumps_json(tree.to_dict()) + "\n")
    (out / "tree.txt").write_text(tree.to_text() if tree else "no parse\n")
    if a.dump_chart:
        (out / "chart.jsonl").write_text(chart.dump_jsonl())
    print(f"{a.hard_string}: {label} (log P = {logp:.6g})")
    return EXIT_OK if tree else EXIT_UNCLASSIFIED


def cmd_classify(a) -> int:
    out = _outdir(a.out)
    if a.hard_string is not None:
        return _classify_hard(a, out)
    if a.detections is None:
        raise UsageError("classify needs a detection file or --hard-string")
    dets = read_detections(a.detections)
    cfg = _pipeline_config(a)
    hyps = SyntacticTracker(cfg).run(dets)
    labels = []
    for h in hyps:
        label = classify_map(h.trace)
        labels.append({"hypothesis": h.id, "label": label, "detections": h.detections,
                       "unparseable": h.unparseable})
        (out / f"trace_h{h.id}.csv").write_text(h.trace.to_csv())
        (out / f"track_h{h.id}.jsonl").write_text(track_to_jsonl(h.track))
        tree = h.trace.tree
        (out / f"tree_h{h.id}.json").write_text(dumps_json(tree.to_dict()) + "\n")
        (out / f"tree_h{h.id}.txt").write_text(tree.to_text() if tree else f"no parse: {tree.reason}\n")
        if a.dump_chart and label != UNCLASSIFIED:
            (out / f"chart_h{h.id}.jsonl").write_text(h.charts[label].dump_jsonl())
        print(f"hypothesis {h.id}: {label} ({len(h.detections)} detections)")
    (out / "labels.json").write_text(dumps_json({"labels": labels}) + "\n")
    if not labels or all(l["label"] == UNCLASSIFIED for l in labels):
        return EXIT_UNCLASSIFIED
    return EXIT_OK


def cmd_track(a) -> int:
    dets = read_detections(a.detections)
    out = _outdir(a.out)
    noise = NoiseConfig()
    icfg = ImmConfig()
    rng = np.random.default_rng(a.seed)
    first = next((i for i, d in enumerate(dets) if not d.is_miss), None)
    if first is None:
        raise UsageError("stream has no detections")
    records = []
    if a.tracker == "imm":
        state = init_imm(dets[first], noise, icfg)
        for d in dets[first + 1:]:
            r = imm_step(state, d, noise, None, icfg)
            state = r.bank
            records.append({"t": d.t, "x": r.combined.mean.tolist(), "cov": r.combined.cov.ravel().tolist(),
                            "mode_probs": list(r.mode_probs.values())})
    else:
        state = init_particles_from_detection(dets[first], noise, a.particles, rng)
        for d in dets[first + 1:]:
            r = pf_step(state, d, noise, icfg.pi, 0.5, rng)
            state = r.particles
            records.append({"t": d.t, "x": r.combined.mean.tolist(), "cov": r.combined.cov.ravel().tolist(),
                            "mode_probs": list(r.mode_probs.values()), "n_eff": r.ess})
    (out / "track.jsonl").write_text(track_to_jsonl(records))
    print(f"tracked {len(records)} scans")
    return EXIT_OK


def cmd_validate(a) -> int:
    try:
        g = resolve_grammar(a.grammar_path)
    except GrammarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    problems = validate(g)
    lines = [f"grammar: {a.grammar_path}", f"violations: {len(problems)}"]
    lines += [f"  [{v.kind}] {v.message}" for v in problems]
    ok = not problems
    if ok:
        m = mean_matrix(g)
        sr = spectral_radius(m)
        wp = is_well_posed(g)
        lines.append("mean matrix:")
        lines.append("  " + " ".join(f"{s:>8s}" for s in m.symbols))
        for s, row in zip(m.symbols, m.matrix):
            lines.append(f"  {s:>8s} " + " ".join(f"{v:8.4f}" for v in row))
        lines.append(f"spectral radius: {sr.radius:.12g} (converged: {sr.converged})")
        lines.append(f"subcritical: {wp.subcritical}")
        ok = wp.subcritical
    print("\n".join(lines))
    if a.out:
        out = _outdir(a.out)
        (out / "report.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_parse(a) -> int:
    g = resolve_grammar(a.grammar)
    prune = None if a.prune is None or math.isinf(a.prune) else a.prune
    chart = parse(g, a.string, SimilarityConfig(enabled=False), prune, final=True)
    tree = viterbi_parse(chart)
    result = {"string": a.string, "log_sentence_prob": _finite(chart.log_sentence_probability()),
              "log_prefix_probs": [_finite(chart.log_prefix_probability(k)) for k in range(len(a.string) + 1)],
              "tree": tree.to_dict()}
    text = dumps_json(result) + "\n"
    print(tree.bracket() if tree else "no parse")
    if a.out:
        out = _outdir(a.out)
        (out / "parse.json").write_text(text)
        if a.dump_chart:
            (out / "chart.jsonl").write_text(chart.dump_jsonl())
    return EXIT_OK if tree else EXIT_UNCLASSIFIED


def cmd_oracle(a) -> int:
    g = resolve_grammar(a.grammar)
    p_inside = inside_oracle(g, a.string)
    p_earley = math.exp(parse(g, a.string).log_sentence_probability())
    text = dumps_json({"string": a.string, "inside": p_inside, "earley": p_earley}) + "\n"
    print(f"inside {p_inside!r}  earley {p_earley!r}")
    if a.out:
        (_outdir(a.out) / "oracle.json").write_text(text)
    return EXIT_OK


def _finite(v: float):
    return v if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# argument parsing

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file layered under the flags")
    p.add_argument("--replay", help="re-run with the settings recorded in a manifest")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="syntrack", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario and write its detection stream")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--grammar", default="A_ur")
    p.add_argument("--scenario", choices=("single", "pincer"), default="single")
    p.add_argument("--scans-per-mode", type=int, default=10)
    p.add_argument("--p-detect", type=float, default=1.0)
    p.add_argument("--speed", type=float, default=10.0)
    p.add_argument("--min-terminals", type=int, default=3)
    p.add_argument("--max-terminals", type=int, default=8)
    p.add_argument("--platform", type=float, nargs=5, metavar=("X", "Y", "Z", "VX", "VY"))
    p.add_argument("--literal-noise", action="store_true",
                   help="process noise 0.05 along / 0.5 across the heading")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("classify", help="track and classify a detection stream")
    _common(p)
    p.add_argument("detections", nargs="?")
    p.add_argument("--out", required=True)
    p.add_argument("--grammar", default="all", help="'all', 'lines', pattern names, or a grammar file")
    p.add_argument("--tracker", choices=("imm", "pf"), default="imm")
    p.add_argument("--feedback", choices=("on", "off"), default="off")
    p.add_argument("--prune", type=float, default=-20.0)
    p.add_argument("--theta1", type=float, default=50.0)
    p.add_argument("--theta2", type=float, default=1.5)
    p.add_argument("--anchor", choices=("low", "high"), default="low")
    p.add_argument("--particles", type=int, default=1000)
    p.add_argument("--single", action="store_true", help="one target: skip association")
    p.add_argument("--hard-string", help="classify this terminal string directly (no tracker)")
    p.add_argument("--dump-chart", action="store_true")
    p.add_argument("--scans-per-mode", type=int, default=10, help="recorded for provenance")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("track", help="run the multiple-model tracker only")
    _common(p)
    p.add_argument("detections")
    p.add_argument("--out", required=True)
    p.add_argument("--tracker", choices=("imm", "pf"), default="imm")
    p.add_argument("--particles", type=int, default=1000)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("validate", help="check a grammar and its branching behaviour")
    _common(p)
    p.add_argument("grammar_path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("parse", help="parse a hard terminal string")
    _common(p)
    p.add_argument("grammar")
    p.add_argument("string")
    p.add_argument("--out")
    p.add_argument("--prune", type=float, default=None)
    p.add_argument("--dump-chart", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("oracle", help="inside probability of a string next to the parser's value")
    _common(p)
    p.add_argument("grammar")
    p.add_argument("string")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return ap


_NO_RECORD = {"func", "config", "replay", "command"}


def _subparser(ap: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    return ap._subparsers._group_actions[0].choices[command]


def _replay_manifest(ap: argparse.ArgumentParser, argv: list[str]):
    """Load the ``--replay`` manifest and splice its positional arguments into ``argv``."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--replay" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--replay="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv, None
    try:
        manifest = json.loads(Path(path).read_text())
        command, config = manifest["command"], manifest["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {path}: {exc}") from exc
    pos = next((i for i, tok in enumerate(argv) if tok in _subparser_names(ap)), None)
    if pos is None or argv[pos] != command:
        raise UsageError(f"manifest is for '{command}', not '{argv[pos] if pos is not None else None}'")
    values = [str(config[act.dest]) for act in _subparser(ap, command)._actions
              if not act.option_strings and config.get(act.dest) is not None]
    return argv[:pos + 1] + values + argv[pos + 1:], manifest


def _subparser_names(ap: argparse.ArgumentParser) -> set[str]:
    return set(ap._subparsers._group_actions[0].choices)


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    argv, manifest = _replay_manifest(ap, argv)
    a = ap.parse_args(argv)
    layered = {}
    if manifest is not None:
        layered.update({k: v for k, v in manifest["config"].items() if k not in _NO_RECORD and k != "out"})
    if a.config:
        layered.update(read_config(a.config))
    if layered:
        sub = _subparser(ap, a.command)
        known = {act.dest for act in sub._actions}
        unknown = set(layered) - known
        if unknown:
            raise UsageError(f"unknown settings {sorted(unknown)}")
        sub.set_defaults(**layered)
        a = ap.parse_args(argv)
    return a


def main(argv=None) -> int:
    started = time.perf_counter()
    try:
        a = parse_args(argv)
        rc = a.func(a)
        out = getattr(a, "out", None)
        if out:
            out = Path(out)
            record = {k: v for k, v in vars(a).items() if k not in _NO_RECORD}
            inputs = [v for k, v in record.items() if k in ("detections", "grammar_path") and v]
            outputs = [p.name for p in out.iterdir() if p.name != "manifest.json"]
            write_manifest(out, a.command, record, inputs, outputs, started)
        return rc
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GrammarError, StreamFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
