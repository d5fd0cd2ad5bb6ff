"""Command-line front end for the mining and simulation pipeline.

Subcommands: ``synth | mine | fit | simulate | evaluate | report`` plus
``config`` for inspecting defaults. Every command is rerunnable:
identical inputs and config produce byte-identical outputs. Exit codes:
0 success, 1 runtime/data error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, classify, cluster, cpmodel, eventlog, pathway, simengine
from .config import ConfigError, PipelineConfig, dump_defaults, load_config


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cell_dirname(servers: int, scale: float) -> str:
    return f"s{servers}_x{scale}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_config(args, cfg: PipelineConfig) -> int:
    if args.dump_defaults:
        sys.stdout.write(dump_defaults())
    else:
        sys.stdout.write(json.dumps(cfg.raw, indent=2, sort_keys=True, default=str) + "\n")
    return 0


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    spec = cfg.synth
    if args.n is not None:
        spec.n_cases = args.n
    cases, truth = eventlog.synthesize(spec)
    _write(out / "events.csv", eventlog.serialize(cases))
    _write(out / "ground_truth.json", json.dumps(truth, sort_keys=True))
    print(f"synth: wrote {len(cases)} cases to {out / 'events.csv'}")
    return 0


def _mine_pipeline(cases, cfg: PipelineConfig):
    cleaned, report = eventlog.clean(cases)
    if not cleaned:
        raise ConfigError("event log contains no usable cases")
    sequences = pathway.encode_all(cleaned, cfg.code_map)
    model = cluster.select_k(
        sequences,
        cfg.cluster.ks(),
        seed=cfg.cluster.seed,
        min_cluster_size=cfg.cluster.min_cluster_size,
        cv_unweighted=cfg.cluster.cv_unweighted,
    )
    templates = cpmodel.derive_templates(model, cfg.template_overrides, cfg.code_map.alphabet)
    seq_by_id = {s.case_id: s for s in sequences}
    alignments: dict[int, list[cpmodel.AlignedSequence]] = {}
    for tpl in templates:
        members = [s for s in sequences if model.assignment[s.case_id] == tpl.cluster]
        alignments[tpl.cluster] = [cpmodel.align(s.codes, tpl, s.case_id) for s in members]
    graphs = [
        cpmodel.build_cp_graph(alignments[tpl.cluster], tpl, cfg.distributions.bold_coverage)
        for tpl in templates
    ]
    samples = [
        (seq_by_id[cid].features, c)
        for cid, c in sorted(model.assignment.items())
        if c not in model.discarded
    ]
    tree = classify.train(samples, max_depth=cfg.tree.max_depth, min_leaf=cfg.tree.min_leaf)
    return cleaned, report, sequences, model, templates, alignments, graphs, tree


def cmd_mine(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    cases = eventlog.ingest(args.log)
    if not cases:
        raise ConfigError(f"event log {args.log} is empty")
    cleaned, report, sequences, model, templates, alignments, graphs, tree = _mine_pipeline(cases, cfg)

    _write(out / "clean_report.json", report.to_json())
    _write(out / "sequences.csv", pathway.sequences_to_csv(sequences))
    _write(out / "cluster_model.json", model.to_json())
    _write(out / "tree.json", tree.to_json())
    _write(out / "tree.dot", tree.to_dot())
    align_lines = ["case_id,cluster,alignment"]
    for tpl in templates:
        for al in alignments[tpl.cluster]:
            align_lines.append(f"{al.case_id},{tpl.cluster},{al.compact()}")
    _write(out / "alignments.csv", "\n".join(align_lines) + "\n")
    for graph in graphs:
        _write(out / "graphs" / f"cp_{graph.cluster}.json", graph.to_json())
        _write(out / "graphs" / f"cp_{graph.cluster}.dot", graph.to_dot())
    print(
        f"mine: {report.cases} cases, k={model.k} "
        f"({len(model.discarded)} discarded), wrote models to {out}"
    )
    return 0


def cmd_fit(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    model_dir = Path(args.model)
    cases = eventlog.ingest(args.log)
    cleaned, _ = eventlog.clean(cases)
    sequences = pathway.encode_all(cleaned, cfg.code_map)
    model = cluster.ClusterModel.from_json((model_dir / "cluster_model.json").read_text())
    graphs = [
        cpmodel.CPGraph.from_json(p.read_text())
        for p in sorted((model_dir / "graphs").glob("cp_*.json"))
    ]
    dists = cpmodel.fit_distributions(
        cleaned,
        sequences,
        model,
        graphs,
        basic_map=cfg.basic_map,
        los_by_department=cfg.distributions.los_by_department,
    )
    dists.lognormal_los = cfg.distributions.lognormal_los
    _write(out / "distributions.json", dists.to_json())
    print(f"fit: wrote {out / 'distributions.json'}")
    return 0


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    dists = cpmodel.FlowDistributions.from_json(
        (Path(args.model) / "distributions.json").read_text()
    )
    grid = cfg.scenario
    total = 0
    for servers, scale in grid.cells():
        scenario = simengine.ScenarioConfig(
            horizon_days=grid.horizon_days,
            n_angiography=servers,
            background_scale=scale,
            target_scale=grid.target_scale,
            replications=grid.replications,
            base_seed=grid.base_seed,
            warmup_days=grid.warmup_days,
            use_pathway_classes=not args.baseline,
            background_competes=grid.background_competes,
        )
        results = simengine.run_scenario(dists, scenario, jobs=args.jobs)
        cell_dir = out / cell_dirname(servers, scale)
        lines = []
        summaries = []
        for res in results:
            lines.extend(res.patient_lines())
            summaries.append(res.summary())
            if args.traces:
                _write(cell_dir / f"trace_r{res.replication:03d}.csv", res.trace_csv())
        _write(cell_dir / "patients.jsonl", "\n".join(lines) + ("\n" if lines else ""))
        _write(cell_dir / "summary.json", json.dumps(summaries, sort_keys=True))
        total += len(results)
    print(f"simulate: {total} replications over {len(grid.cells())} cells -> {out}")
    return 0


def _load_cells(results_dir: Path) -> dict[analysis.CellKey, list[list[dict]]]:
    cells: dict[analysis.CellKey, list[list[dict]]] = {}
    for cell_dir in sorted(results_dir.iterdir()):
        if not cell_dir.is_dir() or not cell_dir.name.startswith("s"):
            continue
        servers, scale = cell_dir.name[1:].split("_x")
        reps: dict[int, list[dict]] = {}
        with open(cell_dir / "patients.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                p = json.loads(line)
                reps.setdefault(int(p["replication"]), []).append(p)
        cells[(int(servers), float(scale))] = [reps[r] for r in sorted(reps)]
    if not cells:
        raise ConfigError(f"no simulation cells found under {results_dir}")
    return cells


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    observed_cases = eventlog.ingest(args.observed)
    observed_cleaned, _ = eventlog.clean(observed_cases)
    observed_los = [c.span_hours for c in observed_cleaned]

    class_cells = _load_cells(Path(args.results))
    base_cells = _load_cells(Path(args.baseline_results))

    top_clusters = None
    observed_clusters = None
    cluster_sizes = None
    if args.top:
        if not args.model:
            raise ConfigError("--top requires --model pointing at the mine output")
        model = cluster.ClusterModel.from_json(
            (Path(args.model) / "cluster_model.json").read_text()
        )
        sizes = model.sizes()
        ranked = sorted(model.active_clusters(), key=lambda c: (-sizes[c], c))
        top_clusters = ranked[: args.top]
        missing = [c.case_id for c in observed_cleaned if c.case_id not in model.assignment]
        if missing:
            raise ConfigError(
                f"--top needs cluster assignments for the observed cases; missing e.g. {missing[:3]}"
            )
        observed_clusters = [model.assignment[c.case_id] for c in observed_cleaned]
        cluster_sizes = sizes

    report = analysis.compare(
        observed_los,
        class_cells,
        base_cells,
        top_clusters=top_clusters,
        observed_clusters=observed_clusters,
        cluster_sizes=cluster_sizes,
    )
    _write(out / "eval_report.json", report.to_json())
    _write(out / "qq.csv", report.qq_csv())
    _write(out / "queue_summary.csv", report.queue_csv())
    print(
        f"evaluate: KS class-aware={report.ks_class_aware:.4f} "
        f"baseline={report.ks_baseline:.4f} reduction={100 * report.ks_reduction:.1f}%"
    )
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    eval_path = Path(args.eval)
    if eval_path.is_dir():
        eval_path = eval_path / "eval_report.json"
    report = analysis.EvalReport.from_json(eval_path.read_text())
    lines = [
        "# Patient-flow simulation evaluation",
        "",
        "## Length-of-stay fit (two-sample KS statistic)",
        "",
        f"- class-aware simulation: **{report.ks_class_aware:.4f}**",
        f"- class-blind baseline:   **{report.ks_baseline:.4f}**",
        f"- reduction: **{100 * report.ks_reduction:.1f}%**",
    ]
    if report.top_clusters is not None:
        cov = f" (covering {100 * report.coverage:.0f}% of cases)" if report.coverage else ""
        lines.append(f"- restricted to top clusters {report.top_clusters}{cov}")
    lines += [
        "",
        "## Queueing per scenario cell (median over replications)",
        "",
        "| facilities | background scale | % queued (med) | mean wait h (med) |",
        "|---|---|---|---|",
    ]
    for (servers, scale), stats in sorted(report.queue_summary.items()):
        lines.append(
            f"| {servers} | {scale} | {stats['pct_queued'][2]:.1f} | {stats['mean_wait'][2]:.3f} |"
        )
    lines.append("")
    _write(out / "report.md", "\n".join(lines))
    print(f"report: wrote {out / 'report.md'}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="careflow",
        description="Clinical-pathway mining and patient-flow simulation pipeline",
    )
    parser.add_argument("--config", help="YAML config file (defaults embedded)")
    parser.add_argument("--seed", type=int, help="override generator and scenario base seeds")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers for simulate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", help="show the effective or default configuration")
    p.add_argument("--dump-defaults", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic event-log CSV plus ground truth")
    p.add_argument("--n", type=int, help="number of cases (overrides config)")

    p = sub.add_parser("mine", help="clean, encode, cluster, classify and build flow graphs")
    p.add_argument("--log", required=True, help="event-log CSV")

    p = sub.add_parser("fit", help="fit simulation distributions from a log and mine output")
    p.add_argument("--log", required=True)
    p.add_argument("--model", required=True, help="directory written by mine")

    p = sub.add_parser("simulate", help="run the scenario grid")
    p.add_argument("--model", required=True, help="directory holding distributions.json")
    p.add_argument("--baseline", action="store_true", help="class-blind basic-state flow")
    p.add_argument("--traces", action="store_true", help="write per-replication resource traces")

    p = sub.add_parser("evaluate", help="compare simulated and observed length of stay")
    p.add_argument("--observed", required=True, help="observed event-log CSV")
    p.add_argument("--results", required=True, help="class-aware simulate output dir")
    p.add_argument("--baseline-results", required=True, help="baseline simulate output dir")
    p.add_argument("--model", help="mine output dir (for --top)")
    p.add_argument("--top", type=int, help="restrict to the k largest clusters")

    p = sub.add_parser("report", help="render an evaluation report as markdown")
    p.add_argument("--eval", required=True, help="eval_report.json or its directory")

    return parser


COMMANDS = {
    "config": cmd_config,
    "synth": cmd_synth,
    "mine": cmd_mine,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (eventlog.EventLogError, pathway.CodeMapError, cluster.ClusterError,
            classify.ClassifyError, cpmodel.ModelError, analysis.AnalysisError,
            simengine.SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
