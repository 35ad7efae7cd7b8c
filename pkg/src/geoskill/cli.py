"""Unified command-line entry point: compile, infer, batch_infer, evolve,
eval, and library_stats.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import evolution as evolution_mod
from .config import ConfigError, RunConfig, load_config
from .expert_compiler import compile_library, parse_trajectory_records
from .geo_metrics import faithfulness_prf, haversine_km, threshold_accuracy
from .inference_engine import (
    ABLATION_MODES,
    InferenceEngine,
    RecordGroundTruth,
    RecordWriter,
    read_records,
)
from .model_gateway import (
    Gateway,
    GatewayError,
    HttpBackend,
    MockBackend,
    ModelAlias,
)
from .retrieval import HashedNgramEmbedder, RemoteEmbeddingProvider, build_index
from .skill_model import (
    GeoCoordinate,
    LibraryFormatError,
    effective_confidence,
    load_library,
    save_library,
)


class DataError(RuntimeError):
    """Missing or malformed input data."""


def dump_effective_config(config: RunConfig) -> dict:
    """Every setting, defaults included; no hidden values."""
    return config.to_dict()


def _build_backend(section, name):
    if section.script:
        return MockBackend.from_file(section.script, name=f"mock-{name}")
    if section.url:
        return HttpBackend(
            section.url,
            section.model_name,
            timeout_s=section.timeout_s,
            name=name,
            rate_per_s=section.rate_per_s,
        )
    raise ConfigError(f"backend.{name} needs either a script or a url")


def _build_gateway(config: RunConfig) -> Gateway:
    return Gateway(
        backends={
            ModelAlias.ONLINE_INFERENCE: _build_backend(config.backend.online, "online"),
            ModelAlias.OFFLINE_REFINEMENT: _build_backend(config.backend.offline, "offline"),
        },
        max_retries={
            ModelAlias.ONLINE_INFERENCE: config.backend.online.max_retries,
            ModelAlias.OFFLINE_REFINEMENT: config.backend.offline.max_retries,
        },
    )


def _build_provider(config: RunConfig):
    rc = config.retrieval
    if rc.embedding_url:
        return RemoteEmbeddingProvider(rc.embedding_url, rc.embedding_dim)
    return HashedNgramEmbedder(rc.embedding_dim)


def _load_library_or_fail(path: str):
    try:
        return load_library(path)
    except LibraryFormatError as exc:
        raise DataError(f"no loadable library at {path}: {exc}") from exc


def _read_manifest(path: str) -> list[dict]:
    items = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    items.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return items


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, ensure_ascii=False, indent=2))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file")
@click.option("--override", "overrides", multiple=True, help="dotted key=value config override")
@click.pass_context
def cli(ctx, config_path, overrides):
    """Skill-graph visual geolocation toolkit."""
    ctx.obj = load_config(config_path, tuple(overrides))


@cli.command("compile")
@click.option("--input", "input_path", required=True, type=click.Path(exists=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--lexicon", "lexicon_path", type=click.Path(), default=None)
@click.pass_obj
def cmd_compile(config: RunConfig, input_path, out_dir, lexicon_path):
    """Compile expert trajectory records into a version-0 library."""
    if not Path(input_path).exists():
        raise DataError(f"trajectory file not found: {input_path}")
    lexicon = _load_lexicon(lexicon_path)
    records, diagnostics = parse_trajectory_records(input_path)
    for diag in diagnostics:
        click.echo(f"warning: line {diag.line}: {diag.message}", err=True)
    library = compile_library(records, lexicon)
    save_library(library, out_dir)
    _emit(
        {
            "library_dir": str(out_dir),
            "version": library.version,
            "skills": len(library.skills),
            "relation_priors": len(library.relation_priors),
            "failure_subset": len(library.failure_subset),
            "records": len(records),
            "parse_diagnostics": len(diagnostics),
        }
    )


def _load_lexicon(path):
    from .expert_compiler import DEFAULT_LEXICON, CertaintyLexicon

    if path is None:
        return DEFAULT_LEXICON
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return CertaintyLexicon(
            entries=tuple((str(k), float(v)) for k, v in data["markers"].items()),
            default=float(data.get("default", 0.6)),
        )
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load lexicon {path}: {exc}") from exc


def _make_engine(config: RunConfig, library_dir: str, writer: RecordWriter | None):
    library = _load_library_or_fail(library_dir)
    provider = _build_provider(config)
    index = build_index(library, provider, config.retrieval.bm25_k1, config.retrieval.bm25_b)
    kwargs = {}
    if config.fixed_clock is not None:
        pinned = float(config.fixed_clock)
        kwargs["clock"] = lambda: pinned
    return InferenceEngine(
        library, index, _build_gateway(config), config, record_writer=writer, **kwargs
    )


@cli.command("infer")
@click.option("--image", required=True, help="image reference (URL, path, or fixture id)")
@click.option("--library", "library_dir", required=True, type=click.Path())
@click.option("--rollouts", type=int, default=None)
@click.option("--mode", type=click.Choice(ABLATION_MODES), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="record log (JSONL)")
@click.pass_obj
def cmd_infer(config: RunConfig, image, library_dir, rollouts, mode, seed, out_path):
    """Run one query through the full inference pipeline."""
    inf = config.inference
    rollouts = rollouts if rollouts is not None else inf.rollouts
    mode = mode or inf.mode
    seed = seed if seed is not None else inf.seed
    writer = RecordWriter(out_path or config.records_log)
    engine = _make_engine(config, library_dir, writer)
    prediction, record = engine.run_ablation_mode(mode, image, n_rollouts=rollouts, seed=seed)
    _emit({"query_id": record.query_id, "prediction": prediction.to_dict()})


@cli.command("batch_infer")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--library", "library_dir", required=True, type=click.Path())
@click.option("--rollouts", type=int, default=None)
@click.option("--mode", type=click.Choice(ABLATION_MODES), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_obj
def cmd_batch_infer(config: RunConfig, manifest_path, library_dir, rollouts, mode, seed, out_path):
    """Run every manifest item, resumably, marking outcomes where the
    manifest carries ground truth."""
    inf = config.inference
    rollouts = rollouts if rollouts is not None else inf.rollouts
    mode = mode or inf.mode
    seed = seed if seed is not None else inf.seed
    out_path = Path(out_path or config.records_log)

    items = _read_manifest(manifest_path)
    checkpoint_path = Path(str(out_path) + ".checkpoint")
    done: set[str] = set()
    if checkpoint_path.exists():
        done = {l.strip() for l in checkpoint_path.read_text().splitlines() if l.strip()}
    pending = [item for item in items if str(item.get("id")) not in done]

    writer = RecordWriter(out_path)
    engine = _make_engine(config, library_dir, None)
    effective = dump_effective_config(config)
    Path(str(out_path) + ".config.json").write_text(
        json.dumps(effective, indent=2) + "\n", encoding="utf-8"
    )

    failures: list[dict] = []
    completed: list[str] = []

    def run_item(item):
        qid = str(item.get("id"))
        try:
            _prediction, record = engine.run_ablation_mode(
                mode, str(item["image"]), n_rollouts=rollouts, seed=seed, query_id=qid
            )
            if "lat" in item and "lon" in item:
                gt = RecordGroundTruth(
                    GeoCoordinate(float(item["lat"]), float(item["lon"])), item.get("country")
                )
                record = evolution_mod.mark_outcome(record, gt, inf.success_radius_km)
            writer.append(record)
            return qid, None
        except Exception as exc:
            return qid, f"{type(exc).__name__}: {exc}"

    checkpoint_every = config.checkpoint_every
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        for qid, error in pool.map(run_item, pending):
            if error is None:
                completed.append(qid)
            else:
                failures.append({"id": qid, "error": error})
            if (len(completed) + len(failures)) % checkpoint_every == 0:
                _write_checkpoint(checkpoint_path, done, completed, failures)
    _write_checkpoint(checkpoint_path, done, completed, failures)

    _emit(
        {
            "total": len(items),
            "skipped_checkpointed": len(items) - len(pending),
            "completed": len(completed),
            "failed": len(failures),
            "failures": failures[:20],
            "records_log": str(out_path),
        }
    )
    if pending and not completed:
        raise GatewayError("systemic failure: every pending item failed")


def _write_checkpoint(path: Path, done: set, completed: list, failures: list) -> None:
    # Failed items are deliberately left out so a resumed run retries them.
    processed = sorted(done | set(completed))
    path.write_text("".join(q + "\n" for q in processed), encoding="utf-8")


@cli.command("evolve")
@click.option("--library", "library_dir", required=True, type=click.Path())
@click.option("--records", "records_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dry-run", is_flag=True, default=False)
@click.pass_obj
def cmd_evolve(config: RunConfig, library_dir, records_path, config_path, dry_run):
    if config_path is not None:
        config = load_config(config_path)
    """Run one evolution step over validated inference records and commit
    the next library version (unless --dry-run)."""
    library = _load_library_or_fail(library_dir)
    if not Path(records_path).exists():
        raise DataError(f"records log not found: {records_path}")
    records = read_records(records_path)
    marked = [r for r in records if r.outcome is not None]
    skipped = len(records) - len(marked)
    provider = _build_provider(config)
    gateway = _build_gateway(config)
    outcome = evolution_mod.evolve_step(library, marked, config.evolution, gateway, provider)
    report = outcome.report.to_dict()
    report["records_skipped_unmarked"] = skipped
    report["dry_run"] = dry_run
    if not dry_run:
        save_library(outcome.library, library_dir)
        history = Path(config.evolution_history)
        with open(history, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(outcome.report.to_dict(), separators=(",", ":")) + "\n")
    _emit(report)


@cli.command("eval")
@click.option("--predictions", "predictions_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--faithfulness-gold", "gold_path", type=click.Path(), default=None)
@click.pass_obj
def cmd_eval(config: RunConfig, predictions_path, manifest_path, gold_path):
    """Score a record log against a ground-truth manifest."""
    if not Path(predictions_path).exists():
        raise DataError(f"predictions log not found: {predictions_path}")
    records = {r.query_id: r for r in read_records(predictions_path)}
    manifest = _read_manifest(manifest_path)

    distances = []
    matched = 0
    for item in manifest:
        qid = str(item.get("id"))
        record = records.get(qid)
        if record is None or "lat" not in item:
            continue
        matched += 1
        truth = GeoCoordinate(float(item["lat"]), float(item["lon"]))
        distances.append(haversine_km(record.prediction.coordinate, truth))
    report: dict = {
        "samples_in_manifest": len(manifest),
        "samples_scored": matched,
        "threshold_accuracy": threshold_accuracy(distances).to_dict(),
    }

    if gold_path is not None:
        gold_items = _read_manifest(gold_path)
        provider = _build_provider(config)
        predicted, gold = [], []
        for item in gold_items:
            qid = str(item.get("id"))
            record = records.get(qid)
            if record is None:
                continue
            predicted.append([c.text for c in record.prediction.claims])
            gold.append([str(step) for step in item.get("chain", [])])
        report["faithfulness"] = faithfulness_prf(predicted, gold, provider).to_dict()
    _emit(report)


@cli.command("library_stats")
@click.option("--library", "library_dir", required=True, type=click.Path())
@click.pass_obj
def cmd_library_stats(config: RunConfig, library_dir):
    """Summarize a library directory."""
    library = _load_library_or_fail(library_dir)
    stages: dict[str, int] = {}
    provenance: dict[str, int] = {}
    for skill in library.skills.values():
        stages[skill.stage.value] = stages.get(skill.stage.value, 0) + 1
        provenance[skill.provenance.kind.value] = provenance.get(skill.provenance.kind.value, 0) + 1
    alpha = config.evolution.confidence_pseudo_count
    confidences = sorted(
        effective_confidence(s, alpha) for s in library.skills.values()
    )
    _emit(
        {
            "version": library.version,
            "skills": len(library.skills),
            "stages": dict(sorted(stages.items())),
            "provenance": dict(sorted(provenance.items())),
            "relation_priors": len(library.relation_priors),
            "failure_subset": len(library.failure_subset),
            "min_effective_confidence": confidences[0] if confidences else None,
            "max_effective_confidence": confidences[-1] if confidences else None,
        }
    )


cli.add_command(cmd_batch_infer, name="batch-infer")
cli.add_command(cmd_library_stats, name="library-stats")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except (DataError, LibraryFormatError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except GatewayError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 3
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1


if __name__ == "__main__":
    sys.exit(main())
