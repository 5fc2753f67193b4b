"""Pipeline CLI: schedule -> annotate -> fit -> sample -> stats.

Every command is deterministic for fixed flags, inputs, and seed: rerunning
produces byte-identical primary artifacts. Exit codes: 0 success, 1 usage,
2 data error, 3 backend error, 4 Bradley-Terry non-convergence.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import click

from . import corpus_io, rating, sampling
from .errors import (
    BackendError,
    DataError,
    DecorateError,
    EmptySource,
    MalformedRecord,
    NoComparisons,
)
from .gateway import MockBackend, PairSchedule, RemoteBackend, schedule_pairs
from .taxonomy import TagTaxonomy, load_default_taxonomy, load_taxonomy
from .types import (
    AnnotatedDocument,
    ComparisonRecord,
    Criterion,
    Document,
    RatingVector,
    TagPath,
    canonical_criterion_order,
)
from .util import fingerprint_file, fingerprint_json

# Editing is only worthwhile on mid-length documents; shorter ones carry too
# little signal and longer ones exceed the rephrasing context.
EDIT_MIN_TOKENS = 50
EDIT_MAX_TOKENS = 2048

STAGES = ("scheduled", "compared", "fitted", "tagged", "edited", "sampled")


class _NonConvergence(Exception):
    """Raised after artifacts are written when a fit did not converge."""


# ---------------------------------------------------------------------------
# pipeline state sidecars

@dataclass
class PipelineState:
    """Sidecar written next to each artifact: which stage produced it, under
    which seed and config, and the artifact's content fingerprint."""

    stage: str
    seed: int
    config_fingerprint: str
    artifacts: dict[str, str] = field(default_factory=dict)
    fingerprints: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def path_for(artifact: str | Path) -> Path:
        return Path(str(artifact) + ".state.json")

    def save(self) -> None:
        doc = {
            "stage": self.stage,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "artifacts": self.artifacts,
            "fingerprints": self.fingerprints,
        }
        for path in self.artifacts.values():
            self.path_for(path).write_text(
                json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8"
            )

    @classmethod
    def load_for(cls, artifact: str | Path) -> Optional["PipelineState"]:
        sidecar = cls.path_for(artifact)
        if not sidecar.exists():
            return None
        doc = json.loads(sidecar.read_text("utf-8"))
        return cls(
            stage=doc["stage"],
            seed=int(doc["seed"]),
            config_fingerprint=doc["config_fingerprint"],
            artifacts=dict(doc["artifacts"]),
            fingerprints=dict(doc["fingerprints"]),
        )


def _write_state(stage: str, seed: int, params: dict, outputs: dict[str, Path]) -> None:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    state = PipelineState(
        stage=stage,
        seed=seed,
        config_fingerprint=fingerprint_json(params),
        artifacts={name: str(path) for name, path in outputs.items()},
        fingerprints={str(path): fingerprint_file(path) for path in outputs.values()},
    )
    state.save()


def _verify_input(path: str | Path) -> None:
    """A consumed artifact with a sidecar must still match its fingerprint."""
    state = PipelineState.load_for(path)
    if state is None:
        return
    recorded = state.fingerprints.get(str(path))
    if recorded and recorded != fingerprint_file(path):
        raise MalformedRecord(
            f"artifact {path} was modified after stage {state.stage!r} wrote it"
        )


# ---------------------------------------------------------------------------
# group

@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Master seed.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Worker parallelism for annotation calls.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Strategy config JSON (used by `sample`).")
@click.option("--skip-malformed", is_flag=True,
              help="Skip and count malformed corpus lines instead of failing.")
@click.option("--allow-partial", is_flag=True,
              help="Shrink the edited-replacement pool to documents that have edits.")
@click.pass_context
def cli(ctx, seed, jobs, config_path, skip_malformed, allow_partial):
    """Decorate a pretraining corpus: rate, tag, edit, and resample it."""
    ctx.obj = {
        "seed": seed,
        "jobs": jobs,
        "config": config_path,
        "skip_malformed": skip_malformed,
        "allow_partial": allow_partial,
    }


def _load_corpus(manifest_path: str, skip_malformed: bool) -> tuple[corpus_io.CorpusManifest, dict[str, Document]]:
    _verify_input(manifest_path)
    manifest = corpus_io.CorpusManifest.load(manifest_path)
    docs: dict[str, Document] = {}
    for doc in corpus_io.read_documents(manifest, skip_malformed=skip_malformed):
        if doc.id in docs:
            raise MalformedRecord(f"duplicate document id {doc.id!r}")
        docs[doc.id] = doc
    return manifest, docs


def _load_taxonomy_arg(path: Optional[str]) -> TagTaxonomy:
    return load_taxonomy(path) if path else load_default_taxonomy()


# ---------------------------------------------------------------------------
# schedule

@cli.command("schedule")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pairs-per-doc", type=click.IntRange(min=1), required=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def cmd_schedule(ctx, corpus_path, pairs_per_doc, out_path):
    """Build the per-criterion comparison pair schedule."""
    seed = ctx.obj["seed"]
    _, docs = _load_corpus(corpus_path, ctx.obj["skip_malformed"])
    schedule = schedule_pairs(list(docs), pairs_per_doc, seed)
    schedule.save(out_path)
    _write_state(
        "scheduled",
        seed,
        {"corpus": fingerprint_file(corpus_path), "pairs_per_doc": pairs_per_doc},
        {"schedule": Path(out_path)},
    )
    n_pairs = sum(len(p) for p in schedule.pairs.values())
    click.echo(f"scheduled {n_pairs} pairs over {len(docs)} documents -> {out_path}")


# ---------------------------------------------------------------------------
# annotate

def _existing_request_ids(out_path: Path, task: str) -> set[str]:
    if not out_path.exists():
        return set()
    done: set[str] = set()
    with open(out_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if task == "compare":
                done.add(f"{rec['criterion']}|{rec['doc_a']}|{rec['doc_b']}")
            else:
                done.add(rec["id"])
    return done


def _build_backend(backend_name, mock_config, docs, seed, jobs):
    if backend_name == "mock":
        if mock_config:
            texts = {doc_id: doc.text for doc_id, doc in docs.items()}
            return MockBackend.from_fixture(mock_config, texts)
        return MockBackend()
    return RemoteBackend.from_env(seed=seed, max_in_flight=jobs)


def _run_ordered(jobs: int, fn, items: list):
    """Apply fn over items, preserving input order in the output."""
    if jobs <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, items)


@cli.command("annotate")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schedule", "schedule_path", type=click.Path(exists=True, dir_okay=False),
              help="Pair schedule (required for --task compare).")
@click.option("--backend", "backend_name", type=click.Choice(["mock", "remote"]), default="mock",
              show_default=True)
@click.option("--mock-config", type=click.Path(exists=True, dir_okay=False),
              help="Mock fixture JSON with latents and keyword tags.")
@click.option("--task", required=True, type=click.Choice(["compare", "tag", "edit", "summarize"]))
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def cmd_annotate(ctx, corpus_path, schedule_path, backend_name, mock_config, task,
                 taxonomy_path, out_path):
    """Run an annotation task over the corpus; reruns resume by request id."""
    seed, jobs = ctx.obj["seed"], ctx.obj["jobs"]
    manifest, docs = _load_corpus(corpus_path, ctx.obj["skip_malformed"])
    backend = _build_backend(backend_name, mock_config, docs, seed, jobs)
    out = Path(out_path)
    done = _existing_request_ids(out, task)
    skipped_done = 0
    written = 0

    with open(out, "a", encoding="utf-8") as fh:

        def emit(record: dict) -> None:
            nonlocal written
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
            written += 1

        if task == "compare":
            if not schedule_path:
                raise click.UsageError("--task compare needs --schedule")
            _verify_input(schedule_path)
            schedule = PairSchedule.load(schedule_path)
            requests = []
            for criterion in canonical_criterion_order():
                for doc_a, doc_b in schedule.pairs.get(criterion, []):
                    rid = f"{criterion.value}|{doc_a}|{doc_b}"
                    if rid in done:
                        skipped_done += 1
                        continue
                    requests.append((criterion, doc_a, doc_b))

            def run_compare(req):
                criterion, doc_a, doc_b = req
                result = backend.compare(criterion, docs[doc_a].text, docs[doc_b].text)
                return ComparisonRecord(
                    criterion=criterion, doc_a=doc_a, doc_b=doc_b,
                    winner=result.winner, judge=backend.judge,
                    rationale=result.rationale,
                )

            for rec in _run_ordered(jobs, run_compare, requests):
                emit(corpus_io.comparison_to_record(rec))

        elif task == "tag":
            taxonomy = _load_taxonomy_arg(taxonomy_path)
            pending = [d for d in docs.values() if d.id not in done]
            skipped_done = len(docs) - len(pending)

            def run_tag(doc: Document):
                level1, _ = backend.assign_first_level_tag(doc.text, taxonomy)
                level2, level3, _ = backend.assign_sub_tags(doc.text, level1, taxonomy)
                return {"id": doc.id, "tags": [level1, level2, level3]}

            for record in _run_ordered(jobs, run_tag, pending):
                emit(record)

        elif task == "edit":
            pending = []
            for doc in docs.values():
                if doc.id in done:
                    skipped_done += 1
                    continue
                if not (EDIT_MIN_TOKENS <= doc.token_count <= EDIT_MAX_TOKENS):
                    click.echo(
                        f"skipped id={doc.id} reason=length ({doc.token_count} tokens)",
                        err=True,
                    )
                    continue
                pending.append(doc)

            def run_edit(doc: Document):
                edited = backend.edit(doc.text)
                return {
                    "id": doc.id,
                    "edited": edited,
                    "edited_token_count": corpus_io.count_tokens(
                        edited, manifest.tokenizer_id
                    ),
                }

            for record in _run_ordered(jobs, run_edit, pending):
                emit(record)

        else:  # summarize
            pending = [d for d in docs.values() if d.id not in done]
            skipped_done = len(docs) - len(pending)

            def run_summary(doc: Document):
                return {"id": doc.id, "summary": backend.summarize(doc.text)}

            for record in _run_ordered(jobs, run_summary, pending):
                emit(record)

    stage = {"compare": "compared", "tag": "tagged", "edit": "edited",
             "summarize": "tagged"}[task]
    _write_state(
        stage,
        seed,
        {"corpus": fingerprint_file(corpus_path), "task": task, "backend": backend_name},
        {task: out},
    )
    click.echo(f"wrote {written} records ({skipped_done} already done) -> {out_path}")


# ---------------------------------------------------------------------------
# fit

@cli.command("fit")
@click.option("--comparisons", "comparisons_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--tol", type=float, default=rating.DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=click.IntRange(min=1), default=rating.DEFAULT_MAX_ITER,
              show_default=True)
@click.option("--prior", type=float, default=rating.DEFAULT_PRIOR, show_default=True,
              help="Pseudo-wins/losses against the average opponent.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              help="Fit report JSON (default: <out>.report.json).")
@click.pass_context
def cmd_fit(ctx, comparisons_path, out_path, tol, max_iter, prior, report_path):
    """Fit per-criterion strengths from comparisons and write 0-100 scores."""
    _verify_input(comparisons_path)
    by_criterion: dict[Criterion, list[ComparisonRecord]] = {}
    for rec in corpus_io.read_comparisons(comparisons_path):
        by_criterion.setdefault(rec.criterion, []).append(rec)
    if not by_criterion:
        raise NoComparisons(f"no comparison records in {comparisons_path}")

    scores: dict[str, dict[str, float]] = {}
    reports = []
    unconverged = []
    for criterion in canonical_criterion_order():
        if criterion not in by_criterion:
            continue
        fit = rating.fit_bradley_terry(
            by_criterion[criterion], prior_pseudo_wins=prior, tol=tol, max_iter=max_iter
        )
        reports.append(fit.report())
        if not fit.converged:
            unconverged.append(criterion.value)
        for doc_id, score in rating.normalize_scores(fit).scores.items():
            scores.setdefault(doc_id, {})[criterion.value] = score

    with open(out_path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(scores):
            fh.write(json.dumps({"id": doc_id, "ratings": scores[doc_id]},
                                sort_keys=True) + "\n")
    report_file = Path(report_path) if report_path else Path(out_path + ".report.json")
    report_file.write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n", "utf-8")
    _write_state(
        "fitted",
        ctx.obj["seed"],
        {"comparisons": fingerprint_file(comparisons_path), "tol": tol,
         "max_iter": max_iter, "prior": prior},
        {"ratings": Path(out_path)},
    )
    click.echo(
        f"fitted {len(reports)} criteria over {len(scores)} documents -> {out_path}"
    )
    if unconverged:
        click.echo(f"non-convergence on: {', '.join(unconverged)}", err=True)
        raise _NonConvergence(", ".join(unconverged))


# ---------------------------------------------------------------------------
# sample

def _merge_annotations(paths: Iterable[str], skip_malformed: bool) -> dict[str, dict]:
    merged: dict[str, dict] = {}
    for path in paths:
        _verify_input(path)
        for record in corpus_io.read_annotation_records(path, skip_malformed=skip_malformed):
            merged.setdefault(record["id"], {}).update(record)
    return merged


def _join_annotated(
    docs: dict[str, Document], records: dict[str, dict]
) -> list[AnnotatedDocument]:
    """Typed join in corpus order; incomplete rating maps degrade to None
    with a warning so tag-only flows keep working."""
    joined = []
    for doc_id, doc in docs.items():
        record = records.get(doc_id, {})
        ratings = None
        raw_ratings = record.get("ratings")
        if raw_ratings is not None:
            try:
                ratings = RatingVector.from_scores(
                    {Criterion(k): float(v) for k, v in raw_ratings.items()}
                )
            except ValueError as exc:
                click.echo(f"ignoring ratings for {doc_id}: {exc}", err=True)
        tags = None
        if "tags" in record:
            raw = record["tags"]
            if not (isinstance(raw, list) and len(raw) == 3):
                raise MalformedRecord(f"bad tags for {doc_id!r}: {raw!r}")
            tags = TagPath(*map(str, raw))
        edited = record.get("edited")
        edited_tokens = record.get("edited_token_count")
        joined.append(
            AnnotatedDocument(
                doc=doc,
                ratings=ratings,
                tags=tags,
                edited_text=edited,
                edited_token_count=None if edited_tokens is None else int(edited_tokens),
            )
        )
    return joined


def _manifest_summary(
    manifest: sampling.SampleManifest, docs: dict[str, Document],
    annotated: dict[str, AnnotatedDocument],
) -> str:
    from .metrics import format_table

    phase_tokens: dict[str, int] = {}
    source_tokens: dict[str, int] = {}
    tag_tokens: dict[str, int] = {}
    edited_count = 0
    for entry in manifest.entries:
        if entry.phase is not None:
            phase_tokens[entry.phase.value] = (
                phase_tokens.get(entry.phase.value, 0) + entry.tokens
            )
        source = docs[entry.doc_id].source
        source_tokens[source] = source_tokens.get(source, 0) + entry.tokens
        ann = annotated.get(entry.doc_id)
        if ann is not None and ann.tags is not None:
            tag_tokens[ann.tags.level1] = tag_tokens.get(ann.tags.level1, 0) + entry.tokens
        if entry.edited:
            edited_count += 1
    lines = [
        f"documents: {len(manifest.entries)}",
        f"tokens: {manifest.total_tokens}",
        f"edited entries: {edited_count}",
        "",
    ]
    for title, tally in (("phase", phase_tokens), ("source", source_tokens),
                         ("first-level tag", tag_tokens)):
        if not tally:
            continue
        rows = [
            [name, str(tokens), f"{tokens / manifest.total_tokens:.4f}"]
            for name, tokens in sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
        ]
        lines.append(format_table([title, "tokens", "share"], rows))
    return "\n".join(lines)


@cli.command("sample")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", "annotation_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Annotation JSONL; repeat to merge ratings/tags/edits by id.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Strategy config JSON (falls back to the global --config).")
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def cmd_sample(ctx, corpus_path, annotation_paths, config_path, taxonomy_path, out_path):
    """Select a subcorpus with the configured strategy; writes the manifest
    plus a human-readable summary."""
    config_file = config_path or ctx.obj["config"]
    if not config_file:
        raise click.UsageError("sample needs --config (or the global --config)")
    try:
        config_doc = json.loads(Path(config_file).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedRecord(f"bad strategy config {config_file}: {exc}") from None
    config = sampling.parse_strategy_config(config_doc)
    seed = config.seed if config.seed is not None else ctx.obj["seed"]

    _, docs = _load_corpus(corpus_path, ctx.obj["skip_malformed"])
    records = _merge_annotations(annotation_paths, ctx.obj["skip_malformed"])
    annotated = _join_annotated(docs, records)
    taxonomy = None
    if config.strategy in ("tag", "agg_tag", "sep_tag", "agg_tag_edit"):
        taxonomy = _load_taxonomy_arg(taxonomy_path or config_doc.get("taxonomy"))

    manifest = sampling.run_strategy(
        annotated, config, seed, taxonomy=taxonomy,
        allow_partial=ctx.obj["allow_partial"],
    )
    manifest.save(out_path)
    summary = _manifest_summary(
        manifest, docs, {ann.doc.id: ann for ann in annotated}
    )
    Path(out_path + ".summary.txt").write_text(summary + "\n", "utf-8")
    _write_state(
        "sampled",
        seed,
        {"corpus": fingerprint_file(corpus_path), "config": config.raw},
        {"manifest": Path(out_path)},
    )
    click.echo(summary)
    click.echo(f"wrote manifest -> {out_path}")


# ---------------------------------------------------------------------------
# stats

@cli.command("stats")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", "annotation_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_prefix", required=True,
              help="Output prefix; writes <prefix>.json and <prefix>.csv.")
@click.pass_context
def cmd_stats(ctx, corpus_path, annotation_paths, taxonomy_path, out_prefix):
    """Per-source rating/diversity summary plus tag and token distributions."""
    from .metrics import dataset_summary, format_table, summary_to_csv
    from .taxonomy import count_tags, tag_distribution

    _, docs = _load_corpus(corpus_path, ctx.obj["skip_malformed"])
    records = _merge_annotations(annotation_paths, ctx.obj["skip_malformed"])
    if not records:
        raise EmptySource("no annotation records")
    annotated = _join_annotated(docs, records)
    taxonomy = _load_taxonomy_arg(taxonomy_path)

    rows = dataset_summary(annotated, taxonomy)
    tagged = [a for a in annotated if a.tags is not None]
    distribution = tag_distribution(count_tags(tagged, taxonomy), level=1)
    total_tokens = sum(doc.token_count for doc in docs.values())
    source_share = {}
    for doc in docs.values():
        source_share[doc.source] = source_share.get(doc.source, 0) + doc.token_count
    source_share = {s: t / total_tokens for s, t in sorted(source_share.items())}

    out_json = Path(f"{out_prefix}.json")
    out_csv = Path(f"{out_prefix}.csv")
    out_json.write_text(
        json.dumps(
            {
                "sources": [row.to_json() for row in rows],
                "first_level_tag_distribution": distribution,
                "source_token_share": source_share,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        "utf-8",
    )
    out_csv.write_text(summary_to_csv(rows), "utf-8")
    click.echo(
        format_table(
            ["source", "docs", "tokens", "cross-entropy"],
            [
                [r.source, str(r.documents), str(r.token_count),
                 f"{r.tag_cross_entropy:.4f}"]
                for r in rows
            ],
        )
    )
    click.echo(f"wrote {out_json} and {out_csv}")


# ---------------------------------------------------------------------------
# entry point

def main(argv: Optional[list[str]] = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (click.Abort, KeyboardInterrupt):
        click.echo("aborted", err=True)
        return 1
    except _NonConvergence as exc:
        click.echo(f"non-convergence: {exc}", err=True)
        return 4
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 3
    except (DataError, DecorateError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
