"""Dataset ingestion, run orchestration, resumability and reporting.

Results are one JSONL record per question, append-only; a manifest JSON
next to the results file freezes the config snapshot, and resuming demands
an identical snapshot hash. Records embed everything needed for audit
(paths, tree, usage, per-question metrics), and deliberately nothing
run-wide, so two behaviourally identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import aggregate as agg
from .accounting import ModelProfile, flops_estimate
from .backends import PolicyBackend, VerifierBackend
from .config import RunConfig
from .errors import DatasetError, ResumeError, StepSearchError
from .grading import GraderClient, GraderUnavailable
from .prompts import MATH_BOXED, MULTIPLE_CHOICE
from .search import run_question

log = logging.getLogger(__name__)

_CHOICE_KEYS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    question: str
    gold_answer: str
    kind: str
    level: int | None = None
    subject: str | None = None
    options: dict[str, str] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (MATH_BOXED, MULTIPLE_CHOICE):
            raise DatasetError(f"question {self.id}: unknown kind {self.kind!r}")
        if not self.id or not self.question or not self.gold_answer:
            raise DatasetError(f"question {self.id!r}: id, question and gold_answer are required")
        if self.kind == MULTIPLE_CHOICE:
            if self.options is None or tuple(sorted(self.options)) != _CHOICE_KEYS:
                raise DatasetError(f"question {self.id}: multiple choice needs options A-D")
            if self.gold_answer not in _CHOICE_KEYS:
                raise DatasetError(f"question {self.id}: gold must be one of A-D")
        if self.level is not None and not 1 <= self.level <= 5:
            raise DatasetError(f"question {self.id}: level must be 1-5")


def load_dataset(path: str) -> list[QuestionRecord]:
    records: list[QuestionRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                record = QuestionRecord(
                    id=str(data["id"]),
                    question=data["question"],
                    gold_answer=str(data["gold_answer"]),
                    kind=data.get("kind", MATH_BOXED),
                    level=data.get("level"),
                    subject=data.get("subject"),
                    options=data.get("options"),
                )
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
            if record.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {record.id!r}")
            seen.add(record.id)
            records.append(record)
    if not records:
        log.warning("dataset %s is empty", path)
    return records


def dataset_fingerprint(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    snapshot: dict
    snapshot_hash: str
    dataset_fingerprint: str
    repeat_index: int = 0

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "snapshot": self.snapshot,
            "snapshot_hash": self.snapshot_hash,
            "dataset_fingerprint": self.dataset_fingerprint,
            "repeat_index": self.repeat_index,
        }


def make_manifest(config: RunConfig, dataset_path: str, repeat_index: int = 0) -> RunManifest:
    snapshot_hash = config.snapshot_hash()
    fingerprint = dataset_fingerprint(dataset_path)
    run_id = hashlib.sha256(
        f"{snapshot_hash}:{fingerprint}:{repeat_index}".encode()
    ).hexdigest()[:12]
    return RunManifest(
        run_id=run_id,
        snapshot=config.snapshot(),
        snapshot_hash=snapshot_hash,
        dataset_fingerprint=fingerprint,
        repeat_index=repeat_index,
    )


def _grade_answer(gold: str, predicted: str | None, kind: str, grader) -> tuple[bool, bool]:
    """(correct, fallback_used); missing answers are simply wrong."""
    if predicted is None:
        return False, False
    if grader is not None:
        try:
            return grader.grade(gold, predicted, kind).equivalent, False
        except GraderUnavailable:
            pass
    return agg.fallback_equivalent(gold, predicted, kind), True


def evaluate_question(record: QuestionRecord, run, grader) -> dict:
    """Build the persisted result record for one finished question."""
    paths = run.paths
    maj = agg.maj_at_k(paths)
    rm_path = agg.rm_at_k(paths)
    rm = rm_path.answer.normalized if rm_path.answer is not None else None
    verdict = agg.pass_at_k(paths, record.gold_answer, record.kind, grader)
    maj_correct, maj_fb = _grade_answer(record.gold_answer, maj, record.kind, grader)
    rm_correct, rm_fb = _grade_answer(record.gold_answer, rm, record.kind, grader)
    return {
        "id": record.id,
        "level": record.level,
        "failed": False,
        "error": None,
        "paths": [p.to_dict() for p in paths],
        "tree": run.tree.to_records(),
        "usage": run.usage.to_dict(),
        "maj_answer": maj,
        "rm_answer": rm,
        "maj_correct": maj_correct,
        "rm_correct": rm_correct,
        "pass_correct": verdict.correct,
        "fallback_graded": verdict.fallback_graded or maj_fb or rm_fb,
        "prm_sum": agg.question_prm_sum(paths),
        "errors": list(run.errors),
    }


def _failed_record(record: QuestionRecord, error: str) -> dict:
    return {
        "id": record.id,
        "level": record.level,
        "failed": True,
        "error": error,
        "paths": [],
        "tree": [],
        "usage": None,
        "maj_answer": None,
        "rm_answer": None,
        "maj_correct": False,
        "rm_correct": False,
        "pass_correct": False,
        "fallback_graded": False,
        "prm_sum": None,
        "errors": [error],
    }


def _completed_ids(results_path: Path) -> set[str]:
    done: set[str] = set()
    if results_path.exists():
        with results_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    done.add(json.loads(line)["id"])
    return done


def run_status(results_path: str | Path, dataset: list[QuestionRecord]) -> dict[str, str]:
    """Per-question status derived from the append-only results file."""
    done = _completed_ids(Path(results_path))
    return {r.id: ("completed" if r.id in done else "pending") for r in dataset}


def manifest_path_for(results_path: str | Path) -> Path:
    return Path(f"{results_path}.manifest.json")


def run(
    manifest: RunManifest,
    dataset: list[QuestionRecord],
    policy: PolicyBackend,
    verifier: VerifierBackend,
    config: RunConfig,
    results_path: str | Path,
    *,
    resume: bool = False,
    grader: GraderClient | None = None,
) -> "Report":
    """Execute every pending question and append its record to the results file."""
    results_path = Path(results_path)
    mpath = manifest_path_for(results_path)

    if resume and mpath.exists():
        previous = json.loads(mpath.read_text(encoding="utf-8"))
        if previous.get("snapshot_hash") != manifest.snapshot_hash:
            raise ResumeError("config snapshot differs from the interrupted run")
        if previous.get("dataset_fingerprint") != manifest.dataset_fingerprint:
            raise ResumeError("dataset changed since the interrupted run")
        done = _completed_ids(results_path)
    else:
        results_path.parent.mkdir(parents=True, exist_ok=True)
        mpath.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        results_path.write_text("", encoding="utf-8")
        done = set()

    pending = [r for r in dataset if r.id not in done]
    log.info("run %s: %d questions pending (%d already done)", manifest.run_id, len(pending), len(done))

    def work(record: QuestionRecord) -> dict:
        try:
            result = run_question(
                record.question,
                config.search,
                policy,
                verifier,
                answer_kind=record.kind,
                delim=config.delim,
                sampling=config.sampling,
            )
            return evaluate_question(record, result, grader)
        except StepSearchError as exc:
            log.error("question %s failed: %s", record.id, exc)
            return _failed_record(record, str(exc))

    with results_path.open("a", encoding="utf-8") as out:
        def emit(record_dict: dict) -> None:
            out.write(json.dumps(record_dict, sort_keys=True) + "\n")
            out.flush()

        if config.parallelism > 1:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                for record_dict in pool.map(work, pending):
                    emit(record_dict)
        else:
            for record in pending:
                emit(work(record))

    return build_report(results_path)


@dataclass
class Report:
    total: int
    k: int
    maj_accuracy: Fraction
    rm_accuracy: Fraction
    pass_accuracy: Fraction
    failed: int
    mean_tokens: float
    mean_policy_flops: float | None
    mean_verifier_flops: float | None
    mean_verifier_calls: float
    wasted_tokens: int
    fallback_graded: int
    prm_sum_by_level: dict[int, float] = field(default_factory=dict)

    def to_text(self) -> str:
        def pct(x: Fraction) -> str:
            return f"{float(x) * 100:.2f}%  ({x.numerator * (self.total // x.denominator)}/{self.total})"

        lines = [
            f"questions: {self.total}   paths/question: {self.k}   failed: {self.failed}",
            f"Maj@{self.k}:  {pct(self.maj_accuracy)}",
            f"RM@{self.k}:   {pct(self.rm_accuracy)}",
            f"Pass@{self.k}: {pct(self.pass_accuracy)}",
            f"tokens/question (generated): {self.mean_tokens:.2f}",
        ]
        if self.mean_policy_flops is not None:
            lines.append(f"policy FLOPs/question: {self.mean_policy_flops:.4g}")
        if self.mean_verifier_flops is not None:
            lines.append(f"verifier FLOPs/question: {self.mean_verifier_flops:.4g}")
        lines.append(f"verifier calls/question: {self.mean_verifier_calls:.2f}")
        lines.append(f"wasted tokens: {self.wasted_tokens}")
        if self.fallback_graded:
            lines.append(f"fallback-graded questions: {self.fallback_graded}")
        if self.prm_sum_by_level:
            per_level = ", ".join(
                f"L{level}: {value:.3f}" for level, value in sorted(self.prm_sum_by_level.items())
            )
            lines.append(f"difficulty indicator (mean score-sum): {per_level}")
        return "\n".join(lines)


def build_report(results_path: str | Path) -> Report:
    """Aggregate a results file; accuracies use exact rational arithmetic."""
    results_path = Path(results_path)
    records = [json.loads(line) for line in results_path.read_text(encoding="utf-8").splitlines() if line.strip()]
    total = len(records)
    if total == 0:
        raise DatasetError(f"no records in {results_path}")

    maj = sum(1 for r in records if r["maj_correct"])
    rm = sum(1 for r in records if r["rm_correct"])
    passed = sum(1 for r in records if r["pass_correct"])
    failed = sum(1 for r in records if r["failed"])
    fallback = sum(1 for r in records if r.get("fallback_graded"))
    k = max((len(r["paths"]) for r in records), default=0)

    tokens = [r["usage"]["total_generated"] for r in records if r.get("usage")]
    verifier_tokens = [r["usage"]["verifier_tokens"] for r in records if r.get("usage")]
    verifier_calls = [r["usage"]["verifier_calls"] for r in records if r.get("usage")]
    wasted = sum(r["usage"]["wasted_tokens"] for r in records if r.get("usage"))
    mean_tokens = sum(tokens) / len(tokens) if tokens else 0.0

    mean_policy_flops = mean_verifier_flops = None
    mpath = manifest_path_for(results_path)
    if mpath.exists():
        snapshot = json.loads(mpath.read_text(encoding="utf-8"))["snapshot"]
        policy_profile = ModelProfile(**snapshot["policy"]["profile"])
        verifier_profile = ModelProfile(**snapshot["verifier"]["profile"])
        if tokens:
            mean_policy_flops = flops_estimate(policy_profile, mean_tokens)
        if verifier_tokens:
            mean_verifier_flops = flops_estimate(
                verifier_profile, sum(verifier_tokens) / len(verifier_tokens)
            )

    by_level: dict[int, list[float]] = {}
    for r in records:
        if r.get("level") is not None and r.get("prm_sum") is not None:
            by_level.setdefault(r["level"], []).append(r["prm_sum"])
    prm_sum_by_level = {level: sum(v) / len(v) for level, v in by_level.items()}

    return Report(
        total=total,
        k=k,
        maj_accuracy=Fraction(maj, total),
        rm_accuracy=Fraction(rm, total),
        pass_accuracy=Fraction(passed, total),
        failed=failed,
        mean_tokens=mean_tokens,
        mean_policy_flops=mean_policy_flops,
        mean_verifier_flops=mean_verifier_flops,
        mean_verifier_calls=sum(verifier_calls) / len(verifier_calls) if verifier_calls else 0.0,
        wasted_tokens=wasted,
        fallback_graded=fallback,
        prm_sum_by_level=prm_sum_by_level,
    )
