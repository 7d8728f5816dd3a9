"""Scoring generation records into an evaluation report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..embeddings import fingerprint as _fingerprint
from .metrics import TOKENIZER_VERSION, bleu4, embedding_f1, rouge_l, strip_observed_prefix

METRICS = ("bleu4", "rouge_l", "emb_f1")


@dataclass
class EvalReport:
    per_record: list[dict]
    means: dict[str, float | None]
    scored: int
    excluded: int
    fingerprint: str
    exclusion_reasons: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "tokenizer": TOKENIZER_VERSION,
            "counts": {"scored": self.scored, "excluded": self.excluded},
            "exclusion_reasons": self.exclusion_reasons,
            "means": self.means,
            "records": self.per_record,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["target", "strategy", *METRICS])
        for row in self.per_record:
            writer.writerow([row["target"], row["strategy"], *(repr(row[m]) for m in METRICS)])
        return buf.getvalue()


def evaluate_records(
    records: Sequence,
    token_embedder: Callable[[Sequence[str]], np.ndarray],
) -> EvalReport:
    """Score non-excluded records against their hidden suffixes."""
    per_record, reasons = [], {}
    for rec in records:
        if rec.excluded:
            reasons[rec.reason or "unknown"] = reasons.get(rec.reason or "unknown", 0) + 1
            continue
        cand = strip_observed_prefix(rec.output, rec.prefix)
        per_record.append({
            "target": rec.target,
            "strategy": rec.strategy,
            "bleu4": bleu4(cand, rec.reference),
            "rouge_l": rouge_l(cand, rec.reference),
            "emb_f1": embedding_f1(cand, rec.reference, token_embedder)[2],
        })
    means = {m: (float(np.mean([r[m] for r in per_record])) if per_record else None) for m in METRICS}
    fp = _fingerprint({
        "records": [[r.target, r.plan_key, r.backend_id, r.starting_words] for r in records],
        "tokenizer": TOKENIZER_VERSION,
    })
    excluded = sum(reasons.values())
    return EvalReport(per_record, means, len(per_record), excluded, fp, dict(sorted(reasons.items())))


def boost(ours: EvalReport, baseline: EvalReport) -> dict[str, float | None]:
    """Relative gain of ``ours`` over ``baseline`` per metric mean."""
    out = {}
    for m in METRICS:
        a, b = ours.means.get(m), baseline.means.get(m)
        out[m] = None if a is None or not b else (a - b) / b
    return out


def dump_report(report: EvalReport, json_path, csv_path=None) -> None:
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_csv())
