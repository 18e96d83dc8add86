#!/usr/bin/env python3
"""Regenerate the bundled mock fixture (10 questions, 4 paths x 4 samples).

Writes src/stepsearch/fixtures/questions10.jsonl and mock_script.jsonl.
Deterministic: rerunning produces byte-identical files. The script stays
deliberately blind to engine selection logic; it only guarantees that every
expansion has four scripted candidates, that depth-2 candidates are terminal,
and that every candidate step text has a scripted verifier score.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "stepsearch" / "fixtures"

N_PATHS = 4
N_SAMPLES = 4
DEPTHS = 3

QUESTIONS = [
    # (id, question, gold, kind, level, subject, options, answer plan)
    ("q01", "Convert the binary number 10101001110 to base eight.", "2516_8", "math_boxed", 3, "number theory", None, "gold"),
    ("q02", "What is 6 * 7?", "42", "math_boxed", 1, "arithmetic", None, "gold"),
    ("q03", "Solve for x: 2x + 6 = 20.", "7", "math_boxed", 1, "algebra", None, "gold"),
    ("q04", "What is the sum of the first 10 positive integers?", "55", "math_boxed", 2, "arithmetic", None, "mixed"),
    ("q05", "Compute the greatest common divisor of 252 and 105.", "21", "math_boxed", 2, "number theory", None, "gold"),
    ("q06", "A fair die is rolled twice; what is the probability both rolls are even?", "1/4", "math_boxed", 4, "probability", None, "wrong"),
    ("q07", "Evaluate the integral of 2x from 0 to 3.", "9", "math_boxed", 3, "calculus", None, "gold"),
    ("q08", "How many primes are strictly between 10 and 30?", "6", "math_boxed", 5, "number theory", None, "sparse"),
    ("q09", "Which gas makes up most of Earth's atmosphere?", "B", "multiple_choice_letter", 2, "chemistry",
     {"A": "Oxygen", "B": "Nitrogen", "C": "Carbon dioxide", "D": "Argon"}, "gold"),
    ("q10", "Which planet has the strongest surface gravity?", "C", "multiple_choice_letter", 4, "physics",
     {"A": "Mars", "B": "Venus", "C": "Jupiter", "D": "Mercury"}, "mixed"),
]

_STEP_PHRASES = [
    "restate the given quantities and what is asked",
    "set up the relation between the knowns",
    "simplify the intermediate expression",
    "check the partial result against the constraints",
    "carry the computation one stage further",
    "eliminate the inconsistent branch",
]


def wrong_answer(gold: str, kind: str, rng: random.Random) -> str:
    if kind == "multiple_choice_letter":
        return rng.choice([c for c in "ABCD" if c != gold])
    return f"{gold}0" if not gold[-1].isdigit() else gold[:-1] + ("9" if gold[-1] != "9" else "8")


def terminal_answer(plan: str, gold: str, kind: str, path: int, sample: int, rng: random.Random) -> str | None:
    """None means an end-of-sequence without any boxed answer (missing)."""
    if plan == "gold":
        return gold
    if plan == "wrong":
        return wrong_answer(gold, kind, rng)
    if plan == "mixed":
        return gold if (path + sample) % 2 == 0 else wrong_answer(gold, kind, rng)
    if plan == "sparse":
        if sample == 0:
            return None
        return gold if path % 2 == 0 else wrong_answer(gold, kind, rng)
    raise ValueError(plan)


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    with (FIXTURES / "questions10.jsonl").open("w", encoding="utf-8") as fh:
        for qid, question, gold, kind, level, subject, options, _plan in QUESTIONS:
            record = {
                "id": qid,
                "question": question,
                "gold_answer": gold,
                "kind": kind,
                "level": level,
                "subject": subject,
            }
            if options:
                record["options"] = options
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    lines: list[dict] = [
        {"backend": "options", "strict": False, "terminator": "<eos>"},
        {"backend": "policy_default", "role": "critique",
         "text": "The weak step slips in one intermediate quantity; recompute that quantity carefully."},
        {"backend": "policy_default", "role": "rewrite",
         "text": "Recomputing the doubtful quantity and carrying it through gives a consistent value."},
        {"backend": "policy_default", "role": "solution",
         "text": "Working through the problem in one pass, the answer is boxed{0}.<eos>"},
        {"backend": "verifier_default", "score": 0.5},
    ]

    verifier_seen: set[str] = set()
    expansion = 0
    for qi, (qid, _question, gold, kind, _level, _subject, _options, plan) in enumerate(QUESTIONS):
        for path in range(N_PATHS):
            for depth in range(DEPTHS):
                for sample in range(N_SAMPLES):
                    rng = random.Random(f"{qid}:{path}:{depth}:{sample}")
                    terminal = depth == DEPTHS - 1
                    if terminal:
                        answer = terminal_answer(plan, gold, kind, path, sample, rng)
                        if answer is None:
                            clean = f"{qid} path {path}: the remaining casework is inconclusive."
                            raw = clean + "<eos>"
                        else:
                            clean = (f"{qid} path {path} variant {sample}: combining the stages, "
                                     f"the answer is boxed{{{answer}}}.")
                            raw = clean + "<eos>"
                    else:
                        # Path 1+ repeats path 0's first sample at depth 0 so the
                        # shared tree actually revisits nodes.
                        src_path = 0 if (depth == 0 and sample == 0) else path
                        phrase = _STEP_PHRASES[(qi + src_path + depth + sample) % len(_STEP_PHRASES)]
                        clean = f"{qid} path {src_path} stage {depth} option {sample}: {phrase}."
                        raw = clean + "\n\n(continued)"

                    entry = {
                        "backend": "policy",
                        "role": "step",
                        "step_index": expansion,
                        "sample_index": sample,
                        "text": raw,
                        "mean_logprob": round(-0.2 - 0.15 * sample - rng.random() * 0.1, 4),
                    }
                    # One scripted transient failure exercises wasted-token accounting.
                    if qid == "q02" and path == 0 and depth == 0 and sample == 0:
                        entry["fail_times"] = 1
                        entry["fail_tokens"] = 50
                    lines.append(entry)

                    if clean not in verifier_seen:
                        verifier_seen.add(clean)
                        if terminal:
                            score = round(0.55 + rng.random() * 0.42, 4)
                        elif sample == (path + depth) % N_SAMPLES:
                            score = round(0.9 + rng.random() * 0.08, 4)
                        else:
                            score = round(0.25 + rng.random() * 0.6, 4)
                        lines.append({"backend": "verifier", "step": clean, "score": score})
                expansion += 1

    with (FIXTURES / "mock_script.jsonl").open("w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"wrote {FIXTURES / 'questions10.jsonl'} and {FIXTURES / 'mock_script.jsonl'} "
          f"({len(lines)} script lines)")


if __name__ == "__main__":
    main()
