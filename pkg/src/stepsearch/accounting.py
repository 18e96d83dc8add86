"""Token and FLOPs accounting.

Role counters hold generated tokens only. Prompt-side tokens, wasted tokens
from failed attempts and verifier input sizes are tracked in separate
counters, fed by the backends' usage-event hook. The FLOPs estimate is
``2 * params + 2 * layers * tokens * width``, applied verbatim; it is affine
in the token count, so run-level averages can be computed from mean tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .backends import (
    EVENT_PROMPT,
    EVENT_VERIFIER,
    EVENT_WASTED,
    Generation,
    ROLES,
    UsageHook,
)


@dataclass(frozen=True)
class ModelProfile:
    param_count: float
    n_layer: int
    d_model: int

    def __post_init__(self) -> None:
        if self.param_count <= 0 or self.n_layer <= 0 or self.d_model <= 0:
            raise ValueError("model profile values must be positive")


@dataclass
class UsageStats:
    tokens_by_role: dict[str, int] = field(default_factory=lambda: {role: 0 for role in ROLES})
    wasted_tokens: int = 0
    prompt_tokens: int = 0
    verifier_calls: int = 0
    verifier_tokens: int = 0

    @property
    def total_generated(self) -> int:
        return sum(self.tokens_by_role.values())

    def flops(self, profile: ModelProfile) -> float:
        return flops_estimate(profile, self.total_generated)

    def verifier_flops(self, profile: ModelProfile) -> float:
        return flops_estimate(profile, self.verifier_tokens)

    def merge(self, other: "UsageStats") -> None:
        for role, count in other.tokens_by_role.items():
            self.tokens_by_role[role] = self.tokens_by_role.get(role, 0) + count
        self.wasted_tokens += other.wasted_tokens
        self.prompt_tokens += other.prompt_tokens
        self.verifier_calls += other.verifier_calls
        self.verifier_tokens += other.verifier_tokens

    def to_dict(self) -> dict:
        return {
            "tokens_by_role": dict(self.tokens_by_role),
            "wasted_tokens": self.wasted_tokens,
            "prompt_tokens": self.prompt_tokens,
            "verifier_calls": self.verifier_calls,
            "verifier_tokens": self.verifier_tokens,
            "total_generated": self.total_generated,
        }


def flops_estimate(profile: ModelProfile, total_tokens: float) -> float:
    if total_tokens < 0:
        raise ValueError("total_tokens must be >= 0")
    return 2.0 * profile.param_count + 2.0 * profile.n_layer * total_tokens * profile.d_model


def accumulate(usage: UsageStats, generation: Generation, role: str) -> UsageStats:
    """Add a successful generation's tokens to its role counter."""
    if role not in usage.tokens_by_role:
        raise ValueError(f"unknown role {role!r}")
    usage.tokens_by_role[role] += generation.token_count
    return usage


def hook_for(usage: UsageStats | None) -> UsageHook | None:
    """Adapter turning backend usage events into counter updates."""
    if usage is None:
        return None

    def hook(event: str, amount: int) -> None:
        if event == EVENT_WASTED:
            usage.wasted_tokens += amount
        elif event == EVENT_PROMPT:
            usage.prompt_tokens += amount
        elif event == EVENT_VERIFIER:
            usage.verifier_calls += 1
            usage.verifier_tokens += amount

    return hook
