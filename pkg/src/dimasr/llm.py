"""Few-shot LLM baseline: prompt assembly, output parsing, record/replay runs.

The prompt is a system message defining the valence/arousal scales and the
"V#A" output format, followed by labeled exemplars rendered as user/assistant
chat turns, then the unanswered query. Responses are parsed leniently (first
``number#number`` found anywhere) and clipped into [1, 9]; unparseable
responses fall back to the scale midpoint (5.0, 5.0) after retries and are
flagged in the run log.

Transports are pluggable: an OpenAI-style HTTP chat-completions client for
live runs, and a replay transport that serves responses from a previously
recorded transcript so tests and CI never touch the network.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import VAPair, format_va_string

DEFAULT_SYSTEM_PROMPT = """\
You are an expert in sentiment analysis. Your task is to predict Valence and Arousal scores for aspects in sentences.

Definitions:
- Valence: emotional positivity/negativity (1.0 = very negative, 5.0 = neutral, 9.0 = very positive)
- Arousal: emotional intensity/excitement (1.0 = very calm/sluggish, 5.0 = moderate, 9.0 = very excited)

Output format: valence#arousal (e.g., 7.50#6.80)"""

# Default six labeled exemplars used for English runs.
DEFAULT_EXEMPLARS = (
    ("the food was absolutely amazing!!", "food", VAPair(8.50, 8.25)),
    ("but the staff was so horrible to us.", "staff", VAPair(1.33, 8.67)),
    (
        "food was just average... if they lowered the prices just a bit, it would be a bigger draw.",
        "food",
        VAPair(5.00, 5.00),
    ),
    ("i love this macbook.", "macbook", VAPair(7.10, 6.90)),
    ("horrible product.", "product", VAPair(2.60, 5.70)),
    ("it has and does everything it should.", "NULL", VAPair(5.67, 5.50)),
)

_VA_PATTERN = re.compile(r"(-?\d+(?:\.\d+)?)\s*#\s*(-?\d+(?:\.\d+)?)")


class LlmError(RuntimeError):
    pass


class LlmParseError(LlmError):
    pass


@dataclass
class LlmRunConfig:
    base_url: str = ""
    model: str = ""
    temperature: float = 0.1
    max_retries: int = 2
    api_key_env: str = "DIMASR_LLM_API_KEY"
    timeout: float = 60.0
    fallback: VAPair = field(default_factory=lambda: VAPair(5.0, 5.0))

    def __post_init__(self):
        if self.temperature < 0:
            raise LlmError(f"temperature must be >= 0, got {self.temperature}")


def render_query(text: str, aspect: str) -> str:
    return f'Text: "{text}"\nAspect: "{aspect}"'


def build_prompt(instance, exemplars=DEFAULT_EXEMPLARS, system_text: str = DEFAULT_SYSTEM_PROMPT) -> list:
    """Chat message list: system, exemplar user/assistant turns, then the query."""
    messages = [{"role": "system", "content": system_text}]
    for item in exemplars:
        if isinstance(item, tuple):
            text, aspect, gold = item
        else:
            text, aspect, gold = item.text, item.aspect, item.gold
        if gold is None:
            raise LlmError(f"exemplar ({text!r}, {aspect!r}) is missing its gold label")
        messages.append({"role": "user", "content": render_query(text, aspect)})
        messages.append({"role": "assistant", "content": format_va_string(gold)})
    messages.append({"role": "user", "content": render_query(instance.text, instance.aspect)})
    return messages


def sample_exemplars(train_instances, k: int = 6, seed: int = 42):
    """Seeded uniform sample (without replacement) of labeled exemplars."""
    pool = [i for i in train_instances if i.gold is not None]
    if k > len(pool):
        raise LlmError(f"cannot sample {k} exemplars from a pool of {len(pool)}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def parse_llm_output(raw_text: str) -> VAPair:
    """Extract the first V#A pattern, clip both values into [1, 9]."""
    match = _VA_PATTERN.search(raw_text)
    if match is None:
        raise LlmParseError(f"no V#A pattern in response: {raw_text[:120]!r}")
    v = min(max(float(match.group(1)), 1.0), 9.0)
    a = min(max(float(match.group(2)), 1.0), 9.0)
    return VAPair(v, a)


def instance_key(instance) -> str:
    return f"{instance.sentence_id}::{instance.aspect_index}"


class ReplayTransport:
    """Serves raw responses from a recorded transcript file; no network."""

    def __init__(self, transcript_path):
        self.responses = {}
        with Path(transcript_path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.responses.setdefault(obj["key"], []).append(obj["response"])
        self._cursor = {}

    def complete(self, key: str, messages, config) -> str:
        attempts = self.responses.get(key)
        if not attempts:
            raise LlmError(f"transcript has no response for instance {key}")
        i = self._cursor.get(key, 0)
        self._cursor[key] = i + 1
        return attempts[min(i, len(attempts) - 1)]


class HttpChatTransport:
    """OpenAI-style /chat/completions client. Credential via environment."""

    def __init__(self, config: LlmRunConfig):
        if not config.base_url:
            raise LlmError("live runs require a base_url in the LLM config")
        api_key = os.environ.get(config.api_key_env)
        if not api_key:
            raise LlmError(
                f"environment variable {config.api_key_env} is not set; "
                "it must hold the API credential for live runs"
            )
        self.api_key = api_key

    def complete(self, key: str, messages, config: LlmRunConfig) -> str:
        import requests

        resp = requests.post(
            config.base_url.rstrip("/") + "/chat/completions",
            headers={"Authorization": f"Bearer {self.api_key}"},
            json={
                "model": config.model,
                "messages": messages,
                "temperature": config.temperature,
            },
            timeout=config.timeout,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


def run_baseline(
    instances: Sequence,
    config: LlmRunConfig,
    transport,
    exemplars=DEFAULT_EXEMPLARS,
    system_text: str = DEFAULT_SYSTEM_PROMPT,
    transcript_out: Optional[object] = None,
):
    """One prediction per instance, in input order. Returns (pairs, log records).

    Parse/transport failures are retried up to config.max_retries, then the
    fallback pair is recorded with status "fallback". The full transcript is
    written to `transcript_out` (a path) when given, enabling later replay.
    """
    predictions = []
    log = []
    for instance in instances:
        key = instance_key(instance)
        messages = build_prompt(instance, exemplars, system_text)
        pair = None
        raw = None
        status = "fallback"
        for _ in range(config.max_retries + 1):
            try:
                raw = transport.complete(key, messages, config)
                pair = parse_llm_output(raw)
                status = "ok"
                break
            except (LlmParseError, LlmError) as exc:
                raw = raw if raw is not None else f"<transport error: {exc}>"
        if pair is None:
            pair = config.fallback
        predictions.append(pair)
        log.append(
            {
                "key": key,
                "messages": messages,
                "response": raw,
                "parsed": format_va_string(pair),
                "status": status,
            }
        )
    n_fallback = sum(1 for r in log if r["status"] != "ok")
    if instances and n_fallback == len(instances):
        raise LlmError(f"all {n_fallback} requests failed; see run log")
    if transcript_out is not None:
        with Path(transcript_out).open("w", encoding="utf-8") as fh:
            for record in log:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return predictions, log
