"""Model-completion backends: live HTTP client, deterministic mock, and replay.

All backends implement a single `complete(request)` method and are safe to
call from multiple threads. A persistent append-only transcript cache can
wrap any backend so completed work is never refetched.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests

API_KEY_ENV = "QTRIAGE_API_KEY"


class BackendError(Exception):
    pass


class ConfigError(BackendError):
    pass


class TransportError(BackendError):
    pass


class CacheMissError(BackendError):
    pass


class CacheError(BackendError):
    pass


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float
    max_output_tokens: int
    sample_index: int
    question_id: str
    phase: str  # "divide" | "conquer" | "verify"
    # Simulator-only hints (label remapping, strategy effects); never part
    # of the request key and ignored by the live backend.
    metadata: dict = field(default_factory=dict, compare=False)

    def key(self) -> str:
        return f"{self.question_id}|{self.phase}|{self.sample_index}|{_prompt_hash(self.prompt)}"

    def validate(self) -> None:
        if not (0 <= self.temperature <= 2):
            raise ConfigError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ConfigError("max_output_tokens must be positive")
        if self.sample_index < 0:
            raise ConfigError("sample_index must be non-negative")
        if self.phase not in ("divide", "conquer", "verify"):
            raise ConfigError(f"unknown phase {self.phase!r}")


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    output_tokens: int
    backend_tag: str

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "output_tokens": self.output_tokens,
            "backend_tag": self.backend_tag,
        }

    @staticmethod
    def from_dict(d: dict) -> "Completion":
        return Completion(
            text=d["text"],
            prompt_tokens=int(d["prompt_tokens"]),
            output_tokens=int(d["output_tokens"]),
            backend_tag=d["backend_tag"],
        )


@dataclass(frozen=True)
class QuestionProfile:
    """Simulated answer behaviour for one question (mock backend only)."""

    question_id: str
    answer_distribution: dict[str, float]
    rationale_length_mean: int = 200
    gold: Optional[str] = None

    def validate(self) -> None:
        if not self.answer_distribution:
            raise ConfigError(f"profile {self.question_id}: empty distribution")
        total = sum(self.answer_distribution.values())
        if any(p < 0 or p > 1 for p in self.answer_distribution.values()):
            raise ConfigError(f"profile {self.question_id}: probability outside [0, 1]")
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"profile {self.question_id}: probabilities sum to {total}")
        if self.rationale_length_mean <= 0:
            raise ConfigError(f"profile {self.question_id}: non-positive rationale length")


def load_profiles(path: str | Path) -> dict[str, QuestionProfile]:
    profiles: dict[str, QuestionProfile] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"profile file line {lineno}: invalid JSON: {exc}") from exc
            profile = QuestionProfile(
                question_id=rec["question_id"],
                answer_distribution={k: float(v) for k, v in rec["answer_distribution"].items()},
                rationale_length_mean=int(rec.get("rationale_length_mean", 200)),
                gold=rec.get("gold"),
            )
            profile.validate()
            profiles[profile.question_id] = profile
    return profiles


def save_profiles(path: str | Path, profiles: dict[str, QuestionProfile]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid in sorted(profiles):
            p = profiles[qid]
            rec = {
                "question_id": p.question_id,
                "answer_distribution": p.answer_distribution,
                "rationale_length_mean": p.rationale_length_mean,
            }
            if p.gold is not None:
                rec["gold"] = p.gold
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


class Backend:
    """Interface: one blocking completion per request."""

    tag = "base"

    def complete(self, req: CompletionRequest) -> Completion:
        raise NotImplementedError


_FILLER_WORDS = (
    "consider the given information and work through each part carefully "
    "then compare the remaining possibilities before settling on one"
).split()

_NOISE_ENDING = "i cannot settle on a single option here."


class MockBackend(Backend):
    """Deterministic simulator: draws answers from per-question profiles.

    Every completion is a pure function of (seed, question id, phase,
    sample index, prompt), so reruns and replays are bit-exact regardless
    of scheduling. In noise mode a configurable fraction of completions
    omit the answer sentinel to exercise extraction fallbacks.
    """

    tag = "mock"

    def __init__(
        self,
        profiles: dict[str, QuestionProfile],
        seed: int,
        noise_rate: float = 0.0,
        gold_uplift: float = 1.0,
    ) -> None:
        for p in profiles.values():
            p.validate()
        self.profiles = profiles
        self.seed = seed
        self.noise_rate = noise_rate
        self.gold_uplift = gold_uplift
        self.calls = 0
        self._lock = threading.Lock()

    def _rng(self, req: CompletionRequest) -> random.Random:
        material = f"{self.seed}|{req.key()}".encode("utf-8")
        digest = hashlib.sha256(material).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _effective_distribution(self, profile: QuestionProfile, req: CompletionRequest):
        """Distribution over emitted values after metadata adjustments.

        label_map restricts support to the surviving original labels and
        renames them into the filtered label space; uplift_gold scales the
        gold option's probability (strategy-effect assumption made explicit).
        """
        dist = dict(profile.answer_distribution)
        emit_as = {value: value for value in dist}

        label_map = req.metadata.get("label_map")
        if label_map:
            allowed = {orig for _, orig in label_map}
            rename = {orig: new for new, orig in label_map}
            dist = {k: v for k, v in dist.items() if k in allowed}
            if not dist:
                raise ConfigError(
                    f"profile {profile.question_id}: no probability mass on labels {sorted(allowed)}"
                )
            emit_as = {k: rename[k] for k in dist}

        if req.metadata.get("uplift_gold") and profile.gold in dist:
            dist[profile.gold] *= self.gold_uplift

        total = sum(dist.values())
        dist = {k: v / total for k, v in dist.items()}
        return dist, emit_as

    def _draw(self, dist: dict[str, float], temperature: float, rng: random.Random) -> str:
        items = sorted(dist.items())
        if temperature == 0:
            return max(items, key=lambda kv: kv[1])[0]
        u = rng.random()
        acc = 0.0
        for value, p in items:
            acc += p
            if u < acc:
                return value
        return items[-1][0]

    def _rationale(self, mean_len: int, rng: random.Random) -> str:
        target = max(20, int(-mean_len * math.log(1.0 - rng.random())))
        words = []
        size = 0
        i = rng.randrange(len(_FILLER_WORDS))
        while size < target:
            word = _FILLER_WORDS[(i + len(words)) % len(_FILLER_WORDS)]
            words.append(word)
            size += len(word) + 1
        return " ".join(words)

    def complete(self, req: CompletionRequest) -> Completion:
        req.validate()
        profile = self.profiles.get(req.question_id)
        if profile is None:
            raise ConfigError(f"no simulator profile for question {req.question_id!r}")
        with self._lock:
            self.calls += 1
        rng = self._rng(req)
        dist, emit_as = self._effective_distribution(profile, req)
        drawn = self._draw(dist, req.temperature, rng)
        emitted = emit_as[drawn]

        body = self._rationale(profile.rationale_length_mean, rng)
        if self.noise_rate > 0 and rng.random() < self.noise_rate:
            text = f"{body}\n{_NOISE_ENDING}"
        elif req.phase == "verify":
            # The simulated checker judges the prior answer against gold when
            # known, else against the question's modal answer.
            prior = req.metadata.get("prior_answer")
            reference = profile.gold or max(sorted(dist.items()), key=lambda kv: kv[1])[0]
            verdict = "true" if prior == reference else "false"
            text = f"{body}\nSubstituting back, this is {verdict}."
        elif len(emitted) == 1 and emitted.isupper():
            text = f"{body}\nSo the answer is ({emitted})."
        else:
            text = f"{body}\nSo the answer is {emitted}."

        return Completion(
            text=text,
            prompt_tokens=max(1, len(req.prompt) // 4),
            output_tokens=max(1, len(text) // 4),
            backend_tag=self.tag,
        )


class HttpChatBackend(Backend):
    """Minimal HTTP JSON chat-completion client with retry and backoff."""

    tag = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        backoff_factor: float = 2.0,
        timeout: float = 120.0,
        session: Optional[requests.Session] = None,
    ) -> None:
        if not endpoint:
            raise ConfigError("live backend requires an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigError(f"missing API credential; set {API_KEY_ENV}")
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.backoff_factor = backoff_factor
        self.timeout = timeout
        self.session = session or requests.Session()
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> Completion:
        req.validate()
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._lock:
                    self.calls += 1
                resp = self.session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code in (401, 403):
                    raise ConfigError(f"authentication failed ({resp.status_code})")
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise requests.RequestException(f"retryable status {resp.status_code}")
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                return Completion(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    output_tokens=int(usage.get("completion_tokens", 0)),
                    backend_tag=self.tag,
                )
            except ConfigError:
                raise
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_attempts:
                    delay = self.base_delay * self.backoff_factor ** (attempt - 1)
                    time.sleep(delay * (1.0 + random.random() * 0.25))
        raise TransportError(
            f"request {req.key()} failed after {self.max_attempts} attempts: {last_error}"
        )


class TranscriptCache:
    """Append-only JSONL store of (request key, request, completion).

    The in-memory index is rebuilt on open; writes are serialized and
    flushed immediately so an interrupted run loses at most the entry in
    flight.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, Completion] = {}
        self._order: list[str] = []
        self._requests: dict[str, dict] = {}
        if self.path.exists():
            self._load()
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CacheError(
                        f"{self.path}: corrupted entry at line {lineno}: {exc}"
                    ) from exc
                key = rec.get("key")
                if not key:
                    raise CacheError(f"{self.path}: entry at line {lineno} has no key")
                try:
                    completion = Completion.from_dict(rec["completion"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise CacheError(
                        f"{self.path}: corrupted entry for key {key!r}: {exc}"
                    ) from exc
                if key not in self._index:
                    self._order.append(key)
                self._index[key] = completion
                self._requests[key] = rec.get("request", {})

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> Optional[Completion]:
        return self._index.get(key)

    def put(self, req: CompletionRequest, completion: Completion) -> None:
        key = req.key()
        entry = {
            "key": key,
            "request": {
                "prompt": req.prompt,
                "temperature": req.temperature,
                "max_output_tokens": req.max_output_tokens,
                "sample_index": req.sample_index,
                "question_id": req.question_id,
                "phase": req.phase,
            },
            "completion": completion.to_dict(),
            "timestamp": time.time(),
        }
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            if key not in self._index:
                self._order.append(key)
            self._index[key] = completion
            self._requests[key] = entry["request"]

    def entries(self) -> list[tuple[str, dict, Completion]]:
        """All cached entries in first-write order."""
        return [(k, self._requests[k], self._index[k]) for k in self._order]


class CachingBackend(Backend):
    """Wraps a backend with a TranscriptCache; hits skip the inner backend."""

    def __init__(self, inner: Backend, cache: TranscriptCache) -> None:
        self.inner = inner
        self.cache = cache
        self.tag = inner.tag
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> Completion:
        key = req.key()
        cached = self.cache.get(key)
        if cached is not None:
            with self._lock:
                self.hits += 1
            return cached
        completion = self.inner.complete(req)
        self.cache.put(req, completion)
        with self._lock:
            self.misses += 1
        return completion


class ReplayBackend(Backend):
    """Serves completions solely from a recorded transcript; never fetches."""

    tag = "replay"

    def __init__(self, cache: TranscriptCache) -> None:
        self.cache = cache
        self.hits = 0
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> Completion:
        cached = self.cache.get(req.key())
        if cached is None:
            raise CacheMissError(f"transcript has no entry for key {req.key()!r}")
        with self._lock:
            self.hits += 1
        return cached


def cache_get_or_fetch(
    cache: TranscriptCache, backend: Backend, req: CompletionRequest
) -> Completion:
    cached = cache.get(req.key())
    if cached is not None:
        return cached
    completion = backend.complete(req)
    cache.put(req, completion)
    return completion
