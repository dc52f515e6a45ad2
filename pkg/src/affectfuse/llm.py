"""Verbose chat-model responses: prompts, an HTTP client with caching, and
token/latency accounting.

Each example is sent as a single user message (no system message) and only
the first returned choice is kept. Responses are cached in an append-only
JSONL file keyed by a digest of (model, temperature, n_choices, prompt), so
re-running a collection issues requests only for cache misses.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import requests

from .corpus import Example, TaskKind, TaskSpec, task_from_name
from .errors import ApiError, EmptyResponse, TransportError

DEFAULT_MODEL = "gpt-3.5-turbo-0301"

_SENTIMENT_TEMPLATE = (
    'What is your guess for the sentiment of the text "{text}"? '
    "Answer positive or negative, but not neutral. "
    "Try to narrow down the answer to be one of those two. "
    "It does not have to be fully correct. "
    "Explain your answer briefly. "
    "Do not show any warning after."
)

_SUICIDE_TEMPLATE = (
    'What is your guess, is a person saying the text "{text}" has suicide tendencies? '
    "Answer yes or no. "
    "It does not have to be fully correct. "
    "Explain your answer briefly. "
    "Do not show any warning after."
)

_PERSONALITY_TEMPLATE = (
    'What is your guess for the personality trait "{trait}", '
    "from the big-five personality traits, "
    'of someone who said "{text}"? '
    "Answer low or high, but not neutral. "
    "Try to narrow down the answer to low or high. "
    "It does not have to be fully correct. "
    "Explain your answer briefly. "
    "Do not show any warning after."
)

# Token cost of each prompt template with an empty input text, excluding the
# fixed 8-token per-call overhead.
PROMPT_BASE_TOKENS = {
    TaskKind.SENTIMENT: 63,
    TaskKind.SUICIDE: 50,
    TaskKind.PERSONALITY: 75,
}

API_KEY_ENV = "AFFECTFUSE_API_KEY"

_BACKOFF_BASE_SECONDS = 1.0
_BACKOFF_CAP_SECONDS = 60.0


def build_prompt(task: TaskSpec, text: str) -> str:
    """Render the task's prompt template with the example text substituted."""
    if task.kind is TaskKind.SENTIMENT:
        return _SENTIMENT_TEMPLATE.replace("{text}", text)
    if task.kind is TaskKind.SUICIDE:
        return _SUICIDE_TEMPLATE.replace("{text}", text)
    return _PERSONALITY_TEMPLATE.replace("{trait}", task.trait_name).replace(
        "{text}", text
    )


@dataclass(frozen=True)
class ChatParams:
    model: str = DEFAULT_MODEL
    temperature: float = 1.0
    n_choices: int = 1
    endpoint_url: str = "https://api.openai.com/v1"
    timeout: float = 60.0
    max_retries: int = 5

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_choices < 1:
            raise ValueError("n_choices must be >= 1")


def params_digest(params: ChatParams) -> str:
    payload = json.dumps(
        {
            "model": params.model,
            "temperature": params.temperature,
            "n_choices": params.n_choices,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _key(digest: str, prompt: str) -> str:
    payload = json.dumps([digest, prompt])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def cache_key(params: ChatParams, prompt: str) -> str:
    """Stable digest of (model, temperature, n_choices, prompt)."""
    return _key(params_digest(params), prompt)


def record_key(record: "ChatRecord") -> str:
    """A record's cache key, recomputed from its own fields."""
    return _key(record.params_digest, record.prompt)


@dataclass(frozen=True)
class ChatRecord:
    example_id: str
    task: TaskSpec
    prompt: str
    response: str
    prompt_tokens: int
    completion_tokens: int
    created_at: float
    params_digest: str

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "task": self.task.name,
            "prompt": self.prompt,
            "response": self.response,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "created_at": self.created_at,
            "params_digest": self.params_digest,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChatRecord":
        return cls(
            example_id=obj["example_id"],
            task=task_from_name(obj["task"]),
            prompt=obj["prompt"],
            response=obj["response"],
            prompt_tokens=int(obj["prompt_tokens"]),
            completion_tokens=int(obj["completion_tokens"]),
            created_at=float(obj["created_at"]),
            params_digest=obj["params_digest"],
        )


@dataclass(frozen=True)
class TokenEstimate:
    prompt_base_tokens: int
    text_tokens: int
    overhead_tokens: int = 8

    @property
    def total(self) -> int:
        return self.prompt_base_tokens + self.text_tokens + self.overhead_tokens


def _chars_to_tokens(n_chars: int) -> int:
    # ceil(n / 4.3) in exact integer arithmetic: 4.3 chars per token.
    return -((-10 * n_chars) // 43)


def estimate_tokens(task: TaskSpec, text: str, response: str | None = None) -> TokenEstimate:
    """Estimate a call's token count from character lengths."""
    text_tokens = _chars_to_tokens(len(text))
    if response is not None:
        text_tokens += _chars_to_tokens(len(response))
    return TokenEstimate(
        prompt_base_tokens=PROMPT_BASE_TOKENS[task.kind],
        text_tokens=text_tokens,
    )


def estimate_latency_seconds(total_tokens: int) -> float:
    """Expected seconds for a call processing the given total token count."""
    return 0.038 * total_tokens + 1.32


class CacheStore:
    """Append-only JSONL response cache with an in-memory index.

    Writes are serialized by a lock so concurrent collectors can share one
    store. `compact` rewrites the file keeping the newest record per key.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._index: dict[str, ChatRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = ChatRecord.from_json(json.loads(line))
                    self._index[record_key(record)] = record

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> ChatRecord | None:
        with self._lock:
            return self._index.get(key)

    def put(self, record: ChatRecord) -> None:
        with self._lock:
            self._index[record_key(record)] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_json()) + "\n")

    def compact(self) -> int:
        """Rewrite the backing file without superseded entries; returns lines dropped."""
        if self.path is None or not self.path.exists():
            return 0
        with self._lock:
            n_lines = sum(1 for line in open(self.path, encoding="utf-8") if line.strip())
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for record in self._index.values():
                    fh.write(json.dumps(record.to_json()) + "\n")
            tmp.replace(self.path)
            return n_lines - len(self._index)


class HttpTransport:
    """Chat-completions client for any OpenAI-compatible endpoint."""

    def __init__(self, session: requests.Session | None = None):
        self.session = session or requests.Session()

    def send(self, params: ChatParams, prompt: str) -> tuple[str, int | None, int | None]:
        url = params.endpoint_url.rstrip("/") + "/chat/completions"
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": params.model,
            "temperature": params.temperature,
            "n": params.n_choices,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = self.session.post(url, json=body, headers=headers, timeout=params.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if not 200 <= resp.status_code < 300:
            raise ApiError(resp.status_code, body=resp.text)
        data = resp.json()
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ApiError(resp.status_code, body=resp.text) from exc
        usage = data.get("usage") or {}
        return content, usage.get("prompt_tokens"), usage.get("completion_tokens")


class MockTransport:
    """In-memory transport: canned or generated responses, with a call counter."""

    def __init__(
        self,
        responder=None,
        canned: list[str] | None = None,
        fail_first: int = 0,
        fail_status: int = 500,
    ):
        self.responder = responder
        self.canned = list(canned) if canned else []
        self.fail_first = fail_first
        self.fail_status = fail_status
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, params: ChatParams, prompt: str) -> tuple[str, int | None, int | None]:
        with self._lock:
            self.calls += 1
            call_no = self.calls
        if call_no <= self.fail_first:
            raise ApiError(self.fail_status, body="mock failure")
        if self.responder is not None:
            return self.responder(prompt), None, None
        if self.canned:
            return self.canned[(call_no - 1) % len(self.canned)], None, None
        return "Mock response.", None, None


class CountingTransport:
    """Wrap any transport and count how many sends actually happen."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, params: ChatParams, prompt: str):
        with self._lock:
            self.calls += 1
        return self.inner.send(params, prompt)


class TokenBucket:
    """Simple token-bucket rate limiter (requests per second)."""

    def __init__(self, rate: float, capacity: float | None = None, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()
        self._sleep = sleep

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def _is_retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportError):
        return True
    if isinstance(exc, ApiError):
        return exc.status == 429 or exc.status >= 500
    return False


def _request_with_retries(transport, params: ChatParams, prompt: str, sleep, rng):
    attempts = params.max_retries + 1
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return transport.send(params, prompt)
        except (TransportError, ApiError) as exc:
            if not _is_retryable(exc):
                raise
            last = exc
            if attempt + 1 < attempts:
                # Exponential backoff with full jitter.
                cap = min(_BACKOFF_CAP_SECONDS, _BACKOFF_BASE_SECONDS * 2**attempt)
                sleep(rng.uniform(0.0, cap))
    raise TransportError(
        f"request failed after {params.max_retries} retries: {last}"
    ) from last


def collect(
    examples: list[Example],
    task: TaskSpec,
    params: ChatParams,
    cache: CacheStore,
    transport=None,
    *,
    concurrency: int = 4,
    rate_limit: float | None = None,
    sleep=time.sleep,
    rng: random.Random | None = None,
) -> list[ChatRecord]:
    """Return one ChatRecord per example, querying the endpoint only on cache misses."""
    if transport is None:
        transport = HttpTransport()
    rng = rng or random.Random()
    digest = params_digest(params)
    bucket = TokenBucket(rate_limit, sleep=sleep) if rate_limit else None

    prompts = [build_prompt(task, e.text) for e in examples]
    keys = [cache_key(params, p) for p in prompts]
    records: list[ChatRecord | None] = [cache.get(k) for k in keys]
    misses = [i for i, r in enumerate(records) if r is None]

    def fetch(i: int) -> ChatRecord:
        if bucket is not None:
            bucket.acquire()
        content, p_tokens, c_tokens = _request_with_retries(
            transport, params, prompts[i], sleep, rng
        )
        if not content or not content.strip():
            raise EmptyResponse(f"empty response for example {examples[i].id}")
        if p_tokens is None:
            p_tokens = estimate_tokens(task, examples[i].text).total
        if c_tokens is None:
            c_tokens = _chars_to_tokens(len(content))
        record = ChatRecord(
            example_id=examples[i].id,
            task=task,
            prompt=prompts[i],
            response=content,
            prompt_tokens=int(p_tokens),
            completion_tokens=int(c_tokens),
            created_at=time.time(),
            params_digest=digest,
        )
        cache.put(record)
        return record

    if misses:
        if concurrency > 1 and len(misses) > 1:
            with ThreadPoolExecutor(max_workers=min(concurrency, len(misses))) as pool:
                for i, record in zip(misses, pool.map(fetch, misses)):
                    records[i] = record
        else:
            for i in misses:
                records[i] = fetch(i)
    return [r for r in records if r is not None]


# -- deterministic mock responder -----------------------------------------
#
# Used by mock-mode pipeline runs to produce verbose answers that correlate
# with cue words in the input text, so downstream models have signal to learn
# and the keyword baseline sees realistic (including excludable) responses.

POSITIVE_CUES = ("love", "great", "happy", "wonderful", "enjoyed", "fantastic", "amazing")
NEGATIVE_CUES = ("hate", "awful", "sad", "terrible", "boring", "horrible", "miserable")
DISTRESS_CUES = ("hopeless", "worthless", "unbearable", "trapped", "numb", "empty")

TRAIT_CUES = {
    "Openness to experience": (("curious", "imaginative", "creative"), ("routine", "conventional", "predictable")),
    "Conscientiousness": (("organized", "punctual", "thorough"), ("messy", "careless", "scattered")),
    "Extraversion": (("outgoing", "talkative", "energetic"), ("quiet", "reserved", "shy")),
    "Agreeableness": (("kind", "warm", "supportive"), ("blunt", "critical", "stubborn")),
    "Neuroticism": (("anxious", "worried", "tense"), ("calm", "relaxed", "steady")),
}

_QUOTED = re.compile(r'"([^"]*)"')


def _stable_bucket(text: str, n: int) -> int:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % n


def heuristic_responder(prompt: str) -> str:
    """Deterministic verbose reply keyed on cue words in the prompted text.

    Roughly one response in ten contains both answer keywords or neither,
    mirroring responses a keyword baseline has to exclude.
    """
    quoted = _QUOTED.findall(prompt)
    if prompt.startswith("What is your guess for the personality trait"):
        trait, text = quoted[0], quoted[1] if len(quoted) > 1 else ""
        high, low = TRAIT_CUES.get(trait, ((), ()))
        bucket = _stable_bucket(text + trait, 20)
        if bucket == 0:
            return "It is difficult to judge this trait from such a short statement."
        if bucket == 1:
            return "The statement mixes high and low signals for this trait, though it leans slightly one way."
        words = set(text.lower().split())
        if words & set(high):
            return (
                f"My guess is high. The speaker's wording suggests a high degree of {trait.lower()}, "
                "given the self-description they chose."
            )
        if words & set(low):
            return (
                f"My guess is low. The phrasing points to a low level of {trait.lower()}, "
                "based on how the speaker presents themselves."
            )
        guess = "high" if _stable_bucket(text, 2) == 0 else "low"
        return f"My guess is {guess}. There is little to go on, but the tone slightly suggests {guess} {trait.lower()}."

    if prompt.startswith("What is your guess, is a person saying the text"):
        text = quoted[0] if quoted else ""
        bucket = _stable_bucket(text, 20)
        if bucket == 0:
            return "It is hard to tell from this message alone."
        if bucket == 1:
            return "Yes and no signals are mixed here; the message is ambiguous."
        words = set(text.lower().split())
        if words & set(DISTRESS_CUES):
            return (
                "Yes. The wording expresses distress and hopelessness, which can indicate "
                "suicidal thinking, so my guess is yes."
            )
        return "No. The message reads like everyday conversation without signs of crisis, so my guess is no."

    text = quoted[0] if quoted else ""
    bucket = _stable_bucket(text, 20)
    if bucket == 0:
        return "The sentiment of this text is unclear to me."
    if bucket == 1:
        return "The text carries both positive and negative notes, so the sentiment is mixed."
    words = set(text.lower().split())
    if words & set(POSITIVE_CUES):
        return (
            "My guess is positive. The wording sounds warm and enthusiastic, which points "
            "to a positive sentiment overall."
        )
    if words & set(NEGATIVE_CUES):
        return (
            "My guess is negative. The language carries frustration and disappointment, "
            "which points to a negative sentiment."
        )
    guess = "positive" if _stable_bucket(text, 2) == 0 else "negative"
    return f"My guess is {guess}. The text is short, but its tone reads slightly {guess} to me."


def mock_params(params: ChatParams | None = None) -> ChatParams:
    """Params for mock collection; endpoint is never contacted."""
    base = params or ChatParams()
    return replace(base, endpoint_url="mock://local")
