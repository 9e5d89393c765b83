"""Chat-completion client with deterministic parameters, caching and retries,
plus a seeded mock oracle for offline runs.

Wire protocol: HTTP POST of {model, messages, temperature, max_tokens}; the
reply text is read from choices[0].message.content. The cache key hashes the
endpoint, model, decoding parameters and the full message sequence, so a
repeated request is answered from disk byte-identically. API keys come from
an environment variable only, never from config files, and are never logged.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import requests

from .errors import ConfigError, ProtocolError, TransportError
from .ingest import FactRecord
from .promptgen import Conversation, Message, PromptRecord

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

MOCK_MODEL_NAME = "mock-oracle"
_MOCK_TIMESTAMP = "1970-01-01T00:00:00+00:00"


@dataclass(frozen=True)
class QueryParams:
    model: str
    temperature: float = 0.0
    max_tokens: int = 100
    endpoint: str = ""
    api_key_env: str = "LLM_API_KEY"

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class ModelResponse:
    prompt_id: str
    raw_text: str
    model: str
    finished: bool
    retrieved_from_cache: bool
    timestamp: str

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id, "model": self.model, "raw_text": self.raw_text,
                "finished": self.finished, "retrieved_from_cache": self.retrieved_from_cache,
                "timestamp": self.timestamp}


@dataclass(frozen=True)
class OracleProfile:
    """Test double encoding a planted bias structure.

    Correctness probability is sigmoid(a_const + b_year*(year - base_year) +
    c_cov*covariate). A known-but-wrong (hallucinated) answer is emitted,
    given an incorrect draw, with probability hallucinate_given_known; h_cov
    optionally ties that probability to the covariate on the logit scale.
    """

    a_const: float
    b_year: float
    c_cov: float
    hallucinate_given_known: float
    noise_seed: int
    base_year: int
    h_cov: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.hallucinate_given_known <= 1.0):
            raise ConfigError("hallucinate_given_known must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping) -> "OracleProfile":
        return cls(a_const=float(data["a_const"]), b_year=float(data["b_year"]),
                   c_cov=float(data["c_cov"]),
                   hallucinate_given_known=float(data["hallucinate_given_known"]),
                   noise_seed=int(data["noise_seed"]), base_year=int(data["base_year"]),
                   h_cov=float(data.get("h_cov", 0.0)))


class BatchError(NamedTuple):
    prompt_id: str
    error: str


class BatchResult(NamedTuple):
    responses: list[ModelResponse]  # successes, in input order
    errors: list[BatchError]  # failures, in input order


class ResponseCache:
    """Append-only on-disk store, one JSON file per request hash.

    Writes are atomic (temp file + rename) and serialized; reads need no lock.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, key: str, record: Mapping) -> None:
        with self._write_lock:
            path = self._path(key)
            if path.exists():
                return  # append-only: first write wins
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(dict(record), fh, ensure_ascii=False)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)


def cache_key(params: QueryParams, conversation: Conversation) -> str:
    payload = json.dumps(
        {"endpoint": params.endpoint, "model": params.model,
         "temperature": params.temperature, "max_tokens": params.max_tokens,
         "messages": conversation.to_payload()},
        sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def complete(params: QueryParams, conversation: Conversation, prompt_id: str = "",
             cache: ResponseCache | None = None, max_attempts: int = 5,
             backoff_base: float = 0.5, timeout: float = 60.0,
             session: requests.Session | None = None,
             sleep: Callable[[float], None] = time.sleep) -> ModelResponse:
    """Send one chat completion, honoring the cache and the retry policy.

    Retries transport failures and HTTP 429/5xx with exponential backoff; any
    other HTTP error fails immediately. The endpoint's first choice message
    content is returned verbatim.
    """
    key = cache_key(params, conversation)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return ModelResponse(prompt_id=prompt_id, raw_text=hit["raw_text"],
                                 model=hit.get("model", params.model),
                                 finished=hit.get("finished", True),
                                 retrieved_from_cache=True,
                                 timestamp=hit.get("timestamp", _now()))

    headers = {}
    if params.api_key_env:
        api_key = os.environ.get(params.api_key_env)
        if not api_key:
            raise ConfigError(f"API key environment variable {params.api_key_env!r} is not set")
        headers["Authorization"] = f"Bearer {api_key}"

    body = {"model": params.model, "messages": conversation.to_payload(),
            "temperature": params.temperature, "max_tokens": params.max_tokens}
    post = (session or requests).post

    last_error = ""
    for attempt in range(1, max_attempts + 1):
        try:
            resp = post(params.endpoint, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"transport failure: {exc}"
        else:
            if resp.status_code == 200:
                raw_text, finished = _parse_chat_response(resp)
                record = {"raw_text": raw_text, "model": params.model,
                          "finished": finished, "timestamp": _now()}
                if cache is not None:
                    cache.put(key, record)
                return ModelResponse(prompt_id=prompt_id, raw_text=raw_text,
                                     model=params.model, finished=finished,
                                     retrieved_from_cache=False,
                                     timestamp=record["timestamp"])
            if resp.status_code not in RETRYABLE_STATUS:
                raise TransportError(f"HTTP {resp.status_code} from {params.endpoint}: "
                                     f"{resp.text[:200]}")
            last_error = f"HTTP {resp.status_code}"
        if attempt < max_attempts:
            sleep(backoff_base * (2 ** (attempt - 1)))
    raise TransportError(f"request failed after {max_attempts} attempts: {last_error}")


def _parse_chat_response(resp) -> tuple[str, bool]:
    try:
        data = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"response body is not JSON: {exc}") from None
    try:
        choice = data["choices"][0]
        content = choice["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError(f"response body lacks choices[0].message.content: "
                            f"{json.dumps(data)[:200]}") from None
    if not isinstance(content, str):
        raise ProtocolError(f"message content is not a string: {content!r}")
    finished = choice.get("finish_reason", "stop") != "length"
    return content, finished


def complete_batch(params: QueryParams, prompts: Sequence[PromptRecord], parallelism: int = 4,
                   cache: ResponseCache | None = None, **kwargs) -> BatchResult:
    """Complete one single-user-message conversation per prompt.

    At most `parallelism` requests are in flight; the output order matches
    the input order regardless of completion order, and per-prompt failures
    are recorded while the batch continues.
    """
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
    if not prompts:
        return BatchResult(responses=[], errors=[])
    if params.api_key_env and not os.environ.get(params.api_key_env):
        # fail the whole batch as a config problem before any network call
        raise ConfigError(f"API key environment variable {params.api_key_env!r} is not set")

    def one(prompt: PromptRecord):
        conversation = Conversation((Message("user", prompt.text),))
        return complete(params, conversation, prompt_id=prompt.prompt_id,
                        cache=cache, **kwargs)

    slots: list[ModelResponse | BatchError | None] = [None] * len(prompts)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {pool.submit(one, p): i for i, p in enumerate(prompts)}
        for future, i in futures.items():
            try:
                slots[i] = future.result()
            except Exception as exc:  # per-prompt failure; batch continues
                slots[i] = BatchError(prompt_id=prompts[i].prompt_id, error=str(exc))

    responses = [s for s in slots if isinstance(s, ModelResponse)]
    errors = [s for s in slots if isinstance(s, BatchError)]
    return BatchResult(responses=responses, errors=errors)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _seeded_rng(noise_seed: int, label: str) -> random.Random:
    digest = hashlib.sha256(f"{noise_seed}|{label}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _format_money(value: float) -> str:
    return f"${value:,} million"


def correct_probability(profile: OracleProfile, year: int, covariate: float) -> float:
    return _sigmoid(profile.a_const + profile.b_year * (year - profile.base_year)
                    + profile.c_cov * covariate)


def hallucination_probability(profile: OracleProfile, covariate: float) -> float:
    """P(hallucinated answer | the correct-answer draw failed)."""
    h0 = profile.hallucinate_given_known
    if profile.h_cov == 0.0:
        return h0
    if h0 <= 0.0:
        return 0.0
    if h0 >= 1.0:
        return 1.0
    return _sigmoid(math.log(h0 / (1.0 - h0)) + profile.h_cov * covariate)


def mock_complete(profile: OracleProfile, prompt: PromptRecord, truth: FactRecord,
                  covariate: float, threshold: float = 0.10,
                  style: str = "money") -> ModelResponse:
    """Deterministic offline stand-in for a model endpoint.

    With probability sigmoid(a + b*(year-base_year) + c*covariate) the reply
    renders the true value exactly; otherwise a hallucinated value with
    relative error uniform in [2*threshold, 10*threshold], or a refusal.
    Byte-identical for a given (noise_seed, prompt_id).
    """
    if (truth.entity_id, truth.year) != (prompt.entity_id, prompt.year):
        raise ConfigError(f"truth key {(truth.entity_id, truth.year)} does not match "
                          f"prompt key {(prompt.entity_id, prompt.year)}")
    rng = _seeded_rng(profile.noise_seed, prompt.prompt_id)
    p_correct = correct_probability(profile, truth.year, covariate)

    if rng.random() < p_correct:
        text = _render_answer(truth.entity_name, truth.year, truth.value, style)
    elif rng.random() < hallucination_probability(profile, covariate):
        rel = 2.0 * threshold + rng.random() * 8.0 * threshold
        sign = 1.0 if rng.random() < 0.5 else -1.0
        wrong = truth.value * (1.0 + sign * rel) if truth.value != 0.0 else rel
        text = _render_answer(truth.entity_name, truth.year, wrong, style)
    elif style == "points":
        # plain-number extraction sees every digit, so the refusal text must
        # carry none (entity names may contain digits, e.g. "3M")
        text = "I do not know the final points tally for that season."
    else:
        text = (f"I don't have access to reliable figures for {truth.entity_name} "
                f"in {truth.year}.")
    return ModelResponse(prompt_id=prompt.prompt_id, raw_text=text, model=MOCK_MODEL_NAME,
                         finished=True, retrieved_from_cache=False, timestamp=_MOCK_TIMESTAMP)


def _render_answer(entity_name: str, year: int, value: float, style: str) -> str:
    if style == "points":
        # digit-free framing: the first number in the reply must be the answer
        return f"They finished that season with {value:g} points."
    return (f"The revenue of {entity_name} in fiscal year {year} was "
            f"{_format_money(value)}.")


def mock_reply(profile: OracleProfile, stage: str, entity_name: str,
               facts_by_year: Mapping[int, float], covariate: float,
               conv_id: str) -> str:
    """Offline stand-in for the three-turn recommendation conversation.

    The recommend turn abstains (DNK) with probability
    1 - sigmoid(a_const + c_cov*covariate), else splits BUY/SELL evenly.
    """
    rng = _seeded_rng(profile.noise_seed, f"{conv_id}|{stage}")
    if stage == "history":
        parts = [f"{year}: {_format_money(facts_by_year[year])}"
                 for year in sorted(facts_by_year)]
        return f"Here are the revenues of {entity_name}: " + "; ".join(parts)
    if stage == "forecast":
        last_year = max(facts_by_year)
        growth = 0.9 + 0.2 * rng.random()
        return _format_money(round(facts_by_year[last_year] * growth, 2))
    if stage == "recommend":
        p_known = _sigmoid(profile.a_const + profile.c_cov * covariate)
        if rng.random() >= p_known:
            return "DNK"
        return "BUY" if rng.random() < 0.5 else "SELL"
    raise ConfigError(f"unknown mock stage {stage!r}")
