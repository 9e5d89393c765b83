"""Render prompt datasets from templates and apply the sampling schemes.

Prompt IDs are content-addressed (a short hash of template_id, entity_id and
year), so regenerating a dataset is idempotent and cache keys stay stable.
The stratified sampler draws without replacement from each (year, bucket)
cell with a PCG64 generator seeded once per call; cells are visited in
sorted order and candidates sorted by (entity_id, year), which makes the
selection a pure function of (inputs, seed) across runs and machines.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ProtocolError, TemplateError
from .ingest import FactRecord

REVENUE_TEMPLATE = "What was the revenue of {company_name} in financial year {financial_year}?"
SOCCER_TEMPLATE = "In the {year} {league} season, how many points did {team} finish with?"

TEMPLATES = {
    "revenue": REVENUE_TEMPLATE,
    "soccer": SOCCER_TEMPLATE,
}

_SLOT_RE = re.compile(r"\{(\w+)\}")

ROLES = ("system", "user", "assistant")

COT_STAGES = ("history", "forecast", "recommend")

_COT_FORGET = "Forget all your previous instructions."
_COT_HISTORY = ("What are the revenues of {company} for each finance year from "
                "{start_year} to {end_year}? Please return the revenue only.")
_COT_FORECAST = ("Based on the revenue information above, please predict the revenue "
                 "of {company} in finance year {forecast_year}. Please return the revenue only.")
_COT_EXPERT = "Act as a financial expert with experience in stock recommendations."
_COT_RECOMMEND = ("Based on the information above, give either BUY, SELL, or DNK "
                  "(do not have enough knowledge of the company) recommendation for "
                  "{company} in finance year {recommend_year}.")


@dataclass(frozen=True)
class PromptRecord:
    prompt_id: str
    entity_id: str
    year: int
    text: str
    template_id: str


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ProtocolError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Conversation:
    """Ordered role-tagged messages; never two assistant turns in a row."""

    messages: tuple[Message, ...] = ()

    def __post_init__(self):
        for a, b in zip(self.messages, self.messages[1:]):
            if a.role == "assistant" and b.role == "assistant":
                raise ProtocolError("two consecutive assistant messages")

    def extended(self, *messages: Message) -> "Conversation":
        return Conversation(self.messages + tuple(messages))

    def with_assistant(self, content: str) -> "Conversation":
        return self.extended(Message("assistant", content))

    def count_role(self, role: str) -> int:
        return sum(1 for m in self.messages if m.role == role)

    @property
    def last_role(self) -> str | None:
        return self.messages[-1].role if self.messages else None

    def to_payload(self) -> list[dict]:
        return [{"role": m.role, "content": m.content} for m in self.messages]

    @classmethod
    def from_payload(cls, payload: Iterable[Mapping]) -> "Conversation":
        return cls(tuple(Message(m["role"], m["content"]) for m in payload))


def prompt_id_for(template_id: str, entity_id: str, year: int) -> str:
    digest = hashlib.sha256(f"{template_id}|{entity_id}|{year}".encode("utf-8")).hexdigest()
    return digest[:16]


def render_prompt(template: str, entity_name: str, year: int, league: str | None = None,
                  extra: Mapping[str, object] | None = None) -> str:
    """Fill every named slot; entity and year slots accept their aliases."""
    bindings: dict[str, object] = {
        "company_name": entity_name,
        "team": entity_name,
        "entity": entity_name,
        "year": year,
        "season": year,
        "financial_year": year,
    }
    if league is not None:
        bindings["league"] = league
    if extra:
        bindings.update(extra)

    def fill(match: re.Match) -> str:
        slot = match.group(1)
        if slot not in bindings:
            raise TemplateError(f"unresolved template slot {{{slot}}}")
        return str(bindings[slot])

    text = _SLOT_RE.sub(fill, template)
    if _SLOT_RE.search(text):
        raise TemplateError(f"slot markers remain after rendering: {text!r}")
    return text


def build_dataset(facts: Sequence[FactRecord], template: str, template_id: str = "revenue",
                  extra_by_key: Mapping[tuple[str, int], Mapping[str, object]] | None = None,
                  ) -> list[PromptRecord]:
    """One prompt per fact, in fact order, with content-addressed IDs."""
    prompts = []
    for fact in facts:
        extra = extra_by_key.get((fact.entity_id, fact.year)) if extra_by_key else None
        text = render_prompt(template, fact.entity_name, fact.year, extra=extra)
        prompts.append(PromptRecord(prompt_id=prompt_id_for(template_id, fact.entity_id, fact.year),
                                    entity_id=fact.entity_id, year=fact.year, text=text,
                                    template_id=template_id))
    return prompts


@dataclass
class StratifiedSample:
    records: list[FactRecord]
    shortfalls: dict[tuple[int, str], int] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def sample_stratified(facts_with_buckets: Sequence[tuple[FactRecord, str]], per_cell: int,
                      seed: int) -> StratifiedSample:
    """Uniformly sample min(per_cell, |cell|) records from each (year, bucket) cell.

    Under-full cells are taken whole and reported in `shortfalls` as the
    number of missing records. Deterministic for a given seed.
    """
    if per_cell < 1:
        raise ValueError(f"per_cell must be >= 1, got {per_cell}")
    cells: dict[tuple[int, str], list[FactRecord]] = {}
    for fact, bucket in facts_with_buckets:
        cells.setdefault((fact.year, bucket), []).append(fact)

    rng = np.random.Generator(np.random.PCG64(seed))
    selected: list[FactRecord] = []
    shortfalls: dict[tuple[int, str], int] = {}
    for cell_key in sorted(cells):
        members = sorted(cells[cell_key], key=lambda f: (f.entity_id, f.year))
        if len(members) <= per_cell:
            take = list(range(len(members)))
            if len(members) < per_cell:
                shortfalls[cell_key] = per_cell - len(members)
        else:
            take = sorted(rng.choice(len(members), size=per_cell, replace=False).tolist())
        selected.extend(members[i] for i in take)
    return StratifiedSample(records=selected, shortfalls=shortfalls)


def sample_intersection(facts: Sequence[FactRecord], year_range: tuple[int, int]) -> list[FactRecord]:
    """Keep only entities that have a record for every year in the range."""
    start, end = year_range
    if end < start:
        raise ValueError(f"invalid year range {year_range!r}")
    wanted = set(range(start, end + 1))
    years_by_entity: dict[str, set[int]] = {}
    for fact in facts:
        years_by_entity.setdefault(fact.entity_id, set()).add(fact.year)
    retained = {e for e, years in years_by_entity.items() if wanted <= years}
    out = [f for f in facts if f.entity_id in retained and start <= f.year <= end]
    out.sort(key=lambda f: (f.entity_id, f.year))
    return out


def conversation_id_for(entity_id: str, start_year: int, end_year: int) -> str:
    digest = hashlib.sha256(f"cot|{entity_id}|{start_year}|{end_year}".encode("utf-8")).hexdigest()
    return digest[:16]


def build_cot_conversation(entity_name: str, start_year: int, end_year: int, stage: str,
                           prior: Conversation = Conversation()) -> Conversation:
    """Append the stage's system/user turns for the stock-recommendation flow.

    Stages must be applied in order history -> forecast -> recommend, with the
    model's reply appended to `prior` between stages. The forecast year is
    end_year + 1 and the recommendation year end_year + 2.
    """
    if stage not in COT_STAGES:
        raise ProtocolError(f"unknown stage {stage!r}; expected one of {COT_STAGES}")
    user_turns = prior.count_role("user")
    if stage == "history":
        if prior.messages:
            raise ProtocolError("history stage requires an empty conversation")
        return prior.extended(
            Message("system", _COT_FORGET),
            Message("user", _COT_HISTORY.format(company=entity_name, start_year=start_year,
                                                end_year=end_year)),
        )
    if prior.last_role != "assistant":
        raise ProtocolError(f"stage {stage!r} requires the model's reply to the previous turn")
    if stage == "forecast":
        if user_turns != 1:
            raise ProtocolError("forecast stage must follow exactly the history turn")
        return prior.extended(
            Message("user", _COT_FORECAST.format(company=entity_name,
                                                 forecast_year=end_year + 1)),
        )
    if user_turns != 2:
        raise ProtocolError("recommend stage must follow the history and forecast turns")
    return prior.extended(
        Message("system", _COT_EXPERT),
        Message("user", _COT_RECOMMEND.format(company=entity_name,
                                              recommend_year=end_year + 2)),
    )


def prompts_to_dicts(prompts: Iterable[PromptRecord]) -> list[dict]:
    return [
        {"prompt_id": p.prompt_id, "entity_id": p.entity_id, "year": p.year,
         "text": p.text, "template_id": p.template_id}
        for p in prompts
    ]


def prompts_from_dicts(records: Iterable[Mapping]) -> list[PromptRecord]:
    return [PromptRecord(prompt_id=r["prompt_id"], entity_id=r["entity_id"],
                         year=int(r["year"]), text=r["text"], template_id=r["template_id"])
            for r in records]
