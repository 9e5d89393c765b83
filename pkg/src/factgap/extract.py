"""Parse model answer text into normalized numeric values.

Money extraction normalizes everything to millions of USD. A number counts
as monetary only when it carries a currency marker ($, US$, USD), a
magnitude word (thousand/million/billion/trillion), or the word "dollars";
bare numbers are never money, which keeps years out of revenue answers.
Quantities marked with a non-USD currency are skipped entirely.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ExtractionError

# number with optional thousands separators and decimals (no sign; the sign
# is captured separately so range separators never swallow it)
_NUM = r"\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?"

_MONEY_RE = re.compile(
    rf"""
    (?P<sign>-\s?)?
    (?P<currency>\$|(?<![a-z])us\$|(?<![a-z])usd(?![a-z]))?\s*
    (?P<number>{_NUM})
    (?P<range>\s?(?:-|–|—|~|to\s)\s?(?:{_NUM}))?
    (?:\s*(?P<magnitude>thousand|million|billion|trillion)s?\b)?
    (?:\s*(?:u\.?s\.?\s)?(?P<dollars>dollars?)\b)?
    """,
    re.IGNORECASE | re.VERBOSE,
)

# scales are exact powers of ten applied with a single correctly-rounded
# float op, so "$v million" round-trips to v bit-exactly and
# extract("$n billion") == 1000 * extract("$n million") for every n
_FOREIGN_SYMBOLS = "€£¥₩₹₽"
_FOREIGN_CODES = ("eur", "gbp", "jpy", "cny", "chf", "aud", "cad", "inr", "krw", "rmb")

_RECO_RE = re.compile(r"\b(buy|sell|dnk)\b", re.IGNORECASE)

# season strings like 1995–96 or 2020/21: a 1900–2099 year joined to a 2- or
# 4-digit number by season punctuation; masked before plain-number extraction
_SEASON_RE = re.compile(r"\b(?:19|20)\d{2}\s?[-–—/]\s?\d{2,4}\b|\b\d{2,4}\s?[-–—/]\s?(?:19|20)\d{2}\b")

_PLAIN_NUM_RE = re.compile(rf"(?P<sign>-)?(?P<number>{_NUM})")

# diagnostic only: refusal is defined extensionally (no monetary quantity),
# but these phrases help when auditing raw model output
REFUSAL_PHRASES = (
    "i don't have access",
    "i do not have access",
    "i cannot provide",
    "i can't provide",
    "i do not know",
    "i don't know",
    "no data available",
    "knowledge cutoff",
    "not publicly",
)


@dataclass(frozen=True)
class ExtractedAnswer:
    """Normalized numeric answer for one prompt, or a refusal."""

    prompt_id: str
    value: float | None
    matched_span: tuple[int, int] | None
    refusal: bool

    def __post_init__(self):
        if (self.value is None) != (self.matched_span is None):
            raise ValueError("value and matched_span must be present together")
        if self.refusal and self.value is not None:
            raise ValueError("a refusal cannot carry a value")


@dataclass(frozen=True)
class Recommendation:
    """Stock recommendation label parsed from a model reply."""

    label: str  # BUY, SELL, or DNK


def _preceded_by_foreign_currency(text: str, start: int) -> bool:
    i = start - 1
    while i >= 0 and text[i].isspace():
        i -= 1
    if i < 0:
        return False
    if text[i] in _FOREIGN_SYMBOLS:
        return True
    # a currency code word immediately before the number
    j = i
    while j >= 0 and (text[j].isalpha() or text[j] == "."):
        j -= 1
    word = text[j + 1:i + 1].replace(".", "").lower()
    return word in _FOREIGN_CODES


def _scale_to_millions(value: float, magnitude: str | None) -> float:
    if magnitude == "thousand":
        return value / 1e3
    if magnitude == "million":
        return value
    if magnitude == "billion":
        return value * 1e3
    if magnitude == "trillion":
        return value * 1e6
    # bare "$X" or "X dollars": absolute dollars
    return value / 1e6


def extract_money(raw_text: str, prompt_id: str = "") -> ExtractedAnswer:
    """Find the first monetary quantity and normalize it to millions of USD.

    Returns an absent value (refusal=True) when no monetary quantity exists.
    Ranges take the first endpoint with the shared magnitude, so
    "$1.2–1.4 billion" reads as 1200.
    """
    for m in _MONEY_RE.finditer(raw_text):
        currency = m.group("currency")
        magnitude = m.group("magnitude")
        dollars = m.group("dollars")
        if not (currency or magnitude or dollars):
            continue
        if _preceded_by_foreign_currency(raw_text, m.start()):
            continue
        number = float(m.group("number").replace(",", ""))
        if m.group("sign"):
            number = -number
        value = _scale_to_millions(number, magnitude.lower() if magnitude else None)
        return ExtractedAnswer(prompt_id=prompt_id, value=value,
                               matched_span=(m.start(), m.end()), refusal=False)
    return ExtractedAnswer(prompt_id=prompt_id, value=None, matched_span=None, refusal=True)


def detect_refusal(raw_text: str) -> bool:
    """True iff the text contains no monetary quantity."""
    return extract_money(raw_text).value is None


def matched_refusal_phrases(raw_text: str) -> list[str]:
    """Diagnostic: which known refusal phrases appear in the text."""
    lowered = raw_text.lower()
    return [p for p in REFUSAL_PHRASES if p in lowered]


def parse_recommendation(raw_text: str) -> Recommendation:
    """Parse the first BUY/SELL/DNK token, case-insensitive, earliest wins."""
    m = _RECO_RE.search(raw_text)
    if m is None:
        raise ExtractionError(f"no BUY/SELL/DNK token in reply: {raw_text[:80]!r}")
    return Recommendation(label=m.group(1).upper())


def _mask_seasons(text: str) -> str:
    return _SEASON_RE.sub(lambda m: " " * len(m.group(0)), text)


def extract_plain_number(raw_text: str, mask_seasons: bool = True) -> float | None:
    """First bare number in the text, no unit scaling.

    Season strings (e.g. "1995–96") are masked first so the points answer,
    not the season label, is captured.
    """
    text = _mask_seasons(raw_text) if mask_seasons else raw_text
    m = _PLAIN_NUM_RE.search(text)
    if m is None:
        return None
    value = float(m.group("number").replace(",", ""))
    return -value if m.group("sign") else value


def extract_points(raw_text: str, prompt_id: str = "") -> ExtractedAnswer:
    """Plain-number extraction with span, for the points-answer pipeline."""
    text = _mask_seasons(raw_text)
    m = _PLAIN_NUM_RE.search(text)
    if m is None:
        return ExtractedAnswer(prompt_id=prompt_id, value=None, matched_span=None, refusal=True)
    value = float(m.group("number").replace(",", ""))
    if m.group("sign"):
        value = -value
    return ExtractedAnswer(prompt_id=prompt_id, value=value,
                           matched_span=(m.start(), m.end()), refusal=False)


def answer_to_dict(ans: ExtractedAnswer) -> dict:
    return {"prompt_id": ans.prompt_id, "value": ans.value,
            "matched_span": list(ans.matched_span) if ans.matched_span else None,
            "refusal": ans.refusal}


def answer_from_dict(record: dict) -> ExtractedAnswer:
    span = record.get("matched_span")
    return ExtractedAnswer(prompt_id=record["prompt_id"],
                           value=record["value"],
                           matched_span=tuple(span) if span else None,
                           refusal=bool(record["refusal"]))
