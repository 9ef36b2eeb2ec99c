import json
import logging
import math
import re
from typing import Any, List, Optional, Tuple

from errors import InvalidCode, InvalidProbability, NoPairsFound
from models import PROBABILITY_TOLERANCE, Activity, PoiClassification, RankedActivity

logger = logging.getLogger(__name__)

# "7: 0.7", "Category 7 (Buy meals): 0.7", "**7**: 70%", "7 = 0.7"
_PAIR_RE = re.compile(
    r"(?<![\w.])(\d{1,4})\**\s*(?:\([^()\n]{0,60}\))?\s*\**\s*[:=]\s*"
    r"(\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)\s*(%)?"
)
_CODE_KEYS = ("code", "category", "activity", "activity_code", "id")
_PROB_KEYS = ("probability", "prob", "p", "score", "confidence")

Pair = Tuple[Any, Any]


def _as_number(value: Any) -> Optional[float]:
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (int, float)):
        try:
            return float(value)
        except OverflowError:
            return None
    if isinstance(value, str):
        text = value.strip().rstrip("%")
        try:
            number = float(text)
        except ValueError:
            return None
        return number / 100.0 if value.strip().endswith("%") else number
    return None


def _pairs_from_items(items: List[Any]) -> List[Pair]:
    pairs = []
    for item in items:
        if not isinstance(item, dict):
            continue
        code = next((item[k] for k in _CODE_KEYS if k in item), None)
        prob = next((item[k] for k in _PROB_KEYS if k in item), None)
        if code is not None and prob is not None:
            pairs.append((code, prob))
    return pairs


def _json_pairs(text: str) -> List[Pair]:
    """Pairs from a JSON reply: {"7": 0.7, ...} or a list of {code, probability}"""
    candidates = []
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        candidates.append(text[start:end + 1])
    start, end = text.find("["), text.rfind("]")
    if 0 <= start < end:
        candidates.append(text[start:end + 1])

    for candidate in candidates:
        try:
            payload = json.loads(candidate)
        except (ValueError, RecursionError):
            continue
        if isinstance(payload, list):
            pairs = _pairs_from_items(payload)
        elif isinstance(payload, dict):
            pairs = [(k, v) for k, v in payload.items() if k.strip().isdigit()]
            if not pairs:
                for value in payload.values():
                    if isinstance(value, list):
                        pairs = _pairs_from_items(value)
                        if pairs:
                            break
        else:
            pairs = []
        if pairs:
            return pairs
    return []


def _regex_pairs(text: str) -> List[Pair]:
    pairs = []
    for match in _PAIR_RE.finditer(text):
        code, prob, percent = match.groups()
        pairs.append((code, f"{prob}%" if percent else prob))
    return pairs


def _to_code(raw: Any) -> Activity:
    number = _as_number(raw)
    if number is None or not math.isfinite(number) or number != int(number):
        raise InvalidCode(f"activity code {raw!r} is not an integer")
    code = int(number)
    if not 1 <= code <= len(Activity):
        raise InvalidCode(f"activity code {code} outside 1..{len(Activity)}")
    return Activity(code)


def _to_probability(raw: Any) -> float:
    number = _as_number(raw)
    if number is None or not 0.0 <= number <= 1.0:
        raise InvalidProbability(f"probability {raw!r} outside [0, 1]")
    return number


def parse_response(text: str, renormalize: bool = False) -> PoiClassification:
    """
    Turn a backend reply into a validated classification.

    Accepts `code: probability` lines (the requested format) and JSON
    replies. At most three distinct codes are kept, in reply order; pairs
    listed out of order are re-sorted descending and flagged `reordered`.

    Raises:
        NoPairsFound: nothing resembling a (code, probability) pair
        InvalidCode: code outside 1..15
        InvalidProbability: probability outside [0, 1], or sum above 1
    """
    if not isinstance(text, str):
        raise NoPairsFound(f"reply is not text: {type(text).__name__}")
    raw_pairs = _json_pairs(text) or _regex_pairs(text)
    if not raw_pairs:
        raise NoPairsFound(f"no code/probability pairs in reply {text[:80]!r}")

    entries: List[Tuple[Activity, float]] = []
    seen = set()
    for raw_code, raw_prob in raw_pairs:
        code = _to_code(raw_code)
        if code in seen:
            continue
        entries.append((code, _to_probability(raw_prob)))
        seen.add(code)
        if len(entries) == 3:
            break

    reordered = any(a[1] < b[1] for a, b in zip(entries, entries[1:]))
    if reordered:
        logger.warning("Reply listed probabilities out of order; re-sorting: %s", entries)
        entries.sort(key=lambda e: e[1], reverse=True)

    total = sum(p for _, p in entries)
    if renormalize and total > 0:
        entries = [(code, p / total) for code, p in entries]
    elif total > 1.0 + PROBABILITY_TOLERANCE:
        raise InvalidProbability(f"probabilities sum to {total:.6f} > 1")

    return PoiClassification(
        top3=[RankedActivity(code=code, probability=p) for code, p in entries],
        raw_response=text,
        reordered=reordered,
    )


def render_classification(classification: PoiClassification) -> str:
    """Canonical `code: probability` reply; parse_response reads it back exactly"""
    return "\n".join(f"{int(e.code)}: {e.probability!r}" for e in classification.top3)
