"""Query tagging: prompt rendering, response parsing and tagger clients."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from typing import Sequence

from .core import (
    DEFAULT_MAX_TAGS,
    OTHER,
    CapabilityTaxonomy,
    TagSet,
    validate_tagset,
)
from .errors import InvalidQuery, MissingTags, ParseError, TaggerParseError, TaggerUnavailable

log = logging.getLogger(__name__)

PROMPT_SLOT = "{input prompt}"

CAPABILITY_DEFINITIONS = """\
- Reasoning: Ability to logically analyze information, draw conclusions, and make inferences.
- Comprehension (Applicable to queries involving long passage comprehension): Understanding and interpreting the meaning, context, and nuances of extended or complex long-context text, such as lengthy documents, multi-paragraph inputs, or intricate narratives.
- Instruction Following (Applicable to queries involving several constraints): Accurately adhering to explicit user-provided guidelines, constraints, or formatting requirements specified within the query.
- Agentic: Capacity related to agent-like behavior, such as actively formulating plans, strategically deciding steps, and autonomously identifying solutions or actions to achieve specific goals or complex tasks.
- Knowledge Retrieval: Accessing and presenting accurate factual information from pre-existing knowledge.
- Coding: Generating, interpreting, or debugging computer programs and scripts.
- In-context Learning: Learning from examples or context provided within the current interaction without additional training.
- Multilingual (Must rank it in top3 when queries involving languages other than English): Understanding, generating, or translating content accurately across multiple languages."""

PROMPT_TEMPLATE = (
    "The capabilities of Language Models include the following:\n\n"
    + CAPABILITY_DEFINITIONS
    + """
Given the Query below:

1. Identify and list the *LLM Capabilities* from the definitions above that are directly and significantly required to effectively address the query.
2. Identify and list the general *Knowledge Domains* (e.g., categories, subject areas) most pertinent to solving the problem presented in the query.
List the selected Capabilities first, ranked from most important to least important. Then, list the identified Knowledge Domains, also ranked from most important to least important. *Do not provide any justification or explanation* for your selections or rankings.

Example:
Query: "{Solve the following financial problem efficiently and clearly. Output the final answer as: boxed{answer}.
Where [answer] is just the final number or expression that solves the problem. Keep the answer to five decimal places if it is a number, and do not use percentages; keep the decimal format.
Problem: what is the net change in net revenue during 2016 for Entergy Mississippi, Inc.? the 2015 net revenue of amount (in millions) is 696.3; the 2016 net revenue of amount (in millions) is 705.4; Entergy Mississippi, Inc.}"
Capabilities: Reasoning, Knowledge retrieval
Knowledge: {
1. Financial
2. Math
3. Data Analysis
...
}
Query: {input prompt}
"""
)

FORMAT_REMINDER = (
    "\n\nAnswer strictly in this format and nothing else:\n"
    "Capabilities: <comma-separated capabilities>\n"
    "Knowledge: {\n1. <domain>\n2. <domain>\n}"
)


def render_prompt(query_text: str) -> str:
    if not query_text or not query_text.strip():
        raise InvalidQuery("query text is empty")
    # only the final slot is the live one; the worked example contains braces too
    head, _, tail = PROMPT_TEMPLATE.rpartition(PROMPT_SLOT)
    return head + query_text + tail


_CAP_LINE = re.compile(r"^\W*capabilities\W*:\s*(.*)$", re.I | re.M)
_KNOW_HDR = re.compile(r"^\W*knowledge(?:\s+domains?)?\W*:\s*", re.I | re.M)
_NUMBERED = re.compile(r"(?:^|\s)\d+[.)]\s+")


def _split_items(text: str) -> list[str]:
    text = text.strip().strip("{}").strip()
    if _NUMBERED.search(text):
        parts = [p.strip().split("\n", 1)[0] for p in _NUMBERED.split(text)]
    else:
        parts = re.split(r"[,\n]", text)
    out = []
    for p in parts:
        p = p.strip().strip("{}*-•\"'").strip()
        p = p.rstrip(".,;").strip()
        if p and p not in ("...", "…"):
            out.append(p)
    return out


def parse_tagger_response(
    raw: str, taxonomy: CapabilityTaxonomy = CapabilityTaxonomy(), max_tags: int = DEFAULT_MAX_TAGS
) -> TagSet:
    """Extract the ranked ``Capabilities:`` line and ``Knowledge:`` list."""
    raw = raw or ""
    cap_m = _CAP_LINE.search(raw)
    know_m = _KNOW_HDR.search(raw)
    if cap_m is None and know_m is None:
        raise TaggerParseError("no Capabilities or Knowledge section in tagger response")
    caps: list[str] = []
    if cap_m:
        caps = [c.strip().strip("*_`'\"{}[]").strip() for c in cap_m.group(1).split(",")]
        caps = [c for c in caps if c]
        # parenthetical qualifiers are part of the definitions, not the label
        caps = [re.sub(r"\s*\(.*?\)\s*", "", c).strip().rstrip(".") for c in caps]
    knowledge: list[str] = []
    if know_m:
        body = raw[know_m.end():]
        if cap_m and cap_m.start() > know_m.start():
            body = raw[know_m.end():cap_m.start()]
        if body.lstrip().startswith("{") and "}" in body:
            body = body[: body.index("}") + 1]
        knowledge = _split_items(body)
    return validate_tagset(TagSet(tuple(knowledge), tuple(caps)), taxonomy, max_tags)


@dataclass(frozen=True)
class TagResult:
    tags: TagSet
    tagging_cost: float = 0.0


class TaggerClient:
    def tag(self, query_text: str) -> TagResult:
        raise NotImplementedError


class KeywordStubTagger(TaggerClient):
    """First rule whose regex matches the query wins; no match gives a default tag set."""

    def __init__(self, rules: Sequence[tuple[str, TagSet]], taxonomy: CapabilityTaxonomy = CapabilityTaxonomy()):
        self.taxonomy = taxonomy
        self.rules = [(re.compile(p, re.I), validate_tagset(t, taxonomy)) for p, t in rules]
        self.default = TagSet((OTHER,), (taxonomy.names[0],))

    def tag(self, query_text):
        for pat, tags in self.rules:
            if pat.search(query_text):
                return TagResult(tags, 0.0)
        return TagResult(self.default, 0.0)


def keyword_stub_tagger(rules, taxonomy=CapabilityTaxonomy()) -> KeywordStubTagger:
    return KeywordStubTagger(rules, taxonomy)


class FileTagger(TaggerClient):
    """Replays precomputed tags from a tags file, keyed by query_id."""

    def __init__(self, tags: dict[str, TagSet]):
        self.tags = dict(tags)

    @classmethod
    def from_path(cls, path, taxonomy=CapabilityTaxonomy()):
        from .index import ingest_tags

        with open(path) as fh:
            return cls(ingest_tags(fh, taxonomy))

    def tag(self, query_id):
        try:
            return TagResult(self.tags[query_id], 0.0)
        except KeyError:
            raise MissingTags(f"no tags recorded for query {query_id!r}") from None


class ChatTagger(TaggerClient):
    """Chat-completion tagger (OpenAI-compatible endpoint).

    Decoding is deterministic (temperature 0). A malformed response is
    retried once with a format reminder appended. Cost is taken from
    ``usage.cost`` when the provider reports it, otherwise ``cost_per_call``
    is charged per request. Request/response pairs are appended to
    ``transcript_path`` as JSON lines.
    """

    def __init__(self, url, model="", api_key=None, cost_per_call=0.0,
                 taxonomy=CapabilityTaxonomy(), transcript_path=None, client=None, timeout=60.0):
        import httpx

        self.url = url
        self.model = model
        self.api_key = api_key
        self.cost_per_call = float(cost_per_call)
        self.taxonomy = taxonomy
        self.transcript_path = transcript_path
        self._client = client or httpx.Client(timeout=timeout)
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls, taxonomy=CapabilityTaxonomy(), transcript_path=None, client=None):
        url = os.environ.get("TAGGER_API_URL")
        if not url:
            raise TaggerUnavailable("TAGGER_API_URL is not set")
        return cls(url, os.environ.get("TAGGER_MODEL", ""), os.environ.get("TAGGER_API_KEY"),
                   float(os.environ.get("TAGGER_COST_PER_CALL", "0") or 0), taxonomy,
                   transcript_path, client)

    def _complete(self, prompt: str) -> tuple[str, float]:
        body = {"model": self.model, "temperature": 0,
                "messages": [{"role": "user", "content": prompt}]}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.url, json=body, headers=headers)
            resp.raise_for_status()
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise TaggerUnavailable(f"tagger request failed: {exc}") from exc
        cost = (data.get("usage") or {}).get("cost")
        cost = float(cost) if isinstance(cost, (int, float)) else self.cost_per_call
        if self.transcript_path:
            with self._lock, open(self.transcript_path, "a") as fh:
                fh.write(json.dumps({"request": body, "response": data}) + "\n")
        return text, cost

    def tag(self, query_text):
        prompt = render_prompt(query_text)
        text, cost = self._complete(prompt)
        try:
            return TagResult(parse_tagger_response(text, self.taxonomy), cost)
        except TaggerParseError:
            log.info("tagger output unparseable; retrying once with format reminder")
        text, cost2 = self._complete(prompt + FORMAT_REMINDER)
        return TagResult(parse_tagger_response(text, self.taxonomy), cost + cost2)


def parse_transcript(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid transcript line: {exc.msg}", n) from None
    return out
