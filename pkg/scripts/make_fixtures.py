"""Regenerate the small test corpus under tests/fixtures/.

Writes records.jsonl and tags.jsonl (hand-shaped: a few frequent domains, a
couple of rare ones that fall under the frequency floor), then the golden
index and golden route responses from the library itself.

    python scripts/make_fixtures.py
"""

import json
import random
from pathlib import Path

from kcroute.core import RoutingConfig, TagSet
from kcroute.gateway import decision_body
from kcroute.index import build_index, dumps_index, load_corpus
from kcroute.scoring import route
from kcroute.vocab import StubProvider, build_vocabulary

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

MODELS = {
    # id: (cost per call, strength by domain)
    "atlas-large": (0.030, {"algebra": 0.9, "calculus": 0.85, "organic chemistry": 0.6, "python": 0.5}),
    "boreal-mini": (0.002, {"algebra": 0.55, "calculus": 0.5, "organic chemistry": 0.5, "python": 0.8}),
    "cirrus-pro": (0.012, {"algebra": 0.6, "calculus": 0.6, "organic chemistry": 0.9, "python": 0.6}),
}
COMMON = ["algebra", "calculus", "organic chemistry", "python"]
RARE = ["numismatics", "heraldry"]
CAPS = ["Reasoning", "Coding", "Knowledge Retrieval", "Comprehension", "Multilingual"]


def main():
    rng = random.Random(20240601)
    OUT.mkdir(parents=True, exist_ok=True)
    tags, records = [], []
    for i in range(48):
        qid = f"q{i:03d}"
        k = rng.sample(COMMON, rng.randint(1, 3))
        if i % 11 == 0:
            k.append(rng.choice(RARE))
        caps = rng.sample(CAPS, rng.randint(1, 2))
        # occasional messy casing/spacing, as a tagger would produce
        if i % 7 == 0:
            k = [f"  {k[0].title()} "] + k[1:]
        tags.append({"query_id": qid, "knowledge": k, "capabilities": caps})
        for mid, (cost, strength) in MODELS.items():
            p = strength.get(k[0].strip().lower(), 0.5)
            trials = [1.0 if rng.random() < p else 0.0 for _ in range(2)]
            records.append({"model_id": mid, "query_id": qid, "trial_scores": trials,
                            "trial_costs": [cost, round(cost * 1.1, 6)]})
    (OUT / "tags.jsonl").write_text("".join(json.dumps(t) + "\n" for t in tags))
    (OUT / "records.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records))

    corpus = load_corpus(OUT / "records.jsonl", OUT / "tags.jsonl")
    vocab = build_vocabulary(corpus.knowledge_occurrences(), StubProvider(0))
    index = build_index(corpus, vocab, alpha=0.5)
    (OUT / "golden_index.json").write_text(dumps_index(index))

    requests = []
    qrng = random.Random(7)
    labels = COMMON + RARE + ["xylography"]
    for n in range(25):
        body = {"tags": {"knowledge": qrng.sample(labels, qrng.randint(0, 3)),
                         "capabilities": qrng.sample(CAPS, qrng.randint(1, 2))}}
        if n % 3 == 1:
            body["beta"] = qrng.choice([1.0, 5.0, 15.0])
        if n % 4 == 2:
            body["gamma"], body["delta"] = qrng.choice([(1.0, 0.0), (0.0, 1.0), (2.0, 0.5)])
        if n % 5 == 3:
            body["pool"] = qrng.sample(sorted(MODELS), 2)
        requests.append(body)
    goldens = []
    for body in requests:
        cfg = RoutingConfig(0.5, body.get("beta", 0.0), body.get("gamma", 1.0), body.get("delta", 1.0))
        tags = TagSet.from_dict(body["tags"])
        d = route(index, tags, cfg, body.get("pool"))
        goldens.append({"request": body, "response": decision_body(d, index, index.prepare_tags(tags), 0.0)})
    (OUT / "golden_routes.json").write_text(json.dumps(goldens, indent=1, sort_keys=True) + "\n")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
