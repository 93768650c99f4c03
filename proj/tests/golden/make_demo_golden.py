#!/usr/bin/env python3
"""Brute-force reference pipeline for the bundled demo run.

Writes reports.jsonl and summary.json for data/toy7 with the demo settings
(edges_toy7b.tsv, pin pyrexia -> fever at 0.95, tau 0.9). Everything is
recomputed from scratch with plain BFS and set arithmetic.

    python3 tests/golden/make_demo_golden.py [out_dir]
"""
import json
import os
import string
import sys
from collections import deque
from itertools import product

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
DATA = os.path.join(ROOT, "data", "toy7")
OUT = sys.argv[1] if len(sys.argv) > 1 else os.path.join(ROOT, "tests", "golden", "demo")
PINS = {"pyrexia": ("fever", 0.95)}
TAU = 0.9
KINDS = ["Relation", "Branch", "Missing"]


def read_tsv(name):
    with open(os.path.join(DATA, name)) as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    return rows[1:]


nodes = {r[0]: (r[1], r[2]) for r in read_tsv("nodes.tsv")}
directed = set(json.load(open(os.path.join(DATA, "policy.json")))["directed_relations"])
succ = {n: set() for n in nodes}
for s, rel, d in read_tsv("edges_toy7b.tsv"):
    succ[s].add(d)
    if rel not in directed:
        succ[d].add(s)


def dist_from(src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in succ[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def reach(a, b):
    return b in dist_from(a)


def ancestors(y):
    return {n for n in nodes if reach(n, y)}


def shortest_paths(src, dst):
    d = dist_from(src)
    if dst not in d:
        return []
    length = d[dst]
    out = []
    # every node sequence of the right length, kept when each hop is an arc
    for mid in product(sorted(nodes), repeat=max(length - 1, 0)):
        seq = (src,) + mid + (dst,) if length > 0 else (src,)
        if all(seq[i + 1] in succ[seq[i]] for i in range(len(seq) - 1)):
            out.append(seq)
    return sorted(out)[:16]


def normalize(text):
    t = " ".join(text.strip().lower().split())
    return t.strip(string.punctuation + " ")


by_name = {normalize(name): nid for nid, (name, _) in nodes.items()}


def align(text):
    key = normalize(text)
    if key in by_name:
        return by_name[key]
    if key in PINS and PINS[key][1] >= TAU:
        return by_name[normalize(PINS[key][0])]
    return None


reports, cases = [], []
with open(os.path.join(DATA, "corpus.jsonl")) as f:
    raw = [json.loads(line) for line in f if line.strip()]

for c in raw:
    y_star = align(c["correct_answer"])
    y_hat = align(c["predicted_answer"])
    qents = []
    for e in c["question_entities"]:
        nid = align(e if isinstance(e, str) else e["text"])
        if nid is not None and nid not in qents:
            qents.append(nid)
    model = []
    for p in c["model_paths"]:
        model.append([n for n in (align(s["entity_text"]) for s in p) if n is not None])
    refs = []
    for q in qents:
        for path in shortest_paths(q, y_star):
            if path not in refs:
                refs.append(path)

    observed_pairs = sorted({(p[i], p[i + 1]) for p in model for i in range(len(p) - 1)})
    observed = {n for p in model for n in p}
    ref_nodes = {n for p in refs for n in p}
    anc = ancestors(y_star)

    rel = [{"kind": "Relation", "source": a, "target": b} for a, b in observed_pairs if not reach(a, b)]
    br = [{"also_relation_error": not reach(a, b), "kind": "Branch", "source": a, "target": b}
          for a, b in observed_pairs if a in anc and b not in anc]
    miss = [{"kind": "Missing", "target": m} for m in sorted(ref_nodes - observed - {y_star})
            if reach(m, y_star) and not reach(m, y_hat)]
    reports.append({"branch_errors": br, "case_id": c["id"], "correct": y_star == y_hat, "missing_errors": miss,
                    "n_br": len(br), "n_miss": len(miss), "n_rel": len(rel), "relation_errors": rel})
    cases.append((ref_nodes, observed))

intensity = {}
roles = {}
totals = dict.fromkeys(KINDS, 0)
for rep, (ref_nodes, observed) in zip(reports, cases):
    endpoints = set()
    for kind, key in (("Relation", "relation_errors"), ("Branch", "branch_errors"), ("Missing", "missing_errors")):
        for r in rep[key]:
            totals[kind] += 1
            ends = [r["target"]] + ([r["source"]] if "source" in r else [])
            for e in ends:
                intensity[(e, kind)] = intensity.get((e, kind), 0) + 1
            if "source" in r:
                endpoints.update(ends)
    blank = {"observed_error_occurrences": 0, "observed_nonerror_occurrences": 0,
             "ref_path_occurrences": 0, "total_occurrences": 0}
    for e in ref_nodes | observed:
        r = roles.setdefault(e, dict(blank))
        r["total_occurrences"] += 1
        if e in ref_nodes:
            r["ref_path_occurrences"] += 1
        if e in observed:
            r["observed_error_occurrences" if e in endpoints else "observed_nonerror_occurrences"] += 1

n = len(reports)
correct = sum(r["correct"] for r in reports)
summary = {
    "accuracy": correct / n if n else None,
    "correct_cases": correct,
    "incorrect_cases": n - correct,
    "intensity": [{"count": c, "entity": e, "kind": k}
                  for (e, k), c in sorted(intensity.items(), key=lambda x: (x[0][0], KINDS.index(x[0][1])))],
    "roles": {e: roles[e] for e in sorted(roles)},
    "total_cases": n,
    "totals": totals,
}


def dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


os.makedirs(OUT, exist_ok=True)
with open(os.path.join(OUT, "reports.jsonl"), "w") as f:
    f.write(dump({"kind": "reports", "schema_version": 1}) + "\n")
    for r in reports:
        f.write(dump(r) + "\n")
with open(os.path.join(OUT, "summary.json"), "w") as f:
    f.write(dump(summary) + "\n")
