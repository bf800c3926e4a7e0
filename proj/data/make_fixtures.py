"""Regenerates the bundled synthetic fixture under data/fixtures/.

Everything here is invented sample data: skincare claims, three historical
MaxDiff studies with final preference scores, and 4-d image embeddings.
"""
import json
import random
from pathlib import Path

OUT = Path(__file__).parent / "fixtures"
rng = random.Random(20240901)

TEXTS = [
    "Hydrates skin for 48 hours",
    "Clinically shown to reduce fine lines in 4 weeks",
    "Gentle enough for sensitive skin",
    "Dermatologist recommended moisturizer",
    "Restores the skin barrier overnight",
    "Visibly brighter skin in 7 days",
    "Non-greasy formula absorbs instantly",
    "Fragrance-free and hypoallergenic",
    "With hyaluronic acid and ceramides",
    "Locks in moisture all day",
    "Smooths rough, dry patches",
    "Reduces redness after one use",
    "Lightweight daily protection with SPF 30",
    "Plumps skin with lasting hydration",
    "Evens skin tone with vitamin C",
    "Soothes dry skin with oat extract",
    "Made with 95% naturally derived ingredients",
    "Leaves skin soft and supple",
    "Calms irritated skin in minutes",
    "Boosts radiance for a healthy glow",
    "Firms and tones visibly",
    "Suitable for all skin types",
    "Oil-free hydration for combination skin",
    "Helps skin retain its natural moisture",
]
AGES = ["18-25", "26-35", "36-50"]
LINES = ["hydra", "derma", "glow"]

claims = []
for i, text in enumerate(TEXTS):
    cid = f"c{i + 1:02d}"
    tags = {"age": AGES[i % 3], "line": LINES[(i // 3) % 3]}
    if i < 8:
        rec = {"id": cid, "text": text, "source": "claim_log", "claim_log_id": f"CL-{1000 + i}", "tags": tags}
    else:
        study = "s1" if i < 18 else ("s2" if i < 22 else "s3")
        rec = {"id": cid, "text": text, "source": "maxdiff_study", "study_id": study, "tags": tags}
    rec["image_ref"] = f"img-{cid}"
    claims.append(rec)

# Studies draw from the study claims plus a few claim-log claims.
studies = {
    "s1": [f"c{i:02d}" for i in range(9, 19)],            # 10 claims
    "s2": [f"c{i:02d}" for i in range(15, 23)],           # 8 claims
    "s3": ["c21", "c22", "c23", "c24", "c01"],            # 5 claims
}
truth = {c["id"]: rng.gauss(0, 1) for c in claims}
scored = {}
for sid, members in studies.items():
    obs = []
    best_n = {m: 0 for m in members}
    shown = {m: 0 for m in members}
    for _ in range(12 * len(members)):
        s = rng.sample(members, min(5, len(members)))
        w = [pow(2.718281828, truth[m]) for m in s]
        b = rng.choices(s, weights=w)[0]
        rest = [m for m in s if m != b]
        ww = [pow(2.718281828, -truth[m]) for m in rest]
        wst = rng.choices(rest, weights=ww)[0]
        obs.append({"set": s, "best": b, "worst": wst})
        best_n[b] += 1
        for m in s:
            shown[m] += 1
    scores = {m: round(best_n[m] / shown[m], 4) for m in members}
    scored.update(scores)
    with open(OUT / "studies" / f"{sid}.jsonl", "w") as f:
        f.write(json.dumps({"study_id": sid, "claims": members, "final_scores": scores}) + "\n")
        for o in obs:
            f.write(json.dumps(o) + "\n")

for c in claims:
    if c["id"] in scored and c["source"] == "maxdiff_study":
        c["score"] = scored[c["id"]]

with open(OUT / "claims.jsonl", "w") as f:
    for c in claims:
        f.write(json.dumps(c) + "\n")

with open(OUT / "image_embeddings.jsonl", "w") as f:
    for c in claims:
        v = [round(rng.uniform(-1, 1), 4) for _ in range(4)]
        f.write(json.dumps({"claim_id": c["id"], "vector": v}) + "\n")

with open(OUT / "true_utilities.jsonl", "w") as f:
    for cid, u in sorted(truth.items()):
        f.write(json.dumps({"claim_id": cid, "utility": round(u, 6)}) + "\n")

# Six generated claims and one manual claim, as in a typical simulator session.
session = [
    ("g1", "Skin feels renewed from the first wash", "generated"),
    ("g2", "Wakes up tired skin with a burst of moisture", "generated"),
    ("g3", "Hydration that lasts from sunrise to sunset", "generated"),
    ("g4", "Brightens dull skin with natural vitamin C", "generated"),
    ("g5", "Comfort for sensitive skin, all day long", "generated"),
    ("g6", "Your skin's daily drink of water", "generated"),
    ("m1", "Shiny skin", "manual"),
]
with open(OUT / "session_claims.jsonl", "w") as f:
    for cid, text, src in session:
        f.write(json.dumps({"id": cid, "text": text, "source": src}) + "\n")
with open(OUT / "session_utilities.jsonl", "w") as f:
    for cid, _, _ in session:
        f.write(json.dumps({"claim_id": cid, "utility": round(rng.gauss(0, 1), 6)}) + "\n")

profile = {
    "name": "busy professional",
    "description": "Women aged 26-35 with dry, sensitive skin who want fast, effective routines.",
    "talking_points": ["skin barrier", "clean ingredients", "all-day hydration"],
}
(OUT / "profile.json").write_text(json.dumps(profile, indent=2) + "\n")
