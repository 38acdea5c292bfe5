#!/usr/bin/env python3
"""Regenerate the synthetic fixtures under fixtures/.

Headlines are synthetic. Only the counts matter: per-newspaper totals of the
table3 set, the frame shares of the shares set, and a small labeled set for
mock classification runs. Output is deterministic.
"""
import json
import random
from datetime import date, timedelta
from pathlib import Path

ROOT = Path(__file__).resolve().parent

NEWSPAPERS = [
    ("FR", "La Croix", 94), ("FR", "Le Monde", 125), ("FR", "Les Echos", 49),
    ("FR", "Liberation", 97), ("FR", "Lyon Capitale", 8), ("FR", "Ouest France", 150),
    ("IT", "Corriere della Sera", 429), ("IT", "Il Sole 24 Ore", 79),
    ("ES", "20 minutos", 27), ("ES", "ABC", 50), ("ES", "El Diario", 32),
    ("ES", "El Mundo", 77), ("ES", "El Español", 22), ("ES", "La Vanguardia", 95),
    ("CH", "24 heures", 97), ("CH", "La Liberté", 22), ("CH", "Le Temps", 111),
    ("UK", "The Irish News", 16), ("UK", "The Telegraph", 206),
]
COUNTRIES = ["FR", "IT", "ES", "CH", "UK"]
WINDOW = {"start": "2020-01-01", "end": "2021-10-31"}
FRAMES = ["attribution_of_responsibility", "human_interest", "conflict",
          "morality", "economic_consequences", "no_frame"]

SUBJECTS = ["Nurse", "Teacher", "Mayor", "Singer", "Footballer", "Doctor", "Priest",
            "Student", "Minister", "Shop owner", "Grandmother", "Police officer"]
ACTIONS = ["joins no-vax march", "speaks out against anti-vaxxers",
           "criticised by anti-vaccine group", "quits job over no vax protest",
           "debates anti-vaxx claims", "targeted by anti-corona activists",
           "explains anti-vaccin stance"]
PLACES = ["in Rome", "in Paris", "in Madrid", "in Geneva", "in London", "in Lyon",
          "in Milan", "in Barcelona", "in Lausanne", "in Belfast"]


def months():
    out = []
    y, m = 2020, 1
    while (y, m) <= (2021, 10):
        out.append((y, m))
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def month_weights():
    # flat background with peaks in January and August 2021
    w = []
    for (y, m) in months():
        if (y, m) == (2021, 1):
            w.append(14)
        elif (y, m) == (2021, 8):
            w.append(12)
        elif y == 2021:
            w.append(5)
        else:
            w.append(1)
    return w


def pick_date(rng, ms, weights):
    y, m = rng.choices(ms, weights=weights)[0]
    return date(y, m, rng.randint(1, 28))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")


def manifest(papers):
    return {
        "countries": COUNTRIES,
        "newspapers": {name: c for c, name, _ in papers},
        "date_window": WINDOW,
    }


def headline(rng):
    return f"{rng.choice(SUBJECTS)} {rng.choice(ACTIONS)} {rng.choice(PLACES)}"


def table3():
    rng = random.Random(1786)
    ms, weights = months(), month_weights()
    out = ROOT / "table3"
    out.mkdir(exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest(NEWSPAPERS), indent=2, ensure_ascii=False) + "\n")

    rows = []
    n = 0
    for country, paper, count in NEWSPAPERS:
        for _ in range(count):
            n += 1
            rows.append({
                "id": f"t3-{n:04d}",
                "headline": headline(rng),
                "body": "Full article text mentioning the no-vax movement.",
                "newspaper": paper,
                "country": country,
                "published": pick_date(rng, ms, weights).isoformat(),
            })
    assert n == 1786

    # 809 human interest (45.3%), 718 no frame (40.2%), the rest spread
    labels = ["human_interest"] * 809 + ["no_frame"] * 718 + \
        ["attribution_of_responsibility"] * 120 + ["conflict"] * 80 + \
        ["morality"] * 30 + ["economic_consequences"] * 29
    rng.shuffle(labels)
    for r, l in zip(rows, labels):
        if r["country"] == "UK" and l == "economic_consequences":
            r["sentiment"] = "negative"
        else:
            r["sentiment"] = rng.choice(["negative", "neutral", "neutral", "positive"])
    write_jsonl(out / "corpus.jsonl", rows)
    write_jsonl(out / "labels.jsonl", [{"article_id": r["id"], "label": l} for r, l in zip(rows, labels)])


def shares():
    rng = random.Random(1000)
    ms, weights = months(), month_weights()
    out = ROOT / "shares"
    out.mkdir(exist_ok=True)
    papers = [p for p in NEWSPAPERS]
    (out / "manifest.json").write_text(json.dumps(manifest(papers), indent=2, ensure_ascii=False) + "\n")
    rows = []
    for i in range(1000):
        country, paper, _ = papers[i % len(papers)]
        rows.append({
            "id": f"sh-{i:04d}",
            "headline": headline(rng),
            "newspaper": paper,
            "country": country,
            "published": pick_date(rng, ms, weights).isoformat(),
        })
    labels = ["human_interest"] * 453 + ["no_frame"] * 402 + \
        ["attribution_of_responsibility"] * 60 + ["conflict"] * 45 + \
        ["morality"] * 20 + ["economic_consequences"] * 20
    rng.shuffle(labels)
    write_jsonl(out / "corpus.jsonl", rows)
    write_jsonl(out / "labels.jsonl", [{"article_id": r["id"], "label": l} for r, l in zip(rows, labels)])


MOCK_HEADLINES = [
    ("Nurse suspended after refusing the jab tells her story", "human_interest"),
    ("Thousands march against health pass in Paris", "conflict"),
    ("Government blamed for confusion over vaccine rules", "attribution_of_responsibility"),
    ("Bishop says vaccination is an act of love", "morality"),
    ("Restaurants lose customers as pass checks begin", "economic_consequences"),
    ("Vaccination centre extends opening hours", "no_frame"),
    ("Anti-vaxxers clash with police outside parliament", "conflict"),
    ("Singer explains why she changed her mind on vaccines", "human_interest"),
    ("Health minister under fire over no-vax protests", "attribution_of_responsibility"),
    ("Is refusing the vaccine selfish?", "morality"),
    ("Unvaccinated workers face unpaid leave", "economic_consequences"),
    ("Second dose interval set at six weeks", "no_frame"),
    ("Father of three dies after rejecting vaccine", "human_interest"),
    ("No vax protesters block motorway", "conflict"),
    ("Regional council accused of slow rollout", "attribution_of_responsibility"),
    ("Priests urged to set an example by getting vaccinated", "morality"),
    ("Tourism sector fears losses from anti-vaccine movement", "economic_consequences"),
    ("New batch of doses arrives in Milan", "no_frame"),
    ("Doctor receives threats from anti-vaxx activists", "human_interest"),
    ("Opposition and government trade blows over mandates", "conflict"),
    ("Prime minister promises to fix vaccine supply", "attribution_of_responsibility"),
    ("Pope calls vaccination a moral duty", "morality"),
    ("Gyms count the cost of health pass rules", "economic_consequences"),
    ("Booking platform opens for over-60s", "no_frame"),
    ("Teacher who joined anti-corona rally loses job", "human_interest"),
    ("Protesters storm vaccination centre", "conflict"),
    ("Authorities blamed for misinformation spread", "attribution_of_responsibility"),
    ("Rabbis back vaccination campaign", "morality"),
    ("Employers face fines over unchecked passes", "economic_consequences"),
    ("Vaccine deliveries resume after delay", "no_frame"),
    ("Grandmother reunited with family after vaccination", "human_interest"),
    ("Riot police disperse no-vax crowd", "conflict"),
    ("Mayor held responsible for vaccination chaos", "attribution_of_responsibility"),
    ("Ethicists debate compulsory vaccination", "morality"),
    ("Shops report drop in sales after pass introduced", "economic_consequences"),
    ("Health pass app updated", "no_frame"),
    ("Footballer opens up about vaccine doubts", "human_interest"),
    ("Anti-vaccine groups clash online with doctors", "conflict"),
    ("Parliament demands answers on vaccine contracts", "attribution_of_responsibility"),
    ("Churches split over vaccine passports", "morality"),
    ("Airlines warn of losses from travel restrictions", "economic_consequences"),
    ("Pharmacies begin offering vaccinations", "no_frame"),
    ("Student describes life as an unvaccinated nurse", "human_interest"),
    ("Demonstrators and counter-protesters face off", "conflict"),
    ("Health agency criticised for mixed messages", "attribution_of_responsibility"),
    ("Imam urges faithful to get vaccinated", "morality"),
    ("Cinemas struggle as pass keeps audiences away", "economic_consequences"),
    ("Vaccination figures published for August", "no_frame"),
    ("Mother of newborn shares vaccine decision", "human_interest"),
    ("Police arrest no vax ringleaders", "conflict"),
]


def mock50():
    rng = random.Random(50)
    out = ROOT / "mock50"
    out.mkdir(exist_ok=True)
    papers = [("IT", "Corriere della Sera", 0), ("FR", "Le Monde", 0), ("UK", "The Telegraph", 0)]
    m = {"countries": ["FR", "IT", "UK"], "newspapers": {p: c for c, p, _ in papers}, "date_window": WINDOW}
    (out / "manifest.json").write_text(json.dumps(m, indent=2, ensure_ascii=False) + "\n")
    rows, labels = [], []
    ms = months()
    for i, (h, l) in enumerate(MOCK_HEADLINES):
        c, p, _ = papers[i % 3]
        y, mo = ms[rng.randrange(len(ms))]
        rows.append({"id": f"m50-{i:02d}", "headline": h, "newspaper": p, "country": c,
                     "published": date(y, mo, rng.randint(1, 28)).isoformat()})
        labels.append({"article_id": f"m50-{i:02d}", "label": l})
    assert len(rows) == 50
    write_jsonl(out / "corpus.jsonl", rows)
    write_jsonl(out / "labels.jsonl", labels)


if __name__ == "__main__":
    table3()
    shares()
    mock50()
