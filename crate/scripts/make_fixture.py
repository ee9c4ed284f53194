#!/usr/bin/env python3
"""Emit the bundled synthetic benchmark fixture and the naive prior file.

The numbers are invented. They mimic the layout of a normalized national
travel-survey aggregate (demographic marginals plus one attitudinal question
broken down by age group) so the pipeline can run end to end offline.

Every block is checked to sum to exactly 100 percent before it is written.

Usage: python3 scripts/make_fixture.py crates/core/data
"""
import sys
from decimal import Decimal
from pathlib import Path

AGE = ["14--17", "18--29", "30--39", "40--49", "50--59", "60--64", "65--74", "75--79", "80+"]
EDU = ["No Degree (yet)", "Low", "Medium", "High"]
ACT = [
    "Full-time employee", "Part-time employee", "Employed (unspecified)", "Pupil",
    "Student", "Housewife/Househusband", "Pensioner", "Other",
]
ECO = ["Very Low", "Low", "Medium", "High", "Very High"]
HH = [
    "Young singles", "Middle-aged singles", "Older singles", "Young two-person households",
    "Middle-aged two-person households", "Older two-person households",
    "Households with at least 3 adults", "Households with at least 1 child under 6",
    "Households with at least 1 child under 14", "Households with at least 1 child under 18",
    "Single parents",
]
RESP = ["Completely Agree", "Rather Agree", "Partly Agree", "Rather Disagree", "Completely Disagree"]
NS = "Not specified"

BENCHMARK_MARGINALS = {
    "Age Group": (AGE, ["5.0", "16.5", "14.5", "15.0", "18.0", "7.0", "12.0", "6.0", "6.0"], None),
    "Education Level": (EDU, ["9.0", "30.0", "31.5", "28.5"], "1.0"),
    "Main Activity": (ACT, ["34.0", "12.5", "3.0", "7.0", "4.5", "4.0", "30.0", "4.0"], "1.0"),
    "Economic Status": (ECO, ["7.0", "16.0", "41.0", "27.0", "9.0"], None),
    "Household Type": (
        HH, ["6.5", "9.0", "11.5", "4.0", "12.0", "20.0", "17.0", "8.0", "5.5", "4.0", "2.5"], None,
    ),
}

# walking preference by age group, last entry is "Not specified"
WALKING = {
    "14--17": ["22.0", "30.0", "28.0", "13.0", "6.0", "1.0"],
    "18--29": ["25.0", "31.0", "26.0", "12.0", "5.5", "0.5"],
    "30--39": ["28.0", "32.0", "24.0", "10.5", "5.0", "0.5"],
    "40--49": ["30.0", "32.0", "23.0", "10.0", "4.5", "0.5"],
    "50--59": ["34.0", "31.0", "21.0", "9.0", "4.5", "0.5"],
    "60--64": ["39.0", "30.0", "18.5", "8.0", "4.0", "0.5"],
    "65--74": ["43.0", "29.0", "16.0", "7.0", "4.0", "1.0"],
    "75--79": ["42.0", "27.0", "16.0", "8.0", "6.0", "1.0"],
    "80+": ["35.0", "24.0", "17.0", "11.0", "11.0", "2.0"],
}

PRIOR_MARGINALS = {
    "Age Group": (AGE, ["6", "15", "13", "13", "15", "8", "13", "8", "9"]),
    "Education Level": (EDU, ["12", "28", "35", "25"]),
    "Main Activity": (ACT, ["30", "15", "5", "8", "6", "6", "25", "5"]),
    "Economic Status": (ECO, ["10", "20", "40", "20", "10"]),
    "Household Type": (HH, ["9", "9", "9", "9", "9", "9", "9", "9", "9", "9", "10"]),
}


def check(label, values):
    total = sum(Decimal(v) for v in values)
    if total != Decimal(100):
        raise SystemExit(f"{label}: shares sum to {total}, expected 100")


def row(*cells):
    out = []
    for c in cells:
        c = str(c)
        out.append(f'"{c}"' if "," in c else c)
    return ",".join(out)


def benchmark():
    lines = [
        "# Synthetic benchmark fixture. Invented numbers, not survey data.",
        "# Generated by scripts/make_fixture.py; every block sums to 100 percent.",
        "kind,attribute,category,question,response,share_percent",
    ]
    for attr, (cats, shares, ns) in BENCHMARK_MARGINALS.items():
        block = list(shares) + ([ns] if ns else [])
        check(attr, block)
        for cat, s in zip(cats, shares):
            lines.append(row("marginal", attr, cat, "", "", s))
        if ns:
            lines.append(row("marginal", attr, NS, "", "", ns))
    for age, shares in WALKING.items():
        check(f"walking/{age}", shares)
        for resp, s in zip(RESP + [NS], shares):
            lines.append(row("response", "Age Group", age, "walking", resp, s))
    return "\n".join(lines) + "\n"


def prior():
    lines = [
        "# Synthetic naive prior: rough general-knowledge marginals. Not survey data.",
        "# Generated by scripts/make_fixture.py; every block sums to 100 percent.",
        "kind,attribute,category,question,response,share_percent",
    ]
    for attr, (cats, shares) in PRIOR_MARGINALS.items():
        check(f"prior/{attr}", shares)
        for cat, s in zip(cats, shares):
            lines.append(row("marginal", attr, cat, "", "", s))
    return "\n".join(lines) + "\n"


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data")
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark_fixture.csv").write_text(benchmark())
    (out / "naive_prior.csv").write_text(prior())


if __name__ == "__main__":
    main()
