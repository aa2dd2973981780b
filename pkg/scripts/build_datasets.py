"""Rebuild the benchmark CSVs in data/ from the KEEL files shipped in keel-ds.

    pip download keel-ds==0.2.5 --no-deps -d /tmp/keel
    python3 scripts/build_datasets.py /tmp/keel/keel_ds-0.2.5-py3-none-any.whl

The argument may also be a directory holding the unpacked wheel.

Only PyPI is needed. Derivations:

ecoli       KEEL ecoli3 (imU vs rest), 336 x 7.
abalone     rows of KEEL abalone19 (every abalone row); the minority class is
            rings == 7, recovered as the multiset difference between the
            negatives of abalone-17_vs_7-8-9-10 and abalone-20_vs_8-9-10.
            Sex is one-hot encoded (3 columns) giving 10 features.
pen_digits  KEEL penbased, digit 5 vs rest, 10992 x 16; pen_digits_2k.csv is
            a seeded stratified 2000-row subset.
glass       six classes reassembled from the one-vs-rest files glass0..glass6.
"""

from __future__ import annotations

import csv
import os
import sys
import zipfile
from collections import Counter

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(os.path.dirname(HERE), "data")


def read_dat(z, member: str) -> list[list[str]]:
    if isinstance(z, zipfile.ZipFile):
        text = z.read(member).decode("utf-8")
    else:
        with open(os.path.join(z, member), encoding="utf-8") as fh:
            text = fh.read()
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("@"):
            continue
        rows.append([c.strip() for c in line.split(",")])
    return rows


def write(name: str, header: list[str], rows: list[list]) -> None:
    path = os.path.join(OUT, f"{name}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}: {len(rows)} rows")


def imb(member: str) -> str:
    return f"keel_ds/data/imbalanced/raw/{member}.dat"


def build_ecoli(z):
    rows = read_dat(z, imb("ecoli3"))
    header = ["mcg", "gvh", "lip", "chg", "aac", "alm1", "alm2", "class"]
    write("ecoli", header, [r[:7] + ["imU" if r[7] == "positive" else "other"] for r in rows])


def build_abalone(z):
    everything = read_dat(z, imb("abalone19"))
    wide = read_dat(z, imb("abalone-17_vs_7-8-9-10"))
    narrow = read_dat(z, imb("abalone-20_vs_8-9-10"))
    rings7 = Counter(tuple(r[:-1]) for r in wide if r[-1] == "negative")
    rings7.subtract(Counter(tuple(r[:-1]) for r in narrow if r[-1] == "negative"))
    rings7 = +rings7
    out = []
    for r in everything:
        key = tuple(r[:-1])
        label = "other"
        if rings7[key] > 0:
            rings7[key] -= 1
            label = "rings7"
        sex = r[0]
        out.append([int(sex == "M"), int(sex == "F"), int(sex == "I")] + r[1:8] + [label])
    header = ["sex_M", "sex_F", "sex_I", "length", "diameter", "height", "whole_weight",
              "shucked_weight", "viscera_weight", "shell_weight", "class"]  # fmt: skip
    write("abalone", header, out)


def build_pen(z):
    rows = read_dat(z, "keel_ds/data/balanced/raw/penbased.dat")
    header = [f"f{i}" for i in range(16)] + ["class"]
    out = [r[:16] + ["digit5" if r[16] == "5" else "other"] for r in rows]
    write("pen_digits", header, out)
    labels = np.array([r[-1] == "digit5" for r in out])
    rng = np.random.Generator(np.random.Philox(key=7))
    keep = []
    for flag in (False, True):
        idx = np.flatnonzero(labels == flag)
        n = int(round(2000 * idx.size / len(out)))
        keep.append(rng.permutation(idx)[:n])
    keep = np.sort(np.concatenate(keep))
    write("pen_digits_2k", header, [out[i] for i in keep])


def build_glass(z):
    # glass2 is stored with differently rounded values, so type 3 is whatever
    # no other file claims; its count is checked against glass2's positives
    members = {"glass0": "1", "glass1": "2", "glass4": "5", "glass5": "6", "glass6": "7"}
    base = read_dat(z, imb("glass0"))
    pools: dict[tuple, list[str]] = {}
    for member, cls in members.items():
        for r in read_dat(z, imb(member)):
            if r[-1] == "positive":
                pools.setdefault(tuple(r[:-1]), []).append(cls)
    out = []
    for r in base:
        labels = pools.get(tuple(r[:-1]))
        out.append(r[:-1] + [labels.pop(0) if labels else "3"])
    n3 = sum(1 for r in out if r[-1] == "3")
    expected = sum(1 for r in read_dat(z, imb("glass2")) if r[-1] == "positive")
    if n3 != expected:
        raise SystemExit(f"glass: {n3} unclaimed rows, glass2 has {expected} positives")
    header = ["RI", "Na", "Mg", "Al", "Si", "K", "Ca", "Ba", "Fe", "type"]
    write("glass", header, out)


def main(argv: list[str]) -> int:
    if len(argv) != 2:
        print(__doc__)
        return 1
    os.makedirs(OUT, exist_ok=True)
    if os.path.isdir(argv[1]):
        build_all(argv[1])
    else:
        with zipfile.ZipFile(argv[1]) as z:
            build_all(z)
    return 0


def build_all(src) -> None:
    build_ecoli(src)
    build_abalone(src)
    build_pen(src)
    build_glass(src)


if __name__ == "__main__":
    sys.exit(main(sys.argv))
