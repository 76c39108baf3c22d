"""Rebuild the MovieLens-100k ``u.data``/``u.user``/``u.item`` files from the
atomic copy shipped inside the ``recbole`` wheel.

Usage::

    python scripts/movielens_from_recbole.py SRC_DIR [DEST_DIR]

``SRC_DIR`` holds ``ml-100k.inter``, ``ml-100k.user`` and ``ml-100k.item``
(tab-separated with a typed header row).  ``DEST_DIR`` defaults to
``data/ml-100k``.  Release dates and IMDb links are not in the atomic files,
so those columns are left empty; the loader ignores them.
"""
import sys
from pathlib import Path

from spectralcf.data import GENRES


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        next(fh)  # typed header
        for line in fh:
            line = line.rstrip("\n")
            if line:
                yield line.split("\t")


def convert(src, dest):
    src, dest = Path(src), Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with open(dest / "u.data", "w", encoding="latin-1") as out:
        for uid, iid, rating, ts in _rows(src / "ml-100k.inter"):
            out.write(f"{uid}\t{iid}\t{int(float(rating))}\t{int(float(ts))}\n")
    users = sorted(_rows(src / "ml-100k.user"), key=lambda r: int(r[0]))
    with open(dest / "u.user", "w", encoding="latin-1") as out:
        for uid, age, gender, occupation, zip_code in users:
            out.write(f"{uid}|{age}|{gender}|{occupation}|{zip_code}\n")
    items = sorted(_rows(src / "ml-100k.item"), key=lambda r: int(r[0]))
    with open(dest / "u.item", "w", encoding="latin-1", errors="replace") as out:
        for iid, title, year, classes in items:
            tags = set(classes.split())
            unknown = tags - set(GENRES)
            if unknown:
                raise ValueError(f"item {iid}: unknown genres {sorted(unknown)}")
            flags = "|".join("1" if g in tags else "0" for g in GENRES)
            out.write(f"{iid}|{title.replace('|', '/')} ({year})||||{flags}\n")
    return dest


if __name__ == "__main__":
    if len(sys.argv) not in (2, 3):
        sys.exit(__doc__)
    print(convert(sys.argv[1], sys.argv[2] if len(sys.argv) == 3 else "data/ml-100k"))
