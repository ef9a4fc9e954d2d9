"""Rebuild the bundled Adult census CSV from the copy shipped in the `responsibly` wheel.

    pip download --no-deps responsibly==0.1.2 -d /tmp/dl
    python scripts/build_adult_csv.py /tmp/dl/responsibly-0.1.2-py3-none-any.whl

adult.data and adult.test are concatenated (48,842 rows); the trailing "." on
test-split labels is stripped.
"""
import csv
import gzip
import io
import sys
import zipfile
from pathlib import Path

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]
OUT = Path(__file__).resolve().parents[1] / "src" / "prediction_consistency" / "data" / "adult.csv.gz"


def main(wheel):
    z = zipfile.ZipFile(wheel)
    rows = []
    for name in ("adult.data", "adult.test"):
        for line in z.read(f"responsibly/dataset/adult/{name}").decode().splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            vals = [v.strip() for v in line.split(",")]
            vals[-1] = vals[-1].rstrip(".")
            rows.append(vals)
    with gzip.GzipFile(OUT, "wb", mtime=0) as fh:
        text = io.TextIOWrapper(fh, encoding="utf-8", newline="")
        w = csv.writer(text, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(rows)
        text.flush()
    print(f"wrote {len(rows)} rows to {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
