"""Download the LastFM Asia social network into data/lastfm_asia/.

Grabs the zip from SNAP, extracts the edge list and the country targets,
and rewrites them under the names the stats tooling expects. Features
(the artist multi-hot JSON) are left out; nothing downstream needs them
for structural statistics.

Usage:
    python3 scripts/fetch_lastfm_asia.py [--dest data/lastfm_asia]
"""

import argparse
import io
import sys
import urllib.request
import zipfile
from pathlib import Path

URL = "https://snap.stanford.edu/data/lasftm_asia.zip"  # sic, the typo is SNAP's


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dest", default="data/lastfm_asia", type=Path)
    ap.add_argument("--url", default=URL)
    args = ap.parse_args()

    args.dest.mkdir(parents=True, exist_ok=True)
    edges_out = args.dest / "lastfm_asia_edges.csv"
    target_out = args.dest / "lastfm_asia_target.csv"
    if edges_out.exists() and target_out.exists():
        print(f"already present in {args.dest}, nothing to do")
        return 0

    print(f"fetching {args.url} ...")
    try:
        with urllib.request.urlopen(args.url, timeout=120) as resp:
            blob = resp.read()
    except OSError as e:
        print(f"download failed: {e}", file=sys.stderr)
        print(
            "fetch the zip manually and place lastfm_asia_edges.csv and\n"
            f"lastfm_asia_target.csv under {args.dest}/",
            file=sys.stderr,
        )
        return 1

    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        names = {Path(n).name: n for n in zf.namelist()}
        for fname, out in (("lastfm_asia_edges.csv", edges_out), ("lastfm_asia_target.csv", target_out)):
            if fname not in names:
                print(f"zip is missing {fname}; contents: {sorted(names)}", file=sys.stderr)
                return 1
            out.write_bytes(zf.read(names[fname]))
            print(f"wrote {out}")

    print("done; try: clatt stats data/lastfm_asia/lastfm_asia_edges.csv "
          "--nodes data/lastfm_asia/lastfm_asia_target.csv --target-column target")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
