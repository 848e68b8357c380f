"""Rebuild tests/data/co2_mm_mlo.txt from the vega-datasets CO2 CSV.

The CSV (vega-datasets 3.2.1, data/co2-concentration.csv) carries the
Scripps/NOAA Mauna Loa monthly means with missing months already dropped.
This script writes them back out in the NOAA whitespace layout, restores
missing months as -99.99 sentinels and truncates to the first 707 valid
months (March 1958 onward).
"""

import csv
import sys

KEEP = 707


def main(src, dst):
    rows = {}
    with open(src, newline="") as fh:
        for rec in csv.DictReader(fh):
            y, m, _ = rec["Date"].split("-")
            rows[(int(y), int(m))] = float(rec["CO2"])
    keys = sorted(rows)
    y, m = keys[0]
    kept = 0
    lines = []
    while kept < KEEP:
        dec = y + (m - 0.5) / 12.0
        val = rows.get((y, m))
        if val is None:
            lines.append(f"{y:6d} {m:4d} {dec:12.4f} {-99.99:10.2f}")
        else:
            lines.append(f"{y:6d} {m:4d} {dec:12.4f} {val:10.2f}")
            kept += 1
        m += 1
        if m > 12:
            y, m = y + 1, 1
    with open(dst, "w") as out:
        out.write("# Mauna Loa CO2 monthly mean mole fraction (ppm)\n")
        out.write("# Source: Scripps CO2 program / NOAA GML, as redistributed in\n")
        out.write("# vega-datasets 3.2.1 (data/co2-concentration.csv).\n")
        out.write("# Missing months restored as -99.99. First 707 valid months.\n")
        out.write("# year month decimal_date average\n")
        out.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
