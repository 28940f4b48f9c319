"""Regenerate the shipped constant-only unit-root critical value table.

Values come from MacKinnon's (2010) response surface for the
constant-only Dickey-Fuller tau statistic, evaluated on a grid of sample
sizes. The table (not the surface) is what the library reads, so results
stay fixed across releases.
"""

import json
from pathlib import Path

SURFACE = {
    "1%": (-3.43035, -6.5393, -16.786, -79.433),
    "5%": (-2.86154, -2.8903, -4.234, -40.040),
    "10%": (-2.56677, -1.5384, -2.809, 0.0),
}
GRID = [10, 15, 20, 25, 30, 35, 40, 50, 60, 75, 100, 125, 150, 200, 250, 300, 400, 500, 750, 1000, 2000, None]


def critical(coefs, n):
    if n is None:
        return coefs[0]
    return coefs[0] + coefs[1] / n + coefs[2] / n**2 + coefs[3] / n**3


def main():
    table = {
        "version": 1,
        "regression": "constant",
        "source": "MacKinnon (2010) response surface, tau_c, one variable",
        "n": GRID,
        "values": {lvl: [round(critical(c, n), 4) for n in GRID] for lvl, c in SURFACE.items()},
    }
    out = Path(__file__).resolve().parents[1] / "src" / "sohcast" / "data" / "adf_critical_values.json"
    out.write_text(json.dumps(table, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
