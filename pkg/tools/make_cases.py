"""Regenerate the bundled IEEE case files from PYPOWER's MATPOWER-format cases.

Usage: python tools/make_cases.py  (requires ``pip install pypower``)

Conversion rules:
  * branch series admittance g + jb = 1 / (r + jx), per unit on the system base
  * line charging b_c is split in half onto the two end buses' shunt susceptance
  * bus shunts Gs/Bs (MW/MVAr at 1 pu) are divided by baseMVA
  * transformer taps and phase shifts are dropped
  * negative active loads are clipped to zero
"""
from pathlib import Path

from pypower.api import case57, case118, case300

OUT = Path(__file__).resolve().parents[1] / "src" / "fedgraph_fdia" / "cases"


def convert(name, ppc):
    base = ppc["baseMVA"]
    bus = ppc["bus"]
    branch = ppc["branch"]
    labels = [int(b) for b in bus[:, 0]]
    shunt_g = dict(zip(labels, bus[:, 4] / base))
    shunt_b = dict(zip(labels, bus[:, 5] / base))
    for row in branch:
        f, t, bc = int(row[0]), int(row[1]), row[4]
        shunt_b[f] += bc / 2
        shunt_b[t] += bc / 2
    lines = [
        f"# {name}: converted from the MATPOWER case by tools/make_cases.py",
        f"CASE {name} {len(labels)}",
    ]
    for row in bus:
        i = int(row[0])
        p = max(float(row[2]), 0.0)
        lines.append(f"BUS {i} {p:.6g} {float(row[3]):.6g} {shunt_g[i]:.8g} {shunt_b[i]:.8g}")
    for row in branch:
        y = 1.0 / complex(row[2], row[3])
        lines.append(f"BRANCH {int(row[0])} {int(row[1])} {y.real:.10g} {y.imag:.10g}")
    (OUT / f"{name}.case").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in (("ieee57", case57), ("ieee118", case118), ("ieee300", case300)):
        convert(name, fn())
        print("wrote", OUT / f"{name}.case")
