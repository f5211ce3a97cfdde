"""Generate the ACSR conductor library used by the shipped feeders.

Per-mile phase impedance matrices are computed with the modified Carson
equations at 60 Hz and 100 ohm-m earth resistivity:

    z_ii = r_i + 0.09530 + j 0.12134 (ln(1/GMR_i) + 7.93402)   [ohm/mile]
    z_ij =       0.09530 + j 0.12134 (ln(1/D_ij)  + 7.93402)

on a classic 4-wire crossarm geometry (phase spacings 2.5 / 4.5 / 7.0 ft,
neutral 4 ft below between the outer phases), with the neutral eliminated by
Kron reduction.  The neutral uses the same conductor as the phases.  The
five types span descending impedance / ascending ampacity:

    C1  #4 ACSR        (140 A)     C4  #4/0 6/1 ACSR   (340 A)
    C2  #2 6/1 ACSR    (180 A)     C5  336,400 26/7 ACSR (530 A)
    C3  #1/0 ACSR      (230 A)

Run from the repository root:

    python demos/make_conductor_library.py

writes src/gridcert/data/conductors_acsr.json and prints each 3x3 matrix.
"""

import json
from pathlib import Path

import numpy as np

# name -> (GMR ft, resistance ohm/mile, ampacity A)
CONDUCTORS = {
    "C1": ("#4 ACSR", 0.00452, 2.55, 140),
    "C2": ("#2 6/1 ACSR", 0.00418, 1.69, 180),
    "C3": ("#1/0 ACSR", 0.00446, 1.12, 230),
    "C4": ("#4/0 6/1 ACSR", 0.00814, 0.592, 340),
    "C5": ("336,400 26/7 ACSR", 0.0244, 0.306, 530),
}

# (x, y) positions in feet: phases a, b, c and neutral
POSITIONS = np.array([[0.0, 29.0], [2.5, 29.0], [7.0, 29.0], [4.0, 25.0]])

RE = 0.09530  # ohm/mile, earth-return resistance term
XK = 0.12134  # ohm/mile multiplier
XE = 7.93402  # ln term offset for 100 ohm-m earth at 60 Hz


def carson_matrix(gmr: float, r: float) -> np.ndarray:
    n = len(POSITIONS)
    z = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            if i == j:
                z[i, j] = r + RE + 1j * XK * (np.log(1.0 / gmr) + XE)
            else:
                d = np.linalg.norm(POSITIONS[i] - POSITIONS[j])
                z[i, j] = RE + 1j * XK * (np.log(1.0 / d) + XE)
    # Kron-eliminate the neutral (last row/column)
    zpp = z[:3, :3]
    zpn = z[:3, 3:]
    znn = z[3:, 3:]
    return zpp - zpn @ np.linalg.inv(znn) @ zpn.T


def main():
    out = {"schema": "gridcert-conductors/1", "unit": "ohms_per_mile", "conductors": {}}
    for name, (desc, gmr, r, amps) in CONDUCTORS.items():
        z = carson_matrix(gmr, r)
        out["conductors"][name] = {
            "description": f"{desc} {amps} A",
            "ampacity_a": amps,
            "R": [[round(v, 6) for v in row] for row in z.real.tolist()],
            "X": [[round(v, 6) for v in row] for row in z.imag.tolist()],
        }
        print(f"{name} ({desc}):")
        for row in z:
            print("   " + "  ".join(f"{v.real:7.4f}{v.imag:+7.4f}j" for v in row))

    dest = Path(__file__).resolve().parent.parent / "src" / "gridcert" / "data" / "conductors_acsr.json"
    dest.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"\nwrote {dest}")


if __name__ == "__main__":
    main()
