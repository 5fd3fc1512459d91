"""Derive the Young's moduli frozen in ``tactile_perception.wave_objects``.

Shore 00 grades are converted with a Hertzian-indenter durometer model
(ASTM D2240 type 00: hemispherical tip of radius 1.19 mm, spring force
0.203 N + 9.08 mN per point, full travel 2.54 mm).  Shore A grades use
Gent's empirical relation.  PLA is outside the durometer range of either
scale, so a handbook tensile modulus is used instead.

Run ``python tools/shore_modulus_oracle.py`` to print the constants.
"""

import math

POISSON = 0.5
TIP_RADIUS_M = 1.19e-3
TRAVEL_M = 2.54e-3


def shore00_to_modulus(hardness: float) -> float:
    force = 0.203 + 0.00908 * hardness
    depth = TRAVEL_M * (1.0 - hardness / 100.0)
    return 3.0 * (1.0 - POISSON**2) * force / (4.0 * math.sqrt(TIP_RADIUS_M) * depth**1.5)


def shoreA_to_modulus(hardness: float) -> float:
    """Gent (1958); returns Pa."""
    mpa = 0.0981 * (56.0 + 7.62336 * hardness) / (0.137505 * (254.0 - 2.54 * hardness))
    return mpa * 1e6


if __name__ == "__main__":
    rows = [
        ("ECOFLEX_00_10", shore00_to_modulus(10)),
        ("ECOFLEX_00_50", shore00_to_modulus(50)),
        ("PLA (handbook)", 3.5e9),
        ("skin SOFT, Ecoflex 00-31", shore00_to_modulus(31)),
        ("skin HARD, Dragonskin 30A", shoreA_to_modulus(30)),
    ]
    for name, value in rows:
        print(f"{name:28s} {value:.6e} Pa")
