"""Pinned SI constants (CODATA 2018 exact / recommended values)."""

HBAR = 1.054571817e-34  # J s
C = 2.99792458e8  # m / s
M_E = 9.1093837015e-31  # kg
EV = 1.602176634e-19  # J
BOHR_RADIUS = 5.29177210903e-11  # m
#: Coulomb energy of two electrons one Bohr radius apart, rounded as usually quoted.
HARTREE_EV = 27.2
