"""Physical constants (CODATA 2018).

Single shared table so every module agrees on the numerical values. The
exactly-defined SI constants are written out in full; HBAR is h/(2 pi) with
h exact.
"""

import math

# Exact SI defining constants.
PLANCK = 6.62607015e-34  # J s
BOLTZMANN = 1.380649e-23  # J / K
SPEED_OF_LIGHT = 299792458.0  # m / s
AVOGADRO = 6.02214076e23  # 1 / mol

HBAR = PLANCK / (2.0 * math.pi)  # J s
GAS_CONSTANT = BOLTZMANN * AVOGADRO  # J / (mol K)
