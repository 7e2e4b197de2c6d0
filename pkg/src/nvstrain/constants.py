"""Physical constants and default NV / apparatus parameters.

All frequencies are in Hz, fields in tesla, times in seconds and lengths in
micrometres unless a name says otherwise.
"""

from scipy import constants as _sc

ELECTRON_CHARGE = _sc.e
BOLTZMANN = _sc.k

# NV ground state
ZERO_FIELD_SPLITTING = 2.870e9  # Hz
GYROMAGNETIC_RATIO = 28.024e9  # Hz/T
HYPERFINE_14N = 2.16e6  # Hz
DD_DT = -74e3  # Hz/K, temperature coefficient of D

# spin-strain coupling, pure-strain convention (Hz per unit strain)
COUPLING_AXIAL = -8.0e9  # multiplies eps_zz
COUPLING_TRANSVERSE = -12.4e9  # multiplies eps_xx + eps_yy
COUPLING_AVERAGE = 10.9e9  # eps_bar = -Mz / COUPLING_AVERAGE

# dephasing of the bulk material
T_D = 21e-6
T2_STAR = 7.5e-6

# pulse timing
T_PI = 50e-9
TAU_1 = 21e-6

# sequence repetition rate for +X/-X pairs
REP_RATE = 3.8e3

CONFOCAL_VOLUME = 0.54  # um^3
DEPTH_SCALE = 2.4  # focal depth per unit stage travel in diamond
