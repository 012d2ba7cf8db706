"""
Физические и опорные константы
"""

from scipy import constants as _sc

BOLTZMANN = _sc.k                 # Дж/К
ELEMENTARY_CHARGE = _sc.e         # Кл
KELVIN_OFFSET = 273.15

# Стандартные условия испытаний (STC)
G_STC = 1000.0                    # Вт/м²
T_STC = 25.0                      # °C

# Условия NOCT
G_NOCT = 800.0                    # Вт/м²
T_AMBIENT_NOCT = 20.0             # °C

SECONDS_PER_HOUR = 3600.0
MINUTES_PER_DAY = 1440


def to_kelvin(temp_c: float) -> float:
    return temp_c + KELVIN_OFFSET
