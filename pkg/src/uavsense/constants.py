"""Physical constants and Table-I style waveform defaults."""

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23
REFERENCE_TEMPERATURE_K = 290.0

DEFAULT_CARRIER_HZ = 24e9
DEFAULT_BANDWIDTH_HZ = 100e6
DEFAULT_PULSE_DURATION_S = 1e-3
DEFAULT_SAMPLES_PER_PULSE = 128
DEFAULT_PULSE_COUNT = 64
DEFAULT_P_FA = 1e-3
