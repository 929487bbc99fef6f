"""Rebuild a three-layer 1 cm square from side-channel frames at several distances."""
from printleak.gcode import emit_gcode
from printleak.pipeline import repro_square, summary_table
from printleak.simulate import SimConfig

zero = repro_square(seed=0, distances=[15.0], base=SimConfig().zero_noise(), synchronized=True)
print("noise-free MTE:", zero[15.0].mte_percent, "%")

runs = repro_square(seed=1)
print(summary_table(runs))
print("reconstruction at 15 cm:\n" + emit_gcode(runs[15.0].report.reconstructed))
