"""Parse a small G-code program, label its moves, and write it back out."""
from printleak.gcode import emit_gcode, toolpath_from_gcode

PROGRAM = """\
G21 ; millimetres
G90
G1 X10 Y0 F600 E0.5   ; print right
G1 Y10 E1.0           ; print up
G0 X0 F3000           ; travel left, fast
G1 Z0.4 F60           ; next layer
"""

path = toolpath_from_gcode(PROGRAM)
for seg in path:
    print(f"{seg.start} -> {seg.end}  {seg.length:5.2f} mm  {seg.label}")

text = emit_gcode(path)
print("\nre-emitted:\n" + text)
again = toolpath_from_gcode(text, start=path.origin)
print("round trip preserves every segment:", [s.end for s in again] == [s.end for s in path])
