"""Side-channel reconstruction of 3D printer toolpaths.

Modules: :mod:`~printleak.gcode` (G-code and toolpaths), :mod:`~printleak.ingest`
(sensor logs and framing), :mod:`~printleak.simulate` (synthetic emissions),
:mod:`~printleak.features`, :mod:`~printleak.gbdt`, :mod:`~printleak.taxonomy`
(the classifier cascade), :mod:`~printleak.reconstruct` and
:mod:`~printleak.pipeline` (end-to-end runs).
"""

__version__ = "0.1.0"
