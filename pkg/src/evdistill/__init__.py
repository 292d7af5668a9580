"""Event-stream dataset distillation for spiking neural networks.

Compresses a labeled event dataset into a handful of synthetic integer event
grids by matching amplitude/phase statistics of densified spike features
through a frozen teacher SNN, then verifies the result by training fresh
students on the distilled set.
"""

__version__ = "0.1.0"
