"""exoadapt: simulated exoskeleton gait personalization stack.

Series-elastic plant models, a two-time-scale variable impedance controller
with a disturbance observer, rhythmic/discrete movement primitives with
adaptive-oscillator phase estimation, a window autoencoder for movement
anomaly scoring, subject-to-subject task translation, and human-in-the-loop
trajectory optimization, plus a CLI that wires them into reproducible
experiments.
"""

__version__ = "0.1.0"
