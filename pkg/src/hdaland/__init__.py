"""Hazard detection and avoidance for powered lunar descent.

Procedural terrain and safety maps, a pseudo-LIDAR sensor, 3-DOF dynamics,
ZEM/ZEV guidance, an episodic environment, a numpy network toolkit, a TD3
agent, comparison baselines and a command-line front end.
"""

__version__ = "0.1.0"
