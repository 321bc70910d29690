"""boardsim: deterministic simulator of a multi-board qubit control system.

The package models the full control chain at desk scale: a shared reference
clock fanned out to per-board conditioners (`timebase`), a wired-AND barrier
bus (`syncbus`), cycle-accurate timing processors (`tproc`), DDS/DDC signal
chains (`dsp`), the DC+RF flux front-end (`afe`), a mock 10-qubit QPU
(`qpu`), and a multi-board orchestrator (`orchestrator`) driven from the
`boardsim` command line.
"""

__version__ = "0.1.0"
