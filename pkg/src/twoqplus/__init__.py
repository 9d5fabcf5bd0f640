"""Scheduling-delay-aware M/G/1 analysis, threshold solving and flow-level
simulation for the two-class FCFS/SRPT (2QPlus) system."""

__version__ = "0.1.0"
