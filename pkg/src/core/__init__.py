"""Core routines for process-matrix tomography of the quantum SWITCH."""
