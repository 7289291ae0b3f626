"""Numerical Zygmund-Hoelder analysis and coordinate charts adapted to frames."""
