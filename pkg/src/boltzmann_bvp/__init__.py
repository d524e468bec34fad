"""Stationary linearized Boltzmann BVP solver and estimate-verification harness."""
