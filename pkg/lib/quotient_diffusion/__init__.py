# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Diffusion and flow models on quotient spaces of point clouds."""
