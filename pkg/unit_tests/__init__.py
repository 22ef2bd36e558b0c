# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining tests for the quotient-space diffusion library."""
