"""Refinement-risk analysis: Kripke/CTL checking, attack trees, refinement, and a contact-tracing case study."""

__version__ = "0.1.0"
