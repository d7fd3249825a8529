"""Privacy-preserving gait verification: a verifier, a privatizer trained
against it, attribute attackers and the evaluation harness."""

__version__ = "0.1.0"
