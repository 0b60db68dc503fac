"""Contamination audit toolkit: find evaluation samples memorisable from a
training corpus via paired question/answer embedding similarity, derive
Least Similar and Unmemorisable subsets, and compare model runs on them."""

__version__ = "0.1.0"
