"""Regularized self-play solvers for tabular preference games."""
