"""Distribution kernels, estimators, tests, selection rules and batch runs."""
