"""Verification of stationarity conditions for optimal control problems with a first-order state constraint."""
