"""Experiment harness: runner, convergence records and iteration tables"""
