"""Sparse kernels, Matrix Market I/O and preconditioners"""
