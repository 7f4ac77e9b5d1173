"""Krylov solvers: GMRES, flexible GMRES and FT-GMRES"""
