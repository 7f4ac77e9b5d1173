"""Fault engine - failable regions, injection, logging and repair"""
