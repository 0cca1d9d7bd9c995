"""
Test suite for iss-lab.
"""
