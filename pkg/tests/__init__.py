"""
Test package for raftlab
"""
