"""Tests package for ORCU"""
