"""Test package for the accent conversion pipeline"""
