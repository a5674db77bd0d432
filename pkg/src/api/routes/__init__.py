"""Conversion and evaluation route blueprints"""
