"""Pretrained-component providers"""
