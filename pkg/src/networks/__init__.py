"""Torch modules behind the acoustic model and the synthesizer"""
