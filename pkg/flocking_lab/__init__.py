"""Cucker-Smale / Motsch-Tadmor オイラー整列系の数値ラボ"""

__version__ = "0.1.0"
