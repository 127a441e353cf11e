from .svg_plot import SvgLineChart
from .seeding import sub_seed, spawn_seeds

__all__ = ['SvgLineChart', 'sub_seed', 'spawn_seeds']
