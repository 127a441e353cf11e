from .analyzer import IntrusionAnalyzer, RunConfig
from .report_generator import ReportGenerator

__all__ = ['IntrusionAnalyzer', 'RunConfig', 'ReportGenerator']
