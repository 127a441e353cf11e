import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError
from .evaluation import DetectionReport, summarize
from .utils.svg_plot import SvgLineChart

logger = logging.getLogger(__name__)


class ReportGenerator:
    """Write detection tables, report JSON, plots and the markdown summary."""

    def __init__(self, chart: Optional[SvgLineChart] = None):
        self.chart = chart or SvgLineChart()

    def _write_text(self, path: str, text: str) -> str:
        try:
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(text)
        except OSError as e:
            raise OSError(f"Failed to write {path}: {e}") from e
        return path

    def write_json(self, data: Dict, path: str) -> str:
        return self._write_text(path, json.dumps(data, indent=2) + '\n')

    def write_table(self, frame: pd.DataFrame, path: str) -> str:
        """CSV with LF endings; NaN becomes an empty cell."""
        frame.to_csv(path, index=False, lineterminator='\n', na_rep='')
        return path

    def write_detection(self, report: DetectionReport, output_dir: str, stem: str) -> Dict[str, str]:
        """
        Write the per-second detection CSV (when the run produced one) and
        the report JSON.

        Args:
            report: Scored detector run
            output_dir: Run directory
            stem: File stem, e.g. 'sarima_port_pairs'

        Returns:
            Dict[str, str]: Paths by kind ('table', 'report')
        """
        paths = {}
        if report.trace is not None:
            paths['table'] = self.write_table(report.trace, os.path.join(output_dir, f'detection_{stem}.csv'))
        paths['report'] = self.write_json(report.to_dict(), os.path.join(output_dir, f'report_{stem}.json'))
        return paths

    def write_profiles(self, profiles: Dict[str, np.ndarray], labels: Sequence[bool], path: str) -> str:
        """Profile CSV: second, one <feature>_profile column per feature, label."""
        labels = np.asarray(labels, dtype=bool)
        frame = pd.DataFrame({'second': np.arange(labels.shape[0], dtype=np.int64)})
        for feature, values in profiles.items():
            frame[f'{feature}_profile'] = values
        frame['label'] = labels.astype(np.int64)
        return self.write_table(frame, path)

    def write_plot(self, path: str, values: Sequence[float], title: str, threshold: Optional[float],
                   labels: Sequence[bool], flagged: Sequence[int]) -> str:
        return self.chart.save(path, values, title=title, threshold=threshold,
                               labels=labels, flagged=flagged)

    def read_reports(self, paths: Sequence[str]) -> List[DetectionReport]:
        reports = []
        for path in paths:
            with open(path, 'r', encoding='utf-8') as f:
                try:
                    data = json.load(f)
                except json.JSONDecodeError as e:
                    raise ValidationError(f"{path} is not a report JSON: {e}")
            reports.append(DetectionReport.from_dict(data))
        return reports

    def write_summary(self, reports: Sequence[DetectionReport], output_path: str) -> str:
        """Markdown comparison table of detector runs."""
        path = self._write_text(output_path, summarize(reports))
        logger.info("Summary of %d reports written to %s", len(reports), path)
        return path
