#!/usr/bin/env python3
"""
Run Logger for model computations
Captures library log records in memory so runners can attach the flagged
conditions of a run (non-recurrent parameters, clamped probabilities,
paths without price changes) to the results they write.
"""

import datetime
import logging
import threading
from collections import deque
from typing import Dict, List

LIBRARY_LOGGERS = ("model_core", "spectral_engine", "analytics", "fast_simulator",
                   "event_oracle", "diffusion_lab")


class RunLogHandler(logging.Handler):
    """Custom logging handler keeping the latest records of a run"""

    def __init__(self, max_logs: int = 500):
        super().__init__()
        self.logs = deque(maxlen=max_logs)
        # Handler.handle() already holds self.lock around emit()
        self._records_lock = threading.RLock()
        self.formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    def emit(self, record):
        with self._records_lock:
            self.logs.append({
                'timestamp': datetime.datetime.fromtimestamp(record.created),
                'logger': record.name,
                'level': record.levelname,
                'category': self._categorize(record),
                'message': record.getMessage(),
                'formatted': self.formatter.format(record),
            })

    def _categorize(self, record) -> str:
        """Group records by the library stage that produced them"""
        name = record.name
        if name in ("model_core",):
            return "Parameters"
        elif name in ("spectral_engine", "analytics"):
            return "Closed form"
        elif name in ("fast_simulator", "event_oracle"):
            return "Simulation"
        elif name == "diffusion_lab":
            return "Study"
        else:
            return "Other"

    def warnings(self) -> List[str]:
        """Messages of WARNING and above, without timestamps"""
        with self._records_lock:
            return [log['message'] for log in self.logs if log['level'] in ('WARNING', 'ERROR', 'CRITICAL')]

    def get_category_distribution(self) -> Dict[str, int]:
        with self._records_lock:
            categories = {}
            for log in self.logs:
                categories[log['category']] = categories.get(log['category'], 0) + 1
            return categories


def setup_run_logger(level: int = logging.WARNING) -> RunLogHandler:
    """Attach a RunLogHandler to every library logger"""
    handler = RunLogHandler()
    handler.setLevel(level)
    for name in LIBRARY_LOGGERS:
        logging.getLogger(name).addHandler(handler)
    return handler


def remove_run_logger(handler: RunLogHandler) -> None:
    for name in LIBRARY_LOGGERS:
        logging.getLogger(name).removeHandler(handler)
