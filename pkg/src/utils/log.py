import logging
from typing import List, Optional

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

_configured = False


def setup_logging(level: str = "INFO") -> None:
    """Configures the root handler once per process."""
    global _configured
    if _configured:
        logging.getLogger().setLevel(level.upper())
        return
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)
    _configured = True


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def stage_banner(logger: logging.Logger, stage: str, run_log: Optional[List[str]] = None) -> None:
    """Announces a pipeline stage, optionally recording it in the run log."""
    logger.info("---  EXECUTING %s ---", stage.upper())
    if run_log is not None:
        run_log.append(f"{stage}: started.")
