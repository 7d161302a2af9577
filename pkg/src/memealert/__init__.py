"""Social-media alerting and event-study toolkit for meme-stock episodes."""

from .alert_engine import AlertConfig, AlertState, run_alert_pipeline
from .data_ingest import ConversationTree, MarketSeries, parse_thread_dump
from .event_study import EventStudyConfig, run_event_study, select_events
from .social_graph import pagerank, reduce_trees

__all__ = [
    "AlertConfig", "AlertState", "ConversationTree", "EventStudyConfig", "MarketSeries",
    "pagerank", "parse_thread_dump", "reduce_trees", "run_alert_pipeline", "run_event_study",
    "select_events",
]
__version__ = "0.1.0"
