"""Embedded page-based storage engine with B-tree, hash and columnstore
indexes, a read-cost planner and a workload-driven index advisor."""
from .advisor import Advisor, Recommendation, Workload, evaluate, parse_workload, recommend
from .catalog import ColumnDef, IndexDef, IndexKind, TableSchema
from .encoding import ColumnType
from .engine import AuditReport, Database, TraceEvent, replay_trace
from .errors import PdexError
from .planner import AccessPlan, PlanExplain, PlanKind
from .predicate import Atom
from .query import Query, parse_conjunction, parse_query, render_query
from .stats import IndexStats, SelectivityReport

__all__ = [
    "AccessPlan", "Advisor", "Atom", "AuditReport", "ColumnDef", "ColumnType", "Database",
    "IndexDef", "IndexKind", "IndexStats", "PdexError", "PlanExplain", "PlanKind", "Query",
    "Recommendation", "SelectivityReport", "TableSchema", "TraceEvent", "Workload", "evaluate",
    "parse_conjunction", "parse_query", "parse_workload", "recommend", "render_query",
    "replay_trace",
]
