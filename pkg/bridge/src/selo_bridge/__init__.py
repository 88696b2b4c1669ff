"""selo-bridge: reference external scorer speaking the selokit stdio
protocol, with deterministic stub modes and a pluggable model adapter."""

__version__ = "0.1.0"
