"""sensorhub: a sensing data hub with a navigable REST entity API, an
XML sensor-observation facade over the same store, a compact edge-message
codec, and a scaling benchmark CLI."""

__version__ = "0.1.0"
