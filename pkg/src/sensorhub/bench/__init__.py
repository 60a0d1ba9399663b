"""Load-generating benchmark: request-count sweeps against the hub's JSON and
XML endpoints, with latency, body-size, and server-CPU reporting."""
