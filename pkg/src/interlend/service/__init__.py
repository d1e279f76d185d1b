"""Node runtime: configuration, persistence, HTTP API, wire protocol, simulation."""
