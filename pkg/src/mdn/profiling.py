"""Component wall-time attribution for inference runs.

Scopes may nest; elapsed time lands on the innermost open scope only, so
a parent component never double-counts its children. Timer overhead is a
pair of perf_counter calls per scope.
"""
from __future__ import annotations

from contextlib import contextmanager
from time import perf_counter

COMPONENTS = (
    "encoder_attention",
    "encoder_ffn",
    "decoder_attention",
    "decoder_ffn",
    "output_projection",
)


class ComponentTimer:
    __slots__ = ("seconds", "_stack")

    def __init__(self):
        self.seconds: dict[str, float] = {c: 0.0 for c in COMPONENTS}
        self._stack: list = []

    def reset(self):
        self.seconds = {c: 0.0 for c in COMPONENTS}
        self._stack = []

    def start(self, name: str):
        self._stack.append([name, perf_counter(), 0.0])

    def stop(self):
        name, t0, child = self._stack.pop()
        dt = perf_counter() - t0
        self.seconds[name] = self.seconds.get(name, 0.0) + (dt - child)
        if self._stack:
            self._stack[-1][2] += dt

    @contextmanager
    def track(self, name: str):
        self.start(name)
        try:
            yield
        finally:
            self.stop()
