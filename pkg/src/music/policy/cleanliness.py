from __future__ import annotations

import logging

from music.command.compiler import default_settings
from music.command.policy import Directive, SensingPolicy
from music.errors import DetectorError
from music.policy.base import Policy, PolicyContext, PolicyParams, register_policy
from music.policy.detector import Detector, detector_stub
from music.protocol import ImageDataMsg

log = logging.getLogger(__name__)


def latest_image(window):
    for entry in reversed(window):
        if isinstance(entry.message, ImageDataMsg):
            return entry
    return None


@register_policy("cleanliness")
class CleanlinessPolicy(Policy):
    """Periodic camera captures; a dirty scene switches on the auxiliary sensors."""

    def __init__(self, params: PolicyParams | None = None, detector: Detector = detector_stub):
        super().__init__(params)
        self.detector = detector
        self._scores: dict[tuple[str, float], float | None] = {}
        self.failures = 0

    def _score(self, imei: str, entry) -> float | None:
        key = (imei, entry.received_at)
        if key not in self._scores:
            try:
                self._scores[key] = self.detector(entry.message.image_bytes())
            except (DetectorError, ValueError) as exc:
                log.error("detector failed on image from %s at %.3f: %s", imei, entry.received_at, exc)
                self.failures += 1
                self._scores[key] = None
        return self._scores[key]

    def tick(self, ctx: PolicyContext) -> SensingPolicy:
        p = self.params
        aux = set(p.aux_sensors)
        directives = {}
        dirt = {}
        for node in ctx.alive_nodes():
            base = tuple(s for s in ctx.base_sensors(node) if s.name not in aux)
            entry = latest_image(ctx.windows.get(node.imei, ()))
            capture = entry is None or ctx.now - entry.received_at >= p.image_period_s
            if entry is None:
                directives[node.imei] = Directive(active=bool(base), sensors=base, capture_image=capture)
                continue
            score = self._score(node.imei, entry)
            if score is None:
                prev = ctx.previous.get(node.imei) if ctx.previous is not None else None
                directives[node.imei] = prev or Directive(active=bool(base), sensors=base, capture_image=capture)
                continue
            dirt[node.imei] = score
            sensors = base
            if score > p.dirt_threshold:
                extra = default_settings([n for n in node.sensors if n in aux], ctx.sensor_table)
                sensors = tuple(sorted(base + extra, key=lambda s: s.name))
            directives[node.imei] = Directive(active=bool(sensors), sensors=sensors, capture_image=capture)
        # forget scores of images that dropped out of the windows
        live = {(i, e.received_at) for i, w in ctx.windows.items() for e in w if isinstance(e.message, ImageDataMsg)}
        self._scores = {k: v for k, v in self._scores.items() if k in live}
        return SensingPolicy(ctx.policy_id, directives, {"dirt": dirt, "detector_failures": self.failures})
