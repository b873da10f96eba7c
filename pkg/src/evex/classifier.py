"""Black-box classifier boundary: builtin analytic models and an external client.

External classifiers are child processes speaking newline-delimited JSON over
stdin/stdout:

* server -> client on start: ``{"hello":{"name":<str>,"classes":<int>}}``
* client -> server: ``{"id":<int>,"width":<int>,"height":<int>,
  "images":[<base64 raw row-major RGB8>, ...]}``
* server -> client: ``{"id":<int>,"probs":[[<float> x classes], ...]}``

Requests are strictly sequential with ids increasing from 0; either side
closing its stream ends the session. Any protocol violation, timeout, or
invalid probability vector is fatal to the run.
"""

from __future__ import annotations

import base64
import json
import math
import os
import selectors
import subprocess
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imaging import Image


class ClassifierError(Exception):
    """Base class for classifier failures (fatal to a run)."""


class SpawnError(ClassifierError):
    """The external classifier process could not be started."""


class ClassifierTimeout(ClassifierError):
    """The external classifier did not answer within the timeout."""


class ProtocolError(ClassifierError):
    """The external classifier violated the wire protocol."""


class InvalidPrediction(ClassifierError):
    """A probability vector failed the simplex invariants."""


@dataclass(frozen=True)
class Prediction:
    """Probability vector over classes; validated on construction."""

    probabilities: tuple[float, ...]

    def __post_init__(self):
        probs = self.probabilities
        if any(not math.isfinite(p) for p in probs):
            raise InvalidPrediction(f"non-finite probability in {probs}")
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise InvalidPrediction(f"probability outside [0, 1] in {probs}")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise InvalidPrediction(f"probabilities sum to {sum(probs)!r}, not 1")


@dataclass(frozen=True)
class ClassifierSpec:
    """Which classifier to run and its settings.

    kinds: ``builtin-constant`` (fixed probabilities), ``builtin-blob``
    (logistic response to color-matching pixels in a center region), and
    ``external`` (child process speaking the wire protocol).
    """

    kind: str
    class_count: int = 2
    # builtin-constant
    probabilities: tuple[float, ...] | None = None
    # builtin-blob: region is (x0, y0, x1, y1) half-open, None = central 32x32
    region: tuple[int, int, int, int] | None = None
    margin: int = 30
    gain: float = 10.0
    offset: float = 0.2
    # external
    command: tuple[str, ...] = ()
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ("builtin-constant", "builtin-blob", "external"):
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.kind == "builtin-constant":
            probs = self.probabilities
            if probs is None or len(probs) != self.class_count:
                raise ValueError("builtin-constant needs one probability per class")
            Prediction(tuple(float(p) for p in probs))
        if self.kind == "builtin-blob" and self.class_count != 2:
            raise ValueError("builtin-blob is a two-class model")
        if self.kind == "external" and not self.command:
            raise ValueError("external classifier needs a command line")

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "class_count": self.class_count}
        if self.kind == "builtin-constant":
            out["probabilities"] = list(self.probabilities)
        elif self.kind == "builtin-blob":
            out["region"] = list(self.region) if self.region else None
            out["margin"] = self.margin
            out["gain"] = self.gain
            out["offset"] = self.offset
        else:
            out["command"] = list(self.command)
            out["timeout"] = self.timeout
        return out

    @staticmethod
    def from_json(data: dict) -> "ClassifierSpec":
        kind = data.get("kind")
        if kind == "builtin-constant":
            return ClassifierSpec(
                kind=kind,
                class_count=int(data.get("class_count", 2)),
                probabilities=tuple(float(p) for p in data["probabilities"]),
            )
        if kind == "builtin-blob":
            region = data.get("region")
            return ClassifierSpec(
                kind=kind,
                class_count=2,
                region=tuple(int(v) for v in region) if region else None,
                margin=int(data.get("margin", 30)),
                gain=float(data.get("gain", 10.0)),
                offset=float(data.get("offset", 0.2)),
            )
        if kind == "external":
            return ClassifierSpec(
                kind=kind,
                class_count=int(data.get("class_count", 2)),
                command=tuple(str(c) for c in data["command"]),
                timeout=float(data.get("timeout", 30.0)),
            )
        raise ValueError(f"unknown classifier kind {kind!r}")


def builtin_constant(p1: float = 0.7) -> ClassifierSpec:
    """Two-class constant classifier with P(class 1) = p1."""
    return ClassifierSpec(kind="builtin-constant", class_count=2, probabilities=(1.0 - p1, p1))


def builtin_blob(
    region: tuple[int, int, int, int] | None = None,
    margin: int = 30,
    gain: float = 10.0,
    offset: float = 0.2,
) -> ClassifierSpec:
    """Two-class model: p1 = logistic(gain * (f - offset)) where f is the
    fraction of center-region pixels whose green channel exceeds red and blue
    by at least ``margin``."""
    return ClassifierSpec(
        kind="builtin-blob", class_count=2, region=region, margin=margin, gain=gain, offset=offset
    )


def external(command: Sequence[str], timeout: float = 30.0, class_count: int = 2) -> ClassifierSpec:
    return ClassifierSpec(
        kind="external", class_count=class_count, command=tuple(command), timeout=timeout
    )


def _center_region(width: int, height: int) -> tuple[int, int, int, int]:
    # central 32x32 square, clamped to the image
    x0 = max(0, (width - 32) // 2)
    y0 = max(0, (height - 32) // 2)
    return (x0, y0, min(width, x0 + 32), min(height, y0 + 32))


def _blob_predict(spec: ClassifierSpec, image: Image) -> Prediction:
    x0, y0, x1, y1 = spec.region or _center_region(image.width, image.height)
    patch = image.pixels[y0:y1, x0:x1].astype(np.int32)
    total = patch.shape[0] * patch.shape[1]
    if total == 0:
        raise ValueError("blob center region is empty")
    g = patch[:, :, 1]
    match = (g - patch[:, :, 0] >= spec.margin) & (g - patch[:, :, 2] >= spec.margin)
    f = int(match.sum()) / total
    p1 = 1.0 / (1.0 + math.exp(-spec.gain * (f - spec.offset)))
    return Prediction((1.0 - p1, p1))


class _LineReader:
    """Reads newline-terminated lines from a pipe with a timeout."""

    def __init__(self, stream, timeout: float):
        self._fd = stream.fileno()
        self._timeout = timeout
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._fd, selectors.EVENT_READ)

    def readline(self) -> bytes:
        while b"\n" not in self._buf:
            if not self._sel.select(self._timeout):
                raise ClassifierTimeout(f"no response within {self._timeout}s")
            chunk = os.read(self._fd, 65536)
            if not chunk:
                raise ProtocolError("classifier closed its output stream")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        self._sel.close()


class ExternalSession:
    """Single-owner session with one external classifier process."""

    # keep request lines a manageable size; concatenation of chunked batches
    # equals one big batch by the protocol contract
    MAX_IMAGES_PER_REQUEST = 64

    def __init__(self, spec: ClassifierSpec):
        if spec.kind != "external":
            raise ValueError("ExternalSession requires an external spec")
        self.spec = spec
        self._closed = False
        try:
            self._proc = subprocess.Popen(
                list(spec.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # server logs pass through to our stderr
            )
        except OSError as exc:
            raise SpawnError(f"cannot start classifier {spec.command!r}: {exc}") from exc
        self._reader = _LineReader(self._proc.stdout, spec.timeout)
        self._next_id = 0
        self.name, self.class_count = self._handshake()
        if spec.class_count != self.class_count:
            self.close()
            raise ProtocolError(
                f"classifier reports {self.class_count} classes, spec expects {spec.class_count}"
            )

    def _handshake(self) -> tuple[str, int]:
        try:
            line = self._reader.readline()
        except ClassifierError:
            self.close()
            raise
        try:
            msg = json.loads(line)
            hello = msg["hello"]
            name = str(hello["name"])
            classes = int(hello["classes"])
        except (ValueError, KeyError, TypeError) as exc:
            self.close()
            raise ProtocolError(f"malformed hello on line 1: {line[:200]!r}") from exc
        if classes < 2:
            self.close()
            raise ProtocolError(f"classifier reports {classes} classes, need >= 2")
        return name, classes

    def predict_batch(self, images: Sequence[Image]) -> list[Prediction]:
        _check_batch(images)
        out: list[Prediction] = []
        for start in range(0, len(images), self.MAX_IMAGES_PER_REQUEST):
            out.extend(self._request(images[start : start + self.MAX_IMAGES_PER_REQUEST]))
        return out

    def _request(self, images: Sequence[Image]) -> list[Prediction]:
        req_id = self._next_id
        self._next_id += 1
        payload = {
            "id": req_id,
            "width": images[0].width,
            "height": images[0].height,
            "images": [base64.b64encode(im.pixels.tobytes()).decode("ascii") for im in images],
        }
        try:
            self._proc.stdin.write(json.dumps(payload, separators=(",", ":")).encode() + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"classifier closed its input stream: {exc}") from exc
        line = self._reader.readline()
        try:
            msg = json.loads(line)
        except ValueError as exc:
            raise ProtocolError(f"unparseable response: {line[:200]!r}") from exc
        if msg.get("id") != req_id:
            raise ProtocolError(f"response id {msg.get('id')!r} does not match request {req_id}")
        probs = msg.get("probs")
        if not isinstance(probs, list) or len(probs) != len(images):
            raise ProtocolError(f"expected {len(images)} probability rows")
        preds = []
        for row in probs:
            if not isinstance(row, list) or len(row) != self.class_count:
                raise ProtocolError(f"expected {self.class_count} probabilities per row")
            preds.append(Prediction(tuple(float(p) for p in row)))
        return preds

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._reader.close()
        if self._proc.stdin:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self) -> "ExternalSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class Classifier:
    """Uniform batch-prediction handle over any ClassifierSpec."""

    spec: ClassifierSpec
    _session: ExternalSession | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.spec.kind == "external":
            self._session = ExternalSession(self.spec)

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    def predict_batch(self, images: Sequence[Image]) -> list[Prediction]:
        _check_batch(images)
        if self.spec.kind == "builtin-constant":
            pred = Prediction(tuple(float(p) for p in self.spec.probabilities))
            return [pred] * len(images)
        if self.spec.kind == "builtin-blob":
            return [_blob_predict(self.spec, im) for im in images]
        return self._session.predict_batch(images)

    def close(self) -> None:
        if self._session is not None:
            self._session.close()
            self._session = None

    def __enter__(self) -> "Classifier":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _check_batch(images: Sequence[Image]) -> None:
    if not images:
        raise ValueError("empty prediction batch")
    w, h = images[0].width, images[0].height
    for im in images:
        if im.width != w or im.height != h:
            raise ValueError("all images in a batch must share dimensions")


def predict_batch(spec: ClassifierSpec, images: Sequence[Image]) -> list[Prediction]:
    """One-shot batch prediction (opens and closes a session for external kinds)."""
    with Classifier(spec) as clf:
        return clf.predict_batch(images)


def external_handshake(spec: ClassifierSpec) -> tuple[int, str]:
    """Spawn the external classifier, consume its hello, and return (classes, name)."""
    with ExternalSession(spec) as session:
        return session.class_count, session.name
