from __future__ import annotations

import json

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import ArtifactError, FingerprintMismatchError
from .learner import AttenuationLevel, Controller, OuterRound, ValueFunction
from .models import getLogger
from .traffic import MixedTrafficModel
from .types import ArtifactPayload


__all__ = (
    "ARTIFACT_FORMAT",
    "ARTIFACT_VERSION",
    "ControllerArtifact",
    "save_artifact",
    "load_artifact",
)


logger = getLogger(__name__)

ARTIFACT_FORMAT = "hinfplatoon-controller"
ARTIFACT_VERSION = 1


@dataclass(eq=False)
class ControllerArtifact:
    """
    A certified `(V, u, gamma)` triple bound to the model it was learned on.

    On disk this is one JSON object::

        {
          "format": "hinfplatoon-controller",
          "version": 1,
          "fingerprint": "<sha-256 of the model>",
          "outer": 3,
          "gamma": 1.23, "gamma_sq": 1.5129,
          "state_dim": 6, "inputs": 1,
          "value": {"basis": [[2, 0, ...], ...], "coeffs": [...]},
          "controller": [[[exponents], coefficient], ...]   # one list per input
        }
    """

    outer: int
    attenuation: AttenuationLevel
    value: ValueFunction
    controller: Controller
    fingerprint: str

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} outer={self.outer} gamma={self.attenuation.gamma:.6g} "
            f"fingerprint='{self.fingerprint[:12]}'>"
        )

    @classmethod
    def from_round(cls, model: MixedTrafficModel, result: OuterRound) -> "ControllerArtifact":
        return cls(result.index, result.attenuation, result.value, result.controller, model.fingerprint())

    def to_payload(self) -> ArtifactPayload:
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "fingerprint": self.fingerprint,
            "outer": self.outer,
            "gamma": self.attenuation.gamma,
            "gamma_sq": self.attenuation.gamma_sq,
            "state_dim": self.controller.nvars,
            "inputs": self.controller.m,
            "value": self.value.to_payload(),
            "controller": self.controller.to_payload(),
        }

    @classmethod
    def from_payload(cls, payload: ArtifactPayload) -> "ControllerArtifact":
        """
        Raises
        ------
        ArtifactError
            Wrong format, unsupported version or missing fields.
        """
        if not isinstance(payload, dict) or payload.get("format") != ARTIFACT_FORMAT:
            raise ArtifactError("Not a controller artifact.")
        version = payload.get("version")
        if version != ARTIFACT_VERSION:
            raise ArtifactError(f"Unsupported artifact version {version}. Expected {ARTIFACT_VERSION}.")
        try:
            nvars = int(payload["state_dim"])
            return cls(
                int(payload["outer"]),
                AttenuationLevel(float(payload["gamma_sq"])),
                ValueFunction.from_payload(payload["value"]),
                Controller.from_payload(nvars, payload["controller"]),
                str(payload["fingerprint"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ArtifactError(f"Malformed controller artifact: {exc}") from exc

    def check_model(self, model: MixedTrafficModel, path: Union[str, Path] = "<memory>") -> None:
        expected = model.fingerprint()
        if self.fingerprint != expected:
            raise FingerprintMismatchError(str(path), expected, self.fingerprint)


def save_artifact(artifact: ControllerArtifact, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(artifact.to_payload(), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.debug("Saved %r to %s.", artifact, path)
    return path


def load_artifact(path: Union[str, Path], model: Optional[MixedTrafficModel] = None) -> ControllerArtifact:
    """
    Reads an artifact and, when `model` is given, refuses it unless the fingerprints match.

    Raises
    ------
    ArtifactError
        Missing file or malformed content.
    FingerprintMismatchError
        The artifact belongs to another model.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Controller artifact `{path}` not found.")
    try:
        with path.open(encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"Artifact `{path}` is not valid JSON.") from exc
    artifact = ControllerArtifact.from_payload(payload)
    if model is not None:
        artifact.check_model(model, path)
    return artifact
