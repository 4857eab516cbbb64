"""Agent checkpoints: canonical JSON with base64 float64 parameter arrays."""

import base64
import binascii
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .ddpg import DdpgAgent, Hyperparams
from .errors import CheckpointError, ConfigurationError, DimensionError
from .nn_core import export_adam_state, export_parameters, import_adam_state, import_parameters
from .orchestrator import action_dim, state_dim

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "multiac6-checkpoint"
CHECKPOINT_VERSION = 1
NETWORK_NAMES = ("actor", "critic", "actor_target", "critic_target")
CHECKPOINT_ROLES = ("orientation", "position", "ac3", "ac6")


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to rebuild a trained agent."""

    role: str
    architecture: Dict[str, Dict[str, Any]]
    parameters: Dict[str, np.ndarray]
    optimizers: Dict[str, Dict[str, Any]]
    metadata: Dict[str, Any] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def encode_array(values: np.ndarray) -> Dict[str, Any]:
    data = np.ascontiguousarray(values, dtype="<f8").tobytes()
    return {"length": int(values.size), "data": base64.b64encode(data).decode("ascii")}


def decode_array(encoded: Dict[str, Any], name: str) -> np.ndarray:
    """Decode a base64 array and check it against its declared length."""
    try:
        raw = base64.b64decode(encoded["data"], validate=True)
        length = int(encoded["length"])
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise CheckpointError(f"Array '{name}' is malformed: {exc}") from exc
    if len(raw) % 8 != 0 or len(raw) // 8 != length:
        raise CheckpointError(f"Array '{name}' declares {length} values but holds {len(raw) / 8:g}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def checkpoint_from_agent(agent: DdpgAgent, role: str, m: int, metadata: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """Snapshot networks, targets and optimizer moments of ``agent``."""
    if role not in CHECKPOINT_ROLES:
        raise CheckpointError(f"Unknown checkpoint role '{role}'")
    architecture, parameters = {}, {}
    for name in NETWORK_NAMES:
        descriptor, flat = export_parameters(getattr(agent, name))
        parameters[name] = flat
        if name in ("actor", "critic"):
            architecture[name] = descriptor
    optimizers = {"actor": export_adam_state(agent.actor_opt), "critic": export_adam_state(agent.critic_opt)}
    meta = {
        "m": m,
        "seed": agent.seed,
        "hyperparams": agent.hyperparams.to_dict(),
        "updates_applied": agent.updates_applied,
        "episodes_completed": 0,
        "dataset_hash": "",
    }
    meta.update(metadata or {})
    return Checkpoint(role, architecture, parameters, optimizers, meta)


def agent_from_checkpoint(checkpoint: Checkpoint, expected_role: Optional[str] = None) -> DdpgAgent:
    """Rebuild a DdpgAgent; architecture and role are checked against the metadata."""
    if expected_role is not None and checkpoint.role != expected_role:
        raise CheckpointError(f"Checkpoint holds a {checkpoint.role} agent, {expected_role} expected")
    meta = checkpoint.metadata
    try:
        hyperparams = Hyperparams(**meta["hyperparams"]).validate()
        m = int(meta["m"])
        s_dim, a_dim = state_dim(checkpoint.role, m), action_dim(checkpoint.role)
        agent = DdpgAgent(s_dim, a_dim, hyperparams, int(meta.get("seed", 0)))
        for name in NETWORK_NAMES:
            descriptor = checkpoint.architecture["actor" if name.startswith("actor") else "critic"]
            net = import_parameters(descriptor, checkpoint.parameters[name])
            if not net.same_architecture(getattr(agent, name)):
                raise CheckpointError(f"Network '{name}' has layer sizes {net.layer_sizes}, the "
                                      f"{checkpoint.role} role needs {getattr(agent, name).layer_sizes}")
            setattr(agent, name, net)
        agent.actor_opt = import_adam_state(agent.actor, checkpoint.optimizers["actor"])
        agent.critic_opt = import_adam_state(agent.critic, checkpoint.optimizers["critic"])
    except (KeyError, TypeError, ConfigurationError, DimensionError) as exc:
        raise CheckpointError(f"Checkpoint is incompatible: {exc}") from exc
    agent.updates_applied = int(meta.get("updates_applied", 0))
    return agent


def _to_document(checkpoint: Checkpoint) -> Dict[str, Any]:
    optimizers = {}
    for name, state in checkpoint.optimizers.items():
        optimizers[name] = {key: encode_array(value) if isinstance(value, np.ndarray) else value
                            for key, value in state.items()}
    return {
        "format": CHECKPOINT_FORMAT,
        "version": checkpoint.version,
        "role": checkpoint.role,
        "architecture": checkpoint.architecture,
        "parameters": {name: encode_array(values) for name, values in checkpoint.parameters.items()},
        "optimizers": optimizers,
        "metadata": checkpoint.metadata,
    }


def dumps_checkpoint(checkpoint: Checkpoint) -> str:
    return json.dumps(_to_document(checkpoint), sort_keys=True, indent=1) + "\n"


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    """Write atomically: a temporary file in the target directory replaces ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".checkpoint-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(dumps_checkpoint(checkpoint))
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.info(f"Checkpoint for {checkpoint.role} agent written to {path}")


def loads_checkpoint(text: str) -> Checkpoint:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"Checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("Not a MultiAC6 checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {document.get('version')}")
    try:
        role = document["role"]
        if role not in CHECKPOINT_ROLES:
            raise CheckpointError(f"Unknown checkpoint role '{role}'")
        parameters = {name: decode_array(document["parameters"][name], name) for name in NETWORK_NAMES}
        optimizers = {}
        for name, state in document["optimizers"].items():
            optimizers[name] = {key: decode_array(value, f"{name}.{key}") if isinstance(value, dict) else value
                                for key, value in state.items()}
        return Checkpoint(role, document["architecture"], parameters, optimizers, document["metadata"],
                          document["version"])
    except (KeyError, TypeError, AttributeError) as exc:
        raise CheckpointError(f"Checkpoint is missing fields: {exc}") from exc


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as handle:
        return loads_checkpoint(handle.read())


def describe_checkpoint(checkpoint: Checkpoint) -> Dict[str, Any]:
    """Role, layer sizes, parameter counts and metadata for display."""
    return {
        "role": checkpoint.role,
        "version": checkpoint.version,
        "actor_layers": checkpoint.architecture["actor"]["layer_sizes"],
        "critic_layers": checkpoint.architecture["critic"]["layer_sizes"],
        "parameter_counts": {name: int(values.size) for name, values in checkpoint.parameters.items()},
        "metadata": {key: value for key, value in checkpoint.metadata.items() if key != "hyperparams"},
        "hyperparams": checkpoint.metadata.get("hyperparams", {}),
    }
