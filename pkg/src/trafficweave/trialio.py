"""Line-oriented trial file format (lossless, full double precision).

Layout::

    # trafficweave-trials v1
    # dt=0.1 road_start=-135.0 lane_width=3.7 left_center=-1.85
    trial id=<id> fast_car_lane=<lane> v1=<v> delta_v=<dv> t_co=<t> outcome=<o> meta=<json>
    <t> <s_h> <tau_h> <sdot_h> <taudot_h> <s_r> <tau_r> <sdot_r> <taudot_r> <tauddot_r> \
        <sddot_h> <tauddot_h> <sddot_r> <taudddot_r>
    ...
    end

Each trial block has T+1 state rows; the final row omits the four action
columns (the trajectory is one state longer than the action sequence).
Floats are written with shortest round-trip repr, so export/import is
bitwise lossless.  The parser rejects NaN and inconsistent blocks.
"""

from __future__ import annotations

import json
import math
from typing import Iterable

from .dynamics import (
    DEFAULT_ROAD,
    HumanAction,
    HumanState,
    JointState,
    RoadFrame,
    RobotAction,
    RobotState,
)
from .synth import InitialCondition, Trial

FORMAT_NAME = "trafficweave-trials"
FORMAT_VERSION = 1


class TrialFormatError(ValueError):
    """Malformed or inconsistent trial file content."""


def export_trials(trials: Iterable[Trial], path: str,
                  road: RoadFrame = DEFAULT_ROAD) -> None:
    with open(path, "w") as f:
        f.write(f"# {FORMAT_NAME} v{FORMAT_VERSION}\n")
        f.write(f"# dt={road.dt!r} road_start={road.road_start_s!r} "
                f"lane_width={road.lane_width!r} left_center={road.left_lane_center_tau!r}\n")
        for trial in trials:
            ic = trial.ic
            meta = json.dumps(trial.metadata, separators=(",", ":"))
            f.write(f"trial id={trial.id} fast_car_lane={ic.fast_car_lane} "
                    f"v1={ic.v1!r} delta_v={ic.delta_v!r} t_co={ic.t_co!r} "
                    f"outcome={trial.outcome} meta={meta}\n")
            for i, x in enumerate(trial.trajectory):
                h, r = x.human, x.robot
                cols = [x.t, h.s, h.tau, h.s_dot, h.tau_dot,
                        r.s, r.tau, r.s_dot, r.tau_dot, r.tau_ddot]
                if i < len(trial.actions):
                    u_h, u_r = trial.actions[i]
                    cols += [u_h.s_ddot, u_h.tau_ddot, u_r.s_ddot, u_r.tau_dddot]
                f.write(" ".join(repr(c) for c in cols) + "\n")
            f.write("end\n")


def _parse_float(token: str, where: str) -> float:
    try:
        v = float(token)
    except ValueError as e:
        raise TrialFormatError(f"{where}: bad float {token!r}") from e
    if math.isnan(v):
        raise TrialFormatError(f"{where}: NaN is not allowed")
    return v


def _parse_header_fields(line: str, where: str) -> dict[str, str]:
    body = line[len("trial "):]
    fields: dict[str, str] = {}
    if " meta=" in body:
        body, meta = body.split(" meta=", 1)
        fields["meta"] = meta
    for token in body.split():
        if "=" not in token:
            raise TrialFormatError(f"{where}: malformed field {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    return fields


def import_trials(path: str) -> list[Trial]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        return []
    if not lines[0].startswith(f"# {FORMAT_NAME} v"):
        raise TrialFormatError(f"{path}: not a {FORMAT_NAME} file")
    version = lines[0].split("v")[-1].strip()
    if version != str(FORMAT_VERSION):
        raise TrialFormatError(f"{path}: unsupported format version {version!r}")

    trials: list[Trial] = []
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line or line.startswith("#"):
            continue
        if not line.startswith("trial "):
            raise TrialFormatError(f"{path}:{i}: expected trial header, got {line!r}")
        fields = _parse_header_fields(line, f"{path}:{i}")
        trial_id = fields.get("id", "<unknown>")
        where = f"{path}: trial {trial_id}"
        try:
            ic = InitialCondition(
                fast_car_lane=fields["fast_car_lane"],
                v1=_parse_float(fields["v1"], where),
                delta_v=_parse_float(fields["delta_v"], where),
                t_co=_parse_float(fields["t_co"], where),
            )
            outcome = fields["outcome"]
            metadata = json.loads(fields.get("meta", "{}"))
        except KeyError as e:
            raise TrialFormatError(f"{where}: missing header field {e}") from e
        except json.JSONDecodeError as e:
            raise TrialFormatError(f"{where}: bad metadata json: {e}") from e

        trajectory: list[JointState] = []
        actions: list[tuple[HumanAction, RobotAction]] = []
        closed = False
        while i < len(lines):
            row = lines[i]
            i += 1
            if row == "end":
                closed = True
                break
            cols = row.split()
            if len(cols) not in (10, 14):
                raise TrialFormatError(
                    f"{where}: row with {len(cols)} columns (expected 10 or 14)")
            vals = [_parse_float(c, where) for c in cols]
            trajectory.append(JointState(
                human=HumanState(s=vals[1], tau=vals[2], s_dot=vals[3], tau_dot=vals[4]),
                robot=RobotState(s=vals[5], tau=vals[6], s_dot=vals[7],
                                 tau_dot=vals[8], tau_ddot=vals[9]),
                t=int(vals[0]),
            ))
            if len(cols) == 14:
                actions.append((HumanAction(vals[10], vals[11]),
                                RobotAction(vals[12], vals[13])))
        if not closed:
            raise TrialFormatError(f"{where}: unterminated trial block")
        if len(trajectory) != len(actions) + 1:
            raise TrialFormatError(
                f"{where}: trajectory/action length mismatch "
                f"({len(trajectory)} states, {len(actions)} actions)")
        trials.append(Trial(id=trial_id, ic=ic, trajectory=trajectory,
                            actions=actions, outcome=outcome, metadata=metadata))
    return trials
