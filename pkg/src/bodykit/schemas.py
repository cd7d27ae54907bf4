"""JSON Schema (draft 2020-12) documents for every JSON file the CLI writes."""

from __future__ import annotations

_NUM = {"type": "number"}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_POINTS = {"type": "array", "items": _VEC3}
_MAT9 = {"type": "array", "items": _NUM, "minItems": 9, "maxItems": 9}


def _obj(properties: dict, required=None, extra: bool = False) -> dict:
    return {
        "type": "object",
        "properties": properties,
        "required": sorted(properties) if required is None else required,
        "additionalProperties": extra,
    }


POSE = _obj({"joint_rotations": _POINTS, "root_translation": _VEC3})
SHAPE = _obj({"coefficients": {"type": "array", "items": _NUM}})
SKELETON = _obj({"joints": _POINTS, "joint_names": {"type": "array", "items": {"type": "string"}}})

MODEL = _obj(
    {
        "format_version": {"const": 1},
        "template_vertices": _POINTS,
        "faces": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3}},
        "lbs_weights": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "parents": {"type": "array", "items": {"type": "integer", "minimum": -1}},
        "joint_regressor": _obj({
            "shape": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
            "rows": {"type": "array", "items": {"type": "integer"}},
            "cols": {"type": "array", "items": {"type": "integer"}},
            "values": {"type": "array", "items": _NUM},
        }),
        "joint_names": {"type": "array", "items": {"type": "string"}},
        "shape_basis": {"type": "array"},
    },
    required=["format_version", "template_vertices", "faces", "lbs_weights", "parents", "joint_regressor"],
)

IK_RESULT = _obj({
    "local_rotations": {"type": "array", "items": _MAT9},
    "global_rotations": {"type": "array", "items": _MAT9},
    "pose": {"type": "array", "items": _NUM},
    "root_translation": _VEC3,
    "per_joint_residual": {"type": "array", "items": _NUM},
    "flagged_joints": {"type": "array", "items": {"type": "integer"}},
    "shape": SHAPE,
}, required=["local_rotations", "global_rotations", "pose", "root_translation", "per_joint_residual", "flagged_joints"])

FIT_RESULT = _obj({
    "pose": POSE,
    "shape": SHAPE,
    "translation": _VEC3,
    "objective_trace": {"type": "array", "items": _NUM, "minItems": 1},
    "final_objective": _NUM,
    "final_mpjpe_to_targets": {"type": "number", "minimum": 0},
    "converged": {"type": "boolean"},
    "iterations": {"type": "integer", "minimum": 0},
    "joints": _POINTS,
})

FIT_BATCH = _obj({
    "items": {"type": "array", "items": _obj({
        "source": {"type": "string"},
        "result": {"oneOf": [FIT_RESULT, {"type": "null"}]},
        "error": {"type": ["string", "null"]},
    })},
})

HIERARCHY = _obj({
    "requested_levels": {"type": "integer", "minimum": 1},
    "achieved_levels": {"type": "integer", "minimum": 0},
    "level_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    "parent_of": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
    "edges": {"type": "array", "items": {"type": "array"}},
    "weighting": {"enum": ["inverse_length", "unit"]},
})

SCAN_REPORT = _obj({
    "scan_config": {"type": "object"},
    "point_count": {"type": "integer", "minimum": 0},
    "ray_count": {"type": "integer", "minimum": 0},
    "crop": {"oneOf": [{"type": "null"}, _obj({
        "config": {"type": "object"},
        "mode": {"enum": ["train", "eval"]},
        "pelvis": _VEC3,
        "transform": _obj({"rotation": {"type": "array"}, "translation": _VEC3, "yaw": _NUM, "jitter": _VEC3}),
    })]},
})

_METRICS = {
    "type": "object",
    "properties": {k: {"type": ["number", "null"]} for k in (
        "mpjpe_cm", "pa_mpjpe_cm", "mpvpe_cm", "mpere", "cloud_to_mesh_max_m", "cloud_to_mesh_mean_m",
    )},
    "additionalProperties": False,
}

EVAL_REPORT = _obj({
    "samples": {"type": "array", "items": _obj({
        "name": {"type": "string"},
        "metrics": _METRICS,
        "mesh_loss": {"oneOf": [{"type": "null"}, _obj({
            "vertex": _NUM, "joint": _NUM, "normal": _NUM, "edge": _NUM, "total": _NUM,
            "skipped_faces": {"type": "integer", "minimum": 0},
        })]},
        "per_joint_error_cm": {"type": "array", "items": _NUM},
    })},
    "summary": _METRICS,
    "averaging": {"const": "macro"},
})

MANIFEST = _obj({
    "command": {"type": "string"},
    "config": {"type": "object"},
    "seed": {"type": ["integer", "null"]},
    "inputs": {"type": "object", "additionalProperties": {"type": ["string", "array", "null"]}},
    "outputs": {"type": "object", "additionalProperties": {"type": ["string", "array", "null"]}},
    "version": {"type": "string"},
    "duration_seconds": {"type": "number", "minimum": 0},
    "exit_status": {"type": "integer"},
    "warnings": {"type": "array", "items": {"type": "string"}},
})

SCHEMAS: dict[str, dict] = {
    "model": MODEL,
    "pose": POSE,
    "shape": SHAPE,
    "skeleton": SKELETON,
    "ik_result": IK_RESULT,
    "fit_result": FIT_RESULT,
    "fit_batch": FIT_BATCH,
    "hierarchy": HIERARCHY,
    "scan_report": SCAN_REPORT,
    "eval_report": EVAL_REPORT,
    "manifest": MANIFEST,
}


def get_schema(name: str) -> dict:
    schema = dict(SCHEMAS[name])
    schema["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    schema["title"] = f"bodykit {name}"
    return schema
