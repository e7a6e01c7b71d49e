from .eptn import read_tensor, write_tensor
from .images import read_png, write_png
from .manifest import (
    MANIFEST_SCHEMA,
    SceneManifest,
    ViewRecord,
    export_projection_matrix,
    import_projection_matrices,
    load_manifest,
    parse_projection_file,
    save_manifest,
)
from .dataset import Sample, build_dataset, load_depth, load_hr, load_lr, select_extras
from .synthetic import (
    SceneRender,
    SyntheticSceneSpec,
    render_synthetic_views,
    rig_cameras,
    scene_for,
    write_scene,
)

__all__ = [
    "read_tensor",
    "write_tensor",
    "read_png",
    "write_png",
    "MANIFEST_SCHEMA",
    "SceneManifest",
    "ViewRecord",
    "export_projection_matrix",
    "import_projection_matrices",
    "load_manifest",
    "parse_projection_file",
    "save_manifest",
    "Sample",
    "build_dataset",
    "load_depth",
    "load_hr",
    "load_lr",
    "select_extras",
    "SceneRender",
    "SyntheticSceneSpec",
    "render_synthetic_views",
    "rig_cameras",
    "scene_for",
    "write_scene",
]
