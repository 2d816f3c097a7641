from .camera import Camera, sample_camera_ring
from .raster import (
    RasterOutput,
    dilate_mask,
    occlusion_rate,
    rasterize,
    select_best_view,
)
from .sdf import (
    SdfGrid,
    build_sdf_grid,
    load_sdf_grid,
    query_sdf,
    query_sdf_gradient,
    save_sdf_grid,
    sdf_cache_key,
)

__all__ = [
    "Camera",
    "sample_camera_ring",
    "RasterOutput",
    "rasterize",
    "dilate_mask",
    "occlusion_rate",
    "select_best_view",
    "SdfGrid",
    "build_sdf_grid",
    "query_sdf",
    "query_sdf_gradient",
    "save_sdf_grid",
    "load_sdf_grid",
    "sdf_cache_key",
]
