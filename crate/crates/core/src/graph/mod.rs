//! Adjacency structure, Leroux precision, contiguity, and Moran's I.

mod adjacency;
mod geometry;
mod moran;

pub use adjacency::{leroux_precision, AdjacencyGraph};
pub use geometry::{
    geometry_json, parse_polygons_geojson, polygons_to_geojson, queen_contiguity, read_polygons_geojson,
    shared_vertices, UnitGeometry, DEFAULT_SNAP_TOLERANCE,
};
pub use moran::{morans_i, morans_i_permutation, morans_i_permutation_sd, MoranResult, PermutationNull};
