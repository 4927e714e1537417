use std::path::Path;

use anyhow::{bail, Context, Result};
use mapprior::{load_map, maps, OccupancyMap};

pub const BUILTIN_RESOLUTION: f64 = 0.25;

/// Resolves `--map`: a built-in name or a `.pgm` path whose metadata lives in
/// the sibling `.json`.
pub fn load(spec: &str) -> Result<OccupancyMap> {
    match spec {
        "corridor_rooms" => Ok(maps::corridor_rooms(BUILTIN_RESOLUTION)),
        "corridor" => Ok(maps::corridor(BUILTIN_RESOLUTION)),
        "open" => Ok(maps::open(16.0, 16.0, BUILTIN_RESOLUTION)),
        path => {
            let pgm = Path::new(path);
            if !pgm.exists() {
                bail!("unknown map {path:?}: not a built-in (corridor_rooms, corridor, open) or an existing file");
            }
            let meta = mapprior::map::meta_path_for(pgm);
            load_map(pgm, &meta).with_context(|| format!("loading map {}", pgm.display()))
        }
    }
}
