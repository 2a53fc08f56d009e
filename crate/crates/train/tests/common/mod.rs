use std::path::Path;

use egorender_synth::{generate_dataset, Dataset, GenConfig};

pub fn toy_dataset(dir: &Path, frames: usize) -> Dataset {
    let cfg = GenConfig {
        n_frames: frames,
        n_textures: 1,
        n_backgrounds: 2,
        n_external_views: 2,
        ego_size: 32,
        view_size: 32,
        chart_size: 16,
        seed: 5,
        ..Default::default()
    };
    generate_dataset(&cfg, dir, 1).unwrap();
    Dataset::open(dir).unwrap()
}
