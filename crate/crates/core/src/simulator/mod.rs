//! Procedural environments, the depth sensor, the episode runner and the
//! dataset extractor.

pub mod dataset;
pub mod episode;
pub mod floorplan;
pub mod sensor;

pub use dataset::{
    dedup_poses, embed_samples, extract_dataset, ground_truth_egocentric, read_samples, write_samples,
    DatasetConfig, Sample, Split,
};
pub use episode::{
    forward_blocked, global_map_for, random_start, run_episode, write_episode_outputs, write_trajectory,
    EpisodeConfig, EpisodeOutput, EpisodeStats, StepRecord,
};
pub use floorplan::{generate_floorplan, Door, Floorplan, FloorplanConfig, Rect, Room};
pub use sensor::{cast_ray, sense, NoiseModel, Observation, SensorConfig};
