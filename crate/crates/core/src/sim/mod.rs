//! Deterministic indoor scene simulator.
//!
//! A scene is a box-shaped room with a few static obstacles and at least
//! three furniture objects. Objects take small random steps pushed away from
//! nearby obstacles; the camera wanders while keeping enough of the scene in
//! view. Ground-truth trajectories are then corrupted into detection records
//! so the tracker can be trained and scored without a learned front end.

mod io;
mod scene;
mod shapes;
mod smooth;
mod synth;

pub use io::{read_sequence, write_sequence, SequenceManifest, GRID_SIDECAR_MAGIC, SEQUENCE_FORMAT_VERSION};
pub use scene::{
    camera_step_bound, generate_sequence, interest_score, look_at, object_admissible, propose_camera_step,
    propose_object_step, repulsion_weight, sample_camera_step, sample_object_step, sample_scene_config, visibility,
    CameraView, FrameState, GtObject, Intrinsics, LayoutParams, MotionParams, ObjectSpec, ObjectState, Room,
    SceneConfig, SceneParams, SceneSequence, Surroundings, MIN_VISIBILITY, MOVING_EPS,
};
pub use shapes::{sample_shape, Shape};
pub use smooth::{bezier_controls, bezier_point, smooth_trajectory};
pub use synth::{synthesize_detections, synthesize_object, NoiseModel, SyntheticDetection};

/// Independent stream seed derived from a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
