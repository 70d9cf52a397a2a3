//! Synthetic grasp world: primitive objects, partial views, a kinematic toy
//! gripper, an analytic success oracle, dataset generation and metrics.

pub mod dataset;
pub mod gripper;
pub mod metrics;
pub mod object;
pub mod oracle;
pub mod view;

pub use dataset::{
    gen_dataset, jitter, propose_positive, DatasetConfig, DatasetManifest, JitterConfig, LabeledGrasp, Provenance, Split,
    ToyDataset, ToyScene, ToyView,
};
pub use gripper::{fingertip_fk, ToyGripper, TOY_P_SCALE};
pub use metrics::{diversity_entropy, random_grasp, success_rate};
pub use object::{random_rotation, random_unit, Shape, SurfaceCloud, ToyObject};
pub use oracle::{oracle_check, oracle_label, OracleCheck, OracleConfig};
pub use view::partial_view;

/// Independent stream seed for item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index))
}
