//! Quaternion algebra and real Wigner-D representations of SO(3).

mod quaternion;
mod wigner;

pub use quaternion::{UnitQuaternion, UNIT_TOLERANCE};
pub use wigner::{
    real_cob_matrix, rotate_spectrum, su2_generators, sym_index, wigner_d_euler, wigner_d_quat,
    EulerJet, GeneratorSet, WignerBlockSet, WignerJet, WignerTable,
};
