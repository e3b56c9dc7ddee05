//! Hessian conditioning probes, gimbal-lock experiments and runtime benchmarks.

mod bench;
mod gimbal;
mod hessian;

pub use bench::{
    bench_csv, fit_slope, runtime_bench, time_ms, BenchConfig, BenchRecord, BenchSuite,
};
pub use gimbal::{
    align_euler, control_fixture, euler_hessian, gimbal_comparison, gimbal_fixture, path_csv,
    slerp_hessian_path, EulerAlignment, GimbalTraces, PathPoint,
};
pub use hessian::{
    default_probe, determinant_ratio, hessian_probe, hessian_probe_moments, perturbed_sphere,
    sphere_csv, sphere_study, symmetry_csv, symmetry_scan, tangent_frame, tangent_hessian,
    HessianReport, SpherePerturbation, SphereRow, SymmetryRow, PROBE_PINV_THRESHOLD,
};
