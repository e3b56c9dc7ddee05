//! Baseline shape distances and rotation-invariant spectral descriptors.

mod clebsch;
mod invariants;
mod point;
mod report;
mod transport;

pub use clebsch::{clebsch_gordan, ClebschTable};
pub use invariants::{
    bispectrum_index_set, brute_force_bispectrum_set, brute_force_trispectrum_set, complex_moments,
    cumulative_invariants, spectral_distance, spectral_invariants, trispectrum_index_set,
    InvariantVector, SpectrumOrder, TrispectrumEntry, IMAGINARY_TOLERANCE,
};
pub use point::{chamfer, pairwise_distance};
pub use report::{
    invariance_report, InvarianceFlags, InvarianceReport, Metric, ReportParams, ReportRow, Variant,
};
pub use transport::{entropic_gw, sinkhorn_emd, sinkhorn_log, TransportResult};
