//! Gaussian closed forms for the reconstruction error of frame-plus-flow
//! models, and the Monte Carlo and optimization oracles that check them.

pub mod audit;
pub mod bounds;
pub mod gaussian;
pub mod linear;
pub mod maps;
pub mod polar;
pub mod report;
pub mod suite;

pub use audit::{lemma_b1_audit, AuditResult};
pub use bounds::{
    frame_split, prop1_empirical, prop1_error, prop2_bound, prop2_construction_empirical, prop3_bound, remark_bound,
    EtaChoice, RemarkBound,
};
pub use gaussian::{conditional_moments, ConditionalMoments, GaussianModel, MonteCarlo, SplitCov};
pub use linear::{constructive_optimum, optimize_orthogonal, theorem_linear_value, OrthoSearch};
pub use maps::{fit_flow, reconstruction_error, FitConfig, FlowMap, LatentMap, LinearCoupling};
pub use polar::{polar_example, PolarReport};
pub use report::{reports_to_csv, summary, write_reports_csv, BoundReport, Relation};
pub use suite::{verify_theory, verify_theory_with, TheoryBudget};
