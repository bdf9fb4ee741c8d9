//! Statistics over recompilations: ensembles, dependency tracking, the
//! uniformity and independence tests, the shift transform and the collision
//! audit.

pub mod audit;
pub mod deps;
pub mod ensemble;
pub mod shift;
pub mod stats;
pub mod suite;

pub use audit::{collision_audit, AuditReport};
pub use deps::{dependency_pairs, free_delta_count, Cause, DependencyReport, FreeDeltaCount, Origin};
pub use ensemble::{build_ensemble, member_seed, reference_member, Ensemble, EnsembleSpec, Member};
pub use shift::{shift_inputs, shift_transform, ShiftError};
pub use stats::{independence, pair_independence, point_uniformity, uniformity, TestResult, ALPHA};
pub use suite::{analyze, AnalysisReport, SuiteOptions};

use crate::compiler::{CompileError, RunError};
use crate::vm::TracePoint;

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("member {member} differs structurally from member 0 at event {event}")]
    Invariance { member: usize, event: usize },
    #[error("no observed word at event {} {:?}", .0.event, .0.loc)]
    NoPoint(TracePoint),
    #[error("empty ensemble")]
    Empty,
    #[error("points are dependent ({cause})")]
    Dependent { cause: Cause },
}
