//! The convex relaxation: assembly, solution read-back, policy recovery,
//! certification and iterative re-linearization.

pub mod assemble;
pub mod certify;
pub mod iterate;
pub mod program;
pub mod solution;

pub use assemble::assemble;
pub use certify::{certify, certify_with, Certificate, CertificateDoc, Tolerances};
pub use iterate::{iterate_relinearize, plan_with_fallback, FallbackPlan, IterationRecord, PlanResult};
pub use program::{BlockCensus, ConicProgram, LinExpr, ProgramDump, ProgramResiduals, PsdBlock, RowBlock, SocBlock};
pub use solution::{
    extract, recover_gain, recover_policy, solve_relaxation, RelaxationOutcome, RelaxedSolution, SolutionDoc,
};
