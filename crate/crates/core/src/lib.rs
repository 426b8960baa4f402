pub mod calculus;
pub mod cli;
pub mod conjugate;
pub mod convex_fn;
pub mod error;
pub mod fitzpatrick;
pub mod lowered;
pub mod paired;
pub mod polyhedron;
pub mod qp;
pub mod refinement;
pub mod representability;

pub use calculus::LinearMap;
pub use conjugate::ConjugateEngine;
pub use convex_fn::{ConvexFn, HFunction, Node};
pub use error::{Error, Result};
pub use paired::{DualPoint, PairedPoint, Region};
