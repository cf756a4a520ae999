//! Multi-agent quadrotor trajectory planning.
//!
//! Missions (start/goal pairs in a box-obstacle world) are solved in four
//! stages:
//!
//! 1. [`mapf`] finds conflict-free discrete paths on a voxel lattice with
//!    enhanced conflict-based search.
//! 2. [`corridor`] grows an obstacle-free box around every path segment and a
//!    separating half-space for every agent pair and segment.
//! 3. [`optimizer`] solves a sequence of convex QPs over piecewise Bernstein
//!    control points, one batch of agents at a time, with agents outside the
//!    batch held on fixed trajectories.
//! 4. The result is uniformly slowed down until velocity and acceleration
//!    limits hold.
//!
//! [`validate`] re-checks the output with independent code, and
//! [`pipeline`] ties the stages together.

// `!(a > b)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bernstein;
pub mod corridor;
pub mod geometry;
pub mod map;
pub mod mapf;
pub mod optimizer;
pub mod pipeline;
pub mod scenario;
pub mod trajectory_io;
pub mod validate;

pub use bernstein::{BernsteinSegment, PiecewiseBezier};
pub use geometry::{Aabb, Point3};
pub use map::{OccupancyWorld, VoxelGrid};
pub use pipeline::{plan, PlanError, PlanOutcome, PlannerConfig};
pub use scenario::{AgentSpec, Mission};
