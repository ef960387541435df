//! Occupancy grids, planning and path execution.

pub mod follow;
pub mod grid;
pub mod planner;

pub use follow::{follow, FollowConfig, FollowError, FollowRun, FollowStep, Follower};
pub use grid::{disk_collides, Cell, GridError, MapIoError, MapMetadata, OccupancyGrid};
pub use planner::{astar, inflation_radius, plan, plan_inflated, shortcut, Path, PlanError};
