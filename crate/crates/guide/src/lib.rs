//! Compiles and runs every snippet of the guide in `book/`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/vehicle.md")]
pub mod vehicle {}

#[doc = include_str!("../../../book/src/derivatives.md")]
pub mod derivatives {}

#[doc = include_str!("../../../book/src/qp.md")]
pub mod qp {}

#[doc = include_str!("../../../book/src/sqp.md")]
pub mod sqp {}

#[doc = include_str!("../../../book/src/ocp.md")]
pub mod ocp {}

#[doc = include_str!("../../../book/src/planner.md")]
pub mod planner {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
