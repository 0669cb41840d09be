//! The chapters of the guide in `book/`, compiled so that every listing runs
//! as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/expressions.md")]
pub mod expressions {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/fokker-planck.md")]
pub mod fokker_planck {}

#[doc = include_str!("../../../book/src/probability-flow.md")]
pub mod probability_flow {}

#[doc = include_str!("../../../book/src/om-action.md")]
pub mod om_action {}

#[doc = include_str!("../../../book/src/tubes.md")]
pub mod tubes {}

#[doc = include_str!("../../../book/src/minimum-action.md")]
pub mod minimum_action {}

#[doc = include_str!("../../../book/src/infinite-activity.md")]
pub mod infinite_activity {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
