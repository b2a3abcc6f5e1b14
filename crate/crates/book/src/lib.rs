//! Doc-test harness for the guide in `book/`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/batching.md")]
pub mod batching {}
#[doc = include_str!("../../../book/src/pretraining.md")]
pub mod pretraining {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/scaling.md")]
pub mod scaling {}
#[doc = include_str!("../../../book/src/expressivity.md")]
pub mod expressivity {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
