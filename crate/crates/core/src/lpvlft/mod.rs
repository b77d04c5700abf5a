//! Function substitution of the PNLSS residual into an LPV model and exact
//! LFT realization of its polynomial parameter dependence.

mod lft;
mod lpv;

pub use lft::{close_loop, evaluate_lft, lft_realize, DynamicBlock, LftSystem, UncertaintyBlock};
pub use lpv::{
    active_priority, default_priority, factorize, reduced_lpv, LpvModel, SchedulingParameter, Term,
};
