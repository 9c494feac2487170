//! Growth optimal portfolios, deflators and supermartingale tests in
//! multi-asset jump-diffusion markets with piecewise-constant coefficients.

pub mod deflator;
pub mod error;
pub mod gop;
pub mod market;
pub mod mc;
pub mod path;
pub mod scenario;
pub mod simulate;

pub use error::{Error, Result};
pub use gop::{solve_gop, GopSolution};
pub use market::{classify_regime, validate_market, MarketSpec, Piece};
pub use path::SimulatedPath;
pub use simulate::{PathFormula, Strategy, ValuePath};
