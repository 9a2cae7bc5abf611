//! Fixed conversion factors between field units at the interfaces and SI
//! units inside the solver.

/// One millidarcy in square meters.
pub const MILLIDARCY: f64 = 9.869233e-16;
/// One centipoise in pascal seconds.
pub const CENTIPOISE: f64 = 1e-3;
/// One bar in pascals.
pub const BAR: f64 = 1e5;
/// One day in seconds.
pub const DAY: f64 = 86400.0;
