//! Frozen reference values for `p = 6`, measured once by independent
//! high-resolution runs and used as regression targets.

/// Edge eigenvalue of `∂ₓL` at `c = 1`.
pub const E0_P6: f64 = 0.63450764348;
/// Tail decay rate of `Z⁺` at `c = 1`.
pub const ETA0_P6: f64 = 0.6152;
/// `∫ Z⁺ Z⁻` for the unit-normalized duals.
pub const GRAM_P6: f64 = 0.962337;
/// Minimum of `(Lv, v)/‖v‖²_{H¹}` on `v ⊥ {Z⁺, Z⁻, Q_x}` at `c = 1`.
pub const LAMBDA_STAR_P6: f64 = 0.073049512716;
/// Same minimum on `v ⊥ {Q^{(p+1)/2}, Q_x}`.
pub const NU_P6: f64 = 0.493003512904;
/// `1 - ((p+1)/2)^2` at `p = 6`.
pub const MU0_P6: f64 = -11.25;

/// Absolute tolerance on frozen eigenvalues.
pub const EIG_TOL: f64 = 1e-9;
