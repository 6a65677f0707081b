//! Per-user offloading economics.
//!
//! A user offloads an arriving job whenever the instantaneous uplink rate
//! `ln(1 + rho |h|^2)` beats a threshold `beta`. With `|h|^2 ~ Exp(1)` the
//! offloading frequency is `x = exp(-(e^beta - 1) / rho)`, so choosing `x`
//! fixes `beta`, which fixes the upload time and energy. Everything here is
//! plain scalar math on immutable inputs.
//!
//! Upload time is `D_tx = tx_scale * 8 * L_a / (W * beta)`: payload bits over
//! bandwidth times spectral efficiency. `tx_scale` defaults to 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp on offloading frequencies; `beta` diverges at 0.
pub const X_MIN: f64 = 1e-6;
/// Upper clamp on offloading frequencies; `beta` vanishes at 1.
pub const X_MAX: f64 = 1.0 - 1e-6;

const INVERSE_MAX_ITER: usize = 200;

/// Global physical and queueing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Job arrival rate per user (jobs/s).
    pub lambda_a: f64,
    /// Input data size (bytes).
    pub l_a: f64,
    /// Processing density (cycles/bit).
    pub b_a: f64,
    /// Device CPU speed (cycles/s).
    pub f_m: f64,
    /// Edge CPU speed (cycles/s).
    pub f_b: f64,
    /// Device energy coefficient (W s^3 / cycles^3).
    pub kappa_m: f64,
    /// Transmit power (W).
    pub p_tr: f64,
    /// Noise power (W).
    pub sigma2: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Channel bandwidth (Hz).
    pub bandwidth: f64,
    /// Multiplier on the upload time; 1 means `8 L_a / (W beta)`.
    pub tx_scale: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::table2()
    }
}

impl SystemParams {
    /// The reference simulation setup: 100 KB jobs at 8250 cycles/bit,
    /// 0.5 GHz devices, a 3 GHz edge server, 100 mW uplink over 360 kHz,
    /// -40 dBm noise and path-loss exponent 3.5.
    pub fn table2() -> Self {
        Self {
            lambda_a: 0.01,
            l_a: 100e3,
            b_a: 8250.0,
            f_m: 0.5e9,
            f_b: 3e9,
            kappa_m: 1e-27,
            p_tr: 0.1,
            sigma2: 1e-7,
            alpha: 3.5,
            bandwidth: 360e3,
            tx_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lambda_a", self.lambda_a),
            ("L_a", self.l_a),
            ("B_a", self.b_a),
            ("f_m", self.f_m),
            ("f_B", self.f_b),
            ("kappa_m", self.kappa_m),
            ("P_tr", self.p_tr),
            ("sigma2", self.sigma2),
            ("alpha", self.alpha),
            ("W", self.bandwidth),
            ("tx_scale", self.tx_scale),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.lambda_a >= self.mu_m() {
            return Err(Error::Config(format!(
                "local queue unstable: lambda_a {} >= mu_m {}",
                self.lambda_a,
                self.mu_m()
            )));
        }
        Ok(())
    }

    /// Mean CPU cycles per job (L_a is in bytes, B_a in cycles/bit).
    pub fn mu_a(&self) -> f64 {
        8.0 * self.l_a * self.b_a
    }

    /// Local service rate (jobs/s).
    pub fn mu_m(&self) -> f64 {
        self.f_m / self.mu_a()
    }

    /// Edge service rate (jobs/s).
    pub fn mu_b(&self) -> f64 {
        self.f_b / self.mu_a()
    }

    /// Energy of one locally computed job (J).
    pub fn local_energy(&self) -> f64 {
        self.kappa_m * self.f_m * self.f_m * self.mu_a()
    }

    /// Upload payload over bandwidth; divide by `beta` to get seconds.
    pub fn tx_time_factor(&self) -> f64 {
        self.tx_scale * 8.0 * self.l_a / self.bandwidth
    }

    /// SNR factor `d^-alpha P_tr / sigma^2` at distance `d` metres.
    pub fn snr_factor(&self, distance: f64) -> f64 {
        distance.powf(-self.alpha) * self.p_tr / self.sigma2
    }
}

/// One end user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: usize,
    /// Distance to the access point (m).
    pub distance: f64,
    /// Delay weight (1/s).
    pub c_d: f64,
    /// Energy weight (1/J).
    pub c_e: f64,
    /// SNR factor derived from `distance`.
    pub rho: f64,
}

impl UserProfile {
    pub fn new(
        id: usize,
        distance: f64,
        c_d: f64,
        c_e: f64,
        params: &SystemParams,
    ) -> Result<Self> {
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::Config(format!(
                "user {id}: distance must be > 0, got {distance}"
            )));
        }
        for (name, w) in [("c_d", c_d), ("c_e", c_e)] {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::Config(format!(
                    "user {id}: {name} must lie in (0,1), got {w}"
                )));
            }
        }
        let rho = params.snr_factor(distance);
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Config(format!(
                "user {id}: degenerate SNR factor {rho}"
            )));
        }
        Ok(Self {
            id,
            distance,
            c_d,
            c_e,
            rho,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorityClass {
    H,
    L,
}

impl PriorityClass {
    pub fn other(self) -> Self {
        match self {
            PriorityClass::H => PriorityClass::L,
            PriorityClass::L => PriorityClass::H,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PriorityClass::H => "H",
            PriorityClass::L => "L",
        }
    }
}

/// Aggregate offered edge load per class (jobs/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadState {
    pub rate_h: f64,
    pub rate_l: f64,
}

impl LoadState {
    pub fn new(rate_h: f64, rate_l: f64) -> Self {
        Self { rate_h, rate_l }
    }

    /// Sums `lambda_a x_k` per assigned class.
    pub fn from_assignment(x: &[f64], classes: &[PriorityClass], lambda_a: f64) -> Self {
        let mut load = Self::default();
        for (&xk, &cls) in x.iter().zip(classes) {
            match cls {
                PriorityClass::H => load.rate_h += lambda_a * xk,
                PriorityClass::L => load.rate_l += lambda_a * xk,
            }
        }
        load
    }

    pub fn total(&self) -> f64 {
        self.rate_h + self.rate_l
    }

    /// Capacity left after class-H load.
    pub fn psi_h(&self, mu_b: f64) -> f64 {
        mu_b - self.rate_h
    }

    /// Capacity left after all load.
    pub fn psi(&self, mu_b: f64) -> f64 {
        mu_b - self.rate_h - self.rate_l
    }
}

/// What the access point broadcasts: per-class unit prices and expected
/// edge sojourn times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSignal {
    pub p_h: f64,
    pub p_l: f64,
    pub d_h: f64,
    pub d_l: f64,
}

impl MarketSignal {
    pub fn price(&self, cls: PriorityClass) -> f64 {
        match cls {
            PriorityClass::H => self.p_h,
            PriorityClass::L => self.p_l,
        }
    }

    pub fn delay(&self, cls: PriorityClass) -> f64 {
        match cls {
            PriorityClass::H => self.d_h,
            PriorityClass::L => self.d_l,
        }
    }

    /// Marginal cost `p + c_d D` a user with delay weight `c_d` sees in `cls`.
    pub fn marginal_cost(&self, cls: PriorityClass, c_d: f64) -> f64 {
        self.price(cls) + c_d * self.delay(cls)
    }
}

/// Result of any scheme: per-user decisions and aggregate welfare.
///
/// `classes` is `None` for single-queue (FCFS) schemes; their load is then
/// reported entirely in `rate_h`, which makes `edge_delays(load).0` the FCFS
/// sojourn time.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumOutcome {
    pub x: Vec<f64>,
    pub classes: Option<Vec<PriorityClass>>,
    pub profit: Vec<f64>,
    pub welfare: f64,
    pub load: LoadState,
    pub signal: Option<MarketSignal>,
}

impl EquilibriumOutcome {
    /// Edge sojourn time seen by user `k`.
    pub fn edge_delay(&self, k: usize, params: &SystemParams) -> Result<f64> {
        let (d_h, d_l) = edge_delays(&self.load, params)?;
        Ok(match self.classes.as_ref().map(|c| c[k]) {
            Some(PriorityClass::L) => d_l,
            _ => d_h,
        })
    }

    pub fn mean_x(&self) -> f64 {
        if self.x.is_empty() {
            0.0
        } else {
            self.x.iter().sum::<f64>() / self.x.len() as f64
        }
    }
}

/// Rate threshold `beta` that yields offloading frequency `x`.
pub fn beta_of_x(x: f64, rho: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain("offloading frequency", x));
    }
    if !(rho > 0.0) {
        return Err(Error::domain("SNR factor", rho));
    }
    Ok((-rho * x.ln()).ln_1p())
}

/// Weighted local computing cost `c_e E_LC + c_d D_LC(x)`.
pub fn local_cost(x: f64, u: &UserProfile, s: &SystemParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain("offloading frequency", x));
    }
    let local_load = s.lambda_a * (1.0 - x);
    let slack = s.mu_m() - local_load;
    if slack <= 0.0 {
        return Err(Error::Unstable {
            load: local_load,
            capacity: s.mu_m(),
        });
    }
    Ok(u.c_e * s.local_energy() + u.c_d / slack)
}

/// Upload time (s) and energy (J) at offloading frequency `x`.
pub fn edge_tx(x: f64, u: &UserProfile, s: &SystemParams) -> Result<(f64, f64)> {
    let beta = beta_of_x(x, u.rho)?;
    let d_tx = s.tx_time_factor() / beta;
    Ok((d_tx, s.p_tr * d_tx))
}

/// Expected edge sojourn times `(D_H, D_L)` under preemptive priority.
pub fn edge_delays(load: &LoadState, s: &SystemParams) -> Result<(f64, f64)> {
    if load.rate_h < 0.0 || load.rate_l < 0.0 {
        return Err(Error::domain("class load", load.rate_h.min(load.rate_l)));
    }
    let mu_b = s.mu_b();
    let psi_h = load.psi_h(mu_b);
    let psi = load.psi(mu_b);
    if psi_h <= 0.0 || psi <= 0.0 {
        return Err(Error::Unstable {
            load: load.total(),
            capacity: mu_b,
        });
    }
    let d_h = 1.0 / psi_h;
    Ok((d_h, mu_b * d_h / psi))
}

/// Offloading utility: everything in the profit that depends only on the
/// user's own `x`.
pub fn utility(x: f64, u: &UserProfile, s: &SystemParams) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain("offloading frequency", x));
    }
    let z0 = local_cost(0.0, u, s)?;
    let zx = local_cost(x, u, s)?;
    let (d_tx, e_tx) = edge_tx(x, u, s)?;
    Ok(z0 - (1.0 - x) * zx - x * (u.c_e * e_tx + u.c_d * d_tx))
}

/// Demand `dU/dx`.
pub fn demand(x: f64, u: &UserProfile, s: &SystemParams) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain("offloading frequency", x));
    }
    Ok(demand_interior(x, u, s))
}

// Caller guarantees 0 < x < 1; local stability holds for validated params.
fn demand_interior(x: f64, u: &UserProfile, s: &SystemParams) -> f64 {
    let lam = s.lambda_a;
    let slack = s.mu_m() - lam * (1.0 - x);
    let z_local = u.c_e * s.local_energy() + u.c_d / slack;
    let neg_log_term = -u.rho * x.ln();
    let beta = neg_log_term.ln_1p();
    let k = s.tx_time_factor();
    let d_tx = k / beta;
    // x * d(D_tx)/dx
    let x_dtx = k * u.rho / ((1.0 + neg_log_term) * beta * beta);
    z_local + (1.0 - x) * u.c_d * lam / (slack * slack) - (u.c_e * s.p_tr + u.c_d) * (d_tx + x_dtx)
}

/// Frequency at which demand equals `c`, clamped to `[X_MIN, X_MAX]`.
/// Non-increasing in `c`.
pub fn demand_inverse(c: f64, u: &UserProfile, s: &SystemParams) -> f64 {
    if demand_interior(X_MIN, u, s) <= c {
        return X_MIN;
    }
    if demand_interior(X_MAX, u, s) >= c {
        return X_MAX;
    }
    let (mut lo, mut hi) = (X_MIN, X_MAX);
    // Bisect to machine resolution rather than a fixed width: near X_MIN the
    // demand is steep enough that a 1e-10 bracket leaves an O(1) residual.
    for _ in 0..INVERSE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if demand_interior(mid, u, s) > c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unconstrained utility maximizer (root of the demand).
pub fn x_up(u: &UserProfile, s: &SystemParams) -> f64 {
    demand_inverse(0.0, u, s)
}

/// Expected cost per job when offloading with frequency `x` into an edge
/// queue with sojourn time `edge_delay`.
pub fn total_cost_with_delay(
    x: f64,
    edge_delay: f64,
    u: &UserProfile,
    s: &SystemParams,
) -> Result<f64> {
    if x == 0.0 {
        return local_cost(0.0, u, s);
    }
    let zx = local_cost(x, u, s)?;
    let (d_tx, e_tx) = edge_tx(x, u, s)?;
    let z_edge = u.c_e * e_tx + u.c_d * (d_tx + edge_delay);
    Ok((1.0 - x) * zx + x * z_edge)
}

/// Profit `U(x) - c_d x D` given the edge sojourn time.
pub fn profit_with_delay(
    x: f64,
    edge_delay: f64,
    u: &UserProfile,
    s: &SystemParams,
) -> Result<f64> {
    Ok(utility(x, u, s)? - u.c_d * x * edge_delay)
}

/// Profit of a user in class `cls` under the given class loads.
pub fn profit(
    x: f64,
    cls: PriorityClass,
    load: &LoadState,
    u: &UserProfile,
    s: &SystemParams,
) -> Result<f64> {
    let (d_h, d_l) = edge_delays(load, s)?;
    let d = match cls {
        PriorityClass::H => d_h,
        PriorityClass::L => d_l,
    };
    profit_with_delay(x, d, u, s)
}

/// Profit computed as savings over pure local computing, `Z_LC(0) - Z`.
pub fn profit_from_cost(
    x: f64,
    cls: PriorityClass,
    load: &LoadState,
    u: &UserProfile,
    s: &SystemParams,
) -> Result<f64> {
    let (d_h, d_l) = edge_delays(load, s)?;
    let d = match cls {
        PriorityClass::H => d_h,
        PriorityClass::L => d_l,
    };
    Ok(local_cost(0.0, u, s)? - total_cost_with_delay(x, d, u, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(d: f64, c_d: f64) -> UserProfile {
        UserProfile::new(0, d, c_d, 1.0 - c_d, &SystemParams::table2()).unwrap()
    }

    #[test]
    fn table2_derived_quantities() {
        let s = SystemParams::table2();
        s.validate().unwrap();
        assert!((s.mu_a() - 6.6e9).abs() < 1.0);
        assert!((s.local_energy() - 1.65).abs() < 1e-12);
        assert!((s.mu_b() - 3.0 / 6.6).abs() < 1e-15);
        assert!((s.mu_m() - 0.5 / 6.6).abs() < 1e-15);
    }

    #[test]
    fn beta_round_trip_and_domain() {
        for rho in [0.3, 5.0, 316.0] {
            for x in [0.1, 0.5, 0.9] {
                let b = beta_of_x(x, rho).unwrap();
                let back = (-(b.exp_m1()) / rho).exp();
                assert!(((back - x) / x).abs() < 1e-12);
            }
        }
        assert!(beta_of_x(0.0, 1.0).is_err());
        assert!(beta_of_x(1.0, 1.0).is_err());
        assert!(beta_of_x(0.5, 0.0).is_err());
    }

    #[test]
    fn beta_matches_bisection_on_channel_law() {
        let s = SystemParams::table2();
        let rho = s.snr_factor(10.0);
        // Pr(|h|^2 > (e^b - 1)/rho) = exp(-(e^b-1)/rho), decreasing in b.
        let tail = |b: f64| (-(b.exp_m1()) / rho).exp();
        let (mut lo, mut hi) = (0.0_f64, 50.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tail(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = beta_of_x(0.5, rho).unwrap();
        assert!((b - 0.5 * (lo + hi)).abs() < 1e-12);
    }

    #[test]
    fn beta_grows_with_snr() {
        let mut prev = 0.0;
        for rho in [0.1, 1.0, 10.0, 1e3, 1e6] {
            let b = beta_of_x(0.5, rho).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn local_cost_at_full_offload() {
        let s = SystemParams::table2();
        let u = user(30.0, 0.9);
        let z = local_cost(1.0, &u, &s).unwrap();
        assert!((z - (0.1 * 1.65 + 0.9 / s.mu_m())).abs() < 1e-12);
        assert!(local_cost(0.0, &u, &s).unwrap() > z);
        assert!(local_cost(1.5, &u, &s).is_err());
    }

    #[test]
    fn local_cost_rejects_overloaded_device() {
        let mut s = SystemParams::table2();
        s.lambda_a = 0.2;
        let u = user(30.0, 0.5);
        assert!(matches!(
            local_cost(0.0, &u, &s),
            Err(Error::Unstable { .. })
        ));
        assert!(s.validate().is_err());
    }

    #[test]
    fn upload_limits_and_energy_ratio() {
        let s = SystemParams::table2();
        let u = user(40.0, 0.1);
        let (d_small, _) = edge_tx(1e-9, &u, &s).unwrap();
        let (d_big, _) = edge_tx(1.0 - 1e-12, &u, &s).unwrap();
        let (d_mid, _) = edge_tx(0.3, &u, &s).unwrap();
        assert!(d_small < d_mid && d_small < 1.0);
        assert!(d_big > 1e6);
        for x in [0.01, 0.3, 0.77] {
            let (d, e) = edge_tx(x, &u, &s).unwrap();
            assert!((e / d - s.p_tr).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_edge_serves_at_full_rate() {
        let s = SystemParams::table2();
        let (d_h, d_l) = edge_delays(&LoadState::default(), &s).unwrap();
        assert_eq!(d_h, 1.0 / s.mu_b());
        assert_eq!(d_l, 1.0 / s.mu_b());
    }

    #[test]
    fn high_class_delay_ignores_low_load() {
        let s = SystemParams::table2();
        let mu = s.mu_b();
        let a = edge_delays(&LoadState::new(0.3 * mu, 0.1 * mu), &s).unwrap();
        let b = edge_delays(&LoadState::new(0.3 * mu, 0.5 * mu), &s).unwrap();
        assert_eq!(a.0, b.0);
        assert!(b.1 > a.1 && a.1 >= a.0 && a.0 >= 1.0 / mu);
        assert!(edge_delays(&LoadState::new(0.6 * mu, 0.4 * mu), &s).is_err());
        assert!(edge_delays(&LoadState::new(mu, 0.0), &s).is_err());
    }

    #[test]
    fn utility_is_zero_without_offloading() {
        let s = SystemParams::table2();
        assert_eq!(utility(0.0, &user(10.0, 0.9), &s).unwrap(), 0.0);
        assert!(utility(1.0, &user(10.0, 0.9), &s).is_err());
    }

    #[test]
    fn nearer_users_gain_more() {
        let s = SystemParams::table2();
        for c_d in [0.9, 0.1] {
            for x in [0.1, 0.4, 0.8] {
                let near = utility(x, &user(10.0, c_d), &s).unwrap();
                let far = utility(x, &user(70.0, c_d), &s).unwrap();
                assert!(near >= far);
            }
        }
    }

    #[test]
    fn demand_inverse_edges() {
        let s = SystemParams::table2();
        let u = user(25.0, 0.9);
        let xu = x_up(&u, &s);
        assert!(demand(xu, &u, &s).unwrap().abs() < 1e-6);
        let g_min = demand(X_MIN, &u, &s).unwrap();
        assert_eq!(demand_inverse(g_min + 1.0, &u, &s), X_MIN);
        for x in [0.05, 0.2, 0.35] {
            let c = demand(x, &u, &s).unwrap();
            assert!((demand_inverse(c, &u, &s) - x).abs() < 1e-8);
        }
    }

    #[test]
    fn two_profit_routes_agree() {
        let s = SystemParams::table2();
        let mu = s.mu_b();
        let load = LoadState::new(0.2 * mu, 0.3 * mu);
        for (d, c_d) in [(12.0, 0.9), (60.0, 0.1), (33.0, 0.4)] {
            let u = user(d, c_d);
            for x in [0.0, 0.1, 0.5, 0.95] {
                for cls in [PriorityClass::H, PriorityClass::L] {
                    let a = profit(x, cls, &load, &u, &s).unwrap();
                    let b = profit_from_cost(x, cls, &load, &u, &s).unwrap();
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }
}
