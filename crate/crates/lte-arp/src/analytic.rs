//! Closed-form outage model of the access reservation procedure.
//!
//! The model composes four pieces, all pure functions of their inputs:
//!
//! 1. preamble contention: a Jensen upper bound on the collision probability
//!    and Poisson-approximated rates of activated and singleton preambles;
//! 2. per-channel queueing: PDCCH/PDSCH/PUSCH each modeled as an M/M/1 queue
//!    with impatient customers and a hard deadline;
//! 3. an (m+1)-transmission Markov chain giving steady-state connect/drop
//!    masses, the outage probability and the expected transmission count;
//! 4. a damped fixed-point iteration tying the total attempt rate to the
//!    retransmission feedback.

use crate::config::{ChannelKind, ScenarioSpec};
use serde::Serialize;
use thiserror::Error;

/// Damping factor of the fixed-point iteration on the total attempt rate.
pub const FIXED_POINT_DAMPING: f64 = 0.5;
/// Relative convergence tolerance of the fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-9;
/// Iteration cap; past the breaking point the iteration may oscillate and is
/// reported as non-converged instead of hanging.
pub const FIXED_POINT_MAX_ITERS: u32 = 10_000;

/// Utilizations this close to 1 are handled by the overload branch of the
/// queue-loss formula.
const RHO_EPS: f64 = 1e-6;

/// Offered load on one channel queue: requests (PDCCH) or resource blocks
/// (PDSCH/PUSCH) per subframe, the service capacity in the same unit, and the
/// deadline in subframes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelLoad {
    pub lambda: f64,
    pub mu: f64,
    pub t_d: f64,
}

/// The three channel loads the access procedure exercises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelLoads {
    pub pdcch: ChannelLoad,
    pub pdsch: ChannelLoad,
    pub pusch: ChannelLoad,
}

#[derive(Debug, Error, PartialEq)]
pub enum QueueDomainError {
    #[error("service rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("deadline {t_d} is shorter than one mean service time {mean_service}")]
    DeadlineTooShort { t_d: f64, mean_service: f64 },
}

/// Jensen upper bound on the probability that a transmitted preamble
/// collides, given the total attempt rate per subframe.
///
/// The exponent `lambda_t * delta_rao - 1` is the expected number of other
/// contenders in the same RAO; below zero the bound is clamped to 0 because a
/// probability cannot be negative.
pub fn collision_probability(lambda_t: f64, preambles: u32, delta_rao: u32) -> f64 {
    debug_assert!(lambda_t >= 0.0);
    debug_assert!(preambles >= 1);
    let exponent = lambda_t * delta_rao as f64 - 1.0;
    if exponent <= 0.0 {
        return 0.0;
    }
    let miss = 1.0 - 1.0 / preambles as f64;
    (1.0 - miss.powf(exponent)).clamp(0.0, 1.0)
}

/// Rates of activated preambles (detected by the eNodeB) and singleton
/// preambles (chosen by exactly one device), both per subframe.
///
/// Per-preamble occupancy in a RAO is approximated as Poisson with mean
/// `lambda_t * delta_rao / preambles`; activation is the complement of an
/// empty preamble and a singleton is occupancy exactly one.
pub fn preamble_rates(lambda_t: f64, preambles: u32, delta_rao: u32) -> (f64, f64) {
    debug_assert!(lambda_t >= 0.0);
    if lambda_t == 0.0 {
        return (0.0, 0.0);
    }
    let d = preambles as f64;
    let delta = delta_rao as f64;
    let per_preamble = lambda_t * delta / d;
    let scale = d / delta;
    let activated = (1.0 - (-per_preamble).exp()) * scale;
    let singleton = per_preamble * (-per_preamble).exp() * scale;
    (activated, singleton)
}

/// Long-run fraction of requests an M/M/1 queue with deadline `t_d` fails to
/// serve: `(1-rho) rho Omega / (1 - rho^2 Omega)` with
/// `Omega = exp(-mu (1-rho) (t_d - 1/mu))`.
///
/// The formula is derived for `rho < 1`. At or above saturation the loss is
/// the larger of the overload floor `1 - 1/rho` and the formula evaluated at
/// `rho = 1 - 1e-6`, which keeps the curve continuous across the seam.
pub fn queue_loss(load: &ChannelLoad) -> Result<f64, QueueDomainError> {
    if load.mu <= 0.0 {
        return Err(QueueDomainError::NonPositiveRate(load.mu));
    }
    let mean_service = 1.0 / load.mu;
    if load.t_d < mean_service {
        return Err(QueueDomainError::DeadlineTooShort {
            t_d: load.t_d,
            mean_service,
        });
    }
    if load.lambda <= 0.0 {
        return Ok(0.0);
    }
    let rho = load.lambda / load.mu;
    let formula = |rho: f64| -> f64 {
        let tau_q = load.t_d - mean_service;
        let omega = (-load.mu * (1.0 - rho) * tau_q).exp();
        (1.0 - rho) * rho * omega / (1.0 - rho * rho * omega)
    };
    let loss = if rho < 1.0 - RHO_EPS {
        formula(rho)
    } else {
        let floor = 1.0 - 1.0 / rho;
        floor.max(formula(1.0 - RHO_EPS))
    };
    Ok(loss.clamp(0.0, 1.0 - f64::EPSILON))
}

/// Loss probability of one channel as used in the aggregate model: a masked
/// channel (lambda forced to 0) loses nothing, and a channel whose service
/// rate is not even positive, or whose deadline cannot fit one mean service
/// time, loses everything it is offered.
pub fn channel_loss(load: &ChannelLoad) -> f64 {
    if load.lambda <= 0.0 {
        return 0.0;
    }
    match queue_loss(load) {
        Ok(p) => p,
        Err(_) => 1.0,
    }
}

fn ceil_div(bytes: u32, per_unit: u32) -> f64 {
    bytes.div_ceil(per_unit) as f64
}

/// Per-channel offered loads for the configured signaling mode.
///
/// Sums follow the message catalog: the RAR costs one PDCCH message per
/// active RAO (rate `(1 - e^(-lambda_t delta)) / delta`) and
/// `ceil(lambda_a * b_rar / b_rb)` PDSCH blocks; MSG3 costs one grant-sized
/// PUSCH block per activated preamble; every later message costs one PDCCH
/// message plus its own payload blocks per singleton, with uplink data split
/// into `ceil(payload / (n_frag * b_rb))` separately granted fragments.
/// Channels excluded from the limit mask are offered nothing.
pub fn channel_loads(
    lambda_t: f64,
    lambda_a: f64,
    lambda_s: f64,
    spec: &ScenarioSpec,
) -> ChannelLoads {
    debug_assert!(lambda_s <= lambda_a + 1e-9 && lambda_a <= lambda_t + 1e-9);
    let cell = &spec.cell;
    let cat = &spec.catalog;
    let delta = cell.delta_rao as f64;
    let full = matches!(cat.mode, crate::config::SignalingMode::Full);

    let data_rbs = ceil_div(spec.traffic.payload_bytes, cat.b_rb);
    let data_grants = ceil_div(spec.traffic.payload_bytes, cat.n_frag * cat.b_rb);

    let rar_pdcch = (1.0 - (-lambda_t * delta).exp()) / delta;
    // PDCCH messages per singleton past the RAR: MSG4 grant, uplink grant for
    // the setup-complete message, then one grant per remaining handshake
    // message in full mode, plus one grant per data fragment.
    let signaling_grants = if full { 6.0 } else { 1.0 };
    let lambda_pdcch = rar_pdcch + lambda_s * (signaling_grants + data_grants);

    let rar_pdsch = (lambda_a * cat.b_rar as f64 / cat.b_rb as f64).ceil();
    let lambda_pdsch = if full {
        rar_pdsch
            + lambda_s
                * (ceil_div(cat.b_conn, cat.b_rb)
                    + ceil_div(cat.b_r_dl, cat.b_rb)
                    + ceil_div(cat.b_s_cmd, cat.b_rb))
    } else {
        rar_pdsch
    };

    let uplink_per_singleton = if full {
        ceil_div(cat.b_comp, cat.b_rb)
            + ceil_div(cat.b_r_ul, cat.b_rb)
            + ceil_div(cat.b_s_comp, cat.b_rb)
            + data_rbs
    } else {
        ceil_div(cat.b_comp, cat.b_rb) + data_rbs
    };
    let lambda_pusch = lambda_a * ceil_div(cat.b_req, cat.b_rb) + lambda_s * uplink_per_singleton;

    let masked = |kind: ChannelKind, lambda: f64| -> f64 {
        if spec.limit_mask.contains(kind) {
            lambda
        } else {
            0.0
        }
    };

    ChannelLoads {
        pdcch: ChannelLoad {
            lambda: masked(ChannelKind::Pdcch, lambda_pdcch),
            mu: cell.pdcch_capacity() as f64,
            t_d: cell.t_rar as f64,
        },
        pdsch: ChannelLoad {
            lambda: masked(ChannelKind::Pdsch, lambda_pdsch),
            mu: cell.n_dlrb as f64,
            t_d: cell.t_crt as f64,
        },
        pusch: ChannelLoad {
            lambda: masked(ChannelKind::Pusch, lambda_pusch),
            mu: cell.pusch_capacity(),
            t_d: cell.t_other as f64,
        },
    }
}

/// Probability that a request fails in the access-granting phase because at
/// least one of the three channels cannot serve it in time.
pub fn grant_failure(loads: &ChannelLoads) -> f64 {
    let p = [
        channel_loss(&loads.pdcch),
        channel_loss(&loads.pdsch),
        channel_loss(&loads.pusch),
    ];
    1.0 - p.iter().map(|q| 1.0 - q).product::<f64>()
}

/// One-shot failure probability: a transmission fails if the preamble
/// collides or the grant phase starves, modeled as independent events.
pub fn one_shot_failure(p_c: f64, p_e: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_c) && (0.0..=1.0).contains(&p_e));
    (1.0 - (1.0 - p_c) * (1.0 - p_e)).clamp(0.0, 1.0)
}

/// Probability of exhausting all `m + 1` transmissions: `p_f^(m+1)`.
pub fn outage_probability(p_f: f64, max_retransmissions: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_f));
    p_f.powi(max_retransmissions as i32 + 1)
}

/// Expected number of MSG1 transmissions per message,
/// `(1 - p_f^(m+1)) / (1 - p_f)`, continuously extended to `m + 1` at
/// `p_f = 1`.
pub fn expected_transmissions(p_f: f64, max_retransmissions: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_f));
    let attempts = max_retransmissions as f64 + 1.0;
    if 1.0 - p_f < 1e-12 {
        return attempts;
    }
    let n = (1.0 - p_f.powi(max_retransmissions as i32 + 1)) / (1.0 - p_f);
    n.clamp(1.0, attempts)
}

/// Steady-state masses of the retransmission Markov chain.
///
/// States: `off`, the initial transmission state, backoff states `(i, k)` for
/// attempt `i in 1..=m` and counter `k in 0..w_c`, connection-request states
/// `CR(i)`, and the absorbing-then-recycling `connect` and `drop` states.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSteadyState {
    pub off: f64,
    pub connect: f64,
    pub drop: f64,
    /// Mass of the initial transmission state `(0, 0)`.
    pub initial: f64,
    /// `connect_request[i]` is the mass of `CR(i)`, `i in 0..=m`.
    pub connect_request: Vec<f64>,
    /// `backoff[i - 1][k]` is the mass of `(i, k)`, `i in 1..=m`,
    /// `k in 0..w_c`.
    pub backoff: Vec<Vec<f64>>,
}

impl MarkovSteadyState {
    /// Total probability mass; 1 up to rounding for any valid chain.
    pub fn total(&self) -> f64 {
        self.off
            + self.connect
            + self.drop
            + self.initial
            + self.connect_request.iter().sum::<f64>()
            + self.backoff.iter().flatten().sum::<f64>()
    }

    /// Fraction of completed cycles that end in a drop,
    /// `b_drop / (b_drop + b_connect)`.
    pub fn outage(&self) -> f64 {
        if self.connect + self.drop == 0.0 {
            0.0
        } else {
            self.drop / (self.drop + self.connect)
        }
    }
}

/// Closed-form steady state of the retransmission chain.
///
/// With `a = p_e (1 - p_c) + p_c` (the per-attempt failure probability), the
/// level masses are geometric in `a`; the normalization is evaluated through
/// the partial geometric sums so the expression stays finite as `a -> 1`.
pub fn markov_steady_state(
    p_c: f64,
    p_e: f64,
    p_on: f64,
    max_retransmissions: u32,
    backoff_window: u32,
) -> MarkovSteadyState {
    debug_assert!((0.0..=1.0).contains(&p_c));
    debug_assert!((0.0..=1.0).contains(&p_e));
    debug_assert!((0.0..=1.0).contains(&p_on));
    debug_assert!(backoff_window >= 1);
    let m = max_retransmissions as usize;
    let w_c = backoff_window as f64;

    if p_on == 0.0 {
        return MarkovSteadyState {
            off: 1.0,
            connect: 0.0,
            drop: 0.0,
            initial: 0.0,
            connect_request: vec![0.0; m + 1],
            backoff: vec![vec![0.0; backoff_window as usize]; m],
        };
    }

    let a = p_e * (1.0 - p_c) + p_c;
    // powers[i] = a^i, sum_1m = sum_{i=1..m} a^i, sum_0m = sum_{i=0..m} a^i.
    let mut powers = Vec::with_capacity(m + 2);
    let mut acc = 1.0;
    for _ in 0..=(m + 1) {
        powers.push(acc);
        acc *= a;
    }
    let sum_0m: f64 = powers[..=m].iter().sum();
    let sum_1m = sum_0m - 1.0;

    // Normalization: 1 = b_off (1 + 2 p_on + p_on (w_c + 1)/2 sum_1m
    //                           + p_on (1 - p_c) sum_0m).
    let denom = 1.0
        + 2.0 * p_on
        + p_on * (w_c + 1.0) / 2.0 * sum_1m
        + p_on * (1.0 - p_c) * sum_0m;
    let off = 1.0 / denom;
    let initial = p_on * off;

    let connect_request: Vec<f64> = (0..=m)
        .map(|i| (1.0 - p_c) * powers[i] * initial)
        .collect();
    let backoff: Vec<Vec<f64>> = (1..=m)
        .map(|i| {
            (0..backoff_window)
                .map(|k| (w_c - k as f64) / w_c * powers[i] * initial)
                .collect()
        })
        .collect();
    let connect = (1.0 - powers[m + 1]) * initial;
    let drop = powers[m + 1] * initial;

    MarkovSteadyState {
        off,
        connect,
        drop,
        initial,
        connect_request,
        backoff,
    }
}

/// Everything the analytic solve produces for one scenario and arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticResult {
    /// New-message arrival rate per subframe.
    pub lambda_i: f64,
    /// Total attempt rate per subframe, including retransmissions.
    pub lambda_t: f64,
    /// Activated-preamble rate per subframe.
    pub lambda_a: f64,
    /// Singleton-preamble rate per subframe.
    pub lambda_s: f64,
    /// Preamble collision probability (Jensen bound).
    pub p_c: f64,
    /// Grant-phase failure probability across the three channels.
    pub p_e: f64,
    /// One-shot transmission failure probability.
    pub p_f: f64,
    pub p_q_pdcch: f64,
    pub p_q_pdsch: f64,
    pub p_q_pusch: f64,
    /// Offered utilization per channel; infinite when the capacity model
    /// leaves no service rate.
    pub rho_pdcch: f64,
    pub rho_pdsch: f64,
    pub rho_pusch: f64,
    /// Probability of exhausting all transmissions.
    pub p_outage: f64,
    /// Expected MSG1 transmissions per message.
    pub n_tx: f64,
    pub b_off: f64,
    pub b_connect: f64,
    pub b_drop: f64,
    /// Whether the fixed point met the relative tolerance.
    pub converged: bool,
    pub iterations: u32,
}

impl AnalyticResult {
    /// Retransmission rate, derived rather than stored.
    pub fn lambda_r(&self) -> f64 {
        self.lambda_t - self.lambda_i
    }
}

fn utilization(load: &ChannelLoad) -> f64 {
    if load.lambda == 0.0 {
        0.0
    } else if load.mu > 0.0 {
        load.lambda / load.mu
    } else {
        f64::INFINITY
    }
}

struct OneShot {
    p_c: f64,
    p_e: f64,
    p_f: f64,
    lambda_a: f64,
    lambda_s: f64,
    loads: ChannelLoads,
}

fn one_shot_at(spec: &ScenarioSpec, lambda_t: f64) -> OneShot {
    let cell = &spec.cell;
    let p_c = if spec.limit_mask.contains(ChannelKind::Prach) {
        collision_probability(lambda_t, cell.preambles, cell.delta_rao)
    } else {
        0.0
    };
    let (lambda_a, lambda_s) = preamble_rates(lambda_t, cell.preambles, cell.delta_rao);
    let loads = channel_loads(lambda_t, lambda_a, lambda_s, spec);
    let p_e = grant_failure(&loads);
    OneShot {
        p_c,
        p_e,
        p_f: one_shot_failure(p_c, p_e),
        lambda_a,
        lambda_s,
        loads,
    }
}

/// Solve the total attempt rate `lambda_t = n_tx(lambda_t) * lambda_i` by
/// damped fixed-point iteration and assemble the full result.
///
/// Starts from `lambda_t = lambda_i` and stops when the relative step drops
/// below [`FIXED_POINT_TOL`] or after [`FIXED_POINT_MAX_ITERS`] iterations;
/// non-convergence is reported through the `converged` flag, never an error,
/// because near the breaking point the iteration legitimately oscillates.
pub fn solve_total_rate(spec: &ScenarioSpec) -> AnalyticResult {
    let lambda_i = spec.traffic.rate_per_subframe;
    let m = spec.cell.max_retransmissions;

    let mut lambda_t = lambda_i;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        iterations += 1;
        let shot = one_shot_at(spec, lambda_t);
        let target = lambda_i * expected_transmissions(shot.p_f, m);
        let next = (1.0 - FIXED_POINT_DAMPING) * lambda_t + FIXED_POINT_DAMPING * target;
        let step = (next - lambda_t).abs();
        lambda_t = next;
        if step / lambda_t < FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }

    let shot = one_shot_at(spec, lambda_t);
    let n_tx = expected_transmissions(shot.p_f, m);
    let p_on = 1.0 - (-lambda_i).exp();
    let chain = markov_steady_state(shot.p_c, shot.p_e, p_on, m, spec.cell.backoff_window);

    AnalyticResult {
        lambda_i,
        lambda_t,
        lambda_a: shot.lambda_a,
        lambda_s: shot.lambda_s,
        p_c: shot.p_c,
        p_e: shot.p_e,
        p_f: shot.p_f,
        p_q_pdcch: channel_loss(&shot.loads.pdcch),
        p_q_pdsch: channel_loss(&shot.loads.pdsch),
        p_q_pusch: channel_loss(&shot.loads.pusch),
        rho_pdcch: utilization(&shot.loads.pdcch),
        rho_pdsch: utilization(&shot.loads.pdsch),
        rho_pusch: utilization(&shot.loads.pusch),
        p_outage: outage_probability(shot.p_f, m),
        n_tx,
        b_off: chain.off,
        b_connect: chain.connect,
        b_drop: chain.drop,
        converged,
        iterations,
    }
}
