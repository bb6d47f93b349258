//! Independent brute-force validators for the analytic model.
//!
//! Three oracles, none of which shares a code path with the formulas they
//! check: a Monte-Carlo preamble contention experiment, an event-driven
//! single-server queue with impatient customers, and a dense linear solve of
//! the retransmission chain's stationary distribution.

use crate::analytic::MarkovSteadyState;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

/// A seeded Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Everything one preamble-contention experiment measures: the per-device
/// collision frequency plus the mean activated and singleton preamble counts
/// per RAO, for cross-checking the analytic preamble rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreambleContention {
    pub collision: OracleEstimate,
    pub activated_per_rao: OracleEstimate,
    pub singletons_per_rao: OracleEstimate,
}

fn mean_and_se(samples: &[f64], seed: u64) -> OracleEstimate {
    let n = samples.len();
    if n == 0 {
        return OracleEstimate { estimate: 0.0, std_error: 0.0, trials: 0, seed };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (n.max(2) - 1) as f64;
    OracleEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        trials: n as u64,
        seed,
    }
}

/// Simulate RAOs directly: draw the contender count from
/// `Poisson(lambda_t * delta_rao)`, assign preambles uniformly, and record
/// the fraction of contenders whose preamble was picked by somebody else.
///
/// The collision estimate conditions on at least one contender being present,
/// so it is the per-device collision frequency a participant experiences.
/// Activated and singleton counts average over all trials.
pub fn mc_preamble(
    lambda_t: f64,
    preambles: u32,
    delta_rao: u32,
    trials: u64,
    seed: u64,
) -> PreambleContention {
    assert!(trials >= 1000, "oracle estimates need at least 1000 trials");
    assert!(preambles >= 1);
    let mut rng = SmallRng::seed_from_u64(seed);
    let mean_contenders = lambda_t * delta_rao as f64;

    let mut collision_samples = Vec::new();
    let mut activated_samples = Vec::with_capacity(trials as usize);
    let mut singleton_samples = Vec::with_capacity(trials as usize);
    let mut occupancy = vec![0u32; preambles as usize];

    let poisson = if mean_contenders > 0.0 {
        Some(Poisson::new(mean_contenders).expect("positive mean"))
    } else {
        None
    };

    for _ in 0..trials {
        let n = match &poisson {
            Some(p) => p.sample(&mut rng) as u64,
            None => 0,
        };
        occupancy.iter_mut().for_each(|c| *c = 0);
        for _ in 0..n {
            let p = rng.gen_range(0..preambles) as usize;
            occupancy[p] += 1;
        }
        let activated = occupancy.iter().filter(|&&c| c >= 1).count() as f64;
        let singletons = occupancy.iter().filter(|&&c| c == 1).count() as f64;
        activated_samples.push(activated);
        singleton_samples.push(singletons);
        if n > 0 {
            let collided: u32 = occupancy.iter().filter(|&&c| c >= 2).map(|&c| c).sum();
            collision_samples.push(collided as f64 / n as f64);
        }
    }

    PreambleContention {
        collision: mean_and_se(&collision_samples, seed),
        activated_per_rao: mean_and_se(&activated_samples, seed),
        singletons_per_rao: mean_and_se(&singleton_samples, seed),
    }
}

/// Event-driven M/M/1 queue with impatient customers: Poisson arrivals,
/// exponential service, FIFO order. A customer abandons (and is counted
/// lost) if its service cannot start within `t_d - 1/mu` of arrival; the
/// deadline `t_d` thus covers the wait plus one mean service time, matching
/// what the closed-form loss expression budgets. Abandoning customers never
/// occupy the server.
///
/// `duration` is simulated time in subframes; the first tenth is warmup.
/// The standard error comes from batch means over twenty batches, since
/// consecutive customers are correlated through the queue.
pub fn impatient_queue(lambda: f64, mu: f64, t_d: f64, duration: f64, seed: u64) -> OracleEstimate {
    assert!(mu > 0.0, "service rate must be positive");
    assert!(t_d >= 1.0 / mu, "deadline shorter than one mean service time");
    assert!(
        duration * mu >= 1e5,
        "simulate at least 1e5 service intervals"
    );
    if lambda <= 0.0 {
        return OracleEstimate { estimate: 0.0, std_error: 0.0, trials: 0, seed };
    }

    let mut rng = SmallRng::seed_from_u64(seed);
    let interarrival = Exp::new(lambda).expect("positive rate");
    let service = Exp::new(mu).expect("positive rate");
    let patience = t_d - 1.0 / mu;
    let warmup = duration * 0.1;

    let mut now = 0.0f64;
    let mut server_free_at = 0.0f64;
    let mut outcomes: Vec<bool> = Vec::new();
    loop {
        now += interarrival.sample(&mut rng);
        if now > duration {
            break;
        }
        let start = now.max(server_free_at);
        let lost = start - now > patience;
        if !lost {
            server_free_at = start + service.sample(&mut rng);
        }
        if now >= warmup {
            outcomes.push(lost);
        }
    }

    let n = outcomes.len();
    if n == 0 {
        return OracleEstimate { estimate: 0.0, std_error: 0.0, trials: 0, seed };
    }
    let batches = 20usize.min(n);
    let mut batch_means = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = n * b / batches;
        let hi = n * (b + 1) / batches;
        if hi > lo {
            let lost = outcomes[lo..hi].iter().filter(|&&l| l).count();
            batch_means.push(lost as f64 / (hi - lo) as f64);
        }
    }
    let mut est = mean_and_se(&batch_means, seed);
    est.trials = n as u64;
    est
}

#[derive(Debug, Error)]
pub enum MarkovSolveError {
    #[error("transition matrix is singular: the chain is disconnected for these probabilities")]
    Singular,
}

/// Numeric stationary distribution of the retransmission chain.
///
/// Builds the explicit transition matrix over
/// `{off, connect, drop, (0,0), (i,k), CR(i)}` and solves `pi P = pi` with
/// the normalization `sum pi = 1` by Gaussian elimination. Kept free of the
/// closed-form expressions on purpose.
pub fn markov_numeric(
    p_c: f64,
    p_e: f64,
    p_on: f64,
    max_retransmissions: u32,
    backoff_window: u32,
) -> Result<MarkovSteadyState, MarkovSolveError> {
    assert!((0.0..=1.0).contains(&p_c));
    assert!((0.0..=1.0).contains(&p_e));
    assert!((0.0..=1.0).contains(&p_on));
    assert!(backoff_window >= 1);
    let m = max_retransmissions as usize;
    let w = backoff_window as usize;

    if p_on == 0.0 {
        // The off state is absorbing; the chain of interest is disconnected
        // but the stationary distribution is still well defined.
        return Ok(MarkovSteadyState {
            off: 1.0,
            connect: 0.0,
            drop: 0.0,
            initial: 0.0,
            connect_request: vec![0.0; m + 1],
            backoff: vec![vec![0.0; w]; m],
        });
    }

    // State layout: 0 off, 1 connect, 2 drop, 3 the (0,0) transmission
    // state, then (i,k) for i in 1..=m row-major over k, then CR(i).
    let n = 4 + m * w + (m + 1);
    let off = 0;
    let connect = 1;
    let drop = 2;
    let initial = 3;
    let tx = |i: usize, k: usize| 4 + (i - 1) * w + k;
    let cr = |i: usize| 4 + m * w + i;

    let mut p = vec![0.0f64; n * n];
    let mut add = |from: usize, to: usize, prob: f64| {
        p[from * n + to] += prob;
    };

    add(off, initial, p_on);
    add(off, off, 1.0 - p_on);
    add(connect, off, 1.0);
    add(drop, off, 1.0);

    // Transmission state of attempt i: CR on a clean preamble, otherwise a
    // uniformly drawn backoff state of attempt i + 1 (or drop at the last).
    for i in 0..=m {
        let from = if i == 0 { initial } else { tx(i, 0) };
        add(from, cr(i), 1.0 - p_c);
        if i == m {
            add(from, drop, p_c);
        } else {
            for k in 0..w {
                add(from, tx(i + 1, k), p_c / w as f64);
            }
        }
    }

    // Connection request: connect on success, otherwise back off too.
    for i in 0..=m {
        add(cr(i), connect, 1.0 - p_e);
        if i == m {
            add(cr(i), drop, p_e);
        } else {
            for k in 0..w {
                add(cr(i), tx(i + 1, k), p_e / w as f64);
            }
        }
    }

    // Backoff countdown.
    for i in 1..=m {
        for k in 1..w {
            add(tx(i, k), tx(i, k - 1), 1.0);
        }
    }

    // Solve (P^T - I) pi = 0 with the last equation replaced by sum = 1.
    let mut a = vec![0.0f64; n * (n + 1)];
    let cols = n + 1;
    for row in 0..n {
        for col in 0..n {
            a[row * cols + col] = p[col * n + row];
        }
        a[row * cols + row] -= 1.0;
    }
    for col in 0..n {
        a[(n - 1) * cols + col] = 1.0;
    }
    a[(n - 1) * cols + n] = 1.0;

    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                a[r1 * cols + col]
                    .abs()
                    .total_cmp(&a[r2 * cols + col].abs())
            })
            .unwrap();
        if a[pivot_row * cols + col].abs() < 1e-13 {
            return Err(MarkovSolveError::Singular);
        }
        if pivot_row != col {
            for c in 0..cols {
                a.swap(col * cols + c, pivot_row * cols + c);
            }
        }
        let pivot = a[col * cols + col];
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * cols + col] / pivot;
            if factor != 0.0 {
                for c in col..cols {
                    a[row * cols + c] -= factor * a[col * cols + c];
                }
            }
        }
    }
    let pi: Vec<f64> = (0..n).map(|i| a[i * cols + n] / a[i * cols + i]).collect();

    Ok(MarkovSteadyState {
        off: pi[off],
        connect: pi[connect],
        drop: pi[drop],
        initial: pi[initial],
        connect_request: (0..=m).map(|i| pi[cr(i)]).collect(),
        backoff: (1..=m)
            .map(|i| (0..w).map(|k| pi[tx(i, k)]).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{
        collision_probability, markov_steady_state, one_shot_failure, preamble_rates, queue_loss,
        ChannelLoad,
    };

    #[test]
    fn mc_preamble_zero_load() {
        let est = mc_preamble(0.0, 54, 5, 1000, 7);
        assert_eq!(est.collision.estimate, 0.0);
        assert_eq!(est.collision.trials, 0);
        assert_eq!(est.activated_per_rao.estimate, 0.0);
    }

    #[test]
    fn mc_preamble_single_preamble_degenerates() {
        // With one preamble every contender collides as soon as a second one
        // is present, so the estimate approaches P(N >= 2 | N >= 1).
        let mean = 1.5f64;
        let est = mc_preamble(mean / 5.0, 1, 5, 60_000, 11);
        let p_ge1 = 1.0 - (-mean).exp();
        let p_ge2 = p_ge1 - mean * (-mean).exp();
        // The per-device estimate conditions on the device's own presence,
        // which size-biases the trial weighting; accept a loose band around
        // the trial-conditional value.
        let expected = p_ge2 / p_ge1;
        assert!(
            (est.collision.estimate - expected).abs() < 0.05,
            "estimate {} expected about {expected}",
            est.collision.estimate
        );
    }

    #[test]
    fn mc_preamble_respects_jensen_bound() {
        for &per_rao in &[5.0f64, 10.0, 25.0, 60.0, 100.0] {
            let lambda_t = per_rao / 5.0;
            let est = mc_preamble(lambda_t, 54, 5, 20_000, 42);
            let bound = collision_probability(lambda_t, 54, 5);
            assert!(
                est.collision.estimate <= bound + 3.0 * est.collision.std_error,
                "per_rao {per_rao}: {} > {bound} + 3se",
                est.collision.estimate
            );
        }
    }

    #[test]
    fn mc_preamble_matches_rate_formulas() {
        let (lambda_t, d, delta) = (10.8, 54, 5);
        let est = mc_preamble(lambda_t, d, delta, 40_000, 3);
        let (lambda_a, lambda_s) = preamble_rates(lambda_t, d, delta);
        let a = est.activated_per_rao;
        let s = est.singletons_per_rao;
        assert!(
            (a.estimate - lambda_a * delta as f64).abs() < 4.0 * a.std_error,
            "activated {} vs {}",
            a.estimate,
            lambda_a * delta as f64
        );
        assert!(
            (s.estimate - lambda_s * delta as f64).abs() < 4.0 * s.std_error,
            "singletons {} vs {}",
            s.estimate,
            lambda_s * delta as f64
        );
    }

    #[test]
    fn mc_preamble_reproducible() {
        let a = mc_preamble(2.0, 54, 5, 5000, 123);
        let b = mc_preamble(2.0, 54, 5, 5000, 123);
        assert_eq!(a, b);
    }

    #[test]
    fn impatient_queue_zero_rate() {
        let est = impatient_queue(0.0, 1.0, 10.0, 2e5, 1);
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn impatient_queue_matches_formula_at_reference_point() {
        let est = impatient_queue(0.5, 1.0, 10.0, 2e6, 17);
        let formula = queue_loss(&ChannelLoad { lambda: 0.5, mu: 1.0, t_d: 10.0 }).unwrap();
        assert!(
            (est.estimate - formula).abs() < 3.0 * est.std_error + 2e-4,
            "oracle {} formula {formula} se {}",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn impatient_queue_patient_limit() {
        let est = impatient_queue(0.5, 1.0, 1e4, 2e5, 5);
        assert!(est.estimate < 1e-4, "loss {} should vanish", est.estimate);
    }

    #[test]
    fn markov_numeric_off_only() {
        let chain = markov_numeric(0.2, 0.1, 0.0, 2, 4).unwrap();
        assert_eq!(chain.off, 1.0);
        assert_eq!(chain.total(), 1.0);
    }

    #[test]
    fn markov_numeric_matches_closed_form_reference() {
        let numeric = markov_numeric(0.2, 0.1, 0.3, 2, 4).unwrap();
        let closed = markov_steady_state(0.2, 0.1, 0.3, 2, 4);
        assert!((numeric.off - closed.off).abs() < 1e-10);
        assert!((numeric.connect - closed.connect).abs() < 1e-10);
        assert!((numeric.drop - closed.drop).abs() < 1e-10);
        assert!((numeric.initial - closed.initial).abs() < 1e-10);
        for (a, b) in numeric.connect_request.iter().zip(&closed.connect_request) {
            assert!((a - b).abs() < 1e-10);
        }
        for (row_a, row_b) in numeric.backoff.iter().zip(&closed.backoff) {
            for (a, b) in row_a.iter().zip(row_b) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!((numeric.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn markov_numeric_certain_collision_drops_everything() {
        let chain = markov_numeric(1.0, 0.0, 0.5, 3, 4).unwrap();
        assert!(chain.connect.abs() < 1e-14);
        assert!((chain.outage() - 1.0).abs() < 1e-12);
        let p_f = one_shot_failure(1.0, 0.0);
        assert_eq!(p_f, 1.0);
    }
}
