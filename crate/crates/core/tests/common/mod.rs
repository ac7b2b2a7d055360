//! Test-side oracles, independent of the library's evaluation paths.
//!
//! Both oracles compute long-run averages by renewal-reward with the
//! moment sums evaluated numerically term by term (no closed-form
//! telescoping), so they can cross-check the closed-form ages and the
//! stationary-distribution evaluator against a third route.

#![allow(dead_code)]

/// Truncation cap leaving residual tail mass below `1e-12` for the
/// period-`d` equidistant policy at success probability `q`: monitor ages
/// beyond the cap require one failed transmission per slot.
pub fn v_max_for_tail(d: u32, q: f64) -> u32 {
    let slots = ((1e-13f64).ln() / (1.0 - q).ln()).ceil().max(0.0) as u32;
    (d + slots + 8).max(d + 12)
}

/// Average age of period-`d` equidistant sampling by numerical
/// renewal-reward.
///
/// Per `d`-slot cycle starting with a fresh sample at monitor age `a`:
/// the cycle age-sum is `M a + d (d - 1) / 2`, where `M` counts the
/// transmission slots used by the cycle's packet (`min(Geom(q), d)`).
/// Cycle-start ages take values `k d` with probability `s (1 - s)^(k-1)`,
/// `s = 1 - (1-q)^d`. All expectations are summed numerically until the
/// geometric tails fall below `1e-18`.
pub fn equidistant_age_oracle(d: u32, q: f64) -> f64 {
    let df = f64::from(d);
    let fail = 1.0 - q;

    // E[min(G, d)]: success after j failures uses j + 1 slots
    let mut e_m = 0.0;
    let mut tail = 1.0; // (1 - q)^j
    for j in 0..d {
        e_m += (f64::from(j) + 1.0) * q * tail;
        tail *= fail;
    }
    e_m += df * tail;

    // E[a] over cycle-start ages k d, k >= 1
    let s = 1.0 - fail.powi(d as i32);
    let mut e_a = 0.0;
    let mut p_k = s;
    let mut k = 1.0;
    while p_k > 1e-18 {
        e_a += k * df * p_k;
        p_k *= 1.0 - s;
        k += 1.0;
    }

    (e_m * e_a + df * (df - 1.0) / 2.0) / df
}

/// Average age of the wait-and-sample policy with threshold `tau` by
/// numerical renewal-reward.
///
/// A cycle runs from one sample to the next: the packet is retransmitted
/// until delivery after `G ~ Geom(q)` slots, and the next sample waits
/// for the monitor age to reach `tau`, so the cycle length is
/// `L = max(G, tau)`; the cycle age-sum is `G a + L (L - 1) / 2` with the
/// cycle-start age `a` equal to the previous cycle's length.
pub fn wait_and_sample_age_oracle(tau: u32, q: f64) -> f64 {
    let fail = 1.0 - q;
    let mut e_l = 0.0;
    let mut e_l_pair = 0.0; // E[L (L - 1)]
    let mut p_g = q; // P(G = g)
    let mut g = 1u64;
    loop {
        let l = (g as f64).max(f64::from(tau));
        e_l += l * p_g;
        e_l_pair += l * (l - 1.0) * p_g;
        if p_g < 1e-18 && g as f64 > f64::from(tau) {
            break;
        }
        p_g *= fail;
        g += 1;
    }
    1.0 / q + e_l_pair / (2.0 * e_l)
}

#[cfg(test)]
mod self_tests {
    use super::*;

    #[test]
    fn oracle_hand_values() {
        // perfect channel, period 4: one cycle with ages 1, 2, 3, 4
        assert!((equidistant_age_oracle(4, 1.0) - 2.5).abs() < 1e-12);
        // threshold 1, q = 0.5: hand-derived (2 - q) / q = 3
        assert!((wait_and_sample_age_oracle(1, 0.5) - 3.0).abs() < 1e-12);
    }
}
